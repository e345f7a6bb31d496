//! Fine registration of coarse-aligned clouds: rigid and similarity ICP,
//! rigid and affine coherent point drift, Gaussian-process regularised point
//! drift, clustered piecewise-rigid registration and B-spline free-form
//! deformation, behind one dispatch function.

mod bcpd;
mod clureg;
mod cpd;
mod ffd;
mod icp;
mod kmeans;

pub use bcpd::bcpd;
pub use clureg::{blend_weights, clureg};
pub use cpd::{cpd_affine, cpd_negative_log_likelihood, cpd_rigid};
pub use ffd::{ffd, FfdLattice};
pub use icp::{icp, icp_objective, sicp};
pub use kmeans::{kmeans, KMeans};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::transform::{matrix_from_rows, matrix_rows, Transform};

/// Names accepted by [`run_fine`].
pub const ALGORITHMS: [&str; 7] = ["icp", "sicp", "cpd_rigid", "cpd_affine", "clureg", "ffd", "bcpd"];

/// Tuning shared by all fine algorithms; each uses the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineParams {
    pub max_iter: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
    /// Uniform outlier weight of the mixture models, in [0, 1).
    pub outlier_weight: f64,
    /// Gaussian kernel width of the offset-field prior, mm.
    pub beta: f64,
    /// Regularisation weight of the offset field and the lattice.
    pub lambda: f64,
    pub clusters: usize,
    /// Lattice cells per axis.
    pub lattice: [usize; 3],
    /// Source size above which the drift model runs on a subset.
    pub subset_threshold: usize,
    pub seed: u64,
}

impl Default for FineParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            outlier_weight: 0.1,
            beta: 15.0,
            lambda: 2.0,
            clusters: 8,
            lattice: [6, 6, 6],
            subset_threshold: 2000,
            seed: 0,
        }
    }
}

impl FineParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return bad("outlier_weight must lie in [0, 1)");
        }
        if !(self.beta > 0.0) || !(self.lambda > 0.0) {
            return bad("beta and lambda must be positive");
        }
        if self.clusters == 0 {
            return bad("clusters must be at least 1");
        }
        if self.lattice.iter().any(|&c| c < 3) {
            return bad("lattice needs at least 3 cells per axis");
        }
        if self.subset_threshold < 3 {
            return bad("subset_threshold must be at least 3");
        }
        Ok(())
    }
}

/// Outcome of a fine registration.
#[derive(Debug, Clone, PartialEq)]
pub struct FineResult {
    pub algo: String,
    pub params: FineParams,
    pub transform: Transform,
    pub iterations: usize,
    /// Objective at the start of each iteration; the last entry is the
    /// objective of `transform`.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Final mixture variance, for the mixture-model algorithms.
    pub sigma2: Option<f64>,
}

impl FineResult {
    /// Writes `<stem>.json` and, for nonrigid results, `<stem>_offsets.bin`
    /// (little-endian f64, N×3 row-major). Returns the JSON path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let offsets_file = self.transform.offsets().map(|offsets| {
            let name = format!("{stem}_offsets.bin");
            let bytes: Vec<u8> = offsets
                .iter()
                .flat_map(|d| [d.x, d.y, d.z])
                .flat_map(f64::to_le_bytes)
                .collect();
            (name, bytes)
        });
        if let Some((name, bytes)) = &offsets_file {
            fs::write(dir.join(name), bytes)?;
        }
        let json = FineResultJson {
            algo: self.algo.clone(),
            params: self.params.clone(),
            transform: TransformJson::from_transform(&self.transform, offsets_file.map(|(n, _)| n)),
            trace: self.objective_trace.clone(),
            iterations: self.iterations,
            converged: self.converged,
            sigma2: self.sigma2,
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&json)?)?;
        Ok(path)
    }

    /// Reads a result written by [`FineResult::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let json: FineResultJson = serde_json::from_str(&crate::io::read_text(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let transform = json.transform.to_transform(dir)?;
        Ok(Self {
            algo: json.algo,
            params: json.params,
            transform,
            iterations: json.iterations,
            objective_trace: json.trace,
            converged: json.converged,
            sigma2: json.sigma2,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FineResultJson {
    algo: String,
    params: FineParams,
    transform: TransformJson,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma2: Option<f64>,
}

/// Serialised transform; which fields are present depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformJson {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets_file: Option<String>,
}

impl TransformJson {
    fn from_transform(t: &Transform, offsets_file: Option<String>) -> Self {
        let mut out = Self {
            kind: t.kind().into(),
            rotation: None,
            translation: None,
            scale: None,
            matrix: None,
            offsets_file,
        };
        let tr = |v: &Vector3<f64>| Some([v.x, v.y, v.z]);
        match t {
            Transform::Rigid { rotation, translation } | Transform::Nonrigid { rotation, translation, .. } => {
                out.rotation = Some(matrix_rows(rotation));
                out.translation = tr(translation);
            }
            Transform::Similarity { scale, rotation, translation } => {
                out.scale = Some(*scale);
                out.rotation = Some(matrix_rows(rotation));
                out.translation = tr(translation);
            }
            Transform::Affine { matrix, translation } => {
                out.matrix = Some(matrix_rows(matrix));
                out.translation = tr(translation);
            }
        }
        out
    }

    fn to_transform(&self, dir: &Path) -> Result<Transform> {
        let missing = |f: &str| Error::InvalidParameter(format!("transform of kind '{}' lacks '{f}'", self.kind));
        let rotation = || self.rotation.as_ref().map(matrix_from_rows).ok_or_else(|| missing("rotation"));
        let translation: Result<Vector3<f64>> = self.translation.map(Vector3::from).ok_or_else(|| missing("translation"));
        Ok(match self.kind.as_str() {
            "rigid" => Transform::Rigid {
                rotation: rotation()?,
                translation: translation?,
            },
            "similarity" => Transform::Similarity {
                scale: self.scale.ok_or_else(|| missing("scale"))?,
                rotation: rotation()?,
                translation: translation?,
            },
            "affine" => Transform::Affine {
                matrix: self.matrix.as_ref().map(matrix_from_rows).ok_or_else(|| missing("matrix"))?,
                translation: translation?,
            },
            "nonrigid" => {
                let name = self.offsets_file.as_ref().ok_or_else(|| missing("offsets_file"))?;
                let bytes = fs::read(dir.join(name))?;
                if bytes.len() % 24 != 0 {
                    return Err(Error::InvalidParameter(format!("offsets file '{name}' is not a whole number of f64 triples")));
                }
                let values: Vec<f64> = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Transform::Nonrigid {
                    rotation: rotation()?,
                    translation: translation?,
                    offsets: values.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
                }
            }
            other => return Err(Error::InvalidParameter(format!("unknown transform kind '{other}'"))),
        })
    }
}

/// Runs the named algorithm.
pub fn run_fine(algo: &str, src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    let run = match algo {
        "icp" => icp,
        "sicp" => sicp,
        "cpd_rigid" => cpd_rigid,
        "cpd_affine" => cpd_affine,
        "clureg" => clureg,
        "ffd" => ffd,
        "bcpd" => bcpd,
        _ => {
            return Err(Error::UnknownAlgorithm {
                name: algo.into(),
                valid: ALGORITHMS.join(", "),
            })
        }
    };
    run(src, dst, params)
}

/// Shared input checks.
pub(crate) fn check_inputs(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<()> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyInput);
    }
    src.validate()?;
    dst.validate()?;
    params.validate()
}

/// Stopping rule on consecutive objective values.
pub(crate) fn has_converged(previous: f64, current: f64, tol: f64) -> bool {
    current == 0.0 || (previous - current).abs() <= tol * previous.abs()
}

pub(crate) fn rigid(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Transform {
    Transform::Rigid { rotation, translation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point::new(rng.random_range(-20.0..20.0), rng.random_range(-12.0..12.0), rng.random_range(-6.0..6.0)))
                .collect(),
        )
    }

    #[test]
    fn unknown_algorithm_lists_valid_names() {
        let c = cloud(1, 10);
        let err = run_fine("bcpdpp", &c, &c, &FineParams::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::UnknownAlgorithm { .. }));
        for name in ALGORITHMS {
            assert!(msg.contains(name));
        }
    }

    #[test]
    fn every_algorithm_is_identity_on_equal_clouds() {
        let c = cloud(2, 120);
        let params = FineParams {
            max_iter: 30,
            ..FineParams::default()
        };
        for name in ALGORITHMS {
            let r = run_fine(name, &c, &c, &params).unwrap();
            assert_eq!(r.algo, name);
            let out = r.transform.apply_to_source(&c).unwrap();
            let worst = out.iter().zip(c.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(worst < 1e-3, "{name}: {worst}");
            assert_eq!(r.objective_trace.len(), r.iterations);
            assert!(r.objective_trace.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn params_validation() {
        let ok = FineParams::default();
        assert!(ok.validate().is_ok());
        for bad in [
            FineParams { outlier_weight: 1.0, ..ok.clone() },
            FineParams { clusters: 0, ..ok.clone() },
            FineParams { lattice: [6, 2, 6], ..ok.clone() },
            FineParams { max_iter: 0, ..ok.clone() },
            FineParams { beta: 0.0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn result_json_round_trip_with_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let offsets = vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(1e-17, 2.5, -7.0)];
        let r = FineResult {
            algo: "bcpd".into(),
            params: FineParams::default(),
            transform: Transform::Nonrigid {
                rotation: Matrix3::identity(),
                translation: Vector3::new(1.0, 2.0, 3.0),
                offsets,
            },
            iterations: 2,
            objective_trace: vec![3.0, 1.0 / 3.0],
            converged: true,
            sigma2: Some(0.25),
        };
        let path = r.write(dir.path(), "fine").unwrap();
        assert!(dir.path().join("fine_offsets.bin").exists());
        assert_eq!(FineResult::read(&path).unwrap(), r);

        let affine = FineResult {
            algo: "cpd_affine".into(),
            transform: Transform::Affine {
                matrix: Matrix3::new(1.5, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.7),
                translation: Vector3::zeros(),
            },
            sigma2: None,
            ..r
        };
        let path = affine.write(dir.path(), "aff").unwrap();
        assert_eq!(FineResult::read(&path).unwrap(), affine);
    }
}
