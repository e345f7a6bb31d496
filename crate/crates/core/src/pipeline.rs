//! End-to-end workflow over a fixed anatomical LV/RV pair and a moving
//! functional LV cloud: landmarks on both sides, coarse similarity
//! alignment, each fine algorithm, metrics and optional volume fusion.
//! Every intermediate is written to the output directory so any stage can be
//! re-run from files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::coarse::coarse_register;
use crate::error::{Error, Result};
use crate::fine::{run_fine, FineParams, FineResult, ALGORITHMS};
use crate::geometry::{Point, PointCloud};
use crate::io::{read_cloud, read_text, write_cloud};
use crate::landmarks::{cta_landmarks, spect_landmarks, LandmarkConfig, LandmarkJson, LandmarkSet};
use crate::metrics::{evaluate, MetricReport};
use crate::phantom::{generate, Phantom, PhantomSpec};
use crate::transform::{SimilarityJson, SimilarityTransform, Transform};
use crate::volume::{fuse, nn_offset_interpolate, resample, DeformationField, Fused, VoxelVolume};

/// Pipeline settings, also readable from a JSON file with the same fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Anatomical LV and RV clouds and the functional LV cloud. A phantom is
    /// generated from `phantom` when all three are absent.
    pub fixed_lv: Option<PathBuf>,
    pub fixed_rv: Option<PathBuf>,
    pub moving: Option<PathBuf>,
    /// Volume headers; fusion runs only when both are available.
    pub fixed_volume: Option<PathBuf>,
    pub moving_volume: Option<PathBuf>,
    pub algorithms: Vec<String>,
    pub fine: FineParams,
    pub landmarks: LandmarkConfig,
    pub phantom: PhantomSpec,
    /// Run the fine stage directly on the unaligned moving cloud.
    pub skip_coarse: bool,
    pub out: PathBuf,
    /// Overrides the seeds of the phantom, landmark and fine sections.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fixed_lv: None,
            fixed_rv: None,
            moving: None,
            fixed_volume: None,
            moving_volume: None,
            algorithms: ALGORITHMS.iter().map(|s| s.to_string()).collect(),
            fine: FineParams::default(),
            landmarks: LandmarkConfig::default(),
            phantom: PhantomSpec {
                voxel_spacing: 2.0,
                ..PhantomSpec::default()
            },
            skip_coarse: false,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_text(path)?)?)
    }

    /// Copy with `seed` pushed into every seeded section.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.phantom.seed = self.seed;
        c.landmarks.seed = self.seed;
        c.fine.seed = self.seed;
        c
    }

    /// Checks everything that does not depend on input data.
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::InvalidParameter("no algorithms selected".into()));
        }
        for a in &self.algorithms {
            check_algorithm(a)?;
        }
        let given = [&self.fixed_lv, &self.fixed_rv, &self.moving].iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(Error::InvalidParameter("fixed_lv, fixed_rv and moving must be given together".into()));
        }
        if self.fixed_volume.is_some() != self.moving_volume.is_some() {
            return Err(Error::InvalidParameter("fixed_volume and moving_volume must be given together".into()));
        }
        self.fine.validate()?;
        self.landmarks.validate()?;
        if given == 0 {
            self.phantom.validate().map_err(|e| Error::InvalidParameter(e.to_string()))?;
        }
        Ok(())
    }
}

/// Fails with the list of valid names unless `algo` is one of them.
pub fn check_algorithm(algo: &str) -> Result<()> {
    if ALGORITHMS.contains(&algo) {
        Ok(())
    } else {
        Err(Error::UnknownAlgorithm {
            name: algo.into(),
            valid: ALGORITHMS.join(", "),
        })
    }
}

/// Clouds and optional volumes entering the pipeline.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub fixed_lv: PointCloud,
    pub fixed_rv: PointCloud,
    pub moving: PointCloud,
    pub fixed_volume: Option<VoxelVolume>,
    pub moving_volume: Option<VoxelVolume>,
}

#[derive(Debug, Serialize)]
struct PhantomJson<'a> {
    spec: &'a PhantomSpec,
    landmarks_fixed: LandmarkJson,
    landmarks_moving: LandmarkJson,
}

/// Writes a phantom as `fixed_lv.ply`, `fixed_rv.ply`, `moving.ply`,
/// `phantom.json` (spec and analytic landmarks) and, when present,
/// `fixed_volume` and `moving_volume`.
pub fn write_phantom(ph: &Phantom, spec: &PhantomSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_cloud(&dir.join("fixed_lv.ply"), &ph.lv)?;
    write_cloud(&dir.join("fixed_rv.ply"), &ph.rv)?;
    write_cloud(&dir.join("moving.ply"), &ph.functional)?;
    let json = PhantomJson {
        spec,
        landmarks_fixed: ph.truth_landmarks_fixed.to_json(),
        landmarks_moving: ph.truth_landmarks_moving.to_json(),
    };
    fs::write(dir.join("phantom.json"), serde_json::to_string_pretty(&json)?)?;
    if let Some(v) = &ph.lv_volume {
        v.write(dir, "fixed_volume")?;
    }
    if let Some(v) = &ph.functional_volume {
        v.write(dir, "moving_volume")?;
    }
    Ok(())
}

/// Reads the configured inputs, or generates and writes a phantom into the
/// output directory when no clouds are configured.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    let volumes = || -> Result<(Option<VoxelVolume>, Option<VoxelVolume>)> {
        match (&cfg.fixed_volume, &cfg.moving_volume) {
            (Some(f), Some(m)) => Ok((Some(VoxelVolume::read(f)?), Some(VoxelVolume::read(m)?))),
            _ => Ok((None, None)),
        }
    };
    match (&cfg.fixed_lv, &cfg.fixed_rv, &cfg.moving) {
        (Some(lv), Some(rv), Some(m)) => {
            let (fixed_volume, moving_volume) = volumes()?;
            Ok(Inputs {
                fixed_lv: read_cloud(lv)?,
                fixed_rv: read_cloud(rv)?,
                moving: read_cloud(m)?,
                fixed_volume,
                moving_volume,
            })
        }
        _ => {
            let ph = generate(&cfg.phantom)?;
            write_phantom(&ph, &cfg.phantom, &cfg.out)?;
            let (fixed_volume, moving_volume) = if cfg.fixed_volume.is_some() {
                volumes()?
            } else {
                (ph.lv_volume, ph.functional_volume)
            };
            Ok(Inputs {
                fixed_lv: ph.lv,
                fixed_rv: ph.rv,
                moving: ph.functional,
                fixed_volume,
                moving_volume,
            })
        }
    }
}

/// Maps moving-frame landmarks through the coarse transform and then the
/// fine one. Offsets of a nonrigid fine transform are indexed by the
/// coarse-aligned cloud it was estimated on; each landmark takes the offset
/// of its nearest sample there.
pub fn map_landmarks(
    lm: &LandmarkSet,
    coarse: &SimilarityTransform,
    fine: &Transform,
    coarse_cloud: &PointCloud,
) -> Result<LandmarkSet> {
    let (a, t) = fine.linear_part();
    let field = match fine.offsets() {
        Some(o) => Some(DeformationField::new(&coarse_cloud.points, o.to_vec())?),
        None => None,
    };
    let (s, r, _) = coarse.normalized();
    let linear = a * r * s;
    let normal_map = linear.try_inverse().map(|m| m.transpose()).ok_or(Error::SingularTransform)?;
    Ok(lm.map(
        |p| {
            let q = coarse.apply(p);
            let moved = Point::from(a * q.coords + t);
            match &field {
                Some(f) => moved + nn_offset_interpolate(f, &q),
                None => moved,
            }
        },
        |n| normal_map * n,
    ))
}

/// Single transform from the moving frame to the fixed frame: the coarse
/// similarity followed by the fine transform. Nonrigid offsets stay attached
/// to the same source points.
pub fn compose(coarse: &SimilarityTransform, fine: &Transform) -> Transform {
    let (s, r, t0) = coarse.normalized();
    let (a, t) = fine.linear_part();
    let matrix: Matrix3<f64> = a * r * s;
    let translation: Vector3<f64> = a * t0 + t;
    match fine.offsets() {
        Some(o) => Transform::Nonrigid {
            rotation: matrix,
            translation,
            offsets: o.to_vec(),
        },
        None => Transform::Affine { matrix, translation },
    }
}

/// Resamples the moving volume onto the fixed grid under the composed
/// transform and fuses the two. `moving_cloud` is the moving-frame cloud
/// whose points carry the nonrigid offsets.
pub fn fuse_volumes(
    fixed: &VoxelVolume,
    moving: &VoxelVolume,
    coarse: &SimilarityTransform,
    fine: &Transform,
    moving_cloud: Option<&PointCloud>,
) -> Result<Fused> {
    let composed = compose(coarse, fine);
    let field = match composed.offsets() {
        Some(o) => {
            let cloud = moving_cloud.ok_or(Error::EmptyField)?;
            Some(DeformationField::new(&cloud.points, o.to_vec())?)
        }
        None => None,
    };
    let resampled = resample(moving, fixed, &composed, field.as_ref())?;
    fuse(fixed, &resampled)
}

/// Outputs of one fine algorithm.
#[derive(Debug, Clone)]
pub struct AlgoOutcome {
    pub result: FineResult,
    pub registered: PointCloud,
    pub landmarks: LandmarkSet,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub inputs: Inputs,
    pub fixed_landmarks: LandmarkSet,
    pub moving_landmarks: LandmarkSet,
    pub coarse: SimilarityTransform,
    pub coarse_cloud: PointCloud,
    pub outcomes: Vec<AlgoOutcome>,
}

pub const SUMMARY_HEADER: &str = "algo,mpe,ae,mge,gce";

/// One row per algorithm under [`SUMMARY_HEADER`].
pub fn summary_csv(outcomes: &[AlgoOutcome]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for o in outcomes {
        s.push_str(&format!("{},{}\n", o.result.algo, o.metrics.csv_row()));
    }
    s
}

pub fn write_landmarks(path: &Path, lm: &LandmarkSet) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&lm.to_json())?)?;
    Ok(())
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSet> {
    let json: LandmarkJson = serde_json::from_str(&read_text(path)?)?;
    LandmarkSet::from_json(&json)
}

pub fn write_similarity(path: &Path, t: &SimilarityTransform) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&SimilarityJson::from(t))?)?;
    Ok(())
}

pub fn read_similarity(path: &Path) -> Result<SimilarityTransform> {
    let json: SimilarityJson = serde_json::from_str(&read_text(path)?)?;
    let t = SimilarityTransform::from(&json);
    t.validate()?;
    Ok(t)
}

pub fn write_metrics(dir: &Path, stem: &str, m: &MetricReport) -> Result<()> {
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(m)?)?;
    fs::write(
        dir.join(format!("{stem}.csv")),
        format!("{}\n{}\n", MetricReport::CSV_HEADER, m.csv_row()),
    )?;
    Ok(())
}

/// Runs every stage and writes its artifacts under `cfg.out`:
/// landmarks, the coarse transform and cloud, then per algorithm the fine
/// result, registered cloud, mapped landmarks, metrics and fused volumes,
/// and finally `summary.csv`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let cfg = cfg.seeded();
    cfg.validate()?;
    let out = cfg.out.as_path();
    fs::create_dir_all(out)?;
    let inputs = load_inputs(&cfg)?;

    let fixed_landmarks = cta_landmarks(&inputs.fixed_lv, &inputs.fixed_rv, &cfg.landmarks)?;
    let moving_landmarks = spect_landmarks(&inputs.moving, &cfg.landmarks)?;
    write_landmarks(&out.join("landmarks_fixed.json"), &fixed_landmarks)?;
    write_landmarks(&out.join("landmarks_moving.json"), &moving_landmarks)?;

    let (coarse, coarse_cloud) = if cfg.skip_coarse {
        (SimilarityTransform::identity(), inputs.moving.clone())
    } else {
        coarse_register(&inputs.moving, &inputs.fixed_lv, &moving_landmarks, &fixed_landmarks)?
    };
    write_similarity(&out.join("coarse.json"), &coarse)?;
    write_cloud(&out.join("coarse.ply"), &coarse_cloud)?;

    let mut outcomes = Vec::new();
    for algo in &cfg.algorithms {
        let result = run_fine(algo, &coarse_cloud, &inputs.fixed_lv, &cfg.fine)?;
        result.write(out, &format!("fine_{algo}"))?;
        let registered = result.transform.apply_to_source(&coarse_cloud)?;
        write_cloud(&out.join(format!("registered_{algo}.ply")), &registered)?;
        let landmarks = map_landmarks(&moving_landmarks, &coarse, &result.transform, &coarse_cloud)?;
        write_landmarks(&out.join(format!("landmarks_{algo}.json")), &landmarks)?;
        let metrics = evaluate(&inputs.fixed_lv, &registered, &fixed_landmarks, &landmarks)?;
        write_metrics(out, &format!("metrics_{algo}"), &metrics)?;
        if let (Some(fv), Some(mv)) = (&inputs.fixed_volume, &inputs.moving_volume) {
            let fused = fuse_volumes(fv, mv, &coarse, &result.transform, Some(&inputs.moving))?;
            fused.functional.write(out, &format!("fused_{algo}_functional"))?;
            fused.preview.write(out, &format!("fused_{algo}_preview"))?;
        }
        outcomes.push(AlgoOutcome {
            result,
            registered,
            landmarks,
            metrics,
        });
    }
    fs::write(out.join("summary.csv"), summary_csv(&outcomes))?;
    Ok(PipelineOutput {
        inputs,
        fixed_landmarks,
        moving_landmarks,
        coarse,
        coarse_cloud,
        outcomes,
    })
}
