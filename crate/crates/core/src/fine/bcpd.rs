//! Point drift with a rigid base and a Gaussian-process offset field:
//! centers are `R·yₘ + t + vₘ`, with `v ~ GP(0, G/λ)` and
//! `G(p, q) = exp(−‖p − q‖²/(2β²))`. Variational EM updates the offsets
//! jointly with an unpenalised translation, then the rigid part, then the
//! variance.
//!
//! The kernel is represented by Nyström features on farthest-point
//! landmarks, `G ≈ U·Uᵀ`, so the field is `v = U·b` with prior `λ/2·‖b‖²`.
//! Large sources run on a seeded subset and the field is extended to every
//! point through the same features.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cpd::{e_step, initial_sigma2};
use super::{check_inputs, has_converged, FineParams, FineResult};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::transform::Transform;
use crate::umeyama::umeyama;

/// Landmark count of the kernel approximation.
const KERNEL_RANK: usize = 150;
/// Relative eigenvalue cutoff of the landmark kernel matrix.
const EIGEN_CUTOFF: f64 = 1e-10;

/// Nyström feature map of the Gaussian kernel.
struct KernelFeatures {
    landmarks: Vec<Point>,
    /// Landmark eigenvectors scaled by inverse square-root eigenvalues (r×q).
    projection: DMatrix<f64>,
    beta: f64,
}

fn farthest_points(points: &[Point], count: usize) -> Vec<Point> {
    let mut chosen = vec![points[0]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - points[0]).norm_squared()).collect();
    while chosen.len() < count.min(points.len()) {
        let mut next = 0;
        for i in 1..d2.len() {
            if d2[i] > d2[next] {
                next = i;
            }
        }
        if d2[next] == 0.0 {
            break;
        }
        chosen.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    chosen
}

impl KernelFeatures {
    fn new(points: &[Point], beta: f64) -> Self {
        let landmarks = farthest_points(points, KERNEL_RANK);
        let r = landmarks.len();
        let w = DMatrix::from_fn(r, r, |i, j| gauss(&landmarks[i], &landmarks[j], beta));
        let eig = w.symmetric_eigen();
        let top = eig.eigenvalues.max();
        let kept: Vec<usize> = (0..r).filter(|&k| eig.eigenvalues[k] > EIGEN_CUTOFF * top).collect();
        let projection = DMatrix::from_fn(r, kept.len(), |i, c| {
            let k = kept[c];
            eig.eigenvectors[(i, k)] / eig.eigenvalues[k].sqrt()
        });
        Self {
            landmarks,
            projection,
            beta,
        }
    }

    fn dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Feature matrix `U` with one row per point.
    fn matrix(&self, points: &[Point]) -> DMatrix<f64> {
        let k = DMatrix::from_fn(points.len(), self.landmarks.len(), |i, j| gauss(&points[i], &self.landmarks[j], self.beta));
        k * &self.projection
    }
}

fn gauss(p: &Point, q: &Point, beta: f64) -> f64 {
    (-(p - q).norm_squared() / (2.0 * beta * beta)).exp()
}

/// Field values `U·b` as one vector per row.
fn field(u: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    let v = u * b;
    (0..v.nrows()).map(|m| Vector3::new(v[(m, 0)], v[(m, 1)], v[(m, 2)])).collect()
}

struct Fit {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    coefficients: DMatrix<f64>,
    sigma2: f64,
    trace: Vec<f64>,
    converged: bool,
}

fn fit(y: &[Point], x: &[Point], u: &DMatrix<f64>, params: &FineParams) -> Result<Fit> {
    let q = u.ncols();
    let lambda = params.lambda;
    let mut rotation = Matrix3::identity();
    let mut translation = Vector3::zeros();
    let mut b = DMatrix::zeros(q, 3);
    let mut v = vec![Vector3::zeros(); y.len()];
    let mut sigma2 = initial_sigma2(y, x);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for k in 0..params.max_iter {
        let centers: Vec<Point> = y.iter().zip(&v).map(|(p, d)| Point::from(rotation * p.coords + translation + d)).collect();
        let stats = e_step(&centers, x, sigma2, params.outlier_weight);
        let objective = stats.nll + 0.5 * lambda * b.norm_squared();
        let previous = trace.last().copied();
        trace.push(objective);
        if previous.is_some_and(|p| has_converged(p, objective, params.tol)) {
            converged = true;
            break;
        }
        if k + 1 == params.max_iter {
            break;
        }
        if !(stats.np > 0.0) {
            return Err(Error::SingularSystem);
        }
        let targets: Vec<Point> = (0..y.len()).map(|m| stats.target(m, &centers[m])).collect();

        // offsets and an unpenalised translation given the rotation, so the
        // field never carries a constant shift:
        // ([U 1]ᵀ·diag(ν)·[U 1] + λσ²·diag(1, …, 1, 0))·[b; t] = [U 1]ᵀ·diag(ν)·(x̃ − R·y)
        let augmented = DMatrix::from_fn(y.len(), q + 1, |m, c| if c < q { u[(m, c)] } else { 1.0 });
        let weighted = DMatrix::from_fn(y.len(), q + 1, |m, c| augmented[(m, c)] * stats.p1[m]);
        let residual = DMatrix::from_fn(y.len(), 3, |m, c| (targets[m].coords - rotation * y[m].coords)[c]);
        let mut h = augmented.transpose() * &weighted;
        for c in 0..q {
            h[(c, c)] += lambda * sigma2;
        }
        let rhs = weighted.transpose() * residual;
        let solution = h.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
        b = solution.rows(0, q).into_owned();
        v = field(u, &b);

        // rigid part given the offsets
        let shifted: Vec<Point> = targets.iter().zip(&v).map(|(t, d)| t - d).collect();
        let a = umeyama(y, &shifted, Some(&stats.p1), false)?;
        rotation = a.rotation;
        translation = a.translation;

        let moved: Vec<Point> = y.iter().zip(&v).map(|(p, d)| Point::from(rotation * p.coords + translation + d)).collect();
        sigma2 = stats.sigma2_for(&moved);
    }
    Ok(Fit {
        rotation,
        translation,
        coefficients: b,
        sigma2,
        trace,
        converged,
    })
}

/// Rigid registration plus a smooth per-point offset field.
pub fn bcpd(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    check_inputs(src, dst, params)?;
    let subset: Option<Vec<usize>> = (src.len() > params.subset_threshold).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut idx = rand::seq::index::sample(&mut rng, src.len(), params.subset_threshold).into_vec();
        idx.sort_unstable();
        idx
    });
    let y: Vec<Point> = match &subset {
        Some(idx) => idx.iter().map(|&i| src.points[i]).collect(),
        None => src.points.clone(),
    };
    let features = KernelFeatures::new(&y, params.beta);
    debug_assert!(features.dim() > 0);
    let u = features.matrix(&y);
    let f = fit(&y, &dst.points, &u, params)?;
    let field_values = match subset {
        Some(_) => field(&features.matrix(&src.points), &f.coefficients),
        None => field(&u, &f.coefficients),
    };
    // report the rigid motion that best explains the whole deformation, with
    // offsets as the remainder; the mapped points are unchanged
    let mapped: Vec<Point> = src
        .iter()
        .zip(&field_values)
        .map(|(p, d)| Point::from(f.rotation * p.coords + f.translation + d))
        .collect();
    let (rotation, translation) = match umeyama(&src.points, &mapped, None, false) {
        Ok(a) => (a.rotation, a.translation),
        Err(_) => (f.rotation, f.translation),
    };
    let offsets = src
        .iter()
        .zip(&mapped)
        .map(|(p, q)| q.coords - (rotation * p.coords + translation))
        .collect();
    Ok(FineResult {
        algo: "bcpd".into(),
        params: params.clone(),
        transform: Transform::Nonrigid {
            rotation,
            translation,
            offsets,
        },
        iterations: f.trace.len(),
        objective_trace: f.trace,
        converged: f.converged,
        sigma2: Some(f.sigma2),
    })
}
