//! Coherent point drift: each transformed source point is the center of an
//! isotropic Gaussian with shared variance, mixed with a uniform outlier
//! term; EM alternates soft correspondences with a closed-form M-step.
//! The outlier term is a uniform density over a cube whose side is the RMS
//! radius of the destination.

use nalgebra::{Matrix3, Vector3};

use super::{check_inputs, has_converged, FineParams, FineResult};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::transform::Transform;
use crate::umeyama::umeyama;

pub(crate) const SIGMA2_FLOOR: f64 = 1e-10;

/// Posterior sufficient statistics of one E-step.
pub(crate) struct Stats {
    /// Negative log-likelihood of the destination under the current mixture.
    pub nll: f64,
    /// Σₙ pₘₙ per component.
    pub p1: Vec<f64>,
    /// Σₙ pₘₙ·xₙ per component.
    pub px: Vec<Vector3<f64>>,
    /// Σₘₙ pₘₙ.
    pub np: f64,
    /// Σₙ (Σₘ pₘₙ)·xₙ.
    pub sum_x: Vector3<f64>,
    /// Σₙ (Σₘ pₘₙ)·‖xₙ − c‖² about `center`.
    pub sum_xx: f64,
    pub center: Vector3<f64>,
}

impl Stats {
    /// Posterior-weighted mean of the destination for component `m`, or
    /// `fallback` when it has no mass.
    pub fn target(&self, m: usize, fallback: &Point) -> Point {
        if self.p1[m] > 0.0 {
            Point::from(self.px[m] / self.p1[m])
        } else {
            *fallback
        }
    }

    /// Σₘₙ pₘₙ‖xₙ − zₘ‖² for new centers `z`, divided by 3·Nₚ and floored.
    pub fn sigma2_for(&self, z: &[Point]) -> f64 {
        let mut cross = 0.0;
        let mut zz = 0.0;
        for m in 0..z.len() {
            let zc = z[m].coords - self.center;
            cross += (self.px[m] - self.center * self.p1[m]).dot(&zc);
            zz += self.p1[m] * zc.norm_squared();
        }
        ((self.sum_xx - 2.0 * cross + zz) / (3.0 * self.np)).max(SIGMA2_FLOOR)
    }
}

/// Log-weights this far below the per-point maximum are dropped; each
/// contributes less than e⁻⁵⁰ relative to the largest term.
const LOG_CUTOFF: f64 = 50.0;

/// Soft correspondences of `x` to mixture centers `centers`.
pub(crate) fn e_step(centers: &[Point], x: &[Point], sigma2: f64, w: f64) -> Stats {
    let (m_count, n_count) = (centers.len(), x.len());
    let log_component = ((1.0 - w) / m_count as f64).ln() - 1.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
    let center = x.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n_count as f64;
    // uniform density over a cube of the destination's RMS radius, so the
    // outlier share does not depend on the unit of length
    let radius2 = x.iter().map(|p| (p.coords - center).norm_squared()).sum::<f64>() / n_count as f64;
    let volume = radius2.max(f64::MIN_POSITIVE).powf(1.5);
    let log_outlier = (w > 0.0).then(|| (w / (n_count as f64 * volume)).ln());

    let inv = 1.0 / (2.0 * sigma2);
    let mut d2 = vec![0.0; m_count];
    let mut kept: Vec<(usize, f64)> = Vec::with_capacity(m_count);
    let mut stats = Stats {
        nll: 0.0,
        p1: vec![0.0; m_count],
        px: vec![Vector3::zeros(); m_count],
        np: 0.0,
        sum_x: Vector3::zeros(),
        sum_xx: 0.0,
        center,
    };
    for xn in x {
        let mut nearest = f64::INFINITY;
        for (d, c) in d2.iter_mut().zip(centers) {
            *d = (xn - c).norm_squared();
            nearest = nearest.min(*d);
        }
        let top = (log_component - nearest * inv).max(log_outlier.unwrap_or(f64::NEG_INFINITY));
        kept.clear();
        let mut sum = log_outlier.map_or(0.0, |o| (o - top).exp());
        for (m, d) in d2.iter().enumerate() {
            let a = log_component - d * inv;
            if a >= top - LOG_CUTOFF {
                let e = (a - top).exp();
                kept.push((m, e));
                sum += e;
            }
        }
        stats.nll -= top + sum.ln();
        let mut column = 0.0;
        for &(m, e) in &kept {
            let p = e / sum;
            stats.p1[m] += p;
            stats.px[m] += xn.coords * p;
            column += p;
        }
        stats.np += column;
        stats.sum_x += xn.coords * column;
        stats.sum_xx += column * (xn.coords - center).norm_squared();
    }
    stats
}

/// Mean squared distance over all source/destination pairs, divided by 3.
pub(crate) fn initial_sigma2(y: &[Point], x: &[Point]) -> f64 {
    let (m, n) = (y.len() as f64, x.len() as f64);
    let sum = |c: &[Point]| c.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    let sq = |c: &[Point]| c.iter().map(|p| p.coords.norm_squared()).sum::<f64>();
    let total = m * sq(x) + n * sq(y) - 2.0 * sum(x).dot(&sum(y));
    (total / (3.0 * m * n)).max(SIGMA2_FLOOR)
}

/// Negative log-likelihood of `dst` under the mixture centred on the
/// transformed `src`.
pub fn cpd_negative_log_likelihood(
    src: &PointCloud,
    dst: &PointCloud,
    transform: &Transform,
    sigma2: f64,
    outlier_weight: f64,
) -> Result<f64> {
    let centers = transform.apply_to_source(src)?;
    Ok(e_step(&centers.points, &dst.points, sigma2, outlier_weight).nll)
}

type MStep = fn(&Stats, &[Point]) -> Result<(Matrix3<f64>, Vector3<f64>)>;

fn rigid_m_step(stats: &Stats, y: &[Point]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let targets: Vec<Point> = (0..y.len()).map(|m| stats.target(m, &y[m])).collect();
    let a = umeyama(y, &targets, Some(&stats.p1), false)?;
    Ok((a.rotation, a.translation))
}

fn affine_m_step(stats: &Stats, y: &[Point]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let mu_x = stats.sum_x / stats.np;
    let mu_y = y
        .iter()
        .zip(&stats.p1)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p.coords * *w)
        / stats.np;
    let mut cross = Matrix3::zeros();
    let mut cov = Matrix3::zeros();
    for m in 0..y.len() {
        let dy = y[m].coords - mu_y;
        cross += (stats.px[m] - mu_x * stats.p1[m]) * dy.transpose();
        cov += dy * dy.transpose() * stats.p1[m];
    }
    let eig = cov.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-12 * hi) {
        return Err(Error::SingularSystem);
    }
    let matrix = cross * cov.try_inverse().ok_or(Error::SingularSystem)?;
    Ok((matrix, mu_x - matrix * mu_y))
}

fn run_em(src: &PointCloud, dst: &PointCloud, params: &FineParams, m_step: MStep) -> Result<(Matrix3<f64>, Vector3<f64>, f64, Vec<f64>, bool)> {
    check_inputs(src, dst, params)?;
    let y = &src.points;
    let x = &dst.points;
    let (mut a, mut t) = (Matrix3::identity(), Vector3::zeros());
    let mut sigma2 = initial_sigma2(y, x);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for k in 0..params.max_iter {
        let centers: Vec<Point> = y.iter().map(|p| Point::from(a * p.coords + t)).collect();
        let stats = e_step(&centers, x, sigma2, params.outlier_weight);
        let previous = trace.last().copied();
        trace.push(stats.nll);
        if previous.is_some_and(|p| has_converged(p, stats.nll, params.tol)) {
            converged = true;
            break;
        }
        if k + 1 == params.max_iter {
            break;
        }
        if !(stats.np > 0.0) {
            return Err(Error::SingularSystem);
        }
        (a, t) = m_step(&stats, y)?;
        let moved: Vec<Point> = y.iter().map(|p| Point::from(a * p.coords + t)).collect();
        sigma2 = stats.sigma2_for(&moved);
    }
    Ok((a, t, sigma2, trace, converged))
}

fn result(algo: &str, params: &FineParams, transform: Transform, sigma2: f64, trace: Vec<f64>, converged: bool) -> FineResult {
    FineResult {
        algo: algo.into(),
        params: params.clone(),
        transform,
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        sigma2: Some(sigma2),
    }
}

/// Rigid coherent point drift.
pub fn cpd_rigid(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    let (rotation, translation, sigma2, trace, converged) = run_em(src, dst, params, rigid_m_step)?;
    Ok(result("cpd_rigid", params, Transform::Rigid { rotation, translation }, sigma2, trace, converged))
}

/// Affine coherent point drift.
pub fn cpd_affine(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    let (matrix, translation, sigma2, trace, converged) = run_em(src, dst, params, affine_m_step)?;
    Ok(result("cpd_affine", params, Transform::Affine { matrix, translation }, sigma2, trace, converged))
}
