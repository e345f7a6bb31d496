use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};

use super::{centroid, Plane, Point};
use crate::error::{Error, Result};

/// Principal components of a 3D point set, eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub centroid: Point,
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [Vector3<f64>; 3],
    /// Set when the smallest two eigenvalues leave the cloud rank-deficient.
    pub degenerate: bool,
}

pub(crate) fn covariance(points: &[Point], center: &Point) -> Matrix3<f64> {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - center;
        cov += d * d.transpose();
    }
    cov / points.len() as f64
}

/// Covariance about the centroid followed by a symmetric eigen-decomposition.
pub fn pca(points: &[Point]) -> Result<PcaResult> {
    let c = centroid(points).ok_or(Error::EmptyInput)?;
    let cov = covariance(points, &c);
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|k| eig.eigenvalues[k].max(0.0));
    let eigenvectors = order.map(|k| eig.eigenvectors.column(k).into_owned());
    let scale = eigenvalues[0].max(f64::MIN_POSITIVE);
    let degenerate = eigenvalues[2] <= 1e-12 * scale || eigenvalues[1] <= 1e-12 * scale;
    Ok(PcaResult {
        centroid: c,
        eigenvalues,
        eigenvectors,
        degenerate,
    })
}

/// 2D principal axes: `(eigenvalues desc, eigenvectors)`.
pub fn pca_2d(coords: &[Vector2<f64>]) -> Result<([f64; 2], [Vector2<f64>; 2])> {
    if coords.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = coords.len() as f64;
    let mean = coords.iter().fold(Vector2::zeros(), |a, c| a + c) / n;
    let mut cov = Matrix2::zeros();
    for c in coords {
        let d = c - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let (hi, lo) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    Ok((
        [eig.eigenvalues[hi].max(0.0), eig.eigenvalues[lo].max(0.0)],
        [
            eig.eigenvectors.column(hi).into_owned(),
            eig.eigenvectors.column(lo).into_owned(),
        ],
    ))
}

/// Orients a normal so that `n·z >= 0`, then `n·y >= 0`, then `n·x > 0`.
pub(crate) fn canonical_sign(n: Vector3<f64>) -> Vector3<f64> {
    const EPS: f64 = 1e-12;
    for k in [2, 1, 0] {
        if n[k] > EPS {
            return n;
        }
        if n[k] < -EPS {
            return -n;
        }
    }
    n
}

/// Least-squares plane: centroid plus smallest-eigenvalue direction.
pub fn fit_plane_pca(points: &[Point]) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let r = pca(points)?;
    Plane::new(r.centroid, canonical_sign(r.eigenvectors[2]))
}
