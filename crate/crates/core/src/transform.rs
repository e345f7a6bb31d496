//! Spatial transforms produced by coarse and fine registration.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

/// Isotropic scale about `center` followed by a rigid motion:
/// `x ↦ R·(s·(x − c) + c) + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub center: Point,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            center: Point::origin(),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        let scaled = (p - self.center) * self.scale + self.center.coords;
        Point::from(self.rotation * scaled + self.translation)
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map(|p| self.apply(p))
    }

    /// Equivalent `(s, R, t')` with `x ↦ s·R·x + t'`.
    pub fn normalized(&self) -> (f64, Matrix3<f64>, Vector3<f64>) {
        let t = self.rotation * (self.center.coords * (1.0 - self.scale)) + self.translation;
        (self.scale, self.rotation, t)
    }

    pub fn inverse_apply(&self, p: &Point) -> Point {
        let (s, r, t) = self.normalized();
        Point::from(r.transpose() * (p.coords - t) / s)
    }

    pub fn to_transform(&self) -> Transform {
        let (scale, rotation, translation) = self.normalized();
        Transform::Similarity {
            scale,
            rotation,
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidParameter("scale must be positive".into()));
        }
        check_rotation(&self.rotation)
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if (r.determinant() - 1.0).abs() > 1e-9 || (r.transpose() * r - Matrix3::identity()).norm() > 1e-9 {
        return Err(Error::InvalidParameter("rotation is not orthonormal".into()));
    }
    Ok(())
}

/// Rotation angle of a rotation matrix in degrees.
pub fn rotation_angle_deg(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Result transform of a registration algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Rigid {
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    },
    Similarity {
        scale: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    },
    Affine {
        matrix: Matrix3<f64>,
        translation: Vector3<f64>,
    },
    /// Rigid base plus one offset per source point: `qᵢ = R·pᵢ + t + δpᵢ`.
    Nonrigid {
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        offsets: Vec<Vector3<f64>>,
    },
}

impl Transform {
    pub fn identity() -> Self {
        Transform::Rigid {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Transform::Rigid { .. } => "rigid",
            Transform::Similarity { .. } => "similarity",
            Transform::Affine { .. } => "affine",
            Transform::Nonrigid { .. } => "nonrigid",
        }
    }

    /// Linear part and translation of the global (non-offset) component.
    pub fn linear_part(&self) -> (Matrix3<f64>, Vector3<f64>) {
        match self {
            Transform::Rigid { rotation, translation }
            | Transform::Nonrigid { rotation, translation, .. } => (*rotation, *translation),
            Transform::Similarity { scale, rotation, translation } => (rotation * *scale, *translation),
            Transform::Affine { matrix, translation } => (*matrix, *translation),
        }
    }

    /// Applies the global part only (offsets are ignored).
    pub fn apply_global(&self, p: &Point) -> Point {
        let (a, t) = self.linear_part();
        Point::from(a * p.coords + t)
    }

    /// Maps the source cloud the transform was estimated on.
    pub fn apply_to_source(&self, src: &PointCloud) -> Result<PointCloud> {
        match self {
            Transform::Nonrigid { offsets, .. } => {
                if offsets.len() != src.len() {
                    return Err(Error::CountMismatch {
                        left: src.len(),
                        right: offsets.len(),
                    });
                }
                Ok(PointCloud {
                    points: src
                        .points
                        .iter()
                        .zip(offsets)
                        .map(|(p, d)| self.apply_global(p) + d)
                        .collect(),
                    meta: src.meta,
                })
            }
            _ => Ok(src.map(|p| self.apply_global(p))),
        }
    }

    /// Offsets carried by a nonrigid transform, if any.
    pub fn offsets(&self) -> Option<&[Vector3<f64>]> {
        match self {
            Transform::Nonrigid { offsets, .. } => Some(offsets),
            _ => None,
        }
    }
}

/// Row-major 3×3 as nested arrays.
pub fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn matrix_from_rows(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

/// JSON form `{scale, rotation, translation, center}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityJson {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub center: [f64; 3],
}

impl From<&SimilarityTransform> for SimilarityJson {
    fn from(t: &SimilarityTransform) -> Self {
        Self {
            scale: t.scale,
            rotation: matrix_rows(&t.rotation),
            translation: t.translation.into(),
            center: t.center.coords.into(),
        }
    }
}

impl From<&SimilarityJson> for SimilarityTransform {
    fn from(j: &SimilarityJson) -> Self {
        Self {
            scale: j.scale,
            rotation: matrix_from_rows(&j.rotation),
            translation: Vector3::from(j.translation),
            center: Point::from(j.center),
        }
    }
}
