//! Foundational 3D geometry: point clouds, planes, projections and
//! quadratic Bézier sampling.

mod pca;
mod spatial;

pub use pca::{fit_plane_pca, pca, pca_2d, PcaResult};
pub use spatial::SpatialIndex;

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;

/// Structured angular sampling that produced a cloud (rotated long-axis planes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingMeta {
    pub planes: usize,
    pub step_deg: f64,
}

/// Ordered list of 3D points in millimeters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub meta: Option<SamplingMeta>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points, meta: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    /// Fails with `EmptyInput` on an empty cloud and `InvalidParameter` on
    /// any non-finite coordinate.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidParameter(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Option<Point> {
        centroid(&self.points)
    }

    pub fn map(&self, f: impl Fn(&Point) -> Point) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            meta: self.meta,
        }
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }
}

impl From<Vec<Point>> for PointCloud {
    fn from(points: Vec<Point>) -> Self {
        PointCloud::new(points)
    }
}

pub fn centroid(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point::from(sum / points.len() as f64))
}

/// Plane given by a center point and a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub center: Point,
    pub normal: Vector3<f64>,
}

impl Plane {
    /// Normalizes `normal`; fails on a zero vector.
    pub fn new(center: Point, normal: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            center,
            normal: normal / n,
        })
    }

    pub fn signed_distance(&self, p: &Point) -> f64 {
        (p - self.center).dot(&self.normal)
    }

    pub fn project(&self, p: &Point) -> Point {
        p - self.normal * self.signed_distance(p)
    }

    pub fn flipped(&self) -> Plane {
        Plane {
            center: self.center,
            normal: -self.normal,
        }
    }

    /// Right-handed orthonormal in-plane basis `(e1, e2)` with `e1 × e2 = normal`.
    ///
    /// `e1` is the normalized projection of the coordinate axis least aligned
    /// with the normal (lowest axis index on ties).
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal;
        let abs = n.abs();
        let mut axis = 0;
        for k in 1..3 {
            if abs[k] < abs[axis] {
                axis = k;
            }
        }
        let mut seed = Vector3::zeros();
        seed[axis] = 1.0;
        let e1 = (seed - n * n.dot(&seed)).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }
}

/// Orthogonal projection of a cloud into a plane's 2D coordinate system.
#[derive(Debug, Clone)]
pub struct PlaneProjection {
    pub coords: Vec<Vector2<f64>>,
    pub origin: Point,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl PlaneProjection {
    pub fn reconstruct(&self, uv: &Vector2<f64>) -> Point {
        self.origin + self.e1 * uv.x + self.e2 * uv.y
    }
}

pub fn project_to_plane(points: &[Point], plane: &Plane) -> PlaneProjection {
    let (e1, e2) = plane.basis();
    let coords = points
        .iter()
        .map(|p| {
            let d = p - plane.center;
            Vector2::new(d.dot(&e1), d.dot(&e2))
        })
        .collect();
    PlaneProjection {
        coords,
        origin: plane.center,
        e1,
        e2,
    }
}

/// Samples the quadratic Bézier through `start`, `control`, `end` at
/// `t = k/(n-1)`. The first and last samples are the inputs themselves.
pub fn bezier_sample(start: Point, control: Point, end: Point, n: usize) -> Result<Vec<Point>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "bezier sample count must be >= 2, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    out.push(start);
    for k in 1..n - 1 {
        let t = k as f64 / (n - 1) as f64;
        let a = (1.0 - t) * (1.0 - t);
        let b = 2.0 * t * (1.0 - t);
        let c = t * t;
        out.push(Point::from(
            start.coords * a + control.coords * b + end.coords * c,
        ));
    }
    out.push(end);
    Ok(out)
}

pub fn midpoint(a: &Point, b: &Point) -> Point {
    Point::from((a.coords + b.coords) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bezier_closed_form_midpoint() {
        let s = bezier_sample(
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 2.0, 0.0),
            Point::new(2.0, 0.0, 0.0),
            3,
        )
        .unwrap();
        assert_eq!(s[1], Point::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn bezier_two_samples_are_endpoints() {
        let a = Point::new(0.3, -1.0, 7.0);
        let b = Point::new(4.0, 2.5, -1.0);
        let s = bezier_sample(a, Point::new(9.0, 9.0, 9.0), b, 2).unwrap();
        assert_eq!(s, vec![a, b]);
    }

    #[test]
    fn bezier_degenerate_segment() {
        let a = Point::new(0.0, 0.0, 0.0);
        let b = Point::new(4.0, 8.0, -2.0);
        let s = bezier_sample(a, midpoint(&a, &b), b, 5).unwrap();
        assert!((s[2] - midpoint(&a, &b)).norm() < 1e-12);
        for w in s.windows(2) {
            assert!(((w[1] - w[0]).norm() - (b - a).norm() / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bezier_rejects_single_sample() {
        let p = Point::origin();
        assert!(matches!(
            bezier_sample(p, p, p, 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn projection_of_point_on_plane_reconstructs() {
        let plane = Plane::new(Point::new(1.0, 2.0, 3.0), Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let (e1, e2) = plane.basis();
        let p = plane.center + e1 * 3.0 - e2 * 1.5;
        let proj = project_to_plane(&[p], &plane);
        assert!((proj.reconstruct(&proj.coords[0]) - p).norm() < 1e-9);
    }

    #[test]
    fn projection_of_offset_center_is_origin() {
        let plane = Plane::new(Point::new(1.0, 2.0, 3.0), Vector3::new(0.0, 1.0, 1.0)).unwrap();
        let p = plane.center + plane.normal * 3.0;
        let proj = project_to_plane(&[p], &plane);
        assert!(proj.coords[0].norm() < 1e-12);
    }

    #[test]
    fn projection_residual_is_parallel_to_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let plane = Plane::new(Point::new(rng.random_range(-9.0..9.0), 0.0, 1.0), n).unwrap();
            let (e1, e2) = plane.basis();
            assert!((e1.cross(&e2) - plane.normal).norm() < 1e-12);
            let p = Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let proj = project_to_plane(&[p], &plane);
            let residual = p - proj.reconstruct(&proj.coords[0]);
            assert!(residual.cross(&plane.normal).norm() < 1e-9);
        }
    }

    #[test]
    fn plane_rejects_zero_normal() {
        assert!(matches!(
            Plane::new(Point::origin(), Vector3::zeros()),
            Err(Error::ZeroVector)
        ));
    }
}
