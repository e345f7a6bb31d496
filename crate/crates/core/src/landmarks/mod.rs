//! Automatic anatomical landmarks: apex, long axis, junction plane and the
//! 18 groove points, from a two-chamber cloud pair (CTA style) or a single
//! structured ventricle cloud (SPECT style).

mod cta;
mod spect;

pub use cta::{contact_points, cta_landmarks, junction_plane, long_axis_and_apex, LongAxis};
pub use spect::{dedup_xy, ransac_circle, spect_junction_plane, spect_landmarks, spect_long_axis, CircleFit, JunctionSearch, SpectAxis};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bezier_sample, midpoint, Plane, Point, PointCloud, SpatialIndex};

pub const SAMPLES_PER_CURVE: usize = 9;
pub const GROOVE_POINTS: usize = 2 * SAMPLES_PER_CURVE;

/// Conditions under which an extractor fell back to a weaker rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkFlag {
    /// Too few contact points; the junction plane came from all points.
    ContactFallback,
    /// Both long-axis ends looked alike; apex chosen by tie-break.
    LowConfidenceApex,
    /// Every candidate plane had boundary points; best coverage used.
    BoundaryFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub apex: Point,
    /// Curve A samples then curve B samples, each running apex → endpoint.
    pub groove: Vec<Point>,
    pub plane: Plane,
    pub long_axis: (Point, Point),
    pub flags: Vec<LandmarkFlag>,
}

impl LandmarkSet {
    /// Apex followed by the groove points: the correspondences used for
    /// coarse alignment.
    pub fn correspondences(&self) -> Vec<Point> {
        std::iter::once(self.apex).chain(self.groove.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groove.len() != GROOVE_POINTS {
            return Err(Error::CountMismatch {
                left: GROOVE_POINTS,
                right: self.groove.len(),
            });
        }
        Ok(())
    }

    /// Applies a point map to every landmark; normals follow `linear`.
    pub fn map(&self, f: impl Fn(&Point) -> Point, linear: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> LandmarkSet {
        LandmarkSet {
            apex: f(&self.apex),
            groove: self.groove.iter().map(&f).collect(),
            plane: Plane {
                center: f(&self.plane.center),
                normal: linear(&self.plane.normal).normalize(),
            },
            long_axis: (f(&self.long_axis.0), f(&self.long_axis.1)),
            flags: self.flags.clone(),
        }
    }

    pub fn to_json(&self) -> LandmarkJson {
        LandmarkJson {
            apex: self.apex.coords.into(),
            groove: self.groove.iter().map(|p| p.coords.into()).collect(),
            plane: PlaneJson {
                center: self.plane.center.coords.into(),
                normal: self.plane.normal.into(),
            },
            long_axis: [self.long_axis.0.coords.into(), self.long_axis.1.coords.into()],
            flags: self.flags.clone(),
        }
    }

    pub fn from_json(j: &LandmarkJson) -> Result<Self> {
        let set = LandmarkSet {
            apex: Point::from(j.apex),
            groove: j.groove.iter().map(|&p| Point::from(p)).collect(),
            plane: Plane::new(Point::from(j.plane.center), Vector3::from(j.plane.normal))?,
            long_axis: (Point::from(j.long_axis[0]), Point::from(j.long_axis[1])),
            flags: j.flags.clone(),
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneJson {
    pub center: [f64; 3],
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkJson {
    pub apex: [f64; 3],
    pub groove: Vec<[f64; 3]>,
    pub plane: PlaneJson,
    pub long_axis: [[f64; 3]; 2],
    #[serde(default)]
    pub flags: Vec<LandmarkFlag>,
}

/// Tunables shared by both extractors. Distances in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkConfig {
    pub contact_threshold: f64,
    pub min_contact: usize,
    pub tol_plane: f64,
    pub tol_proximity: f64,
    pub step: f64,
    /// Half-width of the short-axis slab used to collect search candidates.
    pub slab_half_width: f64,
    /// End-cap length used to tell apex from base, as a fraction of the axis.
    pub cap_fraction: f64,
    pub ransac_iterations: usize,
    pub band_tol: f64,
    pub cover_tol: f64,
    pub plane_step_deg: f64,
    /// Plane offset from the long axis as a fraction of the largest radius.
    pub radius_fraction: f64,
    pub dedup_tol: f64,
    /// Fail instead of falling back when every candidate plane has boundary points.
    pub strict_boundary: bool,
    pub seed: u64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            contact_threshold: 3.0,
            min_contact: 30,
            tol_plane: 1.5,
            tol_proximity: 2.0,
            step: 0.5,
            slab_half_width: 2.0,
            cap_fraction: 0.1,
            ransac_iterations: 2000,
            band_tol: 0.5,
            cover_tol: 2.0,
            plane_step_deg: 5.0,
            radius_fraction: 0.6,
            dedup_tol: 1e-6,
            strict_boundary: false,
            seed: 0,
        }
    }
}

impl LandmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("contact_threshold", self.contact_threshold),
            ("tol_plane", self.tol_plane),
            ("tol_proximity", self.tol_proximity),
            ("step", self.step),
            ("slab_half_width", self.slab_half_width),
            ("cap_fraction", self.cap_fraction),
            ("band_tol", self.band_tol),
            ("cover_tol", self.cover_tol),
            ("plane_step_deg", self.plane_step_deg),
            ("radius_fraction", self.radius_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.ransac_iterations == 0 {
            return Err(Error::InvalidParameter("ransac_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Bidirectional contraction search along the line where the short-axis
/// plane through `long_axis_mid` meets the junction plane.
///
/// Candidates are points within `tol_plane` of the junction plane and within
/// `slab_half_width` of the short-axis plane. The search starts at the two
/// extreme candidate projections on the line and steps inward until the line
/// point lies within `tol_proximity` of some cloud point. Returns
/// `(point_a, point_b)` with `point_a` at the larger line coordinate.
#[allow(clippy::too_many_arguments)]
pub fn contraction_search(
    lv: &PointCloud,
    junction: &Plane,
    long_axis_mid: &Point,
    axis_dir: &Vector3<f64>,
    tol_plane: f64,
    tol_proximity: f64,
    step: f64,
    slab_half_width: f64,
) -> Result<(Point, Point)> {
    if !(tol_plane > 0.0 && tol_proximity > 0.0 && step > 0.0 && slab_half_width > 0.0) {
        return Err(Error::InvalidParameter("search tolerances must be positive".into()));
    }
    lv.validate()?;
    let n = junction.normal;
    let axis = axis_dir - n * axis_dir.dot(&n);
    if axis.norm() < 1e-12 {
        return Err(Error::ZeroVector);
    }
    let axis = axis.normalize();
    let d = n.cross(&axis);
    let origin = junction.project(long_axis_mid);

    let (mut s_min, mut s_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in lv.iter() {
        if junction.signed_distance(p).abs() > tol_plane {
            continue;
        }
        let v = p - origin;
        if v.dot(&axis).abs() > slab_half_width {
            continue;
        }
        let s = v.dot(&d);
        s_min = s_min.min(s);
        s_max = s_max.max(s);
    }
    if s_min > s_max {
        return Err(Error::NoCandidates);
    }

    let index = SpatialIndex::build(&lv.points)?;
    let at = |s: f64| origin + d * s;
    let near = |s: f64| index.nearest(&at(s)).1 <= tol_proximity;
    let mut sa = s_max;
    while !near(sa) {
        sa -= step;
        if sa < s_min {
            return Err(Error::NoConvergence);
        }
    }
    let mut sb = s_min;
    while !near(sb) {
        sb += step;
        if sb > sa {
            return Err(Error::NoConvergence);
        }
    }
    Ok((at(sa), at(sb)))
}

/// Two quadratic Béziers from the apex to each endpoint; each control point
/// is the apex-endpoint midpoint projected onto the junction plane.
pub(crate) fn groove_curves(apex: &Point, end_a: &Point, end_b: &Point, plane: &Plane) -> Result<Vec<Point>> {
    let mut groove = Vec::with_capacity(GROOVE_POINTS);
    for end in [end_a, end_b] {
        let control = plane.project(&midpoint(apex, end));
        groove.extend(bezier_sample(*apex, control, *end, SAMPLES_PER_CURVE)?);
    }
    Ok(groove)
}
