//! Synthetic LV/RV phantom with closed-form landmarks.
//!
//! Canonical frame: LV long axis on z, apex at `(0, 0, −c)`, open base at
//! `z = 0`. The LV is the lower half of an ellipsoid with semi-axes
//! `(a, b, c)` cut by the planar septum `x = rv_offset`; the RV is a quarter
//! ellipsoid bulging into `x > rv_offset` whose septal face coincides with
//! the LV cut. Both clouds are sampled on meridian half-planes at a fixed
//! angular step about the long axis.
//!
//! The fixed (anatomical) side is the canonical geometry mapped through the
//! inverse of the truth transform; the moving (functional) side is the
//! canonical LV, bent and noised, so `moving ≈ truth(fixed)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bezier_sample, midpoint, Plane, Point, PointCloud, SamplingMeta};
use crate::landmarks::{LandmarkSet, SAMPLES_PER_CURVE};
use crate::transform::{SimilarityJson, SimilarityTransform};
use crate::volume::VoxelVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// LV semi-axes `(a, b, c)`; `c` runs along the long axis.
    pub lv_semi_axes: [f64; 3],
    /// Septum position on the x axis.
    pub rv_offset: f64,
    /// RV extent beyond the septum.
    pub rv_depth: f64,
    /// Latitude samples per meridian half-plane on the fixed side.
    pub cta_points_per_plane: usize,
    pub cta_step_deg: f64,
    /// Latitude samples per meridian half-plane on the moving side.
    pub spect_points_per_plane: usize,
    pub spect_step_deg: f64,
    pub noise_sigma: f64,
    pub truth: SimilarityJson,
    pub bend_amplitude: f64,
    pub bend_wavelength: f64,
    pub seed: u64,
    /// Voxel size of the emitted volumes; 0 disables them.
    pub voxel_spacing: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            lv_semi_axes: [35.0, 35.0, 70.0],
            rv_offset: 21.0,
            rv_depth: 20.0,
            cta_points_per_plane: 40,
            cta_step_deg: 5.0,
            spect_points_per_plane: 20,
            spect_step_deg: 9.0,
            noise_sigma: 0.0,
            truth: (&SimilarityTransform::identity()).into(),
            bend_amplitude: 0.0,
            bend_wavelength: 140.0,
            seed: 0,
            voxel_spacing: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn truth_transform(&self) -> SimilarityTransform {
        SimilarityTransform::from(&self.truth)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        let [a, b, c] = self.lv_semi_axes;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return bad("semi-axes must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if !(self.rv_offset > -a && self.rv_offset < a) {
            return bad("septum must cut the LV (|rv_offset| < a)");
        }
        if !(self.rv_depth > 0.0) {
            return bad("rv_depth must be positive");
        }
        for step in [self.cta_step_deg, self.spect_step_deg] {
            if !(step > 0.0 && step <= 180.0) {
                return bad("angular steps must be in (0, 180]");
            }
        }
        if self.cta_points_per_plane < 2 || self.spect_points_per_plane < 2 {
            return bad("need at least two samples per plane");
        }
        if !(self.bend_wavelength > 0.0) {
            return bad("bend wavelength must be positive");
        }
        if !(self.voxel_spacing >= 0.0) {
            return bad("voxel spacing must be non-negative");
        }
        let t = self.truth_transform();
        t.validate().map_err(|e| Error::InvalidSpec(format!("truth transform: {e}")))
    }

    fn septum_scale(&self) -> f64 {
        let [a, _, _] = self.lv_semi_axes;
        (1.0 - (self.rv_offset / a).powi(2)).sqrt()
    }
}

/// Closed-form quantities of a generated phantom.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Maps fixed-frame points to the unbent, noiseless moving frame.
    pub transform: SimilarityTransform,
    pub bend_amplitude: f64,
    pub bend_wavelength: f64,
    pub apex_fixed: Point,
    pub apex_moving: Point,
    pub septum_fixed: Plane,
    pub septum_moving: Plane,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub lv: PointCloud,
    pub rv: PointCloud,
    pub functional: PointCloud,
    pub truth_landmarks_fixed: LandmarkSet,
    pub truth_landmarks_moving: LandmarkSet,
    pub lv_volume: Option<VoxelVolume>,
    pub functional_volume: Option<VoxelVolume>,
    pub ground_truth: GroundTruth,
}

fn meridian_count(step_deg: f64) -> usize {
    ((360.0 / step_deg).round() as usize).max(1)
}

/// LV surface in the canonical frame: apex once, then for each meridian
/// `k·step` the latitudes `θ_j = j/n · π/2`, `j = 1..=n`. Points beyond the
/// septum are pulled radially onto it.
fn sample_lv(spec: &PhantomSpec, step_deg: f64, per_plane: usize) -> PointCloud {
    let [a, b, c] = spec.lv_semi_axes;
    let planes = meridian_count(step_deg);
    let mut pts = vec![Point::new(0.0, 0.0, -c)];
    for k in 0..planes {
        let phi = (k as f64 * step_deg).to_radians();
        let (sp, cp) = phi.sin_cos();
        for j in 1..=per_plane {
            let theta = j as f64 / per_plane as f64 * FRAC_PI_2;
            let (st, ct) = theta.sin_cos();
            let mut x = a * st * cp;
            let mut y = b * st * sp;
            if x > spec.rv_offset {
                let f = spec.rv_offset / x;
                x = spec.rv_offset;
                y *= f;
            }
            pts.push(Point::new(x, y, -c * ct));
        }
    }
    PointCloud {
        points: pts,
        meta: Some(SamplingMeta {
            planes: planes.div_ceil(2),
            step_deg,
        }),
    }
}

/// RV in the canonical frame: the quarter ellipsoid `x ≥ x_s, z ≤ 0` with
/// semi-axes `(depth, r_y, r_z)` centered on the septum, plus its septal
/// face sampled on the same polar pattern.
fn sample_rv(spec: &PhantomSpec, step_deg: f64, per_plane: usize) -> PointCloud {
    let [_, b, c] = spec.lv_semi_axes;
    let k = spec.septum_scale();
    let (ry, rz) = (b * k, c * k);
    let xs = spec.rv_offset;
    let mut pts = Vec::new();
    // polar angle ψ ∈ [π, 2π] in the (y, z) face covers z ≤ 0
    let arcs = (meridian_count(step_deg) / 2).max(2);
    for i in 0..=arcs {
        let psi = PI + PI * i as f64 / arcs as f64;
        let (sp, cp) = psi.sin_cos();
        for j in 0..=per_plane {
            let t = j as f64 / per_plane as f64 * FRAC_PI_2;
            let (st, ct) = t.sin_cos();
            let (y, z) = (ry * st * cp, (rz * st * sp).min(0.0));
            pts.push(Point::new(xs + spec.rv_depth * ct, y, z));
            // septal face; its center and rim coincide with wall samples
            if j > 0 && j < per_plane {
                pts.push(Point::new(xs, y, z));
            }
        }
    }
    PointCloud::new(pts)
}

/// Analytic landmarks in the canonical frame for LV semi-axes and septum.
fn canonical_landmarks(spec: &PhantomSpec) -> Result<LandmarkSet> {
    let [a, b, c] = spec.lv_semi_axes;
    let xs = spec.rv_offset;
    let plane = Plane::new(Point::new(xs, 0.0, -c / 2.0), Vector3::x())?;
    let apex = Point::new(xs, 0.0, -c);
    let base = Point::new(xs, 0.0, 0.0);
    // short-axis plane z = −c/2 meets the septum where y² /b² = 1 − (x_s/a)² − 1/4
    let half = b * (1.0 - (xs / a).powi(2) - 0.25).max(0.0).sqrt();
    // search direction x × z = −y: curve A ends at negative y
    let end_a = Point::new(xs, -half, -c / 2.0);
    let end_b = Point::new(xs, half, -c / 2.0);
    let mut groove = Vec::new();
    for end in [end_a, end_b] {
        groove.extend(bezier_sample(apex, plane.project(&midpoint(&apex, &end)), end, SAMPLES_PER_CURVE)?);
    }
    Ok(LandmarkSet {
        apex,
        groove,
        plane,
        long_axis: (apex, base),
        flags: vec![],
    })
}

/// Sinusoidal displacement along x as a function of height.
pub fn bend(p: &Point, amplitude: f64, wavelength: f64) -> Point {
    Point::new(p.x + amplitude * (2.0 * PI * p.z / wavelength).sin(), p.y, p.z)
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let truth = spec.truth_transform();
    let to_fixed = |p: &Point| truth.inverse_apply(p);
    let (_, rot, _) = truth.normalized();

    let lv = sample_lv(spec, spec.cta_step_deg, spec.cta_points_per_plane).map(to_fixed);
    let rv = sample_rv(spec, spec.cta_step_deg, spec.cta_points_per_plane).map(to_fixed);

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut functional = sample_lv(spec, spec.spect_step_deg, spec.spect_points_per_plane);
    for p in functional.points.iter_mut() {
        *p = bend(p, spec.bend_amplitude, spec.bend_wavelength);
        if spec.noise_sigma > 0.0 {
            *p += Vector3::from_fn(|_, _| noise.sample(&mut rng));
        }
    }

    let moving_lm = canonical_landmarks(spec)?;
    let fixed_lm = moving_lm.map(to_fixed, |n| rot.transpose() * n);

    let (lv_volume, functional_volume) = if spec.voxel_spacing > 0.0 {
        (
            Some(anatomical_volume(spec, &truth, &lv, &rv)?),
            Some(functional_volume(spec, &functional)?),
        )
    } else {
        (None, None)
    };

    Ok(Phantom {
        ground_truth: GroundTruth {
            transform: truth,
            bend_amplitude: spec.bend_amplitude,
            bend_wavelength: spec.bend_wavelength,
            apex_fixed: fixed_lm.apex,
            apex_moving: moving_lm.apex,
            septum_fixed: fixed_lm.plane,
            septum_moving: moving_lm.plane,
        },
        lv,
        rv,
        functional,
        truth_landmarks_fixed: fixed_lm,
        truth_landmarks_moving: moving_lm,
        lv_volume,
        functional_volume,
    })
}

/// Smooth inside indicator of the LV cavity in the canonical frame.
fn lv_inside(spec: &PhantomSpec, p: &Point) -> f64 {
    let [a, b, c] = spec.lv_semi_axes;
    let r = ((p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2)).sqrt();
    let w = 1.5 / a.min(b).min(c);
    let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
    sig((1.0 - r) / w) * sig(-p.z / 1.5) * sig((spec.rv_offset - p.x) / 1.5)
}

fn rv_inside(spec: &PhantomSpec, p: &Point) -> f64 {
    let [_, b, c] = spec.lv_semi_axes;
    let k = spec.septum_scale();
    let r = (((p.x - spec.rv_offset) / spec.rv_depth).powi(2) + (p.y / (b * k)).powi(2) + (p.z / (c * k)).powi(2)).sqrt();
    let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
    sig((1.0 - r) / (1.5 / spec.rv_depth)) * sig(-p.z / 1.5) * sig((p.x - spec.rv_offset) / 1.5)
}

fn grid_around(points: &[Point], spacing: f64, margin: f64) -> Result<(Point, [usize; 3])> {
    let cloud = PointCloud::new(points.to_vec());
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyInput)?;
    let origin = lo - Vector3::repeat(margin);
    let extent = hi - lo + Vector3::repeat(2.0 * margin);
    let dims = [0, 1, 2].map(|k| (extent[k] / spacing).ceil() as usize + 1);
    Ok((origin, dims))
}

/// Anatomical intensities on an axis-aligned grid in the fixed frame.
fn anatomical_volume(spec: &PhantomSpec, truth: &SimilarityTransform, lv: &PointCloud, rv: &PointCloud) -> Result<VoxelVolume> {
    let all: Vec<Point> = lv.iter().chain(rv.iter()).copied().collect();
    let (origin, dims) = grid_around(&all, spec.voxel_spacing, 3.0 * spec.voxel_spacing)?;
    VoxelVolume::from_fn(origin, [spec.voxel_spacing; 3], dims, |x| {
        let p = truth.apply(x);
        1000.0 * lv_inside(spec, &p) + 500.0 * rv_inside(spec, &p)
    })
}

/// Functional uptake concentrated on the LV wall, in the moving frame.
fn functional_volume(spec: &PhantomSpec, functional: &PointCloud) -> Result<VoxelVolume> {
    let (origin, dims) = grid_around(&functional.points, spec.voxel_spacing, 3.0 * spec.voxel_spacing)?;
    let [a, b, c] = spec.lv_semi_axes;
    let scale = a.min(b).min(c);
    VoxelVolume::from_fn(origin, [spec.voxel_spacing; 3], dims, |x| {
        let p = bend(x, -spec.bend_amplitude, spec.bend_wavelength);
        let r = ((p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2)).sqrt();
        let d = (r - 1.0) * scale;
        let wall = (-d * d / (2.0 * 9.0)).exp();
        let below_base = 1.0 / (1.0 + (p.z / 1.5).exp());
        100.0 * wall * below_base
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialIndex;
    use crate::landmarks::GROOVE_POINTS;
    use nalgebra::{Rotation3, Unit};

    fn rotated_spec(deg: f64) -> PhantomSpec {
        PhantomSpec {
            truth: (&SimilarityTransform {
                scale: 1.1,
                rotation: *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, -0.5)), deg.to_radians()).matrix(),
                translation: Vector3::new(5.0, -8.0, 12.0),
                center: Point::origin(),
            })
                .into(),
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn identity_phantom_moving_on_fixed_surface() {
        let spec = PhantomSpec {
            spect_step_deg: 5.0,
            spect_points_per_plane: 40,
            ..PhantomSpec::default()
        };
        let ph = generate(&spec).unwrap();
        assert_eq!(ph.lv.len(), ph.functional.len());
        for (a, b) in ph.lv.iter().zip(ph.functional.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn truth_maps_fixed_onto_moving() {
        let spec = PhantomSpec {
            spect_step_deg: 5.0,
            spect_points_per_plane: 40,
            ..rotated_spec(20.0)
        };
        let ph = generate(&spec).unwrap();
        let t = &ph.ground_truth.transform;
        assert!((t.apply(&ph.ground_truth.apex_fixed) - ph.ground_truth.apex_moving).norm() < 1e-9);
        for (a, b) in ph.lv.iter().zip(ph.functional.iter()) {
            assert!((t.apply(a) - b).norm() < 1e-9);
        }
    }

    #[test]
    fn truth_landmarks_are_valid() {
        let ph = generate(&rotated_spec(35.0)).unwrap();
        for lm in [&ph.truth_landmarks_fixed, &ph.truth_landmarks_moving] {
            assert_eq!(lm.groove.len(), GROOVE_POINTS);
            assert_eq!(lm.groove[0], lm.apex);
            assert_eq!(lm.groove[9], lm.apex);
            for g in &lm.groove {
                assert!(lm.plane.signed_distance(g).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn septum_points_lie_on_plane_and_touch() {
        let ph = generate(&PhantomSpec::default()).unwrap();
        let on_septum = ph.lv.iter().filter(|p| (p.x - 21.0).abs() < 1e-9).count();
        assert!(on_septum > 100);
        assert!(ph.lv.iter().all(|p| p.x <= 21.0 + 1e-9 && p.z <= 1e-9));
        assert!(ph.rv.iter().all(|p| p.x >= 21.0 - 1e-9 && p.z <= 1e-9));
        let index = SpatialIndex::build(&ph.rv.points).unwrap();
        let touching = ph.lv.iter().filter(|p| index.nearest(p).1 < 3.0).count();
        assert!(touching > 100);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = PhantomSpec {
            noise_sigma: 0.5,
            bend_amplitude: 6.0,
            seed: 9,
            ..PhantomSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.functional, b.functional);
        let c = generate(&PhantomSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.functional, c.functional);
    }

    #[test]
    fn invalid_specs() {
        let bad = PhantomSpec {
            lv_semi_axes: [0.0, 1.0, 1.0],
            ..PhantomSpec::default()
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))));
        let bad = PhantomSpec {
            noise_sigma: -1.0,
            ..PhantomSpec::default()
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn volumes_are_emitted() {
        let spec = PhantomSpec {
            voxel_spacing: 4.0,
            ..rotated_spec(10.0)
        };
        let ph = generate(&spec).unwrap();
        let lv = ph.lv_volume.unwrap();
        let f = ph.functional_volume.unwrap();
        assert!(lv.min_max().1 > 900.0);
        assert!(f.min_max().1 > 90.0);
    }
}
