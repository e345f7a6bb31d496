//! Landmarks from a single ventricle cloud sampled on rotated long-axis
//! planes, with the long axis roughly parallel to z.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{contraction_search, groove_curves, LandmarkConfig, LandmarkFlag, LandmarkSet};
use crate::error::{Error, Result};
use crate::geometry::{midpoint, pca_2d, Plane, Point, PointCloud, SpatialIndex};

/// Indices of the points whose XY projection is not within `tol` of an
/// earlier point's projection.
pub fn dedup_xy(points: &[Point], tol: f64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let flat: Vec<Point> = points.iter().map(|p| Point::new(p.x, p.y, 0.0)).collect();
    let index = SpatialIndex::build(&flat)?;
    Ok((0..flat.len())
        .filter(|&i| index.within_radius(&flat[i], tol).first().is_none_or(|&j| j >= i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: Vector2<f64>,
    pub radius: f64,
    /// Points within the band around the circumference.
    pub inlier_count: usize,
}

fn circumcircle(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> Option<(Vector2<f64>, f64)> {
    let (ab, ac) = (b - a, c - a);
    let det = 2.0 * (ab.x * ac.y - ab.y * ac.x);
    let scale = ab.norm_squared().max(ac.norm_squared());
    if det.abs() <= 1e-12 * scale {
        return None;
    }
    let (b2, c2) = (ab.norm_squared(), ac.norm_squared());
    let offset = Vector2::new(ac.y * b2 - ab.y * c2, ab.x * c2 - ac.x * b2) / det;
    Some((a + offset, offset.norm()))
}

/// Region a fitted circle must stay within: center inside the bounding box
/// of the points, radius at most half its diagonal.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CircleBounds {
    lo: Vector2<f64>,
    hi: Vector2<f64>,
    max_radius: f64,
}

impl CircleBounds {
    pub(crate) fn of(points: &[Vector2<f64>]) -> Self {
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Self {
            lo,
            hi,
            max_radius: 0.5 * (hi - lo).norm(),
        }
    }
}

/// Circle through the three sampled points with its inlier count, or `None`
/// for collinear samples and circles leaving `bounds`.
pub(crate) fn score_circle(points: &[Vector2<f64>], sample: [usize; 3], band_tol: f64, bounds: &CircleBounds) -> Option<CircleFit> {
    let (center, radius) = circumcircle(&points[sample[0]], &points[sample[1]], &points[sample[2]])?;
    let inside_box = (0..2).all(|k| center[k] >= bounds.lo[k] && center[k] <= bounds.hi[k]);
    if !inside_box || radius > bounds.max_radius {
        return None;
    }
    let inliers = points
        .iter()
        .filter(|p| ((*p - center).norm() - radius).abs() <= band_tol)
        .count();
    Some(CircleFit {
        center,
        radius,
        inlier_count: inliers,
    })
}

/// Seeded RANSAC over random point triples. Each triple defines a circle;
/// circles whose center leaves the bounding box of the points or whose
/// radius exceeds half its diagonal are discarded. The circle with the most
/// points within `band_tol` of its circumference wins, earliest on ties.
pub fn ransac_circle(points: &[Vector2<f64>], iterations: usize, band_tol: f64, seed: u64) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let (eig, _) = pca_2d(points)?;
    if eig[1] <= 1e-12 * eig[0] {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: 2,
        });
    }
    let bounds = CircleBounds::of(points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CircleFit> = None;
    for _ in 0..iterations {
        let s = rand::seq::index::sample(&mut rng, points.len(), 3);
        let sample = [s.index(0), s.index(1), s.index(2)];
        if let Some(fit) = score_circle(points, sample, band_tol, &bounds) {
            if best.is_none_or(|b| fit.inlier_count > b.inlier_count) {
                best = Some(fit);
            }
        }
    }
    best.ok_or(Error::NoModel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectAxis {
    pub apex: Point,
    pub base_center: Point,
    pub low_confidence: bool,
}

/// Apex and base from the fitted center: the long axis runs through the
/// circle center parallel to z. The closed end is the 10% z-slab with fewer
/// points beyond half the radius; the apex is its extremal-z point within
/// half the radius of the axis and the base is the centroid of the opposite
/// slab.
pub fn spect_long_axis(cloud: &PointCloud, circle: &CircleFit) -> Result<SpectAxis> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rho: Vec<f64> = cloud
        .iter()
        .map(|p| (Vector2::new(p.x, p.y) - circle.center).norm())
        .collect();
    let mut zs: Vec<f64> = cloud.iter().map(|p| p.z).collect();
    zs.sort_by(f64::total_cmp);
    let q = ((zs.len() - 1) as f64 * 0.1).round() as usize;
    let (z_lo, z_hi) = (zs[q], zs[zs.len() - 1 - q]);
    let half = circle.radius / 2.0;
    let outer = |in_slab: &dyn Fn(f64) -> bool| {
        cloud
            .iter()
            .zip(&rho)
            .filter(|(p, &r)| in_slab(p.z) && r > half)
            .count()
    };
    let low_slab = |z: f64| z <= z_lo;
    let high_slab = |z: f64| z >= z_hi;
    let (out_lo, out_hi) = (outer(&low_slab), outer(&high_slab));
    let low_confidence = out_lo == out_hi;
    let apex_low = out_lo <= out_hi;

    let closed: &dyn Fn(f64) -> bool = if apex_low { &low_slab } else { &high_slab };
    let better = |a: f64, b: f64| if apex_low { a < b } else { a > b };
    let mut apex: Option<usize> = None;
    for (i, p) in cloud.iter().enumerate() {
        if rho[i] <= half && apex.is_none_or(|j| better(p.z, cloud.points[j].z)) {
            apex = Some(i);
        }
    }
    // no point near the axis: closest-to-axis point of the closed slab
    let apex = apex.unwrap_or_else(|| {
        (0..cloud.len())
            .filter(|&i| closed(cloud.points[i].z))
            .min_by(|&a, &b| rho[a].total_cmp(&rho[b]).then(a.cmp(&b)))
            .unwrap()
    });
    let open: &dyn Fn(f64) -> bool = if apex_low { &high_slab } else { &low_slab };
    let base: Vec<Point> = cloud.iter().filter(|p| open(p.z)).copied().collect();
    Ok(SpectAxis {
        apex: cloud.points[apex],
        base_center: crate::geometry::centroid(&base).unwrap(),
        low_confidence,
    })
}

/// Result of the rotating-plane search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JunctionSearch {
    pub plane: Plane,
    pub angle_deg: f64,
    pub coverage: usize,
    pub boundary_fallback: bool,
}

/// Rotates a radial direction about the long axis in `plane_step_deg`
/// increments. Each candidate plane has that direction as normal and sits
/// `radius_fraction` of the largest radial distance from the axis center.
/// Coverage counts points within `cover_tol`; the boundary band holds points
/// at distance in `(cover_tol, 2·cover_tol]`. The best-covered candidate with
/// an empty band wins (smaller angle on ties). If every candidate has band
/// points, the best-covered candidate is returned with `boundary_fallback`
/// set, or `NoModel` under `strict_boundary`.
pub fn spect_junction_plane(cloud: &PointCloud, apex: &Point, base_center: &Point, cfg: &LandmarkConfig) -> Result<JunctionSearch> {
    cloud.validate()?;
    let axis = base_center - apex;
    let len = axis.norm();
    if len < 1.0 {
        return Err(Error::DegenerateAxis(len));
    }
    let a = axis / len;
    let radial = |p: &Point| {
        let v = p - apex;
        v - a * v.dot(&a)
    };
    let r_max = cloud.iter().map(|p| radial(p).norm()).fold(0.0, f64::max);
    let mut b0 = radial(&cloud.centroid().unwrap());
    if b0.norm() <= 1e-9 * r_max.max(1.0) {
        let far = (0..cloud.len())
            .max_by(|&i, &j| radial(&cloud.points[i]).norm().total_cmp(&radial(&cloud.points[j]).norm()).then(j.cmp(&i)))
            .unwrap();
        b0 = radial(&cloud.points[far]);
    }
    if b0.norm() == 0.0 {
        return Err(Error::ZeroVector);
    }
    let b0 = b0.normalize();
    let b1 = a.cross(&b0);
    let center = midpoint(apex, base_center);
    let steps = (360.0 / cfg.plane_step_deg).round().max(1.0) as usize;

    let mut best_clean: Option<JunctionSearch> = None;
    let mut best_any: Option<JunctionSearch> = None;
    for k in 0..steps {
        let angle_deg = k as f64 * cfg.plane_step_deg;
        let t = angle_deg.to_radians();
        let n: Vector3<f64> = b0 * t.cos() + b1 * t.sin();
        let plane = Plane::new(center + n * (cfg.radius_fraction * r_max), n)?;
        let (mut coverage, mut band) = (0, 0);
        for p in cloud.iter() {
            let d = plane.signed_distance(p).abs();
            if d <= cfg.cover_tol {
                coverage += 1;
            } else if d <= 2.0 * cfg.cover_tol {
                band += 1;
            }
        }
        let cand = JunctionSearch {
            plane,
            angle_deg,
            coverage,
            boundary_fallback: false,
        };
        if band == 0 && best_clean.is_none_or(|b| coverage > b.coverage) {
            best_clean = Some(cand);
        }
        if best_any.is_none_or(|b| coverage > b.coverage) {
            best_any = Some(cand);
        }
    }
    match best_clean {
        Some(b) => Ok(b),
        None if cfg.strict_boundary => Err(Error::NoModel),
        None => Ok(JunctionSearch {
            boundary_fallback: true,
            ..best_any.unwrap()
        }),
    }
}

/// Circle fit on the deduplicated XY projection, long axis, rotating-plane
/// junction search, then the same contraction search and groove curves as
/// the two-chamber extractor. Apex and base are reported on the junction
/// plane.
pub fn spect_landmarks(cloud: &PointCloud, cfg: &LandmarkConfig) -> Result<LandmarkSet> {
    cfg.validate()?;
    cloud.validate()?;
    let kept = dedup_xy(&cloud.points, cfg.dedup_tol)?;
    let xy: Vec<Vector2<f64>> = kept.iter().map(|&i| Vector2::new(cloud.points[i].x, cloud.points[i].y)).collect();
    let circle = ransac_circle(&xy, cfg.ransac_iterations, cfg.band_tol, cfg.seed)?;
    let axis = spect_long_axis(cloud, &circle)?;
    let search = spect_junction_plane(cloud, &axis.apex, &axis.base_center, cfg)?;
    let plane = search.plane;
    let mut flags = Vec::new();
    if axis.low_confidence {
        flags.push(LandmarkFlag::LowConfidenceApex);
    }
    if search.boundary_fallback {
        flags.push(LandmarkFlag::BoundaryFallback);
    }
    let apex = plane.project(&axis.apex);
    let base = plane.project(&axis.base_center);
    let (a, b) = contraction_search(
        cloud,
        &plane,
        &midpoint(&apex, &base),
        &(base - apex),
        cfg.tol_plane,
        cfg.tol_proximity,
        cfg.step,
        cfg.slab_half_width,
    )?;
    Ok(LandmarkSet {
        apex,
        groove: groove_curves(&apex, &a, &b, &plane)?,
        plane,
        long_axis: (apex, base),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ring_with_interior(seed: u64) -> Vec<Vector2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Vector2::new(5.0, 3.0);
        let mut pts: Vec<Vector2<f64>> = (0..36)
            .map(|k| {
                let t = (k as f64 * 10.0).to_radians();
                c + Vector2::new(t.cos(), t.sin()) * 20.0
            })
            .collect();
        for _ in 0..40 {
            let r = rng.random_range(0.0..15.0);
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            pts.push(c + Vector2::new(t.cos(), t.sin()) * r);
        }
        pts
    }

    /// Best score over every triple.
    fn exhaustive(points: &[Vector2<f64>], band_tol: f64) -> Option<CircleFit> {
        let mut best: Option<CircleFit> = None;
        let n = points.len();
        let bounds = CircleBounds::of(points);
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    if let Some(f) = score_circle(points, [i, j, k], band_tol, &bounds) {
                        if best.is_none_or(|b| f.inlier_count > b.inlier_count) {
                            best = Some(f);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn ring_with_interior_matches_exhaustive_search() {
        let pts = ring_with_interior(1);
        let fit = ransac_circle(&pts, 2000, 0.5, 7).unwrap();
        let oracle = exhaustive(&pts, 0.5).unwrap();
        assert_eq!(fit.inlier_count, oracle.inlier_count);
        assert!(fit.inlier_count >= 36);
        assert!((fit.center - Vector2::new(5.0, 3.0)).norm() < 1.0, "{fit:?}");
        assert!((oracle.center - Vector2::new(5.0, 3.0)).norm() < 1.0);
    }

    #[test]
    fn three_points_give_their_circumcircle() {
        let pts = [Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0), Vector2::new(0.0, 2.0)];
        let fit = ransac_circle(&pts, 10, 0.1, 0).unwrap();
        assert!((fit.center - Vector2::new(1.0, 1.0)).norm() < 1e-12);
        assert_eq!(fit.inlier_count, 3);
    }

    #[test]
    fn collinear_points_are_insufficient() {
        let pts: Vec<Vector2<f64>> = (0..10).map(|i| Vector2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(ransac_circle(&pts, 100, 0.1, 0), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn argmax_over_visited_models() {
        let pts = ring_with_interior(2);
        let (iters, seed) = (300, 11);
        let fit = ransac_circle(&pts, iters, 0.5, seed).unwrap();
        // replay the same triples
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..iters {
            let s = rand::seq::index::sample(&mut rng, pts.len(), 3);
            if let Some(f) = score_circle(&pts, [s.index(0), s.index(1), s.index(2)], 0.5, &CircleBounds::of(&pts)) {
                assert!(f.inlier_count <= fit.inlier_count);
            }
        }
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let pts = vec![
            Point::new(0.0, 0.0, 1.0),
            Point::new(0.0, 0.0, 5.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(1.0, 1e-9, 2.0),
        ];
        assert_eq!(dedup_xy(&pts, 1e-6).unwrap(), vec![0, 2]);
    }

    fn half_ellipsoid(apex_down: bool) -> PointCloud {
        let mut pts = Vec::new();
        let sign = if apex_down { -1.0 } else { 1.0 };
        pts.push(Point::new(0.0, 0.0, sign * 50.0));
        for i in 1..=20 {
            let theta = i as f64 / 20.0 * std::f64::consts::FRAC_PI_2;
            for k in 0..40 {
                let phi = (k as f64 * 9.0).to_radians();
                pts.push(Point::new(25.0 * theta.sin() * phi.cos(), 25.0 * theta.sin() * phi.sin(), sign * 50.0 * theta.cos()));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn apex_at_closed_pole() {
        let circle = CircleFit {
            center: Vector2::zeros(),
            radius: 25.0,
            inlier_count: 1,
        };
        let down = spect_long_axis(&half_ellipsoid(true), &circle).unwrap();
        assert_eq!(down.apex, Point::new(0.0, 0.0, -50.0));
        assert!(!down.low_confidence);
        assert!(down.base_center.z > -5.0);
        let up = spect_long_axis(&half_ellipsoid(false), &circle).unwrap();
        assert_eq!(up.apex, Point::new(0.0, 0.0, 50.0));
    }

    #[test]
    fn symmetric_ellipsoid_is_low_confidence() {
        let mut cloud = half_ellipsoid(true);
        let upper = half_ellipsoid(false);
        cloud.points.extend(upper.points.into_iter().filter(|p| p.z > 1e-9));
        let circle = CircleFit {
            center: Vector2::zeros(),
            radius: 25.0,
            inlier_count: 1,
        };
        let axis = spect_long_axis(&cloud, &circle).unwrap();
        assert!(axis.low_confidence);
        assert_eq!(axis.apex.z, -50.0);
    }

    fn shell_of_revolution() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..=20 {
            let z = -40.0 + 2.0 * i as f64;
            for k in 0..360 {
                let phi = (k as f64).to_radians();
                pts.push(Point::new(20.0 * phi.cos(), 20.0 * phi.sin(), z));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn featureless_shell_ties_to_angle_zero() {
        let cloud = shell_of_revolution();
        let cfg = LandmarkConfig::default();
        let r = spect_junction_plane(&cloud, &Point::new(0.0, 0.0, -40.0), &Point::new(0.0, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(r.angle_deg, 0.0);
        assert!(r.boundary_fallback);
        let strict = LandmarkConfig {
            strict_boundary: true,
            ..cfg
        };
        assert!(matches!(
            spect_junction_plane(&cloud, &Point::new(0.0, 0.0, -40.0), &Point::new(0.0, 0.0, 0.0), &strict),
            Err(Error::NoModel)
        ));
    }

    #[test]
    fn ridge_selects_its_angle() {
        let mut cloud = shell_of_revolution();
        // dense planar ridge perpendicular to the radial direction at 40°
        // from the initial basis, located where the candidate planes sit
        let probe = spect_junction_plane(&cloud, &Point::new(0.0, 0.0, -40.0), &Point::new(0.0, 0.0, 0.0), &LandmarkConfig::default()).unwrap();
        let b0 = probe.plane.normal;
        let b1 = Vector3::z().cross(&b0);
        let t = 40f64.to_radians();
        let n = b0 * t.cos() + b1 * t.sin();
        let side = Vector3::z().cross(&n);
        for i in 0..=40 {
            for j in -10..=10 {
                cloud.points.push(Point::origin() + n * 12.0 + side * j as f64 + Vector3::z() * (-40.0 + i as f64));
            }
        }
        let r = spect_junction_plane(&cloud, &Point::new(0.0, 0.0, -40.0), &Point::new(0.0, 0.0, 0.0), &LandmarkConfig::default()).unwrap();
        let off = r.plane.normal.dot(&n).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(off <= 5.0, "{off}");
    }
}
