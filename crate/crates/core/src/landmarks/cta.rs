//! Landmarks from a segmented two-chamber pair (LV and RV surface clouds).

use nalgebra::Vector3;

use super::{contraction_search, groove_curves, LandmarkConfig, LandmarkFlag, LandmarkSet};
use crate::error::{Error, Result};
use crate::geometry::{fit_plane_pca, midpoint, pca_2d, project_to_plane, Plane, Point, PointCloud, SpatialIndex};

/// Points of each cloud whose nearest neighbour in the other is within
/// `threshold`.
pub fn contact_points(lv: &PointCloud, rv: &PointCloud, threshold: f64) -> Result<(PointCloud, PointCloud)> {
    if lv.is_empty() || rv.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter("contact threshold must be positive".into()));
    }
    let near = |from: &PointCloud, to: &PointCloud| -> Result<PointCloud> {
        let index = SpatialIndex::build(&to.points)?;
        Ok(PointCloud::new(
            from.iter().filter(|p| index.nearest(p).1 <= threshold).copied().collect(),
        ))
    };
    Ok((near(lv, rv)?, near(rv, lv)?))
}

/// Plane fitted to the contact region, normal pointing from the LV centroid
/// towards the RV centroid. Falls back to a fit of all points (second value
/// `true`) when fewer than `min_contact` contact points exist.
pub fn junction_plane(lv: &PointCloud, rv: &PointCloud, threshold: f64, min_contact: usize) -> Result<(Plane, bool)> {
    let (cl, cr) = contact_points(lv, rv, threshold)?;
    let contact: Vec<Point> = cl.points.into_iter().chain(cr.points).collect();
    let (plane, fallback) = if contact.len() >= min_contact.max(3) {
        (fit_plane_pca(&contact)?, false)
    } else {
        let all: Vec<Point> = lv.iter().chain(rv.iter()).copied().collect();
        (fit_plane_pca(&all)?, true)
    };
    let towards_rv = rv.centroid().unwrap() - lv.centroid().unwrap();
    let plane = if plane.normal.dot(&towards_rv) < 0.0 {
        plane.flipped()
    } else {
        plane
    };
    Ok((plane, fallback))
}

/// Long axis of a cloud projected onto a plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongAxis {
    /// Axis ends on the plane, at the extreme projections along the
    /// principal direction.
    pub endpoint_a: Point,
    pub endpoint_b: Point,
    pub apex: Point,
    pub base: Point,
    pub low_confidence: bool,
}

/// In-plane principal axis of `lv` and its apex end. The apex is the end
/// whose cap (points within `cap_fraction` of the axis length from that end)
/// is narrower across the axis. Caps within 5% of each other are a tie,
/// resolved to the end attained by the lower point index.
pub fn long_axis_and_apex(lv: &PointCloud, plane: &Plane, cap_fraction: f64) -> Result<LongAxis> {
    if lv.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: lv.len(),
        });
    }
    let proj = project_to_plane(&lv.points, plane);
    let (_, axes) = pca_2d(&proj.coords)?;
    let u: Vector3<f64> = (proj.e1 * axes[0].x + proj.e2 * axes[0].y).normalize();
    let across = plane.normal.cross(&u);
    let center = plane.project(&lv.centroid().unwrap());

    let s: Vec<f64> = lv.iter().map(|p| (p - center).dot(&u)).collect();
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 1..s.len() {
        if s[i] < s[lo] {
            lo = i;
        }
        if s[i] > s[hi] {
            hi = i;
        }
    }
    let length = s[hi] - s[lo];
    if !(length > 0.0) {
        return Err(Error::DegenerateAxis(length));
    }
    let cap = cap_fraction * length;
    let width = |near_end: &dyn Fn(f64) -> bool| {
        let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, p) in lv.iter().enumerate() {
            if near_end(s[i]) {
                let w = (p - center).dot(&across);
                a = a.min(w);
                b = b.max(w);
            }
        }
        b - a
    };
    let w_lo = width(&|x| x <= s[lo] + cap);
    let w_hi = width(&|x| x >= s[hi] - cap);
    let endpoint_lo = center + u * s[lo];
    let endpoint_hi = center + u * s[hi];

    let low_confidence = (w_lo - w_hi).abs() <= 0.05 * w_lo.max(w_hi);
    let apex_is_lo = if low_confidence { lo < hi } else { w_lo < w_hi };
    let (apex, base) = if apex_is_lo {
        (endpoint_lo, endpoint_hi)
    } else {
        (endpoint_hi, endpoint_lo)
    };
    Ok(LongAxis {
        endpoint_a: endpoint_lo,
        endpoint_b: endpoint_hi,
        apex,
        base,
        low_confidence,
    })
}

/// Junction plane, long axis, contraction search and groove curves from an
/// LV/RV pair.
pub fn cta_landmarks(lv: &PointCloud, rv: &PointCloud, cfg: &LandmarkConfig) -> Result<LandmarkSet> {
    cfg.validate()?;
    lv.validate()?;
    rv.validate()?;
    let mut flags = Vec::new();
    let (plane, fallback) = junction_plane(lv, rv, cfg.contact_threshold, cfg.min_contact)?;
    if fallback {
        flags.push(LandmarkFlag::ContactFallback);
    }
    let axis = long_axis_and_apex(lv, &plane, cfg.cap_fraction)?;
    if axis.low_confidence {
        flags.push(LandmarkFlag::LowConfidenceApex);
    }
    let (a, b) = contraction_search(
        lv,
        &plane,
        &midpoint(&axis.apex, &axis.base),
        &(axis.base - axis.apex),
        cfg.tol_plane,
        cfg.tol_proximity,
        cfg.step,
        cfg.slab_half_width,
    )?;
    Ok(LandmarkSet {
        apex: axis.apex,
        groove: groove_curves(&axis.apex, &a, &b, &plane)?,
        plane,
        long_axis: (axis.apex, axis.base),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(center: Point, r: f64, n: usize) -> PointCloud {
        // Fibonacci sphere
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    center + Vector3::new(rho * phi.cos(), rho * phi.sin(), z) * r
                })
                .collect(),
        )
    }

    #[test]
    fn contact_far_apart_is_empty() {
        let a = PointCloud::new(vec![Point::origin()]);
        let b = PointCloud::new(vec![Point::new(10.0, 0.0, 0.0)]);
        let (x, y) = contact_points(&a, &b, 5.0).unwrap();
        assert!(x.is_empty() && y.is_empty());
    }

    #[test]
    fn contact_identical_returns_all() {
        let a = sphere(Point::origin(), 10.0, 200);
        let (x, y) = contact_points(&a, &a, 1e-6).unwrap();
        assert_eq!(x.points, a.points);
        assert_eq!(y.points, a.points);
    }

    #[test]
    fn contact_spheres_match_brute_force() {
        let a = sphere(Point::origin(), 30.0, 2000);
        let b = sphere(Point::new(58.0, 0.0, 0.0), 30.0, 2000);
        let (x, y) = contact_points(&a, &b, 3.0).unwrap();
        let brute = |from: &PointCloud, to: &PointCloud| -> Vec<Point> {
            from.iter()
                .filter(|p| to.iter().any(|q| (*p - q).norm_squared().sqrt() <= 3.0))
                .copied()
                .collect()
        };
        assert!(!x.is_empty());
        assert_eq!(x.points, brute(&a, &b));
        assert_eq!(y.points, brute(&b, &a));
    }

    fn slab(x: f64, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..400)
                .map(|_| Point::new(x, rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
                .collect(),
        )
    }

    #[test]
    fn parallel_slabs_give_separation_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lv = slab(0.0, &mut rng);
        let rv = slab(2.0, &mut rng);
        let (plane, fallback) = junction_plane(&lv, &rv, 3.0, 30).unwrap();
        assert!(!fallback);
        assert!(plane.normal.dot(&Vector3::x()) > 1f64.to_radians().cos());
        assert!((plane.center.x - 1.0).abs() < 0.1);
    }

    #[test]
    fn disjoint_clouds_fall_back_to_global_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lv = slab(0.0, &mut rng);
        let rv = slab(50.0, &mut rng);
        let (plane, fallback) = junction_plane(&lv, &rv, 0.1, 30).unwrap();
        assert!(fallback);
        let all: Vec<Point> = lv.iter().chain(rv.iter()).copied().collect();
        let global = fit_plane_pca(&all).unwrap();
        assert!((plane.center - global.center).norm() < 1e-12);
        assert!((plane.normal.dot(&global.normal).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ellipse_endpoints_at_major_axis() {
        // ellipse 40×20 (semi-axes 20 and 10) in the plane z = 0
        let lv = PointCloud::new(
            (0..360)
                .map(|k| {
                    let t = (k as f64).to_radians();
                    Point::new(20.0 * t.cos(), 10.0 * t.sin(), 0.0)
                })
                .collect(),
        );
        let plane = Plane::new(Point::origin(), Vector3::z()).unwrap();
        let axis = long_axis_and_apex(&lv, &plane, 0.1).unwrap();
        let mut xs = [axis.endpoint_a.x, axis.endpoint_b.x];
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 20.0).abs() < 1e-9 && (xs[1] - 20.0).abs() < 1e-9);
        // symmetric: low confidence, apex at the end attained by lower index (k = 0, x = +20)
        assert!(axis.low_confidence);
        assert!((axis.apex.x - 20.0).abs() < 1e-9);
    }

    #[test]
    fn half_ellipsoid_apex_at_closed_pole() {
        let mut pts = Vec::new();
        for i in 1..=30 {
            let theta = i as f64 / 30.0 * std::f64::consts::FRAC_PI_2;
            for k in 0..36 {
                let phi = (k as f64 * 10.0).to_radians();
                pts.push(Point::new(20.0 * theta.sin() * phi.cos(), 20.0 * theta.sin() * phi.sin(), -60.0 * theta.cos()));
            }
        }
        let lv = PointCloud::new(pts);
        let plane = Plane::new(Point::origin(), Vector3::x()).unwrap();
        let axis = long_axis_and_apex(&lv, &plane, 0.1).unwrap();
        assert!(!axis.low_confidence);
        assert!(axis.apex.z < -59.0);
        assert!(axis.base.z > -1.0);
    }
}
