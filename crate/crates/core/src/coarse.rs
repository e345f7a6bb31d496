//! Coarse alignment: isotropic scale from principal variances, then a rigid
//! Umeyama fit on corresponding landmarks.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{pca, Point, PointCloud};
use crate::landmarks::LandmarkSet;
use crate::transform::SimilarityTransform;
use crate::umeyama::umeyama;

const MIN_EIGENVALUE: f64 = 1e-12;

/// Mean of `sqrt(λ_fixed,i / λ_moving,i)` over descending-sorted eigenvalues.
pub fn scale_factor(moving: &PointCloud, fixed: &PointCloud) -> Result<f64> {
    let m = pca(&moving.points)?;
    let f = pca(&fixed.points)?;
    let mut sum = 0.0;
    for i in 0..3 {
        for lambda in [m.eigenvalues[i], f.eigenvalues[i]] {
            if lambda <= MIN_EIGENVALUE {
                return Err(Error::DegenerateCloud(lambda));
            }
        }
        sum += (f.eigenvalues[i] / m.eigenvalues[i]).sqrt();
    }
    Ok(sum / 3.0)
}

/// Least-squares rigid fit `dst ≈ R·src + t` on ordered correspondences.
pub fn umeyama_rigid(src: &[Point], dst: &[Point]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() {
        return Err(Error::CountMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: src.len(),
        });
    }
    let a = umeyama(src, dst, None, false)?;
    Ok((a.rotation, a.translation))
}

/// Scales the moving cloud about its centroid to match the fixed cloud's
/// principal variances, aligns the scaled apex and groove landmarks onto the
/// fixed ones, and applies the combined similarity to the whole cloud.
pub fn coarse_register(
    moving: &PointCloud,
    fixed: &PointCloud,
    moving_lm: &LandmarkSet,
    fixed_lm: &LandmarkSet,
) -> Result<(SimilarityTransform, PointCloud)> {
    moving.validate()?;
    fixed.validate()?;
    moving_lm.validate()?;
    fixed_lm.validate()?;
    let s = scale_factor(moving, fixed)?;
    let center = moving.centroid().unwrap();
    let scaled: Vec<Point> = moving_lm
        .correspondences()
        .iter()
        .map(|p| center + (p - center) * s)
        .collect();
    let (rotation, translation) = umeyama_rigid(&scaled, &fixed_lm.correspondences())?;
    let t = SimilarityTransform {
        scale: s,
        rotation,
        translation,
        center,
    };
    Ok((t, t.apply_cloud(moving)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Plane;
    use crate::metrics::mpe;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anisotropic_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point::new(rng.random_range(-30.0..30.0), rng.random_range(-18.0..18.0), rng.random_range(-8.0..8.0)))
                .collect(),
        )
    }

    fn landmarks_of(points: &[Point]) -> LandmarkSet {
        LandmarkSet {
            apex: points[0],
            groove: points[1..19].to_vec(),
            plane: Plane::new(points[0], Vector3::z()).unwrap(),
            long_axis: (points[0], points[1]),
            flags: vec![],
        }
    }

    #[test]
    fn identical_clouds_have_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = anisotropic_cloud(&mut rng, 300);
        assert!((scale_factor(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        let doubled = c.map(|p| p * 2.0);
        assert!((scale_factor(&c, &doubled).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stretch_along_principal_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = anisotropic_cloud(&mut rng, 2000);
        let r = pca(&c.points).unwrap();
        let stretch = [2.0, 2.0, 0.5];
        let stretched = c.map(|p| {
            let d = p - r.centroid;
            let mut out = r.centroid;
            for k in 0..3 {
                out += r.eigenvectors[k] * d.dot(&r.eigenvectors[k]) * stretch[k];
            }
            out
        });
        // oracle: eigenvalues of the stretched cloud re-sorted, paired by rank
        let mut expected: Vec<f64> = (0..3).map(|k| r.eigenvalues[k] * stretch[k] * stretch[k]).collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        let oracle: f64 = (0..3).map(|k| (expected[k] / r.eigenvalues[k]).sqrt()).sum::<f64>() / 3.0;
        let s = scale_factor(&c, &stretched).unwrap();
        assert!((s - oracle).abs() < 1e-9);
        // the first two axes stay first after stretching, so rank pairing is axis pairing
        assert!((s - 1.5).abs() < 1e-9, "{s}");
    }

    #[test]
    fn scale_factor_reciprocal_for_isotropic_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = anisotropic_cloud(&mut rng, 200);
            let k = rng.random_range(0.5..2.0);
            let rot = Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), 0.3);
            let b = a.map(|p| rot * (p * k) + Vector3::new(1.0, 2.0, 3.0));
            let prod = scale_factor(&a, &b).unwrap() * scale_factor(&b, &a).unwrap();
            assert!((prod - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_factor_reciprocal_product_is_at_least_one() {
        // with unequal per-axis ratios the mean of ratios and the mean of
        // inverse ratios are related by the AM-HM inequality
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = anisotropic_cloud(&mut rng, 500);
        let b = anisotropic_cloud(&mut rng, 500).map(|p| Point::new(p.x * 1.1, p.y * 0.7, p.z));
        let prod = scale_factor(&a, &b).unwrap() * scale_factor(&b, &a).unwrap();
        assert!(prod >= 1.0 - 1e-12);
    }

    #[test]
    fn planar_cloud_is_degenerate() {
        let flat = PointCloud::new((0..50).map(|i| Point::new(i as f64, (i * 7 % 13) as f64, 0.0)).collect());
        assert!(matches!(scale_factor(&flat, &flat), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn umeyama_rigid_objective_matches_independent_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = anisotropic_cloud(&mut rng, 19).points;
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -1.0, 0.5)), 1.1);
        let t = Vector3::new(-4.0, 9.0, 2.0);
        let dst: Vec<Point> = src.iter().map(|p| rot * p + t).collect();
        let (r, tt) = umeyama_rigid(&src, &dst).unwrap();
        let mut rss = 0.0;
        for i in 0..19 {
            let q = r * src[i].coords + tt;
            for k in 0..3 {
                rss += (q[k] - dst[i][k]).powi(2);
            }
        }
        assert!(rss < 1e-12);
        assert!(matches!(umeyama_rigid(&src, &dst[..18]), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn coarse_identity_and_exact_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let moving = anisotropic_cloud(&mut rng, 400);
        let lm = landmarks_of(&moving.points[..19]);
        let (t, _) = coarse_register(&moving, &moving, &lm, &lm).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(t.translation.norm() < 1e-9);

        let truth = SimilarityTransform {
            scale: 1.3,
            rotation: *Rotation3::from_euler_angles(0.4, -0.9, 2.2).matrix(),
            translation: Vector3::new(12.0, -5.0, 30.0),
            center: moving.centroid().unwrap(),
        };
        let fixed = truth.apply_cloud(&moving);
        let fixed_lm = landmarks_of(&fixed.points[..19]);
        let (t, out) = coarse_register(&moving, &fixed, &lm, &fixed_lm).unwrap();
        assert!((t.scale - 1.3).abs() < 1e-6);
        assert!((t.rotation - truth.rotation).norm() < 1e-6);
        assert!((t.translation - truth.translation).norm() < 1e-6);
        for (a, b) in out.iter().zip(fixed.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
        assert!(mpe(&fixed, &out).unwrap() < mpe(&fixed, &moving).unwrap());
    }
}
