//! Closed-form least-squares alignment of corresponding point sets
//! (Kabsch/Umeyama), optionally weighted and optionally with isotropic scale.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Result of a closed-form fit: `dst ≈ scale · rotation · src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords * self.scale + self.translation)
    }
}

/// Weighted Umeyama fit. `weights = None` means uniform.
pub fn umeyama(
    src: &[Point],
    dst: &[Point],
    weights: Option<&[f64]>,
    with_scale: bool,
) -> Result<Alignment> {
    if src.len() != dst.len() {
        return Err(Error::CountMismatch {
            left: src.len(),
            right: dst.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(Error::CountMismatch {
                left: src.len(),
                right: w.len(),
            });
        }
    }
    if src.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..src.len()).map(weight).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateConfiguration(0));
    }

    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for i in 0..src.len() {
        mu_s += src[i].coords * weight(i);
        mu_d += dst[i].coords * weight(i);
    }
    mu_s /= total;
    mu_d /= total;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for i in 0..src.len() {
        let w = weight(i);
        let ds = src[i].coords - mu_s;
        let dd = dst[i].coords - mu_d;
        cov += dd * ds.transpose() * w;
        var_s += ds.norm_squared() * w;
    }
    cov /= total;
    var_s /= total;

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SingularSystem),
    };
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let rank = sorted
        .iter()
        .filter(|&&s| s > 1e-12 * sorted[0].max(f64::MIN_POSITIVE))
        .count();
    if sorted[0] <= 0.0 || rank < 2 {
        return Err(Error::DegenerateConfiguration(if sorted[0] <= 0.0 { 0 } else { rank }));
    }

    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // flip the direction paired with the smallest singular value
        let mut smallest = 0;
        for k in 1..3 {
            if sv[k] < sv[smallest] {
                smallest = k;
            }
        }
        s[(smallest, smallest)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        if !(var_s > 0.0) {
            return Err(Error::DegenerateConfiguration(0));
        }
        (0..3).map(|k| sv[k] * s[(k, k)]).sum::<f64>() / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Alignment {
        scale,
        rotation,
        translation,
    })
}

/// Sum of squared residuals `Σ‖s·R·pᵢ + t − qᵢ‖²`.
pub fn residual_sum_squares(a: &Alignment, src: &[Point], dst: &[Point]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(p, q)| (a.apply(p) - q).norm_squared())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)))
            .collect()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-3.1..3.1))
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(&mut rng, 19);
        let a = umeyama(&pts, &pts, None, false).unwrap();
        assert!((a.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(a.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_quarter_turn_about_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = cloud(&mut rng, 10);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let t = Vector3::new(1.0, 2.0, 3.0);
        let dst: Vec<Point> = src.iter().map(|p| rz * p + t).collect();
        let a = umeyama(&src, &dst, None, false).unwrap();
        assert!((a.rotation - rz.matrix()).norm() < 1e-9);
        assert!((a.translation - t).norm() < 1e-9);
    }

    #[test]
    fn noisy_fit_beats_random_rigid_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = cloud(&mut rng, 19);
        let rot = random_rotation(&mut rng);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let dst: Vec<Point> = src
            .iter()
            .map(|p| rot * p + Vector3::new(5.0, -3.0, 2.0) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let best = umeyama(&src, &dst, None, false).unwrap();
        let best_rss = residual_sum_squares(&best, &src, &dst);
        for _ in 0..1000 {
            // random rigid transforms, half of them perturbations of the optimum
            let candidate = if rng.random_bool(0.5) {
                Alignment {
                    scale: 1.0,
                    rotation: random_rotation(&mut rng).into_inner(),
                    translation: Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
                }
            } else {
                let small = Rotation3::from_axis_angle(&Vector3::x_axis(), rng.random_range(-0.05..0.05));
                Alignment {
                    scale: 1.0,
                    rotation: small.matrix() * best.rotation,
                    translation: best.translation + Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
                }
            };
            assert!(best_rss <= residual_sum_squares(&candidate, &src, &dst) + 1e-9);
        }
    }

    #[test]
    fn with_scale_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let src = cloud(&mut rng, 19);
            let rot = random_rotation(&mut rng);
            let s = rng.random_range(0.5..2.0);
            let t = Vector3::from_fn(|_, _| rng.random_range(-30.0..30.0));
            let dst: Vec<Point> = src.iter().map(|p| Point::from(rot * p.coords * s + t)).collect();
            let a = umeyama(&src, &dst, None, true).unwrap();
            assert!((a.scale - s).abs() < 1e-9);
            assert!(residual_sum_squares(&a, &src, &dst) < 1e-12);
            assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn planar_sets_are_handled_without_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<Point> = (0..19)
            .map(|_| Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0))
            .collect();
        let rot = random_rotation(&mut rng);
        let dst: Vec<Point> = src.iter().map(|p| rot * p).collect();
        let a = umeyama(&src, &dst, None, false).unwrap();
        assert!((a.rotation - rot.matrix()).norm() < 1e-9);
    }

    #[test]
    fn errors() {
        let p = vec![Point::origin(); 3];
        assert!(matches!(
            umeyama(&p, &p[..2], None, false),
            Err(Error::CountMismatch { .. })
        ));
        let collinear: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama(&collinear, &collinear, None, false),
            Err(Error::DegenerateConfiguration(1))
        ));
    }
}
