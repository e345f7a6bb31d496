use nalgebra::Matrix3;

use super::{nn_offset_interpolate, world_grid, DeformationField, SplineVolume, VoxelVolume};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::transform::Transform;

/// Samples `moving` on the grid of `target`; `source_of` maps each target
/// world point to the moving-space location to read.
pub fn resample_with(
    moving: &VoxelVolume,
    target: &VoxelVolume,
    source_of: impl Fn(&Point) -> Point,
) -> Result<VoxelVolume> {
    let spline = SplineVolume::new(moving)?;
    let data = world_grid(target)
        .map(|(_, x)| spline.eval(&source_of(&x)))
        .collect();
    target.with_data(data)
}

/// Resamples `moving` onto the grid of `target` under the point map
/// `transform` (moving space → target space). Nonrigid transforms need the
/// deformation field of their offsets; the inverse is `p = y − A⁻¹·δ(y)` with
/// `y = A⁻¹(x − t)` and `δ` the nearest-sample offset.
pub fn resample(
    moving: &VoxelVolume,
    target: &VoxelVolume,
    transform: &Transform,
    field: Option<&DeformationField>,
) -> Result<VoxelVolume> {
    let (a, t) = transform.linear_part();
    let a_inv = invert(&a)?;
    match (transform, field) {
        (Transform::Nonrigid { .. }, None) => Err(Error::EmptyField),
        (Transform::Nonrigid { .. }, Some(field)) => resample_with(moving, target, |x| {
            let y = Point::from(a_inv * (x.coords - t));
            y - a_inv * nn_offset_interpolate(field, &y)
        }),
        _ => resample_with(moving, target, |x| Point::from(a_inv * (x.coords - t))),
    }
}

fn invert(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    if a.determinant().abs() <= 1e-12 * scale.powi(3) {
        return Err(Error::SingularTransform);
    }
    a.try_inverse().ok_or(Error::SingularTransform)
}

/// Both volumes on one grid plus a 0.5/0.5 blend of their min-max normalized
/// intensities.
#[derive(Debug, Clone)]
pub struct Fused {
    pub anatomical: VoxelVolume,
    pub functional: VoxelVolume,
    pub preview: VoxelVolume,
}

fn normalized(v: &VoxelVolume) -> Vec<f64> {
    let (lo, hi) = v.min_max();
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.data.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

pub fn fuse(anatomical: &VoxelVolume, functional_resampled: &VoxelVolume) -> Result<Fused> {
    if !anatomical.same_geometry(functional_resampled) {
        return Err(Error::GridMismatch);
    }
    let a = normalized(anatomical);
    let f = normalized(functional_resampled);
    let preview = a.iter().zip(&f).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
    Ok(Fused {
        anatomical: anatomical.clone(),
        functional: functional_resampled.clone(),
        preview: anatomical.with_data(preview)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(seed: u64, dims: [usize; 3]) -> VoxelVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        VoxelVolume::new(Point::new(-5.0, 3.0, 0.0), [1.5, 1.0, 2.0], dims, (0..n).map(|_| rng.random_range(0.0..100.0)).collect()).unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let v = random_volume(1, [9, 8, 7]);
        let out = resample(&v, &v, &Transform::identity(), None).unwrap();
        for (a, b) in out.data.iter().zip(&v.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn integer_voxel_shift() {
        let v = random_volume(2, [10, 6, 5]);
        let shift = Transform::Rigid {
            rotation: Matrix3::identity(),
            translation: Vector3::new(2.0 * v.spacing[0], 0.0, 0.0),
        };
        let out = resample(&v, &v, &shift, None).unwrap();
        for k in 0..5 {
            for j in 0..6 {
                for i in 0..10 {
                    let got = out.get(i, j, k);
                    if i < 2 {
                        assert_eq!(got, 0.0);
                    } else {
                        assert!((got - v.get(i - 2, j, k)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_of_smooth_blob_matches_analytic() {
        let blob = |c: Point| move |p: &Point| 100.0 * (-((p - c).norm_squared()) / (2.0 * 36.0)).exp();
        let c = Point::new(6.0, -3.0, 0.0);
        let v = VoxelVolume::from_fn(Point::new(-16.0, -16.0, -8.0), [1.0; 3], [33, 33, 17], blob(c)).unwrap();
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let t = Transform::Rigid {
            rotation: *rz.matrix(),
            translation: Vector3::zeros(),
        };
        let out = resample(&v, &v, &t, None).unwrap();
        let expected = VoxelVolume::from_fn(v.origin, v.spacing, v.dims, blob(rz * c)).unwrap();
        let max_err = out.data.iter().zip(&expected.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err < 2.0, "{max_err}");
    }

    #[test]
    fn translation_roundtrip_interior() {
        let f = |p: &Point| 50.0 + 40.0 * (p.x / 4.0).sin() * (p.y / 5.0).cos() + p.z;
        let v = VoxelVolume::from_fn(Point::origin(), [1.0; 3], [24, 24, 12], f).unwrap();
        let fwd = Transform::Rigid {
            rotation: Matrix3::identity(),
            translation: Vector3::new(1.3, -0.7, 0.4),
        };
        let back = Transform::Rigid {
            rotation: Matrix3::identity(),
            translation: Vector3::new(-1.3, 0.7, -0.4),
        };
        let once = resample(&v, &v, &fwd, None).unwrap();
        let twice = resample(&once, &v, &back, None).unwrap();
        let (lo, hi) = v.min_max();
        for n in 0..v.len() {
            let [i, j, k] = v.index3(n);
            let interior = i >= 4 && j >= 4 && k >= 4 && i + 4 < 24 && j + 4 < 24 && k + 4 < 12;
            if interior {
                assert!((twice.data[n] - v.data[n]).abs() < 0.01 * (hi - lo));
            }
        }
    }

    #[test]
    fn singular_transform_is_rejected() {
        let v = random_volume(3, [3, 3, 3]);
        let t = Transform::Affine {
            matrix: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
            translation: Vector3::zeros(),
        };
        assert!(matches!(resample(&v, &v, &t, None), Err(Error::SingularTransform)));
    }

    #[test]
    fn nonrigid_uses_offset_subtraction() {
        let f = |p: &Point| p.x + 2.0 * p.y;
        let v = VoxelVolume::from_fn(Point::origin(), [1.0; 3], [10, 10, 4], f).unwrap();
        let src = vec![Point::new(0.0, 0.0, 0.0)];
        let d = Vector3::new(1.0, 0.0, 0.0);
        let field = DeformationField::new(&src, vec![d]).unwrap();
        let t = Transform::Nonrigid {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            offsets: vec![d],
        };
        let out = resample(&v, &v, &t, Some(&field)).unwrap();
        // every grid point reads one voxel to the left
        assert!((out.get(5, 3, 1) - f(&Point::new(4.0, 3.0, 1.0))).abs() < 1e-9);
        assert_eq!(out.get(0, 3, 1), 0.0);
        assert!(matches!(resample(&v, &v, &t, None), Err(Error::EmptyField)));
    }

    #[test]
    fn fuse_examples() {
        let a = random_volume(4, [4, 4, 4]);
        let zero = a.with_data(vec![0.0; a.len()]).unwrap();
        let fz = fuse(&a, &zero).unwrap();
        let na = normalized(&a);
        for (p, x) in fz.preview.data.iter().zip(&na) {
            assert!((p - 0.5 * x).abs() < 1e-15);
        }
        let same = fuse(&a, &a).unwrap();
        for (p, x) in same.preview.data.iter().zip(&na) {
            assert!((p - x).abs() < 1e-15);
            assert!((0.0..=1.0).contains(p));
        }
        let other = VoxelVolume::zeros(Point::origin(), [1.0; 3], [4, 4, 3]).unwrap();
        assert!(matches!(fuse(&a, &other), Err(Error::GridMismatch)));
    }
}
