//! Interpolating tricubic B-spline with not-a-knot end conditions.
//!
//! Each axis with `n` samples gets `n + 2` coefficients `c₋₁ … cₙ` satisfying
//! `(cᵢ₋₁ + 4cᵢ + cᵢ₊₁)/6 = fᵢ` plus two end conditions. The prefilter is a
//! dense `(n+2)×n` matrix per axis, applied separably.

use nalgebra::{DMatrix, DVector};

use super::VoxelVolume;
use crate::error::{Error, Result};
use crate::geometry::Point;

const BOUNDS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SplineVolume {
    geometry: VoxelVolume,
    cdims: [usize; 3],
    coeffs: Vec<f64>,
}

/// Rows of the end conditions for an axis of `n` samples, as coefficients
/// over `c₋₁ … cₙ`.
fn end_conditions(n: usize) -> [Vec<f64>; 2] {
    let m = n + 2;
    let row = |start: usize, stencil: &[f64]| {
        let mut r = vec![0.0; m];
        r[start..start + stencil.len()].copy_from_slice(stencil);
        r
    };
    match n {
        1 => [row(0, &[1.0, -1.0]), row(1, &[1.0, -1.0])],
        2 => [row(0, &[1.0, -2.0, 1.0]), row(1, &[1.0, -2.0, 1.0])],
        3 => [row(0, &[-1.0, 3.0, -3.0, 1.0]), row(1, &[-1.0, 3.0, -3.0, 1.0])],
        _ => {
            // continuity of the third derivative at the first and last interior knots
            let d4 = [1.0, -4.0, 6.0, -4.0, 1.0];
            [row(0, &d4), row(m - 5, &d4)]
        }
    }
}

/// `(n+2)×n` matrix mapping samples to spline coefficients.
fn prefilter_matrix(n: usize) -> Result<DMatrix<f64>> {
    let m = n + 2;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        a[(i, i)] = 1.0 / 6.0;
        a[(i, i + 1)] = 4.0 / 6.0;
        a[(i, i + 2)] = 1.0 / 6.0;
    }
    for (r, cond) in end_conditions(n).into_iter().enumerate() {
        for (j, v) in cond.into_iter().enumerate() {
            a[(n + r, j)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(m, n);
    for i in 0..n {
        rhs[(i, i)] = 1.0;
    }
    a.lu().solve(&rhs).ok_or(Error::SingularSystem)
}

/// Cubic B-spline weights for `c₋₁ … c₂` at fractional position `t`.
fn weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

impl SplineVolume {
    pub fn new(vol: &VoxelVolume) -> Result<Self> {
        vol.validate()?;
        let [nx, ny, nz] = vol.dims;
        let mut data = vol.data.clone();
        let mut dims = vol.dims;
        for axis in 0..3 {
            let n = dims[axis];
            let filt = prefilter_matrix(n)?;
            let mut out_dims = dims;
            out_dims[axis] = n + 2;
            let mut out = vec![0.0; out_dims.iter().product()];
            let stride_in = match axis {
                0 => 1,
                1 => dims[0],
                _ => dims[0] * dims[1],
            };
            let stride_out = match axis {
                0 => 1,
                1 => out_dims[0],
                _ => out_dims[0] * out_dims[1],
            };
            // enumerate the lines along `axis`
            let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
            let mut line = DVector::<f64>::zeros(n);
            for b in 0..dims[others[1]] {
                for a in 0..dims[others[0]] {
                    let mut base_in = [0usize; 3];
                    base_in[others[0]] = a;
                    base_in[others[1]] = b;
                    let start_in = base_in[0] + dims[0] * (base_in[1] + dims[1] * base_in[2]);
                    let start_out = base_in[0] + out_dims[0] * (base_in[1] + out_dims[1] * base_in[2]);
                    for i in 0..n {
                        line[i] = data[start_in + i * stride_in];
                    }
                    let c = &filt * &line;
                    for i in 0..n + 2 {
                        out[start_out + i * stride_out] = c[i];
                    }
                }
            }
            data = out;
            dims = out_dims;
        }
        debug_assert_eq!(dims, [nx + 2, ny + 2, nz + 2]);
        Ok(Self {
            geometry: VoxelVolume {
                data: Vec::new(),
                ..vol.clone()
            },
            cdims: dims,
            coeffs: data,
        })
    }

    /// Interpolated value at a world point; 0 outside the sampled grid.
    pub fn eval(&self, p: &Point) -> f64 {
        let u = self.geometry.continuous_index(p);
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..3 {
            let n = self.geometry.dims[a];
            let last = (n - 1) as f64;
            if !(u[a] >= -BOUNDS_TOL && u[a] <= last + BOUNDS_TOL) {
                return 0.0;
            }
            let x = u[a].clamp(0.0, last);
            let i = if n == 1 { 0 } else { (x.floor() as usize).min(n - 2) };
            base[a] = i;
            w[a] = weights(x - i as f64);
        }
        let mut sum = 0.0;
        for dz in 0..4 {
            let kz = base[2] + dz;
            if w[2][dz] == 0.0 || kz >= self.cdims[2] {
                continue;
            }
            for dy in 0..4 {
                let ky = base[1] + dy;
                if w[1][dy] == 0.0 || ky >= self.cdims[1] {
                    continue;
                }
                let wyz = w[2][dz] * w[1][dy];
                let row = self.cdims[0] * (ky + self.cdims[1] * kz);
                for dx in 0..4 {
                    let kx = base[0] + dx;
                    if w[0][dx] == 0.0 || kx >= self.cdims[0] {
                        continue;
                    }
                    sum += wyz * w[0][dx] * self.coeffs[row + kx];
                }
            }
        }
        sum
    }
}
