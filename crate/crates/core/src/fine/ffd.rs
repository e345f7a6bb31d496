//! Free-form deformation: a cubic B-spline lattice of control-point
//! displacements over the padded source bounding box, fitted to nearest
//! destination points with a Laplacian smoothness penalty.

use nalgebra::Vector3;

use super::icp::mean_nn_squared;
use super::{check_inputs, has_converged, FineParams, FineResult};
use crate::error::Result;
use crate::geometry::{Point, PointCloud, SpatialIndex};
use crate::transform::Transform;

const INNER_STEPS: usize = 5;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

fn basis(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [
        s * s * s / 6.0,
        (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
        (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
        t * t * t / 6.0,
    ]
}

/// Control lattice with `cells + 1` nodes per axis. Node `i` sits at
/// `lo + (i − 1)·spacing`, so the box `[lo, hi]` spans nodes 1 to
/// `cells − 1` with one cell of padding on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct FfdLattice {
    pub origin: Point,
    pub spacing: Vector3<f64>,
    pub cells: [usize; 3],
    pub displacements: Vec<Vector3<f64>>,
}

impl FfdLattice {
    /// Zero-displacement lattice over the box `[lo, hi]`.
    pub fn new(lo: &Point, hi: &Point, cells: [usize; 3]) -> Self {
        let spacing = Vector3::from_fn(|k, _| {
            let extent = hi[k] - lo[k];
            (if extent > 0.0 { extent } else { 1.0 }) / (cells[k] - 2) as f64
        });
        Self {
            origin: lo - spacing,
            spacing,
            cells,
            displacements: vec![Vector3::zeros(); (cells[0] + 1) * (cells[1] + 1) * (cells[2] + 1)],
        }
    }

    pub fn node_dims(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let d = self.node_dims();
        i + d[0] * (j + d[1] * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Point {
        self.origin + self.spacing.component_mul(&Vector3::new(i as f64, j as f64, k as f64))
    }

    /// The 64 (node, weight) pairs that determine the displacement at `p`.
    pub fn weights(&self, p: &Point) -> Vec<(usize, f64)> {
        let mut cell = [0usize; 3];
        let mut b = [[0.0; 4]; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.spacing[a];
            let i = (u.floor() as isize).clamp(1, self.cells[a] as isize - 2) as usize;
            cell[a] = i - 1;
            b[a] = basis(u - i as f64);
        }
        let mut out = Vec::with_capacity(64);
        for c in 0..4 {
            for bb in 0..4 {
                for a in 0..4 {
                    let w = b[0][a] * b[1][bb] * b[2][c];
                    out.push((self.node_index(cell[0] + a, cell[1] + bb, cell[2] + c), w));
                }
            }
        }
        out
    }

    pub fn displacement(&self, p: &Point) -> Vector3<f64> {
        self.weights(p)
            .iter()
            .fold(Vector3::zeros(), |acc, (n, w)| acc + self.displacements[*n] * *w)
    }

    pub fn apply(&self, p: &Point) -> Point {
        p + self.displacement(p)
    }

    /// Discrete Laplacian of the displacements with spacing-scaled
    /// six-neighbour differences; boundary nodes use the neighbours they have.
    pub fn laplacian(&self, field: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let d = self.node_dims();
        let mut out = vec![Vector3::zeros(); field.len()];
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let c = self.node_index(i, j, k);
                    let idx = [i, j, k];
                    for a in 0..3 {
                        let inv = 1.0 / (self.spacing[a] * self.spacing[a]);
                        for up in [false, true] {
                            let mut n = idx;
                            if up {
                                if n[a] + 1 >= d[a] {
                                    continue;
                                }
                                n[a] += 1;
                            } else {
                                if n[a] == 0 {
                                    continue;
                                }
                                n[a] -= 1;
                            }
                            out[c] += (field[self.node_index(n[0], n[1], n[2])] - field[c]) * inv;
                        }
                    }
                }
            }
        }
        out
    }

    /// `Σ‖L·ΔP‖²` over nodes.
    pub fn roughness(&self) -> f64 {
        self.laplacian(&self.displacements).iter().map(|v| v.norm_squared()).sum()
    }

    /// Absolute row sums of `LᵀL`, a diagonal upper bound of its curvature.
    fn roughness_row_bound(&self) -> Vec<f64> {
        let d = self.node_dims();
        let degree = |i: usize, j: usize, k: usize| {
            let idx = [i, j, k];
            (0..3)
                .map(|a| {
                    let inv = 1.0 / (self.spacing[a] * self.spacing[a]);
                    inv * ((idx[a] > 0) as usize + (idx[a] + 1 < d[a]) as usize) as f64
                })
                .sum::<f64>()
        };
        // |L| has row sums of twice the weighted degree, so a row of |L|·|L|
        // sums to at most 2·degree · 2·max degree
        let max_degree: f64 = (0..3).map(|a| 2.0 / (self.spacing[a] * self.spacing[a])).sum();
        let mut out = vec![0.0; self.displacements.len()];
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let deg = degree(i, j, k);
                    out[self.node_index(i, j, k)] = 4.0 * deg * max_degree;
                }
            }
        }
        out
    }
}

struct Problem<'a> {
    weights: &'a [Vec<(usize, f64)>],
    src: &'a [Point],
    targets: &'a [Point],
    lambda: f64,
}

impl Problem<'_> {
    fn moved(&self, field: &[Vector3<f64>]) -> Vec<Point> {
        self.src
            .iter()
            .zip(self.weights)
            .map(|(p, w)| p + w.iter().fold(Vector3::zeros(), |acc, (n, wt)| acc + field[*n] * *wt))
            .collect()
    }

    fn energy(&self, lattice: &FfdLattice, field: &[Vector3<f64>]) -> f64 {
        let moved = self.moved(field);
        let data: f64 = moved.iter().zip(self.targets).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / moved.len() as f64;
        let rough: f64 = lattice.laplacian(field).iter().map(|v| v.norm_squared()).sum();
        data + self.lambda * rough
    }

    fn gradient(&self, lattice: &FfdLattice, field: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let n = self.src.len() as f64;
        let moved = self.moved(field);
        let lap = lattice.laplacian(field);
        let mut g: Vec<Vector3<f64>> = lattice.laplacian(&lap).into_iter().map(|v| v * (2.0 * self.lambda)).collect();
        for ((m, q), w) in moved.iter().zip(self.targets).zip(self.weights) {
            let r = (m - q) * (2.0 / n);
            for (node, wt) in w {
                g[*node] += r * *wt;
            }
        }
        g
    }
}

fn energy_with_refresh(index: &SpatialIndex, src: &[Point], weights: &[Vec<(usize, f64)>], lattice: &FfdLattice, lambda: f64) -> (f64, Vec<usize>) {
    let moved: Vec<Point> = src
        .iter()
        .zip(weights)
        .map(|(p, w)| p + w.iter().fold(Vector3::zeros(), |acc, (n, wt)| acc + lattice.displacements[*n] * *wt))
        .collect();
    let (data, nn) = mean_nn_squared(index, &moved);
    (data + lambda * lattice.roughness(), nn)
}

/// B-spline free-form deformation on `params.lattice` cells.
pub fn ffd(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    check_inputs(src, dst, params)?;
    let (lo, hi) = src.bounds().unwrap();
    let mut lattice = FfdLattice::new(&lo, &hi, params.lattice);
    let weights: Vec<Vec<(usize, f64)>> = src.iter().map(|p| lattice.weights(p)).collect();
    let index = SpatialIndex::build(&dst.points)?;

    // diagonal majoriser of the energy curvature
    let n = src.len() as f64;
    let mut diag: Vec<f64> = lattice.roughness_row_bound().into_iter().map(|v| 2.0 * params.lambda * v).collect();
    for w in &weights {
        for (node, wt) in w {
            diag[*node] += 2.0 / n * wt;
        }
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for it in 0..params.max_iter {
        let (e, nn) = energy_with_refresh(&index, &src.points, &weights, &lattice, params.lambda);
        let previous = trace.last().copied();
        trace.push(e);
        if e == 0.0 || previous.is_some_and(|p| has_converged(p, e, params.tol)) {
            converged = true;
            break;
        }
        if it + 1 == params.max_iter {
            break;
        }
        let targets: Vec<Point> = nn.iter().map(|&i| dst.points[i]).collect();
        let problem = Problem {
            weights: &weights,
            src: &src.points,
            targets: &targets,
            lambda: params.lambda,
        };
        let mut field = lattice.displacements.clone();
        let mut energy = problem.energy(&lattice, &field);
        for _ in 0..INNER_STEPS {
            let g = problem.gradient(&lattice, &field);
            let direction: Vec<Vector3<f64>> = g.iter().zip(&diag).map(|(gc, h)| -gc / *h).collect();
            let slope: f64 = g.iter().zip(&direction).map(|(a, b)| a.dot(b)).sum();
            if !(slope < 0.0) {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<Vector3<f64>> = field.iter().zip(&direction).map(|(f, d)| f + d * alpha).collect();
                let e_trial = problem.energy(&lattice, &trial);
                if e_trial <= energy + ARMIJO * alpha * slope {
                    accepted = Some((trial, e_trial));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, e_trial)) => {
                    field = trial;
                    energy = e_trial;
                }
                None => break,
            }
        }
        lattice.displacements = field;
    }
    let offsets = weights
        .iter()
        .map(|w| w.iter().fold(Vector3::zeros(), |acc, (node, wt)| acc + lattice.displacements[*node] * *wt));
    Ok(FineResult {
        algo: "ffd".into(),
        params: params.clone(),
        transform: Transform::Nonrigid {
            rotation: nalgebra::Matrix3::identity(),
            translation: Vector3::zeros(),
            offsets: offsets.collect(),
        },
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        sigma2: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{bend, generate, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_is_a_partition_of_unity() {
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!((basis(t).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_displacement_is_identity() {
        let lattice = FfdLattice::new(&Point::new(-10.0, -5.0, 0.0), &Point::new(10.0, 5.0, 30.0), [6, 6, 6]);
        for p in [Point::new(0.0, 0.0, 0.0), Point::new(-10.0, 5.0, 30.0), Point::new(3.3, -1.2, 17.0)] {
            assert_eq!(lattice.apply(&p), p);
        }
    }

    #[test]
    fn displaced_node_moves_only_its_support() {
        let lo = Point::new(-20.0, -20.0, -20.0);
        let hi = Point::new(20.0, 20.0, 20.0);
        let mut lattice = FfdLattice::new(&lo, &hi, [6, 6, 6]);
        let node = [3, 2, 4];
        let c = lattice.node_position(node[0], node[1], node[2]);
        let id = lattice.node_index(node[0], node[1], node[2]);
        lattice.displacements[id] = Vector3::new(1.0, -2.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut inside, mut outside) = (0, 0);
        for _ in 0..5000 {
            let p = Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let in_support = (0..3).all(|a| ((p[a] - c[a]) / lattice.spacing[a]).abs() < 2.0);
            let moved = (lattice.apply(&p) - p).norm();
            if in_support {
                inside += 1;
            } else {
                outside += 1;
                assert!(moved <= 1e-12, "{p} moved {moved}");
            }
        }
        assert!(inside > 0 && outside > 0);
        // the node's own position moves by the largest basis product, (2/3)³
        let at_node = lattice.apply(&c) - c;
        assert!((at_node - Vector3::new(1.0, -2.0, 0.5) * (8.0 / 27.0)).norm() < 1e-12);
    }

    #[test]
    fn laplacian_is_symmetric() {
        let mut lattice = FfdLattice::new(&Point::origin(), &Point::new(10.0, 20.0, 30.0), [4, 5, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = lattice.displacements.len();
        let a: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let b: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let la = lattice.laplacian(&a);
        let lb = lattice.laplacian(&b);
        let ab: f64 = la.iter().zip(&b).map(|(x, y)| x.dot(y)).sum();
        let ba: f64 = lb.iter().zip(&a).map(|(x, y)| x.dot(y)).sum();
        assert!((ab - ba).abs() < 1e-9 * ab.abs().max(1.0));
        lattice.displacements = vec![Vector3::new(1.0, 2.0, 3.0); n];
        assert!(lattice.roughness() < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src: Vec<Point> = (0..60).map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        let targets: Vec<Point> = src.iter().map(|p| p + Vector3::new(0.3, -0.2, 0.1)).collect();
        let lattice = FfdLattice::new(&Point::origin(), &Point::new(10.0, 10.0, 10.0), [4, 4, 4]);
        let weights: Vec<_> = src.iter().map(|p| lattice.weights(p)).collect();
        let problem = Problem {
            weights: &weights,
            src: &src,
            targets: &targets,
            lambda: 0.5,
        };
        let field: Vec<Vector3<f64>> = (0..lattice.displacements.len()).map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5))).collect();
        let g = problem.gradient(&lattice, &field);
        for node in [0, 17, 62, 100] {
            for a in 0..3 {
                let h = 1e-6;
                let mut up = field.clone();
                up[node][a] += h;
                let mut down = field.clone();
                down[node][a] -= h;
                let fd = (problem.energy(&lattice, &up) - problem.energy(&lattice, &down)) / (2.0 * h);
                assert!((fd - g[node][a]).abs() < 1e-6 * fd.abs().max(1.0), "{fd} {}", g[node][a]);
            }
        }
    }

    #[test]
    fn energy_trace_is_non_increasing_on_bent_phantom() {
        let dst = generate(&PhantomSpec::default()).unwrap().lv;
        let src = dst.map(|p| bend(p, 6.0, 140.0));
        let r = ffd(&src, &dst, &FineParams::default()).unwrap();
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{w:?}");
        }
        assert!(r.objective_trace.last().unwrap() < &(0.5 * r.objective_trace[0]));
    }
}
