//! Seeded k-means with k-means++ initialisation and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;

const RESTARTS: usize = 3;
const MAX_LLOYD: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Point>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

fn nearest_centroid(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    centroids
}

fn lloyd(points: &[Point], mut centroids: Vec<Point>) -> KMeans {
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_LLOYD {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let (k, _) = nearest_centroid(p, &centroids);
            if *label != k {
                *label = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![nalgebra::Vector3::zeros(); centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (label, p) in labels.iter().zip(points) {
            sums[*label] += p.coords;
            counts[*label] += 1;
        }
        for k in 0..centroids.len() {
            if counts[k] > 0 {
                centroids[k] = Point::from(sums[k] / counts[k] as f64);
            }
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(l, p)| (p - centroids[*l]).norm_squared())
        .sum();
    KMeans {
        centroids,
        labels,
        inertia,
    }
}

/// Partitions `points` into `k` clusters; the restart with the lowest
/// inertia wins, earliest on ties.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidParameter("cluster count must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}
