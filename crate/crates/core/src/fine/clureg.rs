//! Clustered registration: k-means partitions the source, points blend one
//! rigid transform per cluster with normalised Gaussian weights of their
//! distance to each centroid, and each cluster transform is fitted to the
//! nearest-neighbour correspondences under that cluster's weights.

use nalgebra::{Matrix3, Vector3};

use super::icp::mean_nn_squared;
use super::kmeans::kmeans;
use super::{check_inputs, has_converged, FineParams, FineResult};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, SpatialIndex};
use crate::transform::Transform;
use crate::umeyama::umeyama;

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Blending weights `w[i][k]` of each point for each centroid: Gaussian in
/// the centroid distance with bandwidth equal to the median inter-centroid
/// distance, normalised to sum to one per point.
pub fn blend_weights(points: &[Point], centroids: &[Point]) -> Vec<Vec<f64>> {
    let k = centroids.len();
    let mut pairwise = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            pairwise.push((centroids[a] - centroids[b]).norm());
        }
    }
    let h = if pairwise.is_empty() { 1.0 } else { median(pairwise) };
    let h2 = if h > 0.0 { h * h } else { 1.0 };
    points
        .iter()
        .map(|p| {
            let logs: Vec<f64> = centroids.iter().map(|c| -(p - c).norm_squared() / (2.0 * h2)).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|r| r / total).collect()
        })
        .collect()
}

fn blend(points: &[Point], weights: &[Vec<f64>], fits: &[(Matrix3<f64>, Vector3<f64>)]) -> Vec<Point> {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            let mut q = Vector3::zeros();
            for (wk, (r, t)) in w.iter().zip(fits) {
                q += (r * p.coords + t) * *wk;
            }
            Point::from(q)
        })
        .collect()
}

/// Piecewise-rigid registration over `params.clusters` source clusters.
pub fn clureg(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    check_inputs(src, dst, params)?;
    let k = params.clusters;
    if k > src.len() {
        return Err(Error::InvalidParameter(format!("{k} clusters for {} source points", src.len())));
    }
    let km = kmeans(&src.points, k, params.seed)?;
    let weights = blend_weights(&src.points, &km.centroids);
    let columns: Vec<Vec<f64>> = (0..k).map(|c| weights.iter().map(|w| w[c]).collect()).collect();

    let index = SpatialIndex::build(&dst.points)?;
    let mut fits = vec![(Matrix3::identity(), Vector3::zeros()); k];
    let mut moved = src.points.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for it in 0..params.max_iter {
        moved = blend(&src.points, &weights, &fits);
        let (e, nn) = mean_nn_squared(&index, &moved);
        let previous = trace.last().copied();
        trace.push(e);
        if e == 0.0 || previous.is_some_and(|p| has_converged(p, e, params.tol)) {
            converged = true;
            break;
        }
        if it + 1 == params.max_iter {
            break;
        }
        let matched: Vec<Point> = nn.iter().map(|&i| dst.points[i]).collect();
        let mut global = None;
        for c in 0..k {
            fits[c] = match umeyama(&src.points, &matched, Some(&columns[c]), false) {
                Ok(a) => (a.rotation, a.translation),
                Err(_) => *global.get_or_insert_with(|| {
                    umeyama(&src.points, &matched, None, false)
                        .map(|a| (a.rotation, a.translation))
                        .unwrap_or(fits[c])
                }),
            };
        }
    }
    Ok(FineResult {
        algo: "clureg".into(),
        params: params.clone(),
        transform: Transform::Nonrigid {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            offsets: moved.iter().zip(&src.points).map(|(q, p)| q - p).collect(),
        },
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        sigma2: None,
    })
}
