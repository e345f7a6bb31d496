//! Iterative closest point with a rigid or similarity closed-form step.

use super::{check_inputs, has_converged, rigid, FineParams, FineResult};
use crate::error::Result;
use crate::geometry::{Point, PointCloud, SpatialIndex};
use crate::transform::Transform;
use crate::umeyama::{umeyama, Alignment};

/// Mean squared distance from each transformed source point to its nearest
/// destination point.
pub fn icp_objective(src: &PointCloud, dst: &PointCloud, transform: &Transform) -> Result<f64> {
    let index = SpatialIndex::build(&dst.points)?;
    let moved = transform.apply_to_source(src)?;
    Ok(mean_nn_squared(&index, &moved.points).0)
}

/// Nearest-destination indices and their mean squared distance.
pub(crate) fn mean_nn_squared(index: &SpatialIndex, points: &[Point]) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let nn = points
        .iter()
        .map(|p| {
            let (i, d) = index.nearest(p);
            total += d * d;
            i
        })
        .collect();
    (total / points.len() as f64, nn)
}

/// Alternates nearest-neighbour correspondence with a closed-form fit of
/// the original source onto the matched points.
pub(crate) fn icp_alignment(
    src: &PointCloud,
    dst: &PointCloud,
    params: &FineParams,
    with_scale: bool,
) -> Result<(Alignment, Vec<f64>, bool)> {
    check_inputs(src, dst, params)?;
    let index = SpatialIndex::build(&dst.points)?;
    let mut current = Alignment::identity();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for k in 0..params.max_iter {
        let moved: Vec<Point> = src.iter().map(|p| current.apply(p)).collect();
        let (e, nn) = mean_nn_squared(&index, &moved);
        let previous = trace.last().copied();
        trace.push(e);
        if e == 0.0 || previous.is_some_and(|p| has_converged(p, e, params.tol)) {
            converged = true;
            break;
        }
        if k + 1 == params.max_iter {
            break;
        }
        let matched: Vec<Point> = nn.iter().map(|&i| dst.points[i]).collect();
        current = umeyama(&src.points, &matched, None, with_scale)?;
    }
    Ok((current, trace, converged))
}

/// Rigid ICP.
pub fn icp(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    let (a, trace, converged) = icp_alignment(src, dst, params, false)?;
    Ok(FineResult {
        algo: "icp".into(),
        params: params.clone(),
        transform: rigid(a.rotation, a.translation),
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        sigma2: None,
    })
}

/// ICP with an isotropic scale in each closed-form step.
pub fn sicp(src: &PointCloud, dst: &PointCloud, params: &FineParams) -> Result<FineResult> {
    let (a, trace, converged) = icp_alignment(src, dst, params, true)?;
    Ok(FineResult {
        algo: "sicp".into(),
        params: params.clone(),
        transform: Transform::Similarity {
            scale: a.scale,
            rotation: a.rotation,
            translation: a.translation,
        },
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        sigma2: None,
    })
}
