//! Registration quality metrics: mean point distance (MPE), apex angle (AE),
//! mean groove distance (MGE), groove-plane center distance (GCE) and Dice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Plane, Point, PointCloud, SpatialIndex};
use crate::landmarks::LandmarkSet;
use crate::volume::VoxelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpe_mm: f64,
    pub ae_deg: f64,
    pub mge_mm: f64,
    pub gce_mm: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "mpe,ae,mge,gce";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.mpe_mm, self.ae_deg, self.mge_mm, self.gce_mm)
    }
}

/// Mean distance from each fixed point to its nearest registered point.
pub fn mpe(fixed: &PointCloud, registered: &PointCloud) -> Result<f64> {
    if fixed.is_empty() || registered.is_empty() {
        return Err(Error::EmptyInput);
    }
    let index = SpatialIndex::build(&registered.points)?;
    let total: f64 = fixed.iter().map(|p| index.nearest(p).1).sum();
    Ok(total / fixed.len() as f64)
}

/// Angle between `apex_fixed − center` and `apex_moved − center`, degrees.
/// Both vectors are anchored at the fixed-cloud center.
pub fn apex_angle(apex_fixed: &Point, apex_moved: &Point, center_fixed: &Point) -> Result<f64> {
    let a = apex_fixed - center_fixed;
    let b = apex_moved - center_fixed;
    let (na, nb) = (a.norm(), b.norm());
    if na < 1e-9 || nb < 1e-9 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Index-corresponding mean Euclidean distance.
pub fn mge(groove_fixed: &[Point], groove_moved: &[Point]) -> Result<f64> {
    if groove_fixed.len() != groove_moved.len() {
        return Err(Error::CountMismatch {
            left: groove_fixed.len(),
            right: groove_moved.len(),
        });
    }
    if groove_fixed.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = groove_fixed
        .iter()
        .zip(groove_moved)
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(total / groove_fixed.len() as f64)
}

pub fn gce(plane_fixed: &Plane, plane_moved: &Plane) -> f64 {
    (plane_fixed.center - plane_moved.center).norm()
}

/// All four registration metrics. The apex angle is anchored at the fixed
/// cloud's centroid.
pub fn evaluate(
    fixed: &PointCloud,
    registered: &PointCloud,
    fixed_lm: &LandmarkSet,
    moved_lm: &LandmarkSet,
) -> Result<MetricReport> {
    let center = fixed.centroid().ok_or(Error::EmptyInput)?;
    Ok(MetricReport {
        mpe_mm: mpe(fixed, registered)?,
        ae_deg: apex_angle(&fixed_lm.apex, &moved_lm.apex, &center)?,
        mge_mm: mge(&fixed_lm.groove, &moved_lm.groove)?,
        gce_mm: gce(&fixed_lm.plane, &moved_lm.plane),
    })
}

/// Dice overlap of two binary masks (nonzero = foreground). Two empty masks
/// score 1.0.
pub fn dice(mask_a: &VoxelVolume, mask_b: &VoxelVolume) -> Result<f64> {
    if !mask_a.same_geometry(mask_b) {
        return Err(Error::GridMismatch);
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (a, b) in mask_a.data.iter().zip(&mask_b.data) {
        let (fa, fb) = (*a != 0.0, *b != 0.0);
        na += fa as usize;
        nb += fb as usize;
        inter += (fa && fb) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
