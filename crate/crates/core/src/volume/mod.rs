//! Voxel volumes, deformation fields, spline resampling and fusion output.

mod resample;
mod spline;

pub use resample::{fuse, resample, resample_with, Fused};
pub use spline::SplineVolume;

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, SpatialIndex};

/// Scalar volume on a regular axis-aligned grid, x-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub origin: Point,
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl VoxelVolume {
    pub fn new(origin: Point, spacing: [f64; 3], dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let v = Self {
            origin,
            spacing,
            dims,
            data,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn zeros(origin: Point, spacing: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        Self::new(origin, spacing, dims, vec![0.0; dims.iter().product()])
    }

    /// Same geometry filled by `f(world point)`.
    pub fn from_fn(origin: Point, spacing: [f64; 3], dims: [usize; 3], f: impl Fn(&Point) -> f64) -> Result<Self> {
        let mut v = Self::zeros(origin, spacing, dims)?;
        for (i, p) in world_grid(&v).collect::<Vec<_>>() {
            v.data[i] = f(&p);
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter("volume dims must be positive".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("volume spacing must be positive".into()));
        }
        let n: usize = self.dims.iter().product();
        if self.data.len() != n {
            return Err(Error::CountMismatch {
                left: n,
                right: self.data.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_geometry(&self, other: &VoxelVolume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    /// Copy of the geometry with a new data array.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.origin, self.spacing, self.dims, data)
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn index3(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.linear_index(i, j, k)]
    }

    pub fn world(&self, index: [usize; 3]) -> Point {
        Point::new(
            self.origin.x + index[0] as f64 * self.spacing[0],
            self.origin.y + index[1] as f64 * self.spacing[1],
            self.origin.z + index[2] as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a world point.
    pub fn continuous_index(&self, p: &Point) -> Vector3<f64> {
        Vector3::new(
            (p.x - self.origin.x) / self.spacing[0],
            (p.y - self.origin.y) / self.spacing[1],
            (p.z - self.origin.z) / self.spacing[2],
        )
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Writes `<stem>.json` and `<stem>.raw` (little-endian f32).
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        let header = VolumeHeader {
            dims: self.dims,
            spacing_mm: self.spacing,
            origin_mm: self.origin.coords.into(),
            dtype: "f32".into(),
            order: "x-fastest".into(),
        };
        fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&header)?)?;
        let mut raw = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            raw.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(dir.join(format!("{name}.raw")), raw)?;
        Ok(())
    }

    /// Reads a volume from its JSON header path; the payload is the sibling
    /// `.raw` file.
    pub fn read(header_path: &Path) -> Result<Self> {
        let header: VolumeHeader = serde_json::from_str(&crate::io::read_text(header_path)?)?;
        if header.dtype != "f32" || header.order != "x-fastest" {
            return Err(Error::InvalidParameter(format!(
                "unsupported volume layout {}/{}",
                header.dtype, header.order
            )));
        }
        let raw = fs::read(header_path.with_extension("raw"))?;
        let n: usize = header.dims.iter().product();
        if raw.len() != n * 4 {
            return Err(Error::CountMismatch {
                left: n * 4,
                right: raw.len(),
            });
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(Point::from(header.origin_mm), header.spacing_mm, header.dims, data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: String,
    order: String,
}

/// `(linear index, world point)` for every voxel, x-fastest.
pub fn world_grid(vol: &VoxelVolume) -> impl Iterator<Item = (usize, Point)> + '_ {
    (0..vol.len()).map(move |n| (n, vol.world(vol.index3(n))))
}

/// Per-point offsets known at scattered source locations.
#[derive(Debug, Clone)]
pub struct DeformationField {
    index: SpatialIndex,
    offsets: Vec<Vector3<f64>>,
}

impl DeformationField {
    pub fn new(sample_points: &[Point], offsets: Vec<Vector3<f64>>) -> Result<Self> {
        if sample_points.len() != offsets.len() {
            return Err(Error::CountMismatch {
                left: sample_points.len(),
                right: offsets.len(),
            });
        }
        if sample_points.is_empty() {
            return Err(Error::EmptyField);
        }
        Ok(Self {
            index: SpatialIndex::build(sample_points)?,
            offsets,
        })
    }

    pub fn sample_points(&self) -> &[Point] {
        self.index.points()
    }

    pub fn offsets(&self) -> &[Vector3<f64>] {
        &self.offsets
    }
}

/// Offset of the sample nearest to `query` (ties: lowest index).
pub fn nn_offset_interpolate(field: &DeformationField, query: &Point) -> Vector3<f64> {
    field.offsets[field.index.nearest(query).0]
}
