//! Pixel rasters shared by every stage: depth, object labels and score maps.
//!
//! All rasters are row-major with `index = row * width + col`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel `(col, row)` has its center at integer
/// coordinates `(u, v) = (col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "camera intrinsics out of range: {self:?}"
            )))
        }
    }

    /// Direction of the ray through pixel `(col, row)`, scaled so that its
    /// optical-axis component is 1. A point at parameter `t` along this ray
    /// has camera-frame depth `z = t`.
    pub fn ray(&self, col: f64, row: f64) -> [f64; 3] {
        [(col - self.cx) / self.fx, (row - self.cy) / self.fy, 1.0]
    }

    /// Pinhole projection of a camera-frame point to continuous pixel
    /// coordinates `(col, row)`.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Per-pixel range along the optical axis in meters. `0.0` marks an
/// invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl DepthImage {
    pub fn new(intrinsics: CameraIntrinsics, data: Vec<f64>) -> Result<Self> {
        intrinsics.validate()?;
        let img = DepthImage {
            width: intrinsics.width,
            height: intrinsics.height,
            data,
            intrinsics,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(intrinsics: CameraIntrinsics, value: f64) -> Result<Self> {
        Self::new(intrinsics, vec![value; intrinsics.pixel_count()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.width != self.intrinsics.width || self.height != self.intrinsics.height {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} vs intrinsics {}x{}",
                self.width, self.height, self.intrinsics.width, self.intrinsics.height
            )));
        }
        if self.data.len() != self.width * self.height {
            return Err(Error::DimensionMismatch(format!(
                "depth data has {} values for a {}x{} raster",
                self.data.len(),
                self.width,
                self.height
            )));
        }
        if let Some(bad) = self.data.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "depth values must be finite and >= 0 (0 = invalid), found {bad}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.data[idx] > 0.0
    }
}

/// Object label per pixel; 0 is background (bin or floor).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "segmentation has {} labels for a {width}x{height} raster",
                labels.len()
            )));
        }
        Ok(SegmentationMask {
            width,
            height,
            labels,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        SegmentationMask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    /// Distinct nonzero labels in ascending order.
    pub fn object_labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        seen.extend(self.labels.iter().copied().filter(|&l| l != 0));
        seen.into_iter().collect()
    }
}

/// Per-pixel score raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        HeatMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "heatmap has {} values for a {width}x{height} raster",
                values.len()
            )));
        }
        Ok(HeatMap {
            width,
            height,
            values,
        })
    }

    pub fn same_shape(&self, other: &HeatMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// All values finite and inside `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}
