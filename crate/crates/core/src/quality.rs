//! Geometric grasp quality: centrality within the graspable area combined
//! with flatness and smoothness of the cup contact patch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_plane, PointCloud, Vec3};
use crate::graspable::{GraspableAreaMap, CUP_RADIUS};
use crate::raster::HeatMap;
use crate::segmentation::SurfaceSegment;
use crate::spatial::PointIndex;

/// How the normal variance enters the flatness term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlatnessMode {
    /// `0.9 * exp(-c_var * Var)`: flat patches score highest.
    #[default]
    Exponential,
    /// `0.9 * Var` taken verbatim, with the sum clamped to `[0, 1]`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityParams {
    pub c_var: f64,
    #[serde(default)]
    pub flatness: FlatnessMode,
    pub cup_radius: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        QualityParams {
            c_var: 50.0,
            flatness: FlatnessMode::Exponential,
            cup_radius: CUP_RADIUS,
        }
    }
}

impl QualityParams {
    pub fn validate(&self) -> Result<()> {
        if self.c_var.is_finite() && self.c_var >= 0.0 && self.cup_radius > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("quality parameters out of range: {self:?}")))
        }
    }
}

/// Points under the cup when it is centered at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPatch {
    pub center: Vec3,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

/// Segment points within the cup radius of cloud point `p`.
///
/// Fails with [`Error::Precondition`] when `p` is not in the segment and
/// with [`Error::DegeneratePatch`] when fewer than three points remain.
pub fn contact_patch(p: usize, segment: &SurfaceSegment, cloud: &PointCloud, radius: f64) -> Result<ContactPatch> {
    if segment.point_indices.binary_search(&p).is_err() {
        return Err(Error::Precondition(format!("point {p} is not part of the segment")));
    }
    let pts: Vec<Vec3> = segment.point_indices.iter().map(|&i| cloud.points[i]).collect();
    let index = PointIndex::new(&pts);
    patch_from_index(cloud.points[p], &index, segment, cloud, radius)
}

fn patch_from_index(
    center: Vec3,
    index: &PointIndex<'_>,
    segment: &SurfaceSegment,
    cloud: &PointCloud,
    radius: f64,
) -> Result<ContactPatch> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    let local = index.within(&center, radius);
    if local.len() < 3 {
        return Err(Error::DegeneratePatch(local.len()));
    }
    let ids: Vec<usize> = local.iter().map(|&k| segment.point_indices[k]).collect();
    Ok(ContactPatch {
        center,
        points: ids.iter().map(|&i| cloud.points[i]).collect(),
        normals: ids.iter().map(|&i| normals[i]).collect(),
    })
}

/// Centrality score of each point of a graspable area: one minus the
/// max-min normalized distance to the area centroid. All ones when every
/// distance is equal.
pub fn center_score(area: &[Vec3]) -> Result<Vec<f64>> {
    if area.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let centroid = area.iter().sum::<Vec3>() / area.len() as f64;
    let d: Vec<f64> = area.iter().map(|p| (p - centroid).norm()).collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span <= 0.0 {
        return Ok(vec![1.0; area.len()]);
    }
    Ok(d.iter().map(|x| 1.0 - (x - min) / span).collect())
}

/// Intermediate quantities of the seal score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SealTerms {
    /// Sum of squared deviations from the mean normal over `N - 1`.
    pub normal_variance: f64,
    /// Sum of absolute point-to-plane distances, meters.
    pub residual: f64,
    pub flatness: f64,
    pub smoothness: f64,
}

impl SealTerms {
    pub fn score(&self) -> f64 {
        (self.flatness + self.smoothness).clamp(0.0, 1.0)
    }
}

pub fn normal_variance(normals: &[Vec3]) -> f64 {
    let n = normals.len();
    if n < 2 {
        return 0.0;
    }
    let mean = normals.iter().sum::<Vec3>() / n as f64;
    normals.iter().map(|v| (v - mean).norm_squared()).sum::<f64>() / (n - 1) as f64
}

pub fn seal_terms(patch: &ContactPatch, params: &QualityParams) -> Result<SealTerms> {
    let fit = fit_plane(&patch.points)?;
    let var = normal_variance(&patch.normals);
    let flatness = match params.flatness {
        FlatnessMode::Exponential => 0.9 * (-params.c_var * var).exp(),
        FlatnessMode::Literal => 0.9 * var,
    };
    Ok(SealTerms {
        normal_variance: var,
        residual: fit.residual,
        flatness,
        smoothness: 0.1 * (-5.0 * fit.residual).exp(),
    })
}

pub fn seal_score(patch: &ContactPatch, params: &QualityParams) -> Result<f64> {
    Ok(seal_terms(patch, params)?.score())
}

/// Grasp quality with its two components, one value per image pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMaps {
    pub quality: HeatMap,
    pub center: HeatMap,
    pub seal: HeatMap,
}

/// Scores every graspable pixel. `areas.surface_pixels[i]` must belong to
/// `segments[i]`, and `cloud` must carry normals and pixel indices.
pub fn quality_map(
    cloud: &PointCloud,
    segments: &[SurfaceSegment],
    areas: &GraspableAreaMap,
    params: &QualityParams,
) -> Result<QualityMaps> {
    params.validate()?;
    if areas.surface_pixels.len() != segments.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} graspable areas for {} segments",
            areas.surface_pixels.len(),
            segments.len()
        )));
    }
    let pixel_index = cloud
        .pixel_index
        .as_ref()
        .ok_or_else(|| Error::Precondition("cloud has no pixel indices".into()))?;
    let (w, h) = (areas.width, areas.height);
    let mut point_of_pixel = vec![usize::MAX; w * h];
    for (i, &(r, c)) in pixel_index.iter().enumerate() {
        point_of_pixel[r * w + c] = i;
    }
    let mut maps = QualityMaps {
        quality: HeatMap::zeros(w, h),
        center: HeatMap::zeros(w, h),
        seal: HeatMap::zeros(w, h),
    };
    for (segment, pixels) in segments.iter().zip(&areas.surface_pixels) {
        if pixels.is_empty() {
            continue;
        }
        let ids: Vec<usize> = pixels.iter().map(|&px| point_of_pixel[px]).collect();
        if ids.contains(&usize::MAX) {
            return Err(Error::Precondition("graspable pixel without a point".into()));
        }
        let area: Vec<Vec3> = ids.iter().map(|&i| cloud.points[i]).collect();
        let jc = center_score(&area)?;
        let seg_pts: Vec<Vec3> = segment.point_indices.iter().map(|&i| cloud.points[i]).collect();
        let index = PointIndex::new(&seg_pts);
        let js: Vec<f64> = area
            .par_iter()
            .map(|p| {
                let patch = patch_from_index(*p, &index, segment, cloud, params.cup_radius)?;
                seal_score(&patch, params)
            })
            .collect::<Result<_>>()?;
        for (k, &px) in pixels.iter().enumerate() {
            maps.center.values[px] = jc[k];
            maps.seal.values[px] = js[k];
            maps.quality.values[px] = (0.5 * jc[k] + 0.5 * js[k]).clamp(0.0, 1.0);
        }
    }
    Ok(maps)
}
