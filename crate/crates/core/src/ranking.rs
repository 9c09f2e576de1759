//! Grasp proposals from heatmaps: thresholding, connected components,
//! per-cluster maxima, global ranking and approach poses.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::raster::HeatMap;
use crate::robot::GoalPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Policy 1: quality only.
    #[default]
    QualityOnly,
    /// Policy 2: quality and reachability.
    QualityAndReachability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub policy: Policy,
    pub th_g: f64,
    pub th_r: f64,
    /// 4 or 8.
    pub connectivity: u8,
    /// When false, every thresholded pixel is its own candidate.
    #[serde(default = "yes")]
    pub cluster: bool,
}

fn yes() -> bool {
    true
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            policy: Policy::QualityOnly,
            th_g: 0.5,
            th_r: 0.3,
            connectivity: 4,
            cluster: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.th_g) || !unit(self.th_r) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must lie in [0, 1], got th_g={} th_r={}",
                self.th_g, self.th_r
            )));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::InvalidParameter(format!("connectivity must be 4 or 8, got {}", self.connectivity)));
        }
        Ok(())
    }
}

/// Pixels with quality above `th_g` and, under Policy 2, reachability
/// above `th_r`. Both comparisons are strict.
pub fn threshold(quality: &HeatMap, reachability: Option<&HeatMap>, cfg: &PolicyConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    match (cfg.policy, reachability) {
        (Policy::QualityOnly, _) => Ok(quality.values.iter().map(|&q| q > cfg.th_g).collect()),
        (Policy::QualityAndReachability, None) => Err(Error::Precondition("Policy 2 needs a reachability map".into())),
        (Policy::QualityAndReachability, Some(r)) => {
            if !r.same_shape(quality) {
                return Err(Error::DimensionMismatch(format!(
                    "quality {}x{} vs reachability {}x{}",
                    quality.width, quality.height, r.width, r.height
                )));
            }
            Ok(quality
                .values
                .iter()
                .zip(&r.values)
                .map(|(&q, &a)| q > cfg.th_g && a > cfg.th_r)
                .collect())
        }
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Connected components of `mask`. Returns per-pixel labels (0 for
/// background, 1..=K otherwise, numbered in row-major order of first
/// appearance) and K.
pub fn label_components(mask: &[bool], width: usize, height: usize, connectivity: u8) -> Result<(Vec<u32>, usize)> {
    if mask.len() != width * height {
        return Err(Error::DimensionMismatch(format!("mask of {} for {width}x{height}", mask.len())));
    }
    if connectivity != 4 && connectivity != 8 {
        return Err(Error::InvalidParameter(format!("connectivity must be 4 or 8, got {connectivity}")));
    }
    let mut parent: Vec<u32> = (0..mask.len() as u32).collect();
    let back: &[(isize, isize)] = if connectivity == 4 {
        &[(-1, 0), (0, -1)]
    } else {
        &[(-1, -1), (-1, 0), (-1, 1), (0, -1)]
    };
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if !mask[i] {
                continue;
            }
            for &(dr, dc) in back {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || cc >= width as isize {
                    continue;
                }
                let j = rr as usize * width + cc as usize;
                if mask[j] {
                    let (a, b) = (find(&mut parent, i as u32), find(&mut parent, j as u32));
                    if a != b {
                        parent[a.max(b) as usize] = a.min(b);
                    }
                }
            }
        }
    }
    let mut labels = vec![0u32; mask.len()];
    let mut id_of_root = vec![0u32; mask.len()];
    let mut count = 0u32;
    for i in 0..mask.len() {
        if mask[i] {
            let root = find(&mut parent, i as u32) as usize;
            if id_of_root[root] == 0 {
                count += 1;
                id_of_root[root] = count;
            }
            labels[i] = id_of_root[root];
        }
    }
    Ok((labels, count as usize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    /// `[row, col]`.
    pub pixel: [usize; 2],
    /// Camera frame, meters.
    pub p: [f64; 3],
    /// Unit normal toward the camera.
    pub n: [f64; 3],
    pub quality: f64,
    pub reachability: Option<f64>,
    pub cluster_id: Option<u32>,
    pub global_rank: usize,
}

/// Ranking order: higher quality, then higher reachability, then earlier
/// pixel in row-major order.
fn better(quality: &HeatMap, reach: Option<&HeatMap>, a: usize, b: usize) -> Ordering {
    let r = |i: usize| reach.map_or(0.0, |m| m.values[i]);
    quality.values[b]
        .total_cmp(&quality.values[a])
        .then(r(b).total_cmp(&r(a)))
        .then(a.cmp(&b))
}

/// One candidate per cluster (its best pixel), globally sorted with the
/// same order. `labels` comes from [`label_components`]; `geometry` maps a
/// pixel index to its camera-frame point and normal.
pub fn rank(
    labels: &[u32],
    count: usize,
    quality: &HeatMap,
    reachability: Option<&HeatMap>,
    geometry: impl Fn(usize) -> Option<(Vec3, Vec3)>,
) -> Vec<GraspCandidate> {
    let mut best: Vec<Option<usize>> = vec![None; count];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let slot = &mut best[l as usize - 1];
        if slot.is_none_or(|b| better(quality, reachability, i, b) == Ordering::Less) {
            *slot = Some(i);
        }
    }
    let mut picks: Vec<(usize, u32)> = best
        .iter()
        .enumerate()
        .filter_map(|(k, b)| b.map(|i| (i, k as u32 + 1)))
        .collect();
    picks.sort_by(|x, y| better(quality, reachability, x.0, y.0));
    picks
        .into_iter()
        .enumerate()
        .map(|(rank, (i, cluster))| candidate(i, Some(cluster), rank, quality, reachability, &geometry))
        .collect()
}

/// Every masked pixel as a candidate, sorted by the ranking order.
pub fn rank_unclustered(
    mask: &[bool],
    quality: &HeatMap,
    reachability: Option<&HeatMap>,
    geometry: impl Fn(usize) -> Option<(Vec3, Vec3)>,
) -> Vec<GraspCandidate> {
    let mut picks: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    picks.sort_by(|&a, &b| better(quality, reachability, a, b));
    picks
        .into_iter()
        .enumerate()
        .map(|(rank, i)| candidate(i, None, rank, quality, reachability, &geometry))
        .collect()
}

fn candidate(
    i: usize,
    cluster_id: Option<u32>,
    global_rank: usize,
    quality: &HeatMap,
    reachability: Option<&HeatMap>,
    geometry: &impl Fn(usize) -> Option<(Vec3, Vec3)>,
) -> GraspCandidate {
    let (p, n) = geometry(i).unwrap_or((Vec3::zeros(), Vec3::zeros()));
    GraspCandidate {
        pixel: [i / quality.width, i % quality.width],
        p: p.into(),
        n: n.into(),
        quality: quality.values[i],
        reachability: reachability.map(|m| m.values[i]),
        cluster_id,
        global_rank,
    }
}

/// Thresholds, clusters (unless disabled) and ranks in one call.
pub fn propose(
    quality: &HeatMap,
    reachability: Option<&HeatMap>,
    cfg: &PolicyConfig,
    geometry: impl Fn(usize) -> Option<(Vec3, Vec3)>,
) -> Result<Vec<GraspCandidate>> {
    let mask = threshold(quality, reachability, cfg)?;
    if !cfg.cluster {
        return Ok(rank_unclustered(&mask, quality, reachability, geometry));
    }
    let (labels, count) = label_components(&mask, quality.width, quality.height, cfg.connectivity)?;
    Ok(rank(&labels, count, quality, reachability, geometry))
}

/// Approach offset along the normal, meters.
pub const APPROACH_OFFSET: f64 = 0.01;

/// 37 approach poses 1 cm off the surface with roll 0 to 180 degrees in
/// 5 degree steps.
pub fn make_goal_poses(candidate: &GraspCandidate) -> Result<Vec<GoalPose>> {
    let n = Vec3::from(candidate.n);
    if (n.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("candidate normal is not unit: {n:?}")));
    }
    let p = Vec3::from(candidate.p) + n * APPROACH_OFFSET;
    (0..=36).map(|k| GoalPose::new(p, n, (5.0 * k as f64).to_radians())).collect()
}
