use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ik::restart_seed;
use super::{ik_solve, CollisionWorld, GoalPose, IkParams, RobotModel};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::raster::HeatMap;

/// Roll samples per point: 0 to 355 degrees in 5 degree steps.
pub const N_THETA: usize = 72;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachParams {
    pub ik: IkParams,
    /// Evaluate one pixel per `stride x stride` block and surface; 1
    /// evaluates every pixel.
    pub stride: usize,
}

impl Default for ReachParams {
    fn default() -> Self {
        ReachParams {
            ik: IkParams::default(),
            stride: 2,
        }
    }
}

/// Seed of the restart stream for roll sample `i` of the point keyed `key`.
pub fn theta_seed(key: u64, i: usize) -> u64 {
    restart_seed(key, 1_000_003 + i)
}

pub fn theta_sample(i: usize) -> f64 {
    (5.0 * i as f64).to_radians()
}

/// Fraction of the 72 roll angles with a collision-free IK solution, for
/// the cup tip at `p` (robot base frame) approaching along `-n`. `key`
/// selects the random-restart streams.
pub fn reachability_score(
    model: &RobotModel,
    world: &CollisionWorld,
    p: Vec3,
    n: Vec3,
    ik: &IkParams,
    key: u64,
) -> Result<f64> {
    let mut count = 0usize;
    for i in 0..N_THETA {
        let goal = GoalPose::new(p, n, theta_sample(i))?;
        let params = IkParams {
            seed: theta_seed(key, i),
            ..*ik
        };
        if ik_solve(model, world, &goal, &params).solved() {
            count += 1;
        }
    }
    Ok(count as f64 / N_THETA as f64)
}

/// Graspable pixels with their goal position and approach normal in the
/// robot base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachQuery {
    pub width: usize,
    pub height: usize,
    /// `(pixel index, owning surface, p, n)`.
    pub pixels: Vec<(usize, u32, Vec3, Vec3)>,
}

/// Reachability heatmap. With a stride above 1, the first pixel in
/// row-major order of every block and surface is evaluated and its score
/// copied to the rest of that block's pixels on the same surface.
pub fn reachability_map(
    query: &ReachQuery,
    model: &RobotModel,
    world: &CollisionWorld,
    params: &ReachParams,
) -> Result<HeatMap> {
    if params.stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let (w, s) = (query.width, params.stride);
    let mut groups: BTreeMap<(usize, usize, u32), Vec<usize>> = BTreeMap::new();
    let mut sorted: Vec<usize> = (0..query.pixels.len()).collect();
    sorted.sort_by_key(|&k| query.pixels[k].0);
    for k in sorted {
        let (px, owner, ..) = query.pixels[k];
        groups.entry(((px / w) / s, (px % w) / s, owner)).or_default().push(k);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let scores: Vec<f64> = groups
        .par_iter()
        .map(|g| {
            let (px, _, p, n) = query.pixels[g[0]];
            reachability_score(model, world, p, n, &params.ik, params.ik.seed ^ px as u64)
        })
        .collect::<Result<_>>()?;
    let mut map = HeatMap::zeros(query.width, query.height);
    for (g, v) in groups.iter().zip(scores) {
        for &k in g {
            map.values[query.pixels[k].0] = v;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::Obstacle;

    fn base_point(model: &RobotModel, world_p: Vec3) -> Vec3 {
        (model.base().inverse() * nalgebra::Point3::from(world_p)).coords
    }

    #[test]
    fn score_matches_per_theta_tally_and_is_quantized() {
        let m = RobotModel::reference();
        let world = CollisionWorld::default();
        let ik = IkParams::default();
        for (k, wp) in [Vec3::new(0.0, 0.0, 0.05), Vec3::new(0.15, 0.1, 0.0)].iter().enumerate() {
            let p = base_point(&m, *wp);
            let s = reachability_score(&m, &world, p, Vec3::z(), &ik, k as u64).unwrap();
            let mut tally = 0;
            for i in 0..72 {
                let g = GoalPose::new(p, Vec3::z(), (5.0 * i as f64).to_radians()).unwrap();
                tally += ik_solve(&m, &world, &g, &IkParams { seed: theta_seed(k as u64, i), ..ik }).solved() as usize;
            }
            assert_eq!(s, tally as f64 / 72.0);
            assert!(s > 0.0);
        }
    }

    #[test]
    fn out_of_workspace_scores_zero() {
        let m = RobotModel::reference();
        let s = reachability_score(&m, &CollisionWorld::default(), Vec3::new(2.0, 0.0, 0.0), Vec3::z(), &IkParams::default(), 0)
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn obstruction_never_helps() {
        let m = RobotModel::reference();
        let p = base_point(&m, Vec3::new(0.05, 0.0, 0.05));
        let ik = IkParams::default();
        let free = reachability_score(&m, &CollisionWorld::default(), p, Vec3::z(), &ik, 9).unwrap();
        let mut world = CollisionWorld::default();
        // Post beside the goal, tall enough to block some rolls.
        world.push(Obstacle::aabb_box(p + Vec3::new(0.045, -0.02, -0.05), p + Vec3::new(0.09, 0.02, 0.3)));
        let blocked = reachability_score(&m, &world, p, Vec3::z(), &ik, 9).unwrap();
        assert!(blocked < free, "{blocked} vs {free}");
    }

    #[test]
    fn stride_groups_share_scores() {
        let m = RobotModel::reference();
        let p = base_point(&m, Vec3::new(0.0, 0.0, 0.05));
        let pixels = vec![(0, 0, p, Vec3::z()), (1, 0, p, Vec3::z()), (5, 0, p, Vec3::z()), (6, 1, p, Vec3::z())];
        let q = ReachQuery {
            width: 4,
            height: 2,
            pixels,
        };
        let ik = IkParams {
            restarts: 0,
            ..Default::default()
        };
        let map = reachability_map(&q, &m, &CollisionWorld::default(), &ReachParams { ik, stride: 2 }).unwrap();
        assert_eq!(map.values[0], map.values[1]);
        assert_eq!(map.values[0], map.values[5]);
        assert_eq!(map.values[2], 0.0);
        for v in &map.values {
            assert_eq!((v * 72.0).round() / 72.0, *v);
        }
    }
}
