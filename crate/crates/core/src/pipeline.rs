//! End-to-end annotation and proposal: depth (and optionally labels) in,
//! heatmaps and ranked grasp candidates out.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{Isometry3, Translation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, estimate_normals, fit_plane, PointCloud, Vec3};
use crate::graspable::{full_contact_area, project_surface, remap_to_image, CupMask, GraspableAreaMap, SurfaceMask};
use crate::quality::{quality_map, QualityMaps, QualityParams};
use crate::ranking::{label_components, propose, GraspCandidate, Policy, PolicyConfig};
use crate::raster::{DepthImage, HeatMap, SegmentationMask};
use crate::robot::{reachability_map, CollisionWorld, Obstacle, ReachParams, ReachQuery, RobotModel};
use crate::scene::{render, BinSpec, CameraSpec, Pose, SceneDescription, ShapePrimitive};
use crate::segmentation::{region_grow, RegionGrowParams, SurfaceSegment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Neighbors for normal estimation.
    pub normals_k: usize,
    pub region: RegionGrowParams,
    pub quality: QualityParams,
    pub reach: ReachParams,
    pub policy: PolicyConfig,
    /// Skip the reachability stage (Policy 1 only).
    pub reachability: bool,
    /// Without labels, pixels this much closer than the empty bin are
    /// foreground.
    pub foreground_margin: f64,
    /// Bin assumed when no scene description is given.
    pub bin: BinSpec,
    /// Column width of the obstacle grid built from points when no scene
    /// description is given.
    pub obstacle_cell: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            normals_k: 16,
            region: RegionGrowParams {
                min_segment_size: 50,
                ..Default::default()
            },
            quality: QualityParams::default(),
            reach: ReachParams::default(),
            policy: PolicyConfig::default(),
            reachability: true,
            foreground_margin: 0.003,
            bin: BinSpec::default(),
            obstacle_cell: 0.02,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.normals_k < 3 {
            return Err(Error::Config(format!("normals_k must be at least 3, got {}", self.normals_k)));
        }
        self.region.validate()?;
        self.quality.validate()?;
        self.policy.validate()?;
        if self.reach.stride == 0 {
            return Err(Error::Config("reachability stride must be at least 1".into()));
        }
        if self.policy.policy == Policy::QualityAndReachability && !self.reachability {
            return Err(Error::Config("Policy 2 needs the reachability stage".into()));
        }
        if !(self.foreground_margin > 0.0 && self.obstacle_cell > 0.0) {
            return Err(Error::Config("foreground_margin and obstacle_cell must be positive".into()));
        }
        self.bin.validate()
    }
}

/// A calibrated view of the bin.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub depth: DepthImage,
    pub segmentation: Option<SegmentationMask>,
    /// Optical frame to world.
    pub camera_pose: Pose,
    /// Known geometry for collision checking; without it obstacles are
    /// built from the depth points.
    pub scene: Option<SceneDescription>,
}

impl PipelineInput {
    pub fn from_scene(scene: &SceneDescription, depth: DepthImage, segmentation: Option<SegmentationMask>) -> Self {
        PipelineInput {
            depth,
            segmentation,
            camera_pose: scene.camera.pose.clone(),
            scene: Some(scene.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub quality: QualityMaps,
    pub reachability: Option<HeatMap>,
    pub graspable: GraspableAreaMap,
    /// All object points in the camera frame, with normals and pixels.
    pub cloud: PointCloud,
    pub segments: Vec<SurfaceSegment>,
    pub timings: Vec<StageTiming>,
}

impl Annotation {
    /// Camera-frame point and normal seen at a pixel, if any.
    pub fn pixel_geometry(&self) -> impl Fn(usize) -> Option<(Vec3, Vec3)> + '_ {
        let w = self.graspable.width;
        let mut point_of = vec![usize::MAX; w * self.graspable.height];
        if let Some(px) = &self.cloud.pixel_index {
            for (i, &(r, c)) in px.iter().enumerate() {
                point_of[r * w + c] = i;
            }
        }
        move |px| {
            let i = *point_of.get(px)?;
            let normals = self.cloud.normals.as_ref()?;
            (i != usize::MAX).then(|| (self.cloud.points[i], normals[i]))
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub annotation: Annotation,
    pub candidates: Vec<GraspCandidate>,
    pub timings: Vec<StageTiming>,
}

struct Timer(Vec<StageTiming>);

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        let seconds = t.elapsed().as_secs_f64();
        debug!("{stage}: {seconds:.3} s");
        self.0.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
        out
    }
}

/// Labels foreground blobs when no segmentation is available: pixels
/// closer than the rendered empty bin by `margin`, grouped 8-connected.
pub fn foreground_labels(depth: &DepthImage, camera_pose: &Pose, bin: &BinSpec, margin: f64) -> Result<SegmentationMask> {
    let empty = SceneDescription::empty(
        bin.clone(),
        CameraSpec {
            intrinsics: depth.intrinsics,
            pose: camera_pose.clone(),
        },
    );
    let (background, _) = render(&empty)?;
    let mask: Vec<bool> = depth
        .data
        .iter()
        .zip(&background.data)
        .map(|(&d, &b)| d > 0.0 && (b == 0.0 || d < b - margin))
        .collect();
    let (labels, count) = label_components(&mask, depth.width, depth.height, 8)?;
    if count > u16::MAX as usize {
        return Err(Error::Precondition(format!("{count} foreground components exceed the label range")));
    }
    SegmentationMask::new(depth.width, depth.height, labels.into_iter().map(|l| l as u16).collect())
}

fn concat_clouds(parts: Vec<(PointCloud, Vec<SurfaceSegment>)>) -> (PointCloud, Vec<SurfaceSegment>) {
    let mut cloud = PointCloud {
        points: Vec::new(),
        normals: Some(Vec::new()),
        curvature: Some(Vec::new()),
        pixel_index: Some(Vec::new()),
    };
    let mut segments = Vec::new();
    for (part, segs) in parts {
        let offset = cloud.points.len();
        cloud.points.extend(part.points);
        cloud.normals.as_mut().unwrap().extend(part.normals.unwrap());
        cloud.curvature.as_mut().unwrap().extend(part.curvature.unwrap());
        cloud.pixel_index.as_mut().unwrap().extend(part.pixel_index.unwrap());
        for mut s in segs {
            s.point_indices.iter_mut().for_each(|i| *i += offset);
            segments.push(s);
        }
    }
    (cloud, segments)
}

/// Boxes from the floor up to the highest point in every column of a
/// horizontal grid, expressed in the robot base frame.
pub fn obstacles_from_points(
    depth: &DepthImage,
    camera_pose: &Pose,
    bin: &BinSpec,
    cell: f64,
    base: &Isometry3<f64>,
) -> Result<CollisionWorld> {
    let cloud = backproject(depth, None, None)?;
    let world_from_cam = camera_pose.to_isometry();
    let floor = bin.pose.to_isometry();
    let bin_from_world = floor.inverse();
    let mut columns: std::collections::BTreeMap<(i64, i64), f64> = Default::default();
    for p in &cloud.points {
        let q = bin_from_world * (world_from_cam * nalgebra::Point3::from(*p));
        let key = ((q.x / cell).floor() as i64, (q.y / cell).floor() as i64);
        let top = columns.entry(key).or_insert(f64::NEG_INFINITY);
        *top = top.max(q.z);
    }
    let inv = base.inverse();
    let mut world = CollisionWorld::default();
    // The bin floor slab, limited to the bin footprint.
    let slab = bin.floor_thickness.max(0.005);
    let outer = |i: usize| bin.interior[i] + 2.0 * bin.wall_thickness;
    world.push(Obstacle::new(
        ShapePrimitive::Box {
            extents: [outer(0), outer(1), slab],
        },
        inv * floor * Translation3::new(0.0, 0.0, -slab / 2.0),
    ));
    for ((i, j), top) in columns {
        // Columns within a few millimeters of the floor add nothing.
        if top < 0.005 {
            continue;
        }
        let center = Vec3::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell, top / 2.0);
        world.push(Obstacle::new(
            ShapePrimitive::Box {
                extents: [cell, cell, top],
            },
            inv * floor * Translation3::from(center),
        ));
    }
    Ok(world)
}

/// Heatmaps for one view: backprojection, per-object surface detection,
/// graspable area, grasp quality and (optionally) reachability.
pub fn annotate(input: &PipelineInput, robot: &RobotModel, cfg: &PipelineConfig) -> Result<Annotation> {
    cfg.validate()?;
    let depth = &input.depth;
    depth.validate()?;
    let (w, h) = (depth.width, depth.height);
    let mut timer = Timer(Vec::new());

    let labels = match &input.segmentation {
        Some(s) => {
            if s.width != w || s.height != h {
                return Err(Error::DimensionMismatch(format!(
                    "segmentation {}x{} vs depth {w}x{h}",
                    s.width, s.height
                )));
            }
            s.clone()
        }
        None => timer.run("foreground", || {
            foreground_labels(depth, &input.camera_pose, &cfg.bin, cfg.foreground_margin)
        })?,
    };

    let parts = timer.run("surfaces", || {
        let mut parts = Vec::new();
        for label in labels.object_labels() {
            let raw = backproject(depth, Some(&labels), Some(label))?;
            if raw.len() < cfg.region.min_segment_size.max(cfg.normals_k + 1) {
                debug!("object {label}: {} points, skipped", raw.len());
                continue;
            }
            let cloud = estimate_normals(&raw, cfg.normals_k)?;
            let segs = region_grow(&cloud, &cfg.region)?;
            parts.push((cloud, segs));
        }
        Ok(parts)
    })?;
    let (cloud, segments) = concat_clouds(parts);

    let graspable = timer.run("graspable", || {
        let cup = CupMask::default();
        let masks: Vec<SurfaceMask> = segments.iter().map(|s| project_surface(s, &cloud)).collect();
        let cells: Vec<Vec<(usize, usize)>> = masks.iter().map(|m| full_contact_area(m, &cup)).collect();
        let areas: Vec<(&SurfaceMask, &[(usize, usize)])> = masks.iter().zip(&cells).map(|(m, c)| (m, &c[..])).collect();
        Ok(remap_to_image(&areas, &cloud, w, h))
    })?;

    let quality = timer.run("quality", || {
        if segments.is_empty() {
            return Ok(QualityMaps {
                quality: HeatMap::zeros(w, h),
                center: HeatMap::zeros(w, h),
                seal: HeatMap::zeros(w, h),
            });
        }
        quality_map(&cloud, &segments, &graspable, &cfg.quality)
    })?;

    let reachability = if cfg.reachability {
        Some(timer.run("reachability", || {
            let base = robot.base();
            let base_from_cam = base.inverse() * input.camera_pose.to_isometry();
            let world = match &input.scene {
                Some(scene) => CollisionWorld::from_scene(scene, &base),
                None => obstacles_from_points(depth, &input.camera_pose, &cfg.bin, cfg.obstacle_cell, &base)?,
            };
            let pixel_index = cloud.pixel_index.as_deref().unwrap_or_default();
            let normals = cloud.normals.as_deref().unwrap_or_default();
            let mut point_of = vec![usize::MAX; w * h];
            for (i, &(r, c)) in pixel_index.iter().enumerate() {
                point_of[r * w + c] = i;
            }
            let mut pixels = Vec::new();
            for (sid, pxs) in graspable.surface_pixels.iter().enumerate() {
                for &px in pxs {
                    let i = point_of[px];
                    let p = base_from_cam * nalgebra::Point3::from(cloud.points[i]);
                    let n = base_from_cam.rotation * normals[i];
                    pixels.push((px, sid as u32, p.coords, n.normalize()));
                }
            }
            reachability_map(
                &ReachQuery {
                    width: w,
                    height: h,
                    pixels,
                },
                robot,
                &world,
                &cfg.reach,
            )
        })?)
    } else {
        None
    };

    Ok(Annotation {
        quality,
        reachability,
        graspable,
        cloud,
        segments,
        timings: timer.0,
    })
}

/// [`annotate`] followed by thresholding, clustering and ranking.
pub fn run_pipeline(input: &PipelineInput, robot: &RobotModel, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let annotation = annotate(input, robot, cfg)?;
    let mut timer = Timer(Vec::new());
    let candidates = timer.run("ranking", || {
        let reach = match cfg.policy.policy {
            Policy::QualityOnly => None,
            Policy::QualityAndReachability => annotation.reachability.as_ref(),
        };
        propose(&annotation.quality.quality, reach, &cfg.policy, annotation.pixel_geometry())
    })?;
    let mut timings = annotation.timings.clone();
    timings.extend(timer.0);
    Ok(PipelineOutput {
        annotation,
        candidates,
        timings,
    })
}

/// Camera-frame point and normal at a pixel from depth alone: the point is
/// backprojected and the normal is the plane fit over a `(2r+1)^2` window,
/// facing the camera.
pub fn depth_geometry(depth: &DepthImage, radius: usize) -> impl Fn(usize) -> Option<(Vec3, Vec3)> + '_ {
    let k = depth.intrinsics;
    let point = move |r: usize, c: usize| {
        let d = depth.get(r, c);
        (d > 0.0).then(|| Vec3::new((c as f64 - k.cx) * d / k.fx, (r as f64 - k.cy) * d / k.fy, d))
    };
    move |px| {
        let (r, c) = (px / depth.width, px % depth.width);
        let p = point(r, c)?;
        let mut nb = Vec::new();
        for rr in r.saturating_sub(radius)..=(r + radius).min(depth.height - 1) {
            for cc in c.saturating_sub(radius)..=(c + radius).min(depth.width - 1) {
                nb.extend(point(rr, cc));
            }
        }
        let mut n = fit_plane(&nb).ok()?.normal;
        if n.dot(&p) > 0.0 {
            n = -n;
        }
        Some((p, n))
    }
}

/// Proposals from precomputed heatmaps, with geometry from depth.
pub fn propose_from_heatmaps(
    depth: &DepthImage,
    quality: &HeatMap,
    reachability: Option<&HeatMap>,
    policy: &PolicyConfig,
) -> Result<Vec<GraspCandidate>> {
    if quality.width != depth.width || quality.height != depth.height {
        return Err(Error::DimensionMismatch(format!(
            "quality {}x{} vs depth {}x{}",
            quality.width, quality.height, depth.width, depth.height
        )));
    }
    let candidates = propose(quality, reachability, policy, depth_geometry(depth, 2))?;
    if candidates.iter().any(|c| c.n == [0.0; 3]) {
        warn!("some candidates lie on pixels without usable depth");
    }
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, SceneConfig};

    fn one_box() -> SceneDescription {
        let cfg = SceneConfig {
            pool: vec![ShapePrimitive::Box {
                extents: [0.08, 0.06, 0.04],
            }],
            count_range: [1, 1],
            max_tilt_deg: 0.0,
            ..Default::default()
        };
        sample_scene(5, &cfg).unwrap()
    }

    #[test]
    fn empty_bin_has_no_candidates() {
        let scene = SceneDescription::empty(BinSpec::default(), CameraSpec::default());
        let (depth, seg) = render(&scene).unwrap();
        let out = run_pipeline(
            &PipelineInput::from_scene(&scene, depth, Some(seg)),
            &RobotModel::reference(),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert!(out.candidates.is_empty());
        assert_eq!(out.annotation.graspable.count(), 0);
        let stages: Vec<&str> = out.timings.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["surfaces", "graspable", "quality", "reachability", "ranking"]);
    }

    #[test]
    fn foreground_matches_rendered_labels() {
        let scene = one_box();
        let (depth, seg) = render(&scene).unwrap();
        let fg = foreground_labels(&depth, &scene.camera.pose, &scene.bin, 0.003).unwrap();
        let pairs = || fg.labels.iter().zip(&seg.labels);
        assert_eq!(pairs().filter(|(f, s)| **f > 0 && **s == 0).count(), 0);
        // Only side pixels within the margin of the floor are missed.
        let missed = pairs().filter(|(f, s)| **f == 0 && **s > 0).count();
        let object = seg.labels.iter().filter(|&&s| s > 0).count();
        assert!(missed * 50 < object, "{missed} of {object}");
    }

    #[test]
    fn policy_two_without_reachability_is_a_config_error() {
        let cfg = PipelineConfig {
            reachability: false,
            policy: PolicyConfig {
                policy: Policy::QualityAndReachability,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn point_obstacles_cover_the_box() {
        let scene = one_box();
        let (depth, _) = render(&scene).unwrap();
        let robot = RobotModel::reference();
        let base = robot.base();
        let world = obstacles_from_points(&depth, &scene.camera.pose, &scene.bin, 0.02, &base).unwrap();
        let c = scene.objects[0].pose.to_isometry().translation.vector;
        let inside = base.inverse() * nalgebra::Point3::from(c);
        assert!(world.obstacles.iter().any(|o| o.contains(&inside.coords)));
    }

    #[test]
    fn unlabeled_run_matches_labeled_quality() {
        let scene = one_box();
        let (depth, seg) = render(&scene).unwrap();
        let robot = RobotModel::reference();
        let cfg = PipelineConfig {
            reachability: false,
            ..Default::default()
        };
        let with = annotate(&PipelineInput::from_scene(&scene, depth.clone(), Some(seg)), &robot, &cfg).unwrap();
        let without = annotate(&PipelineInput::from_scene(&scene, depth, None), &robot, &cfg).unwrap();
        assert_eq!(with.quality.quality, without.quality.quality);
        assert!(with.graspable.count() > 0);
    }
}
