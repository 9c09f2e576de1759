//! Procedural cluttered-bin scenes and their depth/label rendering.
//!
//! World frame: the bin floor's upper face is the plane `z = 0` (before the
//! bin pose is applied), `+z` points up, and the bin interior is centered on
//! the origin. The camera pose maps its optical frame (`+z` forward, `+x`
//! right, `+y` down) into the world; the default camera hangs above the bin
//! center looking straight down.

pub mod shapes;

use nalgebra::{Isometry3, Point3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::raster::{CameraIntrinsics, DepthImage, SegmentationMask};
pub use shapes::{Aabb, Pose, ShapePrimitive, Triangle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: u16,
    pub shape: ShapePrimitive,
    pub pose: Pose,
}

impl SceneObject {
    pub fn world_aabb(&self) -> Aabb {
        self.shape.world_aabb(&self.pose.to_isometry())
    }
}

/// Open-top bin: a floor slab under `z = 0` and four walls around the
/// interior, all expressed relative to `pose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    /// Interior size along x and y, meters.
    pub interior: [f64; 2],
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub floor_thickness: f64,
    pub pose: Pose,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            interior: [0.38, 0.38],
            wall_height: 0.15,
            wall_thickness: 0.01,
            floor_thickness: 0.01,
            pose: Pose::identity(),
        }
    }
}

impl BinSpec {
    /// Floor followed by the walls at -x, +x, -y, +y, as world-frame boxes.
    pub fn boxes(&self) -> Vec<(ShapePrimitive, Isometry3<f64>)> {
        let [ix, iy] = self.interior;
        let t = self.wall_thickness;
        let h = self.wall_height;
        let ft = self.floor_thickness;
        let base = self.pose.to_isometry();
        let mk = |ext: [f64; 3], c: Vec3| {
            (
                ShapePrimitive::Box { extents: ext },
                base * Isometry3::translation(c.x, c.y, c.z),
            )
        };
        vec![
            mk([ix + 2.0 * t, iy + 2.0 * t, ft], Vec3::new(0.0, 0.0, -ft * 0.5)),
            mk([t, iy + 2.0 * t, h], Vec3::new(-(ix + t) * 0.5, 0.0, h * 0.5)),
            mk([t, iy + 2.0 * t, h], Vec3::new((ix + t) * 0.5, 0.0, h * 0.5)),
            mk([ix, t, h], Vec3::new(0.0, -(iy + t) * 0.5, h * 0.5)),
            mk([ix, t, h], Vec3::new(0.0, (iy + t) * 0.5, h * 0.5)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.interior.iter().all(|v| *v > 0.0)
            && self.wall_height > 0.0
            && self.wall_thickness > 0.0
            && self.floor_thickness > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("bin dimensions must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub intrinsics: CameraIntrinsics,
    /// Optical frame to world.
    pub pose: Pose,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec::looking_down(
            CameraIntrinsics {
                fx: 420.0,
                fy: 420.0,
                cx: 127.5,
                cy: 127.5,
                width: 256,
                height: 256,
            },
            0.75,
        )
    }
}

impl CameraSpec {
    /// Camera at `(0, 0, height)` whose optical axis is world `-z`.
    pub fn looking_down(intrinsics: CameraIntrinsics, height: f64) -> Self {
        let flip = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI);
        CameraSpec {
            intrinsics,
            pose: Pose::from_parts(Vec3::new(0.0, 0.0, height), flip),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub seed: u64,
    pub bin: BinSpec,
    pub camera: CameraSpec,
    pub objects: Vec<SceneObject>,
    /// Objects that could not be placed within the attempt budget.
    #[serde(default)]
    pub unplaced: usize,
}

impl SceneDescription {
    pub fn empty(bin: BinSpec, camera: CameraSpec) -> Self {
        SceneDescription {
            seed: 0,
            bin,
            camera,
            objects: Vec::new(),
            unplaced: 0,
        }
    }

    pub fn has_warning(&self) -> bool {
        self.unplaced > 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Parameters of [`sample_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub bin: BinSpec,
    pub camera: CameraSpec,
    pub pool: Vec<ShapePrimitive>,
    /// Inclusive object-count range, within `[1, 64]`.
    pub count_range: [usize; 2],
    pub max_attempts: usize,
    pub max_tilt_deg: f64,
    /// Objects may not rise above this height over the bin floor.
    pub max_stack_height: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            bin: BinSpec::default(),
            camera: CameraSpec::default(),
            pool: default_pool(),
            count_range: [5, 12],
            max_attempts: 100,
            max_tilt_deg: 15.0,
            max_stack_height: 0.2,
        }
    }
}

pub fn default_pool() -> Vec<ShapePrimitive> {
    vec![
        ShapePrimitive::Box { extents: [0.08, 0.06, 0.04] },
        ShapePrimitive::Box { extents: [0.10, 0.07, 0.05] },
        ShapePrimitive::Box { extents: [0.06, 0.06, 0.06] },
        ShapePrimitive::Box { extents: [0.12, 0.08, 0.03] },
        ShapePrimitive::Cylinder { radius: 0.03, height: 0.10 },
        ShapePrimitive::Cylinder { radius: 0.035, height: 0.08 },
        ShapePrimitive::Cylinder { radius: 0.025, height: 0.12 },
        ShapePrimitive::Sphere { radius: 0.035 },
    ]
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool.is_empty() {
            return Err(Error::Config("object pool is empty".into()));
        }
        let [lo, hi] = self.count_range;
        if lo < 1 || hi > 64 || lo > hi {
            return Err(Error::Config(format!(
                "object count range {lo}..={hi} must lie within 1..=64"
            )));
        }
        for s in &self.pool {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.bin.validate()?;
        self.camera.intrinsics.validate()
    }
}

/// Samples a scene by sequential vertical drops.
///
/// Each object gets a random pose (yaw plus a tilt of at most
/// `max_tilt_deg` for boxes and cylinders, a uniform rotation for meshes),
/// a random footprint position inside the bin, and is lowered until its
/// bounding box rests on the floor or on the highest object whose footprint
/// it overlaps. A drop is rejected when its footprint center is not over
/// that supporting object or the stack gets too tall; after `max_attempts`
/// rejections the object is skipped and counted in `unplaced`.
pub fn sample_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneDescription> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.count_range;
    let count = rng.random_range(lo..=hi);
    let bin_iso = cfg.bin.pose.to_isometry();
    let half = [cfg.bin.interior[0] * 0.5, cfg.bin.interior[1] * 0.5];

    // Placement happens in the bin frame, then moves to the world.
    let mut placed: Vec<(SceneObject, Aabb)> = Vec::new();
    let mut unplaced = 0;
    for _ in 0..count {
        let shape = cfg.pool[rng.random_range(0..cfg.pool.len())].clone();
        let mut done = false;
        for _ in 0..cfg.max_attempts {
            let rot = sample_rotation(&mut rng, &shape, cfg.max_tilt_deg.to_radians());
            let local = shape.world_aabb(&Isometry3::from_parts(Vec3::zeros().into(), rot));
            let (wx, wy) = (local.extents().x * 0.5, local.extents().y * 0.5);
            // Always draw both coordinates so the stream stays aligned.
            let ux: f64 = rng.random();
            let uy: f64 = rng.random();
            if wx > half[0] || wy > half[1] {
                continue;
            }
            let cx = -half[0] + wx + ux * 2.0 * (half[0] - wx);
            let cy = -half[1] + wy + uy * 2.0 * (half[1] - wy);
            let offset = Vec3::new(cx - local.center().x, cy - local.center().y, 0.0);
            let mut footprint = Aabb {
                min: local.min + offset,
                max: local.max + offset,
            };
            let mut support: Option<&Aabb> = None;
            for (_, b) in &placed {
                if b.overlaps_xy(&footprint) && support.is_none_or(|s| b.max.z > s.max.z) {
                    support = Some(b);
                }
            }
            let rest = support.map_or(0.0, |s| s.max.z);
            if let Some(s) = support {
                if !s.contains_xy(cx, cy) {
                    continue;
                }
            }
            let dz = rest - local.min.z;
            footprint.min.z = local.min.z + dz;
            footprint.max.z = local.max.z + dz;
            if footprint.max.z > cfg.max_stack_height {
                continue;
            }
            let t = Vec3::new(offset.x, offset.y, dz);
            let pose_bin = Isometry3::from_parts(t.into(), rot);
            let obj = SceneObject {
                label: (placed.len() + 1) as u16,
                shape: shape.clone(),
                pose: Pose::from_isometry(&pose_bin),
            };
            placed.push((obj, footprint));
            done = true;
            break;
        }
        if !done {
            unplaced += 1;
        }
    }
    let objects = placed
        .into_iter()
        .map(|(mut o, _)| {
            o.pose = Pose::from_isometry(&(bin_iso * o.pose.to_isometry()));
            o
        })
        .collect();
    Ok(SceneDescription {
        seed,
        bin: cfg.bin.clone(),
        camera: cfg.camera.clone(),
        objects,
        unplaced,
    })
}

fn sample_rotation(rng: &mut ChaCha8Rng, shape: &ShapePrimitive, max_tilt: f64) -> UnitQuaternion<f64> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let yaw = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), rng.random_range(0.0..2.0 * PI));
    let tilt = |rng: &mut ChaCha8Rng| {
        let angle = rng.random_range(0.0..=max_tilt);
        let dir = rng.random_range(0.0..2.0 * PI);
        let axis = Unit::new_normalize(Vec3::new(dir.cos(), dir.sin(), 0.0));
        UnitQuaternion::from_axis_angle(&axis, angle)
    };
    match shape {
        ShapePrimitive::Box { .. } => {
            let base = match rng.random_range(0..3) {
                0 => UnitQuaternion::identity(),
                1 => UnitQuaternion::from_axis_angle(&Vec3::x_axis(), FRAC_PI_2),
                _ => UnitQuaternion::from_axis_angle(&Vec3::y_axis(), FRAC_PI_2),
            };
            tilt(rng) * yaw * base
        }
        ShapePrimitive::Cylinder { .. } => {
            let base = if rng.random_bool(0.5) {
                UnitQuaternion::identity()
            } else {
                UnitQuaternion::from_axis_angle(&Vec3::x_axis(), FRAC_PI_2)
            };
            tilt(rng) * yaw * base
        }
        ShapePrimitive::Sphere { .. } => yaw,
        ShapePrimitive::Mesh { .. } => {
            // Shoemake's uniform quaternion.
            let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let a = (1.0 - u1).sqrt();
            let b = u1.sqrt();
            let q = nalgebra::Quaternion::new(
                b * (2.0 * PI * u3).cos(),
                a * (2.0 * PI * u2).sin(),
                a * (2.0 * PI * u2).cos(),
                b * (2.0 * PI * u3).sin(),
            );
            UnitQuaternion::from_quaternion(q)
        }
    }
}

/// A solid participating in ray casting, pre-transformed for queries.
struct Caster {
    shape: ShapePrimitive,
    inv: Isometry3<f64>,
    bounds: Aabb,
    label: u16,
}

impl Caster {
    fn new(shape: ShapePrimitive, pose: Isometry3<f64>, label: u16) -> Self {
        let bounds = shape.world_aabb(&pose);
        Caster {
            shape,
            inv: pose.inverse(),
            bounds,
            label,
        }
    }

    fn hit(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        self.bounds.ray_entry(o, d)?;
        let lo = (self.inv * Point3::from(*o)).coords;
        let ld = self.inv.rotation * d;
        self.shape.ray_local(&lo, &ld)
    }
}

/// Casts one ray per pixel center. Depth is the camera-frame `z` of the
/// nearest hit and the label is that object's (0 for the bin and the
/// ground plane continuing the bin floor). Rays that hit nothing get depth
/// 0.
pub fn render(scene: &SceneDescription) -> Result<(DepthImage, SegmentationMask)> {
    let k = scene.camera.intrinsics;
    k.validate()?;
    let cam = scene.camera.pose.to_isometry();
    let bin_iso = scene.bin.pose.to_isometry();
    let mut casters: Vec<Caster> = scene
        .bin
        .boxes()
        .into_iter()
        .map(|(s, p)| Caster::new(s, p, 0))
        .collect();
    casters.extend(
        scene
            .objects
            .iter()
            .map(|o| Caster::new(o.shape.clone(), o.pose.to_isometry(), o.label)),
    );
    let origin = cam.translation.vector;
    let ground_n = bin_iso.rotation * Vec3::z();
    let ground_p = bin_iso.translation.vector;

    let rows: Vec<Vec<(f64, u16)>> = (0..k.height)
        .into_par_iter()
        .map(|row| {
            (0..k.width)
                .map(|col| {
                    let r = k.ray(col as f64, row as f64);
                    let d = cam.rotation * Vec3::new(r[0], r[1], r[2]);
                    let mut best = f64::INFINITY;
                    let mut label = 0u16;
                    for c in &casters {
                        if let Some(t) = c.hit(&origin, &d) {
                            if t < best {
                                best = t;
                                label = c.label;
                            }
                        }
                    }
                    let denom = ground_n.dot(&d);
                    if denom < 0.0 {
                        let t = ground_n.dot(&(ground_p - origin)) / denom;
                        if t > 0.0 && t < best {
                            best = t;
                            label = 0;
                        }
                    }
                    if best.is_finite() {
                        (best, label)
                    } else {
                        (0.0, 0)
                    }
                })
                .collect()
        })
        .collect();
    let (depth, labels): (Vec<f64>, Vec<u16>) = rows.into_iter().flatten().unzip();
    Ok((
        DepthImage::new(k, depth)?,
        SegmentationMask::new(k.width, k.height, labels)?,
    ))
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to valid
/// pixels. Perturbed values that would become non-positive are clamped to
/// the smallest positive depth so the pixel stays valid.
pub fn add_depth_noise(depth: &DepthImage, sigma: f64, seed: u64) -> Result<DepthImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(depth.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = depth.clone();
    for d in out.data.iter_mut() {
        let e: f64 = normal.sample(&mut rng);
        if *d > 0.0 {
            *d = (*d + e).max(f64::MIN_POSITIVE);
        }
    }
    Ok(out)
}

/// World-frame to camera optical frame.
pub fn world_to_camera(camera: &CameraSpec) -> Isometry3<f64> {
    camera.pose.to_isometry().inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_box_cfg() -> SceneConfig {
        SceneConfig {
            pool: vec![ShapePrimitive::Box { extents: [0.08, 0.06, 0.04] }],
            count_range: [1, 1],
            ..Default::default()
        }
    }

    #[test]
    fn single_box_rests_on_floor() {
        let scene = sample_scene(7, &single_box_cfg()).unwrap();
        assert_eq!(scene.objects.len(), 1);
        let b = scene.objects[0].world_aabb();
        assert!(b.min.z.abs() < 1e-12, "bottom at {}", b.min.z);
        assert!(b.min.x >= -0.19 - 1e-12 && b.max.x <= 0.19 + 1e-12);
        assert!(b.min.y >= -0.19 - 1e-12 && b.max.y <= 0.19 + 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = sample_scene(11, &cfg).unwrap();
        let b = sample_scene(11, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = sample_scene(12, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_errors() {
        let mut cfg = SceneConfig::default();
        cfg.pool.clear();
        assert!(matches!(sample_scene(1, &cfg), Err(Error::Config(_))));
        let cfg = SceneConfig {
            count_range: [0, 3],
            ..Default::default()
        };
        assert!(sample_scene(1, &cfg).is_err());
        let cfg = SceneConfig {
            count_range: [1, 65],
            ..Default::default()
        };
        assert!(sample_scene(1, &cfg).is_err());
    }

    #[test]
    fn oversized_objects_are_reported() {
        let cfg = SceneConfig {
            pool: vec![ShapePrimitive::Box { extents: [0.5, 0.5, 0.05] }],
            count_range: [2, 2],
            ..Default::default()
        };
        let s = sample_scene(3, &cfg).unwrap();
        assert!(s.objects.is_empty());
        assert_eq!(s.unplaced, 2);
        assert!(s.has_warning());
    }

    #[test]
    fn scene_json_roundtrip() {
        let s = sample_scene(5, &SceneConfig::default()).unwrap();
        let back = SceneDescription::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn empty_bin_renders_floor() {
        let scene = SceneDescription::empty(BinSpec::default(), CameraSpec::default());
        let (depth, seg) = render(&scene).unwrap();
        assert!(seg.labels.iter().all(|&l| l == 0));
        // Central pixels see the floor at the camera height.
        for row in 100..156 {
            for col in 100..156 {
                assert!((depth.get(row, col) - 0.75).abs() < 1e-9);
            }
        }
        assert!(depth.data.iter().all(|&d| d > 0.0 && d <= 0.75 + 1e-9));
    }

    #[test]
    fn box_top_depth_is_exact() {
        let mut scene = SceneDescription::empty(BinSpec::default(), CameraSpec::default());
        scene.objects.push(SceneObject {
            label: 1,
            shape: ShapePrimitive::Box { extents: [0.1, 0.1, 0.15] },
            pose: Pose::translation(Vec3::new(0.0, 0.0, 0.075)),
        });
        let (depth, seg) = render(&scene).unwrap();
        // Box top at world z = 0.15, camera at 0.75 -> depth 0.6.
        let mut n = 0;
        for i in 0..depth.data.len() {
            if seg.labels[i] == 1 {
                n += 1;
                assert!((depth.data[i] - 0.6).abs() < 1e-9);
            }
        }
        // 0.1 m at 0.6 m with f = 420 spans 70 pixels.
        assert!((n as i64 - 70 * 70).abs() < 300, "{n}");
    }
}
