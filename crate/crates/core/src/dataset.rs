//! Annotated dataset generation with a content-addressed manifest.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json          seeds and SHA-256 of every file, no timings
//! timings.json           per-scene stage timings
//! scene_00000/
//!   scene.json
//!   depth.pfm            + depth.json sidecar
//!   segmentation.pgm     + segmentation.json
//!   quality.pfm          + quality.json
//!   reachability.pfm     + reachability.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{self, RasterKind};
use crate::pipeline::{annotate, PipelineConfig, PipelineInput, StageTiming};
use crate::raster::{DepthImage, HeatMap, SegmentationMask};
use crate::robot::RobotModel;
use crate::scene::{add_depth_noise, render, sample_scene, SceneConfig, SceneDescription};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";
const FILES: [&str; 9] = [
    "scene.json",
    "depth.pfm",
    "depth.json",
    "segmentation.pgm",
    "segmentation.json",
    "quality.pfm",
    "quality.json",
    "reachability.pfm",
    "reachability.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
    /// Standard deviation of Gaussian depth noise, meters. The annotation
    /// is computed on the noisy depth that is stored.
    pub depth_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub dir: String,
    pub files: Vec<FileHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub seed: u64,
    pub n_scenes: usize,
    /// SHA-256 of the canonical JSON of the configuration and robot.
    pub config_sha256: String,
    pub scenes: Vec<ManifestEntry>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTimings {
    pub index: usize,
    pub stages: Vec<StageTiming>,
}

/// One stored scene.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub scene: SceneDescription,
    pub depth: DepthImage,
    pub segmentation: SegmentationMask,
    pub quality: HeatMap,
    pub reachability: HeatMap,
}

impl SceneRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let scene = SceneDescription::from_json(&fs::read_to_string(dir.join("scene.json"))?)?;
        let (depth, _) = io::load_depth(&dir.join("depth.pfm"))?;
        let rec = SceneRecord {
            scene,
            segmentation: io::load_segmentation(&dir.join("segmentation.pgm"))?,
            quality: io::load_heatmap(&dir.join("quality.pfm"))?,
            reachability: io::load_heatmap(&dir.join("reachability.pfm"))?,
            depth,
        };
        let (w, h) = (rec.depth.width, rec.depth.height);
        let same = |a: usize, b: usize| a == w && b == h;
        if !(same(rec.segmentation.width, rec.segmentation.height)
            && same(rec.quality.width, rec.quality.height)
            && same(rec.reachability.width, rec.reachability.height))
        {
            return Err(Error::DimensionMismatch(format!("{}: rasters differ in size", dir.display())));
        }
        Ok(rec)
    }
}

/// Seed of scene `index` in a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:05}")
}

fn write_scene(dir: &Path, seed: u64, cfg: &DatasetConfig, robot: &RobotModel) -> Result<Vec<StageTiming>> {
    let scene = sample_scene(seed, &cfg.scene)?;
    let (clean, seg) = render(&scene)?;
    let depth = add_depth_noise(&clean, cfg.depth_noise, seed ^ 0x5eed)?;
    let mut pipeline = cfg.pipeline.clone();
    pipeline.reachability = true;
    pipeline.reach.ik.seed = seed;
    let ann = annotate(&PipelineInput::from_scene(&scene, depth.clone(), Some(seg.clone())), robot, &pipeline)?;
    let reach = ann.reachability.expect("reachability stage enabled");
    fs::create_dir_all(dir)?;
    io::atomic_write(&dir.join("scene.json"), format!("{}\n", scene.to_json()?).as_bytes())?;
    io::save_depth(&dir.join("depth.pfm"), &depth, Some(&scene.camera.pose))?;
    io::save_segmentation(&dir.join("segmentation.pgm"), &seg)?;
    io::save_heatmap(&dir.join("quality.pfm"), &ann.quality.quality, RasterKind::Quality)?;
    io::save_heatmap(&dir.join("reachability.pfm"), &reach, RasterKind::Reachability)?;
    Ok(ann.timings)
}

fn hash_files(dir: &Path) -> Result<Vec<FileHash>> {
    FILES
        .iter()
        .map(|name| {
            Ok(FileHash {
                name: name.to_string(),
                sha256: sha256_hex(&fs::read(dir.join(name))?),
            })
        })
        .collect()
}

/// Generates `n_scenes` annotated scenes under `out`. Scenes run in
/// parallel on the global thread pool; every output is a function of the
/// configuration, robot and seed only. A scene that fails to annotate is
/// logged and listed under `failures` in the manifest.
pub fn generate_dataset(cfg: &DatasetConfig, robot: &RobotModel, n_scenes: usize, seed: u64, out: &Path) -> Result<Manifest> {
    cfg.scene.validate()?;
    cfg.pipeline.validate()?;
    robot.validate()?;
    if !(cfg.depth_noise >= 0.0 && cfg.depth_noise.is_finite()) {
        return Err(Error::Config(format!("depth_noise must be finite and >= 0, got {}", cfg.depth_noise)));
    }
    fs::create_dir_all(out)?;
    let probe = out.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;

    let config_sha256 = sha256_hex(serde_json::to_string(&(cfg, robot))?.as_bytes());
    let results: Vec<(usize, u64, Result<(Vec<FileHash>, Vec<StageTiming>)>)> = (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let s = scene_seed(seed, i);
            let dir: PathBuf = out.join(scene_dir_name(i));
            let r = write_scene(&dir, s, cfg, robot).and_then(|t| Ok((hash_files(&dir)?, t)));
            (i, s, r)
        })
        .collect();

    let mut manifest = Manifest {
        version: io::FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        n_scenes,
        config_sha256,
        scenes: Vec::new(),
        failures: Vec::new(),
    };
    let mut timings = Vec::new();
    for (index, s, r) in results {
        match r {
            Ok((files, stages)) => {
                manifest.scenes.push(ManifestEntry {
                    index,
                    seed: s,
                    dir: scene_dir_name(index),
                    files,
                });
                timings.push(SceneTimings { index, stages });
            }
            Err(e) if matches!(e, Error::Io(_)) => return Err(e),
            Err(e) => {
                warn!("scene {index} (seed {s}) skipped: {e}");
                manifest.failures.push(Failure {
                    index,
                    seed: s,
                    error: e.to_string(),
                });
            }
        }
    }
    io::save_json(&out.join(MANIFEST), &manifest)?;
    io::save_json(&out.join(TIMINGS), &timings)?;
    info!("{} scenes written, {} failed", manifest.scenes.len(), manifest.failures.len());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        let mut cfg = DatasetConfig::default();
        cfg.scene.count_range = [2, 3];
        cfg.pipeline.reach.ik.restarts = 1;
        cfg.pipeline.reach.stride = 4;
        cfg
    }

    #[test]
    fn single_scene_is_reproducible() {
        let robot = RobotModel::reference();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_dataset(&small(), &robot, 1, 11, a.path()).unwrap();
        let mb = generate_dataset(&small(), &robot, 1, 11, b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.scenes.len(), 1);
        assert!(ma.failures.is_empty());
        assert_eq!(
            fs::read(a.path().join(MANIFEST)).unwrap(),
            fs::read(b.path().join(MANIFEST)).unwrap()
        );
        let rec = SceneRecord::load(&a.path().join(scene_dir_name(0))).unwrap();
        assert!(rec.quality.in_unit_range() && rec.reachability.in_unit_range());
        assert!(rec.quality.values.iter().any(|&q| q > 0.0));
    }

    #[test]
    fn content_change_changes_hash() {
        let robot = RobotModel::reference();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_dataset(&small(), &robot, 1, 11, a.path()).unwrap();
        let mb = generate_dataset(&small(), &robot, 1, 12, b.path()).unwrap();
        let fa = &ma.scenes[0].files;
        let fb = &mb.scenes[0].files;
        for (x, y) in fa.iter().zip(fb) {
            let (ca, cb) = (
                fs::read(a.path().join(scene_dir_name(0)).join(&x.name)).unwrap(),
                fs::read(b.path().join(scene_dir_name(0)).join(&y.name)).unwrap(),
            );
            assert_eq!(ca == cb, x.sha256 == y.sha256, "{}", x.name);
        }
    }

    #[test]
    fn empty_pool_is_a_config_error() {
        let mut cfg = small();
        cfg.scene.pool.clear();
        let dir = tempfile::tempdir().unwrap();
        let r = generate_dataset(&cfg, &RobotModel::reference(), 1, 0, dir.path());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        let r = generate_dataset(&small(), &RobotModel::reference(), 1, 0, &file.join("out"));
        assert!(matches!(r, Err(Error::Io(_))));
    }

    #[test]
    fn scene_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| scene_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
