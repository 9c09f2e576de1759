//! Configuration files. Each loader takes an explicit path, falls back to
//! the file of the same name in `$SUCTION_CONFIG_DIR`, and finally to the
//! built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::robot::RobotModel;
use crate::scene::SceneConfig;

pub const CONFIG_DIR_ENV: &str = "SUCTION_CONFIG_DIR";
pub const ROBOT_FILE: &str = "robot.json";
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const SCENE_FILE: &str = "scene.json";

pub fn config_dir() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from)
}

fn resolve(explicit: Option<&Path>, name: &str) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config_dir().map(|d| d.join(name)).filter(|p| p.exists()))
}

fn load<T: DeserializeOwned + Default>(explicit: Option<&Path>, name: &str) -> Result<T> {
    match resolve(explicit, name) {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn load_robot(explicit: Option<&Path>) -> Result<RobotModel> {
    let Some(p) = resolve(explicit, ROBOT_FILE) else {
        return Ok(RobotModel::reference());
    };
    let text = fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    RobotModel::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

pub fn load_pipeline(explicit: Option<&Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = load(explicit, PIPELINE_FILE)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scene(explicit: Option<&Path>) -> Result<SceneConfig> {
    let cfg: SceneConfig = load(explicit, SCENE_FILE)?;
    cfg.validate()?;
    Ok(cfg)
}
