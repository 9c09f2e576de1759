//! Analytic suction-graspability annotation for bin picking.
//!
//! From a depth image (and optionally an object segmentation) of a
//! cluttered bin, this crate finds near-planar object surfaces, the cup
//! positions where a vacuum cup makes full contact, scores them by a
//! geometric grasp-quality metric and by robot reachability, and turns the
//! resulting heatmaps into ranked 6D suction grasp proposals. A procedural
//! scene generator produces annotated datasets.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graspable;
pub mod io;
pub mod pipeline;
pub mod quality;
pub mod ranking;
pub mod raster;
pub mod robot;
pub mod scene;
pub mod segmentation;
pub mod spatial;

pub use error::{Error, Result};
