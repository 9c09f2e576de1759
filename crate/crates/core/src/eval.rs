//! Top-k% precision of a predicted heatmap against a ground-truth heatmap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::HeatMap;

/// Percent levels reported by default.
pub const DEFAULT_LEVELS: [f64; 4] = [1.0, 10.0, 25.0, 50.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum TopKMode {
    /// Threshold at the (100 - k)th nearest-rank percentile of the
    /// predictions.
    Percentile,
    /// Fixed score thresholds, one per level.
    FixedScores(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gt_threshold: f64,
    pub levels: Vec<f64>,
    pub mode: TopKMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gt_threshold: 0.5,
            levels: DEFAULT_LEVELS.to_vec(),
            mode: TopKMode::Percentile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionLevel {
    /// Percent, e.g. 10 for Top 10%.
    pub k: f64,
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    /// `None` when no pixel lies above the threshold.
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub gt_threshold: f64,
    pub valid_pixels: usize,
    pub gt_pixels: usize,
    /// All valid predictions are equal, so no pixel can rank above another.
    pub degenerate: bool,
    pub levels: Vec<PrecisionLevel>,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p / 100 * n)`, with rank 1 for `p = 0`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Precision of the pixels predicted above each Top-k% threshold, where
/// true positives lie in the ground-truth area `gt > gt_threshold`. Pixels
/// with a non-finite prediction or ground truth are ignored.
pub fn topk_precision(predicted: &HeatMap, ground_truth: &HeatMap, cfg: &EvalConfig) -> Result<PrecisionReport> {
    if !predicted.same_shape(ground_truth) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            predicted.width, predicted.height, ground_truth.width, ground_truth.height
        )));
    }
    if cfg.levels.iter().any(|k| !(*k > 0.0 && *k <= 100.0)) {
        return Err(Error::InvalidParameter(format!("levels must lie in (0, 100]: {:?}", cfg.levels)));
    }
    if let TopKMode::FixedScores(t) = &cfg.mode {
        if t.len() != cfg.levels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} fixed thresholds for {} levels",
                t.len(),
                cfg.levels.len()
            )));
        }
    }
    let valid: Vec<(f64, bool)> = predicted
        .values
        .iter()
        .zip(&ground_truth.values)
        .filter(|(p, g)| p.is_finite() && g.is_finite())
        .map(|(&p, &g)| (p, g > cfg.gt_threshold))
        .collect();
    let mut sorted: Vec<f64> = valid.iter().map(|v| v.0).collect();
    sorted.sort_by(f64::total_cmp);
    let degenerate = sorted.first() == sorted.last();
    let levels = cfg
        .levels
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let threshold = match &cfg.mode {
                TopKMode::FixedScores(t) => t[i],
                TopKMode::Percentile if sorted.is_empty() => f64::INFINITY,
                TopKMode::Percentile => nearest_rank(&sorted, 100.0 - k),
            };
            let (mut tp, mut fp) = (0, 0);
            for &(p, in_gt) in &valid {
                if p > threshold {
                    if in_gt {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            PrecisionLevel {
                k,
                threshold,
                true_positives: tp,
                false_positives: fp,
                precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
            }
        })
        .collect();
    Ok(PrecisionReport {
        gt_threshold: cfg.gt_threshold,
        valid_pixels: valid.len(),
        gt_pixels: valid.iter().filter(|v| v.1).count(),
        degenerate,
        levels,
    })
}
