use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw attention of one generated word, as written to the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStep {
    pub word: String,
    pub step: usize,
    pub weights: Vec<f64>,
}

/// Min-max scales weights to 0..=255; a constant vector maps to mid-gray.
pub fn to_gray(weights: &[f64]) -> Vec<u8> {
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; weights.len()];
    }
    weights
        .iter()
        .map(|w| ((w - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Binary PGM (`P5`) image of a weight vector reshaped to the grid.
pub fn encode_pgm(weights: &[f64], grid_h: usize, grid_w: usize) -> Result<Vec<u8>> {
    if weights.len() != grid_h * grid_w {
        return Err(Error::dim(
            "export_attention_heatmap",
            format!(
                "{} weights for a {grid_h}x{grid_w} grid",
                weights.len()
            ),
        ));
    }
    let mut out = format!("P5 {grid_w} {grid_h} 255\n").into_bytes();
    out.extend(to_gray(weights));
    Ok(out)
}

/// Writes `step_NN.pgm` and `step_NN.json` per word into `dir`; returns the
/// image paths in order.
pub fn export_attention_heatmap(
    words: &[String],
    trace: &[Vec<f64>],
    grid_h: usize,
    grid_w: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if words.len() != trace.len() {
        return Err(Error::contract(format!(
            "{} words but {} attention steps",
            words.len(),
            trace.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(words.len());
    for (i, (word, weights)) in words.iter().zip(trace).enumerate() {
        let pgm = encode_pgm(weights, grid_h, grid_w)?;
        let path = dir.join(format!("step_{i:02}.pgm"));
        fs::write(&path, pgm)?;
        let side = HeatmapStep {
            word: word.clone(),
            step: i,
            weights: weights.clone(),
        };
        fs::write(dir.join(format!("step_{i:02}.json")), serde_json::to_string(&side)?)?;
        paths.push(path);
    }
    Ok(paths)
}
