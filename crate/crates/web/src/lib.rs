//! Browser bindings for three small demos: scoring a caption, showing what
//! grid pooling throws away, and an object-query attention heatmap.
//!
//! Each export returns a JSON string. The `*_json` functions hold the logic
//! and run natively as well.

use captionlab::data::{scene_captions, tokenize, SceneConfig, SceneSpec};
use captionlab::features::{FeatureGrid, FeatureSource};
use captionlab::inference::{log_softmax, meteor, sentence_bleu, to_gray, token_prf};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Feature channels used by the scene demos.
pub const CHANNELS: usize = 16;

fn scene(seed: u64) -> Result<SceneSpec, String> {
    let cfg = SceneConfig {
        n_scenes: 1,
        seed,
        ..SceneConfig::default()
    };
    cfg.scenes()
        .map_err(|e| e.to_string())?
        .pop()
        .ok_or_else(|| "no scene generated".to_string())
}

fn describe(scene: &SceneSpec) -> Result<Value, String> {
    let captions: Vec<String> = scene_captions(scene)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|c| c.join(" "))
        .collect();
    let objects: Vec<Value> = scene
        .objects
        .iter()
        .map(|o| json!({"class": o.class, "color": o.color, "row": o.row, "col": o.col}))
        .collect();
    Ok(json!({
        "grid_h": scene.grid_h,
        "grid_w": scene.grid_w,
        "objects": objects,
        "captions": captions,
    }))
}

/// BLEU-1..4, METEOR and token P/R/F1 of `candidate` against newline
/// separated `references`.
pub fn score_caption_json(candidate: &str, references: &str) -> Result<String, String> {
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references
        .lines()
        .map(tokenize)
        .filter(|r| !r.is_empty())
        .collect();
    if refs.is_empty() {
        return Err("enter at least one reference caption".into());
    }
    let bleu = sentence_bleu(&cand, &refs, 4).map_err(|e| e.to_string())?;
    let meteor = meteor(&cand, &refs).map_err(|e| e.to_string())?;
    let prf = token_prf(&cand, &refs).map_err(|e| e.to_string())?;
    Ok(json!({
        "bleu": bleu,
        "meteor": meteor,
        "precision": prf.precision,
        "recall": prf.recall,
        "f1": prf.f1,
    })
    .to_string())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn grid_values(g: &FeatureGrid) -> Vec<f64> {
    g.data().iter().map(|&v| f64::from(v)).collect()
}

/// A random scene and its point mirror: different captions, identical
/// pooled feature vector, different feature grids.
pub fn pooling_json(seed: u64) -> Result<String, String> {
    let original = scene(seed)?;
    let mut mirrored = original.clone();
    for o in &mut mirrored.objects {
        o.row = original.grid_h - 1 - o.row;
        o.col = original.grid_w - 1 - o.col;
    }
    let source = FeatureSource::new(CHANNELS, 0.0, seed);
    let a = source.render(&original, 0).map_err(|e| e.to_string())?;
    let b = source.render(&mirrored, 0).map_err(|e| e.to_string())?;
    Ok(json!({
        "original": describe(&original)?,
        "mirrored": describe(&mirrored)?,
        "pooled_max_diff": max_abs_diff(a.to_vector().data(), b.to_vector().data()),
        "grid_max_diff": max_abs_diff(&grid_values(&a), &grid_values(&b)),
    })
    .to_string())
}

/// Softmax over grid cells of the scaled dot product between the embedding
/// of `query` (e.g. `"red square"`) and each cell of a noisy scene.
pub fn attend_json(seed: u64, query: &str, sigma: f64) -> Result<String, String> {
    let query = tokenize(query).join(" ");
    let s = scene(seed)?;
    let source = FeatureSource::new(CHANNELS, sigma.max(0.0), seed);
    let grid = source.render(&s, seed).map_err(|e| e.to_string())?;
    let q = source.embedding(&query);
    let scale = (CHANNELS as f64).sqrt();
    let scores: Vec<f64> = (0..grid.cells())
        .map(|i| {
            let cell = grid.cell(i / grid.grid_w(), i % grid.grid_w());
            cell.iter().zip(&q).map(|(&c, k)| f64::from(c) * k).sum::<f64>() / scale
        })
        .collect();
    let weights: Vec<f64> = log_softmax(&scores).iter().map(|l| l.exp()).collect();
    Ok(json!({
        "scene": describe(&s)?,
        "query": query,
        "weights": weights,
        "gray": to_gray(&weights),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn score_caption(candidate: &str, references: &str) -> Result<String, JsValue> {
    score_caption_json(candidate, references).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn pooling(seed: u32) -> Result<String, JsValue> {
    pooling_json(u64::from(seed)).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn attend(seed: u32, query: &str, sigma: f64) -> Result<String, JsValue> {
    attend_json(u64::from(seed), query, sigma).map_err(|e| JsValue::from_str(&e))
}
