//! WebAssembly bindings for the browser demo in `www/`.

use affect_forge::analysis::{patch_tensor, render_chunk};
use affect_forge::labels::{Metric, RankLabel};
use affect_forge::levels::{chunk_start, parse_level, CropSpec, LevelGrid, Palette, CHUNK_SIZE, LEVEL_HEIGHT};
use affect_forge::model::{decode_weights, predicted_label, ModelConfig, ModelWeights, Predictor};
use affect_forge::pipeline::empty_log_dataset;
use affect_forge::stats::spearman_rho;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Raw Infinite Mario level files are this many rows before cropping.
const RAW_HEIGHT: usize = 14;

fn level_from_text(text: &str, palette: &Palette) -> Result<LevelGrid, String> {
    let grid = parse_level(text.trim_end(), palette, 0).map_err(|e| e.to_string())?;
    match grid.height {
        LEVEL_HEIGHT => Ok(grid),
        RAW_HEIGHT => grid
            .crop(&CropSpec {
                width: grid.width,
                drop_top: 3,
                drop_bottom: true,
            })
            .map_err(|e| e.to_string()),
        h => Err(format!("level has {h} rows; expected {LEVEL_HEIGHT} or {RAW_HEIGHT}")),
    }
}

/// A rendered 10×10 chunk.
#[wasm_bindgen]
pub struct ChunkView {
    start: usize,
    side: usize,
    ascii: String,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl ChunkView {
    /// First level column covered by the chunk.
    #[wasm_bindgen(getter)]
    pub fn start(&self) -> usize {
        self.start
    }

    /// Image width and height in pixels.
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    #[wasm_bindgen(getter)]
    pub fn ascii(&self) -> String {
        self.ascii.clone()
    }

    /// Pixels ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

pub fn chunk_view_impl(level_text: &str, x: f64, scale: usize) -> Result<ChunkView, String> {
    let palette = Palette::infinite_mario();
    let grid = level_from_text(level_text, &palette)?;
    if grid.width < CHUNK_SIZE {
        return Err(format!("level is {} columns wide; chunks need {CHUNK_SIZE}", grid.width));
    }
    let start = chunk_start(grid.width, x);
    let patch = patch_tensor(&grid, start, 0, CHUNK_SIZE).map_err(|e| e.to_string())?;
    let img = render_chunk(&patch, &palette, scale.clamp(1, 64)).map_err(|e| e.to_string())?;
    let side = CHUNK_SIZE * scale.clamp(1, 64);
    let header = format!("P6\n{side} {side}\n255\n").len();
    let rgba = img.ppm[header..]
        .chunks_exact(3)
        .flat_map(|px| [px[0], px[1], px[2], 255])
        .collect();
    Ok(ChunkView {
        start,
        side,
        ascii: img.ascii,
        rgba,
    })
}

/// The chunk a data point at column `x` would see.
#[wasm_bindgen]
pub fn chunk_view(level_text: &str, x: f64, scale: usize) -> Result<ChunkView, JsError> {
    chunk_view_impl(level_text, x, scale).map_err(|e| JsError::new(&e))
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect()
}

pub fn spearman_impl(xs: &str, ys: &str) -> Result<String, String> {
    let (xs, ys) = (parse_numbers(xs)?, parse_numbers(ys)?);
    let r = spearman_rho(&xs, &ys).map_err(|e| e.to_string())?;
    Ok(json!({ "rho": r.rho, "p_value": r.p_value, "ci95": [r.ci95.0, r.ci95.1], "n": r.n }).to_string())
}

/// Spearman's rho with p-value and 95% interval, as JSON.
#[wasm_bindgen]
pub fn spearman(xs: &str, ys: &str) -> Result<String, JsError> {
    spearman_impl(xs, ys).map_err(|e| JsError::new(&e))
}

pub fn predict_impl(level_text: &str, x: f64, weights: &[u8], seed: u64) -> Result<String, String> {
    let palette = Palette::infinite_mario();
    let grid = level_from_text(level_text, &palette)?;
    let model = if weights.is_empty() {
        ModelWeights::init(ModelConfig::full(Metric::Fun), palette.fingerprint(), seed)
    } else {
        decode_weights(weights).and_then(|w| w.check_compatible(&palette.fingerprint(), None).map(|_| w))
    }
    .map_err(|e| e.to_string())?;
    let column = (x.max(0.0).floor() as usize).min(grid.width.saturating_sub(1));
    let data = empty_log_dataset(vec![grid], vec![RankLabel::Mid], seed).map_err(|e| e.to_string())?;
    let point = data.get(column).map_err(|e| e.to_string())?;
    let probs = model.predict(&point).map_err(|e| e.to_string())?;
    Ok(json!({
        "metric": model.config.metric.name(),
        "trained": !weights.is_empty(),
        "probabilities": { "most": probs[0], "mid": probs[1], "least": probs[2] },
        "label": predicted_label(&probs).name(),
    })
    .to_string())
}

/// Rank prediction for the point at column `x` with an empty play log.
/// An empty `weights` buffer uses a freshly initialised model.
#[wasm_bindgen]
pub fn predict(level_text: &str, x: f64, weights: &[u8], seed: u64) -> Result<String, JsError> {
    predict_impl(level_text, x, weights, seed).map_err(|e| JsError::new(&e))
}
