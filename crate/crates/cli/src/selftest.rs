//! Built-in checks run by `affect-forge selftest`.

use std::path::Path;

use affect_forge::labels::{Metric, RankLabel};
use affect_forge::levels::{extract_chunk, LevelGrid, Palette, CHUNK_LEFT, CHUNK_SIZE, LEVEL_HEIGHT, TILE_CHANNELS};
use affect_forge::model::{
    decode_weights, encode_weights, end_to_end_grad_check, load_weights, random_point, ModelConfig, ModelWeights,
    Variant, FULL_CONCAT_WIDTH,
};
use affect_forge::nn::gradcheck::{grad_check, standard_op_checks};
use affect_forge::nn::ops::pool_output_dims;
use affect_forge::nn::PoolMode;
use affect_forge::rng::{derive, seeded};
use affect_forge::stats::spearman_rho;
use rand::Rng;

/// Per-level "most" and "least" prediction rates (percent) over an
/// ordered set of 15 levels, with their published rank correlations.
pub const REFERENCE_MOST_RATES: [f64; 15] = [
    2.66, 14.75, 32.91, 39.51, 44.24, 51.74, 55.67, 57.89, 60.24, 63.14, 64.19, 61.30, 60.62, 59.81, 57.37,
];
pub const REFERENCE_LEAST_RATES: [f64; 15] = [
    92.96, 75.64, 49.66, 0.00, 30.82, 23.67, 17.72, 13.58, 10.16, 7.43, 6.36, 4.60, 3.95, 3.43, 3.66,
];
pub const REFERENCE_MOST_RHO: f64 = 0.8143;
pub const REFERENCE_MOST_P: f64 = 2.194e-4;
pub const REFERENCE_LEAST_RHO: f64 = -0.7607;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, body: impl FnOnce() -> Result<String, String>) -> CheckResult {
    match body() {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn op_gradients() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for op in standard_op_checks() {
        for seed in 0..5 {
            let e = grad_check(&op.layers, &op.input_shape, seed).map_err(|e| format!("{}: {e}", op.name))?;
            ensure(e < 1e-4, || format!("{} seed {seed}: relative error {e:.3e}", op.name))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("max relative error {worst:.3e}"))
}

fn network_gradients() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (variant, seed) in [(Variant::Full, 0), (Variant::Full, 1), (Variant::LevelOnly, 2)] {
        let e = end_to_end_grad_check(variant, seed).map_err(|e| e.to_string())?;
        ensure(e < 1e-3, || format!("{variant} seed {seed}: relative error {e:.3e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("max relative error {worst:.3e}"))
}

fn shape_contract() -> Result<String, String> {
    let cfg = ModelConfig::full(Metric::Fun);
    cfg.validate().map_err(|e| e.to_string())?;
    let pooled = pool_output_dims(37, 10, 3, 3, PoolMode::TflearnQuirk).map_err(|e| e.to_string())?;
    let concat = cfg.concat_width().map_err(|e| e.to_string())?;
    let chunks = 3 * cfg.chunk_width().map_err(|e| e.to_string())?;
    ensure(pooled == (12, 2), || format!("logs pool gives {pooled:?}"))?;
    ensure(concat == FULL_CONCAT_WIDTH && chunks == 600, || format!("concat {concat}, chunks {chunks}"))?;
    let w = ModelWeights::init(cfg, [0; 32], 1).map_err(|e| e.to_string())?;
    let p = random_point(&mut seeded(2), RankLabel::Mid);
    let probs = w.predict_point(&p).map_err(|e| e.to_string())?;
    let sum: f64 = probs.iter().sum();
    ensure((sum - 1.0).abs() < 1e-9, || format!("softmax sums to {sum}"))?;
    Ok(format!("pool 12x2, chunks {chunks}, concat {concat}, softmax sum {sum:.12}"))
}

fn chunk_oracle() -> Result<String, String> {
    let mut rng = seeded(41);
    for pair in 0..100 {
        let width = rng.gen_range(CHUNK_SIZE..60);
        let tiles: Vec<u8> = (0..width * LEVEL_HEIGHT).map(|_| rng.gen_range(0..TILE_CHANNELS as u8)).collect();
        let grid = LevelGrid::from_tiles(0, width, LEVEL_HEIGHT, tiles.clone()).map_err(|e| e.to_string())?;
        let x = rng.gen_range(0.0..width as f64);
        let chunk = extract_chunk(&grid, x).map_err(|e| e.to_string())?;
        let start = (x as usize).saturating_sub(CHUNK_LEFT).min(width - CHUNK_SIZE);
        for y in 0..CHUNK_SIZE {
            for dx in 0..CHUNK_SIZE {
                let tile = tiles[y * width + start + dx] as usize;
                let cell = &chunk.data()[(y * CHUNK_SIZE + dx) * TILE_CHANNELS..][..TILE_CHANNELS];
                let hot = cell.iter().enumerate().all(|(c, &v)| v == f64::from(u8::from(c == tile)));
                ensure(hot, || format!("pair {pair}: width {width}, x {x}, cell ({dx}, {y})"))?;
            }
        }
    }
    Ok("100 random (level, x) pairs match a direct slice".into())
}

fn reference_correlations() -> Result<String, String> {
    let order: Vec<f64> = (0..15).map(f64::from).collect();
    let most = spearman_rho(&order, &REFERENCE_MOST_RATES).map_err(|e| e.to_string())?;
    let least = spearman_rho(&order, &REFERENCE_LEAST_RATES).map_err(|e| e.to_string())?;
    ensure((most.rho - REFERENCE_MOST_RHO).abs() <= 5e-4, || format!("most rho {:.4}", most.rho))?;
    ensure((most.p_value - REFERENCE_MOST_P).abs() <= 1e-5, || format!("most p {:.4e}", most.p_value))?;
    ensure((least.rho - REFERENCE_LEAST_RHO).abs() <= 5e-4, || format!("least rho {:.4}", least.rho))?;
    Ok(format!(
        "most rho {:.4} (p {:.3e}), least rho {:.4}",
        most.rho, most.p_value, least.rho
    ))
}

fn weights_container() -> Result<String, String> {
    let w = ModelWeights::init(ModelConfig::level_only(Metric::Challenge), Palette::infinite_mario().fingerprint(), 5)
        .map_err(|e| e.to_string())?;
    let bytes = encode_weights(&w);
    let back = decode_weights(&bytes).map_err(|e| e.to_string())?;
    ensure(encode_weights(&back) == bytes, || "round trip changed the encoding".into())?;
    let mut rng = derive(5, &[0x636f_7272]);
    for _ in 0..8 {
        let mut bad = bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 1 << rng.gen_range(0..8);
        ensure(decode_weights(&bad).is_err(), || format!("flipped byte {i} was accepted"))?;
    }
    Ok(format!("{} bytes round-trip; corruption detected", bytes.len()))
}

/// All built-in checks; when `weights` is given, also that the file loads.
pub fn run_checks(weights: Option<&Path>) -> Vec<CheckResult> {
    let mut results = vec![
        check("op gradients", op_gradients),
        check("network gradients", network_gradients),
        check("shape contract", shape_contract),
        check("chunk extraction", chunk_oracle),
        check("rank correlation reference", reference_correlations),
        check("weights container", weights_container),
    ];
    if let Some(path) = weights {
        results.push(check("weights file", || {
            let w = load_weights(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(format!("{} {} model, {} tensors", w.config.metric, w.config.variant, w.params.len()))
        }));
    }
    results
}
