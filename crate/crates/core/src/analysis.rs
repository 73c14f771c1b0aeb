//! Level patches that most strongly excite each first-layer chunk filter,
//! and image/text rendering of tile patches.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::levels::{LevelGrid, Palette, TILE_CHANNELS};
use crate::model::ModelWeights;
use crate::nn::{ops, LayerSpec, Padding};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationRecord {
    pub filter: usize,
    pub level_index: usize,
    /// Top-left corner of the receptive field.
    pub x: usize,
    pub y: usize,
    pub activation: f64,
    /// Tile ids of the receptive field, row-major.
    pub patch: Vec<u8>,
    pub patch_size: usize,
}

impl ActivationRecord {
    pub fn x_range(&self) -> std::ops::Range<usize> {
        self.x..self.x + self.patch_size
    }
}

/// The first chunk-head convolution: filters `[k, k, 17, F]` and bias `[F]`.
pub fn first_chunk_filters(weights: &ModelWeights) -> Result<(Tensor, Tensor)> {
    let layer = weights
        .config
        .chunk_head(0)
        .into_iter()
        .find(|l| matches!(l.spec, LayerSpec::Conv2d { .. }))
        .ok_or_else(|| Error::Config("chunks head has no convolution".into()))?;
    let w = weights.params.get(&layer.weight_name())?.value.clone();
    let b = weights.params.get(&layer.bias_name())?.value.clone();
    match w.shape() {
        &[h, wd, c, _] if h == wd && c == TILE_CHANNELS => Ok((w, b)),
        s => Err(Error::Shape(format!("first chunk filter has shape {s:?}"))),
    }
}

/// One-hot `[size, size, 17]` patch with top-left corner `(x, y)`.
pub fn patch_tensor(grid: &LevelGrid, x: usize, y: usize, size: usize) -> Result<Tensor> {
    if x + size > grid.width || y + size > grid.height {
        return Err(Error::Argument(format!(
            "{size}×{size} patch at ({x}, {y}) leaves the {}×{} level",
            grid.width, grid.height
        )));
    }
    let mut t = Tensor::zeros(&[size, size, TILE_CHANNELS]);
    let d = t.data_mut();
    for dy in 0..size {
        for dx in 0..size {
            d[(dy * size + dx) * TILE_CHANNELS + grid.tile(x + dx, y + dy) as usize] = 1.0;
        }
    }
    Ok(t)
}

/// Pre-activation response of `filter` at every valid position; the
/// strongest wins, ties going to the smallest `x`, then the smallest `y`.
fn scan(grid: &LevelGrid, filters: &Tensor, bias: &Tensor, filter: usize) -> Result<ActivationRecord> {
    let (k, f_count) = (filters.shape()[0], filters.shape()[3]);
    if grid.width < k || grid.height < k {
        return Err(Error::Shape(format!(
            "level {} ({}×{}) is smaller than the {k}×{k} filter",
            grid.level_index, grid.width, grid.height
        )));
    }
    let w = filters.data();
    let weight = |dy: usize, dx: usize, tile: u8| w[((dy * k + dx) * TILE_CHANNELS + tile as usize) * f_count + filter];
    let mut best: Option<(f64, usize, usize)> = None;
    for x in 0..=grid.width - k {
        for y in 0..=grid.height - k {
            let mut a = bias.data()[filter];
            for dy in 0..k {
                for dx in 0..k {
                    a += weight(dy, dx, grid.tile(x + dx, y + dy));
                }
            }
            if best.is_none_or(|(b, _, _)| a > b) {
                best = Some((a, x, y));
            }
        }
    }
    let (activation, x, y) = best.expect("at least one position");
    let patch = (0..k * k).map(|i| grid.tile(x + i % k, y + i / k)).collect();
    Ok(ActivationRecord {
        filter,
        level_index: grid.level_index,
        x,
        y,
        activation,
        patch,
        patch_size: k,
    })
}

/// Best patch for every (filter, level) pair, ordered by level then filter.
pub fn max_activating_chunks(weights: &ModelWeights, grids: &[LevelGrid]) -> Result<Vec<ActivationRecord>> {
    let (filters, bias) = first_chunk_filters(weights)?;
    let f_count = filters.shape()[3];
    let jobs: Vec<(usize, usize)> = (0..grids.len()).flat_map(|g| (0..f_count).map(move |f| (g, f))).collect();
    crate::par::map_indexed(&jobs, |_, &(g, f)| scan(&grids[g], &filters, &bias, f))
        .into_iter()
        .collect()
}

/// Recomputes a record's activation with the general convolution routine.
pub fn recompute_activation(weights: &ModelWeights, grid: &LevelGrid, record: &ActivationRecord) -> Result<f64> {
    let (filters, bias) = first_chunk_filters(weights)?;
    let patch = patch_tensor(grid, record.x, record.y, record.patch_size)?;
    let out = ops::conv2d(&patch, &filters, Some(&bias), Padding::Valid)?;
    Ok(out.data()[record.filter])
}

/// Records sorted by descending activation, as a TSV with a rank column.
pub fn activation_index_tsv(records: &[ActivationRecord], palette: &Palette) -> String {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].activation.total_cmp(&records[a].activation).then(a.cmp(&b)));
    let mut out = String::from("rank\tfilter\tlevel\tx\ty\tactivation\tfile\tpatch\n");
    for (rank, &i) in order.iter().enumerate() {
        let r = &records[i];
        let patch: String = r
            .patch
            .chunks(r.patch_size)
            .map(|row| row.iter().map(|&t| palette.tile(t).ch).collect::<String>())
            .collect::<Vec<_>>()
            .join("/");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.12e}\t{}\t{patch}",
            rank + 1,
            r.filter,
            r.level_index,
            r.x,
            r.y,
            r.activation,
            record_stem(r)
        );
    }
    out
}

/// File stem used for a record's image and text renderings.
pub fn record_stem(r: &ActivationRecord) -> String {
    format!("level{:02}_filter{}", r.level_index, r.filter)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendering {
    /// Binary portable pixmap.
    pub ppm: Vec<u8>,
    /// One palette character per cell, one line per row.
    pub ascii: String,
}

/// Renders a one-hot `[h, w, 17]` patch with `scale × scale` pixels per cell.
pub fn render_chunk(patch: &Tensor, palette: &Palette, scale: usize) -> Result<Rendering> {
    let (h, w, c) = patch.dims3()?;
    if c != TILE_CHANNELS {
        return Err(Error::Shape(format!("patch has {c} channels, expected {TILE_CHANNELS}")));
    }
    let mut tiles = Vec::with_capacity(h * w);
    for (i, cell) in patch.data().chunks_exact(c).enumerate() {
        let ones = cell.iter().filter(|&&v| v == 1.0).count();
        let zeros = cell.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::Argument(format!("cell ({}, {}) is not one-hot", i % w, i / w)));
        }
        tiles.push(cell.iter().position(|&v| v == 1.0).expect("one hot") as u8);
    }
    render_tiles(&tiles, w, h, palette, scale)
}

pub fn render_tiles(tiles: &[u8], width: usize, height: usize, palette: &Palette, scale: usize) -> Result<Rendering> {
    if scale == 0 || tiles.len() != width * height || width == 0 {
        return Err(Error::Argument(format!(
            "cannot render {} tiles as {width}×{height} at scale {scale}",
            tiles.len()
        )));
    }
    let mut ppm = format!("P6\n{} {}\n255\n", width * scale, height * scale).into_bytes();
    for row in tiles.chunks_exact(width) {
        let mut line = Vec::with_capacity(width * scale * 3);
        for &t in row {
            let rgb = palette.tile(t).color;
            for _ in 0..scale {
                line.extend_from_slice(&rgb);
            }
        }
        for _ in 0..scale {
            ppm.extend_from_slice(&line);
        }
    }
    let mut ascii = String::with_capacity((width + 1) * height);
    for row in tiles.chunks_exact(width) {
        ascii.extend(row.iter().map(|&t| palette.tile(t).ch));
        ascii.push('\n');
    }
    Ok(Rendering { ppm, ascii })
}
