//! Tile-grid levels: palette and remap configs, parsing, cropping,
//! cross-corpus remapping, and chunk extraction.
//!
//! Level files are plain character grids, one row per line, top row first.
//! Characters resolve through the remap table's `char` declarations first and
//! the palette second.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TILE_CHANNELS: usize = 17;
pub const LEVEL_HEIGHT: usize = 10;
pub const CHUNK_SIZE: usize = 10;
/// Columns to the left of the anchor column in a chunk; the rest go right.
pub const CHUNK_LEFT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileDef {
    pub name: String,
    pub ch: char,
    pub color: [u8; 3],
}

/// The 17 tile channels in order. Channel 0 is the empty/sky tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    tiles: Vec<TileDef>,
}

const DEFAULT_PALETTE: &str = include_str!("../../../configs/infinite-mario.palette");

impl Palette {
    pub fn infinite_mario() -> Self {
        Palette::parse(DEFAULT_PALETTE).expect("bundled palette is valid")
    }

    /// Parses `name = <char> #rrggbb` lines; line order is channel order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tiles = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, "expected `name = char #rrggbb`"))?;
            let name = name.trim();
            let parts: Vec<&str> = value.split_whitespace().collect();
            let [ch, color] = parts[..] else {
                return Err(Error::parse(i + 1, "expected `name = char #rrggbb`"));
            };
            let mut chars = ch.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::parse(i + 1, format!("tile character {ch:?} must be one char")));
            };
            tiles.push(TileDef {
                name: name.to_string(),
                ch: c,
                color: parse_color(color).ok_or_else(|| Error::parse(i + 1, format!("bad color {color:?}")))?,
            });
        }
        Palette::new(tiles)
    }

    pub fn new(tiles: Vec<TileDef>) -> Result<Self> {
        if tiles.len() != TILE_CHANNELS {
            return Err(Error::Config(format!(
                "palette needs {TILE_CHANNELS} tiles, got {}",
                tiles.len()
            )));
        }
        for (i, a) in tiles.iter().enumerate() {
            for b in &tiles[..i] {
                if a.name == b.name || a.ch == b.ch {
                    return Err(Error::Config(format!(
                        "palette entries {:?} and {:?} collide",
                        b.name, a.name
                    )));
                }
            }
        }
        Ok(Palette { tiles })
    }

    pub fn tiles(&self) -> &[TileDef] {
        &self.tiles
    }

    pub fn tile(&self, id: u8) -> &TileDef {
        &self.tiles[id as usize]
    }

    pub fn id_of_name(&self, name: &str) -> Option<u8> {
        self.tiles.iter().position(|t| t.name == name).map(|i| i as u8)
    }

    pub fn id_of_char(&self, ch: char) -> Option<u8> {
        self.tiles.iter().position(|t| t.ch == ch).map(|i| i as u8)
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tiles {
            let [r, g, b] = t.color;
            let _ = writeln!(out, "{} = {} #{r:02x}{g:02x}{b:02x}", t.name, t.ch);
        }
        out
    }

    /// SHA-256 of the canonical config text; changes with channel order.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_config_text().as_bytes()).into()
    }
}

fn parse_color(s: &str) -> Option<[u8; 3]> {
    let hex = s.strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let v = u32::from_str_radix(hex, 16).ok()?;
    Some([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemapTarget {
    Tile(String),
    Remove,
}

/// Translation of foreign tiles into the palette.
///
/// Config lines:
/// `char <c> = <foreign-name>` declares a character used by foreign files,
/// `map <name> = <palette-name|remove>` rewrites a tile everywhere, and
/// `bottom <name> = <palette-name|remove>` rewrites it on the lowest row only
/// (taking precedence over `map` there).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RemapTable {
    pub chars: BTreeMap<char, String>,
    pub map: BTreeMap<String, RemapTarget>,
    pub bottom: BTreeMap<String, RemapTarget>,
}

impl RemapTable {
    pub fn parse(text: &str, palette: &Palette) -> Result<Self> {
        let mut table = RemapTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = || Error::parse(i + 1, format!("expected `char|map|bottom <key> = <value>`, got {line:?}"));
            let (kind, rest) = line.split_once(char::is_whitespace).ok_or_else(err)?;
            let (key, value) = rest.split_once('=').ok_or_else(err)?;
            let (key, value) = (key.trim(), value.trim());
            match kind {
                "char" => {
                    let mut cs = key.chars();
                    let (Some(c), None) = (cs.next(), cs.next()) else {
                        return Err(Error::parse(i + 1, format!("{key:?} is not a single character")));
                    };
                    table.chars.insert(c, value.to_string());
                }
                "map" | "bottom" => {
                    let target = if value == "remove" {
                        RemapTarget::Remove
                    } else if palette.id_of_name(value).is_some() {
                        RemapTarget::Tile(value.to_string())
                    } else {
                        return Err(Error::Config(format!(
                            "line {}: remap target {value:?} is not in the palette",
                            i + 1
                        )));
                    };
                    let dst = if kind == "map" { &mut table.map } else { &mut table.bottom };
                    dst.insert(key.to_string(), target);
                }
                _ => return Err(err()),
            }
        }
        Ok(table)
    }
}

/// Rectangular character grid as read from a level file, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharGrid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<char>,
}

impl CharGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<Vec<char>> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .map(|l| l.chars().collect())
            .collect();
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::parse(1, "empty level"));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::parse(
                    i + 1,
                    format!("ragged row: {} characters, expected {width}", r.len()),
                ));
            }
        }
        Ok(CharGrid {
            width,
            height: rows.len(),
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn get(&self, x: usize, y: usize) -> char {
        self.cells[y * self.width + x]
    }

    pub fn crop(&self, spec: &CropSpec) -> Result<Self> {
        let (rows, width) = spec.check(self.width, self.height)?;
        let cells = rows
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| self.get(x, y))
            .collect();
        Ok(CharGrid {
            width,
            height: spec.output_height(self.height),
            cells,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in self.cells.chunks(self.width) {
            out.extend(row);
            out.push('\n');
        }
        out
    }
}

/// Keep the first `width` columns, drop rows from the top and optionally the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub width: usize,
    pub drop_top: usize,
    pub drop_bottom: bool,
}

impl CropSpec {
    fn output_height(&self, height: usize) -> usize {
        height - self.drop_top - usize::from(self.drop_bottom)
    }

    fn check(&self, width: usize, height: usize) -> Result<(std::ops::Range<usize>, usize)> {
        let dropped = self.drop_top + usize::from(self.drop_bottom);
        if self.width == 0 || self.width > width || dropped >= height {
            return Err(Error::Argument(format!(
                "cannot crop a {width}×{height} level to width {} dropping {dropped} rows",
                self.width
            )));
        }
        Ok((self.drop_top..height - usize::from(self.drop_bottom), self.width))
    }
}

/// The level corpora the pipeline knows how to normalise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corpus {
    InfiniteMario,
    Gwario,
    Smb,
}

impl Corpus {
    pub fn crop(self) -> CropSpec {
        match self {
            Corpus::InfiniteMario => CropSpec {
                width: 198,
                drop_top: 3,
                drop_bottom: true,
            },
            Corpus::Gwario => CropSpec {
                width: 172,
                drop_top: 3,
                drop_bottom: true,
            },
            Corpus::Smb => CropSpec {
                width: 150,
                drop_top: 4,
                drop_bottom: false,
            },
        }
    }

    /// Bundled tile remap for a foreign corpus; `None` for native levels.
    pub fn default_remap(self, palette: &Palette) -> Result<Option<RemapTable>> {
        let text = match self {
            Corpus::InfiniteMario => return Ok(None),
            Corpus::Gwario => include_str!("../../../configs/gwario.remap"),
            Corpus::Smb => include_str!("../../../configs/smb.remap"),
        };
        RemapTable::parse(text, palette).map(Some)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "infinite-mario" => Ok(Corpus::InfiniteMario),
            "gwario" => Ok(Corpus::Gwario),
            "smb" | "vglc" => Ok(Corpus::Smb),
            _ => Err(Error::Config(format!("unknown corpus {s:?}"))),
        }
    }
}

/// Grid of tile names, the form remapping operates on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameGrid {
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
}

impl NameGrid {
    pub fn from_chars(grid: &CharGrid, palette: &Palette, remap: Option<&RemapTable>) -> Result<Self> {
        let mut names = Vec::with_capacity(grid.cells.len());
        for (i, &c) in grid.cells.iter().enumerate() {
            let name = remap
                .and_then(|r| r.chars.get(&c).cloned())
                .or_else(|| palette.id_of_char(c).map(|id| palette.tile(id).name.clone()))
                .ok_or(Error::UnknownTile {
                    ch: c,
                    x: i % grid.width,
                    y: i / grid.width,
                })?;
            names.push(name);
        }
        Ok(NameGrid {
            width: grid.width,
            height: grid.height,
            names,
        })
    }

    pub fn remap(&self, table: &RemapTable, palette: &Palette) -> NameGrid {
        let empty = &palette.tile(0).name;
        let names = self
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let on_bottom = i / self.width == self.height - 1;
                let rule = on_bottom
                    .then(|| table.bottom.get(name))
                    .flatten()
                    .or_else(|| table.map.get(name));
                match rule {
                    Some(RemapTarget::Tile(t)) => t.clone(),
                    Some(RemapTarget::Remove) => empty.clone(),
                    None => name.clone(),
                }
            })
            .collect();
        NameGrid {
            width: self.width,
            height: self.height,
            names,
        }
    }
}

/// Level as tile ids, one channel per cell; `(x, y)` with `y = 0` the top row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelGrid {
    pub level_index: usize,
    pub width: usize,
    pub height: usize,
    tiles: Vec<u8>,
}

impl LevelGrid {
    pub fn from_tiles(level_index: usize, width: usize, height: usize, tiles: Vec<u8>) -> Result<Self> {
        if width * height != tiles.len() || tiles.iter().any(|&t| t as usize >= TILE_CHANNELS) {
            return Err(Error::Argument(format!(
                "{} tile ids do not form a valid {width}×{height} grid",
                tiles.len()
            )));
        }
        Ok(LevelGrid {
            level_index,
            width,
            height,
            tiles,
        })
    }

    pub fn from_names(level_index: usize, grid: &NameGrid, palette: &Palette) -> Result<Self> {
        let tiles = grid
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                palette.id_of_name(n).ok_or_else(|| {
                    Error::Config(format!(
                        "tile {n:?} at column {}, row {} has no palette channel",
                        i % grid.width,
                        i / grid.width
                    ))
                })
            })
            .collect::<Result<_>>()?;
        LevelGrid::from_tiles(level_index, grid.width, grid.height, tiles)
    }

    pub fn tile(&self, x: usize, y: usize) -> u8 {
        self.tiles[y * self.width + x]
    }

    pub fn tiles(&self) -> &[u8] {
        &self.tiles
    }

    pub fn to_names(&self, palette: &Palette) -> NameGrid {
        NameGrid {
            width: self.width,
            height: self.height,
            names: self.tiles.iter().map(|&t| palette.tile(t).name.clone()).collect(),
        }
    }

    pub fn crop(&self, spec: &CropSpec) -> Result<Self> {
        let (rows, width) = spec.check(self.width, self.height)?;
        let tiles = rows
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| self.tile(x, y))
            .collect();
        LevelGrid::from_tiles(self.level_index, width, spec.output_height(self.height), tiles)
    }

    pub fn remap(&self, table: &RemapTable, palette: &Palette) -> Result<Self> {
        LevelGrid::from_names(self.level_index, &self.to_names(palette).remap(table, palette), palette)
    }

    /// `height × width × 17` one-hot tensor.
    pub fn to_one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.height, self.width, TILE_CHANNELS]);
        let d = t.data_mut();
        for (i, &tile) in self.tiles.iter().enumerate() {
            d[i * TILE_CHANNELS + tile as usize] = 1.0;
        }
        t
    }

    pub fn to_ascii(&self, palette: &Palette) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in self.tiles.chunks(self.width) {
            out.extend(row.iter().map(|&t| palette.tile(t).ch));
            out.push('\n');
        }
        out
    }

    pub fn tile_counts(&self) -> [usize; TILE_CHANNELS] {
        let mut counts = [0; TILE_CHANNELS];
        for &t in &self.tiles {
            counts[t as usize] += 1;
        }
        counts
    }
}

/// Parses a level written in palette characters.
pub fn parse_level(text: &str, palette: &Palette, level_index: usize) -> Result<LevelGrid> {
    let chars = CharGrid::parse(text)?;
    LevelGrid::from_names(level_index, &NameGrid::from_chars(&chars, palette, None)?, palette)
}

/// Full normalisation of a level file: resolve characters, crop, remap.
pub fn load_level(
    text: &str,
    palette: &Palette,
    remap: Option<&RemapTable>,
    crop: Option<&CropSpec>,
    level_index: usize,
) -> Result<LevelGrid> {
    let mut chars = CharGrid::parse(text)?;
    if let Some(spec) = crop {
        chars = chars.crop(spec)?;
    }
    let mut names = NameGrid::from_chars(&chars, palette, remap)?;
    if let Some(table) = remap {
        names = names.remap(table, palette);
    }
    LevelGrid::from_names(level_index, &names, palette)
}

/// `*.txt` files of a directory in name order; position is the level index.
pub fn level_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no .txt level files in {}", dir.display())));
    }
    Ok(files)
}

pub fn load_level_dir(
    dir: &Path,
    palette: &Palette,
    remap: Option<&RemapTable>,
    crop: Option<&CropSpec>,
) -> Result<Vec<LevelGrid>> {
    level_files(dir)?
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            load_level(&text, palette, remap, crop, i).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// First column of the chunk anchored at `x`: four columns left of
/// `floor(x)`, shifted inward so all ten columns lie inside the level.
pub fn chunk_start(level_width: usize, x: f64) -> usize {
    let anchor = x.max(0.0).floor() as usize;
    anchor.saturating_sub(CHUNK_LEFT).min(level_width - CHUNK_SIZE)
}

/// `10 × 10 × 17` one-hot slice of a height-10 level around column `x`.
pub fn extract_chunk(grid: &LevelGrid, x: f64) -> Result<Tensor> {
    let mut out = Tensor::zeros(&[CHUNK_SIZE, CHUNK_SIZE, TILE_CHANNELS]);
    write_chunk(grid, x, out.data_mut())?;
    Ok(out)
}

/// Writes the chunk into a caller-provided buffer of `10·10·17` values.
pub fn write_chunk(grid: &LevelGrid, x: f64, dst: &mut [f64]) -> Result<()> {
    if grid.height != LEVEL_HEIGHT {
        return Err(Error::Shape(format!(
            "level {} is {} rows high, chunks need {LEVEL_HEIGHT}",
            grid.level_index, grid.height
        )));
    }
    if grid.width < CHUNK_SIZE {
        return Err(Error::Shape(format!(
            "level {} is only {} columns wide",
            grid.level_index, grid.width
        )));
    }
    debug_assert_eq!(dst.len(), CHUNK_SIZE * CHUNK_SIZE * TILE_CHANNELS);
    dst.fill(0.0);
    let x0 = chunk_start(grid.width, x);
    for y in 0..CHUNK_SIZE {
        for dx in 0..CHUNK_SIZE {
            let tile = grid.tile(x0 + dx, y) as usize;
            dst[(y * CHUNK_SIZE + dx) * TILE_CHANNELS + tile] = 1.0;
        }
    }
    Ok(())
}
