//! Sliding-window data points over a stacked log matrix, and train/val/test splits.

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::labels::RankLabel;
use crate::levels::{write_chunk, LevelGrid, CHUNK_SIZE, LEVEL_HEIGHT, TILE_CHANNELS};
use crate::logs::{LogMatrix, SessionSpan, COLUMNS, X_COLUMN};
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const WINDOW: usize = 10;
pub const CHUNKS_PER_POINT: usize = 3;
const CHUNK_LEN: usize = CHUNK_SIZE * CHUNK_SIZE * TILE_CHANNELS;

/// One model input with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    /// `window × 37`, oldest timestep first.
    pub log_window: Tensor,
    /// `3 × 10 × 10 × 17` one-hot chunks at the window's first, middle and last step.
    pub chunks: Tensor,
    pub label: RankLabel,
    /// Span index of the session owning the window's last timestep.
    pub session_id: usize,
    /// The window's last timestep in the stacked matrix.
    pub timestep_index: usize,
}

/// Positions inside a window where chunks are taken.
pub fn chunk_offsets(window: usize) -> [usize; CHUNKS_PER_POINT] {
    [0, window / 2, window - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowOptions {
    pub window: usize,
    /// Also emit windows ending before `window − 1`, repeating timestep 0 to
    /// fill them, so that every timestep yields exactly one point.
    pub pad_start: bool,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            window: WINDOW,
            pad_start: false,
        }
    }
}

#[derive(Debug)]
struct Source {
    logs: LogMatrix,
    grids: Vec<LevelGrid>,
    labels: Vec<RankLabel>,
    opts: WindowOptions,
}

/// A lazily materialised set of data points. Cloning and subsetting share
/// the underlying logs and grids.
#[derive(Debug, Clone)]
pub struct Dataset {
    source: Arc<Source>,
    ends: Vec<usize>,
}

/// Windows over `logs`, one per eligible timestep. `grids` is indexed by
/// [`SessionSpan::level`]; `labels` holds one label per span.
pub fn assemble_dataset(
    logs: LogMatrix,
    grids: Vec<LevelGrid>,
    labels: Vec<RankLabel>,
    opts: WindowOptions,
) -> Result<Dataset> {
    if opts.window < 1 {
        return Err(Error::Argument("window must be at least 1".into()));
    }
    if labels.len() != logs.spans.len() {
        let missing = logs.spans.get(labels.len()).map_or("?", |s| s.id.as_str()).to_string();
        return Err(Error::Session {
            session: missing,
            message: format!("{} labels for {} sessions", labels.len(), logs.spans.len()),
        });
    }
    let mut expected_start = 0;
    for span in &logs.spans {
        if span.start != expected_start {
            return Err(Error::Session {
                session: span.id.clone(),
                message: format!("starts at {}, expected {expected_start}", span.start),
            });
        }
        expected_start = span.end();
        let grid = grids.get(span.level).ok_or_else(|| Error::Session {
            session: span.id.clone(),
            message: format!("no level grid with index {}", span.level),
        })?;
        if grid.height != LEVEL_HEIGHT || grid.width < CHUNK_SIZE {
            return Err(Error::Shape(format!(
                "level {} is {}×{}, chunks need height {LEVEL_HEIGHT} and width ≥ {CHUNK_SIZE}",
                span.level, grid.width, grid.height
            )));
        }
    }
    if expected_start != logs.timesteps() {
        return Err(Error::Argument(format!(
            "sessions cover {expected_start} of {} timesteps",
            logs.timesteps()
        )));
    }
    let first = if opts.pad_start { 0 } else { opts.window - 1 };
    let ends: Vec<usize> = (first..logs.timesteps()).collect();
    Ok(Dataset {
        source: Arc::new(Source {
            logs,
            grids,
            labels,
            opts,
        }),
        ends,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn window(&self) -> usize {
        self.source.opts.window
    }

    pub fn spans(&self) -> &[SessionSpan] {
        &self.source.logs.spans
    }

    pub fn end_timestep(&self, i: usize) -> usize {
        self.ends[i]
    }

    pub fn session_of(&self, i: usize) -> usize {
        self.source.logs.span_of(self.ends[i])
    }

    pub fn label(&self, i: usize) -> RankLabel {
        self.source.labels[self.session_of(i)]
    }

    pub fn labels(&self) -> Vec<RankLabel> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn label_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for i in 0..self.len() {
            c[self.label(i).index()] += 1;
        }
        c
    }

    /// Points at the given positions, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            source: Arc::clone(&self.source),
            ends: indices.iter().map(|&i| self.ends[i]).collect(),
        }
    }

    /// Builds the `i`-th point.
    pub fn get(&self, i: usize) -> Result<DataPoint> {
        let src = &*self.source;
        let w = src.opts.window;
        let t = *self
            .ends
            .get(i)
            .ok_or_else(|| Error::Argument(format!("point {i} out of range 0..{}", self.len())))?;
        let step = |k: usize| (t + k).saturating_sub(w - 1);

        let mut log = Vec::with_capacity(w * COLUMNS);
        for k in 0..w {
            log.extend_from_slice(&src.logs.rows[step(k)]);
        }
        let mut chunks = vec![0.0; CHUNKS_PER_POINT * CHUNK_LEN];
        for (dst, off) in chunks.chunks_exact_mut(CHUNK_LEN).zip(chunk_offsets(w)) {
            let tau = step(off);
            let span = &src.logs.spans[src.logs.span_of(tau)];
            write_chunk(&src.grids[span.level], src.logs.rows[tau][X_COLUMN], dst)?;
        }
        let session_id = src.logs.span_of(t);
        Ok(DataPoint {
            log_window: Tensor::new(vec![w, COLUMNS], log)?,
            chunks: Tensor::new(vec![CHUNKS_PER_POINT, CHUNK_SIZE, CHUNK_SIZE, TILE_CHANNELS], chunks)?,
            label: src.labels[session_id],
            session_id,
            timestep_index: t,
        })
    }

    /// Builds the points at `indices`, in parallel where available.
    pub fn get_many(&self, indices: &[usize]) -> Result<Vec<DataPoint>> {
        crate::par::map_indexed(indices, |_, &i| self.get(i)).into_iter().collect()
    }

    pub fn materialize(&self) -> Result<Vec<DataPoint>> {
        self.get_many(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Number of points whose window spans more than one session.
    pub fn crossover_count(&self) -> usize {
        let w = self.source.opts.window;
        (0..self.len())
            .filter(|&i| {
                let t = self.ends[i];
                let s = t.saturating_sub(w - 1);
                self.source.logs.span_of(s) != self.source.logs.span_of(t)
            })
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    Point,
    /// Whole sessions go to one side; removes leakage between overlapping windows.
    Session,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub unit: SplitUnit,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed,
            unit: SplitUnit::Point,
        }
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("split fractions {parts:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    fn sizes(&self, n: usize) -> (usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train);
        (train, val)
    }
}

/// Deterministic shuffled partition into train, validation and test sets.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if data.len() < 10 {
        return Err(Error::Argument(format!("need at least 10 points to split, got {}", data.len())));
    }
    let mut rng = seeded(spec.seed);
    let groups: Vec<Vec<usize>> = match spec.unit {
        SplitUnit::Point => (0..data.len()).map(|i| vec![i]).collect(),
        SplitUnit::Session => {
            let mut by_session = vec![Vec::new(); data.spans().len()];
            for i in 0..data.len() {
                by_session[data.session_of(i)].push(i);
            }
            by_session.retain(|g| !g.is_empty());
            by_session
        }
    };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    let (n_train, n_val) = spec.sizes(groups.len());
    let collect = |range: std::ops::Range<usize>| -> Vec<usize> {
        order[range].iter().flat_map(|&g| groups[g].iter().copied()).collect()
    };
    Ok((
        data.subset(&collect(0..n_train)),
        data.subset(&collect(n_train..n_train + n_val)),
        data.subset(&collect(n_train + n_val..groups.len())),
    ))
}
