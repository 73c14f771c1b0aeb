//! The two-headed network: a logs head over the transposed event window, a
//! chunks head applied to each of three level chunks, and a dense trunk.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DataPoint, CHUNKS_PER_POINT, WINDOW};
use crate::error::{Error, Result};
use crate::labels::{Metric, RankLabel};
use crate::levels::{CHUNK_SIZE, TILE_CHANNELS};
use crate::logs::COLUMNS;
use crate::nn::layers::{self, stack_output_shape, stack_param_shapes, Tape};
use crate::nn::gradcheck::{relative_error, FD_STEP};
use crate::nn::ops;
use crate::nn::{GradBuffer, Layer, LayerSpec, Mode, Padding, ParamStore, PoolMode};
use crate::rng::{derive, seeded, Rng64};
use crate::tensor::Tensor;

pub const FULL_CONCAT_WIDTH: usize = 984;
pub const LEVEL_ONLY_CONCAT_WIDTH: usize = 600;
pub const CLASSES: usize = 3;

pub const LOGS_INPUT: [usize; 3] = [COLUMNS, WINDOW, 1];
pub const CHUNK_INPUT: [usize; 3] = [CHUNK_SIZE, CHUNK_SIZE, TILE_CHANNELS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    LevelOnly,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "level-only" => Ok(Variant::LevelOnly),
            _ => Err(Error::Argument(format!("unknown variant {s:?}, expected full or level-only"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::LevelOnly => "level-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub metric: Metric,
    pub variant: Variant,
    /// Empty for the level-only variant.
    pub logs_head: Vec<Layer>,
    /// Layer names are prefixed per chunk when weights are untied.
    pub chunks_head: Vec<Layer>,
    pub tied_chunk_weights: bool,
    pub keep: f64,
    pub hidden_units: usize,
    pub classes: usize,
}

fn conv(name: &str, filters: usize, size: usize) -> Layer {
    Layer::new(
        name,
        LayerSpec::Conv2d {
            filters,
            height: size,
            width: size,
            padding: Padding::Same,
        },
    )
}

fn pool(name: &str, size: usize, mode: PoolMode) -> Layer {
    Layer::new(
        name,
        LayerSpec::Maxpool2d {
            height: size,
            width: size,
            mode,
        },
    )
}

impl ModelConfig {
    pub fn full(metric: Metric) -> Self {
        ModelConfig {
            metric,
            variant: Variant::Full,
            logs_head: vec![
                conv("logs.conv1", 8, 5),
                Layer::new("logs.relu1", LayerSpec::Relu),
                pool("logs.pool", 3, PoolMode::TflearnQuirk),
                conv("logs.conv2", 16, 3),
                Layer::new("logs.relu2", LayerSpec::Relu),
                Layer::new("logs.flatten", LayerSpec::Flatten),
            ],
            chunks_head: vec![
                conv("conv1", 8, 5),
                Layer::new("relu1", LayerSpec::Relu),
                pool("pool", 2, PoolMode::Standard),
                conv("conv2", 8, 5),
                Layer::new("relu2", LayerSpec::Relu),
                Layer::new("flatten", LayerSpec::Flatten),
            ],
            tied_chunk_weights: true,
            keep: 0.98,
            hidden_units: 632,
            classes: CLASSES,
        }
    }

    pub fn level_only(metric: Metric) -> Self {
        build_level_only_variant(&ModelConfig::full(metric))
    }

    /// Chunk-head layers as applied to chunk `k`, with parameter names that
    /// are shared across chunks when weights are tied.
    pub fn chunk_head(&self, k: usize) -> Vec<Layer> {
        let prefix = if self.tied_chunk_weights {
            "chunks".to_string()
        } else {
            format!("chunks{k}")
        };
        self.chunks_head
            .iter()
            .map(|l| Layer::new(format!("{prefix}.{}", l.name), l.spec))
            .collect()
    }

    pub fn trunk(&self) -> Vec<Layer> {
        vec![
            Layer::new("dropout", LayerSpec::Dropout { keep: self.keep }),
            Layer::new("fc1", LayerSpec::Dense { units: self.hidden_units }),
            Layer::new("fc1.relu", LayerSpec::Relu),
            Layer::new("out", LayerSpec::Dense { units: self.classes }),
            Layer::new("softmax", LayerSpec::Softmax),
        ]
    }

    fn head_width(layers: &[Layer], input: &[usize], head: &str) -> Result<usize> {
        let shape = stack_output_shape(layers, input).map_err(|e| Error::Shape(format!("{head} head: {e}")))?;
        match shape.as_slice() {
            &[n] => Ok(n),
            s => Err(Error::Shape(format!("{head} head must end flat, ends at {s:?}"))),
        }
    }

    pub fn logs_width(&self) -> Result<usize> {
        match self.variant {
            Variant::Full => Self::head_width(&self.logs_head, &LOGS_INPUT, "logs"),
            Variant::LevelOnly => Ok(0),
        }
    }

    pub fn chunk_width(&self) -> Result<usize> {
        Self::head_width(&self.chunk_head(0), &CHUNK_INPUT, "chunks")
    }

    pub fn concat_width(&self) -> Result<usize> {
        Ok(CHUNKS_PER_POINT * self.chunk_width()? + self.logs_width()?)
    }

    /// Checks layer consistency and the fixed concat widths.
    pub fn validate(&self) -> Result<()> {
        if self.variant == Variant::LevelOnly && !self.logs_head.is_empty() {
            return Err(Error::Config("level-only variant must not have a logs head".into()));
        }
        let expected = match self.variant {
            Variant::Full => FULL_CONCAT_WIDTH,
            Variant::LevelOnly => LEVEL_ONLY_CONCAT_WIDTH,
        };
        let width = self.concat_width()?;
        if width != expected {
            return Err(Error::Shape(format!("concat width is {width}, {} model needs {expected}", self.variant)));
        }
        if self.classes != CLASSES {
            return Err(Error::Config(format!("output must have {CLASSES} classes, got {}", self.classes)));
        }
        stack_output_shape(&self.trunk(), &[width]).map(|_| ())
    }

    /// `(name, shape)` of every parameter, in initialisation order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        if self.variant == Variant::Full {
            out.extend(stack_param_shapes(&self.logs_head, &LOGS_INPUT)?);
        }
        for k in 0..CHUNKS_PER_POINT {
            for entry in stack_param_shapes(&self.chunk_head(k), &CHUNK_INPUT)? {
                if !out.iter().any(|(n, _)| *n == entry.0) {
                    out.push(entry);
                }
            }
        }
        out.extend(stack_param_shapes(&self.trunk(), &[self.concat_width()?])?);
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

/// Drops the logs head, leaving everything else unchanged.
pub fn build_level_only_variant(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        variant: Variant::LevelOnly,
        logs_head: Vec::new(),
        ..config.clone()
    }
}

/// A configured network with its parameters.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub palette_fingerprint: [u8; 32],
    pub seed: u64,
}

struct PointTape {
    logs: Option<Tape>,
    chunks: Vec<Tape>,
    trunk: Tape,
    widths: Vec<usize>,
    probs: Tensor,
}

impl ModelWeights {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(config: ModelConfig, palette_fingerprint: [u8; 32], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut params = ParamStore::new();
        if config.variant == Variant::Full {
            layers::init_stack_params(&config.logs_head, &LOGS_INPUT, &mut params, &mut rng)?;
        }
        for k in 0..CHUNKS_PER_POINT {
            layers::init_stack_params(&config.chunk_head(k), &CHUNK_INPUT, &mut params, &mut rng)?;
        }
        layers::init_stack_params(&config.trunk(), &[config.concat_width()?], &mut params, &mut rng)?;
        Ok(ModelWeights {
            config,
            params,
            palette_fingerprint,
            seed,
        })
    }

    /// Every weight and bias zero.
    pub fn zeros(config: ModelConfig, palette_fingerprint: [u8; 32]) -> Result<Self> {
        let mut w = ModelWeights::init(config, palette_fingerprint, 0)?;
        for (_, p) in w.params.iter_mut() {
            p.value.fill(0.0);
        }
        Ok(w)
    }

    pub fn config_fingerprint(&self) -> [u8; 32] {
        self.config.fingerprint()
    }

    /// Every parameter the config implies is present with the right shape,
    /// and nothing else.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.param_shapes()?;
        if expected.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "config implies {} parameter tensors, weights hold {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            let p = self
                .params
                .get(&name)
                .map_err(|_| Error::Incompatible(format!("missing parameter {name}")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Incompatible(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Rejects weights trained under a different palette or architecture.
    pub fn check_compatible(&self, palette_fingerprint: &[u8; 32], config: Option<&ModelConfig>) -> Result<()> {
        if &self.palette_fingerprint != palette_fingerprint {
            return Err(Error::Incompatible(format!(
                "palette fingerprint {} does not match {}",
                hex(&self.palette_fingerprint),
                hex(palette_fingerprint)
            )));
        }
        if let Some(c) = config {
            if c.fingerprint() != self.config_fingerprint() {
                return Err(Error::Incompatible(format!(
                    "config fingerprint {} does not match {}",
                    hex(&self.config_fingerprint()),
                    hex(&c.fingerprint())
                )));
            }
        }
        Ok(())
    }

    fn check_inputs(&self, log_window: &Tensor, chunks: &Tensor) -> Result<()> {
        if log_window.shape() != [WINDOW, COLUMNS] {
            return Err(Error::Shape(format!(
                "logs head: expected log window [{WINDOW}, {COLUMNS}], got {:?}",
                log_window.shape()
            )));
        }
        let want = [CHUNKS_PER_POINT, CHUNK_SIZE, CHUNK_SIZE, TILE_CHANNELS];
        if chunks.shape() != want {
            return Err(Error::Shape(format!("chunks head: expected {want:?}, got {:?}", chunks.shape())));
        }
        Ok(())
    }

    fn forward_tape(&self, log_window: &Tensor, chunks: &Tensor, mode: &mut Mode<'_>) -> Result<PointTape> {
        self.check_inputs(log_window, chunks)?;
        let mut parts = Vec::with_capacity(CHUNKS_PER_POINT + 1);
        let mut chunk_tapes = Vec::with_capacity(CHUNKS_PER_POINT);
        let chunk_len: usize = CHUNK_INPUT.iter().product();
        for (k, data) in chunks.data().chunks_exact(chunk_len).enumerate() {
            let input = Tensor::new(CHUNK_INPUT.to_vec(), data.to_vec())?;
            let (out, tape) = layers::forward(&self.config.chunk_head(k), &self.params, input, &mut Mode::inference())?;
            parts.push(out);
            chunk_tapes.push(tape);
        }
        let logs = if self.config.variant == Variant::Full {
            // window is time × column; the head reads column × time
            let src = log_window.data();
            let transposed = (0..COLUMNS)
                .flat_map(|e| (0..WINDOW).map(move |k| src[k * COLUMNS + e]))
                .collect();
            let input = Tensor::new(LOGS_INPUT.to_vec(), transposed)?;
            let (out, tape) = layers::forward(&self.config.logs_head, &self.params, input, &mut Mode::inference())?;
            parts.push(out);
            Some(tape)
        } else {
            None
        };
        let widths: Vec<usize> = parts.iter().map(Tensor::len).collect();
        let concat = ops::concat(&parts.iter().collect::<Vec<_>>());
        let (probs, trunk) = layers::forward(&self.config.trunk(), &self.params, concat, mode)?;
        Ok(PointTape {
            logs,
            chunks: chunk_tapes,
            trunk,
            widths,
            probs,
        })
    }

    /// Class probabilities for one input. Dropout is active only when
    /// `training` is set, in which case `rng` is required.
    pub fn forward(&self, log_window: &Tensor, chunks: &Tensor, training: bool, rng: Option<&mut Rng64>) -> Result<Tensor> {
        let mut mode = Mode { training, rng };
        Ok(self.forward_tape(log_window, chunks, &mut mode)?.probs)
    }

    pub fn predict_point(&self, point: &DataPoint) -> Result<[f64; CLASSES]> {
        let p = self.forward(&point.log_window, &point.chunks, false, None)?;
        Ok([p.data()[0], p.data()[1], p.data()[2]])
    }

    /// Loss for one point, adding `scale ·` its gradient into `grads`.
    fn point_loss_and_grads(
        &self,
        point: &DataPoint,
        mode: &mut Mode<'_>,
        scale: f64,
        grads: &mut GradBuffer,
    ) -> Result<f64> {
        let tape = self.forward_tape(&point.log_window, &point.chunks, mode)?;
        let label = point.label.index();
        let loss = ops::cross_entropy_loss(&tape.probs, label)?;
        let mut g = ops::cross_entropy_logit_grad(&tape.probs, label)?;
        g.scale(scale);
        // start from the logits: the softmax is folded into the loss gradient
        let trunk = layers::truncate_tape(tape.trunk, 1);
        let g_concat = layers::backward(&trunk, &self.params, g, grads)?;
        let pieces = ops::concat_backward(&g_concat, &tape.widths);
        for (t, gk) in tape.chunks.iter().zip(&pieces) {
            layers::backward(t, &self.params, gk.clone(), grads)?;
        }
        if let Some(t) = &tape.logs {
            layers::backward(t, &self.params, pieces[CHUNKS_PER_POINT].clone(), grads)?;
        }
        Ok(loss)
    }

    /// Mean cross-entropy over `batch` and its gradient, without touching
    /// the parameters. Point `i` draws its dropout mask from stream `i` of
    /// `batch_seed`, and partial sums are reduced in a fixed order, so the
    /// result does not depend on thread count.
    pub fn batch_gradients(&self, batch: &[DataPoint], training: bool, batch_seed: u64) -> Result<(f64, GradBuffer)> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        const GROUP: usize = 4;
        let scale = 1.0 / batch.len() as f64;
        let groups: Vec<&[DataPoint]> = batch.chunks(GROUP).collect();
        let partials = crate::par::map_indexed(&groups, |gi, group| -> Result<(f64, GradBuffer)> {
            let mut grads = GradBuffer::zeros_like(&self.params);
            let mut loss = 0.0;
            for (j, point) in group.iter().enumerate() {
                let mut rng = derive(batch_seed, &[(gi * GROUP + j) as u64]);
                let mut mode = Mode {
                    training,
                    rng: Some(&mut rng),
                };
                loss += self.point_loss_and_grads(point, &mut mode, scale, &mut grads)?;
            }
            Ok((loss, grads))
        });
        let mut total = 0.0;
        let mut grads: Option<GradBuffer> = None;
        for part in partials {
            let (l, g) = part?;
            total += l;
            match grads.as_mut() {
                Some(acc) => acc.merge(&g),
                None => grads = Some(g),
            }
        }
        Ok((total * scale, grads.expect("non-empty batch")))
    }

    /// Mean training-mode loss over `batch`; gradients are accumulated into
    /// the parameters ready for an optimizer step.
    pub fn loss_and_grads(&mut self, batch: &[DataPoint], rng: &mut Rng64) -> Result<f64> {
        let (loss, grads) = self.batch_gradients(batch, true, rng.gen())?;
        self.params.accumulate(&grads);
        Ok(loss)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const MAGIC: &[u8; 4] = b"AFWT";
const FORMAT_VERSION: u32 = 1;

/// Serialises weights to the little-endian container:
///
/// ```text
/// "AFWT" | u32 version | [32] config sha256 | [32] palette sha256
/// | u32 len, config JSON | u64 seed | u32 tensor count
/// | per tensor: u16 len, name | u8 rank | u64 dims… | f64 values…
/// | [32] sha256 of everything above
/// ```
pub fn encode_weights(w: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(w.params.scalar_count() * 8 + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&w.config_fingerprint());
    out.extend_from_slice(&w.palette_fingerprint);
    let json = w.config.to_json();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&w.seed.to_le_bytes());
    out.extend_from_slice(&(w.params.len() as u32).to_le_bytes());
    for (name, p) in w.params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checksum(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Checksum(format!("only {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checksum("not a weights file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum("checksum mismatch (truncated or modified)".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let config_fp: [u8; 32] = r.array()?;
    let palette_fingerprint: [u8; 32] = r.array()?;
    let json_len = r.u32()? as usize;
    let json = std::str::from_utf8(r.take(json_len)?).map_err(|e| Error::Checksum(format!("config text: {e}")))?;
    let config: ModelConfig =
        serde_json::from_str(json).map_err(|e| Error::Incompatible(format!("unreadable config: {e}")))?;
    if config.fingerprint() != config_fp {
        return Err(Error::Incompatible("stored config does not match its fingerprint".into()));
    }
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checksum(format!("tensor name: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checksum(format!("tensor {name} too large")))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Checksum(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let w = ModelWeights {
        config,
        params,
        palette_fingerprint,
        seed,
    };
    w.validate()?;
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_weights(w))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Loads weights and rejects them unless they were trained under `palette_fingerprint`
/// and, if given, exactly `config`.
pub fn load_weights_checked(
    path: &Path,
    palette_fingerprint: &[u8; 32],
    config: Option<&ModelConfig>,
) -> Result<ModelWeights> {
    let w = load_weights(path)?;
    w.check_compatible(palette_fingerprint, config)?;
    Ok(w)
}

/// Anything that maps a data point to class probabilities.
pub trait Predictor: Sync {
    fn predict(&self, point: &DataPoint) -> Result<[f64; CLASSES]>;
}

impl Predictor for ModelWeights {
    fn predict(&self, point: &DataPoint) -> Result<[f64; CLASSES]> {
        self.predict_point(point)
    }
}

/// Argmax with ties going to the lower class index.
pub fn predicted_label(probs: &[f64; CLASSES]) -> RankLabel {
    let mut best = 0;
    for k in 1..CLASSES {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    RankLabel::ALL[best]
}

/// Random point with binary log cells and one-hot chunks.
pub fn random_point(rng: &mut Rng64, label: RankLabel) -> DataPoint {
    let log: Vec<f64> = (0..WINDOW * COLUMNS).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
    let mut chunks = vec![0.0; CHUNKS_PER_POINT * CHUNK_SIZE * CHUNK_SIZE * TILE_CHANNELS];
    for cell in chunks.chunks_exact_mut(TILE_CHANNELS) {
        cell[rng.gen_range(0..TILE_CHANNELS)] = 1.0;
    }
    DataPoint {
        log_window: Tensor::new(vec![WINDOW, COLUMNS], log).unwrap(),
        chunks: Tensor::new(vec![3, 10, 10, 17], chunks).unwrap(),
        label,
        session_id: 0,
        timestep_index: 9,
    }
}

/// Worst relative error between backprop and central differences of the
/// batch loss, dropout off, over the largest and some random entries of
/// every parameter tensor.
pub fn end_to_end_grad_check(variant: Variant, seed: u64) -> Result<f64> {
    let cfg = match variant {
        Variant::Full => ModelConfig::full(Metric::Fun),
        Variant::LevelOnly => ModelConfig::level_only(Metric::Fun),
    };
    let mut w = ModelWeights::init(cfg, [0; 32], seed)?;
    let mut rng = derive(seed, &[1]);
    for (_, p) in w.params.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let batch: Vec<DataPoint> = (0..2).map(|i| random_point(&mut rng, RankLabel::ALL[i + 1])).collect();
    let (_, grads) = w.batch_gradients(&batch, false, 0)?;
    let names = w.params.names().to_vec();
    let mut worst: f64 = 0.0;
    for name in names {
        let slot = w.params.slot(&name)?;
        let g = grads.get(slot).data().to_vec();
        let mut probe: Vec<usize> = (0..g.len()).collect();
        probe.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        probe.truncate(4);
        probe.extend((0..4).map(|_| rng.gen_range(0..g.len())));
        for i in probe {
            let orig = w.params.get(&name).unwrap().value.data()[i];
            let mut at = |v: f64| {
                w.params.get_mut(&name).unwrap().value.data_mut()[i] = v;
                w.batch_gradients(&batch, false, 0).unwrap().0
            };
            let numeric = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
            w.params.get_mut(&name).unwrap().value.data_mut()[i] = orig;
            // absolute floor: entries whose true gradient is below FD noise
            if g[i].abs().max(numeric.abs()) > 1e-7 {
                worst = worst.max(relative_error(g[i], numeric));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::pool_output_dims;
    use approx::assert_relative_eq;

    const PALETTE: [u8; 32] = [7; 32];

    #[test]
    fn shape_contract() {
        let c = ModelConfig::full(Metric::Fun);
        c.validate().unwrap();
        assert_eq!(pool_output_dims(37, 10, 3, 3, PoolMode::TflearnQuirk).unwrap(), (12, 2));
        assert_eq!(c.logs_width().unwrap(), 12 * 2 * 16);
        assert_eq!(c.chunk_width().unwrap(), 5 * 5 * 8);
        assert_eq!(CHUNKS_PER_POINT * c.chunk_width().unwrap(), 600);
        assert_eq!(c.concat_width().unwrap(), 984);
        let lo = build_level_only_variant(&c);
        lo.validate().unwrap();
        assert_eq!(lo.concat_width().unwrap(), 600);
        let mut bad = c.clone();
        bad.hidden_units = 0;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.logs_head.remove(2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = seeded(1);
        for cfg in [ModelConfig::full(Metric::Fun), ModelConfig::level_only(Metric::Fun)] {
            let w = ModelWeights::init(cfg, PALETTE, 3).unwrap();
            let p = random_point(&mut rng, RankLabel::Mid);
            let probs = w.forward(&p.log_window, &p.chunks, false, None).unwrap();
            assert_eq!(probs.shape(), &[3]);
            assert!((probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_weights_are_uniform_with_ln3_loss() {
        let mut rng = seeded(2);
        for cfg in [ModelConfig::full(Metric::Challenge), ModelConfig::level_only(Metric::Challenge)] {
            let w = ModelWeights::zeros(cfg, PALETTE).unwrap();
            let batch: Vec<DataPoint> = (0..5).map(|i| random_point(&mut rng, RankLabel::ALL[i % 3])).collect();
            for p in &batch {
                let probs = w.predict_point(p).unwrap();
                for q in probs {
                    assert_relative_eq!(q, 1.0 / 3.0, epsilon = 1e-15);
                }
                assert_eq!(predicted_label(&probs), RankLabel::Most);
            }
            let (loss, _) = w.batch_gradients(&batch, true, 5).unwrap();
            // the loss adds a 1e-12 guard inside the log
            assert_relative_eq!(loss, -(1.0 / 3.0 + ops::LOG_EPSILON).ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_errors_name_the_head() {
        let w = ModelWeights::init(ModelConfig::full(Metric::Fun), PALETTE, 0).unwrap();
        let p = random_point(&mut seeded(0), RankLabel::Most);
        let e = w.forward(&Tensor::zeros(&[37, 10]), &p.chunks, false, None).unwrap_err();
        assert!(e.to_string().contains("logs head"), "{e}");
        let e = w.forward(&p.log_window, &Tensor::zeros(&[2, 10, 10, 17]), false, None).unwrap_err();
        assert!(e.to_string().contains("chunks head"), "{e}");
    }

    #[test]
    fn inference_ignores_seed_training_uses_it() {
        let w = ModelWeights::init(ModelConfig::full(Metric::Fun), PALETTE, 4).unwrap();
        let p = random_point(&mut seeded(9), RankLabel::Least);
        let a = w.forward(&p.log_window, &p.chunks, false, Some(&mut seeded(1))).unwrap();
        let b = w.forward(&p.log_window, &p.chunks, false, Some(&mut seeded(2))).unwrap();
        assert_eq!(a, b);
        let c = w.forward(&p.log_window, &p.chunks, true, Some(&mut seeded(1))).unwrap();
        let d = w.forward(&p.log_window, &p.chunks, true, Some(&mut seeded(1))).unwrap();
        assert_eq!(c, d);
        assert!(w.forward(&p.log_window, &p.chunks, true, None).is_err());
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let mut w = ModelWeights::zeros(ModelConfig::level_only(Metric::Fun), PALETTE).unwrap();
        w.params.get_mut("out.b").unwrap().value.data_mut()[1] = 60.0;
        let p = random_point(&mut seeded(3), RankLabel::Mid);
        let (loss, _) = w.batch_gradients(&[p], false, 0).unwrap();
        assert!(loss < 1e-12, "{loss}");
    }

    #[test]
    fn golden_output() {
        let w = ModelWeights::init(ModelConfig::full(Metric::Fun), PALETTE, 2024).unwrap();
        let p = random_point(&mut seeded(77), RankLabel::Most);
        let probs = w.predict_point(&p).unwrap();
        let golden = GOLDEN_PROBS;
        for (a, b) in probs.iter().zip(golden) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    // captured once from this implementation
    const GOLDEN_PROBS: [f64; 3] = [0.31571782877162946, 0.3540490592626333, 0.33023311196573724];

    #[test]
    fn tied_chunk_gradients_sum_the_untied_ones() {
        let tied_cfg = ModelConfig::level_only(Metric::Fun);
        let tied = ModelWeights::init(tied_cfg.clone(), PALETTE, 8).unwrap();
        let untied_cfg = ModelConfig {
            tied_chunk_weights: false,
            ..tied_cfg
        };
        let mut untied = ModelWeights::init(untied_cfg, PALETTE, 8).unwrap();
        for (name, p) in untied.params.iter_mut() {
            let shared = name.replacen(|c: char| c.is_ascii_digit(), "", 1);
            let shared = if name.starts_with("chunks") { shared } else { name.to_string() };
            p.value = tied.params.get(&shared).unwrap().value.clone();
        }
        let mut rng = seeded(5);
        let batch: Vec<DataPoint> = (0..2).map(|i| random_point(&mut rng, RankLabel::ALL[i])).collect();
        let (lt, gt) = tied.batch_gradients(&batch, false, 0).unwrap();
        let (lu, gu) = untied.batch_gradients(&batch, false, 0).unwrap();
        assert_relative_eq!(lt, lu, epsilon = 1e-12);
        for layer in ["conv1.w", "conv1.b", "conv2.w"] {
            let t = gt.get(tied.params.slot(&format!("chunks.{layer}")).unwrap());
            let mut sum = Tensor::zeros(t.shape());
            for k in 0..3 {
                sum.add_assign(gu.get(untied.params.slot(&format!("chunks{k}.{layer}")).unwrap()));
            }
            let worst = t.data().iter().zip(sum.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-12, "{layer}: {worst:e}");
            assert!(t.data().iter().any(|&v| v != 0.0));
        }
    }

    /// End-to-end finite differences on a 2-point batch, dropout off. Every
    /// tensor is probed at its largest-gradient entries and at random ones.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        for seed in 0..2 {
            let err = end_to_end_grad_check(Variant::Full, seed).unwrap();
            assert!(err < 1e-3, "seed {seed}: {err:e}");
        }
        let err = end_to_end_grad_check(Variant::LevelOnly, 9).unwrap();
        assert!(err < 1e-3, "level-only: {err:e}");
    }

    #[test]
    fn weights_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.afw");
        let w = ModelWeights::init(ModelConfig::full(Metric::Frustration), PALETTE, 11).unwrap();
        save_weights(&w, &path).unwrap();
        let back = load_weights_checked(&path, &PALETTE, Some(&w.config)).unwrap();
        assert_eq!(back.seed, 11);
        assert_eq!(back.config, w.config);
        assert_eq!(back.params.names(), w.params.names());
        for ((_, a), (_, b)) in w.params.iter().zip(back.params.iter()) {
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_weights(&back), std::fs::read(&path).unwrap());
    }

    #[test]
    fn weights_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.afw");
        let w = ModelWeights::init(ModelConfig::level_only(Metric::Fun), PALETTE, 1).unwrap();
        save_weights(&w, &path).unwrap();
        assert!(matches!(
            load_weights_checked(&path, &[0; 32], None),
            Err(Error::Incompatible(_))
        ));
        assert!(matches!(
            load_weights_checked(&path, &PALETTE, Some(&ModelConfig::full(Metric::Fun))),
            Err(Error::Incompatible(_))
        ));
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(decode_weights(&bytes[..bytes.len() - 100]), Err(Error::Checksum(_))));
        assert!(matches!(decode_weights(&bytes[..10]), Err(Error::Checksum(_))));
        let mut flipped = bytes.clone();
        flipped[500] ^= 1;
        assert!(matches!(decode_weights(&flipped), Err(Error::Checksum(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(predicted_label(&[0.2, 0.4, 0.4]), RankLabel::Mid);
        assert_eq!(predicted_label(&[0.5, 0.5, 0.0]), RankLabel::Most);
        assert_eq!(predicted_label(&[0.1, 0.2, 0.7]), RankLabel::Least);
    }
}
