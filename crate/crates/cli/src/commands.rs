//! The pipeline behind each subcommand. Every output file is written
//! atomically and depends only on the config and its seed.

use std::path::{Path, PathBuf};

use affect_forge::analysis::{activation_index_tsv, max_activating_chunks, record_stem, render_tiles};
use affect_forge::dataset::{split, SplitSpec};
use affect_forge::fsutil::{read_text, write_atomic};
use affect_forge::labels::Metric;
use affect_forge::levels::{load_level_dir, Corpus, LevelGrid, Palette, RemapTable};
use affect_forge::logs::Kinematics;
use affect_forge::model::{load_weights_checked, save_weights, ModelConfig, ModelWeights, Variant};
use affect_forge::pipeline::{load_foreign_levels, load_played, ordered_dataset, rated_dataset, PlayedCorpus};
use affect_forge::synth::{generate, generate_gwario, generate_smb, SynthSpec};
use affect_forge::train::{challenge_ordering_report, evaluate, history_tsv, train, MetricsReport, TrainConfig};

use crate::config::{ConfigError, EvalSplit, RunConfig, SynthKind};

/// Why a command stopped: bad configuration (exit 2) or a pipeline error (exit 1).
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Pipeline(affect_forge::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Pipeline(affect_forge::Error::Config(_)) => 2,
            Failure::Pipeline(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<affect_forge::Error> for Failure {
    fn from(e: affect_forge::Error) -> Self {
        Failure::Pipeline(e)
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

/// Paths of the files a command wrote, in write order.
pub type Written = Vec<PathBuf>;

fn write(out: &mut Written, path: PathBuf, bytes: &[u8]) -> Outcome {
    write_atomic(&path, bytes)?;
    out.push(path);
    Ok(())
}

fn json<T: serde::Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

fn palette(cfg: &RunConfig) -> Outcome<Palette> {
    match cfg.optional("palette", &cfg.palette)? {
        Some(p) => Ok(Palette::parse(&read_text(&p)?)?),
        None => Ok(Palette::infinite_mario()),
    }
}

fn remap(cfg: &RunConfig, corpus: Corpus, palette: &Palette) -> Outcome<Option<RemapTable>> {
    match cfg.optional("remap", &cfg.remap)? {
        Some(p) => Ok(Some(RemapTable::parse(&read_text(&p)?, palette)?)),
        None => Ok(corpus.default_remap(palette)?),
    }
}

fn weights_path(cfg: &RunConfig) -> PathBuf {
    cfg.weights.clone().unwrap_or_else(|| cfg.out_dir.join("weights.afw"))
}

/// Loads trained weights and checks them against the palette and, when
/// set, the configured metric and variant.
fn trained_weights(cfg: &RunConfig, palette: &Palette) -> Outcome<ModelWeights> {
    let path = cfg.require("weights", &cfg.weights)?;
    let w = load_weights_checked(&path, &palette.fingerprint(), None)?;
    if let Some(m) = cfg.metric {
        if m != w.config.metric {
            return Err(Failure::Config(format!(
                "weights {} were trained for {}, not {m}",
                path.display(),
                w.config.metric
            )));
        }
    }
    Ok(w)
}

fn model_config(cfg: &RunConfig, metric: Metric) -> ModelConfig {
    let mut m = match cfg.variant {
        Variant::Full => ModelConfig::full(metric),
        Variant::LevelOnly => ModelConfig::level_only(metric),
    };
    m.keep = cfg.keep;
    m
}

fn played_dataset(cfg: &RunConfig, metric: Metric, palette: &Palette) -> Outcome<affect_forge::dataset::Dataset> {
    let levels_dir = cfg.require("levels_dir", &cfg.levels_dir)?;
    let logs_dir = cfg.require("logs_dir", &cfg.logs_dir)?;
    let labels = cfg.require("labels", &cfg.labels)?;
    let corpus = PlayedCorpus {
        levels_dir: &levels_dir,
        logs_dir: &logs_dir,
        labels: &labels,
    };
    Ok(load_played(&corpus, metric, palette, &Kinematics::default())?)
}

fn split_spec(cfg: &RunConfig) -> SplitSpec {
    SplitSpec {
        unit: cfg.split_unit,
        ..SplitSpec::new(cfg.seed)
    }
}

fn write_metrics(out: &mut Written, dir: &Path, report: &MetricsReport) -> Outcome {
    write(out, dir.join("metrics.tsv"), report.to_tsv().as_bytes())?;
    write(out, dir.join("metrics.json"), &json(report))
}

/// Ingest, split 80/10/10, train, and report on the held-out test set.
pub fn cmd_train(cfg: &RunConfig) -> Outcome<Written> {
    let palette = palette(cfg)?;
    let metric = cfg.metric.unwrap_or(Metric::Fun);
    let data = played_dataset(cfg, metric, &palette)?;
    let (train_set, val_set, test_set) = split(&data, &split_spec(cfg))?;
    let mut weights = ModelWeights::init(model_config(cfg, metric), palette.fingerprint(), cfg.seed)?;
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
        stop_at_train_accuracy: None,
    };
    let history = train(&mut weights, &train_set, Some(&val_set), &tc)?;
    let report = evaluate(&weights, &test_set)?;

    let mut out = Written::new();
    let wpath = weights_path(cfg);
    save_weights(&weights, &wpath)?;
    out.push(wpath);
    write(&mut out, cfg.out_dir.join("history.tsv"), history_tsv(&history).as_bytes())?;
    write_metrics(&mut out, &cfg.out_dir, &report)?;
    println!(
        "{metric} {}: {} train / {} val / {} test points, test accuracy {:.2}%",
        cfg.variant,
        train_set.len(),
        val_set.len(),
        test_set.len(),
        100.0 * report.accuracy
    );
    Ok(out)
}

/// Re-evaluates trained weights on the test split (or all points) of a played corpus.
pub fn cmd_eval(cfg: &RunConfig) -> Outcome<Written> {
    let palette = palette(cfg)?;
    let weights = trained_weights(cfg, &palette)?;
    let data = played_dataset(cfg, weights.config.metric, &palette)?;
    let target = match cfg.eval_split {
        EvalSplit::Test => split(&data, &split_spec(cfg))?.2,
        EvalSplit::All => data,
    };
    let report = evaluate(&weights, &target)?;
    let mut out = Written::new();
    write_metrics(&mut out, &cfg.out_dir, &report)?;
    println!("{} points, accuracy {:.2}%", report.count, 100.0 * report.accuracy);
    Ok(out)
}

/// Evaluates on levels without logs: rated (per-class report) or ordered (rank correlations).
pub fn cmd_crosseval(cfg: &RunConfig) -> Outcome<Written> {
    let palette = palette(cfg)?;
    let weights = trained_weights(cfg, &palette)?;
    let corpus = cfg
        .corpus
        .unwrap_or(if cfg.ordered_levels { Corpus::Smb } else { Corpus::Gwario });
    let levels_dir = cfg.require("levels_dir", &cfg.levels_dir)?;
    let table = remap(cfg, corpus, &palette)?
        .ok_or_else(|| Failure::Config("cross-domain levels need a remap table (`remap`)".into()))?;
    let grids = load_foreign_levels(&levels_dir, corpus, &palette, &table)?;
    let mut out = Written::new();
    if cfg.ordered_levels {
        let data = ordered_dataset(grids, cfg.seed)?;
        let report = challenge_ordering_report(&weights, &data)?;
        write(&mut out, cfg.out_dir.join("level_rates.tsv"), report.levels_tsv().as_bytes())?;
        write(&mut out, cfg.out_dir.join("correlations.tsv"), report.correlations_tsv().as_bytes())?;
        write(&mut out, cfg.out_dir.join("ordering.json"), &json(&report))?;
        print!("{}", report.correlations_tsv());
    } else {
        let ratings = cfg.require("ratings", &cfg.ratings)?;
        let data = rated_dataset(grids, &ratings, weights.config.metric, cfg.seed)?;
        let report = evaluate(&weights, &data)?;
        write_metrics(&mut out, &cfg.out_dir, &report)?;
        print!("{}", report.to_tsv());
    }
    Ok(out)
}

fn analysis_levels(cfg: &RunConfig, palette: &Palette) -> Outcome<Vec<LevelGrid>> {
    let corpus = cfg.corpus.unwrap_or(Corpus::InfiniteMario);
    let dir = cfg.require("levels_dir", &cfg.levels_dir)?;
    let table = remap(cfg, corpus, palette)?;
    let grids = load_level_dir(&dir, palette, table.as_ref(), Some(&corpus.crop()))?;
    if grids.is_empty() {
        return Err(Failure::Config(format!("no level files in {}", dir.display())));
    }
    Ok(grids)
}

/// Strongest first-layer chunk filter responses per level, with renderings.
pub fn cmd_analyze(cfg: &RunConfig) -> Outcome<Written> {
    let palette = palette(cfg)?;
    let weights = trained_weights(cfg, &palette)?;
    let grids = analysis_levels(cfg, &palette)?;
    let records = max_activating_chunks(&weights, &grids)?;
    let mut out = Written::new();
    write(&mut out, cfg.out_dir.join("activations.tsv"), activation_index_tsv(&records, &palette).as_bytes())?;
    write(&mut out, cfg.out_dir.join("activations.json"), &json(&records))?;
    let chunk_dir = cfg.out_dir.join("chunks");
    for r in &records {
        let img = render_tiles(&r.patch, r.patch_size, r.patch_size, &palette, cfg.scale)?;
        let stem = record_stem(r);
        write(&mut out, chunk_dir.join(format!("{stem}.ppm")), &img.ppm)?;
        write(&mut out, chunk_dir.join(format!("{stem}.txt")), img.ascii.as_bytes())?;
    }
    println!("{} records over {} levels", records.len(), grids.len());
    Ok(out)
}

/// Writes a synthetic corpus plus a ready-to-use config file next to it.
pub fn cmd_synth(cfg: &RunConfig) -> Outcome<Written> {
    let (files, run_cfg, cfg_name) = match cfg.synth_kind {
        SynthKind::Played => (
            generate(&SynthSpec::new(cfg.synth_levels, cfg.synth_players, cfg.seed))?,
            "levels_dir = levels\nlogs_dir = logs\nlabels = labels.tsv\n",
            "train.cfg",
        ),
        SynthKind::Gwario => (
            generate_gwario(cfg.seed),
            "corpus = gwario\nlevels_dir = levels\nratings = ratings.tsv\n",
            "crosseval.cfg",
        ),
        SynthKind::Smb => (
            generate_smb(cfg.seed),
            "corpus = smb\nlevels_dir = levels\nordered_levels = true\n",
            "crosseval.cfg",
        ),
    };
    files.write_to(&cfg.out_dir)?;
    let mut out: Written = files.files.iter().map(|(rel, _)| cfg.out_dir.join(rel)).collect();
    write(&mut out, cfg.out_dir.join(cfg_name), run_cfg.as_bytes())?;
    println!("{} files in {}", out.len(), cfg.out_dir.display());
    Ok(out)
}
