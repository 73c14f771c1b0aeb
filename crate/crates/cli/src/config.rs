//! Run configuration: a flat `key = value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use affect_forge::dataset::{SplitUnit, WINDOW};
use affect_forge::labels::Metric;
use affect_forge::levels::Corpus;
use affect_forge::model::Variant;

/// Every key a config file may set; each has a `--kebab-case` flag twin.
pub const KEYS: &[&str] = &[
    "seed",
    "metric",
    "variant",
    "corpus",
    "levels_dir",
    "logs_dir",
    "labels",
    "ratings",
    "palette",
    "remap",
    "weights",
    "out_dir",
    "ordered_levels",
    "lr",
    "batch_size",
    "epochs",
    "keep",
    "window",
    "split_unit",
    "eval_split",
    "synth_kind",
    "synth_levels",
    "synth_players",
    "scale",
];

const PATH_KEYS: &[&str] = &[
    "levels_dir",
    "logs_dir",
    "labels",
    "ratings",
    "palette",
    "remap",
    "weights",
    "out_dir",
];

/// A configuration problem; reported with exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Played,
    Gwario,
    Smb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// `None` when neither file nor flags chose one.
    pub metric: Option<Metric>,
    pub variant: Variant,
    pub corpus: Option<Corpus>,
    pub levels_dir: Option<PathBuf>,
    pub logs_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    pub remap: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub ordered_levels: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub keep: f64,
    pub window: usize,
    pub split_unit: SplitUnit,
    pub eval_split: EvalSplit,
    pub synth_kind: SynthKind,
    pub synth_levels: usize,
    pub synth_players: usize,
    pub scale: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            metric: None,
            variant: Variant::Full,
            corpus: None,
            levels_dir: None,
            logs_dir: None,
            labels: None,
            ratings: None,
            palette: None,
            remap: None,
            weights: None,
            out_dir: PathBuf::from("out"),
            ordered_levels: false,
            lr: 7e-5,
            batch_size: 32,
            epochs: 15,
            keep: 0.98,
            window: WINDOW,
            split_unit: SplitUnit::Point,
            eval_split: EvalSplit::Test,
            synth_kind: SynthKind::Played,
            synth_levels: 6,
            synth_players: 2,
            scale: 8,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment. Relative paths are
/// resolved against `base`.
pub fn parse_config_text(text: &str, base: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("config line {}: expected `key = value`", n + 1));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return err(format!("config line {}: unknown key `{key}`", n + 1));
        }
        if map.contains_key(key) {
            return err(format!("config line {}: `{key}` set twice", n + 1));
        }
        let value = if PATH_KEYS.contains(&key) && Path::new(value).is_relative() {
            base.join(value).to_string_lossy().into_owned()
        } else {
            value.to_string()
        };
        map.insert(key.to_string(), value);
    }
    Ok(map)
}

pub fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    parse_config_text(&text, path.parent().unwrap_or(Path::new(".")))
}

fn parsed<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| ConfigError(format!("`{key}` = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(format!("`{key}` = {value:?}: expected true or false")),
    }
}

impl RunConfig {
    /// Builds a config from key/value pairs, checking every value.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        for (key, v) in map {
            let path = || Some(PathBuf::from(v));
            match key.as_str() {
                "seed" => c.seed = parsed(key, v)?,
                "metric" => c.metric = Some(parsed(key, v)?),
                "variant" => c.variant = parsed(key, v)?,
                "corpus" => c.corpus = Some(Corpus::parse(v).map_err(|e| ConfigError(e.to_string()))?),
                "levels_dir" => c.levels_dir = path(),
                "logs_dir" => c.logs_dir = path(),
                "labels" => c.labels = path(),
                "ratings" => c.ratings = path(),
                "palette" => c.palette = path(),
                "remap" => c.remap = path(),
                "weights" => c.weights = path(),
                "out_dir" => c.out_dir = PathBuf::from(v),
                "ordered_levels" => c.ordered_levels = parse_bool(key, v)?,
                "lr" => c.lr = parsed(key, v)?,
                "batch_size" => c.batch_size = parsed(key, v)?,
                "epochs" => c.epochs = parsed(key, v)?,
                "keep" => c.keep = parsed(key, v)?,
                "window" => c.window = parsed(key, v)?,
                "split_unit" => {
                    c.split_unit = match v.as_str() {
                        "point" => SplitUnit::Point,
                        "session" => SplitUnit::Session,
                        _ => return err(format!("`split_unit` = {v:?}: expected point or session")),
                    }
                }
                "eval_split" => {
                    c.eval_split = match v.as_str() {
                        "test" => EvalSplit::Test,
                        "all" => EvalSplit::All,
                        _ => return err(format!("`eval_split` = {v:?}: expected test or all")),
                    }
                }
                "synth_kind" => {
                    c.synth_kind = match v.as_str() {
                        "played" => SynthKind::Played,
                        "gwario" => SynthKind::Gwario,
                        "smb" => SynthKind::Smb,
                        _ => return err(format!("`synth_kind` = {v:?}: expected played, gwario or smb")),
                    }
                }
                "synth_levels" => c.synth_levels = parsed(key, v)?,
                "synth_players" => c.synth_players = parsed(key, v)?,
                "scale" => c.scale = parsed(key, v)?,
                _ => return err(format!("unknown key `{key}`")),
            }
        }
        c.check_hyperparameters()?;
        Ok(c)
    }

    fn check_hyperparameters(&self) -> Result<(), ConfigError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err(format!("`lr` must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.scale == 0 {
            return err("`batch_size`, `epochs` and `scale` must be positive");
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return err(format!("`keep` must be in (0, 1], got {}", self.keep));
        }
        if self.window != WINDOW {
            return err(format!("`window` must be {WINDOW}: the logs head is built for {WINDOW}-step windows"));
        }
        Ok(())
    }

    /// A path the command needs, which must also exist.
    pub fn require(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf, ConfigError> {
        match value {
            None => err(format!("`{key}` is required (config key or --{} flag)", key.replace('_', "-"))),
            Some(p) => {
                existing(key, p)?;
                Ok(p.clone())
            }
        }
    }

    /// An optional path that must exist when given.
    pub fn optional(&self, key: &str, value: &Option<PathBuf>) -> Result<Option<PathBuf>, ConfigError> {
        value.as_ref().map(|p| existing(key, p).map(|_| p.clone())).transpose()
    }
}

fn existing(key: &str, p: &Path) -> Result<(), ConfigError> {
    if p.exists() {
        Ok(())
    } else {
        err(format!("`{key}` path {} does not exist", p.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_follow_the_paper_hyperparameters() {
        let c = RunConfig::from_map(&BTreeMap::new()).unwrap();
        assert_eq!((c.lr, c.batch_size, c.epochs, c.keep, c.window), (7e-5, 32, 15, 0.98, 10));
    }

    #[test]
    fn file_parsing_resolves_paths_and_rejects_junk() {
        let m = parse_config_text("# run\nseed = 4\nlevels_dir = data/levels  # rel\nmetric=challenge\n", Path::new("/cfg")).unwrap();
        assert_eq!(m["levels_dir"], "/cfg/data/levels");
        let c = RunConfig::from_map(&m).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.metric, Some(Metric::Challenge));
        assert!(parse_config_text("nonsense\n", Path::new(".")).is_err());
        assert!(parse_config_text("colour = red\n", Path::new(".")).unwrap_err().0.contains("colour"));
        assert!(parse_config_text("seed = 1\nseed = 2\n", Path::new(".")).is_err());
    }

    #[test]
    fn bad_values_name_their_key() {
        for (k, v) in [("lr", "-1"), ("lr", "abc"), ("keep", "0"), ("window", "12"), ("epochs", "0"), ("variant", "huge")] {
            let e = RunConfig::from_map(&map(&[(k, v)])).unwrap_err();
            assert!(e.0.contains(k), "{k}: {e}");
        }
    }

    #[test]
    fn missing_required_path_is_named() {
        let c = RunConfig::from_map(&map(&[("labels", "/no/such/labels.tsv")])).unwrap();
        let e = c.require("labels", &c.labels).unwrap_err();
        assert!(e.0.contains("/no/such/labels.tsv"));
        assert!(c.require("ratings", &c.ratings).unwrap_err().0.contains("--ratings"));
    }
}
