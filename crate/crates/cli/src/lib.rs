//! Argument handling for the `affect-forge` executable.

pub mod commands;
pub mod config;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Outcome};
use config::{load_config_file, RunConfig};

pub const THREADS_ENV: &str = "AFFECT_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "affect-forge", version, about = "Predict player affect from play logs and level structure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a played corpus, train, and report on the held-out test split
    Train(Overrides),
    /// Evaluate trained weights on a played corpus
    Eval(Overrides),
    /// Evaluate on levels without logs (rated levels, or --ordered-levels)
    Crosseval(Overrides),
    /// Find the level patches that most excite each first chunk filter
    Analyze(Overrides),
    /// Write a synthetic corpus with a planted signal
    Synth(Overrides),
    /// Run built-in gradient, oracle and statistics checks
    Selftest(Overrides),
}

/// One flag per config key; flags win over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub seed: Option<String>,
    /// fun, frustration or challenge
    #[arg(long)]
    pub metric: Option<String>,
    /// full or level-only
    #[arg(long)]
    pub variant: Option<String>,
    /// infinite-mario, gwario or smb
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub levels_dir: Option<String>,
    #[arg(long)]
    pub logs_dir: Option<String>,
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub ratings: Option<String>,
    #[arg(long)]
    pub palette: Option<String>,
    #[arg(long)]
    pub remap: Option<String>,
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
    /// Treat file-name order as the intended difficulty order
    #[arg(long)]
    pub ordered_levels: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub batch_size: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub epochs: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub keep: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
    /// point or session
    #[arg(long)]
    pub split_unit: Option<String>,
    /// test or all
    #[arg(long)]
    pub eval_split: Option<String>,
    /// played, gwario or smb
    #[arg(long)]
    pub synth_kind: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub synth_levels: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub synth_players: Option<String>,
    /// Pixels per tile in rendered chunks
    #[arg(long, allow_hyphen_values = true)]
    pub scale: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let fields: [(&'static str, &Option<String>); 23] = [
            ("seed", &self.seed),
            ("metric", &self.metric),
            ("variant", &self.variant),
            ("corpus", &self.corpus),
            ("levels_dir", &self.levels_dir),
            ("logs_dir", &self.logs_dir),
            ("labels", &self.labels),
            ("ratings", &self.ratings),
            ("palette", &self.palette),
            ("remap", &self.remap),
            ("weights", &self.weights),
            ("out_dir", &self.out_dir),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("keep", &self.keep),
            ("window", &self.window),
            ("split_unit", &self.split_unit),
            ("eval_split", &self.eval_split),
            ("synth_kind", &self.synth_kind),
            ("synth_levels", &self.synth_levels),
            ("synth_players", &self.synth_players),
            ("scale", &self.scale),
        ];
        let mut out: Vec<_> = fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .collect();
        if self.ordered_levels {
            out.push(("ordered_levels", "true".into()));
        }
        out
    }

    /// Config file values overlaid with flags.
    pub fn resolve(&self) -> Outcome<RunConfig> {
        let mut map = match &self.config {
            Some(path) => load_config_file(path)?,
            None => BTreeMap::new(),
        };
        for (k, v) in self.pairs() {
            map.insert(k.to_string(), v);
        }
        Ok(RunConfig::from_map(&map)?)
    }
}

fn apply_thread_cap() -> Outcome {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            affect_forge::par::limit_threads(n);
            Ok(())
        }
        _ => Err(Failure::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer"))),
    }
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = apply_thread_cap().and_then(|()| dispatch(cli.command));
    match result {
        Ok(code) => code,
        Err(f) => {
            let line = f.to_string().replace('\n', " ");
            eprintln!("affect-forge: {line}");
            f.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Outcome<i32> {
    let (opts, run): (&Overrides, fn(&RunConfig) -> Outcome<commands::Written>) = match &command {
        Command::Train(o) => (o, commands::cmd_train),
        Command::Eval(o) => (o, commands::cmd_eval),
        Command::Crosseval(o) => (o, commands::cmd_crosseval),
        Command::Analyze(o) => (o, commands::cmd_analyze),
        Command::Synth(o) => (o, commands::cmd_synth),
        Command::Selftest(o) => {
            let cfg = o.resolve()?;
            let results = selftest::run_checks(cfg.weights.as_deref());
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", results.len() - failed);
            return Ok(if failed == 0 { 0 } else { 1 });
        }
    };
    let cfg = opts.resolve()?;
    for path in run(&cfg)? {
        println!("wrote {}", path.display());
    }
    Ok(0)
}
