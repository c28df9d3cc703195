//! Command-line front end. Exit codes: 0 success, 2 usage or config error,
//! 1 runtime failure.

mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, SynthMode};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<crate::train::TrainError> for CliError {
    fn from(e: crate::train::TrainError) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<crate::aggregate::AggregateError> for CliError {
    fn from(e: crate::aggregate::AggregateError) -> Self {
        Self::Runtime(e.into())
    }
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser, Debug)]
#[command(
    name = "sssl",
    version,
    about = "Segment classification under inherited-label noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda=0`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); 1 gives bit-reproducible runs
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        noise_rate: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Segment audio listed in a manifest and write a feature cache
    Featurize {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        segment_duration: Option<u32>,
        #[arg(long)]
        overlap: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the segment classifier on a feature cache
    TrainSegment {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Evaluate accuracy on this cache after every epoch
        #[arg(long)]
        held_out: Option<PathBuf>,
        /// Plain cross-entropy for every epoch
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Segment- and song-level metrics of a trained model
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Songs to evaluate
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Songs used to fit the song classifier
        #[arg(long)]
        train_cache: Option<PathBuf>,
        /// Use an existing song classifier instead of fitting one
        #[arg(long)]
        song_model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Song-level k-fold cross-validation of the full pipeline
    Cv {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict song classes for an audio file or a manifest
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        song_model: Option<PathBuf>,
        /// WAV file or manifest CSV
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-segment class probabilities here
        #[arg(long)]
        dump_segments: Option<PathBuf>,
        #[arg(long)]
        segment_duration: Option<u32>,
        #[arg(long)]
        overlap: Option<u32>,
        #[arg(long)]
        theta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .or_else(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text, path).map_err(CliError::Usage)?;
    }
    for pair in &common.set {
        cfg.apply_pair(pair).map_err(CliError::Usage)?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth {
            out,
            mode,
            noise_rate,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            set_path(&mut cfg.out, out);
            if let Some(m) = mode {
                cfg.synth_mode = m.parse().map_err(CliError::Usage)?;
            }
            set(&mut cfg.synth.noise_rate, noise_rate);
            with_threads(&cfg, || commands::synth(&cfg))
        }
        Command::Featurize {
            manifest,
            out,
            segment_duration,
            overlap,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            set_path(&mut cfg.manifest, manifest);
            set_path(&mut cfg.out, out);
            set(&mut cfg.segment_duration, segment_duration);
            set(&mut cfg.overlap, overlap);
            with_threads(&cfg, || commands::featurize(&cfg))
        }
        Command::TrainSegment {
            cache,
            model,
            metrics,
            held_out,
            baseline,
            epochs,
            lambda,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            set_path(&mut cfg.cache, cache);
            set_path(&mut cfg.model, model);
            set_path(&mut cfg.metrics, metrics);
            cfg.train.baseline |= baseline;
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.lambda, lambda);
            with_threads(&cfg, || commands::train_segment(&cfg, held_out.as_deref()))
        }
        Command::Eval {
            model,
            cache,
            train_cache,
            song_model,
            out,
            theta,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            set_path(&mut cfg.model, model);
            set_path(&mut cfg.cache, cache);
            set_path(&mut cfg.song_model, song_model);
            set_path(&mut cfg.out, out);
            set(&mut cfg.theta, theta);
            with_threads(&cfg, || commands::eval(&cfg, train_cache.as_deref()))
        }
        Command::Cv {
            cache,
            manifest,
            out,
            k,
            baseline,
            epochs,
            lambda,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            set_path(&mut cfg.cache, cache);
            set_path(&mut cfg.manifest, manifest);
            set_path(&mut cfg.out, out);
            set(&mut cfg.folds, k);
            cfg.train.baseline |= baseline;
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.lambda, lambda);
            with_threads(&cfg, || commands::cv(&cfg))
        }
        Command::Predict {
            model,
            song_model,
            input,
            out,
            dump_segments,
            segment_duration,
            overlap,
            theta,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            set_path(&mut cfg.model, model);
            set_path(&mut cfg.song_model, song_model);
            set_path(&mut cfg.out, out);
            set(&mut cfg.segment_duration, segment_duration);
            set(&mut cfg.overlap, overlap);
            set(&mut cfg.theta, theta);
            with_threads(&cfg, || {
                commands::predict(&cfg, input.as_deref(), dump_segments.as_deref())
            })
        }
    }
}

fn with_threads<F>(cfg: &RunConfig, f: F) -> Result<(), CliError>
where
    F: FnOnce() -> Result<(), CliError> + Send,
{
    cfg.validate().map_err(CliError::Usage)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    pool.install(f)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSSL_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}
