//! Command-line pipeline: prepare, embed, train, eval, predict, gradcheck.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use concat_core::{Error, ErrorKind, Result};

pub use commands::Context;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "concat", version, about = "Continuous-time cascade popularity prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window, filter and split the dataset; write split files and stats.
    Prepare(Common),
    /// Write global and per-cascade embedding tables.
    Embed(Common),
    /// Train a model and write checkpoint, log, metrics and predictions.
    Train(Common),
    /// Evaluate a checkpoint on every split, or recompute metrics from a
    /// predictions file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Predictions CSV; metrics are recomputed from it alone.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Predict popularity for the cascades in a file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a toy cascade.
    Gradcheck(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generate the synthetic fixture dataset instead of reading data.input.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub observation_time: Option<f64>,
    #[arg(long)]
    pub prediction_time: Option<f64>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_triplets: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub time_scale: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Override any config key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// Overrides in application order: named flags first, then `--set`.
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("data.synthetic", self.synthetic.then(|| "true".into()));
        push("data.observation_time", self.observation_time.map(toml_float));
        push("data.prediction_time", self.prediction_time.map(toml_float));
        push("data.min_size", self.min_size.map(|v| v.to_string()));
        push("data.max_triplets", self.max_triplets.map(|v| v.to_string()));
        push("data.split_seed", self.split_seed.map(|v| v.to_string()));
        push("data.time_scale", self.time_scale.map(toml_float));
        push("jobs", self.jobs.map(|v| v.to_string()));
        // Quoted so the path stays a string; resolved against the config dir.
        push("output_dir", self.output_dir.as_ref().map(|p| toml_string(&p.display().to_string())));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(o)
    }

    pub fn context(&self) -> Result<Context> {
        let loaded = config::load(self.config.as_deref(), &self.overrides()?)?;
        Ok(Context { config: loaded.config, source_text: loaded.source_text })
    }
}

fn toml_float(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    use commands::*;
    match command {
        Command::Prepare(c) => print_json(&cmd_prepare(&c.context()?)?),
        Command::Embed(c) => print_json(&cmd_embed(&c.context()?)?),
        Command::Train(c) => print_json(&cmd_train(&c.context()?)?),
        Command::Eval { common, checkpoint, records } => {
            let ctx = common.context()?;
            match records {
                Some(path) => print_json(&metrics_from_records(&path)?),
                None => print_json(&cmd_eval(&ctx, checkpoint.as_deref())?),
            }
        }
        Command::Predict { common, checkpoint, input, out } => {
            let ctx = common.context()?;
            let records = cmd_predict(&ctx, checkpoint.as_deref(), &input)?;
            match out {
                Some(path) => {
                    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    print_records(&mut f, &records)?;
                }
                None => print_records(&mut std::io::stdout().lock(), &records)?,
            }
        }
        Command::Gradcheck(c) => {
            let outcome = cmd_gradcheck(&c.context()?.config)?;
            print_json(&outcome);
            if !outcome.passed {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(EXIT_OK)
}
