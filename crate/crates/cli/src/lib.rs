//! Command-line driver: `gen-data`, `train`, `eval` and `visualize` on top of
//! the `hclnet` library. Every command reads a [`RunConfig`], applies flag
//! overrides and records the effective config as `<out>/<command>.manifest`.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ParseError, RunConfig};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "hclnet", version, about = "Complementary two-branch CAM localization on synthetic data")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override config file values; accepted before or after the
/// subcommand.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Config file; unset keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// max, addition or l1norm.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// ccam or threshold.
    #[arg(long, global = true)]
    pub cam_mode: Option<String>,
    #[arg(long, global = true, value_name = "DELTA")]
    pub erase_threshold: Option<f32>,
    #[arg(long, global = true, value_name = "TAU")]
    pub bbox_tau: Option<f32>,
    /// Localize with branch A's CAM only.
    #[arg(long, global = true)]
    pub single_branch: bool,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and test splits under `<out>/data`.
    GenData,
    /// Train on `<out>/data/train`, writing `<out>/model.ckpt` and `<out>/train_log.csv`.
    Train,
    /// Score a checkpoint on `<out>/data/test`.
    Eval {
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Run all six {ccam, threshold} × {max, addition, l1norm} combinations.
        #[arg(long)]
        grid: bool,
    },
    /// Dump the maps and an overlay for one test sample.
    Visualize {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Sample id, e.g. `test_00003`.
        #[arg(long, value_name = "ID")]
        sample: String,
    },
}

impl Overrides {
    /// Loads the config file (or the defaults) and applies every flag.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let mut set = |key: &str, value: String| config.set(key, &value).map_err(CliError::Usage);
        if let Some(v) = self.seed {
            set("seed", v.to_string())?;
        }
        if let Some(v) = &self.strategy {
            set("eval.strategy", v.clone())?;
        }
        if let Some(v) = &self.cam_mode {
            set("train.cam_mode", v.clone())?;
        }
        if let Some(v) = self.erase_threshold {
            set("train.erase_threshold", v.to_string())?;
        }
        if let Some(v) = self.bbox_tau {
            set("eval.bbox_tau", v.to_string())?;
        }
        if self.single_branch {
            set("eval.single_branch", "true".into())?;
        }
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

/// Runs a parsed command line, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let config = cli.overrides.resolve()?;
    let default_checkpoint = || commands::Layout::new(&config.out).checkpoint();
    match &cli.command {
        Command::GenData => commands::gen_data(&config, out).map(drop),
        Command::Train => commands::train(&config, out).map(drop),
        Command::Eval { checkpoint, grid } => {
            let ckpt = checkpoint.clone().unwrap_or_else(default_checkpoint);
            commands::eval(&config, &ckpt, *grid, out).map(drop)
        }
        Command::Visualize { checkpoint, sample } => {
            let ckpt = checkpoint.clone().unwrap_or_else(default_checkpoint);
            commands::visualize(&config, &ckpt, sample, out).map(drop)
        }
    }
}

/// Full entry point: parses `args` (including the program name), runs the
/// command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "hclnet: {e}");
            e.exit_code()
        }
    }
}
