//! Argument parsing and command dispatch for the `tunet` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tunet_core::data::SynthConfig;

use crate::commands::{self, Inference, WallClock};
use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};

#[derive(Debug, Parser)]
#[command(name = "tunet", version, about = "Joint segmentation and multi-label classification of fluorescence images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Label frequency, labels-per-image histogram and co-occurrence.
    Stats(StatsArgs),
    /// Train, fit per-class thresholds and report validation metrics.
    Train(TrainArgs),
    /// Sweep the learning rate and print a suggestion.
    LrFind(LrFindArgs),
    /// Predict label sets with a checkpoint and thresholds.
    Predict(PredictArgs),
    /// Classification metrics and mask dice on a labelled dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub imbalance: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; defaults to the dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config file, generic overrides and the common named overrides.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` file; `#` starts a comment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub val_fraction: Option<String>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then `--set`, then named flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            cfg.merge_text(&text, &path.display().to_string())?;
        }
        for a in &self.set {
            cfg.set_assignment(a)?;
        }
        let named = [
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("lr", &self.lr),
            ("max_epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("val_fraction", &self.val_fraction),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

/// A path given as a flag or, failing that, as a config key.
fn path_from(flag: &Option<PathBuf>, cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.get(key).map(PathBuf::from))
        .ok_or_else(|| CliError::config(format!("missing --{key} (or `{key}` in the config file)")))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct LrFindArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for `lrcurve.csv`; defaults to the current directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Inputs shared by `predict` and `eval`.
#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    /// Give every sample at least its most probable class.
    #[arg(long)]
    pub force_argmax: bool,
    /// Overrides on top of the configuration saved with the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl InferenceArgs {
    fn load(&self) -> Result<Inference> {
        let mut overrides = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            overrides.merge_text(&text, &path.display().to_string())?;
        }
        for a in &self.set {
            overrides.set_assignment(a)?;
        }
        if self.force_argmax {
            overrides.set("force_argmax", "true")?;
        }
        Inference::load(&self.checkpoint, &self.data, &self.thresholds, &overrides)
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub inputs: InferenceArgs,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: InferenceArgs,
    /// Directory for `metrics.csv` and `dice.csv`; defaults to the current directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn say(w: &mut dyn Write, line: String) -> Result<()> {
    writeln!(w, "{line}").at(Path::new("<stdout>"))
}

/// Run one parsed command. Results go to `stdout`, progress notes to `stderr`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                n: a.n,
                classes: a.classes,
                side: a.side,
                seed: a.seed,
                imbalance: a.imbalance,
            };
            let ds = commands::synth(&a.out, &cfg)?;
            say(stdout, format!("wrote {} samples to {}", ds.len(), a.out.display()))
        }
        Command::Stats(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.data.clone());
            let s = commands::stats(&a.data, &out)?;
            say(stdout, format!("class frequencies {:?}", s.frequency))?;
            say(stdout, format!("labels per image {:?}", s.histogram))
        }
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            let data = path_from(&a.data, &cfg, "data")?;
            let out = path_from(&a.out, &cfg, "out")?;
            let r = commands::train_cmd(&data, &out, &cfg, &mut WallClock::default())?;
            say(stdout, format!("epochs {} (best {}), stopped by {:?}", r.epochs, r.best_epoch, r.stop))?;
            say(stdout, format!("thresholds {:?}", r.thresholds.as_slice()))?;
            say(
                stdout,
                format!(
                    "validation macro F1 {:.4} fitted, {:.4} at 0.5",
                    r.fitted.macro_f1(),
                    r.fixed.macro_f1()
                ),
            )
        }
        Command::LrFind(a) => {
            let cfg = a.config.resolve()?;
            let data = path_from(&a.data, &cfg, "data")?;
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let r = commands::lr_find_cmd(&data, &out, &cfg)?;
            let div = r.divergence_lr.map_or("none".to_string(), |d| d.to_string());
            say(
                stderr,
                format!("{} steps, loss minimum at lr {}, divergence at {div}", r.curve.len(), r.min_lr),
            )?;
            say(stdout, r.suggested.to_string())
        }
        Command::Predict(a) => {
            let inf = a.inputs.load()?;
            let pred = commands::predict_cmd(&inf, &a.out)?;
            say(stdout, format!("wrote {} predictions to {}", pred.rows(), a.out.display()))
        }
        Command::Eval(a) => {
            let inf = a.inputs.load()?;
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let r = commands::eval_cmd(&inf, &out)?;
            say(stdout, format!("macro F1 {:.4}, micro F1 {:.4}", r.scores.macro_f1(), r.scores.micro_f1()))?;
            say(stdout, format!("mean mask dice {:.4}", r.mean_dice))
        }
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
