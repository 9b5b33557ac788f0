//! Command-line surface: subcommand dispatch, configuration loading,
//! output directory handling, exit codes (0 success, 1 validation error,
//! 2 runtime failure).

mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use thiserror::Error;

use config::{RawConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

const USAGE: &str = "\
usage: flowdistill <experiment> [--config <path>] [--set section.key=value]...

experiments:
  train-teacher    pretrain the drift network (and, for toytts, the
                   duration predictor) with the flow-matching loss
  distill          distill a trained teacher into a one-step generator
  sample           draw samples / synthesize held-out texts
  inpaint          regenerate the middle third of held-out utterances
  eval-sweep       token error rate vs duration scaling factor
  eval-diversity   pairwise DTW / duration distances over repeated samples
  selftest         run the built-in oracle and invariant checks

The output directory comes from [run] out_dir, resolved under $E1_OUT_DIR
when that is set. See README for the config grammar and all keys.";

pub fn run(args: Vec<String>) -> i32 {
    match run_inner(args) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("\n{USAGE}");
            }
            e.exit_code()
        }
    }
}

fn run_inner(args: Vec<String>) -> Result<String, CliError> {
    let mut experiment: Option<String> = None;
    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<String> = Vec::new();

    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => {
                let v = it.next().ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
                config_path = Some(PathBuf::from(v));
            }
            "--set" => {
                let v = it.next().ok_or_else(|| CliError::Usage("--set needs section.key=value".into()))?;
                overrides.push(v);
            }
            "--help" | "-h" => return Err(CliError::Usage("help requested".into())),
            other if experiment.is_none() && !other.starts_with('-') => {
                experiment = Some(other.to_string())
            }
            other => return Err(CliError::Usage(format!("unexpected argument `{other}`"))),
        }
    }
    let experiment = experiment.ok_or_else(|| CliError::Usage("missing experiment".into()))?;

    let mut raw = match &config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {path:?}: {e}")))?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    for o in &overrides {
        raw.set_dotted(o)?;
    }
    let cfg = RunConfig::from_raw(raw)?;

    let base = std::env::var("E1_OUT_DIR").unwrap_or_else(|_| ".".into());
    let out = PathBuf::from(base).join(&cfg.out_dir);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {out:?}: {e}")))?;

    let outcome = match experiment.as_str() {
        "train-teacher" => commands::train_teacher(&cfg, &out)?,
        "distill" => commands::distill(&cfg, &out)?,
        "sample" => commands::sample(&cfg, &out)?,
        "inpaint" => commands::inpaint(&cfg, &out)?,
        "eval-sweep" => commands::eval_sweep(&cfg, &out)?,
        "eval-diversity" => commands::eval_diversity(&cfg, &out)?,
        "selftest" => commands::selftest(&out)?,
        other => return Err(CliError::Usage(format!("unknown experiment `{other}`"))),
    };
    Ok(outcome.summary)
}
