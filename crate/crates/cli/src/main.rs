//! `lft`: synthesize, degrade, train, infer, evaluate and analyse from a
//! plain-text config.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when
//! training aborts on a non-finite value.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lft_core::{Error, Result};

use config::{parse_overrides, read_config_file, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Write synthetic light fields.
    Synth,
    /// Cut HR patches and their bicubic LR versions.
    Degrade,
    /// Train a model.
    Train,
    /// Super-resolve LR light fields.
    Infer,
    /// Score a model or bicubic upsampling against HR scenes.
    Eval,
    /// Local angular attention map and an EPI for one patch.
    Attn,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Degrade => "degrade",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Eval => "eval",
            Command::Attn => "attn",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lft", version, about = "Light-field super-resolution with angular and spatial Transformers")]
struct Cli {
    command: Command,

    /// `key = value` config file, or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,

    /// `--key value` pairs that override the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> Result<()> {
    let overrides = parse_overrides(&cli.overrides)?;
    let file = read_config_file(&cli.config, cli.command)?;
    let rc = RunConfig::resolve(cli.command, file, &overrides)?;
    let threads: usize = rc.get("threads")?;
    if threads > 0 {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = rc.path("out");
    std::fs::create_dir_all(&out)?;
    let manifest = match cli.command {
        Command::Synth => commands::synth(&rc, &out)?,
        Command::Degrade => commands::degrade_cmd(&rc, &out)?,
        Command::Train => commands::train_cmd(&rc, &out)?,
        Command::Infer => commands::infer(&rc, &out)?,
        Command::Eval => commands::eval(&rc, &out)?,
        Command::Attn => commands::attn(&rc, &out)?,
    };
    manifest.write(&out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
