//! `relgap` — verification sweeps, pretraining and policy-transfer
//! experiments over tabular MDPs and CartPole.
//!
//! ```text
//! relgap verify|pretrain|transfer [--config FILE] [--jobs N] [--out DIR]
//!        [--seed-list 0,1,2] [--mdp FILE] [--checkpoint FILE]
//!        [--require-pretrained] [--key=value ...]
//! ```
//!
//! Exit codes: 0 success, 1 check or experiment failure, 2 usage/parse error.

mod checkpoint;
mod commands;
mod config;
mod telemetry;

use std::path::PathBuf;
use std::process::ExitCode;

use config::{CommandKind, RawConfig};

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            exit_code: 1,
            message: message.into(),
        }
    }
}

impl From<relgap::Error> for CliError {
    fn from(err: relgap::Error) -> Self {
        match err {
            relgap::Error::Parse { .. } => CliError::usage(err.to_string()),
            other => CliError::failure(other.to_string()),
        }
    }
}

struct CliArgs {
    subcommand: String,
    config_path: Option<PathBuf>,
    out: Option<String>,
    seed_list: Option<String>,
    jobs: Option<usize>,
    mdp: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    require_pretrained: bool,
    overrides: Vec<(String, String)>,
}

const USAGE: &str =
    "usage: relgap verify|pretrain|transfer [--config FILE] [--jobs N] [--out DIR] \
[--seed-list 0,1,2] [--mdp FILE] [--checkpoint FILE] [--require-pretrained] [--key=value ...]";

fn parse_args(args: &[String]) -> Result<CliArgs, CliError> {
    let mut iter = args.iter().peekable();
    let subcommand = iter.next().ok_or_else(|| CliError::usage(USAGE))?.clone();
    if !["verify", "pretrain", "transfer"].contains(&subcommand.as_str()) {
        return Err(CliError::usage(format!(
            "unknown subcommand '{subcommand}'\n{USAGE}"
        )));
    }
    let mut parsed = CliArgs {
        subcommand,
        config_path: None,
        out: None,
        seed_list: None,
        jobs: None,
        mdp: None,
        checkpoint: None,
        require_pretrained: false,
        overrides: Vec::new(),
    };
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(CliError::usage(format!(
                "unexpected argument '{arg}'\n{USAGE}"
            )));
        };
        let (name, inline_value) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        let mut take_value = || -> Result<String, CliError> {
            if let Some(v) = inline_value.clone() {
                return Ok(v);
            }
            iter.next()
                .map(|s| s.to_string())
                .ok_or_else(|| CliError::usage(format!("--{name} requires a value")))
        };
        match name {
            "config" => parsed.config_path = Some(PathBuf::from(take_value()?)),
            "out" => parsed.out = Some(take_value()?),
            "seed-list" => parsed.seed_list = Some(take_value()?),
            "jobs" => {
                let raw = take_value()?;
                parsed.jobs = Some(raw.parse().map_err(|_| {
                    CliError::usage(format!("--jobs expects a positive integer, got '{raw}'"))
                })?);
            }
            "mdp" => parsed.mdp = Some(PathBuf::from(take_value()?)),
            "checkpoint" => parsed.checkpoint = Some(PathBuf::from(take_value()?)),
            "require-pretrained" => parsed.require_pretrained = true,
            key => {
                let Some(value) = inline_value else {
                    return Err(CliError::usage(format!("unknown flag '--{key}'\n{USAGE}")));
                };
                parsed.overrides.push((key.to_string(), value));
            }
        }
    }
    Ok(parsed)
}

fn run(args: CliArgs) -> Result<i32, CliError> {
    let mut raw = match &args.config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            RawConfig::parse(&text)?
        }
        None => RawConfig::default(),
    };
    for (key, value) in &args.overrides {
        raw.set_override(key, value)?;
    }
    if let Some(out) = &args.out {
        raw.set_override("out", out)?;
    }
    if let Some(seeds) = &args.seed_list {
        raw.set_override("seeds", seeds)?;
    }

    let default_kind = match args.subcommand.as_str() {
        "verify" => CommandKind::Verify,
        "pretrain" => CommandKind::Pretrain,
        _ => CommandKind::TabularTransfer,
    };
    let config = raw.resolve(default_kind)?;

    // The subcommand and the configured kind must agree.
    let kind_ok = match args.subcommand.as_str() {
        "verify" => config.kind == CommandKind::Verify,
        "pretrain" => config.kind == CommandKind::Pretrain,
        _ => matches!(
            config.kind,
            CommandKind::TabularTransfer
                | CommandKind::CartpoleRpo
                | CommandKind::CartpoleRto
                | CommandKind::CartpoleRpto
        ),
    };
    if !kind_ok {
        return Err(CliError::usage(format!(
            "kind '{}' does not belong to subcommand '{}'",
            config.kind.name(),
            args.subcommand
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(1).max(1))
        .build()
        .map_err(|e| CliError::failure(format!("cannot build thread pool: {e}")))?;

    let mdp_override = match &args.mdp {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read mdp {}: {e}", path.display())))?;
            Some(relgap::mdp::parse_mdp(&text)?)
        }
        None => None,
    };

    pool.install(|| match args.subcommand.as_str() {
        "verify" => commands::verify::run(&config, mdp_override.as_ref()),
        "pretrain" => commands::pretrain::run(&config),
        _ => commands::transfer::run(
            &config,
            &commands::transfer::TransferOptions {
                checkpoint: args.checkpoint.clone(),
                require_pretrained: args.require_pretrained,
            },
        ),
    })
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match parse_args(&args).and_then(run) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("relgap: {}", err.message);
            ExitCode::from(err.exit_code)
        }
    }
}
