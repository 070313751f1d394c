//! Flat `key = value` configuration with `[section]` headers, `#` comments,
//! and `--key=value` command-line overrides. Keys are globally unique;
//! section headers only group them visually.

use std::collections::BTreeMap;
use std::path::PathBuf;

use relgap::env::CartPoleParams;
use relgap::relativity::InstanceRanges;
use relgap::soft_rl::{PretrainConfig, SoftLearnerConfig};
use relgap::transfer::TransferConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Verify,
    Pretrain,
    TabularTransfer,
    CartpoleRpo,
    CartpoleRto,
    CartpoleRpto,
}

impl CommandKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "verify" => Ok(Self::Verify),
            "pretrain" => Ok(Self::Pretrain),
            "tabular-transfer" => Ok(Self::TabularTransfer),
            "cartpole-rpo" => Ok(Self::CartpoleRpo),
            "cartpole-rto" => Ok(Self::CartpoleRto),
            "cartpole-rpto" => Ok(Self::CartpoleRpto),
            other => Err(CliError::usage(format!("unknown kind '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Pretrain => "pretrain",
            Self::TabularTransfer => "tabular-transfer",
            Self::CartpoleRpo => "cartpole-rpo",
            Self::CartpoleRto => "cartpole-rto",
            Self::CartpoleRpto => "cartpole-rpto",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifySettings {
    pub instances: usize,
    pub t_max: usize,
    pub ranges: InstanceRanges,
}

#[derive(Debug, Clone)]
pub struct TabularSettings {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub mix_weight: f64,
    pub episode_len: usize,
}

#[derive(Debug, Clone)]
pub struct CartPoleSettings {
    pub params: CartPoleParams,
    pub target_pole_length: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: CommandKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub eval_episodes: usize,
    pub pretrain_env: EnvFamily,
    pub verify: VerifySettings,
    pub tabular: TabularSettings,
    pub cartpole: CartPoleSettings,
    pub cartpole_pretrain: PretrainConfig,
    pub tabular_pretrain_steps: usize,
    pub transfer: TransferConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvFamily {
    Cartpole,
    Tabular,
}

const KNOWN_KEYS: &[&str] = &[
    "kind",
    "seeds",
    "out",
    "eval_episodes",
    "pretrain_env",
    // verify
    "verify_instances",
    "verify_t_max",
    "verify_min_states",
    "verify_max_states",
    "verify_min_actions",
    "verify_max_actions",
    "verify_gammas",
    "verify_policy_floor",
    // tabular environment
    "tabular_n_states",
    "tabular_n_actions",
    "tabular_gamma",
    "tabular_mix_weight",
    "tabular_episode_len",
    "tabular_pretrain_steps",
    // cartpole environment
    "cart_mass",
    "pole_mass",
    "pole_length",
    "gravity",
    "force_magnitude",
    "time_step",
    "angle_fail_threshold_deg",
    "position_fail_threshold",
    "max_episode_steps",
    "target_pole_length",
    // pretraining
    "pretrain_steps",
    "pretrain_batch_size",
    "pretrain_updates_per_step",
    "pretrain_warmup_steps",
    "pretrain_buffer_capacity",
    "pretrain_stop_return",
    "pretrain_gamma",
    "pretrain_alpha",
    "pretrain_lr",
    "pretrain_lr_final",
    "pretrain_eval_every_episodes",
    "pretrain_eval_episodes",
    "pretrain_polyak",
    "pretrain_q_init",
    // transfer
    "alternate_frequency",
    "policy_replay_ratio",
    "dynamics_replay_ratio",
    "rto_min_weight",
    "rto_learning_rate",
    "rto_learning_rate_final",
    "rpo_learning_rate",
    "batch_size",
    "target_step_budget",
    "q_updates_per_source_step",
];

/// Raw key-value view of a config file plus overrides.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(CliError::usage(format!(
                        "config line {}: unterminated section header",
                        idx + 1
                    )));
                }
                continue; // sections are decorative
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "config line {}: unknown key '{key}'",
                    idx + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set_override(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::usage(format!("unknown config key '--{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| CliError::usage(format!("config key '{key}': cannot parse '{raw}'"))),
        }
    }

    fn parse_list<T: std::str::FromStr>(
        &self,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .split([',', ' '])
                .filter(|tok| !tok.is_empty())
                .map(|tok| {
                    tok.parse::<T>().map_err(|_| {
                        CliError::usage(format!("config key '{key}': cannot parse '{tok}'"))
                    })
                })
                .collect(),
        }
    }

    /// Resolves the typed experiment configuration. The output directory
    /// falls back to `RELGAP_OUT`, then `relgap_out`.
    pub fn resolve(&self, default_kind: CommandKind) -> Result<ExperimentConfig, CliError> {
        let kind = match self.get("kind") {
            Some(raw) => CommandKind::parse(raw)?,
            None => default_kind,
        };
        let seeds: Vec<u64> = self.parse_list("seeds", vec![0])?;
        if seeds.is_empty() {
            return Err(CliError::usage("seeds must be non-empty"));
        }
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != seeds.len() {
            return Err(CliError::usage("seeds must be distinct"));
        }
        let out_dir = match self.get("out") {
            Some(path) => PathBuf::from(path),
            None => std::env::var("RELGAP_OUT")
                .map(PathBuf::from)
                .unwrap_or_else(|_| PathBuf::from("relgap_out")),
        };

        let verify = VerifySettings {
            instances: self.parse_value("verify_instances", 200)?,
            t_max: self.parse_value("verify_t_max", 50)?,
            ranges: InstanceRanges {
                n_states: (
                    self.parse_value("verify_min_states", 2)?,
                    self.parse_value("verify_max_states", 10)?,
                ),
                n_actions: (
                    self.parse_value("verify_min_actions", 2)?,
                    self.parse_value("verify_max_actions", 4)?,
                ),
                gammas: self.parse_list("verify_gammas", vec![0.5, 0.9, 0.95])?,
                policy_floor: self.parse_value("verify_policy_floor", 1e-3)?,
            },
        };

        let tabular = TabularSettings {
            n_states: self.parse_value("tabular_n_states", 5)?,
            n_actions: self.parse_value("tabular_n_actions", 3)?,
            gamma: self.parse_value("tabular_gamma", 0.9)?,
            mix_weight: self.parse_value("tabular_mix_weight", 0.3)?,
            episode_len: self.parse_value("tabular_episode_len", 100)?,
        };

        let default_params = CartPoleParams::default();
        let params = CartPoleParams {
            cart_mass: self.parse_value("cart_mass", default_params.cart_mass)?,
            pole_mass: self.parse_value("pole_mass", default_params.pole_mass)?,
            pole_length: self.parse_value("pole_length", default_params.pole_length)?,
            gravity: self.parse_value("gravity", default_params.gravity)?,
            force_magnitude: self.parse_value("force_magnitude", default_params.force_magnitude)?,
            time_step: self.parse_value("time_step", default_params.time_step)?,
            angle_fail_threshold: self
                .parse_value::<f64>("angle_fail_threshold_deg", 12.0)?
                .to_radians(),
            position_fail_threshold: self.parse_value(
                "position_fail_threshold",
                default_params.position_fail_threshold,
            )?,
            max_episode_steps: self
                .parse_value("max_episode_steps", default_params.max_episode_steps)?,
        };
        let cartpole = CartPoleSettings {
            params,
            target_pole_length: self.parse_value("target_pole_length", 1.2)?,
        };

        let cartpole_defaults = PretrainConfig::cartpole_default();
        let discount = self.parse_value("pretrain_gamma", cartpole_defaults.discount)?;
        let cartpole_pretrain = PretrainConfig {
            max_steps: self.parse_value("pretrain_steps", cartpole_defaults.max_steps)?,
            batch_size: self.parse_value("pretrain_batch_size", cartpole_defaults.batch_size)?,
            updates_per_step: self.parse_value(
                "pretrain_updates_per_step",
                cartpole_defaults.updates_per_step,
            )?,
            warmup_steps: self
                .parse_value("pretrain_warmup_steps", cartpole_defaults.warmup_steps)?,
            buffer_capacity: self.parse_value(
                "pretrain_buffer_capacity",
                cartpole_defaults.buffer_capacity,
            )?,
            learning_rate_final: self
                .parse_value("pretrain_lr_final", cartpole_defaults.learning_rate_final)?,
            eval_every_episodes: self.parse_value(
                "pretrain_eval_every_episodes",
                cartpole_defaults.eval_every_episodes,
            )?,
            eval_episodes: self
                .parse_value("pretrain_eval_episodes", cartpole_defaults.eval_episodes)?,
            stop_return: match self.get("pretrain_stop_return") {
                None => None,
                Some("none") => None,
                Some(raw) => Some(raw.parse::<f64>().map_err(|_| {
                    CliError::usage(format!(
                        "config key 'pretrain_stop_return': cannot parse '{raw}'"
                    ))
                })?),
            },
            discount,
            learner: SoftLearnerConfig {
                temperature: self
                    .parse_value("pretrain_alpha", cartpole_defaults.learner.temperature)?,
                learning_rate: self
                    .parse_value("pretrain_lr", cartpole_defaults.learner.learning_rate)?,
                polyak: self.parse_value("pretrain_polyak", cartpole_defaults.learner.polyak)?,
                q_init: self.parse_value("pretrain_q_init", 0.5 / (1.0 - discount))?,
            },
        };

        let transfer_defaults = match kind {
            CommandKind::TabularTransfer => TransferConfig::tabular_default(),
            _ => TransferConfig::cartpole_default(),
        };
        let transfer = TransferConfig {
            alternate_frequency: self
                .parse_value("alternate_frequency", transfer_defaults.alternate_frequency)?,
            policy_replay_ratio: self
                .parse_value("policy_replay_ratio", transfer_defaults.policy_replay_ratio)?,
            dynamics_replay_ratio: self.parse_value(
                "dynamics_replay_ratio",
                transfer_defaults.dynamics_replay_ratio,
            )?,
            rto_min_weight: self.parse_value("rto_min_weight", transfer_defaults.rto_min_weight)?,
            rto_learning_rate: self
                .parse_value("rto_learning_rate", transfer_defaults.rto_learning_rate)?,
            rto_learning_rate_final: self.parse_value(
                "rto_learning_rate_final",
                transfer_defaults.rto_learning_rate_final,
            )?,
            rpo_learning_rate: self
                .parse_value("rpo_learning_rate", transfer_defaults.rpo_learning_rate)?,
            batch_size: self.parse_value("batch_size", transfer_defaults.batch_size)?,
            target_step_budget: self
                .parse_value("target_step_budget", transfer_defaults.target_step_budget)?,
            q_updates_per_source_step: self.parse_value(
                "q_updates_per_source_step",
                transfer_defaults.q_updates_per_source_step,
            )?,
        };

        let pretrain_env = match self.get("pretrain_env").unwrap_or("cartpole") {
            "cartpole" => EnvFamily::Cartpole,
            "tabular" => EnvFamily::Tabular,
            other => {
                return Err(CliError::usage(format!(
                    "pretrain_env must be cartpole or tabular, got '{other}'"
                )))
            }
        };

        Ok(ExperimentConfig {
            kind,
            seeds,
            out_dir,
            eval_episodes: self.parse_value("eval_episodes", 20)?,
            pretrain_env,
            verify,
            tabular,
            cartpole,
            cartpole_pretrain,
            tabular_pretrain_steps: self.parse_value("tabular_pretrain_steps", 30_000)?,
            transfer,
        })
    }
}
