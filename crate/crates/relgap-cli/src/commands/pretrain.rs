//! The `pretrain` command: plain soft Q-learning in the source environment,
//! per-seed training telemetry and a reusable learner checkpoint.

use rayon::prelude::*;
use relgap::env::{random_mdp_pair, CartPoleEnv, Discretizer, TabularEnv};
use relgap::soft_rl::{pretrain, PretrainConfig, PretrainRow, SoftLearnerState};

use crate::checkpoint::write_learner;
use crate::config::{EnvFamily, ExperimentConfig};
use crate::telemetry::{float_field, write_csv};
use crate::CliError;

pub fn pretrain_one(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(SoftLearnerState, Vec<PretrainRow>), CliError> {
    match config.pretrain_env {
        EnvFamily::Cartpole => {
            let params = config.cartpole.params;
            params
                .validate()
                .map_err(|e| CliError::usage(e.to_string()))?;
            let discretizer = Discretizer::default_cartpole(
                params.position_fail_threshold,
                params.angle_fail_threshold,
            );
            let mut env = CartPoleEnv::new(params, discretizer)
                .map_err(|e| CliError::failure(e.to_string()))?;
            pretrain(&mut env, seed, &config.cartpole_pretrain)
                .map_err(|e| CliError::failure(e.to_string()))
        }
        EnvFamily::Tabular => {
            let (source, _) = random_mdp_pair(
                seed,
                config.tabular.n_states,
                config.tabular.n_actions,
                config.tabular.gamma,
                config.tabular.mix_weight,
            )
            .map_err(|e| CliError::failure(e.to_string()))?;
            let mut env = TabularEnv::new(source, config.tabular.episode_len);
            let schedule = PretrainConfig {
                max_steps: config.tabular_pretrain_steps,
                stop_return: None,
                ..PretrainConfig::tabular_default(config.tabular.gamma)
            };
            pretrain(&mut env, seed, &schedule).map_err(|e| CliError::failure(e.to_string()))
        }
    }
}

pub fn run(config: &ExperimentConfig) -> Result<i32, CliError> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::failure(format!("cannot create output directory: {e}")))?;

    let results: Result<Vec<(u64, SoftLearnerState, Vec<PretrainRow>)>, CliError> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (learner, rows) = pretrain_one(config, seed)?;
            Ok((seed, learner, rows))
        })
        .collect();

    for (seed, learner, rows) in results? {
        let csv_rows: Result<Vec<Vec<String>>, CliError> = rows
            .iter()
            .map(|r| {
                Ok(vec![
                    r.step.to_string(),
                    float_field(r.episode_return, "episode_return")?,
                    float_field(r.soft_bellman_residual, "soft_bellman_residual")?,
                    float_field(r.entropy, "entropy")?,
                ])
            })
            .collect();
        write_csv(
            &config.out_dir.join(format!("pretrain_seed{seed}.csv")),
            "step,episode_return,soft_bellman_residual,entropy",
            &csv_rows?,
        )?;
        let checkpoint_path = config.out_dir.join(format!("checkpoint_seed{seed}.txt"));
        std::fs::write(&checkpoint_path, write_learner(&learner)).map_err(|e| {
            CliError::failure(format!("cannot write {}: {e}", checkpoint_path.display()))
        })?;
        let last_returns: Vec<f64> = rows
            .iter()
            .rev()
            .take(20)
            .map(|r| r.episode_return)
            .collect();
        let mean = last_returns.iter().sum::<f64>() / last_returns.len().max(1) as f64;
        let eval = match config.pretrain_env {
            EnvFamily::Cartpole => {
                let params = config.cartpole.params;
                let discretizer = Discretizer::default_cartpole(
                    params.position_fail_threshold,
                    params.angle_fail_threshold,
                );
                relgap::transfer::evaluate_cartpole_return(
                    &params,
                    &discretizer,
                    &learner.implied_policy(),
                    config.eval_episodes,
                    seed.wrapping_add(0x5eed),
                )
                .map_err(|e| CliError::failure(e.to_string()))?
            }
            EnvFamily::Tabular => f64::NAN,
        };
        if eval.is_nan() {
            println!(
                "seed {seed}: {} episodes, trailing-20 mean return {mean:.1}",
                rows.len()
            );
        } else {
            println!(
                "seed {seed}: {} episodes, trailing-20 mean return {mean:.1}, eval return {eval:.1}",
                rows.len()
            );
        }
    }
    Ok(0)
}
