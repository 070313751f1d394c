//! The `transfer` command: per-seed pretraining (or a shared checkpoint),
//! one transfer run per seed, per-seed telemetry and a median/IQR aggregate
//! on a fixed target-step grid.

use std::path::Path;

use rayon::prelude::*;
use relgap::env::{random_mdp_pair, Discretizer, TabularEnv};
use relgap::mdp::{soft_greedy_improvement, write_mdp, write_policy};
use relgap::soft_rl::{pretrain, PretrainConfig, SoftLearnerState};
use relgap::transfer::{
    cartpole_transfer_run, evaluate_cartpole_return, tabular_transfer_run, CartPoleAlgo,
    CartPoleTransferSetup, TabularAlgo, TabularTransferSetup, TransferRunResult,
};

use crate::checkpoint::parse_learner;
use crate::config::{CommandKind, ExperimentConfig};
use crate::telemetry::{float_field, iqr, median, write_csv};
use crate::CliError;

pub struct TransferOptions {
    pub checkpoint: Option<std::path::PathBuf>,
    pub require_pretrained: bool,
}

fn telemetry_header() -> &'static str {
    "target_steps,source_steps,target_return,source_return,pole_length_or_tv_gap,rto_loss,rpo_entropy"
}

pub fn run(config: &ExperimentConfig, options: &TransferOptions) -> Result<i32, CliError> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::failure(format!("cannot create output directory: {e}")))?;
    config
        .transfer
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    let shared_checkpoint = match &options.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read checkpoint {}: {e}", path.display()))
            })?;
            Some(parse_learner(&text)?)
        }
        None => {
            if options.require_pretrained {
                return Err(CliError::usage(
                    "--require-pretrained set but no --checkpoint supplied",
                ));
            }
            None
        }
    };

    match config.kind {
        CommandKind::TabularTransfer => run_tabular(config, shared_checkpoint),
        CommandKind::CartpoleRpo => run_cartpole(config, shared_checkpoint, CartPoleAlgo::Rpo),
        CommandKind::CartpoleRto => run_cartpole(config, shared_checkpoint, CartPoleAlgo::Rto),
        CommandKind::CartpoleRpto => run_cartpole(config, shared_checkpoint, CartPoleAlgo::Rpto),
        _ => Err(CliError::usage(format!(
            "kind '{}' is not a transfer experiment",
            config.kind.name()
        ))),
    }
}

fn run_tabular(
    config: &ExperimentConfig,
    shared: Option<SoftLearnerState>,
) -> Result<i32, CliError> {
    let results: Result<Vec<(u64, TransferRunResult, [f64; 3])>, CliError> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (source, target) = random_mdp_pair(
                seed,
                config.tabular.n_states,
                config.tabular.n_actions,
                config.tabular.gamma,
                config.tabular.mix_weight,
            )
            .map_err(|e| CliError::failure(e.to_string()))?;
            let pretrained = match &shared {
                Some(learner) => learner.clone(),
                None => {
                    let mut env = TabularEnv::new(source.clone(), config.tabular.episode_len);
                    let schedule = PretrainConfig {
                        max_steps: config.tabular_pretrain_steps,
                        stop_return: None,
                        ..PretrainConfig::tabular_default(config.tabular.gamma)
                    };
                    pretrain(&mut env, seed, &schedule)
                        .map_err(|e| CliError::failure(e.to_string()))?
                        .0
                }
            };
            let initial_policy = pretrained.implied_policy();
            let initial_return = target
                .policy_evaluation(&initial_policy)
                .map_err(|e| CliError::failure(e.to_string()))?
                .j;
            let setup = TabularTransferSetup {
                source,
                target: target.clone(),
                pretrained,
                episode_len: config.tabular.episode_len,
            };
            let result = tabular_transfer_run(&setup, TabularAlgo::Rpto, seed, &config.transfer)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let final_return = target
                .policy_evaluation(&result.policy)
                .map_err(|e| CliError::failure(e.to_string()))?
                .j;
            // Exact soft-optimal reference for gap-closure reporting.
            let alpha = setup.pretrained.temperature;
            let q_star = target
                .soft_value_iteration(alpha, 1e-10, 1_000_000)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let pi_star = soft_greedy_improvement(&q_star, alpha)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let optimal_return = target
                .policy_evaluation(&pi_star)
                .map_err(|e| CliError::failure(e.to_string()))?
                .j;
            Ok((seed, result, [initial_return, final_return, optimal_return]))
        })
        .collect();
    let results = results?;

    let mut final_rows = Vec::new();
    for (seed, result, [initial, final_ret, optimal]) in &results {
        write_seed_telemetry(&config.out_dir, config.kind.name(), *seed, result)?;
        write_final_policy(&config.out_dir, config.kind.name(), *seed, result)?;
        if let Some(model) = &result.final_model {
            let path = config.out_dir.join(format!("{}_model_seed{seed}.mdp", config.kind.name()));
            std::fs::write(&path, write_mdp(model))
                .map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))?;
        }
        final_rows.push(vec![
            seed.to_string(),
            float_field(*initial, "exact_initial_return")?,
            float_field(*final_ret, "exact_final_return")?,
            float_field(*optimal, "soft_optimal_return")?,
            float_field(result.final_model_tv.unwrap_or(0.0), "final_model_tv")?,
        ]);
    }
    write_csv(
        &config
            .out_dir
            .join(format!("{}_final.csv", config.kind.name())),
        "seed,exact_initial_return,exact_final_return,soft_optimal_return,final_model_tv",
        &final_rows,
    )?;
    write_aggregate(
        config,
        &results.iter().map(|(s, r, _)| (*s, r)).collect::<Vec<_>>(),
    )?;
    Ok(0)
}

fn run_cartpole(
    config: &ExperimentConfig,
    shared: Option<SoftLearnerState>,
    algo: CartPoleAlgo,
) -> Result<i32, CliError> {
    let source_params = config.cartpole.params;
    source_params
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let target_params = source_params.with_pole_length(config.cartpole.target_pole_length);
    let discretizer = Discretizer::default_cartpole(
        source_params.position_fail_threshold,
        source_params.angle_fail_threshold,
    );

    let results: Result<Vec<(u64, TransferRunResult, f64)>, CliError> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let pretrained = match &shared {
                Some(learner) => learner.clone(),
                None => crate::commands::pretrain::pretrain_one(config, seed)?.0,
            };
            let setup = CartPoleTransferSetup {
                source_params,
                target_params,
                discretizer: discretizer.clone(),
                pretrained,
            };
            let result = cartpole_transfer_run(&setup, algo, seed, &config.transfer)
                .map_err(|e| CliError::failure(e.to_string()))?;
            let eval_return = evaluate_cartpole_return(
                &target_params,
                &discretizer,
                &result.policy,
                config.eval_episodes,
                seed.wrapping_add(0x5eed),
            )
            .map_err(|e| CliError::failure(e.to_string()))?;
            Ok((seed, result, eval_return))
        })
        .collect();
    let results = results?;

    let mut final_rows = Vec::new();
    for (seed, result, eval_return) in &results {
        write_seed_telemetry(&config.out_dir, config.kind.name(), *seed, result)?;
        write_final_policy(&config.out_dir, config.kind.name(), *seed, result)?;
        final_rows.push(vec![
            seed.to_string(),
            float_field(*eval_return, "eval_return")?,
            float_field(result.final_pole_length.unwrap_or(0.0), "pole_length")?,
        ]);
    }
    write_csv(
        &config
            .out_dir
            .join(format!("{}_final.csv", config.kind.name())),
        "seed,eval_return,pole_length",
        &final_rows,
    )?;
    write_aggregate(
        config,
        &results.iter().map(|(s, r, _)| (*s, r)).collect::<Vec<_>>(),
    )?;
    Ok(0)
}

fn write_final_policy(
    out_dir: &Path,
    kind: &str,
    seed: u64,
    result: &TransferRunResult,
) -> Result<(), CliError> {
    let path = out_dir.join(format!("{kind}_policy_seed{seed}.txt"));
    std::fs::write(&path, write_policy(&result.policy))
        .map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))
}

fn write_seed_telemetry(
    out_dir: &Path,
    kind: &str,
    seed: u64,
    result: &TransferRunResult,
) -> Result<(), CliError> {
    let rows: Result<Vec<Vec<String>>, CliError> = result
        .rows
        .iter()
        .map(|r| {
            Ok(vec![
                r.target_steps.to_string(),
                r.source_steps.to_string(),
                float_field(r.target_return, "target_return")?,
                float_field(r.source_return, "source_return")?,
                float_field(r.model_gap, "pole_length_or_tv_gap")?,
                float_field(r.rto_loss, "rto_loss")?,
                float_field(r.rpo_entropy, "rpo_entropy")?,
            ])
        })
        .collect();
    write_csv(
        &out_dir.join(format!("{kind}_seed{seed}.csv")),
        telemetry_header(),
        &rows?,
    )
}

/// Aggregates per-seed telemetry onto a fixed grid of target steps by
/// carrying each seed's latest row forward, then writes medians and
/// interquartile ranges per grid point.
fn write_aggregate(
    config: &ExperimentConfig,
    results: &[(u64, &TransferRunResult)],
) -> Result<(), CliError> {
    let budget = config.transfer.target_step_budget as u64;
    let grid_step = (budget / 200).max(1);
    let mut rows = Vec::new();
    for grid_point in (grid_step..=budget).step_by(grid_step as usize) {
        let mut columns: [Vec<f64>; 5] = Default::default();
        for (_, result) in results {
            let row = result
                .rows
                .iter()
                .take_while(|r| r.target_steps <= grid_point)
                .last()
                .or_else(|| result.rows.first());
            let Some(row) = row else { continue };
            columns[0].push(row.target_return);
            columns[1].push(row.source_return);
            columns[2].push(row.model_gap);
            columns[3].push(row.rto_loss);
            columns[4].push(row.rpo_entropy);
        }
        if columns[0].is_empty() {
            continue;
        }
        let mut fields = vec![grid_point.to_string()];
        for (idx, name) in [
            "target_return",
            "source_return",
            "pole_length_or_tv_gap",
            "rto_loss",
            "rpo_entropy",
        ]
        .iter()
        .enumerate()
        {
            let mut values = columns[idx].clone();
            fields.push(float_field(median(&mut values), name)?);
            let mut values = columns[idx].clone();
            fields.push(float_field(iqr(&mut values), name)?);
        }
        rows.push(fields);
    }
    write_csv(
        &config.out_dir.join(format!("{}_aggregate.csv", config.kind.name())),
        "target_steps,target_return_median,target_return_iqr,source_return_median,source_return_iqr,\
         pole_length_or_tv_gap_median,pole_length_or_tv_gap_iqr,rto_loss_median,rto_loss_iqr,\
         rpo_entropy_median,rpo_entropy_iqr",
        &rows,
    )
}
