//! The `verify` command: bound and identity sweeps over seeded instances,
//! one CSV per suite plus slack-telemetry summaries.

use rayon::prelude::*;
use relgap::mdp::TabularMdp;
use relgap::relativity::{
    bound_constants, dynamics_surrogate_constant, verify_instance_all, BoundCheckReport,
    RandomInstance, SUITE_NAMES,
};

use crate::config::ExperimentConfig;
use crate::telemetry::{float_field, write_csv};
use crate::CliError;

struct InstanceOutcome {
    seed: u64,
    reports: Vec<(&'static str, BoundCheckReport)>,
    c3_snapshot_divergence: f64,
    c3_policy_divergence: f64,
}

pub fn run(config: &ExperimentConfig, base_mdp: Option<&TabularMdp>) -> Result<i32, CliError> {
    if config.verify.instances == 0 {
        return Err(CliError::usage(
            "verify_instances must be positive (empty sweep rejected)",
        ));
    }
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::failure(format!("cannot create output directory: {e}")))?;

    let t_max = config.verify.t_max;
    let ranges = config.verify.ranges.clone();
    let outcomes: Result<Vec<InstanceOutcome>, CliError> = (0..config.verify.instances as u64)
        .into_par_iter()
        .map(|seed| {
            let instance = match base_mdp {
                Some(base) => RandomInstance::generate_with_base(seed, base, &ranges),
                None => RandomInstance::generate(seed, &ranges),
            }
            .map_err(|e| CliError::failure(format!("instance {seed}: {e}")))?;
            let reports = verify_instance_all(&instance, t_max)
                .map_err(|e| CliError::failure(format!("instance {seed}: {e}")))?;
            let c3_snapshot_divergence =
                dynamics_surrogate_constant(&instance.p_prime, &instance.p, &instance.p_phi_old)
                    .map_err(|e| CliError::failure(format!("instance {seed}: {e}")))?;
            let constants = bound_constants(
                &instance.p_prime,
                &instance.p,
                &instance.pi,
                &instance.pi_prime,
            )
            .map_err(|e| CliError::failure(format!("instance {seed}: {e}")))?;
            Ok(InstanceOutcome {
                seed,
                reports,
                c3_snapshot_divergence,
                c3_policy_divergence: constants.c3_policy_divergence,
            })
        })
        .collect();
    let outcomes = outcomes?;

    let mut any_failure = false;
    let mut summary_rows = Vec::new();
    for suite in SUITE_NAMES {
        let mut rows = Vec::with_capacity(outcomes.len());
        let mut slacks = Vec::with_capacity(outcomes.len());
        let mut failures = 0usize;
        for outcome in &outcomes {
            let report = &outcome
                .reports
                .iter()
                .find(|(name, _)| *name == suite)
                .expect("every suite reported")
                .1;
            if !report.holds {
                failures += 1;
                any_failure = true;
            }
            slacks.push(report.slack);
            rows.push(vec![
                outcome.seed.to_string(),
                suite.to_string(),
                float_field(report.lhs, "lhs")?,
                float_field(report.rhs, "rhs")?,
                float_field(report.slack, "slack")?,
                report.holds.to_string(),
            ]);
        }
        write_csv(
            &config.out_dir.join(format!("verify_{suite}.csv")),
            "seed,bound_name,lhs,rhs,slack,holds",
            &rows,
        )?;
        let mean_slack = slacks.iter().sum::<f64>() / slacks.len() as f64;
        let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "{suite}: {} instances, {} failures, mean slack {mean_slack:.6}, min slack {min_slack:.6}",
            outcomes.len(),
            failures
        );
        summary_rows.push(vec![
            suite.to_string(),
            outcomes.len().to_string(),
            failures.to_string(),
            float_field(mean_slack, "mean_slack")?,
            float_field(min_slack, "min_slack")?,
        ]);
    }
    write_csv(
        &config.out_dir.join("verify_summary.csv"),
        "bound_name,instances,failures,mean_slack,min_slack",
        &summary_rows,
    )?;

    let variant_rows: Result<Vec<Vec<String>>, CliError> = outcomes
        .iter()
        .map(|o| {
            Ok(vec![
                o.seed.to_string(),
                float_field(o.c3_snapshot_divergence, "c3_snapshot_divergence")?,
                float_field(o.c3_policy_divergence, "c3_policy_divergence")?,
            ])
        })
        .collect();
    write_csv(
        &config.out_dir.join("dynamics_surrogate_constants.csv"),
        "seed,c3_snapshot_divergence,c3_policy_divergence",
        &variant_rows?,
    )?;

    Ok(if any_failure { 1 } else { 0 })
}
