//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Criteria 5-7 share the per-seed pretrained CartPole policies built once
//! in a lazy fixture. Runs are seeded and deterministic.

use std::sync::LazyLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relgap::env::{
    cartpole_step_gradient_with_step, random_mdp_pair, sample_categorical, CartPoleEnv,
    CartPoleParams, CartPoleState, Discretizer, ForceDirection, TabularDynamicsModel,
};
use relgap::mdp::soft_greedy_improvement;
use relgap::relativity::{
    relativity_gap, verify_instance_all, InstanceRanges, RandomInstance, SLACK_TOL,
};
use relgap::soft_rl::{
    pretrain, Origin, PretrainConfig, ReplayBuffer, SoftLearnerConfig, SoftLearnerState, Transition,
};
use relgap::transfer::{
    cartpole_transfer_run, evaluate_cartpole_return, rto_tabular_gradient, rto_tabular_loss,
    steps_to_reach, tabular_transfer_run, CartPoleAlgo, CartPoleTransferSetup, TabularAlgo,
    TabularTransferSetup, TransferConfig,
};

const N_SEEDS: usize = 8;

struct PretrainedSource {
    learner: SoftLearnerState,
    source_return: f64,
}

fn source_params() -> CartPoleParams {
    CartPoleParams::default()
}

fn discretizer() -> Discretizer {
    let p = source_params();
    Discretizer::default_cartpole(p.position_fail_threshold, p.angle_fail_threshold)
}

static PRETRAINED: LazyLock<Vec<PretrainedSource>> = LazyLock::new(|| {
    let handles: Vec<_> = (0..N_SEEDS as u64)
        .map(|seed| {
            std::thread::spawn(move || {
                let params = source_params();
                let disc = discretizer();
                let mut env = CartPoleEnv::new(params, disc.clone()).expect("valid params");
                let (learner, _) = pretrain(&mut env, seed, &PretrainConfig::cartpole_default())
                    .expect("pretraining runs");
                let source_return = evaluate_cartpole_return(
                    &params,
                    &disc,
                    &learner.implied_policy(),
                    20,
                    seed ^ 0xabc,
                )
                .expect("evaluation runs");
                PretrainedSource {
                    learner,
                    source_return,
                }
            })
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().expect("pretraining thread"))
        .collect()
});

/// Median with unreached runs treated as infinite: finite only when the
/// upper middle order statistic is finite, i.e. at least five of eight runs
/// reached the threshold.
fn median_steps(values: &[Option<u64>]) -> f64 {
    let mut sorted: Vec<f64> = values
        .iter()
        .map(|v| v.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
}

fn median_f64(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
}

#[test]
fn criterion_1_gap_identity() {
    let start = Instant::now();
    let ranges = InstanceRanges::default();
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let inst = RandomInstance::generate(seed, &ranges).unwrap();
        let report = relativity_gap(&inst.p_prime, &inst.pi, &inst.p, &inst.pi_prime).unwrap();
        worst = worst.max(report.identity_error());
        assert!(
            report.identity_error() <= 1e-8,
            "seed {seed}: |decomposed - direct| = {}",
            report.identity_error()
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 10.0,
        "gap identity sweep took {elapsed:?}"
    );
    println!(
        "criterion 1 PASS: gap identity on 200 instances, worst error {worst:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_bound_suites() {
    let start = Instant::now();
    let ranges = InstanceRanges::default();
    let mut worst_slack = f64::INFINITY;
    for seed in 0..200 {
        let inst = RandomInstance::generate(seed, &ranges).unwrap();
        for (name, report) in verify_instance_all(&inst, 50).unwrap() {
            worst_slack = worst_slack.min(report.slack);
            assert!(
                report.holds,
                "seed {seed}: {name} violated (lhs {}, rhs {}, slack {})",
                report.lhs, report.rhs, report.slack
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() <= 60.0,
        "bound suites took {elapsed:?}"
    );
    println!(
        "criterion 2 PASS: all bound suites hold on 200 instances (slack tolerance {SLACK_TOL:.0e}), \
         minimum slack {worst_slack:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_3_gradient_checks() {
    // Tabular logit gradients against central finite differences.
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let (_, target) = random_mdp_pair(0xacce, 5, 3, 0.9, 0.4).unwrap();
    let (source, _) = random_mdp_pair(0xaccf, 5, 3, 0.9, 0.0).unwrap();
    let mut model = TabularDynamicsModel::from_transition(source.transition());
    let batch: Vec<Transition> = (0..64)
        .map(|_| {
            let s = rng.random_range(0..5);
            let a = rng.random_range(0..3);
            let sn = sample_categorical(
                &mut rng,
                target
                    .transition()
                    .slice(ndarray::s![s, a, ..])
                    .iter()
                    .copied(),
            );
            Transition {
                state: s,
                action: a,
                reward: 0.0,
                next_state: sn,
                done: false,
                origin: Origin::Target,
            }
        })
        .collect();
    let weights: Vec<f64> = (0..64).map(|_| 0.5 + rng.random::<f64>()).collect();
    let analytic = rto_tabular_gradient(&model, &batch, &weights);
    let h = 1e-6;
    let mut checked = 0;
    let mut worst_rel = 0.0f64;
    while checked < 100 {
        let s = rng.random_range(0..5);
        let a = rng.random_range(0..3);
        let sn = rng.random_range(0..5);
        let base = model.logits()[[s, a, sn]];
        model.logits_mut()[[s, a, sn]] = base + h;
        let plus = rto_tabular_loss(&model, &batch, &weights);
        model.logits_mut()[[s, a, sn]] = base - h;
        let minus = rto_tabular_loss(&model, &batch, &weights);
        model.logits_mut()[[s, a, sn]] = base;
        let fd = (plus - minus) / (2.0 * h);
        let an = analytic[[s, a, sn]];
        if an.abs() < 1e-7 && fd.abs() < 1e-7 {
            continue;
        }
        let rel = (fd - an).abs() / an.abs().max(1e-7);
        worst_rel = worst_rel.max(rel);
        assert!(
            rel <= 1e-5,
            "logit gradient probe ({s},{a},{sn}): relative error {rel}"
        );
        checked += 1;
    }

    // Pole-length finite differences pass the step-halving ratio check.
    let params = source_params();
    let mut ratios_checked = 0;
    while ratios_checked < 100 {
        let state = CartPoleState {
            cart_position: rng.random_range(-1.0..1.0),
            cart_velocity: rng.random_range(-1.0..1.0),
            pole_angle: rng.random_range(-0.2..0.2),
            pole_angular_velocity: rng.random_range(-1.0..1.0),
        };
        let action = if rng.random::<bool>() {
            ForceDirection::Right
        } else {
            ForceDirection::Left
        };
        let h = 1e-3 * params.pole_length;
        let d2h = cartpole_step_gradient_with_step(&params, &state, action, 2.0 * h);
        let dh = cartpole_step_gradient_with_step(&params, &state, action, h);
        let dh2 = cartpole_step_gradient_with_step(&params, &state, action, 0.5 * h);
        let mut probe_used = false;
        for i in 0..4 {
            let denom = dh[i] - dh2[i];
            if denom.abs() < 1e-10 * dh[i].abs().max(1.0) {
                continue;
            }
            let ratio = (d2h[i] - dh[i]) / denom;
            assert!(
                (3.5..=4.5).contains(&ratio),
                "Richardson ratio {ratio} outside [3.5, 4.5] on component {i}"
            );
            probe_used = true;
        }
        if probe_used {
            ratios_checked += 1;
        }
    }
    println!(
        "criterion 3 PASS: 100 logit probes (worst relative error {worst_rel:.2e}) and 100 \
         Richardson probes within [3.5, 4.5]"
    );
}

#[test]
fn criterion_4_soft_learner_matches_exact_evaluation() {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xbeef + seed);
        let mdp = relgap::env::random_mdp(&mut rng, 5, 3, 0.9).unwrap();
        let alpha = 0.2;
        let mut learner = SoftLearnerState::new(
            5,
            3,
            0.9,
            SoftLearnerConfig {
                temperature: alpha,
                learning_rate: 0.05,
                polyak: 0.99,
                q_init: 0.0,
            },
        );
        let mut buffer = ReplayBuffer::new(100_000, 0xcafe + seed);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(0xdead + seed);
        for _ in 0..60_000 {
            let s = sample_rng.random_range(0..5);
            let a = sample_rng.random_range(0..3);
            let sn = sample_categorical(
                &mut sample_rng,
                mdp.transition()
                    .slice(ndarray::s![s, a, ..])
                    .iter()
                    .copied(),
            );
            buffer.push(Transition {
                state: s,
                action: a,
                reward: mdp.reward()[[s, a, sn]],
                next_state: sn,
                done: false,
                origin: Origin::Source,
            });
        }
        for sweep in 0..140_000 {
            if sweep == 80_000 {
                learner.learning_rate = 0.005;
            } else if sweep == 120_000 {
                learner.learning_rate = 0.001;
            }
            let batch = buffer.sample(64);
            learner.soft_q_update(&batch).unwrap();
        }
        let exact = mdp
            .soft_policy_evaluation(&learner.implied_policy(), alpha)
            .unwrap();
        let max_err = learner
            .q_table
            .iter()
            .zip(exact.q_soft.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(max_err);
        assert!(
            max_err < 0.05,
            "seed {seed}: converged q deviates by {max_err}"
        );
    }
    println!("criterion 4 PASS: converged soft-Q within 0.05 of exact evaluation on 5 MDPs (worst {worst:.3})");
}

fn rto_recovery(target_length: f64) -> (f64, f64) {
    let start = Instant::now();
    let params = source_params();
    let disc = discretizer();
    let config = TransferConfig {
        target_step_budget: 50_000,
        ..TransferConfig::cartpole_default()
    };
    let handles: Vec<_> = (0..N_SEEDS)
        .map(|seed| {
            let pretrained = PRETRAINED[seed].learner.clone();
            let disc = disc.clone();
            std::thread::spawn(move || {
                let setup = CartPoleTransferSetup {
                    source_params: params,
                    target_params: params.with_pole_length(target_length),
                    discretizer: disc,
                    pretrained,
                };
                let result =
                    cartpole_transfer_run(&setup, CartPoleAlgo::Rto, seed as u64, &config).unwrap();
                result.final_pole_length.unwrap()
            })
        })
        .collect();
    let lengths: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    (median_f64(&lengths), start.elapsed().as_secs_f64())
}

#[test]
fn criterion_5_rto_parameter_recovery() {
    for target_length in [1.2, 2.0] {
        let (median_length, seconds) = rto_recovery(target_length);
        let rel_err = (median_length - target_length).abs() / target_length;
        assert!(
            rel_err <= 0.02,
            "target {target_length}: median learned length {median_length} off by {rel_err:.4}"
        );
        assert!(
            seconds <= 600.0,
            "target {target_length}: recovery took {seconds:.0}s"
        );
        println!(
            "criterion 5 PASS: target {target_length} recovered as median {median_length:.4} \
             (relative error {rel_err:.2e}) within 50k steps, {seconds:.0}s"
        );
    }
}

fn steps_for_algo(algo: CartPoleAlgo, target_length: f64, budget: usize) -> Vec<Option<u64>> {
    let params = source_params();
    let disc = discretizer();
    let config = TransferConfig {
        target_step_budget: budget,
        ..TransferConfig::cartpole_default()
    };
    let handles: Vec<_> = (0..N_SEEDS)
        .map(|seed| {
            let pretrained = PRETRAINED[seed].learner.clone();
            let threshold = 0.9 * PRETRAINED[seed].source_return;
            let disc = disc.clone();
            std::thread::spawn(move || {
                let setup = CartPoleTransferSetup {
                    source_params: params,
                    target_params: params.with_pole_length(target_length),
                    discretizer: disc,
                    pretrained,
                };
                let result = cartpole_transfer_run(&setup, algo, seed as u64, &config).unwrap();
                steps_to_reach(&result.rows, threshold, 5)
            })
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

#[test]
fn criterion_6_rpo_beats_warm_started_sac() {
    let budget = 30_000;
    let rpo = steps_for_algo(CartPoleAlgo::Rpo, 1.2, budget);
    let sac = steps_for_algo(CartPoleAlgo::SacWarm, 1.2, budget);
    let rpo_median = median_steps(&rpo);
    let sac_median = median_steps(&sac);
    println!(
        "criterion 6 data: RPO steps {rpo:?} (median {rpo_median}), SAC-warm steps {sac:?} \
         (median {sac_median})"
    );
    assert!(
        rpo_median < sac_median,
        "RPO median {rpo_median} not strictly below SAC-warm median {sac_median}"
    );
    println!(
        "criterion 6 PASS: RPO reaches 0.9x source return at median {rpo_median} target steps vs \
         SAC-warm {sac_median}"
    );
}

#[test]
fn criterion_7_rpto_superiority_at_2_0() {
    let budget = 60_000;
    let rpto = steps_for_algo(CartPoleAlgo::Rpto, 2.0, budget);
    let rpo = steps_for_algo(CartPoleAlgo::Rpo, 2.0, budget);
    let rpto_median = median_steps(&rpto);
    let rpo_median = median_steps(&rpo);
    println!(
        "criterion 7 data: RPTO steps {rpto:?} (median {rpto_median}), RPO steps {rpo:?} \
         (median {rpo_median})"
    );
    let rpto_reaches = rpto_median.is_finite();
    let rpo_fails = !rpo_median.is_finite();
    if rpto_reaches && rpo_fails {
        println!(
            "criterion 7 PASS: RPTO reaches 0.9x source return at 2.0 while plain RPO does not"
        );
    } else {
        println!(
            "criterion 7 FAIL: at pole length 2.0 the source policy itself retains more than 0.9x \
             of its source return (longer poles have slower dynamics and stay easy for the binned \
             controller), so plain RPO crosses the threshold immediately and the ordering cannot \
             separate; the qualitative finding reproduces at short-pole targets instead, see the \
             supplementary hard-target test"
        );
    }
    assert!(
        rpto_reaches && rpo_fails,
        "RPTO median {rpto_median} must be finite and RPO median {rpo_median} infinite"
    );
}

/// Supplementary (non-normative): the large-gap ordering criterion 7 looks
/// for does appear where the dynamics gap actually degrades the source
/// policy, which for these physics constants is a shorter pole.
#[test]
fn supplementary_rpto_superiority_hard_target() {
    let budget = 80_000;
    let rpto = steps_for_algo(CartPoleAlgo::Rpto, 0.45, budget);
    let rpo = steps_for_algo(CartPoleAlgo::Rpo, 0.45, budget);
    let rpto_median = median_steps(&rpto);
    let rpo_median = median_steps(&rpo);
    println!(
        "supplementary data: RPTO steps {rpto:?} (median {rpto_median}), RPO steps {rpo:?} \
         (median {rpo_median})"
    );
    assert!(
        rpto_median.is_finite() && !rpo_median.is_finite(),
        "expected RPTO to reach (median {rpto_median}) and RPO to fail (median {rpo_median}) at 0.45"
    );
    println!(
        "supplementary PASS: at pole length 0.45, RPTO reaches 0.9x source return (median \
         {rpto_median} steps) while plain RPO does not within {budget} steps"
    );
}

#[test]
fn criterion_8_tabular_rpto_gap_closure() {
    let alpha = 0.05;
    let handles: Vec<_> = (0..N_SEEDS as u64)
        .map(|seed| {
            std::thread::spawn(move || {
                let (source, target) = random_mdp_pair(1000 + seed, 5, 3, 0.9, 0.3).unwrap();
                // The well-trained source policy: exact soft optimum of the
                // source at the learner's temperature.
                let q_src = source
                    .soft_value_iteration(alpha, 1e-10, 10_000_000)
                    .unwrap();
                let mut learner = SoftLearnerState::new(
                    5,
                    3,
                    0.9,
                    SoftLearnerConfig {
                        temperature: alpha,
                        learning_rate: 0.02,
                        polyak: 0.995,
                        q_init: 0.0,
                    },
                );
                learner.q_table = q_src.clone();
                learner.target_q_table = q_src;
                let warm_return = target
                    .policy_evaluation(&learner.implied_policy())
                    .unwrap()
                    .j;
                let q_tgt = target
                    .soft_value_iteration(alpha, 1e-10, 10_000_000)
                    .unwrap();
                let pi_star = soft_greedy_improvement(&q_tgt, alpha).unwrap();
                let optimal_return = target.policy_evaluation(&pi_star).unwrap().j;

                let setup = TabularTransferSetup {
                    source,
                    target: target.clone(),
                    pretrained: learner,
                    episode_len: 100,
                };
                let config = TransferConfig {
                    target_step_budget: 40_000,
                    q_updates_per_source_step: 4,
                    rpo_learning_rate: 0.2,
                    ..TransferConfig::tabular_default()
                };
                let result =
                    tabular_transfer_run(&setup, TabularAlgo::Rpto, 3000 + seed, &config).unwrap();
                let final_return = target.policy_evaluation(&result.policy).unwrap().j;
                let required = warm_return + 0.5 * (optimal_return - warm_return);
                (
                    final_return + 1e-9 >= required,
                    warm_return,
                    optimal_return,
                    final_return,
                )
            })
        })
        .collect();
    let outcomes: Vec<(bool, f64, f64, f64)> =
        handles.into_iter().map(|h| h.join().unwrap()).collect();
    let passes = outcomes.iter().filter(|(p, _, _, _)| *p).count();
    for (seed, (pass, warm, optimal, final_return)) in outcomes.iter().enumerate() {
        println!(
            "criterion 8 data: seed {seed} warm {warm:.4} soft-optimal {optimal:.4} final \
             {final_return:.4} {}",
            if *pass { "closed" } else { "not closed" }
        );
    }
    assert!(
        passes * 2 > N_SEEDS,
        "gap closed on {passes}/{N_SEEDS} seeds; the median seed must close half the gap"
    );
    println!("criterion 8 PASS: half-gap closure on {passes}/{N_SEEDS} seeds (median seed closes)");
}

/// Pretraining invariant: tabular soft Q-learning solves the discretized
/// balancing task to a mean return of at least 450 within 200k environment
/// steps, median over 4 seeds.
#[test]
fn pretraining_solves_source_cartpole() {
    let returns: Vec<f64> = PRETRAINED[..4].iter().map(|p| p.source_return).collect();
    let median = median_f64(&returns);
    assert!(
        median >= 450.0,
        "median source return {median} (seeds: {returns:?})"
    );
    println!("pretraining invariant PASS: median source return {median:.1} over 4 seeds (all: {returns:?})");
}

#[test]
fn criterion_9_determinism() {
    let binary = env!("CARGO_BIN_EXE_relgap");
    let base = std::env::temp_dir().join(format!("relgap_accept_{}", std::process::id()));
    std::fs::create_dir_all(&base).unwrap();

    let run = |out: &std::path::Path, args: &[&str]| {
        let status = std::process::Command::new(binary)
            .args(args)
            .arg(format!("--out={}", out.display()))
            .status()
            .expect("binary runs");
        assert!(status.success(), "relgap {args:?} failed");
    };
    let compare_dirs = |a: &std::path::Path, b: &std::path::Path| {
        let mut names: Vec<String> = std::fs::read_dir(a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in &names {
            let left = std::fs::read(a.join(name)).unwrap();
            let right = std::fs::read(b.join(name)).unwrap();
            assert_eq!(left, right, "file {name} differs between identical runs");
        }
        names.len()
    };

    let verify_args = ["verify", "--verify_instances=25"];
    run(&base.join("v1"), &verify_args);
    run(&base.join("v2"), &verify_args);
    let verify_files = compare_dirs(&base.join("v1"), &base.join("v2"));

    let transfer_args = [
        "transfer",
        "--kind=tabular-transfer",
        "--seed-list=0,1",
        "--tabular_pretrain_steps=3000",
        "--target_step_budget=2000",
    ];
    run(&base.join("t1"), &transfer_args);
    run(&base.join("t2"), &transfer_args);
    let transfer_files = compare_dirs(&base.join("t1"), &base.join("t2"));

    let _ = std::fs::remove_dir_all(&base);
    println!(
        "criterion 9 PASS: byte-identical telemetry across repeated runs \
         ({verify_files} verification files, {transfer_files} transfer files)"
    );
}
