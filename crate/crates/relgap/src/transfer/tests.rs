use super::*;
use crate::env::{next_state, random_mdp_pair, CartPoleEnv, CartPoleState, TabularEnv};
use crate::soft_rl::{pretrain, Origin, PretrainConfig, ReplayBuffer, SoftLearnerConfig};
use approx::assert_abs_diff_eq;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn transition(state: usize, action: usize, reward: f64, next_state: usize) -> Transition {
    Transition {
        state,
        action,
        reward,
        next_state,
        done: false,
        origin: Origin::Target,
    }
}

#[test]
fn weight_normalization_spans_exact_interval() {
    let eps = 0.5;
    let raw = [3.0, 7.5, 1.25, 9.0, 4.4];
    let weights = normalize_weights(&raw, eps);
    let min = weights
        .iter()
        .map(|w| w.normalized)
        .fold(f64::INFINITY, f64::min);
    let max = weights
        .iter()
        .map(|w| w.normalized)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(min, eps);
    assert_eq!(max, 1.0 + eps);
    for w in &weights {
        assert!((eps..=1.0 + eps).contains(&w.normalized));
    }
    // Degenerate snapshot collapses to the minimum weight uniformly.
    let flat = normalize_weights(&[2.0, 2.0, 2.0], eps);
    assert!(flat.iter().all(|w| w.normalized == eps));
}

proptest::proptest! {
    #[test]
    fn weight_normalization_invariant_holds(
        raw in proptest::collection::vec(0.0f64..1e6, 2..40),
        eps in 0.01f64..2.0,
    ) {
        let weights = normalize_weights(&raw, eps);
        let min = weights.iter().map(|w| w.normalized).fold(f64::INFINITY, f64::min);
        let max = weights.iter().map(|w| w.normalized).fold(f64::NEG_INFINITY, f64::max);
        let span = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - raw.iter().copied().fold(f64::INFINITY, f64::min);
        if span > 1e-6 {
            proptest::prop_assert_eq!(min, eps);
            proptest::prop_assert_eq!(max, 1.0 + eps);
        } else if span == 0.0 {
            proptest::prop_assert!(weights.iter().all(|w| w.normalized == eps));
        }
        proptest::prop_assert!(weights.iter().all(|w| (eps..=1.0 + eps).contains(&w.normalized)));
    }
}

#[test]
fn rpo_alternation_uses_source_every_fth_update() {
    let config = TransferConfig {
        alternate_frequency: 5,
        ..TransferConfig::tabular_default()
    };
    let learner = SoftLearnerState::new(4, 2, 0.9, SoftLearnerConfig::default());
    let mut actor = RpoActor::from_policy(&crate::mdp::TabularPolicy::uniform(4, 2));
    let target_batch = vec![transition(0, 0, 0.0, 1)];
    let source_batch = vec![transition(3, 1, 0.0, 2)];
    let n = 23u64;
    for _ in 0..n {
        rpo_update(
            &mut actor,
            &learner,
            &target_batch,
            Some(&source_batch),
            &config,
        )
        .unwrap();
    }
    assert_eq!(actor.update_count(), n);
    assert_eq!(actor.source_batch_uses(), n / 5);
}

#[test]
fn rpo_on_identical_environments_matches_sac_improvement() {
    // When source and target coincide, the relative update on target states
    // is the plain improvement step on identically sampled source states.
    let (source, _) = random_mdp_pair(700, 5, 3, 0.9, 0.0).unwrap();
    let mut learner = SoftLearnerState::new(5, 3, 0.9, SoftLearnerConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    for _ in 0..200 {
        let s = rng.random_range(0..5);
        let a = rng.random_range(0..3);
        learner.q_table[[s, a]] += rng.random::<f64>();
    }
    let config = TransferConfig::tabular_default();

    let make_batches = |origin: Origin| -> Vec<Vec<Transition>> {
        let mut env = TabularEnv::new(source.clone(), 40);
        let mut buffer = ReplayBuffer::new(10_000, 702);
        let mut rng = ChaCha8Rng::seed_from_u64(703);
        for _ in 0..5 {
            crate::soft_rl::collect_episode(&mut env, &learner, &mut rng, &mut buffer, origin);
        }
        (0..30).map(|_| buffer.sample(16)).collect()
    };

    let mut rpo_actor = RpoActor::from_policy(&learner.implied_policy());
    for batch in make_batches(Origin::Target) {
        rpo_update(&mut rpo_actor, &learner, &batch, None, &config).unwrap();
    }
    let mut sac_actor = RpoActor::from_policy(&learner.implied_policy());
    for batch in make_batches(Origin::Source) {
        rpo_update(&mut sac_actor, &learner, &batch, None, &config).unwrap();
    }
    let max_diff = rpo_actor
        .policy()
        .probs()
        .iter()
        .zip(sac_actor.policy().probs().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff <= 1e-12, "actor tables differ by {max_diff}");
}

#[test]
fn rpo_improves_exact_target_return_on_close_pair() {
    let config = TransferConfig {
        target_step_budget: 3_000,
        ..TransferConfig::tabular_default()
    };
    let mut improvements = Vec::new();
    for seed in 0..8u64 {
        let (source, target) = random_mdp_pair(710 + seed, 5, 3, 0.9, 0.05).unwrap();
        let mut env = TabularEnv::new(source.clone(), 50);
        let (learner, _) =
            pretrain(&mut env, 720 + seed, &PretrainConfig::tabular_default(0.9)).unwrap();
        let setup = TabularTransferSetup {
            source: source.clone(),
            target: target.clone(),
            pretrained: learner,
            episode_len: 50,
        };
        let initial_j = target
            .policy_evaluation(&setup.pretrained.implied_policy())
            .unwrap()
            .j;
        let result = tabular_transfer_run(&setup, TabularAlgo::Rpo, 730 + seed, &config).unwrap();
        let final_j = target.policy_evaluation(&result.policy).unwrap().j;
        improvements.push(final_j - initial_j);
    }
    improvements.sort_by(f64::total_cmp);
    let median = 0.5 * (improvements[3] + improvements[4]);
    assert!(
        median >= 0.0,
        "median improvement {median}, all: {improvements:?}"
    );
}

#[test]
fn rto_tabular_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(740);
    let (_, target) = random_mdp_pair(741, 5, 3, 0.9, 0.4).unwrap();
    let mut model = TabularDynamicsModel::from_transition(
        random_mdp_pair(742, 5, 3, 0.9, 0.0).unwrap().0.transition(),
    );
    // Random batch with arbitrary fixed weights.
    let batch: Vec<Transition> = (0..64)
        .map(|_| {
            let s = rng.random_range(0..5);
            let a = rng.random_range(0..3);
            let sn = crate::env::sample_categorical(
                &mut rng,
                target
                    .transition()
                    .slice(ndarray::s![s, a, ..])
                    .iter()
                    .copied(),
            );
            transition(s, a, 0.0, sn)
        })
        .collect();
    let weights: Vec<f64> = (0..64).map(|_| 0.5 + rng.random::<f64>()).collect();
    let analytic = rto_tabular_gradient(&model, &batch, &weights);

    let h = 1e-6;
    let mut probes = 0;
    while probes < 100 {
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
            continue; // row never sampled; no signal
        }
        let rel = (fd - an).abs() / an.abs().max(1e-7);
        assert!(
            rel <= 1e-5,
            "relative error {rel} at ({s},{a},{sn}): fd {fd} vs analytic {an}"
        );
        probes += 1;
    }
}

#[test]
fn rto_uniform_weights_degenerate_to_supervised_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(750);
    let (source, target) = random_mdp_pair(751, 4, 2, 0.9, 0.3).unwrap();
    let model = TabularDynamicsModel::from_transition(source.transition());
    let batch: Vec<Transition> = (0..32)
        .map(|_| {
            let s = rng.random_range(0..4);
            let a = rng.random_range(0..2);
            let sn = crate::env::sample_categorical(
                &mut rng,
                target
                    .transition()
                    .slice(ndarray::s![s, a, ..])
                    .iter()
                    .copied(),
            );
            transition(s, a, 1.0, sn)
        })
        .collect();
    // All raw weights equal (constant rewards, zero values), so the
    // normalization degenerates to eps uniformly.
    let constant_reward = ndarray::Array3::from_elem((4, 2, 4), 1.0);
    let raw = rto_raw_weights_tabular(&model, &constant_reward, &batch, &Array1::zeros(4), 0.9);
    let eps = 0.5;
    let normalized: Vec<f64> = normalize_weights(&raw, eps)
        .iter()
        .map(|w| w.normalized)
        .collect();
    assert!(normalized.iter().all(|&w| w == eps));
    let weighted = rto_tabular_gradient(&model, &batch, &normalized);
    let supervised = rto_tabular_gradient(&model, &batch, &vec![1.0; batch.len()]);
    for (w, s) in weighted.iter().zip(supervised.iter()) {
        assert_abs_diff_eq!(*w, eps * s, epsilon = 1e-10);
    }
}

#[test]
fn rto_gradient_mean_vanishes_at_true_dynamics() {
    let (_, target) = random_mdp_pair(760, 5, 3, 0.9, 0.4).unwrap();
    let model = TabularDynamicsModel::from_transition(target.transition());
    let mut rng = ChaCha8Rng::seed_from_u64(761);
    let n = 10_000usize;
    let dims = model.logits().dim();
    let mut sum = ndarray::Array3::<f64>::zeros(dims);
    let mut sum_sq = ndarray::Array3::<f64>::zeros(dims);
    for _ in 0..n {
        let s = rng.random_range(0..5);
        let a = rng.random_range(0..3);
        let sn = crate::env::sample_categorical(
            &mut rng,
            target
                .transition()
                .slice(ndarray::s![s, a, ..])
                .iter()
                .copied(),
        );
        let g = rto_tabular_gradient(&model, &[transition(s, a, 0.0, sn)], &[1.0]);
        sum.zip_mut_with(&g, |acc, &v| *acc += v);
        sum_sq.zip_mut_with(&g, |acc, &v| *acc += v * v);
    }
    for ((s, a, sn), &total) in sum.indexed_iter() {
        let mean = total / n as f64;
        let var = (sum_sq[[s, a, sn]] / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se + 1e-12,
            "component ({s},{a},{sn}): mean {mean} exceeds 3 SE {se}"
        );
    }
}

#[test]
fn rto_training_shrinks_model_gap_below_five_percent() {
    let (source, target) = random_mdp_pair(770, 5, 3, 0.9, 0.3).unwrap();
    let initial_tv = crate::relativity::tv_divergence_dynamics(&source, &target).unwrap();
    // Dynamics fitting works with an arbitrary policy; the max-TV gap over
    // every (s, a) row is only identifiable if every row gets data, so the
    // collection policy is uniform (a fresh learner's implied policy).
    let uniform_learner = SoftLearnerState::new(5, 3, 0.9, SoftLearnerConfig::default());
    let setup = TabularTransferSetup {
        source,
        target: target.clone(),
        pretrained: uniform_learner,
        episode_len: 100,
    };
    let config = TransferConfig {
        target_step_budget: 50_000,
        ..TransferConfig::tabular_default()
    };
    let result = tabular_transfer_run(&setup, TabularAlgo::Rto, 772, &config).unwrap();
    let final_tv = result.final_model_tv.unwrap();
    assert!(
        initial_tv > 0.05,
        "pair too close to start with: {initial_tv}"
    );
    assert!(
        final_tv < 0.05,
        "model TV gap only reached {final_tv} from {initial_tv}"
    );
    assert!(
        result.rto_updates
            <= config.target_step_budget as u64 * config.dynamics_replay_ratio as u64
    );
}

#[test]
fn rto_physical_zero_residual_at_true_length() {
    let params = crate::env::CartPoleParams::default();
    let discretizer =
        Discretizer::default_cartpole(params.position_fail_threshold, params.angle_fail_threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(780);
    let batch: Vec<PhysicalTransition> = (0..32)
        .map(|_| {
            let state = CartPoleState {
                cart_position: rng.random_range(-1.0..1.0),
                cart_velocity: rng.random_range(-1.0..1.0),
                pole_angle: rng.random_range(-0.2..0.2),
                pole_angular_velocity: rng.random_range(-1.0..1.0),
            };
            let action = rng.random_range(0..2usize);
            let next = next_state(
                &params,
                &state,
                crate::env::ForceDirection::from_action(action),
            );
            PhysicalTransition {
                indexed: transition(
                    discretizer.index(&state),
                    action,
                    1.0,
                    discretizer.index(&next),
                ),
                state,
                next_state: next,
            }
        })
        .collect();
    let v = Array1::zeros(discretizer.n_cells());
    let config = TransferConfig::cartpole_default();
    let (new_params, loss) =
        rto_update_physical(&params, &batch, &v, &discretizer, 0.99, &config).unwrap();
    assert!(loss.abs() <= 1e-16);
    assert!((new_params.pole_length - params.pole_length).abs() <= 1e-8);
}

#[test]
fn rto_physical_loss_non_increasing_on_fixed_batch() {
    let source = crate::env::CartPoleParams::default();
    let target = source.with_pole_length(1.4);
    let discretizer =
        Discretizer::default_cartpole(source.position_fail_threshold, source.angle_fail_threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(781);
    let batch: Vec<PhysicalTransition> = (0..64)
        .map(|_| {
            let state = CartPoleState {
                cart_position: rng.random_range(-1.0..1.0),
                cart_velocity: rng.random_range(-1.0..1.0),
                pole_angle: rng.random_range(-0.2..0.2),
                pole_angular_velocity: rng.random_range(-1.0..1.0),
            };
            let action = rng.random_range(0..2usize);
            let next = next_state(
                &target,
                &state,
                crate::env::ForceDirection::from_action(action),
            );
            PhysicalTransition {
                indexed: transition(
                    discretizer.index(&state),
                    action,
                    1.0,
                    discretizer.index(&next),
                ),
                state,
                next_state: next,
            }
        })
        .collect();
    let v = Array1::zeros(discretizer.n_cells());
    let config = TransferConfig {
        rto_learning_rate: 1e-3,
        ..TransferConfig::cartpole_default()
    };
    let mut params = source;
    let mut previous = f64::INFINITY;
    for _ in 0..200 {
        let (next_params, loss) =
            rto_update_physical(&params, &batch, &v, &discretizer, 0.99, &config).unwrap();
        assert!(
            loss <= previous + 1e-12,
            "loss rose from {previous} to {loss}"
        );
        previous = loss;
        params = next_params;
    }
    assert!(
        params.pole_length > source.pole_length,
        "length moved toward the target"
    );
}

#[test]
fn transfer_config_validation() {
    let mut config = TransferConfig::tabular_default();
    assert!(config.validate().is_ok());
    config.alternate_frequency = 0;
    assert!(config.validate().is_err());
    config = TransferConfig {
        rto_min_weight: 0.0,
        ..TransferConfig::tabular_default()
    };
    assert!(config.validate().is_err());
}

#[test]
fn steps_to_reach_uses_trailing_window() {
    let rows: Vec<TransferTelemetryRow> = [10.0, 20.0, 100.0, 100.0, 100.0, 40.0]
        .iter()
        .enumerate()
        .map(|(i, &ret)| TransferTelemetryRow {
            target_steps: (i as u64 + 1) * 100,
            source_steps: 0,
            target_return: ret,
            source_return: 0.0,
            model_gap: 0.0,
            rto_loss: 0.0,
            rpo_entropy: 0.0,
        })
        .collect();
    // Window 3: means are 43.3, 73.3, 100, 80 starting at row index 2.
    assert_eq!(steps_to_reach(&rows, 90.0, 3), Some(500));
    assert_eq!(steps_to_reach(&rows, 101.0, 3), None);
}

#[test]
fn tabular_rpto_run_is_deterministic() {
    let (source, target) = random_mdp_pair(790, 4, 2, 0.9, 0.3).unwrap();
    let mut env = TabularEnv::new(source.clone(), 40);
    let (learner, _) = pretrain(
        &mut env,
        791,
        &PretrainConfig {
            max_steps: 5_000,
            ..PretrainConfig::tabular_default(0.9)
        },
    )
    .unwrap();
    let setup = TabularTransferSetup {
        source,
        target,
        pretrained: learner,
        episode_len: 40,
    };
    let config = TransferConfig {
        target_step_budget: 2_000,
        ..TransferConfig::tabular_default()
    };
    let a = tabular_transfer_run(&setup, TabularAlgo::Rpto, 792, &config).unwrap();
    let b = tabular_transfer_run(&setup, TabularAlgo::Rpto, 792, &config).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
        assert_eq!(ra.target_return.to_bits(), rb.target_return.to_bits());
        assert_eq!(ra.model_gap.to_bits(), rb.model_gap.to_bits());
    }
    assert_eq!(
        a.final_model_tv.unwrap().to_bits(),
        b.final_model_tv.unwrap().to_bits()
    );
    // Pacing: dynamics updates never exceed the replay ratio per step.
    assert!(
        a.rto_updates <= a.rows.last().unwrap().target_steps * config.dynamics_replay_ratio as u64
    );
}

#[test]
fn rpto_noop_transfer_never_degrades() {
    // Target identical to the source and the model initialized exactly:
    // nothing to transfer, so the exact target return must stay within 5%
    // of the warm-start return throughout, median over 4 seeds.
    let mut medians = Vec::new();
    for seed in 0..4u64 {
        let (source, _) = random_mdp_pair(820 + seed, 5, 3, 0.9, 0.0).unwrap();
        let mut env = TabularEnv::new(source.clone(), 50);
        let (learner, _) =
            pretrain(&mut env, 830 + seed, &PretrainConfig::tabular_default(0.9)).unwrap();
        let j0 = source
            .policy_evaluation(&learner.implied_policy())
            .unwrap()
            .j;
        let setup = TabularTransferSetup {
            source: source.clone(),
            target: source.clone(),
            pretrained: learner,
            episode_len: 50,
        };
        let config = TransferConfig {
            target_step_budget: 4_000,
            ..TransferConfig::tabular_default()
        };
        let result = tabular_transfer_run(&setup, TabularAlgo::Rpto, 840 + seed, &config).unwrap();
        let min_return = result
            .rows
            .iter()
            .map(|r| r.target_return)
            .fold(f64::INFINITY, f64::min);
        medians.push(min_return / j0);
    }
    medians.sort_by(f64::total_cmp);
    let median = 0.5 * (medians[1] + medians[2]);
    assert!(
        median >= 0.95,
        "median worst-case return ratio {median} (all: {medians:?})"
    );
}

#[test]
fn cartpole_transfer_smoke_run() {
    let source_params = crate::env::CartPoleParams {
        max_episode_steps: 60,
        ..Default::default()
    };
    let target_params = source_params.with_pole_length(1.2);
    let discretizer = Discretizer::default_cartpole(
        source_params.position_fail_threshold,
        source_params.angle_fail_threshold,
    );
    let mut env = CartPoleEnv::new(source_params, discretizer.clone()).unwrap();
    let (learner, _) = pretrain(
        &mut env,
        800,
        &crate::soft_rl::PretrainConfig {
            max_steps: 3_000,
            ..crate::soft_rl::PretrainConfig::cartpole_default()
        },
    )
    .unwrap();
    let setup = CartPoleTransferSetup {
        source_params,
        target_params,
        discretizer,
        pretrained: learner,
    };
    let config = TransferConfig {
        target_step_budget: 500,
        ..TransferConfig::cartpole_default()
    };
    for algo in [
        CartPoleAlgo::SacWarm,
        CartPoleAlgo::Rpo,
        CartPoleAlgo::Rto,
        CartPoleAlgo::Rpto,
    ] {
        let result = cartpole_transfer_run(&setup, algo, 801, &config).unwrap();
        assert!(!result.rows.is_empty());
        let length = result.final_pole_length.unwrap();
        assert!(length > 0.0 && length.is_finite());
        for row in &result.rows {
            assert!(row.target_return.is_finite());
            assert!(row.rpo_entropy.is_finite());
        }
    }
}
