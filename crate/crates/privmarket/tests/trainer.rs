//! Training stack: misreport search, mean-field coupling, alignment and
//! critic objectives, the augmented-Lagrangian loop, and its logging.

use approx::assert_abs_diff_eq;
use ndarray::{arr1, Array1};
use privmarket::market::{BidProfile, ClientType, Scenario};
use privmarket::mechanism::{mechanism_forward, MechanismParams};
use privmarket::trainer::{
    alignment_loss, critic_loss, fit_critic, initial_params, mean_field_payment,
    misreport_mean_field, pga_regret, pga_regret_trace, train, training_log_csv,
    value_baselined_regret, value_baselined_regret_trace, BatchData, PaymentWindow, TrainConfig,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn types_from_valuations(vals: &[f64]) -> Vec<ClientType> {
    vals.iter()
        .map(|&v| ClientType {
            valuation: v,
            epsilon_declared: 1.5,
            model_size: 1.0,
            local_accuracy: 0.5,
            delta: 0.01,
        })
        .collect()
}

fn small_config(n: usize) -> TrainConfig {
    TrainConfig {
        n_clients: n,
        budget: 1.0,
        pga_steps: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn zero_critic(params: &mut MechanismParams) {
    for layer in &mut params.critic.layers {
        layer.weight.fill(0.0);
        layer.bias.fill(0.0);
    }
}

// ===== Config plumbing =====

#[test]
fn config_key_values_round_trip() {
    let mut reference = TrainConfig::default();
    reference.outer_iters = 77;
    reference.zeta = 0.25;
    reference.use_mean_field = false;
    let mut rebuilt = TrainConfig::default();
    for (k, v) in reference.to_key_values() {
        rebuilt.apply_key_value(&k, &v).unwrap();
    }
    assert_eq!(rebuilt.to_key_values(), reference.to_key_values());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let mut cfg = TrainConfig::default();
    assert!(cfg.apply_key_value("no_such_knob", "1").is_err());
    assert!(cfg.apply_key_value("outer_iters", "many").is_err());
    assert!(cfg.apply_key_value("zeta", "0.5").is_ok());
}

#[test]
fn config_validation_catches_degenerate_settings() {
    let mut cfg = TrainConfig::default();
    cfg.outer_iters = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainConfig::default();
    cfg.zeta = 1.5;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainConfig::default();
    cfg.rho_growth = 0.5;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainConfig::default();
    cfg.rho_max = cfg.rho0 / 2.0;
    assert!(cfg.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn alignment_weight_ramps_linearly_between_endpoints() {
    let mut cfg = TrainConfig::default();
    cfg.outer_iters = 11;
    cfg.lambda_mfg_start = 0.0;
    cfg.lambda_mfg_end = 0.05;
    assert_abs_diff_eq!(cfg.lambda_mfg_at(0), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(cfg.lambda_mfg_at(10), 0.05, epsilon = 1e-15);
    assert_abs_diff_eq!(cfg.lambda_mfg_at(5), 0.025, epsilon = 1e-12);
    let mut prev = -1.0;
    for t in 0..11 {
        let v = cfg.lambda_mfg_at(t);
        assert!(v >= prev);
        prev = v;
    }
}

// ===== Mean-field misreport coupling =====

#[test]
fn misreport_shifts_the_mean_field_by_one_nth() {
    // Population mean 0.5 over ten clients; one client moves 0.4 → 0.6.
    let out = misreport_mean_field(&arr1(&[0.5]), &arr1(&[0.4]), &arr1(&[0.6]), 10).unwrap();
    assert_eq!(out[0], 0.52, "exact arithmetic expected");
    // No deviation leaves the mean untouched.
    let same = misreport_mean_field(&arr1(&[0.5]), &arr1(&[0.4]), &arr1(&[0.4]), 10).unwrap();
    assert_eq!(same[0], 0.5);
    // A single client is the whole population.
    let solo = misreport_mean_field(&arr1(&[0.4]), &arr1(&[0.4]), &arr1(&[0.9]), 1).unwrap();
    assert_eq!(solo[0], 0.9);
}

#[test]
fn misreport_mean_field_validates_inputs() {
    assert!(misreport_mean_field(&arr1(&[0.5]), &arr1(&[0.4]), &arr1(&[0.6]), 0).is_err());
    assert!(misreport_mean_field(&arr1(&[0.5, 0.2]), &arr1(&[0.4]), &arr1(&[0.6]), 3).is_err());
}

// ===== Gradient-ascent misreport search =====

#[test]
fn search_is_deterministic_and_floored() {
    let params = MechanismParams::new(4, 1, 5).unwrap();
    let profile = BidProfile::from_types(&types_from_valuations(&[0.2, 0.5, 0.7, 0.9])).unwrap();
    let cfg = small_config(4);
    let (r1, m1) = pga_regret(&params, &profile, 1.0, 2, &cfg).unwrap();
    let (r2, m2) = pga_regret(&params, &profile, 1.0, 2, &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert!(r1 >= 0.0);
}

#[test]
fn search_stays_below_a_fine_exhaustive_grid() {
    // A dense one-dimensional sweep over the same misreport box is a near-
    // exhaustive upper reference for what 8 ascent steps can find.
    let params = MechanismParams::new(4, 1, 6).unwrap();
    let vals = [0.3, 0.4, 0.6, 0.8];
    let profile = BidProfile::from_types(&types_from_valuations(&vals)).unwrap();
    let budget = 1.0;
    let cfg = small_config(4);
    for client in 0..4 {
        let (found, _) = pga_regret(&params, &profile, budget, client, &cfg).unwrap();
        let truth = mechanism_forward(&params, &profile, budget).unwrap();
        let v = vals[client];
        let u_truth = truth.projected_payments[client] - v * truth.epsilon_out[client];
        let hi = 2.0 * vals.iter().cloned().fold(0.0_f64, f64::max);
        let mut best = 0.0_f64;
        for g in 0..=2000 {
            let bid = hi * g as f64 / 2000.0;
            let dev = profile.with_misreport(client, &arr1(&[bid])).unwrap();
            let res = mechanism_forward(&params, &dev, budget).unwrap();
            let u = res.projected_payments[client] - v * res.epsilon_out[client];
            best = best.max(u - u_truth);
        }
        assert!(
            found <= best + 0.01,
            "client {client}: search {found} exceeds grid bound {best}"
        );
    }
}

#[test]
fn untrained_mechanisms_are_usually_manipulable() {
    let params = MechanismParams::new(4, 1, 7).unwrap();
    let cfg = small_config(4);
    let mut manipulable = 0;
    for s in 0..12 {
        let types = privmarket::market::sample_types(Scenario::Uniform, 4, 100 + s);
        let profile = BidProfile::from_types(&types).unwrap();
        for client in 0..4 {
            let (r, _) = pga_regret(&params, &profile, 1.0, client, &cfg).unwrap();
            if r > 1e-4 {
                manipulable += 1;
            }
        }
    }
    assert!(
        manipulable >= 24,
        "expected widespread exploitability of an untrained mechanism, got {manipulable}/48"
    );
}

#[test]
fn trace_records_one_entry_per_evaluation() {
    let params = MechanismParams::new(3, 1, 8).unwrap();
    let profile = BidProfile::from_types(&types_from_valuations(&[0.2, 0.5, 0.8])).unwrap();
    let cfg = small_config(3);
    let trace = pga_regret_trace(&params, &profile, 1.0, 1, &cfg).unwrap();
    assert_eq!(trace.contributions.len(), cfg.pga_steps);
    let best = trace
        .contributions
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_abs_diff_eq!(trace.regret, best.max(0.0), epsilon = 1e-12);
}

#[test]
fn zero_critic_baseline_reproduces_plain_search_bitwise() {
    let mut params = MechanismParams::new(4, 1, 9).unwrap();
    zero_critic(&mut params);
    let cfg = small_config(4);
    for s in 0..6 {
        let types = privmarket::market::sample_types(Scenario::Uniform, 4, 200 + s);
        let profile = BidProfile::from_types(&types).unwrap();
        for client in 0..4 {
            let (plain, _) = pga_regret(&params, &profile, 1.0, client, &cfg).unwrap();
            let baselined = value_baselined_regret(
                &params,
                Some(&params.critic),
                &profile,
                1.0,
                client,
                &cfg,
            )
            .unwrap();
            assert_eq!(plain.to_bits(), baselined.to_bits());
            let t1 = pga_regret_trace(&params, &profile, 1.0, client, &cfg).unwrap();
            let t2 = value_baselined_regret_trace(
                &params,
                Some(&params.critic),
                &profile,
                1.0,
                client,
                &cfg,
            )
            .unwrap();
            assert_eq!(t1.best_misreport, t2.best_misreport);
            for (a, b) in t1.contributions.iter().zip(t2.contributions.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

#[test]
fn baselined_search_requires_a_critic() {
    let params = MechanismParams::new(3, 1, 10).unwrap();
    let profile = BidProfile::from_types(&types_from_valuations(&[0.2, 0.5, 0.8])).unwrap();
    assert!(value_baselined_regret(&params, None, &profile, 1.0, 0, &small_config(3)).is_err());
}

// ===== Alignment objective =====

#[test]
fn alignment_loss_vanishes_at_its_target_and_grows_quadratically() {
    let cfg = small_config(4);
    let params = MechanismParams::new(4, 1, 11).unwrap();
    let batch = BatchData::sample(Scenario::Uniform, 4, 6, 30).unwrap();
    let aug = batch.augmented(cfg.use_mean_field);
    let fwd = privmarket::mechanism::forward_batch(&params, &aug, &batch.epsilons, cfg.budget).unwrap();
    let targets = fwd.projected_payments.clone();
    let scales = Array1::ones(4);

    let zero = alignment_loss(&params, &batch, &targets, &scales, &cfg).unwrap();
    assert_abs_diff_eq!(zero, 0.0, epsilon = 1e-12);

    // Small uniform offsets stay in the quadratic regime of the robust loss:
    // doubling the offset quadruples the value.
    let d1 = alignment_loss(&params, &batch, &(&targets + 0.005), &scales, &cfg).unwrap();
    let d2 = alignment_loss(&params, &batch, &(&targets + 0.01), &scales, &cfg).unwrap();
    assert!(d1 > 0.0);
    assert_abs_diff_eq!(d2 / d1, 4.0, epsilon = 1e-6);
}

#[test]
fn payment_window_scales_follow_payment_dispersion() {
    let pays = ndarray::arr2(&[[0.1, 0.4], [0.3, 0.8]]);
    let mut w1 = PaymentWindow::new(2, 8);
    w1.push(&pays);
    let s1 = w1.scales();
    let mut w2 = PaymentWindow::new(2, 8);
    w2.push(&(&pays * 2.0));
    let s2 = w2.scales();
    for i in 0..2 {
        assert!(s1[i] > 0.0);
        assert_abs_diff_eq!(s2[i] / s1[i], 2.0, epsilon = 1e-9);
    }
    // Cold start: fewer than two observations fall back to unit scale.
    let cold = PaymentWindow::new(3, 4).scales();
    assert_eq!(cold, Array1::ones(3));
}

#[test]
fn identical_pool_makes_the_mean_field_payment_exact() {
    // When every client in the pool bids the same value, opponent resampling
    // is a no-op and the expectation collapses to a single evaluation.
    let params = MechanismParams::new(5, 1, 12).unwrap();
    let types = types_from_valuations(&[0.6; 5]);
    let pool = BidProfile::from_types(&types).unwrap();
    let budget = 1.0;
    let mut rng = StdRng::seed_from_u64(77);
    let paid = mean_field_payment(&params, &arr1(&[0.6]), &pool, 3, budget, &mut rng).unwrap();
    let direct = mechanism_forward(&params, &pool, budget).unwrap();
    assert_abs_diff_eq!(paid, direct.projected_payments[0], epsilon = 1e-12);
}

// ===== Critic =====

#[test]
fn critic_loss_is_nonnegative_and_fitting_reduces_it() {
    let cfg = small_config(4);
    let params = MechanismParams::new(4, 1, 13).unwrap();
    let batch = BatchData::sample(Scenario::Uniform, 4, 8, 40).unwrap();
    let picks: Vec<(usize, usize)> = (0..8).map(|l| (l, l % 4)).collect();
    let (states, pools) =
        privmarket::trainer::critic::states_from_batch(&batch, &picks, cfg.use_mean_field).unwrap();

    let eval_batch: Vec<(Array1<f64>, Array1<f64>)> = states
        .iter()
        .map(|s| (s.bid.clone(), s.mean_field.clone()))
        .collect();
    let before = critic_loss(&params.critic, &eval_batch, &params, &cfg).unwrap();
    assert!(before.is_finite() && before >= 0.0);
    let again = critic_loss(&params.critic, &eval_batch, &params, &cfg).unwrap();
    assert_eq!(before.to_bits(), again.to_bits(), "loss must be deterministic");

    // A single round freezes the Bellman targets once, so both runs below
    // descend the same fixed quadratic. The recorded value is the residual at
    // the weights entering the final step: one step reports the starting
    // residual, many steps report it after the preceding updates.
    let mut critic_short = params.critic.clone();
    let start =
        fit_critic(&mut critic_short, &params, &states, &pools, &cfg, 1, 1).unwrap()[0];
    let mut critic_long = params.critic.clone();
    let settled =
        fit_critic(&mut critic_long, &params, &states, &pools, &cfg, 1, 60).unwrap()[0];
    assert!(start.is_finite() && settled.is_finite());
    assert!(
        settled < start,
        "descending a frozen target should shrink the residual: {settled} vs {start}"
    );

    // Multi-round fits refresh targets between rounds; the trace stays finite
    // and one entry per round.
    let mut critic = params.critic.clone();
    let trace = fit_critic(&mut critic, &params, &states, &pools, &cfg, 10, 20).unwrap();
    assert_eq!(trace.len(), 10);
    for v in &trace {
        assert!(v.is_finite() && *v >= 0.0);
    }
    let after = critic_loss(&critic, &eval_batch, &params, &cfg).unwrap();
    assert!(after.is_finite() && after >= 0.0);
}

// ===== Full training loop =====

fn smoke_config() -> TrainConfig {
    TrainConfig {
        outer_iters: 12,
        inner_steps: 1,
        batch_size: 3,
        pga_steps: 4,
        n_clients: 3,
        critic_batch: 2,
        mc_opponents: 2,
        budget: 1.0,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn training_logs_every_iteration_with_the_penalty_schedule() {
    let cfg = smoke_config();
    let out = train(&cfg, Scenario::Uniform).unwrap();
    assert_eq!(out.log.len(), 12);

    for (t, row) in out.log.iter().enumerate() {
        assert_eq!(row.iteration, t);
        assert!(row.revenue.is_finite());
        assert!(row.mean_regret >= 0.0);
        // Penalty weight grows by the configured factor every tenth
        // iteration (applied at the end of that iteration), capped later.
        let expect_rho = cfg.rho0 * cfg.rho_growth.powi(((t + 1) / 10) as i32);
        assert_abs_diff_eq!(row.rho, expect_rho.min(cfg.rho_max), epsilon = 1e-12);
        // The ramp endpoints of the alignment weight.
        assert_abs_diff_eq!(row.lambda_mfg, cfg.lambda_mfg_at(t), epsilon = 1e-15);
    }

    // Dual ascent never decreases the multipliers.
    let mut prev = -1.0;
    for row in &out.log {
        assert!(row.lambda_mean >= prev - 1e-12);
        prev = row.lambda_mean;
    }
    assert!(out.lagrangian.multipliers.iter().all(|&l| l >= 0.0));
    assert_abs_diff_eq!(out.lagrangian.penalty, out.log.last().unwrap().rho, epsilon = 0.0);

    let csv = training_log_csv(&out.log);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with("iteration,revenue,mean_regret"));
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let cfg = TrainConfig {
        outer_iters: 2,
        ..smoke_config()
    };
    let a = train(&cfg, Scenario::Uniform).unwrap();
    let b = train(&cfg, Scenario::Uniform).unwrap();
    assert_eq!(
        a.params.header.layers[0].weight, b.params.header.layers[0].weight,
        "same seed must reproduce identical parameters"
    );
    let mut cfg2 = cfg.clone();
    cfg2.seed = 6;
    let c = train(&cfg2, Scenario::Uniform).unwrap();
    assert_ne!(a.params.header.layers[0].weight, c.params.header.layers[0].weight);
}

#[test]
fn initial_params_match_the_training_start_point() {
    let cfg = smoke_config();
    let start = initial_params(&cfg).unwrap();
    let again = initial_params(&cfg).unwrap();
    assert_eq!(start.header.layers[0].weight, again.header.layers[0].weight);
    let trained = train(&cfg, Scenario::Uniform).unwrap();
    assert_ne!(
        start.header.layers[0].weight, trained.params.header.layers[0].weight,
        "training must move the parameters"
    );
}

#[test]
fn critic_is_frozen_when_its_objective_is_disabled() {
    let mut cfg = smoke_config();
    cfg.outer_iters = 3;
    cfg.lambda_hjb = 0.0;
    cfg.zeta = 0.0;
    let out = train(&cfg, Scenario::Uniform).unwrap();
    let start = initial_params(&cfg).unwrap();
    for (a, b) in out.params.critic.layers.iter().zip(start.critic.layers.iter()) {
        assert_eq!(a.weight, b.weight, "disabled critic must not be updated");
        assert_eq!(a.bias, b.bias);
    }
}

#[test]
fn ablation_flags_are_honored() {
    let mut cfg = smoke_config();
    cfg.outer_iters = 2;
    cfg.use_mean_field = false;
    cfg.mfg_update_in_pga = false;
    cfg.zeta = 0.0;
    cfg.lambda_mfg_start = 0.0;
    cfg.lambda_mfg_end = 0.0;
    let out = train(&cfg, Scenario::Uniform).unwrap();
    assert_eq!(out.log.len(), 2);
    for row in &out.log {
        assert_abs_diff_eq!(row.lambda_mfg, 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(row.loss_align, 0.0, epsilon = 0.0);
    }
}

#[test]
fn training_rejects_multi_item_markets_for_now() {
    let mut cfg = smoke_config();
    cfg.n_items = 2;
    assert!(train(&cfg, Scenario::Uniform).is_err());
}

#[test]
fn batch_views_are_consistent() {
    let batch = BatchData::sample(Scenario::Bimodal, 5, 7, 9).unwrap();
    assert_eq!(batch.batch_len(), 7);
    assert_eq!(batch.n_clients, 5);
    let profile = batch.profile(3).unwrap();
    for i in 0..5 {
        assert_eq!(profile.bids[(i, 0)], batch.bids[(3, i)]);
    }
    let aug = batch.augmented(true);
    assert_eq!(aug.dim(), (7, 6));
    for l in 0..7 {
        let mean: f64 = (0..5).map(|i| batch.bids[(l, i)]).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(aug[(l, 5)], mean, epsilon = 1e-12);
    }
    // Without the mean-field column the augmented row is padded with zeros.
    let plain = batch.augmented(false);
    assert_eq!(plain.dim(), (7, 6));
    for l in 0..7 {
        assert_eq!(plain[(l, 5)], 0.0);
    }
    assert!(batch.profile(7).is_err());
}
