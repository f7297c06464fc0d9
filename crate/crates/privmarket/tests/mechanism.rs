//! The learned auction network: structural feasibility of its outputs,
//! budget projection arithmetic, analytic-vs-numeric gradients for the full
//! differentiable path, and checkpoint persistence.

use approx::assert_abs_diff_eq;
use ndarray::{arr1, arr2, Array2};
use privmarket::diffnet::{Mlp, OutputActivation};
use privmarket::market::{BidProfile, ClientType};
use privmarket::mechanism::{
    backward_batch, build_augmented_input, client_utility_under_mechanism, forward_batch,
    forward_to_outcome, load_mechanism, mechanism_forward, parse_mechanism, render_mechanism,
    save_mechanism, MechanismParams,
};
use proptest::prelude::*;

const FD_H: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_GUARD: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_GUARD)
}

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

/// A narrow mechanism (hidden width 6) so exhaustive finite differences stay
/// cheap; shapes follow the production layout exactly.
fn tiny_params(n: usize, m: usize, seed: u64) -> MechanismParams {
    let nm = n * m;
    let aug = (n + 1) * m;
    MechanismParams {
        header: Mlp::new(&[aug, 6, 6, nm], OutputActivation::Identity, seed),
        alloc_head: Mlp::new(&[nm, 6, nm], OutputActivation::Identity, seed + 1),
        pay_head: Mlp::new(&[nm, 6, nm], OutputActivation::Sigmoid, seed + 2),
        critic: Mlp::new(&[2 * m, 4, 1], OutputActivation::Identity, seed + 3),
        n_clients_trained: n,
        n_items: m,
    }
}

fn profile_for(n: usize, seed: u64) -> BidProfile {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    BidProfile::from_types(&types_from_valuations(&vals)).unwrap()
}

#[test]
fn augmented_input_appends_the_mean_field_row() {
    let bids = arr2(&[[1.0], [2.0], [3.0]]);
    let eps = arr2(&[[1.0], [1.0], [1.0]]);
    let profile = BidProfile::new(bids, eps).unwrap();
    let aug = build_augmented_input(&profile);
    assert_eq!(aug, arr1(&[1.0, 2.0, 3.0, 2.0]));
}

#[test]
fn outputs_are_structurally_feasible() {
    let params = MechanismParams::new(5, 1, 3).unwrap();
    let profile = profile_for(5, 4);
    let budget = 0.8;
    let res = mechanism_forward(&params, &profile, budget).unwrap();

    // Allocation: every item's shares form a distribution over clients.
    let col: f64 = res.allocation.column(0).sum();
    assert_abs_diff_eq!(col, 1.0, epsilon = 1e-9);
    for i in 0..5 {
        assert!(res.allocation[(i, 0)] > 0.0);
        assert!(res.pay_fractions[(i, 0)] > 0.0 && res.pay_fractions[(i, 0)] < 1.0);
        // Exposure is the allocation-weighted declared budget.
        let expect = res.allocation[(i, 0)] * profile.epsilons[(i, 0)];
        assert_abs_diff_eq!(res.epsilon_out[i], expect, epsilon = 1e-12);
        // Raw payment is the fraction of the own bid.
        let expect_pay = res.pay_fractions[(i, 0)] * profile.bids[(i, 0)];
        assert_abs_diff_eq!(res.raw_payments[i], expect_pay, epsilon = 1e-12);
    }
    // Budget feasibility after projection.
    assert!(res.projected_payments.sum() <= budget + 1e-9);
}

#[test]
fn projection_scales_only_when_binding() {
    let params = MechanismParams::new(4, 1, 8).unwrap();
    let profile = profile_for(4, 9);

    // Generous budget: the projection is the identity.
    let slack = mechanism_forward(&params, &profile, 1e6).unwrap();
    for i in 0..4 {
        assert_abs_diff_eq!(
            slack.projected_payments[i],
            slack.raw_payments[i],
            epsilon = 1e-12
        );
    }

    // Tight budget: payments shrink by the common factor B/S, preserving
    // ratios, and the total lands exactly on the budget.
    let budget = slack.raw_payments.sum() / 3.0;
    let tight = mechanism_forward(&params, &profile, budget).unwrap();
    let scale = budget / slack.raw_payments.sum();
    for i in 0..4 {
        assert_abs_diff_eq!(
            tight.projected_payments[i],
            slack.raw_payments[i] * scale,
            epsilon = 1e-12
        );
    }
    assert_abs_diff_eq!(tight.projected_payments.sum(), budget, epsilon = 1e-9);
}

#[test]
fn batched_forward_matches_single_profile_calls() {
    let n = 4;
    let params = tiny_params(n, 1, 5);
    let p1 = profile_for(n, 10);
    let p2 = profile_for(n, 11);
    let budget = 0.6;

    let mut inputs = Array2::zeros((2, n + 1));
    let mut epsilons = Array2::zeros((2, n));
    for (row, p) in [(0, &p1), (1, &p2)] {
        let aug = build_augmented_input(p);
        for c in 0..=n {
            inputs[(row, c)] = aug[c];
        }
        for c in 0..n {
            epsilons[(row, c)] = p.epsilons[(c, 0)];
        }
    }
    let batch = forward_batch(&params, &inputs, &epsilons, budget).unwrap();
    for (row, p) in [(0, &p1), (1, &p2)] {
        let single = mechanism_forward(&params, p, budget).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(
                batch.projected_payments[(row, i)],
                single.projected_payments[i],
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                batch.epsilon_out[(row, i)],
                single.epsilon_out[i],
                epsilon = 1e-12
            );
        }
    }
}

/// Scalar probe objective over the batch outputs; weights differ per client
/// so payment and exposure paths are both exercised.
fn probe_objective(params: &MechanismParams, inputs: &Array2<f64>, epsilons: &Array2<f64>, budget: f64) -> f64 {
    let fwd = forward_batch(params, inputs, epsilons, budget).unwrap();
    let n = params.n_clients_trained;
    let mut total = 0.0;
    for b in 0..inputs.nrows() {
        for i in 0..n {
            let wp = 1.0 + 0.2 * i as f64;
            let we = 0.5 - 0.15 * i as f64;
            total += wp * fwd.projected_payments[(b, i)] + we * fwd.epsilon_out[(b, i)];
        }
    }
    total
}

fn fd_check_full_mechanism(budget_mode: &str) {
    let n = 3;
    let mut params = tiny_params(n, 1, 17);
    let p1 = profile_for(n, 20);
    let p2 = profile_for(n, 21);

    let mut inputs = Array2::zeros((2, n + 1));
    let mut epsilons = Array2::zeros((2, n));
    for (row, p) in [(0, &p1), (1, &p2)] {
        let aug = build_augmented_input(p);
        for c in 0..=n {
            inputs[(row, c)] = aug[c];
        }
        for c in 0..n {
            epsilons[(row, c)] = p.epsilons[(c, 0)];
        }
    }
    // Pick the budget so the projection is binding (or not) for every row.
    let probe_fwd = forward_batch(&params, &inputs, &epsilons, 1e9).unwrap();
    let row_sums: Vec<f64> = (0..2).map(|b| probe_fwd.raw_payments.row(b).sum()).collect();
    let budget = match budget_mode {
        "binding" => row_sums.iter().cloned().fold(f64::INFINITY, f64::min) * 0.5,
        _ => row_sums.iter().cloned().fold(0.0, f64::max) * 10.0,
    };

    let fwd = forward_batch(&params, &inputs, &epsilons, budget).unwrap();
    let mut grad_payments = Array2::zeros((2, n));
    let mut grad_eps = Array2::zeros((2, n));
    for b in 0..2 {
        for i in 0..n {
            grad_payments[(b, i)] = 1.0 + 0.2 * i as f64;
            grad_eps[(b, i)] = 0.5 - 0.15 * i as f64;
        }
    }
    let grads = backward_batch(&params, &fwd, &grad_payments, &grad_eps, true).unwrap();

    // Every augmented-input coordinate, including the mean-field column.
    let mut probe_inputs = inputs.clone();
    for r in 0..2 {
        for c in 0..=n {
            let orig = probe_inputs[(r, c)];
            probe_inputs[(r, c)] = orig + FD_H;
            let up = probe_objective(&params, &probe_inputs, &epsilons, budget);
            probe_inputs[(r, c)] = orig - FD_H;
            let dn = probe_objective(&params, &probe_inputs, &epsilons, budget);
            probe_inputs[(r, c)] = orig;
            let fd = (up - dn) / (2.0 * FD_H);
            let an = grads.header.input_grad[(r, c)];
            assert!(
                rel_err(fd, an) < FD_REL_TOL,
                "{budget_mode} input ({r},{c}): fd {fd} vs analytic {an}"
            );
        }
    }

    // Every parameter of the header and both heads.
    let nets: [(&str, fn(&mut MechanismParams) -> &mut Mlp); 3] = [
        ("header", |p| &mut p.header),
        ("alloc_head", |p| &mut p.alloc_head),
        ("pay_head", |p| &mut p.pay_head),
    ];
    for (name, get) in nets {
        let n_layers = get(&mut params).layers.len();
        for l in 0..n_layers {
            let dim = get(&mut params).layers[l].weight.raw_dim();
            for r in 0..dim[0] {
                for c in 0..dim[1] {
                    let orig = get(&mut params).layers[l].weight[(r, c)];
                    get(&mut params).layers[l].weight[(r, c)] = orig + FD_H;
                    let up = probe_objective(&params, &inputs, &epsilons, budget);
                    get(&mut params).layers[l].weight[(r, c)] = orig - FD_H;
                    let dn = probe_objective(&params, &inputs, &epsilons, budget);
                    get(&mut params).layers[l].weight[(r, c)] = orig;
                    let fd = (up - dn) / (2.0 * FD_H);
                    let an = match name {
                        "header" => grads.header.layers[l].weight[(r, c)],
                        "alloc_head" => grads.alloc_head.layers[l].weight[(r, c)],
                        _ => grads.pay_head.layers[l].weight[(r, c)],
                    };
                    assert!(
                        rel_err(fd, an) < FD_REL_TOL,
                        "{budget_mode} {name} layer {l} ({r},{c}): fd {fd} vs {an}"
                    );
                }
            }
            let blen = get(&mut params).layers[l].bias.len();
            for bix in 0..blen {
                let orig = get(&mut params).layers[l].bias[bix];
                get(&mut params).layers[l].bias[bix] = orig + FD_H;
                let up = probe_objective(&params, &inputs, &epsilons, budget);
                get(&mut params).layers[l].bias[bix] = orig - FD_H;
                let dn = probe_objective(&params, &inputs, &epsilons, budget);
                get(&mut params).layers[l].bias[bix] = orig;
                let fd = (up - dn) / (2.0 * FD_H);
                let an = match name {
                    "header" => grads.header.layers[l].bias[bix],
                    "alloc_head" => grads.alloc_head.layers[l].bias[bix],
                    _ => grads.pay_head.layers[l].bias[bix],
                };
                assert!(
                    rel_err(fd, an) < FD_REL_TOL,
                    "{budget_mode} {name} layer {l} bias {bix}: fd {fd} vs {an}"
                );
            }
        }
    }
}

#[test]
fn full_gradient_matches_finite_differences_with_slack_budget() {
    fd_check_full_mechanism("slack");
}

#[test]
fn full_gradient_matches_finite_differences_with_binding_budget() {
    fd_check_full_mechanism("binding");
}

#[test]
fn outcome_view_and_client_utility() {
    let params = MechanismParams::new(3, 1, 30).unwrap();
    let profile = profile_for(3, 31);
    let res = mechanism_forward(&params, &profile, 0.7).unwrap();
    let outcome = forward_to_outcome(&res);
    assert_eq!(outcome.winners, vec![0, 1, 2]);
    assert_eq!(outcome.payments, res.projected_payments);
    let u = client_utility_under_mechanism(&res, 1, 0.4);
    assert_abs_diff_eq!(
        u,
        res.projected_payments[1] - 0.4 * res.epsilon_out[1],
        epsilon = 1e-15
    );
}

#[test]
fn forward_rejects_mismatched_profiles() {
    let params = MechanismParams::new(4, 1, 40).unwrap();
    let profile = profile_for(3, 41);
    assert!(mechanism_forward(&params, &profile, 1.0).is_err());
}

#[test]
fn construction_rejects_degenerate_markets() {
    assert!(MechanismParams::new(0, 1, 0).is_err());
    assert!(MechanismParams::new(3, 0, 0).is_err());
}

#[test]
fn mechanism_checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mech.txt");
    let params = tiny_params(3, 1, 50);
    let extra = vec![("scenario".to_string(), "uniform".to_string())];
    save_mechanism(&path, &params, &extra).unwrap();
    let (loaded, manifest) = load_mechanism(&path).unwrap();
    assert_eq!(loaded.n_clients_trained, 3);
    assert_eq!(loaded.n_items, 1);
    assert!(manifest.contains(&("scenario".to_string(), "uniform".to_string())));
    for (a, b) in [
        (&loaded.header, &params.header),
        (&loaded.alloc_head, &params.alloc_head),
        (&loaded.pay_head, &params.pay_head),
        (&loaded.critic, &params.critic),
    ] {
        assert_eq!(a.layer_dims, b.layer_dims);
        for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
            assert_eq!(la.weight, lb.weight);
            assert_eq!(la.bias, lb.bias);
        }
    }
    // The loaded mechanism reproduces identical payments.
    let profile = profile_for(3, 51);
    let before = mechanism_forward(&params, &profile, 0.9).unwrap();
    let after = mechanism_forward(&loaded, &profile, 0.9).unwrap();
    assert_eq!(before.projected_payments, after.projected_payments);
    assert_eq!(before.epsilon_out, after.epsilon_out);
}

#[test]
fn mechanism_parse_rejects_missing_sections() {
    let params = tiny_params(2, 1, 60);
    let text = render_mechanism(&params, &[]);
    let truncated: String = text
        .lines()
        .take_while(|l| !l.contains("pay_head"))
        .collect::<Vec<_>>()
        .join("\n");
    assert!(parse_mechanism(&truncated).is_err());
}

#[test]
fn evaluations_are_recorded_by_the_feasibility_audit() {
    let params = MechanismParams::new(3, 1, 70).unwrap();
    let profile = profile_for(3, 71);
    // Deltas rather than absolute counts: the audit log is global and other
    // tests in this binary may also evaluate mechanisms.
    let before = privmarket::audit::snapshot();
    mechanism_forward(&params, &profile, 0.5).unwrap();
    mechanism_forward(&params, &profile, 5.0).unwrap();
    let after = privmarket::audit::snapshot();
    assert!(after.evaluations >= before.evaluations + 2);
    assert_eq!(after.budget_violations, before.budget_violations);
    assert_eq!(after.column_violations, before.column_violations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Feasibility invariants hold for arbitrary bids and budgets.
    #[test]
    fn forward_is_always_feasible(
        vals in proptest::collection::vec(0.01f64..1.5, 4),
        budget in 0.05f64..5.0,
        seed in 0u64..1000,
    ) {
        let params = tiny_params(4, 1, seed);
        let profile = BidProfile::from_types(&types_from_valuations(&vals)).unwrap();
        let res = mechanism_forward(&params, &profile, budget).unwrap();
        prop_assert!(res.projected_payments.sum() <= budget + 1e-9);
        prop_assert!((res.allocation.column(0).sum() - 1.0).abs() < 1e-9);
        for i in 0..4 {
            prop_assert!(res.projected_payments[i] >= 0.0);
            prop_assert!(res.epsilon_out[i] >= 0.0);
            prop_assert!(res.epsilon_out[i] <= profile.epsilons[(i, 0)] + 1e-12);
        }
    }

    /// The budget projection never increases any single payment.
    #[test]
    fn projection_is_a_contraction(
        vals in proptest::collection::vec(0.05f64..1.0, 3),
        budget in 0.01f64..0.5,
    ) {
        let params = tiny_params(3, 1, 99);
        let profile = BidProfile::from_types(&types_from_valuations(&vals)).unwrap();
        let res = mechanism_forward(&params, &profile, budget).unwrap();
        for i in 0..3 {
            prop_assert!(res.projected_payments[i] <= res.raw_payments[i] + 1e-12);
        }
    }
}
