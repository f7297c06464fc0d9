//! The repository's verification suite: twelve numbered checks covering
//! classical-mechanism exactness, gradient integrity, feasibility audits,
//! trained-mechanism quality, scaling behavior, privacy-noise calibration,
//! the federated loop, and the variance effect of value baselining.
//!
//! Every tolerance and workload size is pinned as a constant here; the suite
//! is deterministic and is exposed both as the `acceptance` test target and
//! through the `verify` subcommand. Criterion 4 audits feasibility counters
//! accumulated by everything else, so it always executes last.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::auction::{Mechanism, MechanismKind};
use crate::classical::{brute_force_regret, pac_allocate, vcg_procure};
use crate::diffnet::Mlp;
use crate::error::Result;
use crate::eval::{
    approximation_error_vs_n, efficiency_table, evaluate_regret, scaling_benchmark,
    train_and_measure_regret,
};
use crate::fl::{make_task, run_fl, DpConfig, FlOptions};
use crate::market::{client_utility, sample_types, BidProfile, Scenario};
use crate::mechanism::{backward_batch, forward_batch, MechanismParams};
use crate::seeding::derive_seed;
use crate::trainer::{
    self, fit_critic, initial_params, misreport_mean_field, pga_regret, pga_regret_trace,
    train, value_baselined_regret_trace, TrainConfig, TrainOutput,
};

// ===== Pinned workloads and tolerances =====

const C1_INSTANCES: usize = 1000;
const C1_N: usize = 100;
const C1_BUDGET: f64 = 50.0;
const C1_REGRET_TOL: f64 = 1e-12;
const C1_GRID: usize = 16;
const C1_EXHAUSTIVE_INSTANCES: usize = 300;

const C2_INSTANCES: usize = 100;
const C2_TOL: f64 = 1e-12;

const C3_CONFIGS: usize = 100;
const C3_H: f64 = 1e-5;
const C3_REL_TOL: f64 = 1e-4;
const C3_GUARD: f64 = 1e-3;
const C3_PARAM_COORDS: usize = 25;
/// Central differences at step h and h/2 must agree this closely for the
/// objective to count as locally smooth; rectifier and budget-projection
/// switches inside the probe window make the difference quotient an invalid
/// derivative oracle, so those coordinates are skipped (and capped below).
const C3_KINK_TOL: f64 = 1e-3;
/// Maximum fraction of probed coordinates allowed to sit in a kink window.
const C3_MAX_SKIP_FRACTION: f64 = 0.02;

const C5_SEEDS: [u64; 3] = [0, 1, 2];
const C5_N: usize = 10;
const C5_BUDGET: f64 = 50.0;
const C5_EVAL_SAMPLES: usize = 16;
const C5_NORM_REGRET_MAX: f64 = 0.02;
const C5_IMPROVEMENT_MIN: f64 = 10.0;

const C6_ROUNDS: usize = 20;
const C6_SEEDS: [u64; 3] = [7, 8, 9];
const C6_REVENUE_FRACTION: f64 = 0.9;
const C6_PAC_MULTIPLE: f64 = 3.0;
const C6_BF_SLACK: f64 = 1e-9;

const C7_ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

const C8_SIZES: [usize; 4] = [10, 25, 50, 100];
const C8_SEEDS: [u64; 3] = [0, 1, 2];
const C8_SLOPE_MIN: f64 = -0.8;
const C8_SLOPE_MAX: f64 = -0.2;
const C8_EVAL_SAMPLES: usize = 4;

const C9_LEARNED_SIZES: [usize; 5] = [10, 50, 100, 200, 500];
const C9_PAC_SIZES: [usize; 4] = [100, 1_000, 10_000, 100_000];
const C9_REPS: usize = 5;
const C9_LEARNED_SLOPE_MAX: f64 = 1.3;
const C9_PAC_SLOPE_MIN: f64 = 0.9;
const C9_PAC_SLOPE_MAX: f64 = 1.3;

const C10_DRAWS: usize = 100_000;
const C10_STD_REL_TOL: f64 = 0.02;
const C10_SIGMA_TOL: f64 = 1e-9;

const C11_ROUNDS: usize = 50;
const C11_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const C11_HIGH_EPS: f64 = 5.0;
const C11_LOW_EPS: f64 = 0.5;
const C11_NO_DP_MIN: f64 = 0.9;
const C11_N: usize = 10;
const C11_DIRICHLET_ALPHA: f64 = 0.5;

const C12_SEEDS: usize = 200;
const C12_EXACT_SEEDS: usize = 10;
const C12_FIT_ROUNDS: usize = 30;
const C12_FIT_STEPS: usize = 25;

/// Stable criterion names, indexed by id.
pub const CRITERIA: [(usize, &str); 12] = [
    (1, "classical-exactness"),
    (2, "critical-payment-coincidence"),
    (3, "gradient-integrity"),
    (4, "feasibility-audit"),
    (5, "trained-incentive-quality"),
    (6, "efficiency-direction"),
    (7, "mean-field-misreport-coupling"),
    (8, "approximation-error-decay"),
    (9, "runtime-scaling"),
    (10, "noise-calibration"),
    (11, "privacy-utility-direction"),
    (12, "value-baseline-variance"),
];

/// Execution order: the feasibility audit (4) must observe every other
/// criterion's mechanism evaluations, so it runs last.
const EXECUTION_ORDER: [usize; 12] = [1, 2, 3, 5, 6, 7, 8, 9, 10, 11, 12, 4];

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    /// Criterion id, 1-12.
    pub id: usize,
    /// Stable name from [`CRITERIA`].
    pub name: &'static str,
    /// Whether every sub-check held.
    pub passed: bool,
    /// Wall time spent.
    pub seconds: f64,
    /// Human-readable evidence (numbers behind the verdict).
    pub details: String,
}

impl CriterionResult {
    /// The one-line pass/fail rendering.
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {:<32} ({:.1}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.details
        )
    }
}

/// Results of a (possibly partial) suite run.
#[derive(Debug, Clone, Default)]
pub struct AcceptanceReport {
    /// Results in execution order.
    pub results: Vec<CriterionResult>,
}

impl AcceptanceReport {
    /// True when every executed criterion passed.
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// Full multi-line rendering including a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&r.line());
            out.push('\n');
        }
        let passed = self.results.iter().filter(|r| r.passed).count();
        out.push_str(&format!(
            "{}: {passed}/{} criteria passed\n",
            if self.all_passed() { "OK" } else { "FAILURES" },
            self.results.len()
        ));
        out
    }
}

/// Lazily shared expensive artifacts (the trained mechanisms from
/// criterion 5 are reused by 6, 7, and 12).
#[derive(Default)]
struct SuiteState {
    trained: Vec<TrainOutput>,
}

impl SuiteState {
    fn train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            n_clients: C5_N,
            budget: C5_BUDGET,
            seed,
            ..TrainConfig::default()
        }
    }

    fn eval_config(seed: u64) -> TrainConfig {
        Self::train_config(seed)
    }

    fn ensure_trained(&mut self, count: usize) -> Result<()> {
        while self.trained.len() < count {
            let seed = C5_SEEDS[self.trained.len()];
            let cfg = Self::train_config(seed);
            self.trained.push(train(&cfg, Scenario::Uniform)?);
        }
        Ok(())
    }
}

/// Runs every criterion (in audit-safe order), invoking `progress` as each
/// one finishes.
pub fn run_all(progress: &mut dyn FnMut(&CriterionResult)) -> AcceptanceReport {
    run_selected(&EXECUTION_ORDER, progress)
}

/// Runs the requested criterion ids (deduplicated, reordered so the audit
/// criterion stays last).
pub fn run_selected(
    ids: &[usize],
    progress: &mut dyn FnMut(&CriterionResult),
) -> AcceptanceReport {
    let mut state = SuiteState::default();
    let mut report = AcceptanceReport::default();
    for &id in EXECUTION_ORDER.iter().filter(|id| ids.contains(id)) {
        let start = Instant::now();
        let outcome = dispatch(id, &mut state);
        let (passed, details) = match outcome {
            Ok(pair) => pair,
            Err(e) => (false, format!("errored: {e}")),
        };
        let result = CriterionResult {
            id,
            name: CRITERIA[id - 1].1,
            passed,
            seconds: start.elapsed().as_secs_f64(),
            details,
        };
        progress(&result);
        report.results.push(result);
    }
    report
}

fn dispatch(id: usize, state: &mut SuiteState) -> Result<(bool, String)> {
    match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(state),
        6 => criterion_6(state),
        7 => criterion_7(state),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        11 => criterion_11(),
        12 => criterion_12(state),
        other => Ok((false, format!("unknown criterion id {other}"))),
    }
}

// ===== Criterion 1: classical exactness =====

fn criterion_1() -> Result<(bool, String)> {
    let mut worst_regret = 0.0_f64;
    let mut ir_ok = true;
    let mut budget_ok = true;
    for s in 0..C1_INSTANCES {
        let types = sample_types(Scenario::Uniform, C1_N, derive_seed(41, &[s as u64]));
        let out = pac_allocate(&types, C1_BUDGET)?;
        let total: f64 = out.outcome.payments.sum();
        if total > C1_BUDGET {
            budget_ok = false;
        }
        for i in 0..C1_N {
            let u = client_utility(
                out.outcome.payments[i],
                types[i].valuation,
                out.outcome.epsilon_out[i],
            );
            if u < 0.0 {
                ir_ok = false;
            }
        }
        let regrets = brute_force_regret(
            |t, b| pac_allocate(t, b).map(|o| o.outcome),
            &types,
            C1_BUDGET,
            C1_GRID,
        )?;
        worst_regret = worst_regret.max(regrets.iter().cloned().fold(0.0, f64::max));
    }

    // Independent winner-count oracle on small instances: enumerate every k
    // and take the largest feasible one.
    let mut k_ok = true;
    for s in 0..C1_EXHAUSTIVE_INSTANCES {
        let n = 2 + s % 11; // 2..=12
        let mut rng = StdRng::seed_from_u64(derive_seed(42, &[s as u64]));
        let budget = rng.gen_range(0.05..3.0);
        let types = sample_types(Scenario::Uniform, n, derive_seed(42, &[1000 + s as u64]));
        let mut vals: Vec<f64> = types.iter().map(|t| t.valuation).collect();
        vals.sort_by(f64::total_cmp);
        let mut k_oracle = 0;
        for k in 1..n {
            if vals[k - 1] / (n - k) as f64 <= budget / k as f64 {
                k_oracle = k_oracle.max(k);
            }
        }
        let out = pac_allocate(&types, budget)?;
        if out.k_winners != k_oracle {
            k_ok = false;
        }
    }

    let passed = worst_regret <= C1_REGRET_TOL && ir_ok && budget_ok && k_ok;
    Ok((
        passed,
        format!(
            "worst grid regret {worst_regret:.2e} (tol {C1_REGRET_TOL:.0e}), IR exact: {ir_ok}, \
             budget exact: {budget_ok}, winner-count oracle: {k_ok}"
        ),
    ))
}

// ===== Criterion 2: threshold/externality payment coincidence =====

fn criterion_2() -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    for s in 0..C2_INSTANCES {
        let mut rng = StdRng::seed_from_u64(derive_seed(43, &[s as u64]));
        let n = rng.gen_range(5..150);
        let budget = rng.gen_range(0.5..100.0);
        let types = sample_types(Scenario::Uniform, n, derive_seed(43, &[1000 + s as u64]));
        let pac = pac_allocate(&types, budget)?;
        let vcg = vcg_procure(&types, budget)?;
        let diff = (pac.outcome.payments.sum() - vcg.outcome.payments.sum()).abs();
        worst = worst.max(diff);
    }
    Ok((
        worst <= C2_TOL,
        format!("max |revenue difference| {worst:.2e} over {C2_INSTANCES} instances (tol {C2_TOL:.0e})"),
    ))
}

// ===== Criterion 3: gradient integrity =====

/// Scalar objective probed by the finite-difference check: a random linear
/// functional of projected payments and exposures.
fn c3_objective(
    params: &MechanismParams,
    bids: &Array2<f64>,
    epsilons: &Array2<f64>,
    weights_pay: &Array1<f64>,
    weights_eps: &Array1<f64>,
    budget: f64,
) -> Result<f64> {
    let profile = BidProfile::new(bids.clone(), epsilons.clone())?;
    let n = profile.n_clients;
    let m = profile.n_items;
    let input = crate::mechanism::build_augmented_input(&profile)
        .into_shape_with_order((1, (n + 1) * m))
        .map_err(|e| crate::error::Error::dim(e.to_string()))?;
    let eps_flat = Array2::from_shape_fn((1, n * m), |(_, k)| epsilons[(k / m, k % m)]);
    let fwd = forward_batch(params, &input, &eps_flat, budget)?;
    let mut f = 0.0;
    for i in 0..n {
        f += weights_pay[i] * fwd.projected_payments[(0, i)]
            + weights_eps[i] * fwd.epsilon_out[(0, i)];
    }
    Ok(f)
}

/// Scores one coordinate against central differences at two step sizes.
/// Returns the relative error on smooth coordinates, `None` inside a kink
/// window where finite differences do not estimate a derivative.
fn c3_score(analytic: f64, probe: &mut dyn FnMut(f64) -> Result<f64>) -> Result<Option<f64>> {
    let fd_h = (probe(C3_H)? - probe(-C3_H)?) / (2.0 * C3_H);
    let half = C3_H / 2.0;
    let fd_half = (probe(half)? - probe(-half)?) / (2.0 * half);
    if (fd_h - fd_half).abs() > C3_KINK_TOL * fd_h.abs().max(fd_half.abs()).max(C3_GUARD) {
        return Ok(None);
    }
    Ok(Some(rel_err(analytic, fd_half)))
}

fn criterion_3() -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    let mut checks = 0usize;
    let mut skipped = 0usize;
    for t in 0..C3_CONFIGS {
        let mut rng = StdRng::seed_from_u64(derive_seed(44, &[t as u64]));
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(1..=3);
        let budget = rng.gen_range(0.2..3.0);
        let params = MechanismParams::new(n, m, derive_seed(44, &[1000 + t as u64]))?;
        let bids = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.0..1.5));
        let epsilons = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.1..5.0));
        let w_pay = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
        let w_eps = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));

        // Analytic gradients.
        let profile = BidProfile::new(bids.clone(), epsilons.clone())?;
        let input = crate::mechanism::build_augmented_input(&profile)
            .into_shape_with_order((1, (n + 1) * m))
            .map_err(|e| crate::error::Error::dim(e.to_string()))?;
        let eps_flat = Array2::from_shape_fn((1, n * m), |(_, k)| epsilons[(k / m, k % m)]);
        let fwd = forward_batch(&params, &input, &eps_flat, budget)?;
        let gp = Array2::from_shape_fn((1, n), |(_, i)| w_pay[i]);
        let ge = Array2::from_shape_fn((1, n), |(_, i)| w_eps[i]);
        let grads = backward_batch(&params, &fwd, &gp, &ge, true)?;

        // Input (bid) gradients: augmented slot plus the mean-field slot
        // scaled by 1/N, since the mean row is recomputed from the bids.
        for i in 0..n {
            for j in 0..m {
                let analytic = grads.header.input_grad[(0, i * m + j)]
                    + grads.header.input_grad[(0, n * m + j)] / n as f64;
                let mut probe = |delta: f64| -> Result<f64> {
                    let mut shifted = bids.clone();
                    shifted[(i, j)] += delta;
                    c3_objective(&params, &shifted, &epsilons, &w_pay, &w_eps, budget)
                };
                match c3_score(analytic, &mut probe)? {
                    Some(err) => {
                        worst = worst.max(err);
                        checks += 1;
                    }
                    None => skipped += 1,
                }
            }
        }

        // Random parameter coordinates across the three live networks.
        let nets: [(usize, &Mlp); 3] = [
            (0, &params.header),
            (1, &params.alloc_head),
            (2, &params.pay_head),
        ];
        for _ in 0..C3_PARAM_COORDS {
            let (which, net) = nets[rng.gen_range(0..3)];
            let layer = rng.gen_range(0..net.layers.len());
            let is_weight = rng.gen_bool(0.8);
            let (r_idx, c_idx) = {
                let w = &net.layers[layer].weight;
                (rng.gen_range(0..w.nrows()), rng.gen_range(0..w.ncols()))
            };
            let analytic = {
                let g = match which {
                    0 => &grads.header,
                    1 => &grads.alloc_head,
                    _ => &grads.pay_head,
                };
                if is_weight {
                    g.layers[layer].weight[(r_idx, c_idx)]
                } else {
                    g.layers[layer].bias[r_idx]
                }
            };
            let mut probe = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let target = match which {
                    0 => &mut p.header,
                    1 => &mut p.alloc_head,
                    _ => &mut p.pay_head,
                };
                if is_weight {
                    target.layers[layer].weight[(r_idx, c_idx)] += delta;
                } else {
                    target.layers[layer].bias[r_idx] += delta;
                }
                c3_objective(&p, &bids, &epsilons, &w_pay, &w_eps, budget)
            };
            match c3_score(analytic, &mut probe)? {
                Some(err) => {
                    worst = worst.max(err);
                    checks += 1;
                }
                None => skipped += 1,
            }
        }
    }
    let skip_fraction = skipped as f64 / (checks + skipped).max(1) as f64;
    Ok((
        worst <= C3_REL_TOL && skip_fraction <= C3_MAX_SKIP_FRACTION,
        format!(
            "worst relative gradient error {worst:.2e} over {checks} smooth coordinates (tol {C3_REL_TOL:.0e}); {skipped} kink-window coordinates excluded ({:.2}% <= {:.0}% allowed: {})",
            100.0 * skip_fraction,
            100.0 * C3_MAX_SKIP_FRACTION,
            skip_fraction <= C3_MAX_SKIP_FRACTION
        ),
    ))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(C3_GUARD)
}

// ===== Criterion 4: feasibility audit =====

fn criterion_4() -> Result<(bool, String)> {
    let snap = crate::audit::snapshot();
    let passed = snap.budget_violations == 0 && snap.column_violations == 0 && snap.evaluations > 0;
    Ok((
        passed,
        format!(
            "{} evaluations audited, {} budget violations, {} allocation-column violations",
            snap.evaluations, snap.budget_violations, snap.column_violations
        ),
    ))
}

// ===== Criterion 5: trained incentive quality =====

fn criterion_5(state: &mut SuiteState) -> Result<(bool, String)> {
    state.ensure_trained(C5_SEEDS.len())?;
    let mut trained_means = Vec::new();
    let mut untrained_means = Vec::new();
    for (idx, &seed) in C5_SEEDS.iter().enumerate() {
        let mut eval_cfg = SuiteState::eval_config(seed);
        eval_cfg.seed = derive_seed(seed, &[50]);
        let trained_mech = Mechanism::Learned(state.trained[idx].params.clone());
        let report = evaluate_regret(&trained_mech, Scenario::Uniform, C5_EVAL_SAMPLES, &eval_cfg)?;
        trained_means.push(report.mean);

        let untrained = initial_params(&SuiteState::train_config(seed))?;
        let untrained_report = evaluate_regret(
            &Mechanism::Learned(untrained),
            Scenario::Uniform,
            C5_EVAL_SAMPLES,
            &eval_cfg,
        )?;
        untrained_means.push(untrained_report.mean);
    }
    let trained_mean = trained_means.iter().sum::<f64>() / trained_means.len() as f64;
    let untrained_mean = untrained_means.iter().sum::<f64>() / untrained_means.len() as f64;
    let ratio = if trained_mean > 0.0 {
        untrained_mean / trained_mean
    } else {
        f64::INFINITY
    };
    let passed = trained_mean <= C5_NORM_REGRET_MAX && ratio >= C5_IMPROVEMENT_MIN;
    Ok((
        passed,
        format!(
            "normalized regret trained {trained_mean:.4} (max {C5_NORM_REGRET_MAX}), untrained {untrained_mean:.4}, improvement {ratio:.1}x (min {C5_IMPROVEMENT_MIN}x); per-seed trained {:?}",
            trained_means.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    ))
}

// ===== Criterion 6: efficiency direction =====

fn criterion_6(state: &mut SuiteState) -> Result<(bool, String)> {
    state.ensure_trained(1)?;
    let learned = Mechanism::Learned(state.trained[0].params.clone());
    let rows = efficiency_table(
        &[&Mechanism::Pac, &learned],
        Scenario::Uniform,
        C5_N,
        C5_BUDGET,
        C6_ROUNDS,
        &C6_SEEDS,
    )?;
    let pac = rows.iter().find(|r| r.mechanism == "pac").unwrap();
    let lrn = rows.iter().find(|r| r.mechanism == "learned").unwrap();

    let revenue_high = lrn.revenue_mean >= C6_REVENUE_FRACTION * C5_BUDGET;
    let beats_pac = lrn.revenue_mean >= C6_PAC_MULTIPLE * pac.revenue_mean;
    let bf_ok = lrn.budget_feasibility_max <= 1.0 + C6_BF_SLACK
        && pac.budget_feasibility_max <= 1.0 + C6_BF_SLACK;
    let welfare_ok = lrn.welfare_ratio_mean > pac.welfare_ratio_mean;
    let passed = revenue_high && beats_pac && bf_ok && welfare_ok;
    Ok((
        passed,
        format!(
            "learned revenue {:.3} (needs >= {:.1}: {revenue_high}), pac revenue {:.3} (needs {C6_PAC_MULTIPLE}x: {beats_pac}), BF <= 1: {bf_ok}, welfare learned {:.3} vs pac {:.3} (higher: {welfare_ok})",
            lrn.revenue_mean,
            C6_REVENUE_FRACTION * C5_BUDGET,
            pac.revenue_mean,
            lrn.welfare_ratio_mean,
            pac.welfare_ratio_mean
        ),
    ))
}

// ===== Criterion 7: mean-field misreport coupling =====

fn criterion_7(state: &mut SuiteState) -> Result<(bool, String)> {
    // Exact self-consistency examples.
    let mu = Array1::from_vec(vec![0.5]);
    let old = Array1::from_vec(vec![0.4]);
    let new = Array1::from_vec(vec![0.6]);
    let shifted = misreport_mean_field(&mu, &old, &new, 10)?;
    let exact_shift = shifted[0] == 0.52;
    let unchanged = misreport_mean_field(&mu, &old, &old, 10)?[0] == mu[0];
    let single = misreport_mean_field(&mu, &old, &new, 1)?[0] == new[0];

    // Live-coupling ablation on the trained mechanism: freezing the
    // mean-field row during the misreport search must change measured regret
    // somewhere.
    state.ensure_trained(1)?;
    let params = &state.trained[0].params;
    let mut diffs = Vec::new();
    for &s in C7_ABLATION_SEEDS.iter() {
        let types = sample_types(Scenario::Uniform, C5_N, derive_seed(60, &[s]));
        let profile = BidProfile::from_types(&types)?;
        let mut cfg_on = SuiteState::eval_config(0);
        cfg_on.seed = derive_seed(61, &[s]);
        let mut cfg_off = cfg_on.clone();
        cfg_off.mfg_update_in_pga = false;
        let mut total_on = 0.0;
        let mut total_off = 0.0;
        for i in 0..C5_N {
            total_on += pga_regret(params, &profile, C5_BUDGET, i, &cfg_on)?.0;
            total_off += pga_regret(params, &profile, C5_BUDGET, i, &cfg_off)?.0;
        }
        diffs.push((total_on - total_off).abs());
    }
    let coupling_live = diffs.iter().any(|&d| d > 0.0);
    let passed = exact_shift && unchanged && single && coupling_live;
    Ok((
        passed,
        format!(
            "shift example exact: {exact_shift}, no-op exact: {unchanged}, single-client exact: {single}, ablation diffs {:?} (any nonzero: {coupling_live})",
            diffs.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()
        ),
    ))
}

// ===== Criterion 8: approximation-error decay =====

/// Reduced-budget training configuration used when retraining across
/// population sizes; full default training at every N would take hours on
/// one core without changing the decay direction being tested.
fn c8_config() -> TrainConfig {
    TrainConfig {
        outer_iters: 150,
        batch_size: 16,
        budget: C5_BUDGET,
        ..TrainConfig::default()
    }
}

fn criterion_8() -> Result<(bool, String)> {
    let series = approximation_error_vs_n(
        |n, seed| train_and_measure_regret(&c8_config(), Scenario::Uniform, n, seed, C8_EVAL_SAMPLES),
        &C8_SIZES,
        &C8_SEEDS,
    )?;
    let spearman_ok = series.spearman < 0.0;
    let slope_ok = series.slope >= C8_SLOPE_MIN && series.slope <= C8_SLOPE_MAX;
    Ok((
        spearman_ok && slope_ok,
        format!(
            "eps_hat {:?}, spearman {:.3} (needs < 0: {spearman_ok}), slope {:.3} (needs [{C8_SLOPE_MIN}, {C8_SLOPE_MAX}]: {slope_ok})",
            series
                .eps_hat
                .iter()
                .map(|e| format!("{e:.4}"))
                .collect::<Vec<_>>(),
            series.spearman,
            series.slope
        ),
    ))
}

// ===== Criterion 9: runtime scaling =====

fn criterion_9() -> Result<(bool, String)> {
    let learned = scaling_benchmark(
        &[MechanismKind::Learned],
        &C9_LEARNED_SIZES,
        C9_REPS,
        C5_BUDGET,
        90,
    )?;
    let pac = scaling_benchmark(&[MechanismKind::Pac], &C9_PAC_SIZES, C9_REPS, C5_BUDGET, 91)?;
    let learned_slope = learned[0].slope;
    let pac_slope = pac[0].slope;
    let learned_ok = learned_slope <= C9_LEARNED_SLOPE_MAX;
    let pac_ok = pac_slope >= C9_PAC_SLOPE_MIN && pac_slope <= C9_PAC_SLOPE_MAX;
    Ok((
        learned_ok && pac_ok,
        format!(
            "learned forward slope {learned_slope:.3} (max {C9_LEARNED_SLOPE_MAX}: {learned_ok}), pac slope {pac_slope:.3} (needs [{C9_PAC_SLOPE_MIN}, {C9_PAC_SLOPE_MAX}]: {pac_ok}), peak RSS {:?} kB",
            learned[0].peak_rss_kb
        ),
    ))
}

// ===== Criterion 10: noise calibration =====

fn criterion_10() -> Result<(bool, String)> {
    let sigma = crate::fl::gaussian_sigma(1.0, 0.01, 1.0, 0.05);
    let expected = (2.0 * (125.0_f64).ln()).sqrt();
    let formula_ok = (sigma - expected).abs() <= C10_SIGMA_TOL;

    let test_sigma = 1.7;
    let mut rng = StdRng::seed_from_u64(derive_seed(100, &[0]));
    let zeros = Array1::zeros(C10_DRAWS);
    let noisy = crate::fl::perturb_update(&zeros, test_sigma, &mut rng);
    let mean = noisy.sum() / C10_DRAWS as f64;
    let var = noisy.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / C10_DRAWS as f64;
    let std = var.sqrt();
    let std_ok = (std / test_sigma - 1.0).abs() <= C10_STD_REL_TOL;
    Ok((
        formula_ok && std_ok,
        format!(
            "sigma(1, 0.01, 1) = {sigma:.9} vs sqrt(2 ln 125) = {expected:.9} (ok: {formula_ok}); empirical std {std:.4} vs {test_sigma} over {C10_DRAWS} draws (ok: {std_ok})"
        ),
    ))
}

// ===== Criterion 11: privacy-utility direction =====

fn criterion_11() -> Result<(bool, String)> {
    let dp = DpConfig::for_clients(C11_N);
    let mut highs = Vec::new();
    let mut lows = Vec::new();
    let mut no_dps = Vec::new();
    for &seed in C11_SEEDS.iter() {
        let task = make_task(C11_N, C11_DIRICHLET_ALPHA, derive_seed(70, &[seed]))?;
        let opts = FlOptions::default();
        let high = run_fl(
            &Mechanism::FixedEpsilon(C11_HIGH_EPS),
            &task,
            C11_ROUNDS,
            &dp,
            &opts,
            C5_BUDGET,
            seed,
        )?;
        let low = run_fl(
            &Mechanism::FixedEpsilon(C11_LOW_EPS),
            &task,
            C11_ROUNDS,
            &dp,
            &opts,
            C5_BUDGET,
            seed,
        )?;
        let no_dp_opts = FlOptions {
            force_no_noise: true,
            ..FlOptions::default()
        };
        let no_dp = run_fl(
            &Mechanism::FixedEpsilon(C11_HIGH_EPS),
            &task,
            C11_ROUNDS,
            &dp,
            &no_dp_opts,
            C5_BUDGET,
            seed,
        )?;
        highs.push(high.final_accuracy);
        lows.push(low.final_accuracy);
        no_dps.push(no_dp.final_accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let high_mean = mean(&highs);
    let low_mean = mean(&lows);
    let no_dp_mean = mean(&no_dps);
    let ordering_ok = high_mean >= low_mean;
    let no_dp_ok = no_dp_mean >= C11_NO_DP_MIN;
    Ok((
        ordering_ok && no_dp_ok,
        format!(
            "A_final: eps={C11_HIGH_EPS} -> {high_mean:.3}, eps={C11_LOW_EPS} -> {low_mean:.3} (ordered: {ordering_ok}); no-DP {no_dp_mean:.3} (needs >= {C11_NO_DP_MIN}: {no_dp_ok})"
        ),
    ))
}

// ===== Criterion 12: value-baseline variance =====

fn zeroed(net: &Mlp) -> Mlp {
    let mut z = net.clone();
    for layer in &mut z.layers {
        layer.weight.fill(0.0);
        layer.bias.fill(0.0);
    }
    z
}

fn criterion_12(state: &mut SuiteState) -> Result<(bool, String)> {
    state.ensure_trained(1)?;
    let params = &state.trained[0].params;
    let base_cfg = SuiteState::eval_config(0);

    // A zero critic must reproduce the plain estimator bit for bit.
    let zero_critic = zeroed(&params.critic);
    let mut exact = true;
    for s in 0..C12_EXACT_SEEDS {
        let types = sample_types(Scenario::Uniform, C5_N, derive_seed(110, &[s as u64]));
        let profile = BidProfile::from_types(&types)?;
        let mut cfg = base_cfg.clone();
        cfg.seed = derive_seed(111, &[s as u64]);
        let client = s % C5_N;
        let plain = pga_regret_trace(params, &profile, C5_BUDGET, client, &cfg)?;
        let baselined =
            value_baselined_regret_trace(params, Some(&zero_critic), &profile, C5_BUDGET, client, &cfg)?;
        if plain.regret != baselined.regret || plain.contributions != baselined.contributions {
            exact = false;
        }
    }

    // Fit a critic to the frozen mechanism, then compare contribution
    // variance across fresh search seeds.
    let batch = trainer::BatchData::sample(Scenario::Uniform, C5_N, 64, derive_seed(112, &[0]))?;
    let picks: Vec<(usize, usize)> = (0..batch.batch_len()).map(|l| (l, l % C5_N)).collect();
    let (states, pools) =
        trainer::critic::states_from_batch(&batch, &picks, base_cfg.use_mean_field)?;
    let mut critic = params.critic.clone();
    let fit_trace = fit_critic(
        &mut critic,
        params,
        &states,
        &pools,
        &base_cfg,
        C12_FIT_ROUNDS,
        C12_FIT_STEPS,
    )?;

    let mut plain_all = Vec::new();
    let mut baselined_all = Vec::new();
    for s in 0..C12_SEEDS {
        let types = sample_types(Scenario::Uniform, C5_N, derive_seed(113, &[s as u64]));
        let profile = BidProfile::from_types(&types)?;
        let mut cfg = base_cfg.clone();
        cfg.seed = derive_seed(114, &[s as u64]);
        let client = s % C5_N;
        let plain = pga_regret_trace(params, &profile, C5_BUDGET, client, &cfg)?;
        let baselined =
            value_baselined_regret_trace(params, Some(&critic), &profile, C5_BUDGET, client, &cfg)?;
        plain_all.extend(plain.contributions);
        baselined_all.extend(baselined.contributions);
    }
    let variance = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    };
    let var_plain = variance(&plain_all);
    let var_baselined = variance(&baselined_all);
    let reduced = var_baselined <= var_plain;
    Ok((
        exact && reduced,
        format!(
            "zero-critic exact replay: {exact}; contribution variance baselined {var_baselined:.3e} vs plain {var_plain:.3e} (reduced: {reduced}); critic fit residual {:.3e}",
            fit_trace.last().copied().unwrap_or(f64::NAN)
        ),
    ))
}
