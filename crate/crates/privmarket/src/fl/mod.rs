//! Online federated-learning rounds driven by a privacy auction.
//!
//! Each round samples fresh client types, runs the configured mechanism to
//! decide who trains and at what privacy exposure, perturbs the winners'
//! clipped updates with Gaussian noise calibrated to their exposure, and
//! aggregates with exposure-proportional weights. Per-round market and
//! learning metrics are collected into [`RoundRecord`]s and can be rendered
//! as CSV.

pub mod task;

use ndarray::Array1;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::auction::Mechanism;
use crate::classical::brute_force_regret;
use crate::error::{Error, Result};
use crate::market::{sample_types, social_welfare, BidProfile, Scenario};
use crate::seeding::derive_seed;
use crate::trainer::{pga_regret, TrainConfig};

pub use task::{accuracy, dataset_loss, local_train, make_task, model_len, SyntheticTask};

/// Shared model state broadcast to clients each round.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    /// Flat parameter vector.
    pub weights: Array1<f64>,
    /// Number of completed aggregation rounds.
    pub round: usize,
}

impl GlobalModel {
    /// Zero-initialized model of the given length.
    pub fn zeros(len: usize) -> Self {
        GlobalModel {
            weights: Array1::zeros(len),
            round: 0,
        }
    }
}

/// Differential-privacy calibration for client updates.
#[derive(Debug, Clone, Copy)]
pub struct DpConfig {
    /// ℓ₂ sensitivity of one client's contribution.
    pub sensitivity: f64,
    /// Failure probability of the Gaussian guarantee.
    pub delta: f64,
    /// Smallest exposure used when calibrating noise, guarding division.
    pub epsilon_floor: f64,
    /// ℓ₂ clip applied to client drifts before perturbation.
    pub clip_norm: f64,
}

impl DpConfig {
    /// Standard calibration for an `n`-client population: unit sensitivity
    /// and clip, `delta = 1/n`.
    pub fn for_clients(n: usize) -> Self {
        DpConfig {
            sensitivity: 1.0,
            delta: 1.0 / n.max(1) as f64,
            epsilon_floor: 0.05,
            clip_norm: 1.0,
        }
    }

    /// Checks field ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.sensitivity > 0.0) {
            return Err(Error::invalid("sensitivity must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::invalid("epsilon_floor must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Gaussian-mechanism noise scale for one client's update.
///
/// `sqrt(2 ln(1.25/delta)) * sensitivity / max(epsilon, floor)`; the floor
/// keeps the scale finite when the auction grants near-zero exposure.
pub fn gaussian_sigma(sensitivity: f64, delta: f64, epsilon: f64, epsilon_floor: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon.max(epsilon_floor)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate of the update.
pub fn perturb_update(update: &Array1<f64>, sigma: f64, rng: &mut StdRng) -> Array1<f64> {
    if sigma == 0.0 {
        return update.clone();
    }
    update.mapv(|u| {
        let z: f64 = rng.sample(StandardNormal);
        u + sigma * z
    })
}

/// Exposure-weighted convex combination of client updates.
///
/// Weights are `eps_out[i] / sum(eps_out)`; callers pass the winners only.
pub fn aggregate(updates: &[Array1<f64>], eps_out: &[f64]) -> Result<Array1<f64>> {
    if updates.is_empty() {
        return Err(Error::invalid("no updates to aggregate"));
    }
    if updates.len() != eps_out.len() {
        return Err(Error::dim(format!(
            "{} updates vs {} exposure weights",
            updates.len(),
            eps_out.len()
        )));
    }
    let len = updates[0].len();
    if updates.iter().any(|u| u.len() != len) {
        return Err(Error::dim("updates have mixed lengths"));
    }
    if eps_out.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
        return Err(Error::invalid("exposure weights must be finite and nonnegative"));
    }
    let total: f64 = eps_out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("exposure weights sum to zero"));
    }
    let mut out = Array1::zeros(len);
    for (update, &eps) in updates.iter().zip(eps_out) {
        out = out + update * (eps / total);
    }
    Ok(out)
}

/// Per-round metrics of the market/learning loop.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Round index (1-based).
    pub round: usize,
    /// Total payments disbursed this round.
    pub revenue: f64,
    /// Payment total divided by the budget.
    pub budget_fraction: f64,
    /// Social welfare at true valuations.
    pub social_welfare: f64,
    /// Mean best-response regret over clients this round.
    pub mean_regret: f64,
    /// Test accuracy after aggregation.
    pub accuracy: f64,
    /// Mean granted exposure over winners (0 when the round is skipped).
    pub mean_eps_out: f64,
    /// Largest cumulative exposure any client index has accrued so far.
    pub cum_eps_max: f64,
}

/// Renders round records as CSV with a header row.
pub fn round_records_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(
        "round,revenue,budget_fraction,social_welfare,mean_regret,accuracy,mean_eps_out,cum_eps_max\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            r.revenue,
            r.budget_fraction,
            r.social_welfare,
            r.mean_regret,
            r.accuracy,
            r.mean_eps_out,
            r.cum_eps_max
        ));
    }
    out
}

/// Knobs of the federated loop other than mechanism and privacy calibration.
#[derive(Debug, Clone)]
pub struct FlOptions {
    /// Type distribution sampled each round.
    pub scenario: Scenario,
    /// Local passes over each winner's dataset per round.
    pub epochs: usize,
    /// Local minibatch size.
    pub batch_size: usize,
    /// Local SGD step size.
    pub learning_rate: f64,
    /// Ablation: train every client, skip noise, weight uniformly.
    pub force_no_noise: bool,
}

impl Default for FlOptions {
    fn default() -> Self {
        FlOptions {
            scenario: Scenario::Uniform,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.1,
            force_no_noise: false,
        }
    }
}

/// Outcome of a full federated run.
#[derive(Debug, Clone)]
pub struct FlOutcome {
    /// Final shared model.
    pub model: GlobalModel,
    /// One record per round (skipped rounds carry zero accuracy deltas).
    pub records: Vec<RoundRecord>,
    /// Mean test accuracy over the last five completed rounds.
    pub final_accuracy: f64,
    /// Per-client cumulative exposure after the last round.
    pub cumulative_epsilon: Vec<f64>,
}

/// Number of trailing rounds averaged into `final_accuracy`.
pub const FINAL_ACCURACY_WINDOW: usize = 5;

/// Runs `rounds` auction-gated federated rounds and returns the model,
/// per-round records, and exposure bookkeeping.
///
/// Each round: sample fresh types, run the mechanism, train the winners
/// locally (clipped), perturb with exposure-calibrated Gaussian noise, and
/// aggregate with exposure weights. Rounds with no winners (or where every
/// winner's dataset is missing) are recorded but leave the model unchanged.
pub fn run_fl(
    mechanism: &Mechanism,
    task: &SyntheticTask,
    rounds: usize,
    dp: &DpConfig,
    options: &FlOptions,
    budget: f64,
    seed: u64,
) -> Result<FlOutcome> {
    dp.validate()?;
    if !(budget > 0.0) {
        return Err(Error::invalid("budget must be positive"));
    }
    let n = task.client_data.len();
    let mut model = GlobalModel::zeros(task::model_len(task.feature_dim, task.n_classes));
    let mut cumulative = vec![0.0f64; n];
    let mut records = Vec::with_capacity(rounds);
    let mut accuracy = task::accuracy(
        &model.weights,
        &task.test_features,
        &task.test_labels,
        task.n_classes,
    );

    let regret_cfg = TrainConfig {
        n_clients: n,
        budget,
        ..TrainConfig::default()
    };

    for round in 1..=rounds {
        let mut types = sample_types(options.scenario, n, derive_seed(seed, &[20, round as u64]));
        for t in &mut types {
            t.delta = dp.delta;
        }
        let outcome = mechanism.run(&types, budget)?;
        let welfare = social_welfare(
            &outcome,
            &types.iter().map(|t| t.valuation).collect::<Vec<_>>(),
            budget,
        )?;

        let mean_regret = round_mean_regret(mechanism, &types, budget, &regret_cfg, seed, round)?;

        let participants: Vec<usize> = if options.force_no_noise {
            (0..n).collect()
        } else {
            outcome.winners.clone()
        };

        let mut updates = Vec::new();
        let mut weights = Vec::new();
        let mut eps_sum = 0.0;
        for &i in &participants {
            let (features, labels) = &task.client_data[i];
            if labels.is_empty() {
                continue; // nothing to train on; skip this client
            }
            let local = local_train(
                &model,
                features,
                labels,
                options.epochs,
                options.batch_size,
                options.learning_rate,
                dp.clip_norm,
                derive_seed(seed, &[21, round as u64, i as u64]),
            )?;
            let eps = outcome.epsilon_out[i];
            let perturbed = if options.force_no_noise {
                local
            } else {
                let sigma = gaussian_sigma(dp.sensitivity, dp.delta, eps, dp.epsilon_floor);
                let mut rng =
                    StdRng::seed_from_u64(derive_seed(seed, &[22, round as u64, i as u64]));
                perturb_update(&local, sigma, &mut rng)
            };
            updates.push(perturbed);
            weights.push(if options.force_no_noise { 1.0 } else { eps });
            cumulative[i] += eps;
            eps_sum += eps;
        }

        if updates.is_empty() {
            // No eligible winners: leave the model unchanged this round.
            records.push(RoundRecord {
                round,
                revenue: outcome.payments.iter().sum(),
                budget_fraction: outcome.payments.iter().sum::<f64>() / budget,
                social_welfare: welfare.social_welfare,
                mean_regret,
                accuracy,
                mean_eps_out: 0.0,
                cum_eps_max: cumulative.iter().cloned().fold(0.0, f64::max),
            });
            continue;
        }

        model.weights = aggregate(&updates, &weights)?;
        model.round = round;
        accuracy = task::accuracy(
            &model.weights,
            &task.test_features,
            &task.test_labels,
            task.n_classes,
        );

        records.push(RoundRecord {
            round,
            revenue: outcome.payments.iter().sum(),
            budget_fraction: outcome.payments.iter().sum::<f64>() / budget,
            social_welfare: welfare.social_welfare,
            mean_regret,
            accuracy,
            mean_eps_out: if participants.is_empty() {
                0.0
            } else {
                eps_sum / updates.len() as f64
            },
            cum_eps_max: cumulative.iter().cloned().fold(0.0, f64::max),
        });
    }

    let tail = records
        .iter()
        .rev()
        .take(FINAL_ACCURACY_WINDOW)
        .map(|r| r.accuracy)
        .collect::<Vec<_>>();
    let final_accuracy = if tail.is_empty() {
        accuracy
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };

    Ok(FlOutcome {
        model,
        records,
        final_accuracy,
        cumulative_epsilon: cumulative,
    })
}

/// Mean best-response regret for the round's sampled types under the active
/// mechanism: price-of-anarchy style diagnostics for the market layer.
fn round_mean_regret(
    mechanism: &Mechanism,
    types: &[crate::market::ClientType],
    budget: f64,
    cfg: &TrainConfig,
    seed: u64,
    round: usize,
) -> Result<f64> {
    let n = types.len();
    match mechanism {
        Mechanism::Learned(params) => {
            let profile = BidProfile::from_types(types)?;
            let mut cfg = cfg.clone();
            cfg.seed = derive_seed(seed, &[23, round as u64]);
            let mut total = 0.0;
            for i in 0..n {
                let (r, _) = pga_regret(params, &profile, budget, i, &cfg)?;
                total += r.max(0.0);
            }
            Ok(total / n as f64)
        }
        _ => {
            let mech = |ts: &[crate::market::ClientType], b: f64| mechanism.run(ts, b);
            let report = brute_force_regret(mech, types, budget, 64)?;
            Ok(report.iter().sum::<f64>() / n as f64)
        }
    }
}
