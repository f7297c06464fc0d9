//! Adversarial training of the learned auction mechanism.
//!
//! The objective combines three parts:
//!
//! * an augmented-Lagrangian backbone — maximize expected revenue subject to
//!   individual-rationality hinges and per-client regret penalties
//!   `λ_i·rgt_i + (ρ/2)·rgt_i²`, with dual ascent on `λ` and a geometric
//!   penalty schedule on `ρ`;
//! * a population-consistency (mean-field alignment) term pulling realized
//!   payments toward representative-agent payment targets ([`align`]),
//!   annealed in linearly over training;
//! * an optional value-estimate regression toward one-step Bellman backups
//!   ([`critic`]), used for variance-reduced regret when blended in.
//!
//! Each outer iteration samples a fresh batch of truthful profiles, finds the
//! best misreport for every `(profile, client)` slot by projected ascent
//! ([`pga`]), freezes those misreports, and then takes `inner_steps` Adam
//! steps on the full objective, re-evaluating truthful and deviation
//! utilities under the current parameters at every step. Everything is
//! deterministic given the config seed.

pub mod align;
pub mod critic;
pub mod pga;

pub use align::{alignment_loss, mean_field_payment, mean_field_response, PaymentWindow};
pub use critic::{bellman_targets, critic_loss, fit_critic, CriticState};
pub use pga::{
    misreport_mean_field, pga_regret, pga_regret_trace, value_baselined_regret,
    value_baselined_regret_trace, RegretTrace,
};

use ndarray::{Array1, Array2};

use crate::diffnet::{adam_step, AdamState, Mlp};
use crate::error::{Error, Result};
use crate::market::{sample_types, BidProfile, Scenario};
use crate::mechanism::{backward_batch, forward_batch, MechanismParams};
use crate::seeding::derive_seed;

/// Outer iterations between multiplications of the regret penalty weight.
pub const RHO_CADENCE: usize = 10;

/// Seed-path tags for the trainer's independent random streams.
const TAG_PARAMS: u64 = 0;
const TAG_BATCH: u64 = 1;
const TAG_TRAIN_BELLMAN: u64 = 40;

// ===== Configuration =====

/// All hyperparameters of a training run (and of regret evaluation, which
/// reuses the search settings).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Outer iterations (batch + misreport search + dual update).
    pub outer_iters: usize,
    /// Primal Adam steps per outer iteration.
    pub inner_steps: usize,
    /// Profiles per batch.
    pub batch_size: usize,
    /// Misreport-ascent iterates.
    pub pga_steps: usize,
    /// Misreport-ascent step size.
    pub pga_step_size: f64,
    /// Adam learning rate for all networks.
    pub learning_rate: f64,
    /// Weight on the individual-rationality hinge.
    pub ir_penalty: f64,
    /// Initial regret penalty weight.
    pub rho0: f64,
    /// Multiplicative penalty growth applied every [`RHO_CADENCE`] iterations.
    pub rho_growth: f64,
    /// Penalty ceiling.
    pub rho_max: f64,
    /// Blend between plain and value-baselined regret estimates (0 = plain).
    pub zeta: f64,
    /// Alignment weight at iteration 0.
    pub lambda_mfg_start: f64,
    /// Alignment weight at the final iteration.
    pub lambda_mfg_end: f64,
    /// Weight on the critic's Bellman-residual loss.
    pub lambda_hjb: f64,
    /// Opponent resamples per representative-agent evaluation.
    pub mc_opponents: usize,
    /// Huber knee on normalized alignment residuals.
    pub huber_delta: f64,
    /// Weight of the aggregate budget-moment alignment term.
    pub moment_weight: f64,
    /// Exponent on valuations in the alignment weights.
    pub weight_exponent: f64,
    /// Discount rate in the Bellman backup (`e^{-discount}` per step).
    pub discount: f64,
    /// Server payment budget.
    pub budget: f64,
    /// Master seed; all randomness derives from it.
    pub seed: u64,
    /// Market size the mechanism is built for.
    pub n_clients: usize,
    /// Privacy items per client (training currently supports 1).
    pub n_items: usize,
    /// Include the population-mean row in the network input.
    pub use_mean_field: bool,
    /// Shift the mean row self-consistently during misreport search.
    pub mfg_update_in_pga: bool,
    /// States per Bellman-target refresh (capped by the batch size).
    pub critic_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_iters: 800,
            inner_steps: 2,
            batch_size: 64,
            pga_steps: 25,
            pga_step_size: 0.01,
            learning_rate: 1e-3,
            ir_penalty: 10.0,
            rho0: 1.0,
            rho_growth: 1.5,
            rho_max: 100.0,
            zeta: 0.0,
            lambda_mfg_start: 0.0,
            lambda_mfg_end: 0.05,
            lambda_hjb: 1.0,
            mc_opponents: 8,
            huber_delta: 1.0,
            moment_weight: 1.0,
            weight_exponent: 1.0,
            discount: 0.1,
            budget: 50.0,
            seed: 0,
            n_clients: 10,
            n_items: 1,
            use_mean_field: true,
            mfg_update_in_pga: true,
            critic_batch: 16,
        }
    }
}

impl TrainConfig {
    /// Checks every invariant the fields must satisfy.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("outer_iters", self.outer_iters as f64),
            ("inner_steps", self.inner_steps as f64),
            ("batch_size", self.batch_size as f64),
            ("pga_steps", self.pga_steps as f64),
            ("pga_step_size", self.pga_step_size),
            ("learning_rate", self.learning_rate),
            ("rho0", self.rho0),
            ("huber_delta", self.huber_delta),
            ("discount", self.discount),
            ("budget", self.budget),
            ("n_clients", self.n_clients as f64),
            ("n_items", self.n_items as f64),
            ("mc_opponents", self.mc_opponents as f64),
            ("critic_batch", self.critic_batch as f64),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive (got {value})")));
            }
        }
        let nonneg = [
            ("ir_penalty", self.ir_penalty),
            ("lambda_mfg_start", self.lambda_mfg_start),
            ("lambda_mfg_end", self.lambda_mfg_end),
            ("lambda_hjb", self.lambda_hjb),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::invalid(format!("{name} must be nonnegative (got {value})")));
            }
        }
        if !(self.rho_growth >= 1.0) {
            return Err(Error::invalid("rho_growth must be at least 1"));
        }
        if !(self.rho_max >= self.rho0) {
            return Err(Error::invalid("rho_max must be at least rho0"));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::invalid("zeta must lie in [0, 1]"));
        }
        if !(0.1..=1.0).contains(&self.moment_weight) {
            return Err(Error::invalid("moment_weight must lie in [0.1, 1]"));
        }
        if !self.weight_exponent.is_finite() || self.weight_exponent < 0.0 {
            return Err(Error::invalid("weight_exponent must be nonnegative"));
        }
        Ok(())
    }

    /// Alignment weight at outer iteration `t` (linear ramp).
    pub fn lambda_mfg_at(&self, t: usize) -> f64 {
        if self.outer_iters <= 1 {
            return self.lambda_mfg_end;
        }
        let frac = t as f64 / (self.outer_iters - 1) as f64;
        self.lambda_mfg_start + (self.lambda_mfg_end - self.lambda_mfg_start) * frac
    }

    /// Flat `key value` listing of every field, in declaration order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let s = |x: String| x;
        vec![
            ("outer_iters".into(), s(self.outer_iters.to_string())),
            ("inner_steps".into(), s(self.inner_steps.to_string())),
            ("batch_size".into(), s(self.batch_size.to_string())),
            ("pga_steps".into(), s(self.pga_steps.to_string())),
            ("pga_step_size".into(), s(self.pga_step_size.to_string())),
            ("learning_rate".into(), s(self.learning_rate.to_string())),
            ("ir_penalty".into(), s(self.ir_penalty.to_string())),
            ("rho0".into(), s(self.rho0.to_string())),
            ("rho_growth".into(), s(self.rho_growth.to_string())),
            ("rho_max".into(), s(self.rho_max.to_string())),
            ("zeta".into(), s(self.zeta.to_string())),
            ("lambda_mfg_start".into(), s(self.lambda_mfg_start.to_string())),
            ("lambda_mfg_end".into(), s(self.lambda_mfg_end.to_string())),
            ("lambda_hjb".into(), s(self.lambda_hjb.to_string())),
            ("mc_opponents".into(), s(self.mc_opponents.to_string())),
            ("huber_delta".into(), s(self.huber_delta.to_string())),
            ("moment_weight".into(), s(self.moment_weight.to_string())),
            ("weight_exponent".into(), s(self.weight_exponent.to_string())),
            ("discount".into(), s(self.discount.to_string())),
            ("budget".into(), s(self.budget.to_string())),
            ("seed".into(), s(self.seed.to_string())),
            ("n_clients".into(), s(self.n_clients.to_string())),
            ("n_items".into(), s(self.n_items.to_string())),
            ("use_mean_field".into(), s(self.use_mean_field.to_string())),
            ("mfg_update_in_pga".into(), s(self.mfg_update_in_pga.to_string())),
            ("critic_batch".into(), s(self.critic_batch.to_string())),
        ]
    }

    /// Sets one field from its `key value` spelling.
    pub fn apply_key_value(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| Error::invalid(format!("bad value for {key}: {e}")))
        }
        match key {
            "outer_iters" => self.outer_iters = p(key, value)?,
            "inner_steps" => self.inner_steps = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "pga_steps" => self.pga_steps = p(key, value)?,
            "pga_step_size" => self.pga_step_size = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "ir_penalty" => self.ir_penalty = p(key, value)?,
            "rho0" => self.rho0 = p(key, value)?,
            "rho_growth" => self.rho_growth = p(key, value)?,
            "rho_max" => self.rho_max = p(key, value)?,
            "zeta" => self.zeta = p(key, value)?,
            "lambda_mfg_start" => self.lambda_mfg_start = p(key, value)?,
            "lambda_mfg_end" => self.lambda_mfg_end = p(key, value)?,
            "lambda_hjb" => self.lambda_hjb = p(key, value)?,
            "mc_opponents" => self.mc_opponents = p(key, value)?,
            "huber_delta" => self.huber_delta = p(key, value)?,
            "moment_weight" => self.moment_weight = p(key, value)?,
            "weight_exponent" => self.weight_exponent = p(key, value)?,
            "discount" => self.discount = p(key, value)?,
            "budget" => self.budget = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "n_clients" => self.n_clients = p(key, value)?,
            "n_items" => self.n_items = p(key, value)?,
            "use_mean_field" => self.use_mean_field = p(key, value)?,
            "mfg_update_in_pga" => self.mfg_update_in_pga = p(key, value)?,
            "critic_batch" => self.critic_batch = p(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

/// Dual state of the regret constraints.
#[derive(Debug, Clone)]
pub struct LagrangianState {
    /// Per-client multipliers, nonnegative and nondecreasing under positive
    /// regret estimates.
    pub multipliers: Vec<f64>,
    /// Current quadratic penalty weight.
    pub penalty: f64,
}

// ===== Batch representation =====

/// A batch of truthful bid profiles in flat matrix form.
#[derive(Debug, Clone)]
pub struct BatchData {
    /// Bids, `L × N·m` (client-major within a row).
    pub bids: Array2<f64>,
    /// Declared budgets, `L × N·m`.
    pub epsilons: Array2<f64>,
    /// Population mean bids, `L × m`.
    pub mean_field: Array2<f64>,
    /// Clients per profile.
    pub n_clients: usize,
    /// Items per client.
    pub n_items: usize,
}

impl BatchData {
    /// Flattens owned profiles into batch matrices.
    pub fn from_profiles(profiles: &[BidProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::invalid("empty profile batch"))?;
        let (n, m) = (first.n_clients, first.n_items);
        let mut bids = Array2::zeros((profiles.len(), n * m));
        let mut epsilons = Array2::zeros((profiles.len(), n * m));
        let mut mean_field = Array2::zeros((profiles.len(), m));
        for (l, p) in profiles.iter().enumerate() {
            if p.n_clients != n || p.n_items != m {
                return Err(Error::dim("profiles in a batch must share shapes"));
            }
            for i in 0..n {
                for j in 0..m {
                    bids[(l, i * m + j)] = p.bids[(i, j)];
                    epsilons[(l, i * m + j)] = p.epsilons[(i, j)];
                }
            }
            for j in 0..m {
                mean_field[(l, j)] = p.mean_field_bid[j];
            }
        }
        Ok(BatchData {
            bids,
            epsilons,
            mean_field,
            n_clients: n,
            n_items: m,
        })
    }

    /// Samples `batch` truthful single-item profiles from a scenario.
    pub fn sample(scenario: Scenario, n_clients: usize, batch: usize, seed: u64) -> Result<Self> {
        let mut profiles = Vec::with_capacity(batch);
        for l in 0..batch {
            let types = sample_types(scenario, n_clients, derive_seed(seed, &[l as u64]));
            profiles.push(BidProfile::from_types(&types)?);
        }
        Self::from_profiles(&profiles)
    }

    /// Number of profiles.
    pub fn batch_len(&self) -> usize {
        self.bids.nrows()
    }

    /// Reconstructs one profile.
    pub fn profile(&self, index: usize) -> Result<BidProfile> {
        let (n, m) = (self.n_clients, self.n_items);
        if index >= self.batch_len() {
            return Err(Error::invalid(format!("profile index {index} out of range")));
        }
        let bids = Array2::from_shape_fn((n, m), |(i, j)| self.bids[(index, i * m + j)]);
        let eps = Array2::from_shape_fn((n, m), |(i, j)| self.epsilons[(index, i * m + j)]);
        BidProfile::new(bids, eps)
    }

    /// Augmented network inputs, `L × (N+1)·m`; the mean row is zeroed when
    /// the mean-field input is disabled.
    pub fn augmented(&self, use_mean_field: bool) -> Array2<f64> {
        let (l_count, nm) = self.bids.dim();
        let m = self.n_items;
        let mut out = Array2::zeros((l_count, nm + m));
        for l in 0..l_count {
            for k in 0..nm {
                out[(l, k)] = self.bids[(l, k)];
            }
            if use_mean_field {
                for j in 0..m {
                    out[(l, nm + j)] = self.mean_field[(l, j)];
                }
            }
        }
        out
    }

    /// Scalar per-unit valuations, `L × N`. Under truthful sampling these are
    /// the bids (mean across items for multi-item profiles).
    pub fn valuations(&self) -> Array2<f64> {
        let m = self.n_items;
        Array2::from_shape_fn((self.batch_len(), self.n_clients), |(l, i)| {
            (0..m).map(|j| self.bids[(l, i * m + j)]).sum::<f64>() / m as f64
        })
    }
}

/// Elementwise utilities `p − v∘ε` for aligned `L×N` matrices.
pub(crate) fn utilities(
    payments: &Array2<f64>,
    epsilon_out: &Array2<f64>,
    valuations: &Array2<f64>,
) -> Array2<f64> {
    let mut u = payments.clone();
    ndarray::Zip::from(&mut u)
        .and(epsilon_out)
        .and(valuations)
        .for_each(|u, &e, &v| *u -= v * e);
    u
}

/// One Adam step of a scalar-output network toward regression targets under
/// squared error; returns the pre-step mean-squared error.
pub(crate) fn adam_mse_step(
    net: &mut Mlp,
    adam: &mut AdamState,
    inputs: &Array2<f64>,
    targets: &Array1<f64>,
) -> Result<f64> {
    let (out, tape) = net.forward(inputs)?;
    let count = targets.len() as f64;
    let mut grad = Array2::zeros(out.raw_dim());
    let mut mse = 0.0;
    for (s, &y) in targets.iter().enumerate() {
        let d = out[(s, 0)] - y;
        mse += d * d / count;
        grad[(s, 0)] = 2.0 * d / count;
    }
    let grads = net.backward(&tape, &grad)?;
    adam_step(adam, net, &grads)?;
    Ok(mse)
}

// ===== Training =====

/// One row of the training log (values from the final primal step of the
/// iteration, before the dual update).
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub iteration: usize,
    /// Mean truthful revenue per profile.
    pub revenue: f64,
    /// Mean per-client regret estimate.
    pub mean_regret: f64,
    /// Regret normalized by mean absolute truthful utility.
    pub norm_regret: f64,
    /// Mean individual-rationality hinge.
    pub ir_hinge: f64,
    /// Augmented-Lagrangian backbone loss.
    pub loss_al: f64,
    /// Alignment loss (unweighted).
    pub loss_align: f64,
    /// Critic Bellman-residual loss (unweighted).
    pub loss_hjb: f64,
    /// Full weighted objective.
    pub loss_total: f64,
    /// Mean dual multiplier after ascent.
    pub lambda_mean: f64,
    /// Current penalty weight.
    pub rho: f64,
    /// Current alignment weight.
    pub lambda_mfg: f64,
}

/// Header plus one CSV line per logged iteration.
pub fn training_log_csv(log: &[TrainLogRow]) -> String {
    let mut out = String::from(
        "iteration,revenue,mean_regret,norm_regret,ir_hinge,loss_al,loss_align,loss_hjb,loss_total,lambda_mean,rho,lambda_mfg\n",
    );
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.revenue,
            r.mean_regret,
            r.norm_regret,
            r.ir_hinge,
            r.loss_al,
            r.loss_align,
            r.loss_hjb,
            r.loss_total,
            r.lambda_mean,
            r.rho,
            r.lambda_mfg
        ));
    }
    out
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Trained mechanism (including the critic).
    pub params: MechanismParams,
    /// Per-iteration log.
    pub log: Vec<TrainLogRow>,
    /// Final dual state.
    pub lagrangian: LagrangianState,
}

/// The untrained mechanism [`train`] would start from for this config —
/// useful as a before/after baseline in evaluations.
pub fn initial_params(config: &TrainConfig) -> Result<MechanismParams> {
    MechanismParams::new(
        config.n_clients,
        config.n_items,
        derive_seed(config.seed, &[TAG_PARAMS]),
    )
}

/// Trains a mechanism from scratch on a scenario. See the module docs for the
/// loop structure; aborts with a diagnostic if any loss turns non-finite.
pub fn train(config: &TrainConfig, scenario: Scenario) -> Result<TrainOutput> {
    config.validate()?;
    if config.n_items != 1 {
        return Err(Error::invalid(
            "training samples scalar-valuation scenarios; n_items must be 1",
        ));
    }
    let n = config.n_clients;
    let m = config.n_items;
    let l_count = config.batch_size;
    let mut params = MechanismParams::new(n, m, derive_seed(config.seed, &[TAG_PARAMS]))?;

    let mut adam_header = AdamState::new(&params.header, config.learning_rate);
    let mut adam_alloc = AdamState::new(&params.alloc_head, config.learning_rate);
    let mut adam_pay = AdamState::new(&params.pay_head, config.learning_rate);
    let mut adam_critic = AdamState::new(&params.critic, config.learning_rate);

    let mut lagrangian = LagrangianState {
        multipliers: vec![0.0; n],
        penalty: config.rho0,
    };
    let mut window = PaymentWindow::new(n, align::PAYMENT_WINDOW_BATCHES);
    let mut log: Vec<TrainLogRow> = Vec::with_capacity(config.outer_iters);

    for t in 0..config.outer_iters {
        let lambda_mfg = config.lambda_mfg_at(t);
        let batch = BatchData::sample(scenario, n, l_count, derive_seed(config.seed, &[TAG_BATCH, t as u64]))?;
        let valuations = batch.valuations();
        let aug_truth = batch.augmented(config.use_mean_field);

        // Pre-search truthful pass: utilities for the misreport search, the
        // payment window update, and the alignment scale snapshot.
        let fwd0 = forward_batch(&params, &aug_truth, &batch.epsilons, config.budget)?;
        let truthful_u0 = utilities(&fwd0.projected_payments, &fwd0.epsilon_out, &valuations);
        window.push(&fwd0.projected_payments);
        let scales = window.scales();

        // Constant alignment targets for this iteration.
        let (targets, weights) = if lambda_mfg > 0.0 {
            let tg = align::compute_alignment_targets(&params, &batch, config, t)?;
            let w = align::alignment_weights(&valuations, config.weight_exponent);
            (Some(tg), Some(w))
        } else {
            (None, None)
        };

        // Frozen Bellman targets for the critic.
        let critic_setup = if config.lambda_hjb > 0.0 {
            let picks: Vec<(usize, usize)> = (0..config.critic_batch.min(l_count))
                .map(|l| (l, l % n))
                .collect();
            let (states, pools) = critic::states_from_batch(&batch, &picks, config.use_mean_field)?;
            let frozen = params.critic.clone();
            let ys = critic::bellman_targets(
                &params,
                &frozen,
                &states,
                &pools,
                config,
                derive_seed(config.seed, &[TAG_TRAIN_BELLMAN, t as u64]),
            )?;
            let mut c_in = Array2::zeros((states.len(), 2 * m));
            for (s, st) in states.iter().enumerate() {
                for j in 0..m {
                    c_in[(s, j)] = st.bid[j];
                    c_in[(s, m + j)] = st.mean_field[j];
                }
            }
            Some((c_in, Array1::from_vec(ys)))
        } else {
            None
        };

        // Misreport search over every (profile, client) slot.
        let clients: Vec<(usize, usize)> = (0..l_count)
            .flat_map(|l| (0..n).map(move |i| (l, i)))
            .collect();
        let search = pga::pga_core(&pga::PgaCoreArgs {
            params: &params,
            batch: &batch,
            clients: &clients,
            valuations: &valuations,
            truthful_utility: &truthful_u0,
            budget: config.budget,
            steps: config.pga_steps,
            step_size: config.pga_step_size,
            use_mean_field: config.use_mean_field,
            mfg_update: config.mfg_update_in_pga,
            critic: None,
            record_trace: false,
            seed: derive_seed(config.seed, &[pga::TAG_PGA, t as u64]),
        })?;

        // Combined evaluation matrix: L truthful rows then L·N frozen
        // deviation rows in (profile-major, client-minor) order.
        let nm = n * m;
        let width = (n + 1) * m;
        let total_rows = l_count + l_count * n;
        let mut inputs = Array2::zeros((total_rows, width));
        let mut eps_all = Array2::zeros((total_rows, nm));
        for l in 0..l_count {
            for k in 0..width {
                inputs[(l, k)] = aug_truth[(l, k)];
            }
            for k in 0..nm {
                eps_all[(l, k)] = batch.epsilons[(l, k)];
            }
        }
        let dev_row = |l: usize, i: usize| l_count + l * n + i;
        for (idx, &(l, i)) in clients.iter().enumerate() {
            let r = dev_row(l, i);
            for k in 0..nm {
                inputs[(r, k)] = batch.bids[(l, k)];
                eps_all[(r, k)] = batch.epsilons[(l, k)];
            }
            if config.use_mean_field {
                for j in 0..m {
                    inputs[(r, nm + j)] = batch.mean_field[(l, j)];
                }
            }
            for j in 0..m {
                let x = search.misreports[idx][j];
                inputs[(r, i * m + j)] = x;
                if config.use_mean_field && config.mfg_update_in_pga {
                    inputs[(r, nm + j)] =
                        batch.mean_field[(l, j)] + (x - batch.bids[(l, i * m + j)]) / n as f64;
                }
            }
        }

        // Frozen critic inputs for the blended estimator.
        let blend_inputs = if config.zeta > 0.0 {
            let mut truth_c = Array2::zeros((clients.len(), 2 * m));
            let mut dev_c = Array2::zeros((clients.len(), 2 * m));
            for (idx, &(l, i)) in clients.iter().enumerate() {
                for j in 0..m {
                    truth_c[(idx, j)] = batch.bids[(l, i * m + j)];
                    truth_c[(idx, m + j)] = if config.use_mean_field {
                        batch.mean_field[(l, j)]
                    } else {
                        0.0
                    };
                    let r = dev_row(l, i);
                    dev_c[(idx, j)] = inputs[(r, i * m + j)];
                    dev_c[(idx, m + j)] = inputs[(r, nm + j)];
                }
            }
            Some((truth_c, dev_c))
        } else {
            None
        };

        // Primal descent with frozen misreports.
        let mut last = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0); // rev, rgt, nrm, hinge, al, align, hjb, total
        for step in 0..config.inner_steps {
            let fwd = forward_batch(&params, &inputs, &eps_all, config.budget)?;

            // Current truthful and deviation utilities.
            let mut gains = Array2::zeros((l_count, n));
            let mut truth_u = Array2::zeros((l_count, n));
            for &(l, i) in &clients {
                let v = valuations[(l, i)];
                let ut = fwd.projected_payments[(l, i)] - v * fwd.epsilon_out[(l, i)];
                let r = dev_row(l, i);
                let ud = fwd.projected_payments[(r, i)] - v * fwd.epsilon_out[(r, i)];
                truth_u[(l, i)] = ut;
                gains[(l, i)] = ud - ut;
            }

            // Advantage gains under the current critic (blend only).
            let adv_gains = match (&blend_inputs, config.zeta > 0.0) {
                (Some((truth_c, dev_c)), true) => {
                    let (pt, _) = params.critic.forward(truth_c)?;
                    let (pd, _) = params.critic.forward(dev_c)?;
                    let mut a = gains.clone();
                    for (idx, &(l, i)) in clients.iter().enumerate() {
                        a[(l, i)] = gains[(l, i)] - (pd[(idx, 0)] - pt[(idx, 0)]);
                    }
                    Some(a)
                }
                _ => None,
            };

            // Per-client regret estimates and blend.
            let mut rgt = vec![0.0_f64; n];
            for i in 0..n {
                let mut plain = 0.0;
                let mut baselined = 0.0;
                for l in 0..l_count {
                    plain += gains[(l, i)].max(0.0);
                    if let Some(a) = &adv_gains {
                        baselined += a[(l, i)].max(0.0);
                    }
                }
                plain /= l_count as f64;
                baselined /= l_count as f64;
                rgt[i] = if config.zeta > 0.0 {
                    (1.0 - config.zeta) * plain + config.zeta * baselined
                } else {
                    plain
                };
            }

            // Scalar losses.
            let revenue: f64 = (0..l_count)
                .map(|l| fwd.projected_payments.row(l).sum())
                .sum::<f64>()
                / l_count as f64;
            let mut hinge_mean = 0.0;
            for l in 0..l_count {
                for i in 0..n {
                    hinge_mean += (valuations[(l, i)] * fwd.epsilon_out[(l, i)]
                        - fwd.projected_payments[(l, i)])
                        .max(0.0);
                }
            }
            hinge_mean /= l_count as f64;
            let penalty_term: f64 = (0..n)
                .map(|i| {
                    lagrangian.multipliers[i] * rgt[i] + 0.5 * lagrangian.penalty * rgt[i] * rgt[i]
                })
                .sum();
            let loss_al = -revenue + config.ir_penalty * hinge_mean + penalty_term;

            let (loss_align, align_grad) = match (&targets, &weights) {
                (Some(tg), Some(w)) => {
                    let truth_pay = fwd.projected_payments.slice(ndarray::s![0..l_count, ..]).to_owned();
                    let (v, g) = align::alignment_value_grad(&truth_pay, tg, w, &scales, config);
                    (v, Some(g))
                }
                _ => (0.0, None),
            };

            let (loss_hjb, critic_grad_data) = match &critic_setup {
                Some((c_in, ys)) => {
                    let (out, tape) = params.critic.forward(c_in)?;
                    let count = ys.len() as f64;
                    let mut g = Array2::zeros(out.raw_dim());
                    let mut mse = 0.0;
                    for (s, &y) in ys.iter().enumerate() {
                        let d = out[(s, 0)] - y;
                        mse += d * d / count;
                        g[(s, 0)] = 2.0 * d * config.lambda_hjb / count;
                    }
                    (mse, Some((tape, g)))
                }
                None => (0.0, None),
            };

            let loss_total = loss_al + lambda_mfg * loss_align + config.lambda_hjb * loss_hjb;
            if !loss_total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective diverged at iteration {t}, primal step {step}: \
                     backbone={loss_al:.6e} align={loss_align:.6e} critic={loss_hjb:.6e} \
                     revenue={revenue:.6e} hinge={hinge_mean:.6e} rho={} lambda_mean={:.6e}",
                    lagrangian.penalty,
                    lagrangian.multipliers.iter().sum::<f64>() / n as f64,
                )));
            }

            // Cotangent assembly over the combined rows.
            let mut g_pay = Array2::zeros((total_rows, n));
            let mut g_eps = Array2::zeros((total_rows, n));
            for l in 0..l_count {
                for i in 0..n {
                    let v = valuations[(l, i)];
                    // Revenue.
                    g_pay[(l, i)] -= 1.0 / l_count as f64;
                    // Individual-rationality hinge.
                    if v * fwd.epsilon_out[(l, i)] - fwd.projected_payments[(l, i)] > 0.0 {
                        g_pay[(l, i)] -= config.ir_penalty / l_count as f64;
                        g_eps[(l, i)] += config.ir_penalty * v / l_count as f64;
                    }
                    // Regret penalty, truthful and deviation sides.
                    let coeff = lagrangian.multipliers[i] + lagrangian.penalty * rgt[i];
                    let mut active = 0.0;
                    if config.zeta > 0.0 {
                        if gains[(l, i)] > 0.0 {
                            active += 1.0 - config.zeta;
                        }
                        if let Some(a) = &adv_gains {
                            if a[(l, i)] > 0.0 {
                                active += config.zeta;
                            }
                        }
                    } else if gains[(l, i)] > 0.0 {
                        active = 1.0;
                    }
                    if active > 0.0 {
                        let w_li = coeff * active / l_count as f64;
                        let r = dev_row(l, i);
                        g_pay[(r, i)] += w_li;
                        g_eps[(r, i)] -= w_li * v;
                        g_pay[(l, i)] -= w_li;
                        g_eps[(l, i)] += w_li * v;
                    }
                    // Alignment.
                    if let Some(ag) = &align_grad {
                        g_pay[(l, i)] += lambda_mfg * ag[(l, i)];
                    }
                }
            }

            let grads = backward_batch(&params, &fwd, &g_pay, &g_eps, true)?;
            apply_updates(&mut params, &mut adam_header, &mut adam_alloc, &mut adam_pay, &grads)?;
            if let Some((tape, g)) = critic_grad_data {
                let cg = params.critic.backward(&tape, &g)?;
                adam_step(&mut adam_critic, &mut params.critic, &cg)?;
            }

            if step + 1 == config.inner_steps {
                let mean_rgt = rgt.iter().sum::<f64>() / n as f64;
                let mean_abs_u =
                    truth_u.iter().map(|u| u.abs()).sum::<f64>() / (l_count * n) as f64;
                let nrm = mean_rgt / mean_abs_u.max(1e-9);
                last = (
                    revenue, mean_rgt, nrm, hinge_mean, loss_al, loss_align, loss_hjb, loss_total,
                );
                // Dual ascent from the final primal estimates.
                for i in 0..n {
                    lagrangian.multipliers[i] += lagrangian.penalty * rgt[i];
                }
            }
        }

        if (t + 1) % RHO_CADENCE == 0 {
            lagrangian.penalty = (lagrangian.penalty * config.rho_growth).min(config.rho_max);
        }

        let row = TrainLogRow {
            iteration: t,
            revenue: last.0,
            mean_regret: last.1,
            norm_regret: last.2,
            ir_hinge: last.3,
            loss_al: last.4,
            loss_align: last.5,
            loss_hjb: last.6,
            loss_total: last.7,
            lambda_mean: lagrangian.multipliers.iter().sum::<f64>() / n as f64,
            rho: lagrangian.penalty,
            lambda_mfg,
        };
        for (name, value) in [
            ("revenue", row.revenue),
            ("mean_regret", row.mean_regret),
            ("ir_hinge", row.ir_hinge),
            ("loss_total", row.loss_total),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{name} non-finite at iteration {t}: {value}"
                )));
            }
        }
        log.push(row);
    }

    Ok(TrainOutput {
        params,
        log,
        lagrangian,
    })
}

/// Applies the three mechanism-network updates from one backward pass.
fn apply_updates(
    params: &mut MechanismParams,
    adam_header: &mut AdamState,
    adam_alloc: &mut AdamState,
    adam_pay: &mut AdamState,
    grads: &crate::mechanism::MechanismGradients,
) -> Result<()> {
    adam_step(adam_header, &mut params.header, &grads.header)?;
    adam_step(adam_alloc, &mut params.alloc_head, &grads.alloc_head)?;
    adam_step(adam_pay, &mut params.pay_head, &grads.pay_head)?;
    Ok(())
}
