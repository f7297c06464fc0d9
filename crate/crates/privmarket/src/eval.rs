//! Experiment metrics: regret distributions, runtime scaling, the efficiency
//! comparison table, and the population-size approximation-error series.
//!
//! Everything here consumes mechanisms and sampled populations; nothing
//! mutates trained parameters. Regret search always uses the same projected
//! gradient ascent configuration as training (or the exhaustive grid oracle
//! for classical mechanisms), so numbers are comparable across reports.

use std::time::Instant;

use ndarray::Array1;

use crate::auction::{Mechanism, MechanismKind};
use crate::classical::brute_force_regret;
use crate::error::{Error, Result};
use crate::market::{client_utility, sample_types, social_welfare, BidProfile, Scenario};
use crate::mechanism::MechanismParams;
use crate::seeding::derive_seed;
use crate::trainer::{pga_regret, train, TrainConfig};

/// Grid resolution of the exhaustive misreport oracle used for classical
/// mechanisms.
pub const EVAL_GRID: usize = 64;

/// Tolerance below which a truthful utility counts as an IR violation.
const IR_SLACK: f64 = 1e-12;

/// Guard for the regret-normalization denominator.
const NORMALIZATION_GUARD: f64 = 1e-9;

// ===== Regret evaluation =====

/// Distributional summary of best-response regret for one mechanism.
#[derive(Debug, Clone)]
pub struct RegretReport {
    /// Mean normalized regret per client slot (length N).
    pub per_client_regret: Vec<f64>,
    /// Mean normalized regret over all (instance, client) pairs.
    pub mean: f64,
    /// Standard deviation of the same population.
    pub std: f64,
    /// 25th / 50th / 75th percentiles, ordered.
    pub quartiles: [f64; 3],
    /// Fraction of (instance, client) pairs whose truthful utility is
    /// negative.
    pub ir_violation_rate: f64,
    /// Mean raw (unnormalized) regret; the quantity tracked by the
    /// population-size series.
    pub mean_raw: f64,
    /// Normalization denominator actually used (mean |truthful utility|,
    /// guarded from below).
    pub normalizer: f64,
}

/// Measures regret and IR of a mechanism over `n_samples` freshly sampled
/// populations.
///
/// Learned mechanisms are probed with the projected-gradient misreport search
/// (steps and step size from `config`); classical mechanisms with the
/// exhaustive grid oracle. Regrets are normalized by the mean absolute
/// truthful utility over the whole evaluation, guarded at `1e-9`.
pub fn evaluate_regret(
    mechanism: &Mechanism,
    scenario: Scenario,
    n_samples: usize,
    config: &TrainConfig,
) -> Result<RegretReport> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let n = match mechanism {
        Mechanism::Learned(params) => params.n_clients_trained,
        _ => config.n_clients,
    };
    if n == 0 {
        return Err(Error::invalid("population size must be >= 1"));
    }
    let budget = config.budget;

    let mut raw = Vec::with_capacity(n_samples * n);
    let mut truthful_utilities = Vec::with_capacity(n_samples * n);
    let mut per_client_sums = vec![0.0f64; n];
    let mut ir_violations = 0usize;

    for s in 0..n_samples {
        let types = sample_types(scenario, n, derive_seed(config.seed, &[30, s as u64]));
        let outcome = mechanism.run(&types, budget)?;
        for i in 0..n {
            let u = client_utility(outcome.payments[i], types[i].valuation, outcome.epsilon_out[i]);
            truthful_utilities.push(u);
            if u < -IR_SLACK {
                ir_violations += 1;
            }
        }
        match mechanism {
            Mechanism::Learned(params) => {
                let profile = BidProfile::from_types(&types)?;
                let mut cfg = config.clone();
                cfg.n_clients = n;
                cfg.seed = derive_seed(config.seed, &[31, s as u64]);
                for i in 0..n {
                    let (gain, _) = pga_regret(params, &profile, budget, i, &cfg)?;
                    raw.push(gain.max(0.0));
                }
            }
            _ => {
                let mech = |ts: &[crate::market::ClientType], b: f64| mechanism.run(ts, b);
                let regrets = brute_force_regret(mech, &types, budget, EVAL_GRID)?;
                raw.extend(regrets);
            }
        }
        for i in 0..n {
            per_client_sums[i] += raw[s * n + i];
        }
    }

    let normalizer = (truthful_utilities.iter().map(|u| u.abs()).sum::<f64>()
        / truthful_utilities.len() as f64)
        .max(NORMALIZATION_GUARD);
    let normalized: Vec<f64> = raw.iter().map(|r| r / normalizer).collect();
    let mean_raw = raw.iter().sum::<f64>() / raw.len() as f64;
    let mean = normalized.iter().sum::<f64>() / normalized.len() as f64;
    let var = normalized
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / normalized.len() as f64;

    let mut sorted = normalized.clone();
    sorted.sort_by(f64::total_cmp);
    let quartiles = [
        percentile(&sorted, 0.25),
        percentile(&sorted, 0.50),
        percentile(&sorted, 0.75),
    ];

    Ok(RegretReport {
        per_client_regret: per_client_sums
            .iter()
            .map(|s| s / (n_samples as f64) / normalizer)
            .collect(),
        mean,
        std: var.sqrt(),
        quartiles,
        ir_violation_rate: ir_violations as f64 / truthful_utilities.len() as f64,
        mean_raw,
        normalizer,
    })
}

/// Linear-interpolation percentile of an ascending slice; `q` in `[0,1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Renders a regret report as CSV (`client,mean_normalized_regret` rows plus
/// a trailing summary block).
pub fn regret_report_csv(report: &RegretReport) -> String {
    let mut out = String::from("client,mean_normalized_regret\n");
    for (i, r) in report.per_client_regret.iter().enumerate() {
        out.push_str(&format!("{i},{r}\n"));
    }
    out.push_str(&format!(
        "# mean,{}\n# std,{}\n# q25,{}\n# q50,{}\n# q75,{}\n# ir_violation_rate,{}\n# mean_raw,{}\n# normalizer,{}\n",
        report.mean,
        report.std,
        report.quartiles[0],
        report.quartiles[1],
        report.quartiles[2],
        report.ir_violation_rate,
        report.mean_raw,
        report.normalizer
    ));
    out
}

// ===== Efficiency table =====

/// One row of the mechanism-comparison table.
#[derive(Debug, Clone)]
pub struct EfficiencyRow {
    /// Mechanism label.
    pub mechanism: String,
    /// Mean revenue over seeds × rounds.
    pub revenue_mean: f64,
    /// Standard deviation of revenue.
    pub revenue_std: f64,
    /// Mean post-projection payment total divided by the budget.
    pub budget_feasibility_mean: f64,
    /// Worst (largest) budget ratio observed.
    pub budget_feasibility_max: f64,
    /// Revenue divided by the best mean revenue among the compared
    /// mechanisms in the same run.
    pub normalized_revenue: f64,
    /// Mean social welfare over budget.
    pub welfare_ratio_mean: f64,
    /// Standard deviation of welfare over budget.
    pub welfare_ratio_std: f64,
}

/// Runs every mechanism on the *same* sampled populations and summarizes
/// revenue, budget feasibility, and welfare per mechanism.
///
/// All learned entries must have been trained for `n_clients` clients. The
/// normalized-revenue column is relative to the best mean revenue within
/// this call.
pub fn efficiency_table(
    mechanisms: &[&Mechanism],
    scenario: Scenario,
    n_clients: usize,
    budget: f64,
    rounds: usize,
    seeds: &[u64],
) -> Result<Vec<EfficiencyRow>> {
    if mechanisms.is_empty() {
        return Err(Error::invalid("need at least one mechanism"));
    }
    if rounds == 0 || seeds.is_empty() {
        return Err(Error::invalid("need at least one round and one seed"));
    }
    for mech in mechanisms {
        if let Mechanism::Learned(params) = mech {
            if params.n_clients_trained != n_clients {
                return Err(Error::dim(format!(
                    "learned mechanism trained for {} clients, table wants {}",
                    params.n_clients_trained, n_clients
                )));
            }
        }
    }

    let mut rows = Vec::with_capacity(mechanisms.len());
    let mut revenue_means = Vec::with_capacity(mechanisms.len());
    let mut collected: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(mechanisms.len());

    for mech in mechanisms {
        let mut revenues = Vec::with_capacity(rounds * seeds.len());
        let mut ratios = Vec::with_capacity(rounds * seeds.len());
        let mut welfare = Vec::with_capacity(rounds * seeds.len());
        for &seed in seeds {
            for round in 0..rounds {
                let types =
                    sample_types(scenario, n_clients, derive_seed(seed, &[32, round as u64]));
                let outcome = mech.run(&types, budget)?;
                let report = social_welfare(
                    &outcome,
                    &types.iter().map(|t| t.valuation).collect::<Vec<_>>(),
                    budget,
                )?;
                revenues.push(report.revenue);
                ratios.push(report.budget_ratio);
                welfare.push(report.social_welfare / budget);
            }
        }
        revenue_means.push(mean_of(&revenues));
        collected.push((revenues, ratios, welfare));
    }

    let best_revenue = revenue_means.iter().cloned().fold(0.0f64, f64::max);
    for (mech, ((revenues, ratios, welfare), &rev_mean)) in mechanisms
        .iter()
        .zip(collected.iter().zip(revenue_means.iter()))
    {
        rows.push(EfficiencyRow {
            mechanism: mech.name().to_string(),
            revenue_mean: rev_mean,
            revenue_std: std_of(revenues, rev_mean),
            budget_feasibility_mean: mean_of(ratios),
            budget_feasibility_max: ratios.iter().cloned().fold(0.0, f64::max),
            normalized_revenue: if best_revenue > 0.0 {
                rev_mean / best_revenue
            } else {
                0.0
            },
            welfare_ratio_mean: mean_of(welfare),
            welfare_ratio_std: std_of(welfare, mean_of(welfare)),
        });
    }
    Ok(rows)
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_of(xs: &[f64], mean: f64) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
    }
}

/// Efficiency table as CSV.
pub fn efficiency_csv(rows: &[EfficiencyRow]) -> String {
    let mut out = String::from(
        "mechanism,revenue_mean,revenue_std,bf_mean,bf_max,n_rev,w_prime_mean,w_prime_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.mechanism,
            r.revenue_mean,
            r.revenue_std,
            r.budget_feasibility_mean,
            r.budget_feasibility_max,
            r.normalized_revenue,
            r.welfare_ratio_mean,
            r.welfare_ratio_std
        ));
    }
    out
}

/// Efficiency table as GitHub-flavored markdown.
pub fn efficiency_markdown(rows: &[EfficiencyRow]) -> String {
    let mut out = String::from("| mechanism | R (mean±std) | BF | n_rev | W' |\n|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.4} ± {:.4} | {:.4} | {:.4} | {:.4} ± {:.4} |\n",
            r.mechanism,
            r.revenue_mean,
            r.revenue_std,
            r.budget_feasibility_mean,
            r.normalized_revenue,
            r.welfare_ratio_mean,
            r.welfare_ratio_std
        ));
    }
    out
}

// ===== Runtime scaling =====

/// Wall-time scaling of a mechanism across population sizes.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    /// Mechanism label.
    pub mechanism: String,
    /// Population sizes, strictly increasing.
    pub sizes: Vec<usize>,
    /// Median per-call wall time (seconds) at each size.
    pub wall_times: Vec<f64>,
    /// Least-squares slope of `ln(time)` on `ln(N)`.
    pub slope: f64,
    /// Peak resident set size of the process (kB) after the run, if the
    /// platform exposes it. Reported for context; no claims attach to it.
    pub peak_rss_kb: Option<u64>,
}

/// Times mechanism execution across sizes and fits a log-log slope per
/// mechanism kind.
///
/// Classical mechanisms are timed end to end on fresh populations; the
/// learned mechanism is instantiated (untrained) at each size and its
/// forward pass timed, since latency depends only on shape. Each
/// measurement batches enough calls to exceed ~2 ms and the median of
/// `reps` measurements is kept.
pub fn scaling_benchmark(
    kinds: &[MechanismKind],
    sizes: &[usize],
    reps: usize,
    budget: f64,
    seed: u64,
) -> Result<Vec<ScalingReport>> {
    if sizes.len() < 2 {
        return Err(Error::invalid("need at least two sizes"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sizes must be strictly increasing"));
    }
    if reps == 0 {
        return Err(Error::invalid("reps must be >= 1"));
    }

    let mut reports = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut medians = Vec::with_capacity(sizes.len());
        for (si, &n) in sizes.iter().enumerate() {
            let types = sample_types(
                Scenario::Uniform,
                n,
                derive_seed(seed, &[33, si as u64]),
            );
            let time = match kind {
                MechanismKind::Learned => {
                    let params =
                        MechanismParams::new(n, 1, derive_seed(seed, &[34, si as u64]))?;
                    let profile = BidProfile::from_types(&types)?;
                    time_median(reps, || {
                        crate::mechanism::mechanism_forward(&params, &profile, budget).map(|_| ())
                    })?
                }
                other => {
                    let mech = other.instantiate(n, 1, 0)?;
                    time_median(reps, || mech.run(&types, budget).map(|_| ()))?
                }
            };
            medians.push(time);
        }
        let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
        let slope = log_log_slope(&xs, &medians)?;
        reports.push(ScalingReport {
            mechanism: kind.name().to_string(),
            sizes: sizes.to_vec(),
            wall_times: medians,
            slope,
            peak_rss_kb: peak_rss_kb(),
        });
    }
    Ok(reports)
}

/// Runs `f` in timed batches sized to exceed ~2 ms each, `reps` times, and
/// returns the median per-call seconds.
fn time_median<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<f64> {
    // Warm up and estimate a single-call duration.
    let start = Instant::now();
    f()?;
    let single = start.elapsed().as_secs_f64().max(1e-9);
    let batch = ((2e-3 / single).ceil() as usize).clamp(1, 100_000);

    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..batch {
            f()?;
        }
        samples.push(start.elapsed().as_secs_f64() / batch as f64);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("slope fit needs >= 2 matching points"));
    }
    if xs.iter().chain(ys.iter()).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("slope fit needs strictly positive data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = mean_of(&lx);
    let my = mean_of(&ly);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(ly.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::invalid("slope fit needs at least two distinct x values"));
    }
    Ok(num / den)
}

/// Peak resident set size in kB from `/proc/self/status` (Linux).
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            return rest
                .trim()
                .trim_end_matches("kB")
                .trim()
                .parse::<u64>()
                .ok();
        }
    }
    None
}

/// Scaling reports as CSV, one row per (mechanism, size).
pub fn scaling_csv(reports: &[ScalingReport]) -> String {
    let mut out = String::from("mechanism,n,median_seconds,slope,peak_rss_kb\n");
    for r in reports {
        for (n, t) in r.sizes.iter().zip(r.wall_times.iter()) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.mechanism,
                n,
                t,
                r.slope,
                r.peak_rss_kb.map(|k| k.to_string()).unwrap_or_default()
            ));
        }
    }
    out
}

// ===== Approximation error vs population size =====

/// Mean raw regret of a freshly trained mechanism as a function of N.
#[derive(Debug, Clone)]
pub struct ApproxErrorSeries {
    /// Population sizes, strictly increasing.
    pub sizes: Vec<usize>,
    /// Mean raw regret (over seeds) at each size, nonnegative.
    pub eps_hat: Vec<f64>,
    /// Least-squares slope of `ln(eps_hat)` on `ln(N)`.
    pub slope: f64,
    /// Spearman rank correlation between N and eps_hat.
    pub spearman: f64,
}

/// Trains (via `pipeline`) and measures mean raw regret per population size,
/// averaged over seeds, and fits the log-log decay slope.
///
/// `pipeline(n, seed)` must return the mean raw per-client regret of a
/// mechanism trained at size `n` with the given seed.
pub fn approximation_error_vs_n<F>(
    pipeline: F,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<ApproxErrorSeries>
where
    F: Fn(usize, u64) -> Result<f64>,
{
    if sizes.len() < 2 {
        return Err(Error::invalid("need at least two sizes"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sizes must be strictly increasing"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    let mut eps_hat = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut total = 0.0;
        for &seed in seeds {
            total += pipeline(n, seed)?.max(0.0);
        }
        eps_hat.push((total / seeds.len() as f64).max(0.0));
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let safe: Vec<f64> = eps_hat.iter().map(|&e| e.max(1e-12)).collect();
    let slope = log_log_slope(&xs, &safe)?;
    let spearman = spearman_correlation(&xs, &eps_hat)?;
    Ok(ApproxErrorSeries {
        sizes: sizes.to_vec(),
        eps_hat,
        slope,
        spearman,
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("correlation needs >= 2 matching points"));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = mean_of(&rx);
    let my = mean_of(&ry);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (x, y) in rx.iter().zip(ry.iter()) {
        num += (x - mx) * (y - my);
        dx += (x - mx) * (x - mx);
        dy += (y - my) * (y - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return Err(Error::invalid("correlation undefined for constant data"));
    }
    Ok(num / (dx * dy).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Approximation series as CSV.
pub fn approx_series_csv(series: &ApproxErrorSeries) -> String {
    let mut out = String::from("n,eps_hat,slope,spearman\n");
    for (n, e) in series.sizes.iter().zip(series.eps_hat.iter()) {
        out.push_str(&format!("{},{},{},{}\n", n, e, series.slope, series.spearman));
    }
    out
}

/// Default train-and-measure pipeline for the approximation series: trains a
/// mechanism at size `n` from `base` (with `n_clients` and `seed`
/// overridden), then reports the mean raw regret over `eval_samples` fresh
/// populations.
pub fn train_and_measure_regret(
    base: &TrainConfig,
    scenario: Scenario,
    n: usize,
    seed: u64,
    eval_samples: usize,
) -> Result<f64> {
    let mut cfg = base.clone();
    cfg.n_clients = n;
    cfg.seed = seed;
    let trained = train(&cfg, scenario)?;
    mean_raw_regret(&trained.params, scenario, &cfg, eval_samples)
}

/// Mean raw per-client regret of a mechanism over fresh populations.
pub fn mean_raw_regret(
    params: &MechanismParams,
    scenario: Scenario,
    config: &TrainConfig,
    eval_samples: usize,
) -> Result<f64> {
    if eval_samples == 0 {
        return Err(Error::invalid("eval_samples must be >= 1"));
    }
    let n = params.n_clients_trained;
    let mut total = 0.0;
    for s in 0..eval_samples {
        let types = sample_types(scenario, n, derive_seed(config.seed, &[35, s as u64]));
        let profile = BidProfile::from_types(&types)?;
        let mut cfg = config.clone();
        cfg.n_clients = n;
        cfg.seed = derive_seed(config.seed, &[36, s as u64]);
        for i in 0..n {
            let (gain, _) = pga_regret(params, &profile, budget_of(config), i, &cfg)?;
            total += gain.max(0.0);
        }
    }
    Ok(total / (eval_samples * n) as f64)
}

fn budget_of(config: &TrainConfig) -> f64 {
    config.budget
}

/// Convenience: truthful payments vector of a mechanism on a profile-shaped
/// population, used by examples and the efficiency drivers.
pub fn truthful_payments(
    mechanism: &Mechanism,
    types: &[crate::market::ClientType],
    budget: f64,
) -> Result<Array1<f64>> {
    Ok(mechanism.run(types, budget)?.payments)
}
