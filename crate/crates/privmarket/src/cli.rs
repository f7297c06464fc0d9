//! Batch experiment runner.
//!
//! Subcommands: `train`, `rq1` (regret distributions), `rq2` (runtime
//! scaling), `rq3` (efficiency table), `rq4` (federated privacy/utility),
//! `verify` (the acceptance suite), and `inspect-checkpoint`.
//!
//! Configuration is a flat `key=value` file whose keys are mirrored
//! one-to-one by command-line flags; precedence is defaults < file <
//! `PRIVMARKET_SEED` < flags. Every artifact starts with a comment header
//! embedding the fully resolved configuration. Exit codes: 0 success,
//! 1 usage error, 2 runtime error, 3 verification failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acceptance::{self, CRITERIA};
use crate::auction::Mechanism;
use crate::diffnet::checkpoint_hash;
use crate::error::{Error, Result};
use crate::eval::{
    efficiency_csv, efficiency_markdown, efficiency_table, evaluate_regret, regret_report_csv,
    scaling_benchmark, scaling_csv,
};
use crate::fl::{make_task, round_records_csv, run_fl, DpConfig, FlOptions};
use crate::market::Scenario;
use crate::mechanism::{load_mechanism, render_mechanism, MechanismParams};
use crate::trainer::{train, training_log_csv, TrainConfig};

/// Environment variable overriding the config-file seed (flags still win).
pub const ENV_SEED: &str = "PRIVMARKET_SEED";

/// Exit code for usage errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for runtime failures.
pub const EXIT_RUNTIME: i32 = 2;
/// Exit code when the verification suite reports failures.
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Parser)]
#[command(
    name = "privmarket",
    version,
    about = "Privacy-budget auction and federated-learning market simulator",
    disable_help_subcommand = true
)]
struct CliRoot {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a mechanism and write a checkpoint plus a per-iteration log.
    Train(TrainCmd),
    /// Regret distributions per mechanism.
    Rq1(Rq1Cmd),
    /// Wall-time scaling across population sizes.
    Rq2(Rq2Cmd),
    /// Revenue / feasibility / welfare comparison table.
    Rq3(Rq3Cmd),
    /// Auction-gated federated learning: accuracy under privacy noise.
    Rq4(Rq4Cmd),
    /// Run the acceptance criteria and report pass/fail per criterion.
    Verify(VerifyCmd),
    /// Print the metadata and shape of a saved checkpoint.
    InspectCheckpoint(InspectCmd),
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
struct SharedArgs {
    /// Flat key=value config file (keys are the training-config keys plus
    /// `scenario`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output artifacts (created if missing).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Scenario: uniform | bimodal | realistic.
    #[arg(long)]
    scenario: Option<String>,
    /// Worker cap; accepted for interface stability, execution is sequential.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// One optional flag per training-config key (long names mirror the file
/// keys exactly).
#[derive(Args, Clone, Default)]
struct ConfigFlags {
    #[arg(long = "outer_iters")]
    outer_iters: Option<usize>,
    #[arg(long = "inner_steps")]
    inner_steps: Option<usize>,
    #[arg(long = "batch_size")]
    batch_size: Option<usize>,
    #[arg(long = "pga_steps")]
    pga_steps: Option<usize>,
    #[arg(long = "pga_step_size")]
    pga_step_size: Option<f64>,
    #[arg(long = "learning_rate")]
    learning_rate: Option<f64>,
    #[arg(long = "ir_penalty")]
    ir_penalty: Option<f64>,
    #[arg(long = "rho0")]
    rho0: Option<f64>,
    #[arg(long = "rho_growth")]
    rho_growth: Option<f64>,
    #[arg(long = "rho_max")]
    rho_max: Option<f64>,
    #[arg(long = "zeta")]
    zeta: Option<f64>,
    #[arg(long = "lambda_mfg_start")]
    lambda_mfg_start: Option<f64>,
    #[arg(long = "lambda_mfg_end")]
    lambda_mfg_end: Option<f64>,
    #[arg(long = "lambda_hjb")]
    lambda_hjb: Option<f64>,
    #[arg(long = "mc_opponents")]
    mc_opponents: Option<usize>,
    #[arg(long = "huber_delta")]
    huber_delta: Option<f64>,
    #[arg(long = "moment_weight")]
    moment_weight: Option<f64>,
    #[arg(long = "weight_exponent")]
    weight_exponent: Option<f64>,
    #[arg(long = "discount")]
    discount: Option<f64>,
    #[arg(long = "budget")]
    budget: Option<f64>,
    #[arg(long = "seed")]
    seed: Option<u64>,
    #[arg(long = "n_clients")]
    n_clients: Option<usize>,
    #[arg(long = "n_items")]
    n_items: Option<usize>,
    #[arg(long = "use_mean_field")]
    use_mean_field: Option<bool>,
    #[arg(long = "mfg_update_in_pga")]
    mfg_update_in_pga: Option<bool>,
    #[arg(long = "critic_batch")]
    critic_batch: Option<usize>,
}

impl ConfigFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            outer_iters,
            inner_steps,
            batch_size,
            pga_steps,
            pga_step_size,
            learning_rate,
            ir_penalty,
            rho0,
            rho_growth,
            rho_max,
            zeta,
            lambda_mfg_start,
            lambda_mfg_end,
            lambda_hjb,
            mc_opponents,
            huber_delta,
            moment_weight,
            weight_exponent,
            discount,
            budget,
            seed,
            n_clients,
            n_items,
            use_mean_field,
            mfg_update_in_pga,
            critic_batch
        );
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct Rq1Cmd {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Comma-separated mechanisms (pac | vcg | learned | fixed:<eps>).
    #[arg(long, default_value = "pac,vcg,learned")]
    mechanisms: String,
    /// Populations sampled per mechanism.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Checkpoint file for the learned mechanism.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train the learned mechanism in-process when the checkpoint is absent.
    #[arg(long, default_value_t = false)]
    train_inline: bool,
}

#[derive(Args)]
struct Rq2Cmd {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Comma-separated mechanisms to time (pac | vcg | learned).
    #[arg(long, default_value = "pac,learned")]
    mechanisms: String,
    /// Comma-separated population sizes.
    #[arg(long, default_value = "10,50,100,200,500")]
    sizes: String,
    /// Timing repetitions per size (median kept).
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

#[derive(Args)]
struct Rq3Cmd {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Comma-separated mechanisms (pac | vcg | learned | fixed:<eps>).
    #[arg(long, default_value = "pac,vcg,learned")]
    mechanisms: String,
    /// Auction rounds per seed.
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    /// Comma-separated evaluation seeds.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Checkpoint file for the learned mechanism.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train the learned mechanism in-process when the checkpoint is absent.
    #[arg(long, default_value_t = false)]
    train_inline: bool,
}

#[derive(Args)]
struct Rq4Cmd {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Gating mechanism (pac | vcg | learned | fixed:<eps>).
    #[arg(long, default_value = "pac")]
    mechanism: String,
    /// Federated rounds.
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    /// Additional fixed-exposure sweeps, comma-separated epsilon levels.
    #[arg(long, default_value = "5,0.5")]
    fixed_eps: String,
    /// Include a noise-free all-clients ablation run.
    #[arg(long, action = clap::ArgAction::Set, default_value_t = true)]
    no_dp_baseline: bool,
    /// Dirichlet concentration of client class skew.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Local epochs per round.
    #[arg(long, default_value_t = 5)]
    fl_epochs: usize,
    /// Local minibatch size.
    #[arg(long, default_value_t = 32)]
    fl_batch: usize,
    /// Local learning rate.
    #[arg(long, default_value_t = 0.1)]
    fl_lr: f64,
    /// Checkpoint file for the learned mechanism.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train the learned mechanism in-process when the checkpoint is absent.
    #[arg(long, default_value_t = false)]
    train_inline: bool,
}

#[derive(Args)]
struct VerifyCmd {
    #[command(flatten)]
    shared: SharedArgs,
    /// Print the criteria without running them.
    #[arg(long, default_value_t = false)]
    list: bool,
    /// Comma-separated criterion ids to run (default: all).
    #[arg(long)]
    only: Option<String>,
}

#[derive(Args)]
struct InspectCmd {
    /// Checkpoint file to describe.
    path: PathBuf,
}

// ===== Entry point =====

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match CliRoot::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Train(cmd) => cmd_train(&cmd),
        Command::Rq1(cmd) => cmd_rq1(&cmd),
        Command::Rq2(cmd) => cmd_rq2(&cmd),
        Command::Rq3(cmd) => cmd_rq3(&cmd),
        Command::Rq4(cmd) => cmd_rq4(&cmd),
        Command::Verify(cmd) => cmd_verify(&cmd),
        Command::InspectCheckpoint(cmd) => cmd_inspect(&cmd),
    };
    match outcome {
        Ok(code) => code,
        Err(Error::InvalidArgument(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

// ===== Configuration resolution =====

struct Resolved {
    config: TrainConfig,
    scenario: Scenario,
    out_dir: PathBuf,
}

/// defaults < config file < PRIVMARKET_SEED < flags.
fn resolve(shared: &SharedArgs, flags: &ConfigFlags) -> Result<Resolved> {
    let mut config = TrainConfig::default();
    let mut scenario_str: Option<String> = None;

    if let Some(path) = &shared.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: format!("line {}: expected key=value, got '{line}'", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "scenario" {
                scenario_str = Some(value.to_string());
            } else {
                config.apply_key_value(key, value)?;
            }
        }
    }

    if let Ok(env_seed) = std::env::var(ENV_SEED) {
        config.seed = env_seed
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::invalid(format!("bad {ENV_SEED} value '{env_seed}': {e}")))?;
    }

    flags.apply(&mut config);
    if let Some(s) = &shared.scenario {
        scenario_str = Some(s.clone());
    }
    let scenario = match scenario_str {
        Some(s) => s.parse::<Scenario>()?,
        None => Scenario::Uniform,
    };
    config.validate()?;
    if shared.jobs == 0 {
        return Err(Error::invalid("--jobs must be >= 1"));
    }
    Ok(Resolved {
        config,
        scenario,
        out_dir: shared.out_dir.clone(),
    })
}

/// Comment header embedded at the top of every artifact: version plus the
/// fully resolved configuration.
fn artifact_header(resolved: &Resolved, extra: &[(String, String)]) -> String {
    let mut out = format!("# privmarket v{}\n", env!("CARGO_PKG_VERSION"));
    out.push_str(&format!("# scenario={}\n", resolved.scenario));
    for (k, v) in resolved.config.to_key_values() {
        out.push_str(&format!("# {k}={v}\n"));
    }
    for (k, v) in extra {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out
}

fn write_artifact(dir: &Path, name: &str, header: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, format!("{header}{body}"))?;
    Ok(path)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| Error::invalid(format!("bad {what} entry '{s}': {e}")))
        })
        .collect()
}

/// Parses a mechanism label; `fixed:<eps>` gives the flat-exposure baseline.
fn parse_mechanism_label(
    label: &str,
    resolved: &Resolved,
    checkpoint: Option<&PathBuf>,
    train_inline: bool,
    out_dir: &Path,
) -> Result<Mechanism> {
    let label = label.trim();
    if let Some(eps) = label.strip_prefix("fixed:") {
        let eps: f64 = eps
            .parse()
            .map_err(|e| Error::invalid(format!("bad fixed exposure '{eps}': {e}")))?;
        if !(eps > 0.0) {
            return Err(Error::invalid("fixed exposure must be positive"));
        }
        return Ok(Mechanism::FixedEpsilon(eps));
    }
    match label {
        "pac" => Ok(Mechanism::Pac),
        "vcg" => Ok(Mechanism::Vcg),
        "learned" | "mfgregretnet" => {
            let params = obtain_learned(resolved, checkpoint, train_inline, out_dir)?;
            Ok(Mechanism::Learned(params))
        }
        other => Err(Error::invalid(format!(
            "unknown mechanism '{other}' (expected pac | vcg | learned | fixed:<eps>)"
        ))),
    }
}

/// Loads the learned mechanism from its checkpoint, or trains one in-process
/// under `--train-inline` (the fresh checkpoint is saved for reuse).
fn obtain_learned(
    resolved: &Resolved,
    checkpoint: Option<&PathBuf>,
    train_inline: bool,
    out_dir: &Path,
) -> Result<MechanismParams> {
    let path = checkpoint
        .cloned()
        .unwrap_or_else(|| out_dir.join("checkpoint.txt"));
    if path.exists() {
        let (params, _manifest) = load_mechanism(&path)?;
        if params.n_clients_trained != resolved.config.n_clients {
            return Err(Error::invalid(format!(
                "checkpoint {} was trained for {} clients but the config says {}",
                path.display(),
                params.n_clients_trained,
                resolved.config.n_clients
            )));
        }
        return Ok(params);
    }
    if !train_inline {
        return Err(Error::invalid(format!(
            "no checkpoint at {} (train first, point --checkpoint at one, or pass --train-inline)",
            path.display()
        )));
    }
    let output = train(&resolved.config, resolved.scenario)?;
    persist_checkpoint(resolved, &output.params, &path)?;
    Ok(output.params)
}

fn persist_checkpoint(
    resolved: &Resolved,
    params: &MechanismParams,
    path: &Path,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut manifest = resolved.config.to_key_values();
    manifest.push(("scenario".into(), resolved.scenario.to_string()));
    manifest.push(("version".into(), env!("CARGO_PKG_VERSION").into()));
    let text = render_mechanism(params, &manifest);
    fs::write(path, &text)?;
    Ok(())
}

// ===== Subcommands =====

fn cmd_train(cmd: &TrainCmd) -> Result<i32> {
    let resolved = resolve(&cmd.shared, &cmd.flags)?;
    let output = train(&resolved.config, resolved.scenario)?;

    let ckpt_path = resolved.out_dir.join("checkpoint.txt");
    persist_checkpoint(&resolved, &output.params, &ckpt_path)?;
    let hash = checkpoint_hash(&fs::read_to_string(&ckpt_path)?);

    let header = artifact_header(&resolved, &[]);
    let log_path = write_artifact(
        &resolved.out_dir,
        "training_log.csv",
        &header,
        &training_log_csv(&output.log),
    )?;

    let last = output.log.last();
    println!(
        "trained {} iterations; final mean regret {:.6}, revenue {:.4}",
        output.log.len(),
        last.map(|r| r.mean_regret).unwrap_or(f64::NAN),
        last.map(|r| r.revenue).unwrap_or(f64::NAN),
    );
    println!("checkpoint: {} (hash {hash:016x})", ckpt_path.display());
    println!("training log: {}", log_path.display());
    Ok(0)
}

fn cmd_rq1(cmd: &Rq1Cmd) -> Result<i32> {
    let resolved = resolve(&cmd.shared, &cmd.flags)?;
    let labels: Vec<String> = parse_list(&cmd.mechanisms, "mechanism")?;
    if cmd.samples == 0 {
        return Err(Error::invalid("--samples must be >= 1"));
    }
    for label in &labels {
        let mechanism = parse_mechanism_label(
            label,
            &resolved,
            cmd.checkpoint.as_ref(),
            cmd.train_inline,
            &resolved.out_dir,
        )?;
        let report = evaluate_regret(&mechanism, resolved.scenario, cmd.samples, &resolved.config)?;
        let header = artifact_header(
            &resolved,
            &[
                ("mechanism".into(), mechanism.name().into()),
                ("samples".into(), cmd.samples.to_string()),
            ],
        );
        let path = write_artifact(
            &resolved.out_dir,
            &format!("rq1_regret_{}.csv", mechanism.name()),
            &header,
            &regret_report_csv(&report),
        )?;
        println!(
            "{}: mean normalized regret {:.6}, IR violation rate {:.4} -> {}",
            mechanism.name(),
            report.mean,
            report.ir_violation_rate,
            path.display()
        );
    }
    Ok(0)
}

fn cmd_rq2(cmd: &Rq2Cmd) -> Result<i32> {
    let resolved = resolve(&cmd.shared, &cmd.flags)?;
    let kinds: Vec<crate::auction::MechanismKind> = parse_list(&cmd.mechanisms, "mechanism")?;
    let sizes: Vec<usize> = parse_list(&cmd.sizes, "size")?;
    let reports = scaling_benchmark(
        &kinds,
        &sizes,
        cmd.reps,
        resolved.config.budget,
        resolved.config.seed,
    )?;
    let header = artifact_header(
        &resolved,
        &[
            ("sizes".into(), cmd.sizes.clone()),
            ("reps".into(), cmd.reps.to_string()),
        ],
    );
    let path = write_artifact(
        &resolved.out_dir,
        "rq2_scaling.csv",
        &header,
        &scaling_csv(&reports),
    )?;
    for r in &reports {
        println!("{}: log-log slope {:.3}", r.mechanism, r.slope);
    }
    println!("scaling series: {}", path.display());
    Ok(0)
}

fn cmd_rq3(cmd: &Rq3Cmd) -> Result<i32> {
    let resolved = resolve(&cmd.shared, &cmd.flags)?;
    let labels: Vec<String> = parse_list(&cmd.mechanisms, "mechanism")?;
    let seeds: Vec<u64> = parse_list(&cmd.seeds, "seed")?;
    let mechanisms: Vec<Mechanism> = labels
        .iter()
        .map(|label| {
            parse_mechanism_label(
                label,
                &resolved,
                cmd.checkpoint.as_ref(),
                cmd.train_inline,
                &resolved.out_dir,
            )
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Mechanism> = mechanisms.iter().collect();
    let rows = efficiency_table(
        &refs,
        resolved.scenario,
        resolved.config.n_clients,
        resolved.config.budget,
        cmd.rounds,
        &seeds,
    )?;
    let header = artifact_header(
        &resolved,
        &[
            ("rounds".into(), cmd.rounds.to_string()),
            ("seeds".into(), cmd.seeds.clone()),
        ],
    );
    let csv_path = write_artifact(
        &resolved.out_dir,
        "rq3_efficiency.csv",
        &header,
        &efficiency_csv(&rows),
    )?;
    let md_path = write_artifact(
        &resolved.out_dir,
        "rq3_efficiency.md",
        &header,
        &efficiency_markdown(&rows),
    )?;
    print!("{}", efficiency_markdown(&rows));
    println!("efficiency table: {} and {}", csv_path.display(), md_path.display());
    Ok(0)
}

fn cmd_rq4(cmd: &Rq4Cmd) -> Result<i32> {
    let resolved = resolve(&cmd.shared, &cmd.flags)?;
    let n = resolved.config.n_clients;
    let task = make_task(n, cmd.alpha, resolved.config.seed)?;
    let dp = DpConfig::for_clients(n);
    let options = FlOptions {
        scenario: resolved.scenario,
        epochs: cmd.fl_epochs,
        batch_size: cmd.fl_batch,
        learning_rate: cmd.fl_lr,
        force_no_noise: false,
    };

    let mut runs: Vec<(String, Mechanism, FlOptions)> = Vec::new();
    let main_mech = parse_mechanism_label(
        &cmd.mechanism,
        &resolved,
        cmd.checkpoint.as_ref(),
        cmd.train_inline,
        &resolved.out_dir,
    )?;
    runs.push((main_mech.name().to_string(), main_mech.clone(), options.clone()));
    for eps in parse_list::<f64>(&cmd.fixed_eps, "fixed exposure")? {
        runs.push((
            format!("fixed_eps_{eps}"),
            Mechanism::FixedEpsilon(eps),
            options.clone(),
        ));
    }
    if cmd.no_dp_baseline {
        let no_dp = FlOptions {
            force_no_noise: true,
            ..options.clone()
        };
        runs.push(("no_dp".into(), main_mech, no_dp));
    }

    let mut summary = String::from("label,final_accuracy,cum_eps_max\n");
    for (label, mechanism, opts) in &runs {
        let outcome = run_fl(
            mechanism,
            &task,
            cmd.rounds,
            &dp,
            opts,
            resolved.config.budget,
            resolved.config.seed,
        )?;
        let header = artifact_header(
            &resolved,
            &[
                ("run".into(), label.clone()),
                ("rounds".into(), cmd.rounds.to_string()),
                ("dirichlet_alpha".into(), cmd.alpha.to_string()),
            ],
        );
        let path = write_artifact(
            &resolved.out_dir,
            &format!("rq4_rounds_{label}.csv"),
            &header,
            &round_records_csv(&outcome.records),
        )?;
        let cum_max = outcome
            .cumulative_epsilon
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        summary.push_str(&format!("{label},{},{}\n", outcome.final_accuracy, cum_max));
        println!(
            "{label}: final accuracy {:.4}, max cumulative exposure {:.3} -> {}",
            outcome.final_accuracy,
            cum_max,
            path.display()
        );
    }
    let header = artifact_header(&resolved, &[("rounds".into(), cmd.rounds.to_string())]);
    let path = write_artifact(&resolved.out_dir, "rq4_summary.csv", &header, &summary)?;
    println!("summary: {}", path.display());
    Ok(0)
}

fn cmd_verify(cmd: &VerifyCmd) -> Result<i32> {
    if cmd.list {
        for (id, name) in CRITERIA.iter() {
            println!("{id:>2}  {name}");
        }
        return Ok(0);
    }
    let ids: Vec<usize> = match &cmd.only {
        Some(raw) => {
            let ids: Vec<usize> = parse_list(raw, "criterion id")?;
            for &id in &ids {
                if !(1..=CRITERIA.len()).contains(&id) {
                    return Err(Error::invalid(format!(
                        "criterion id {id} out of range 1..={}",
                        CRITERIA.len()
                    )));
                }
            }
            ids
        }
        None => (1..=CRITERIA.len()).collect(),
    };
    let report = acceptance::run_selected(&ids, &mut |r| println!("{}", r.line()));
    fs::create_dir_all(&cmd.shared.out_dir)?;
    let path = cmd.shared.out_dir.join("acceptance_report.txt");
    fs::write(&path, report.render())?;
    println!("report: {}", path.display());
    if report.all_passed() {
        Ok(0)
    } else {
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn cmd_inspect(cmd: &InspectCmd) -> Result<i32> {
    let text = fs::read_to_string(&cmd.path).map_err(|e| Error::Parse {
        path: cmd.path.display().to_string(),
        message: e.to_string(),
    })?;
    let (params, manifest) = crate::mechanism::parse_mechanism(&text).map_err(|e| match e {
        Error::InvalidArgument(message) => Error::Parse {
            path: cmd.path.display().to_string(),
            message,
        },
        other => other,
    })?;
    println!("checkpoint: {}", cmd.path.display());
    println!("hash: {:016x}", checkpoint_hash(&text));
    println!(
        "market shape: {} clients x {} items",
        params.n_clients_trained, params.n_items
    );
    println!("parameters: {}", params.param_count());
    for (name, net) in [
        ("header", &params.header),
        ("alloc_head", &params.alloc_head),
        ("pay_head", &params.pay_head),
        ("critic", &params.critic),
    ] {
        println!(
            "  {name}: dims {:?}, activation {}",
            net.layer_dims,
            net.output_activation.as_str()
        );
    }
    if !manifest.is_empty() {
        println!("manifest:");
        for (k, v) in manifest {
            println!("  {k}={v}");
        }
    }
    Ok(0)
}
