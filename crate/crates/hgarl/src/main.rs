//! Command-line front end: run experiments, compare group against
//! single training, sweep the Combo threshold.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hgarl::harness::emit::{emit_all, read_run_dir};
use hgarl::harness::metrics::compute_speedup;
use hgarl::harness::sweep::phi_sweep;
use hgarl::harness::{self, ConfigError, HarnessError, RunConfig, RunOutput};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_SEEDS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hgarl",
    about = "Group-agent reinforcement learning: heterogeneous actor-critic agents sharing models and scores",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a group (or single agents) and write metrics to a directory.
    Run(RunArgs),
    /// Compare a group run against a single-agent run: speed-up = T / T_G.
    Speedup(SpeedupArgs),
    /// Narrow an interval of Combo thresholds by short runs.
    Phisweep(PhisweepArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file with `key = value` lines; CLI flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: cartpole or gridworld.
    #[arg(long)]
    env: Option<String>,
    /// Episode cap for cartpole.
    #[arg(long)]
    cartpole_max_steps: Option<u32>,
    /// Side length of the square grid world.
    #[arg(long)]
    gridworld_size: Option<usize>,
    /// Grid world layout file (# wall, S start, G goal, . floor).
    #[arg(long)]
    gridworld_map: Option<PathBuf>,
    /// Episode cap for the grid world.
    #[arg(long)]
    gridworld_max_steps: Option<u32>,
    /// Comma-separated roster, e.g. a2c,ppo,acer.
    #[arg(long)]
    agents: Option<String>,
    /// Selection rule: single, pa, pm or combo.
    #[arg(long)]
    rule: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Per-agent time-step budget.
    #[arg(long)]
    steps: Option<u64>,
    /// "episode" or an update count.
    #[arg(long)]
    exchange_interval: Option<String>,
    /// Combo threshold as a fraction of ln(action count).
    #[arg(long)]
    phi_fraction: Option<f64>,
    /// Absolute Combo threshold, overriding the fraction.
    #[arg(long)]
    phi: Option<f64>,
    /// Standardize PPO advantages per batch.
    #[arg(long)]
    ppo_adv_norm: Option<bool>,
    /// Optimizer for every agent: sgd or adam.
    #[arg(long)]
    optimizer: Option<String>,
    /// Single-thread round-robin interleave: bit-reproducible outputs.
    #[arg(long)]
    deterministic: bool,
    /// Trailing-episode window for smoothed curves.
    #[arg(long)]
    smoothing_window: Option<usize>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpeedupArgs {
    /// Directory of the group run.
    #[arg(long)]
    group: PathBuf,
    /// Directory of the single-agent run.
    #[arg(long)]
    single: PathBuf,
    /// Satisfactory-performance floor; defaults to 20% of the best
    /// single-agent smoothed peak.
    #[arg(long)]
    threshold: Option<f64>,
    /// Smoothing window for the curves.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Write the report here as JSON (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhisweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Lower end of the phi interval.
    #[arg(long)]
    low: f64,
    /// Upper end of the phi interval.
    #[arg(long)]
    high: f64,
    /// Narrowing rounds (3 evaluations for the first, 1 more per round).
    #[arg(long, default_value_t = 3)]
    rounds: u32,
}

fn build_config(args: &RunArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::example();
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::Other(format!("cannot read config {}: {e}", path.display()))
        })?;
        pairs.extend(harness::config::parse_config_text(&text)?);
    }
    // CLI flags append after the file so they win.
    let mut cli_pairs: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| cli_pairs.push((k.to_string(), v));
    if let Some(v) = &args.env {
        push("env", v.clone());
    }
    if let Some(v) = &args.agents {
        push("agents", v.clone());
    }
    if let Some(v) = args.cartpole_max_steps {
        push("cartpole_max_steps", v.to_string());
    }
    if let Some(v) = args.gridworld_size {
        push("gridworld_size", v.to_string());
    }
    if let Some(v) = &args.gridworld_map {
        push("gridworld_map", v.display().to_string());
    }
    if let Some(v) = args.gridworld_max_steps {
        push("gridworld_max_steps", v.to_string());
    }
    if let Some(v) = &args.rule {
        push("rule", v.clone());
    }
    if let Some(v) = &args.seeds {
        push("seeds", v.clone());
    }
    if let Some(v) = args.steps {
        push("steps", v.to_string());
    }
    if let Some(v) = &args.exchange_interval {
        push("exchange_interval", v.clone());
    }
    if let Some(v) = args.phi_fraction {
        push("phi_fraction", v.to_string());
    }
    if let Some(v) = args.phi {
        push("phi", v.to_string());
    }
    if let Some(v) = args.ppo_adv_norm {
        push("ppo.ppo_adv_norm", v.to_string());
    }
    if let Some(v) = &args.optimizer {
        push("all.optimizer", v.clone());
    }
    if args.deterministic {
        push("deterministic", "true".to_string());
    }
    if let Some(v) = args.smoothing_window {
        push("smoothing_window", v.to_string());
    }

    // A CLI `agents` rebuilds the roster from defaults, so the file's
    // per-algorithm tuning keys replay after it.
    let roster_from_cli = cli_pairs.iter().any(|(k, _)| k == "agents");
    let file_learner_keys: Vec<(String, String)> = pairs
        .iter()
        .filter(|(k, _)| k.contains('.'))
        .cloned()
        .collect();
    for (k, v) in &pairs {
        harness::config::apply_key(&mut cfg, k, v)?;
    }
    for (k, v) in &cli_pairs {
        harness::config::apply_key(&mut cfg, k, v)?;
        if k == "agents" && roster_from_cli {
            for (fk, fv) in &file_learner_keys {
                harness::config::apply_key(&mut cfg, fk, fv)?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_to_exit(result: anyhow::Result<ExitCode>) -> ExitCode {
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some()
                || matches!(
                    err.downcast_ref::<HarnessError>(),
                    Some(HarnessError::Config(_)) | Some(HarnessError::Env(_))
                )
            {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn all_seeds_failed(cfg: &RunConfig, output: &RunOutput) -> bool {
    cfg.seeds
        .iter()
        .all(|seed| !output.records.iter().any(|r| r.seed == *seed))
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = build_config(&args)?;
    if args.dump_config {
        for line in cfg.dump_lines() {
            println!("{line}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let out_dir = args
        .out
        .clone()
        .ok_or_else(|| anyhow!(ConfigError::Other("--out is required for run".into())))?;
    let output = harness::run_experiment(&cfg)?;
    if all_seeds_failed(&cfg, &output) {
        eprintln!(
            "error: no seed produced a completed episode (numerical failures: {:?})",
            output.failures
        );
        return Ok(ExitCode::from(EXIT_ALL_SEEDS_FAILED));
    }
    emit_all(&out_dir, &cfg, &output).context("writing outputs")?;
    let total_failures: u64 = output.failures.values().sum();
    println!(
        "wrote {} episodes over {} seeds to {} ({} adoption events, {} aborted episodes)",
        output.records.len(),
        cfg.seeds.len(),
        out_dir.display(),
        output.adoption_events.len(),
        total_failures,
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_speedup(args: SpeedupArgs) -> anyhow::Result<ExitCode> {
    let (group_records, group_summary) = read_run_dir(&args.group)
        .with_context(|| format!("reading group run {}", args.group.display()))?;
    let (single_records, single_summary) = read_run_dir(&args.single)
        .with_context(|| format!("reading single run {}", args.single.display()))?;
    let env_of = |v: &serde_json::Value| v["env"].as_str().map(str::to_string);
    if env_of(&group_summary) != env_of(&single_summary) {
        return Err(anyhow!(ConfigError::Other(format!(
            "runs use different environments: {:?} vs {:?}",
            env_of(&group_summary),
            env_of(&single_summary)
        ))));
    }
    let report = compute_speedup(&group_records, &single_records, args.threshold, args.window)?;
    let value = json!({
        "satisfactory_threshold": report.satisfactory_threshold,
        "entries": report.entries.iter().map(|e| json!({
            "agent": e.agent.0,
            "algorithm": e.algorithm.to_string(),
            "target_value": e.target_value,
            "t_group": e.t_group,
            "t_single": e.t_single,
            "speedup": e.speedup.to_string(),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&value)? + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_phisweep(args: PhisweepArgs) -> anyhow::Result<ExitCode> {
    if !(args.low > 0.0) || args.high < args.low {
        return Err(anyhow!(ConfigError::Other(format!(
            "need 0 < low <= high, got low={} high={}",
            args.low, args.high
        ))));
    }
    if args.low == args.high {
        eprintln!("warning: low == high; evaluating a single threshold");
    }
    let cfg = build_config(&args.run)?;
    let outcome = phi_sweep(&cfg, args.low, args.high, args.rounds.max(1))?;
    let value = json!({
        "interval": [outcome.interval.0, outcome.interval.1],
        "degenerate": outcome.degenerate,
        "best": {"phi": outcome.best.phi, "score": outcome.best.score},
        "evaluations": outcome.evals.iter().map(|e| json!({
            "phi": e.phi,
            "score": e.score,
            "per_agent": e.per_agent.iter().map(|(id, v)| json!({
                "agent": id.0,
                "final_reward": v,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&value)? + "\n";
    match &args.run.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("phisweep.json"), text)?;
            println!(
                "phi sweep done: best phi {} (score {})",
                outcome.best.phi, outcome.best.score
            );
        }
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run_to_exit(cmd_run(args)),
        Command::Speedup(args) => run_to_exit(cmd_speedup(args)),
        Command::Phisweep(args) => run_to_exit(cmd_phisweep(args)),
    }
}
