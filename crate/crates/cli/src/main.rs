use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use wimle_core::harness::{
    emit_report, gradcheck_suite, run_experiment_with, ExperimentConfig, MetricBundle, Progress, RunManifest,
    GRADCHECK_TOLERANCE, OUT_DIR_ENV,
};
use wimle_core::theory::verify_all;

#[derive(Parser, Debug)]
#[command(name = "wimle", version, about = "Uncertainty-weighted model-based RL with IMLE world models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate one or more seeds, then write CSV reports.
    ///
    /// Any configuration key can also be given as `--key value`.
    Run(RunArgs),
    /// Check the weighting lemmas on random instances.
    VerifyTheory(TheoryArgs),
    /// Compare analytic gradients of every network with finite differences.
    Gradcheck(GradArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds; one run each, aggregated in the report.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long, value_parser = ["on", "off"])]
    weighting: Option<String>,
    #[arg(long, value_parser = ["imle", "gaussian"])]
    model: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    /// Raw `key=value` overrides, applied after the named flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// Number of random MDPs and of random regression instances
    /// (default 200 and 1000).
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    mc_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

const RUN_FLAGS: &[&str] = &["config", "seed", "seeds", "env", "out", "weighting", "model", "horizon", "set", "quiet"];

/// Rewrites `--<config key> value` and `--<config key>=value` after `run`
/// into `--set key=value` so clap sees a fixed flag set.
fn expand_key_flags(args: Vec<String>) -> Vec<String> {
    let Some(run_at) = args.iter().position(|a| a == "run") else {
        return args;
    };
    let mut out: Vec<String> = args[..=run_at].to_vec();
    let mut rest = args[run_at + 1..].iter();
    while let Some(a) = rest.next() {
        let Some(flag) = a.strip_prefix("--") else {
            out.push(a.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        let key = name.replace('-', "_");
        if RUN_FLAGS.contains(&name) || !ExperimentConfig::KEYS.contains(&key.as_str()) {
            out.push(a.clone());
            continue;
        }
        match inline.or_else(|| rest.next().cloned()) {
            Some(v) => {
                out.push("--set".into());
                out.push(format!("{key}={v}"));
            }
            None => out.push(a.clone()),
        }
    }
    out
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    let named = [
        ("seed", args.seed.map(|s| s.to_string())),
        ("env", args.env.clone()),
        ("weighting", args.weighting.clone()),
        ("model", args.model.clone()),
        ("horizon", args.horizon.clone()),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            config.set(k, &v)?;
        }
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("override '{o}' is not KEY=VALUE"))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let config = build_config(&args)?;
    let seeds = if args.seeds.is_empty() { vec![config.seed] } else { args.seeds.clone() };
    let ckpt_dir = args.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let mut bundle = MetricBundle::new();
    for &seed in &seeds {
        let mut c = config.clone();
        c.seed = seed;
        let quiet = args.quiet;
        let out = run_experiment_with(&c, &mut |p| {
            if quiet {
                return;
            }
            match p {
                Progress::Evaluation { step, mean_return } => {
                    eprintln!("seed {seed} step {step}: eval return {mean_return:.2}")
                }
                Progress::ModelCycle { step, loss, mean_weight } => {
                    eprintln!("seed {seed} step {step}: model loss {loss:.5}, mean weight {mean_weight:.4}")
                }
            }
        })
        .with_context(|| format!("run with seed {seed}"))?;
        out.checkpoint()
            .save(&ckpt_dir.join(format!("seed_{seed}.txt")))
            .context("writing checkpoint")?;
        bundle.merge(out.bundle);
    }
    let mut shared = config.clone();
    shared.seed = seeds[0];
    let manifest = RunManifest::new(shared.to_text(), seeds);
    let files = emit_report(&bundle, &args.out, &manifest)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn verify_theory(args: TheoryArgs) -> Result<()> {
    let (mdps, regs) = args.instances.map_or((200, 1000), |n| (n, n));
    let r = verify_all(mdps, regs, args.mc_draws, args.seed)?;
    let status = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!(
        "{} weighted fixed point: {} MDPs, max |Q_w - Q_1| = {:.3e}, max |Q_1 - oracle| = {:.3e}",
        status(r.fixed_point_ok()),
        r.mdp_instances,
        r.worst_weight_gap,
        r.worst_oracle_gap
    );
    println!(
        "{} GLS dominance: {} instances, min eigenvalue of covariance gap = {:.3e}",
        status(r.dominance_ok()),
        r.regression_instances,
        r.worst_min_eigenvalue
    );
    println!(
        "{} worked example: inverse-variance {:.15}, uniform {:.15}",
        status(r.worked_example_ok()),
        r.worked_gls_variance,
        r.worked_uniform_variance
    );
    println!(
        "{} Monte Carlo covariance: {} draws, worst entry {:.2} standard errors",
        status(r.monte_carlo_ok()),
        r.mc_draws,
        r.mc_max_standard_errors
    );
    if !r.passed() {
        bail!("theory verification failed");
    }
    Ok(())
}

fn gradcheck(args: GradArgs) -> Result<()> {
    if args.instances == 0 {
        bail!("--instances must be at least 1");
    }
    let cases = gradcheck_suite(args.instances, args.seed)?;
    let mut failed = 0;
    let names: BTreeSet<&str> = cases.iter().map(|c| c.network).collect();
    for name in names {
        let of: Vec<_> = cases.iter().filter(|c| c.network == name).collect();
        let worst = of
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
            .expect("at least one instance");
        let bad = of.iter().filter(|c| !c.passes()).count();
        failed += bad;
        println!(
            "{} {name}: {} instances, {} scalars, worst relative error {:.2e} at {} (instance {})",
            if bad == 0 { "pass" } else { "FAIL" },
            of.len(),
            of.iter().map(|c| c.report.checked).sum::<usize>(),
            worst.report.max_rel_error,
            worst.report.worst_param,
            worst.instance
        );
    }
    if failed > 0 {
        bail!("{failed} instance(s) exceed relative error {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => run(a),
        Command::VerifyTheory(a) => verify_theory(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(expand_key_flags(std::env::args().collect()));
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
