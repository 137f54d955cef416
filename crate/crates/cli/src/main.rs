//! `resin`: train, inspect and summarize adaptive-bitrate plasticity experiments.
//!
//! Exit status: 0 on success, 1 on invalid input (bad flags, configs or
//! traces), 2 on runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resin_core::harness::{emit_plot_data, run_experiment, ExperimentConfig, RunSummary, Scenario};
use resin_core::trace::{compose_nonstationary, generate_synthetic, load_trace, BandwidthProfile, RegimeSchedule};
use resin_core::Error;

#[derive(Parser)]
#[command(name = "resin", version, about = "Silent-neuron reset experiments on a streaming-bitrate simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write the run directory.
    Run(RunArgs),
    /// Generate or check bandwidth traces.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Derive tidy plot-data CSVs from a finished run directory.
    Plotdata {
        run_dir: PathBuf,
    },
    /// Parse and validate an experiment config without running it.
    ValidateConfig {
        config: PathBuf,
    },
    /// Run a grid over reset thresholds and learning rates.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario named in the config.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Run only this seed (repeatable).
    #[arg(long)]
    seed: Vec<u64>,
    /// Override the number of PPO updates.
    #[arg(long)]
    updates: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Reset thresholds, applied to both criteria.
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.025,0.1")]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0003")]
    lr: Vec<f64>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Write a synthetic trace CSV.
    Gen(TraceGenArgs),
    /// Parse a trace CSV and report its statistics.
    Validate { path: PathBuf },
}

#[derive(Args)]
struct TraceGenArgs {
    /// Built-in profile: HBW or LBW.
    #[arg(long, default_value = "HBW", conflicts_with = "schedule")]
    profile: String,
    /// Alternating regimes as NAME:SECONDS pairs, e.g. HBW:600,LBW:600.
    #[arg(long, value_delimiter = ',')]
    schedule: Vec<String>,
    #[arg(long, default_value_t = 600.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn builtin_profiles() -> BTreeMap<String, BandwidthProfile> {
    [BandwidthProfile::hbw(), BandwidthProfile::lbw()]
        .into_iter()
        .map(|p| (p.name.clone(), p))
        .collect()
}

fn profile(name: &str) -> Result<BandwidthProfile, Error> {
    builtin_profiles()
        .remove(&name.to_ascii_uppercase())
        .ok_or_else(|| Error::Validation(format!("unknown profile {name:?}; expected HBW or LBW")))
}

fn trace_gen(args: &TraceGenArgs) -> Result<(), Error> {
    let trace = if args.schedule.is_empty() {
        generate_synthetic(&profile(&args.profile)?, args.duration, args.seed)?
    } else {
        let mut segments = Vec::with_capacity(args.schedule.len());
        for s in &args.schedule {
            let (name, secs) = s
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("schedule entry {s:?} is not NAME:SECONDS")))?;
            let secs: f64 = secs
                .parse()
                .map_err(|_| Error::Validation(format!("schedule entry {s:?} has a non-numeric duration")))?;
            segments.push((profile(name)?.name, secs));
        }
        compose_nonstationary(&builtin_profiles(), &RegimeSchedule::new(segments)?, args.seed)?
    };
    trace.save(&args.output)?;
    println!(
        "wrote {} samples ({:.1} s, mean {:.3} Mbps) to {}",
        trace.len(),
        trace.duration(),
        trace.mean_speed(),
        args.output.display()
    );
    Ok(())
}

fn print_summary(s: &RunSummary, dir: &Path) {
    println!("scenario {} | {} updates | config {}", s.scenario, s.total_updates, &s.config_hash[..12]);
    for seed in &s.seeds {
        let fw = seed
            .final_window
            .map_or_else(|| "NA".to_string(), |f| format!("{:.4}", f.qoe));
        println!(
            "  seed {:>4}: final-window QoE {fw}, resets actor/critic {}/{}, {:?}",
            seed.seed, seed.resets_actor, seed.resets_critic, seed.status
        );
    }
    match s.final_window_iqm_qoe {
        Some(q) => println!("final-window IQM QoE: {q:.4}"),
        None => println!("final-window IQM QoE: NA"),
    }
    println!("artifacts in {}", dir.display());
}

fn load_run_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(sc) = args.scenario {
        cfg = cfg.with_scenario(sc);
    }
    if !args.seed.is_empty() {
        cfg.seeds = args.seed.clone();
    }
    if let Some(u) = args.updates {
        cfg.total_updates = u;
    }
    if let Some(o) = &args.output {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ablate(args: &AblateArgs) -> Result<(), Error> {
    let mut base = ExperimentConfig::load(&args.config)?;
    if let Some(sc) = args.scenario {
        base = base.with_scenario(sc);
    }
    let root = args.output.clone().unwrap_or_else(|| base.output_dir.join("ablate"));
    println!("eps,lr,final_window_iqm_qoe,resets_actor,resets_critic");
    for &eps in &args.eps {
        for &lr in &args.lr {
            let mut cfg = base.clone();
            cfg.resin.eps_g = eps;
            cfg.resin.eps_d = eps;
            cfg.ppo.lr = lr;
            cfg.output_dir = root.join(format!("eps_{eps}_lr_{lr}"));
            cfg.validate()?;
            let s = run_experiment(&cfg)?;
            let ra: u64 = s.seeds.iter().map(|x| x.resets_actor).sum();
            let rc: u64 = s.seeds.iter().map(|x| x.resets_critic).sum();
            let q = s.final_window_iqm_qoe.map_or_else(|| "NA".into(), |q| q.to_string());
            println!("{eps},{lr},{q},{ra},{rc}");
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_run_config(&args)?;
            let summary = run_experiment(&cfg)?;
            print_summary(&summary, &cfg.output_dir);
        }
        Command::Trace(TraceCommand::Gen(args)) => trace_gen(&args)?,
        Command::Trace(TraceCommand::Validate { path }) => {
            let t = load_trace(&path)?;
            println!(
                "{}: ok, {} samples, {:.1} s, mean {:.3} Mbps",
                path.display(),
                t.len(),
                t.duration(),
                t.mean_speed()
            );
        }
        Command::Plotdata { run_dir } => {
            for p in emit_plot_data(&run_dir)? {
                println!("{}", p.display());
            }
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let resin = cfg.resolved_resin()?;
            println!(
                "{}: ok (scenario {}, {} seeds, {} updates, reset mode {})",
                config.display(),
                cfg.scenario,
                cfg.seeds.len(),
                cfg.total_updates,
                resin.mode
            );
        }
        Command::Ablate(args) => ablate(&args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
