//! Seeded training runs and their artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, TracePlan};
use super::stats::{compute_iqm, mean};
use crate::agent::{
    collect_rollout, ppo_update, run_greedy_episode, AgentBundle, EnvRunner, TraceChoice, TRAINING_LOG_HEADER,
};
use crate::env::{episode_qoe, SessionConfig, StepOutcome, EPISODE_LOG_HEADER};
use crate::plasticity::{
    format_optional, layer_ratios, write_layer_rows, write_neuron_rows, Classification, NeuronActivityReport,
    LAYER_LOG_HEADER, NEURON_LOG_HEADER,
};
use crate::resin::{NetworkRole, ResetMode, ResetSweeper, RESET_LOG_HEADER};
use crate::rng::{derive_seed, stream};
use crate::trace::{generate_synthetic, load_trace, BandwidthTrace};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const EVAL_LOG_HEADER: &str =
    "update,trace,episode,qoe,quality,switch_penalty,rebuffer_penalty,rebuffer_s,bitrate_mbps";

pub const TRAINING_FILE: &str = "training.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const PLASTICITY_FILE: &str = "plasticity.csv";
pub const PLASTICITY_LAYERS_FILE: &str = "plasticity_layers.csv";
pub const RESETS_FILE: &str = "resets.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_FILE: &str = "config.snapshot";

/// Every CSV a seed directory holds.
pub const SEED_FILES: [&str; 6] = [
    TRAINING_FILE,
    EPISODES_FILE,
    PLASTICITY_FILE,
    PLASTICITY_LAYERS_FILE,
    RESETS_FILE,
    EVAL_FILE,
];

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed_{seed}")
}

/// Per-chunk means of one or more greedy episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QoEBreakdown {
    /// Mean per-chunk QoE.
    pub qoe: f64,
    pub quality: f64,
    /// Weighted switching penalty per chunk.
    pub switch_penalty: f64,
    /// Weighted stall penalty per chunk.
    pub rebuffer_penalty: f64,
    /// Stall seconds per episode.
    pub rebuffer_s: f64,
    pub bitrate_mbps: f64,
}

impl QoEBreakdown {
    pub fn of_episode(outcomes: &[StepOutcome], cfg: &SessionConfig) -> Result<Self> {
        let n = outcomes.len() as f64;
        let w = &cfg.qoe;
        let sum = |f: fn(&StepOutcome) -> f64| outcomes.iter().map(f).sum::<f64>();
        Ok(QoEBreakdown {
            qoe: episode_qoe(outcomes, w)? / n,
            quality: sum(|o| o.quality) / n,
            switch_penalty: w.mu1 * sum(|o| o.switch_penalty) / n,
            rebuffer_penalty: w.mu2 * sum(|o| o.rebuffer_s) / n,
            rebuffer_s: sum(|o| o.rebuffer_s),
            bitrate_mbps: sum(|o| o.bitrate_mbps) / n,
        })
    }

    pub fn average(items: &[QoEBreakdown]) -> Option<Self> {
        let m = |f: fn(&QoEBreakdown) -> f64| mean(&items.iter().map(f).collect::<Vec<_>>());
        Some(QoEBreakdown {
            qoe: m(|b| b.qoe)?,
            quality: m(|b| b.quality)?,
            switch_penalty: m(|b| b.switch_penalty)?,
            rebuffer_penalty: m(|b| b.rebuffer_penalty)?,
            rebuffer_s: m(|b| b.rebuffer_s)?,
            bitrate_mbps: m(|b| b.bitrate_mbps)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub update: u64,
    #[serde(flatten)]
    pub qoe: QoEBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlasticityPoint {
    pub step: u64,
    pub role: NetworkRole,
    pub layer: usize,
    pub dormant_ratio: f64,
    pub dormant_overlap: Option<f64>,
    pub zero_grad_ratio: f64,
    pub zero_grad_overlap: Option<f64>,
    pub silent_ratio: f64,
    pub silent_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { update: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: RunStatus,
    pub updates_completed: u64,
    pub final_window: Option<QoEBreakdown>,
    pub resets_actor: u64,
    pub resets_critic: u64,
    pub eval_curve: Vec<EvalPoint>,
    pub plasticity: Vec<PlasticityPoint>,
}

impl SeedSummary {
    /// Mean dormant ratio over snapshots, pooling every hidden layer of the
    /// given roles weighted equally.
    pub fn mean_dormant_ratio(&self, roles: &[NetworkRole]) -> Option<f64> {
        let v: Vec<f64> = self
            .plasticity
            .iter()
            .filter(|p| roles.contains(&p.role))
            .map(|p| p.dormant_ratio)
            .collect();
        mean(&v)
    }

    /// Snapshot series of one role and layer, in step order.
    pub fn layer_series(&self, role: NetworkRole, layer: usize) -> Vec<&PlasticityPoint> {
        self.plasticity
            .iter()
            .filter(|p| p.role == role && p.layer == layer)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub update: u64,
    pub iqm_qoe: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub config_hash: String,
    pub scenario: String,
    pub total_updates: u64,
    pub seeds: Vec<SeedSummary>,
    pub iqm_curve: Vec<CurvePoint>,
    /// IQM over seeds of the final-window mean QoE.
    pub final_window_iqm_qoe: Option<f64>,
    pub final_window_updates: u64,
}

/// CSV bodies of one seed, keyed by file name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedArtifacts {
    pub training: String,
    pub episodes: String,
    pub plasticity: String,
    pub plasticity_layers: String,
    pub resets: String,
    pub eval: String,
}

impl SeedArtifacts {
    fn new() -> Self {
        let h = |s: &str| format!("{s}\n");
        SeedArtifacts {
            training: h(TRAINING_LOG_HEADER),
            episodes: h(&format!("update,trace,episode,{EPISODE_LOG_HEADER}")),
            plasticity: h(NEURON_LOG_HEADER),
            plasticity_layers: h(LAYER_LOG_HEADER),
            resets: h(RESET_LOG_HEADER),
            eval: h(EVAL_LOG_HEADER),
        }
    }

    pub fn files(&self) -> [(&'static str, &str); 6] {
        [
            (TRAINING_FILE, &self.training),
            (EPISODES_FILE, &self.episodes),
            (PLASTICITY_FILE, &self.plasticity),
            (PLASTICITY_LAYERS_FILE, &self.plasticity_layers),
            (RESETS_FILE, &self.resets),
            (EVAL_FILE, &self.eval),
        ]
    }
}

/// Completed seed: summary, CSV bodies and the trained agent.
pub struct SeedRun {
    pub summary: SeedSummary,
    pub artifacts: SeedArtifacts,
    pub bundle: AgentBundle,
}

/// Number of trailing updates that form the final window.
pub fn final_window_len(cfg: &ExperimentConfig) -> u64 {
    ((cfg.total_updates as f64 * cfg.eval.final_window_fraction).round() as u64).clamp(1, cfg.total_updates)
}

fn build_traces(cfg: &ExperimentConfig, plan: &TracePlan, seed: u64) -> Result<Vec<BandwidthTrace>> {
    plan.names
        .iter()
        .map(|name| match cfg.traces.files.get(name) {
            Some(path) => load_trace(path),
            None => {
                let spec = cfg.traces.profiles.get(name).ok_or_else(|| {
                    Error::Validation(format!("regime {name:?} has neither a profile nor a trace file"))
                })?;
                generate_synthetic(
                    &spec.to_profile(name)?,
                    cfg.traces.duration_s,
                    derive_seed(seed, &format!("trace/{name}")),
                )
            }
        })
        .collect()
}

struct Evaluator {
    /// Start offsets per trace.
    offsets: Vec<Vec<f64>>,
    seed: u64,
}

impl Evaluator {
    fn new(cfg: &ExperimentConfig, plan: &TracePlan, traces: &[BandwidthTrace]) -> Self {
        let offsets = plan
            .names
            .iter()
            .zip(traces)
            .map(|(name, t)| {
                let mut rng = stream(cfg.eval.seed, &format!("eval-offsets/{name}"));
                (0..cfg.eval.episodes_per_trace)
                    .map(|_| rng.random::<f64>() * t.duration())
                    .collect()
            })
            .collect();
        Evaluator {
            offsets,
            seed: cfg.eval.seed,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &self,
        bundle: &AgentBundle,
        cfg: &ExperimentConfig,
        plan: &TracePlan,
        traces: &[BandwidthTrace],
        update: u64,
        art: &mut SeedArtifacts,
    ) -> Result<EvalPoint> {
        let mut all = Vec::new();
        for ti in plan.eval_traces(update) {
            let name = &plan.names[ti];
            for (k, &offset) in self.offsets[ti].iter().enumerate() {
                let mut rng = stream(self.seed, &format!("eval-noise/{name}/{k}"));
                let outcomes = run_greedy_episode(bundle, &cfg.session, &traces[ti], offset, &mut rng)?;
                let b = QoEBreakdown::of_episode(&outcomes, &cfg.session)?;
                let _ = writeln!(
                    art.eval,
                    "{update},{name},{k},{},{},{},{},{},{}",
                    b.qoe, b.quality, b.switch_penalty, b.rebuffer_penalty, b.rebuffer_s, b.bitrate_mbps
                );
                for o in &outcomes {
                    let _ = write!(art.episodes, "{update},{name},{k},");
                    o.write_csv_row(&mut art.episodes);
                }
                all.push(b);
            }
        }
        Ok(EvalPoint {
            update,
            qoe: QoEBreakdown::average(&all).expect("at least one evaluation episode"),
        })
    }
}

/// Trains one seed. Numerical failures end the run early with a failed
/// status; other errors propagate.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let resin = cfg.resolved_resin()?;
    let plan = cfg.trace_plan();
    let traces = build_traces(cfg, &plan, seed)?;
    let choice = |u: u64| plan.active(u).map_or(TraceChoice::Mixture, TraceChoice::Active);
    let mut runner = EnvRunner::new(cfg.session.clone(), traces.clone(), choice(1), derive_seed(seed, "env"))?;
    let mut bundle = AgentBundle::new(
        cfg.session.observation_len(),
        cfg.session.num_actions(),
        &cfg.ppo,
        derive_seed(seed, "agent"),
    )?;
    let mut policy_rng = stream(seed, "policy");
    let mut minibatch_rng = stream(seed, "minibatch");
    let mut reset_rng = stream(seed, "reset");
    let evaluator = Evaluator::new(cfg, &plan, &traces);

    let mut art = SeedArtifacts::new();
    let mut sweepers = [ResetSweeper::new(), ResetSweeper::new()];
    let mut previous: [Option<Classification>; 2] = [None, None];
    let mut summary = SeedSummary {
        seed,
        status: RunStatus::Completed,
        updates_completed: 0,
        final_window: None,
        resets_actor: 0,
        resets_critic: 0,
        eval_curve: Vec::new(),
        plasticity: Vec::new(),
    };
    let roles = [NetworkRole::Actor, NetworkRole::Critic];

    for update in 1..=cfg.total_updates {
        runner.set_choice(choice(update))?;
        let rollout = collect_rollout(&mut runner, &mut bundle, cfg.ppo.rollout_horizon, &mut policy_rng)?;
        let stats = match ppo_update(&mut bundle, &rollout, &cfg.ppo, &mut minibatch_rng) {
            Ok(s) => s,
            Err(Error::NonFinite(message)) => {
                summary.status = RunStatus::Failed { update, message };
                break;
            }
            Err(e) => return Err(e),
        };

        let mut resets = [0u64; 2];
        if resin.is_trigger(update) {
            let probe = rollout.recent_observations(resin.probe_batch_size);
            for (r, role) in roles.iter().enumerate() {
                let report = {
                    let net = if r == 0 { &bundle.actor } else { &bundle.critic };
                    NeuronActivityReport::probe(net, &probe)?
                };
                let sets = Classification::new(&report, resin.eps_g, resin.eps_d);
                let role_name = role.to_string();
                write_neuron_rows(&mut art.plasticity, update, &role_name, &report, &sets);
                let ratios = layer_ratios(&sets, previous[r].as_ref());
                write_layer_rows(&mut art.plasticity_layers, update, &role_name, &ratios);
                summary.plasticity.extend(ratios.iter().map(|x| PlasticityPoint {
                    step: update,
                    role: *role,
                    layer: x.layer,
                    dormant_ratio: x.dormant_ratio,
                    dormant_overlap: x.dormant_overlap,
                    zero_grad_ratio: x.zero_grad_ratio,
                    zero_grad_overlap: x.zero_grad_overlap,
                    silent_ratio: x.silent_ratio,
                    silent_overlap: x.silent_overlap,
                }));
                previous[r] = Some(sets);
                if resin.mode != ResetMode::Off {
                    let (net, opt) = if r == 0 {
                        (&mut bundle.actor, &mut bundle.actor_opt)
                    } else {
                        (&mut bundle.critic, &mut bundle.critic_opt)
                    };
                    let events =
                        sweepers[r].reset_from_report(net, Some(opt), &report, &resin, update, *role, &mut reset_rng)?;
                    for e in &events {
                        e.write_csv_row(&mut art.resets);
                    }
                    resets[r] = events.len() as u64;
                }
            }
        }
        summary.resets_actor += resets[0];
        summary.resets_critic += resets[1];

        let mean_reward = rollout.rewards.iter().sum::<f64>() / rollout.len() as f64;
        let episode_qoes = rollout
            .episodes
            .iter()
            .map(|ep| Ok(episode_qoe(&ep.outcomes, &cfg.session.qoe)? / ep.outcomes.len() as f64))
            .collect::<Result<Vec<f64>>>()?;
        let _ = writeln!(
            art.training,
            "{update},{},{mean_reward},{},{},{},{},{},{},{}",
            update * cfg.ppo.rollout_horizon as u64,
            format_optional(mean(&episode_qoes)),
            stats.policy_loss,
            stats.value_loss,
            stats.entropy,
            stats.clip_fraction,
            resets[0],
            resets[1],
        );

        if update % cfg.eval.interval == 0 || update == cfg.total_updates {
            let point = evaluator.evaluate(&bundle, cfg, &plan, &traces, update, &mut art)?;
            summary.eval_curve.push(point);
        }
        summary.updates_completed = update;
    }

    if summary.status == RunStatus::Completed {
        let start = cfg.total_updates - final_window_len(cfg) + 1;
        let window: Vec<QoEBreakdown> = summary
            .eval_curve
            .iter()
            .filter(|p| p.update >= start)
            .map(|p| p.qoe)
            .collect();
        summary.final_window = QoEBreakdown::average(&window);
    }
    Ok(SeedRun {
        summary,
        artifacts: art,
        bundle,
    })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Aggregates finished seeds into the run summary.
pub fn summarize(cfg: &ExperimentConfig, seeds: Vec<SeedSummary>) -> Result<RunSummary> {
    let mut updates: Vec<u64> = seeds
        .iter()
        .flat_map(|s| s.eval_curve.iter().map(|p| p.update))
        .collect();
    updates.sort_unstable();
    updates.dedup();
    let mut iqm_curve = Vec::with_capacity(updates.len());
    for u in updates {
        let vals: Vec<f64> = seeds
            .iter()
            .filter_map(|s| s.eval_curve.iter().find(|p| p.update == u))
            .map(|p| p.qoe.qoe)
            .collect();
        iqm_curve.push(CurvePoint {
            update: u,
            iqm_qoe: compute_iqm(&vals)?,
            seeds: vals.len(),
        });
    }
    let finals: Vec<f64> = seeds.iter().filter_map(|s| s.final_window.map(|f| f.qoe)).collect();
    Ok(RunSummary {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash(),
        scenario: cfg.scenario.to_string(),
        total_updates: cfg.total_updates,
        final_window_iqm_qoe: if finals.is_empty() { None } else { Some(compute_iqm(&finals)?) },
        final_window_updates: final_window_len(cfg),
        seeds,
        iqm_curve,
    })
}

/// Trains every seed (in parallel) and writes the run directory under
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(SNAPSHOT_FILE), &cfg.to_toml_string())?;

    let runs: Vec<Result<SeedSummary>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed(cfg, seed)?;
            let sd: PathBuf = dir.join(seed_dir_name(seed));
            std::fs::create_dir_all(&sd).map_err(|e| Error::io(&sd, e))?;
            for (name, body) in run.artifacts.files() {
                write_file(&sd.join(name), body)?;
            }
            run.bundle.save_checkpoint(sd.join("checkpoint"), run.summary.updates_completed)?;
            Ok(run.summary)
        })
        .collect();
    let seeds = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(cfg, seeds)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join(SUMMARY_FILE), &json)?;
    Ok(summary)
}
