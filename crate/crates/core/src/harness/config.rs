//! Experiment configuration: one TOML document fully determines a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::PPOConfig;
use crate::env::SessionConfig;
use crate::resin::{ResetMode, ResinConfig};
use crate::trace::BandwidthProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum Scenario {
    HBW,
    LBW,
    MBW,
    NS,
    NS_OR,
    NS_RESIN,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::HBW,
        Scenario::LBW,
        Scenario::MBW,
        Scenario::NS,
        Scenario::NS_OR,
        Scenario::NS_RESIN,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::HBW => "HBW",
            Scenario::LBW => "LBW",
            Scenario::MBW => "MBW",
            Scenario::NS => "NS",
            Scenario::NS_OR => "NS_OR",
            Scenario::NS_RESIN => "NS_RESIN",
        }
    }

    /// The reset mode a scenario pins, if any.
    pub fn forced_mode(self) -> Option<ResetMode> {
        match self {
            Scenario::NS_OR => Some(ResetMode::DormantOnly),
            Scenario::NS_RESIN => Some(ResetMode::Silent),
            _ => None,
        }
    }

    pub fn is_nonstationary(self) -> bool {
        matches!(self, Scenario::NS | Scenario::NS_OR | Scenario::NS_RESIN)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown scenario {s:?}; expected one of HBW, LBW, MBW, NS, NS_OR, NS_RESIN"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub mean_mbps: f64,
    pub jitter_fraction: f64,
    pub sample_period_s: f64,
}

impl ProfileSpec {
    pub fn to_profile(&self, name: &str) -> Result<BandwidthProfile> {
        BandwidthProfile::new(name, self.mean_mbps, self.jitter_fraction, self.sample_period_s)
    }
}

impl From<&BandwidthProfile> for ProfileSpec {
    fn from(p: &BandwidthProfile) -> Self {
        ProfileSpec {
            mean_mbps: p.mean_mbps,
            jitter_fraction: p.jitter_fraction,
            sample_period_s: p.sample_period_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Length of each generated trace.
    pub duration_s: f64,
    /// Synthetic profiles by regime name.
    pub profiles: BTreeMap<String, ProfileSpec>,
    /// Recorded traces by regime name; these take precedence over profiles.
    pub files: BTreeMap<String, PathBuf>,
    pub high: String,
    pub low: String,
    /// Regime order of the non-stationary schedule.
    pub ns_pattern: Vec<String>,
    /// PPO updates spent in each regime before switching.
    pub ns_period_updates: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        let hbw = BandwidthProfile::hbw();
        let lbw = BandwidthProfile::lbw();
        TraceConfig {
            duration_s: 3600.0,
            profiles: BTreeMap::from([
                (hbw.name.clone(), ProfileSpec::from(&hbw)),
                (lbw.name.clone(), ProfileSpec::from(&lbw)),
            ]),
            files: BTreeMap::new(),
            high: hbw.name.clone(),
            low: lbw.name.clone(),
            ns_pattern: vec![hbw.name, lbw.name],
            ns_period_updates: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Updates between greedy evaluations.
    pub interval: u64,
    pub episodes_per_trace: usize,
    /// Fixes evaluation start offsets and noise.
    pub seed: u64,
    /// Trailing fraction of the run that forms the final window.
    pub final_window_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            interval: 10,
            episodes_per_trace: 2,
            seed: 20_240_601,
            final_window_fraction: 0.1,
        }
    }
}

/// Reset settings as written; `mode` may be left to the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResinSection {
    pub eps_g: f64,
    pub eps_d: f64,
    pub frequency: u64,
    pub mode: Option<ResetMode>,
    pub probe_batch_size: usize,
}

impl Default for ResinSection {
    fn default() -> Self {
        let d = ResinConfig::default();
        ResinSection {
            eps_g: d.eps_g,
            eps_d: d.eps_d,
            frequency: d.frequency,
            mode: None,
            probe_batch_size: d.probe_batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_updates")]
    pub total_updates: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default)]
    pub traces: TraceConfig,
    #[serde(default)]
    pub ppo: PPOConfig,
    #[serde(default)]
    pub resin: ResinSection,
}

fn default_updates() -> u64 {
    1000
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            total_updates: default_updates(),
            seeds: default_seeds(),
            output_dir: default_output(),
            eval: EvalConfig::default(),
            session: SessionConfig::default(),
            traces: TraceConfig::default(),
            ppo: PPOConfig::default(),
            resin: ResinSection::default(),
        }
    }

    /// Parses and validates a TOML document. Syntax and schema errors carry
    /// the offending line.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse {
                path: origin.to_string(),
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML rendering. The output directory is
    /// left out so relocated reruns hash the same.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(canonical.to_toml_string().as_bytes()))
    }

    /// Reset settings with the scenario's mode applied.
    pub fn resolved_resin(&self) -> Result<ResinConfig> {
        let mode = match (self.scenario.forced_mode(), self.resin.mode) {
            (Some(forced), Some(given)) if forced != given => {
                return Err(Error::Validation(format!(
                    "scenario {} requires resin.mode = \"{forced}\", found \"{given}\"",
                    self.scenario
                )))
            }
            (Some(forced), _) => forced,
            (None, Some(given)) => given,
            (None, None) => ResetMode::Off,
        };
        let cfg = ResinConfig {
            eps_g: self.resin.eps_g,
            eps_d: self.resin.eps_d,
            frequency: self.resin.frequency,
            mode,
            probe_batch_size: self.resin.probe_batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches scenario. An explicit mode that conflicts with the new
    /// scenario is dropped so the scenario's own mode applies.
    pub fn with_scenario(mut self, scenario: Scenario) -> Self {
        self.scenario = scenario;
        if let (Some(forced), Some(given)) = (scenario.forced_mode(), self.resin.mode) {
            if forced != given {
                self.resin.mode = None;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_updates == 0 {
            return Err(Error::Validation("total_updates must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Validation("seeds must be distinct".into()));
        }
        if self.eval.interval == 0 || self.eval.episodes_per_trace == 0 {
            return Err(Error::Validation("eval.interval and eval.episodes_per_trace must be >= 1".into()));
        }
        if !(self.eval.final_window_fraction > 0.0 && self.eval.final_window_fraction <= 1.0) {
            return Err(Error::Validation("eval.final_window_fraction must lie in (0, 1]".into()));
        }
        self.session.validate()?;
        self.ppo.validate()?;
        self.resolved_resin()?;
        let t = &self.traces;
        if !(t.duration_s > 0.0 && t.duration_s.is_finite()) {
            return Err(Error::Validation("traces.duration_s must be positive".into()));
        }
        if t.ns_period_updates == 0 {
            return Err(Error::Validation("traces.ns_period_updates must be >= 1".into()));
        }
        if t.ns_pattern.is_empty() {
            return Err(Error::Validation("traces.ns_pattern must not be empty".into()));
        }
        for (name, p) in &t.profiles {
            p.to_profile(name)?;
        }
        for name in self.trace_plan().names {
            if !t.files.contains_key(&name) && !t.profiles.contains_key(&name) {
                return Err(Error::Validation(format!(
                    "regime {name:?} has neither a profile nor a trace file"
                )));
            }
        }
        Ok(())
    }

    /// Which traces the scenario uses and how episodes pick among them.
    pub fn trace_plan(&self) -> TracePlan {
        let t = &self.traces;
        match self.scenario {
            Scenario::HBW => TracePlan {
                names: vec![t.high.clone()],
                selection: TraceSelection::Fixed,
            },
            Scenario::LBW => TracePlan {
                names: vec![t.low.clone()],
                selection: TraceSelection::Fixed,
            },
            Scenario::MBW => TracePlan {
                names: vec![t.high.clone(), t.low.clone()],
                selection: TraceSelection::Mixture,
            },
            Scenario::NS | Scenario::NS_OR | Scenario::NS_RESIN => {
                let mut names: Vec<String> = Vec::new();
                for n in &t.ns_pattern {
                    if !names.contains(n) {
                        names.push(n.clone());
                    }
                }
                let order = t
                    .ns_pattern
                    .iter()
                    .map(|n| names.iter().position(|m| m == n).expect("name collected above"))
                    .collect();
                TracePlan {
                    names,
                    selection: TraceSelection::Alternating {
                        order,
                        period_updates: t.ns_period_updates,
                    },
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSelection {
    /// Always the single trace.
    Fixed,
    /// Each episode draws a trace uniformly.
    Mixture,
    /// Cycles through `order` (indices into the plan's names), advancing
    /// every `period_updates` updates.
    Alternating { order: Vec<usize>, period_updates: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePlan {
    pub names: Vec<String>,
    pub selection: TraceSelection,
}

impl TracePlan {
    /// Trace active during 1-based `update`; `None` for a mixture.
    pub fn active(&self, update: u64) -> Option<usize> {
        match &self.selection {
            TraceSelection::Fixed => Some(0),
            TraceSelection::Mixture => None,
            TraceSelection::Alternating { order, period_updates } => {
                let phase = (update.saturating_sub(1) / period_updates) as usize % order.len();
                Some(order[phase])
            }
        }
    }

    /// Traces evaluated at `update`: the active one, or all of a mixture.
    pub fn eval_traces(&self, update: u64) -> Vec<usize> {
        match self.active(update) {
            Some(i) => vec![i],
            None => (0..self.names.len()).collect(),
        }
    }
}
