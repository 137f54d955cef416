//! Actor-critic PPO over the streaming session.
//!
//! Separate actor (logits) and critic (scalar value) networks, each with its
//! own Adam state. Observations are normalized with running statistics before
//! reaching either network.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Session, SessionConfig, StepOutcome};
use crate::net::{
    apply_update, mlp_specs, Activation, AdamConfig, AdamState, DenseNetwork, InitScheme, Matrix, ParamGrads,
};
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::trace::BandwidthTrace;
use crate::{Error, Result};

pub const TRAINING_LOG_HEADER: &str =
    "update,step,mean_reward,mean_qoe,policy_loss,value_loss,entropy,clip_fraction,resets_actor,resets_critic";

const ADV_STD_FLOOR: f64 = 1e-8;
const OBS_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPOConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub rollout_horizon: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Hidden widths shared by actor and critic.
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs_per_update: 4,
            minibatch_size: 64,
            rollout_horizon: 512,
            lr: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            hidden_sizes: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("ppo.{m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return bad("clip must be positive");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.rollout_horizon == 0 {
            return bad("epochs_per_update, minibatch_size and rollout_horizon must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0)
            || !self.entropy_coef.is_finite()
            || !self.value_coef.is_finite()
        {
            return bad("entropy_coef and value_coef must be non-negative");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must list at least one positive width");
        }
        if self.activation == Activation::Identity {
            return bad("activation must be relu or tanh");
        }
        Ok(())
    }
}

/// Running per-feature mean and variance; normalized values are clipped to ±10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 1e-4,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        let total = self.count + 1.0;
        for ((m, v), &xi) in self.mean.iter_mut().zip(self.var.iter_mut()).zip(x) {
            let delta = xi - *m;
            let new_mean = *m + delta / total;
            let m2 = *v * self.count + delta * delta * self.count / total;
            *m = new_mean;
            *v = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(&xi, (&m, &v))| ((xi - m) / (v + 1e-8).sqrt()).clamp(-OBS_CLIP, OBS_CLIP))
            .collect()
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub fn entropy(logits: &[f64]) -> f64 {
    let lse = log_sum_exp(logits);
    logits
        .iter()
        .map(|&l| {
            let lp = l - lse;
            -lp.exp() * lp
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: usize,
    pub log_prob: f64,
    pub logits: Vec<f64>,
}

/// Samples an action from the categorical policy over `actor`'s logits.
pub fn select_action(actor: &DenseNetwork, obs: &[f64], rng: &mut SimRng) -> Result<ActionSample> {
    if obs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("observation contains NaN or infinity".into()));
    }
    let logits = actor.predict(obs)?;
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("policy produced non-finite logits {logits:?}")));
    }
    let probs = softmax(&logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            action = i;
            break;
        }
    }
    let log_prob = logits[action] - log_sum_exp(&logits);
    Ok(ActionSample {
        action,
        log_prob,
        logits,
    })
}

/// Index of the largest logit; ties go to the lowest index.
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Actor, critic, their optimizer states and the observation normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBundle {
    pub actor: DenseNetwork,
    pub critic: DenseNetwork,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub obs_norm: RunningNorm,
    pub adam: AdamConfig,
}

impl AgentBundle {
    pub fn new(obs_len: usize, num_actions: usize, cfg: &PPOConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let actor = DenseNetwork::init(
            &mlp_specs(obs_len, &cfg.hidden_sizes, num_actions, cfg.activation),
            derive_seed(seed, "actor-init"),
            InitScheme::FanUniform,
        )?;
        let critic = DenseNetwork::init(
            &mlp_specs(obs_len, &cfg.hidden_sizes, 1, cfg.activation),
            derive_seed(seed, "critic-init"),
            InitScheme::FanUniform,
        )?;
        Ok(AgentBundle {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
            obs_norm: RunningNorm::new(obs_len),
            adam: AdamConfig::with_lr(cfg.lr),
        })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.predict(obs)?[0])
    }

    /// Policy probabilities for a raw observation under frozen statistics.
    pub fn action_probabilities(&self, raw_obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.actor.predict(&self.obs_norm.normalize(raw_obs))?))
    }

    /// Writes `actor.*`, `critic.*` and `obs_norm.json` into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>, step: u64) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.actor.save_checkpoint(dir, "actor", step)?;
        self.critic.save_checkpoint(dir, "critic", step)?;
        let path = dir.join("obs_norm.json");
        let json = serde_json::to_string_pretty(&self.obs_norm).expect("normalizer serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// How a new episode picks its trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceChoice {
    Active(usize),
    /// Uniform draw over all traces per episode.
    Mixture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trace_index: usize,
    pub outcomes: Vec<StepOutcome>,
}

impl EpisodeRecord {
    pub fn total_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.reward).sum()
    }
}

/// Drives sessions back to back, opening a new episode at a random trace
/// position whenever one finishes. Trace-choice changes apply from the next
/// episode.
#[derive(Debug, Clone)]
pub struct EnvRunner {
    config: SessionConfig,
    traces: Vec<BandwidthTrace>,
    choice: TraceChoice,
    session: Session,
    trace_index: usize,
    rng: SimRng,
    current: Vec<StepOutcome>,
}

impl EnvRunner {
    pub fn new(config: SessionConfig, traces: Vec<BandwidthTrace>, choice: TraceChoice, seed: u64) -> Result<Self> {
        config.validate()?;
        if traces.is_empty() {
            return Err(Error::Validation("runner needs at least one trace".into()));
        }
        if let TraceChoice::Active(i) = choice {
            if i >= traces.len() {
                return Err(Error::Usage(format!("trace index {i} out of range")));
            }
        }
        let session = Session::start(&config, 0.0)?;
        let mut runner = EnvRunner {
            config,
            traces,
            choice,
            session,
            trace_index: 0,
            rng: rng_from_seed(seed),
            current: Vec::new(),
        };
        runner.open_episode()?;
        Ok(runner)
    }

    fn open_episode(&mut self) -> Result<()> {
        self.trace_index = match self.choice {
            TraceChoice::Active(i) => i,
            TraceChoice::Mixture => self.rng.random_range(0..self.traces.len()),
        };
        let offset = self.rng.random::<f64>() * self.traces[self.trace_index].duration();
        self.session = Session::start(&self.config, offset)?;
        self.current.clear();
        Ok(())
    }

    pub fn set_choice(&mut self, choice: TraceChoice) -> Result<()> {
        if let TraceChoice::Active(i) = choice {
            if i >= self.traces.len() {
                return Err(Error::Usage(format!("trace index {i} out of range")));
            }
        }
        self.choice = choice;
        Ok(())
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn traces(&self) -> &[BandwidthTrace] {
        &self.traces
    }

    pub fn trace_index(&self) -> usize {
        self.trace_index
    }

    pub fn observation(&self) -> Vec<f64> {
        self.session.observe().0
    }

    /// Steps the session; returns the finished episode when this step ended one.
    pub fn step(&mut self, action: usize) -> Result<(crate::env::Step, Option<EpisodeRecord>)> {
        let step = self
            .session
            .step(action, &self.traces[self.trace_index], &mut self.rng)?;
        self.current.push(step.outcome.clone());
        let finished = if step.done {
            let record = EpisodeRecord {
                trace_index: self.trace_index,
                outcomes: std::mem::take(&mut self.current),
            };
            self.open_episode()?;
            Some(record)
        } else {
            None
        };
        Ok((step, finished))
    }
}

/// One on-policy batch. Observations are stored normalized, as the networks saw them.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub observations: Matrix,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap_value: f64,
    pub outcomes: Vec<StepOutcome>,
    pub episodes: Vec<EpisodeRecord>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// The last `n` observations, oldest first.
    pub fn recent_observations(&self, n: usize) -> Matrix {
        let start = self.len().saturating_sub(n);
        let idx: Vec<usize> = (start..self.len()).collect();
        self.observations.select_rows(&idx)
    }
}

pub fn collect_rollout(
    runner: &mut EnvRunner,
    bundle: &mut AgentBundle,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Rollout> {
    if horizon == 0 {
        return Err(Error::Usage("rollout horizon must be >= 1".into()));
    }
    let obs_len = bundle.actor.input_dim();
    let mut obs_data = Vec::with_capacity(horizon * obs_len);
    let mut r = Rollout {
        observations: Matrix::zeros(0, obs_len),
        actions: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon),
        dones: Vec::with_capacity(horizon),
        bootstrap_value: 0.0,
        outcomes: Vec::with_capacity(horizon),
        episodes: Vec::new(),
    };
    for _ in 0..horizon {
        let raw = runner.observation();
        bundle.obs_norm.update(&raw);
        let obs = bundle.obs_norm.normalize(&raw);
        let sample = select_action(&bundle.actor, &obs, rng)?;
        let value = bundle.value(&obs)?;
        let (step, finished) = runner.step(sample.action)?;
        obs_data.extend_from_slice(&obs);
        r.actions.push(sample.action);
        r.log_probs.push(sample.log_prob);
        r.rewards.push(step.reward);
        r.values.push(value);
        r.dones.push(step.done);
        r.outcomes.push(step.outcome);
        if let Some(ep) = finished {
            r.episodes.push(ep);
        }
    }
    r.observations = Matrix::from_vec(horizon, obs_len, obs_data)?;
    r.bootstrap_value = bundle.value(&bundle.obs_norm.normalize(&runner.observation()))?;
    Ok(r)
}

/// Greedy episode from `offset_s` on `trace`, with frozen normalization.
pub fn run_greedy_episode(
    bundle: &AgentBundle,
    config: &SessionConfig,
    trace: &BandwidthTrace,
    offset_s: f64,
    rng: &mut SimRng,
) -> Result<Vec<StepOutcome>> {
    let mut session = Session::start(config, offset_s)?;
    let mut out = Vec::with_capacity(config.num_chunks);
    while !session.is_done() {
        let obs = bundle.obs_norm.normalize(&session.observe().0);
        let logits = bundle.actor.predict(&obs)?;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("policy produced non-finite logits".into()));
        }
        out.push(session.step(greedy_action(&logits), trace, rng)?.outcome);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// Before normalization.
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation; `dones[t]` cuts bootstrapping after step `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Advantages> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Usage("rewards, values and dones must be aligned".into()));
    }
    let mut raw = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        raw[t] = next_adv;
        next_value = values[t];
    }
    let returns = raw.iter().zip(values).map(|(a, v)| a + v).collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let std = var.sqrt().max(ADV_STD_FLOOR);
    let normalized = raw.iter().map(|a| (a - mean) / std).collect();
    Ok(Advantages {
        raw,
        normalized,
        returns,
    })
}

/// Clipped-surrogate and entropy terms of one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTerms {
    /// `-mean(min(rho*A, clip(rho)*A))`
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Gradient of `surrogate - entropy_coef * entropy` with respect to the logits.
    pub logit_grad: Matrix,
}

pub fn clipped_ratio(rho: f64, clip: f64) -> f64 {
    rho.clamp(1.0 - clip, 1.0 + clip)
}

pub fn policy_terms(
    logits: &Matrix,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> Result<PolicyTerms> {
    let b = logits.rows();
    if actions.len() != b || old_log_probs.len() != b || advantages.len() != b || b == 0 {
        return Err(Error::Usage("policy batch is empty or misaligned".into()));
    }
    let inv = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, logits.cols());
    let (mut surrogate, mut ent_sum, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);
    for s in 0..b {
        let row = logits.row(s);
        let a = actions[s];
        if a >= row.len() {
            return Err(Error::Usage(format!("action {a} outside the policy head")));
        }
        let lse = log_sum_exp(row);
        let logp = row[a] - lse;
        let log_ratio = logp - old_log_probs[s];
        let rho = log_ratio.exp();
        let adv = advantages[s];
        let unclipped = rho * adv;
        let bounded = clipped_ratio(rho, clip) * adv;
        surrogate -= unclipped.min(bounded) * inv;
        if (rho - 1.0).abs() > clip {
            clipped += 1;
        }
        kl += ((rho - 1.0) - log_ratio) * inv;
        // d(-min)/d logp: nonzero only where the unclipped branch is selected
        let d_logp = if unclipped <= bounded { -adv * rho * inv } else { 0.0 };
        let probs: Vec<f64> = row.iter().map(|l| (l - lse).exp()).collect();
        let h: f64 = probs.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum();
        ent_sum += h;
        let g = grad.row_mut(s);
        for (j, &p) in probs.iter().enumerate() {
            let one = if j == a { 1.0 } else { 0.0 };
            let lp = if p > 0.0 { p.ln() } else { 0.0 };
            g[j] = d_logp * (one - p) + entropy_coef * inv * p * (lp + h);
        }
    }
    Ok(PolicyTerms {
        surrogate,
        entropy: ent_sum * inv,
        clip_fraction: clipped as f64 * inv,
        approx_kl: kl,
        logit_grad: grad,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    pub minibatches: usize,
}

fn clip_grads(g: &mut ParamGrads, max_norm: f64) {
    let norm = g.norm();
    if norm > max_norm {
        g.scale(max_norm / norm);
    }
}

/// Clipped PPO over `epochs_per_update` passes of shuffled minibatches. Any
/// non-finite loss or gradient restores the bundle and returns an error.
pub fn ppo_update(bundle: &mut AgentBundle, rollout: &Rollout, cfg: &PPOConfig, rng: &mut SimRng) -> Result<UpdateStats> {
    if rollout.is_empty() {
        return Err(Error::Usage("empty rollout".into()));
    }
    let adv = compute_gae(
        &rollout.rewards,
        &rollout.values,
        &rollout.dones,
        rollout.bootstrap_value,
        cfg.gamma,
        cfg.gae_lambda,
    )?;
    let snapshot = bundle.clone();
    match ppo_epochs(bundle, rollout, &adv, cfg, rng) {
        Ok(mut stats) => {
            let n = adv.raw.len() as f64;
            stats.advantage_mean = adv.raw.iter().sum::<f64>() / n;
            stats.advantage_std =
                (adv.raw.iter().map(|a| (a - stats.advantage_mean).powi(2)).sum::<f64>() / n).sqrt();
            Ok(stats)
        }
        Err(e) => {
            *bundle = snapshot;
            Err(e)
        }
    }
}

fn ppo_epochs(
    bundle: &mut AgentBundle,
    rollout: &Rollout,
    adv: &Advantages,
    cfg: &PPOConfig,
    rng: &mut SimRng,
) -> Result<UpdateStats> {
    let n = rollout.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let obs = rollout.observations.select_rows(idx);
            let actions: Vec<usize> = idx.iter().map(|&i| rollout.actions[i]).collect();
            let old_lp: Vec<f64> = idx.iter().map(|&i| rollout.log_probs[i]).collect();
            let a: Vec<f64> = idx.iter().map(|&i| adv.normalized[i]).collect();
            let ret: Vec<f64> = idx.iter().map(|&i| adv.returns[i]).collect();

            let (logits, atape) = bundle.actor.forward(&obs)?;
            let terms = policy_terms(&logits, &actions, &old_lp, &a, cfg.clip, cfg.entropy_coef)?;
            let (values, ctape) = bundle.critic.forward(&obs)?;
            let b = idx.len() as f64;
            let mut value_loss = 0.0;
            let mut dv = Matrix::zeros(idx.len(), 1);
            for (s, r) in ret.iter().enumerate() {
                let diff = values[(s, 0)] - r;
                value_loss += diff * diff / b;
                dv[(s, 0)] = cfg.value_coef * 2.0 * diff / b;
            }
            if !(terms.surrogate.is_finite() && value_loss.is_finite() && terms.entropy.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "non-finite loss (policy {}, value {value_loss}, entropy {}); update aborted",
                    terms.surrogate, terms.entropy
                )));
            }
            let mut ga = bundle.actor.backward_loss(&atape, &terms.logit_grad)?.params;
            let mut gc = bundle.critic.backward_loss(&ctape, &dv)?.params;
            clip_grads(&mut ga, cfg.max_grad_norm);
            clip_grads(&mut gc, cfg.max_grad_norm);
            apply_update(&mut bundle.actor, &ga, &mut bundle.actor_opt, &bundle.adam)?;
            apply_update(&mut bundle.critic, &gc, &mut bundle.critic_opt, &bundle.adam)?;

            stats.policy_loss += terms.surrogate;
            stats.value_loss += value_loss;
            stats.entropy += terms.entropy;
            stats.clip_fraction += terms.clip_fraction;
            stats.approx_kl += terms.approx_kl;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    if !(bundle.actor.is_finite() && bundle.critic.is_finite()) {
        return Err(Error::NonFinite("parameters became non-finite; update aborted".into()));
    }
    Ok(stats)
}
