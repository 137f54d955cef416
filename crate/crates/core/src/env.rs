//! Chunk-level adaptive-video-streaming MDP.
//!
//! Each step downloads one chunk at the chosen ladder rung. The download
//! time is the transfer time over the trace plus the round-trip time, scaled
//! by a uniform multiplicative noise factor. The buffer drains during the
//! download, gains one chunk of playback, and the player idles whenever the
//! buffer would exceed its cap. The per-chunk reward is the chunk's quality
//! minus weighted switching and stall penalties, so rewards sum to the
//! episode QoE.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;
use crate::trace::BandwidthTrace;
use crate::{Error, Result};

/// Number of past chunk throughputs in the observation.
pub const HISTORY_LEN: usize = 8;

/// Default six-rung ladder in Mbps.
pub const DEFAULT_LADDER: [f64; 6] = [0.3, 0.75, 1.2, 1.85, 2.85, 4.3];

pub const EPISODE_LOG_HEADER: &str =
    "chunk,action,bitrate_mbps,throughput_mbps,t_delay_s,rebuffer_s,wait_s,buffer_s,quality,reward";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoEWeights {
    /// Weight of the quality-switch penalty.
    pub mu1: f64,
    /// Weight of rebuffering seconds.
    pub mu2: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for QoEWeights {
    fn default() -> Self {
        QoEWeights {
            mu1: 1.0,
            mu2: 4.3,
            alpha: 1.0,
            beta: 0.3,
        }
    }
}

impl QoEWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Validation(format!(
                "qoe.alpha must be positive, got {}",
                self.alpha
            )));
        }
        for (name, v) in [("mu1", self.mu1), ("mu2", self.mu2), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!(
                    "qoe.{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Perceived quality of a chunk: `ln(alpha + b) - beta / b`.
pub fn quality(bitrate_mbps: f64, w: &QoEWeights) -> Result<f64> {
    if !(bitrate_mbps.is_finite() && bitrate_mbps > 0.0) {
        return Err(Error::Domain(format!(
            "quality needs a positive bitrate, got {bitrate_mbps}"
        )));
    }
    Ok((w.alpha + bitrate_mbps).ln() - w.beta / bitrate_mbps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub chunk_duration_s: f64,
    pub num_chunks: usize,
    pub bitrate_ladder: Vec<f64>,
    pub buffer_max_s: f64,
    pub rtt_s: f64,
    pub eta_low: f64,
    pub eta_high: f64,
    pub qoe: QoEWeights,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            chunk_duration_s: 4.0,
            num_chunks: 48,
            bitrate_ladder: DEFAULT_LADDER.to_vec(),
            buffer_max_s: 30.0,
            rtt_s: 0.08,
            eta_low: 0.9,
            eta_high: 1.1,
            qoe: QoEWeights::default(),
        }
    }
}

impl SessionConfig {
    pub fn num_actions(&self) -> usize {
        self.bitrate_ladder.len()
    }

    /// Observation layout: quality level, buffer fill, `HISTORY_LEN`
    /// throughputs, last delay, one chunk size per rung, remaining fraction.
    pub fn observation_len(&self) -> usize {
        4 + HISTORY_LEN + self.num_actions()
    }

    /// Chunk size in Mbits at ladder rung `action` (constant-bitrate encoding).
    pub fn chunk_size_mbits(&self, action: usize) -> f64 {
        self.bitrate_ladder[action] * self.chunk_duration_s
    }

    pub fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));
        if !(self.chunk_duration_s.is_finite() && self.chunk_duration_s > 0.0) {
            return v(format!(
                "chunk_duration_s must be positive, got {}",
                self.chunk_duration_s
            ));
        }
        if self.num_chunks == 0 {
            return v("num_chunks must be at least 1".into());
        }
        if self.bitrate_ladder.len() < 2 {
            return v("bitrate_ladder needs at least two rungs".into());
        }
        if self
            .bitrate_ladder
            .iter()
            .any(|b| !(b.is_finite() && *b > 0.0))
        {
            return v("bitrate_ladder entries must be positive".into());
        }
        if self.bitrate_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return v("bitrate_ladder must be strictly ascending".into());
        }
        if !(self.buffer_max_s.is_finite() && self.buffer_max_s >= self.chunk_duration_s) {
            return v(format!(
                "buffer_max_s ({}) must be at least chunk_duration_s ({})",
                self.buffer_max_s, self.chunk_duration_s
            ));
        }
        if !(self.rtt_s.is_finite() && self.rtt_s >= 0.0) {
            return v(format!("rtt_s must be non-negative, got {}", self.rtt_s));
        }
        if !(self.eta_low.is_finite() && self.eta_low > 0.0 && self.eta_high >= self.eta_low)
            || !self.eta_high.is_finite()
        {
            return v(format!(
                "need 0 < eta_low <= eta_high, got [{}, {}]",
                self.eta_low, self.eta_high
            ));
        }
        self.qoe.validate()
    }
}

/// Running sums of the QoE terms over an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QoELedger {
    pub quality: f64,
    pub switch_penalty: f64,
    pub rebuffer_s: f64,
    pub wait_s: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub chunk_index: usize,
    pub buffer_s: f64,
    /// Start time of the next download, relative to the episode start.
    pub clock_s: f64,
    pub last_action: Option<usize>,
    pub last_bitrate: Option<f64>,
    pub last_quality: Option<f64>,
    pub last_delay_s: f64,
    /// Most recent first, at most `HISTORY_LEN` entries.
    pub throughput_history: VecDeque<f64>,
    /// Trace time at which the episode started.
    pub trace_offset_s: f64,
    pub cumulative: QoELedger,
}

impl SessionState {
    fn fresh(trace_offset_s: f64) -> Self {
        SessionState {
            chunk_index: 0,
            buffer_s: 0.0,
            clock_s: 0.0,
            last_action: None,
            last_bitrate: None,
            last_quality: None,
            last_delay_s: 0.0,
            throughput_history: VecDeque::with_capacity(HISTORY_LEN),
            trace_offset_s,
            cumulative: QoELedger::default(),
        }
    }
}

/// Everything measured while downloading one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub chunk: usize,
    pub action: usize,
    pub bitrate_mbps: f64,
    /// Transfer time plus RTT, before noise.
    pub download_s: f64,
    pub eta: f64,
    pub t_delay_s: f64,
    pub rebuffer_s: f64,
    pub wait_s: f64,
    pub buffer_before_s: f64,
    pub buffer_s: f64,
    /// Mean trace speed over the download window.
    pub throughput_mbps: f64,
    pub quality: f64,
    /// `|q_i - q_{i-1}|`, zero on the first chunk.
    pub switch_penalty: f64,
    pub reward: f64,
}

impl StepOutcome {
    pub fn write_csv_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            self.chunk,
            self.action,
            self.bitrate_mbps,
            self.throughput_mbps,
            self.t_delay_s,
            self.rebuffer_s,
            self.wait_s,
            self.buffer_s,
            self.quality,
            self.reward
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Builds the observation vector for `state`.
pub fn observe(state: &SessionState, config: &SessionConfig) -> Observation {
    let m = config.num_actions();
    let mut v = Vec::with_capacity(config.observation_len());
    v.push(state.last_action.map_or(0.0, |a| a as f64 / (m - 1) as f64));
    v.push(state.buffer_s / config.buffer_max_s);
    for k in 0..HISTORY_LEN {
        v.push(state.throughput_history.get(k).copied().unwrap_or(0.0));
    }
    v.push(state.last_delay_s);
    for a in 0..m {
        v.push(config.chunk_size_mbits(a));
    }
    v.push((config.num_chunks - state.chunk_index) as f64 / config.num_chunks as f64);
    Observation(v)
}

#[derive(Debug, Clone)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: StepOutcome,
}

/// One streaming episode.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    state: SessionState,
}

impl Session {
    /// Starts an episode at a trace position drawn from `seed`.
    pub fn reset(
        config: &SessionConfig,
        trace: &BandwidthTrace,
        seed: u64,
    ) -> Result<(Session, Observation)> {
        let mut rng = SimRng::seed_from_u64(seed);
        let offset = rng.random::<f64>() * trace.duration();
        let s = Session::start(config, offset)?;
        let obs = s.observe();
        Ok((s, obs))
    }

    /// Starts an episode at trace time `trace_offset_s`.
    pub fn start(config: &SessionConfig, trace_offset_s: f64) -> Result<Session> {
        config.validate()?;
        if !(trace_offset_s.is_finite() && trace_offset_s >= 0.0) {
            return Err(Error::Usage(format!(
                "trace offset must be non-negative, got {trace_offset_s}"
            )));
        }
        Ok(Session {
            config: config.clone(),
            state: SessionState::fresh(trace_offset_s),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.chunk_index >= self.config.num_chunks
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.config)
    }

    /// Downloads the next chunk at ladder rung `action`.
    pub fn step(&mut self, action: usize, trace: &BandwidthTrace, rng: &mut SimRng) -> Result<Step> {
        let m = self.config.num_actions();
        if action >= m {
            return Err(Error::Usage(format!(
                "action {action} out of range for a {m}-rung ladder"
            )));
        }
        if self.is_done() {
            return Err(Error::Usage("session already finished".into()));
        }
        let cfg = &self.config;
        let st = &mut self.state;

        let bitrate = cfg.bitrate_ladder[action];
        let size = cfg.chunk_size_mbits(action);
        let t_start = st.trace_offset_s + st.clock_s;
        let download_s = trace.transfer_time(t_start, size) + cfg.rtt_s;
        let u: f64 = rng.random();
        let eta = cfg.eta_low + (cfg.eta_high - cfg.eta_low) * u;
        let t_delay = download_s * eta;
        let throughput = trace.average_speed(t_start, t_delay);

        let buffer_before = st.buffer_s;
        let rebuffer = (t_delay - buffer_before).max(0.0);
        let drained = (buffer_before - t_delay).max(0.0);
        let wait = (drained + cfg.chunk_duration_s - cfg.buffer_max_s).max(0.0);
        let buffer_after = (drained + cfg.chunk_duration_s - wait).clamp(0.0, cfg.buffer_max_s);

        let q = quality(bitrate, &cfg.qoe)?;
        let switch = st.last_quality.map_or(0.0, |prev| (q - prev).abs());
        let reward = q - cfg.qoe.mu1 * switch - cfg.qoe.mu2 * rebuffer;

        let outcome = StepOutcome {
            chunk: st.chunk_index,
            action,
            bitrate_mbps: bitrate,
            download_s,
            eta,
            t_delay_s: t_delay,
            rebuffer_s: rebuffer,
            wait_s: wait,
            buffer_before_s: buffer_before,
            buffer_s: buffer_after,
            throughput_mbps: throughput,
            quality: q,
            switch_penalty: switch,
            reward,
        };

        st.chunk_index += 1;
        st.buffer_s = buffer_after;
        st.clock_s += t_delay + wait;
        st.last_action = Some(action);
        st.last_bitrate = Some(bitrate);
        st.last_quality = Some(q);
        st.last_delay_s = t_delay;
        st.throughput_history.push_front(throughput);
        st.throughput_history.truncate(HISTORY_LEN);
        st.cumulative.quality += q;
        st.cumulative.switch_penalty += switch;
        st.cumulative.rebuffer_s += rebuffer;
        st.cumulative.wait_s += wait;
        st.cumulative.reward += reward;

        Ok(Step {
            observation: self.observe(),
            reward,
            done: self.is_done(),
            outcome,
        })
    }
}

/// Episode QoE: total quality minus weighted switching and stall totals.
pub fn episode_qoe(outcomes: &[StepOutcome], w: &QoEWeights) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Usage("episode_qoe needs at least one step".into()));
    }
    let q: f64 = outcomes.iter().map(|o| o.quality).sum();
    let sw: f64 = outcomes.iter().map(|o| o.switch_penalty).sum();
    let rb: f64 = outcomes.iter().map(|o| o.rebuffer_s).sum();
    Ok(q - w.mu1 * sw - w.mu2 * rb)
}
