//! Bandwidth traces: synthetic stationary profiles, regime-switching
//! compositions, a plain-text CSV format and zero-order-hold replay.
//!
//! A trace is a sequence of `(t, speed)` samples. Each sample's speed holds
//! until the next sample; the last sample holds for one more sampling
//! interval, which defines the trace duration. Queries past the duration
//! wrap around, so an episode may outlive the trace it replays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from_seed, SimRng};
use crate::{Error, Result};

/// Per-sample jitter is clipped to `±MAX_JITTER` relative deviation, which
/// keeps every speed at or above 5% of the profile mean.
const MAX_JITTER: f64 = 0.95;

/// Regime label for samples that carry none.
pub const DEFAULT_REGIME: &str = "trace";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProfile {
    pub name: String,
    pub mean_mbps: f64,
    /// Relative standard deviation of per-sample noise, in `[0, 1)`.
    pub jitter_fraction: f64,
    pub sample_period_s: f64,
}

impl BandwidthProfile {
    pub fn new(
        name: impl Into<String>,
        mean_mbps: f64,
        jitter_fraction: f64,
        sample_period_s: f64,
    ) -> Result<Self> {
        let p = BandwidthProfile {
            name: name.into(),
            mean_mbps,
            jitter_fraction,
            sample_period_s,
        };
        p.validate()?;
        Ok(p)
    }

    /// High-bandwidth default: 4.5 Mbps mean, above the top of the default ladder.
    pub fn hbw() -> Self {
        BandwidthProfile {
            name: "HBW".into(),
            mean_mbps: 4.5,
            jitter_fraction: 0.15,
            sample_period_s: 1.0,
        }
    }

    /// Low-bandwidth default: 0.8 Mbps mean, between the second and third rung.
    pub fn lbw() -> Self {
        BandwidthProfile {
            name: "LBW".into(),
            mean_mbps: 0.8,
            jitter_fraction: 0.15,
            sample_period_s: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_mbps.is_finite() && self.mean_mbps > 0.0) {
            return Err(Error::Validation(format!(
                "profile {}: mean_mbps must be positive, got {}",
                self.name, self.mean_mbps
            )));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(Error::Validation(format!(
                "profile {}: jitter_fraction must lie in [0, 1), got {}",
                self.name, self.jitter_fraction
            )));
        }
        if !(self.sample_period_s.is_finite() && self.sample_period_s > 0.0) {
            return Err(Error::Validation(format!(
                "profile {}: sample_period_s must be positive, got {}",
                self.name, self.sample_period_s
            )));
        }
        Ok(())
    }

    fn draw_speed(&self, rng: &mut SimRng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let z = (z * self.jitter_fraction).clamp(-MAX_JITTER, MAX_JITTER);
        self.mean_mbps * (1.0 + z)
    }
}

/// Ordered list of `(profile name, duration)` segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    pub segments: Vec<(String, f64)>,
}

impl RegimeSchedule {
    pub fn new(segments: Vec<(String, f64)>) -> Result<Self> {
        let s = RegimeSchedule { segments };
        s.validate()?;
        Ok(s)
    }

    /// `pattern` repeated `repeats` times, each segment lasting `segment_s`.
    pub fn alternating(pattern: &[&str], segment_s: f64, repeats: usize) -> Result<Self> {
        let segments = (0..repeats)
            .flat_map(|_| pattern.iter().map(|p| (p.to_string(), segment_s)))
            .collect();
        Self::new(segments)
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Validation("regime schedule is empty".into()));
        }
        for (name, d) in &self.segments {
            if !(d.is_finite() && *d > 0.0) {
                return Err(Error::Validation(format!(
                    "segment {name}: duration must be positive, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// A time-indexed download-speed signal with a regime label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    times: Vec<f64>,
    speeds: Vec<f64>,
    regimes: Vec<String>,
    /// `prefix[k]`: Mbits deliverable on `[0, start_k)`, with `start_0 = 0`.
    prefix: Vec<f64>,
    duration: f64,
}

impl BandwidthTrace {
    /// Builds a trace from `(t, speed)` samples and one label per sample.
    pub fn new(samples: Vec<(f64, f64)>, regimes: Vec<String>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Validation(format!(
                "a trace needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if regimes.len() != samples.len() {
            return Err(Error::Validation(format!(
                "{} regime labels for {} samples",
                regimes.len(),
                samples.len()
            )));
        }
        for (i, &(t, s)) in samples.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Validation(format!(
                    "sample {i}: timestamp must be finite and non-negative, got {t}"
                )));
            }
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Validation(format!(
                    "sample {i}: speed must be positive, got {s}"
                )));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(Error::Validation(format!(
                    "sample {i}: non-increasing timestamp {t}"
                )));
            }
        }
        let (times, speeds): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let n = times.len();
        let duration = times[n - 1] + (times[n - 1] - times[n - 2]);
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for k in 0..n {
            let start = if k == 0 { 0.0 } else { times[k] };
            let end = if k + 1 < n { times[k + 1] } else { duration };
            prefix.push(prefix[k] + speeds[k] * (end - start));
        }
        Ok(BandwidthTrace {
            times,
            speeds,
            regimes,
            prefix,
            duration,
        })
    }

    /// Samples labelled with the default regime.
    pub fn unlabeled(samples: Vec<(f64, f64)>) -> Result<Self> {
        let n = samples.len();
        Self::new(samples, vec![DEFAULT_REGIME.to_string(); n])
    }

    /// Flat trace of `speed_mbps` over `duration_s`, sampled once per second.
    pub fn constant(speed_mbps: f64, duration_s: usize) -> Result<Self> {
        Self::unlabeled((0..duration_s.max(2)).map(|t| (t as f64, speed_mbps)).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.speeds.iter().copied())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn regime_ids(&self) -> &[String] {
        &self.regimes
    }

    /// End of the last sample's hold; the wrap period.
    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Time-weighted mean speed over one full period.
    pub fn mean_speed(&self) -> f64 {
        self.prefix[self.len()] / self.duration
    }

    fn hold_index(&self, local_t: f64) -> usize {
        // last k with times[k] <= local_t, or 0 before the first sample
        self.times.partition_point(|&t| t <= local_t).saturating_sub(1)
    }

    fn wrap(&self, t: f64) -> (f64, f64) {
        if t < self.duration {
            (0.0, t)
        } else {
            let periods = (t / self.duration).floor();
            let local = (t - periods * self.duration).max(0.0);
            if local >= self.duration {
                (periods + 1.0, 0.0)
            } else {
                (periods, local)
            }
        }
    }

    /// Download speed at time `t` (zero-order hold, wrapping past the end).
    pub fn sample_speed(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Usage(format!(
                "sample_speed needs a finite t >= 0, got {t}"
            )));
        }
        let (_, local) = self.wrap(t);
        Ok(self.speeds[self.hold_index(local)])
    }

    /// Mbits deliverable on `[0, t)`.
    pub fn cumulative_capacity(&self, t: f64) -> f64 {
        let (periods, local) = self.wrap(t.max(0.0));
        let k = self.hold_index(local);
        let start = if k == 0 { 0.0 } else { self.times[k] };
        periods * self.prefix[self.len()] + self.prefix[k] + self.speeds[k] * (local - start)
    }

    /// Time needed to move `mbits` starting at `t0`, inverting the piecewise
    /// linear cumulative capacity exactly.
    pub fn transfer_time(&self, t0: f64, mbits: f64) -> f64 {
        if mbits <= 0.0 {
            return 0.0;
        }
        let total = self.prefix[self.len()];
        let target = self.cumulative_capacity(t0) + mbits;
        let mut periods = (target / total).floor();
        let mut rem = target - periods * total;
        if rem >= total {
            periods += 1.0;
            rem -= total;
        }
        let rem = rem.max(0.0);
        // last k with prefix[k] <= rem
        let k = (self.prefix[..self.len()]
            .partition_point(|&p| p <= rem)
            .saturating_sub(1))
        .min(self.len() - 1);
        let start = if k == 0 { 0.0 } else { self.times[k] };
        let t_end = periods * self.duration + start + (rem - self.prefix[k]) / self.speeds[k];
        (t_end - t0).max(0.0)
    }

    /// Average speed over `[t0, t0 + dt]`; the hold value when `dt` is zero.
    pub fn average_speed(&self, t0: f64, dt: f64) -> f64 {
        if dt <= 0.0 {
            let (_, local) = self.wrap(t0.max(0.0));
            return self.speeds[self.hold_index(local)];
        }
        (self.cumulative_capacity(t0 + dt) - self.cumulative_capacity(t0)) / dt
    }

    /// Serializes to the trace CSV format with a trailing regime column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_seconds,speed_mbps,regime\n");
        for ((t, s), r) in self.samples().zip(&self.regimes) {
            let _ = writeln!(out, "{t},{s},{r}");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the trace CSV format. `origin` names the source in errors.
    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut samples: Vec<(f64, f64)> = Vec::new();
        let mut regimes = Vec::new();
        let mut seen_data = false;
        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let first_data_row = !seen_data;
            seen_data = true;
            if fields.len() < 2 || fields.len() > 3 {
                return Err(parse_err(
                    line_no,
                    format!("malformed row '{line}' (expected t_seconds,speed_mbps)"),
                ));
            }
            let t = fields[0].parse::<f64>();
            let s = fields[1].parse::<f64>();
            let (t, s) = match (t, s) {
                (Ok(t), Ok(s)) => (t, s),
                // optional header
                _ if first_data_row && fields[0].parse::<f64>().is_err() => continue,
                _ => {
                    return Err(parse_err(
                        line_no,
                        format!("malformed row '{line}' (expected two numbers)"),
                    ))
                }
            };
            if !t.is_finite() || t < 0.0 {
                return Err(parse_err(line_no, format!("invalid timestamp {t}")));
            }
            if let Some(&(prev, _)) = samples.last() {
                if t <= prev {
                    return Err(parse_err(line_no, "non-increasing timestamp".into()));
                }
            }
            if !(s.is_finite() && s > 0.0) {
                return Err(parse_err(line_no, format!("non-positive speed {s}")));
            }
            samples.push((t, s));
            regimes.push(fields.get(2).unwrap_or(&DEFAULT_REGIME).to_string());
        }
        if samples.len() < 2 {
            return Err(Error::Validation(format!(
                "{origin}: a trace needs at least 2 samples, found {}",
                samples.len()
            )));
        }
        BandwidthTrace::new(samples, regimes)
    }
}

/// Reads a trace file (`t_seconds,speed_mbps` rows, optional header and
/// `#` comments, LF or CRLF line endings).
pub fn load_trace(path: impl AsRef<Path>) -> Result<BandwidthTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BandwidthTrace::parse_csv(&text, &path.display().to_string())
}

fn push_profile_samples(
    profile: &BandwidthProfile,
    n: usize,
    offset: f64,
    rng: &mut SimRng,
    samples: &mut Vec<(f64, f64)>,
    regimes: &mut Vec<String>,
) {
    for j in 0..n {
        let t = offset + j as f64 * profile.sample_period_s;
        samples.push((t, profile.draw_speed(rng)));
        regimes.push(profile.name.clone());
    }
}

fn sample_count(duration_s: f64, period: f64) -> usize {
    (duration_s / period + 1e-9).floor() as usize
}

/// Stationary synthetic trace: one sample per period over `[0, duration_s)`,
/// each `mean × (1 + z)` with `z` a clipped zero-mean Gaussian.
pub fn generate_synthetic(
    profile: &BandwidthProfile,
    duration_s: f64,
    seed: u64,
) -> Result<BandwidthTrace> {
    profile.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Validation(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if duration_s < 2.0 * profile.sample_period_s {
        return Err(Error::Validation(format!(
            "duration {duration_s} s is shorter than two sample periods ({} s)",
            profile.sample_period_s
        )));
    }
    let n = sample_count(duration_s, profile.sample_period_s);
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(n);
    let mut regimes = Vec::with_capacity(n);
    push_profile_samples(profile, n, 0.0, &mut rng, &mut samples, &mut regimes);
    BandwidthTrace::new(samples, regimes)
}

/// Concatenates stationary segments in schedule order on a continuous time
/// axis. A single generator drives all segments, so a one-segment schedule
/// reproduces [`generate_synthetic`] exactly.
pub fn compose_nonstationary(
    profiles: &BTreeMap<String, BandwidthProfile>,
    schedule: &RegimeSchedule,
    seed: u64,
) -> Result<BandwidthTrace> {
    schedule.validate()?;
    for (name, duration) in &schedule.segments {
        let p = profiles
            .get(name)
            .ok_or_else(|| Error::Validation(format!("unknown profile '{name}' in schedule")))?;
        p.validate()?;
        if *duration < p.sample_period_s {
            return Err(Error::Validation(format!(
                "segment {name}: duration {duration} s is shorter than one sample period"
            )));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::new();
    let mut regimes = Vec::new();
    let mut offset = 0.0;
    for (name, duration) in &schedule.segments {
        let p = &profiles[name];
        let n = sample_count(*duration, p.sample_period_s);
        push_profile_samples(p, n, offset, &mut rng, &mut samples, &mut regimes);
        offset += n as f64 * p.sample_period_s;
    }
    BandwidthTrace::new(samples, regimes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sample() -> BandwidthTrace {
        BandwidthTrace::new(vec![(0.0, 4.0), (1.0, 2.0)], vec!["a".into(), "a".into()]).unwrap()
    }

    #[test]
    fn zero_jitter_is_flat() {
        let p = BandwidthProfile::new("flat", 4.0, 0.0, 1.0).unwrap();
        let tr = generate_synthetic(&p, 10.0, 3).unwrap();
        assert_eq!(tr.len(), 10);
        assert!(tr.speeds().iter().all(|&s| s == 4.0));
        assert_eq!(tr.duration(), 10.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = BandwidthProfile::hbw();
        let a = generate_synthetic(&p, 300.0, 11).unwrap();
        let b = generate_synthetic(&p, 300.0, 11).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = generate_synthetic(&p, 300.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn jitter_statistics() {
        let p = BandwidthProfile::new("x", 1.0, 0.3, 1.0).unwrap();
        let tr = generate_synthetic(&p, 10_000.0, 5).unwrap();
        let n = tr.len() as f64;
        let mean = tr.speeds().iter().sum::<f64>() / n;
        let var = tr.speeds().iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let cv = var.sqrt() / mean;
        assert!((cv / 0.3 - 1.0).abs() < 0.10, "cv {cv}");
    }

    #[test]
    fn rejects_bad_profiles_and_durations() {
        assert!(BandwidthProfile::new("x", 0.0, 0.1, 1.0).is_err());
        assert!(BandwidthProfile::new("x", -1.0, 0.1, 1.0).is_err());
        assert!(BandwidthProfile::new("x", 1.0, 1.0, 1.0).is_err());
        let p = BandwidthProfile::hbw();
        assert!(matches!(
            generate_synthetic(&p, 0.0, 1),
            Err(Error::Validation(_))
        ));
        assert!(generate_synthetic(&p, -5.0, 1).is_err());
        assert!(generate_synthetic(&p, 1.5, 1).is_err());
    }

    #[test]
    fn hold_and_wrap() {
        let tr = two_sample();
        assert_eq!(tr.duration(), 2.0);
        assert_eq!(tr.sample_speed(0.5).unwrap(), 4.0);
        assert_eq!(tr.sample_speed(1.0).unwrap(), 2.0);
        assert_eq!(tr.sample_speed(0.0).unwrap(), 4.0);
        assert_eq!(tr.sample_speed(tr.duration() + 0.5).unwrap(), 4.0);
        assert!(matches!(tr.sample_speed(-1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn before_first_sample_uses_first_speed() {
        let tr = BandwidthTrace::new(vec![(2.0, 3.0), (3.0, 1.0)], vec!["a".into(); 2]).unwrap();
        assert_eq!(tr.sample_speed(0.5).unwrap(), 3.0);
        assert_eq!(tr.cumulative_capacity(2.0), 6.0);
    }

    #[test]
    fn capacity_and_transfer_invert() {
        let tr = two_sample();
        // one full period moves 4 + 2 Mbits
        assert_eq!(tr.cumulative_capacity(2.0), 6.0);
        assert_eq!(tr.cumulative_capacity(5.0), 6.0 * 2.0 + 4.0);
        assert!((tr.transfer_time(0.0, 5.0) - 1.5).abs() < 1e-12);
        assert!((tr.transfer_time(0.5, 14.0) - 4.5).abs() < 1e-12);
        assert_eq!(tr.transfer_time(0.3, 0.0), 0.0);
        assert!((tr.average_speed(0.0, 2.0) - 3.0).abs() < 1e-12);
        assert_eq!(tr.average_speed(1.2, 0.0), 2.0);
    }

    #[test]
    fn compose_concatenates_regimes() {
        let mut profiles = BTreeMap::new();
        let hbw = BandwidthProfile::new("HBW", 5.0, 0.0, 1.0).unwrap();
        let lbw = BandwidthProfile::new("LBW", 1.0, 0.0, 1.0).unwrap();
        profiles.insert("HBW".to_string(), hbw.clone());
        profiles.insert("LBW".to_string(), lbw);
        let sched = RegimeSchedule::alternating(&["HBW", "LBW"], 10.0, 1).unwrap();
        let tr = compose_nonstationary(&profiles, &sched, 1).unwrap();
        assert_eq!(tr.len(), 20);
        for (i, ((t, s), r)) in tr.samples().zip(tr.regime_ids()).enumerate() {
            assert_eq!(t, i as f64);
            if t < 10.0 {
                assert_eq!((s, r.as_str()), (5.0, "HBW"));
            } else {
                assert_eq!((s, r.as_str()), (1.0, "LBW"));
            }
        }

        let single = RegimeSchedule::new(vec![("HBW".into(), 5.0)]).unwrap();
        let mut jittery = profiles.clone();
        jittery.insert(
            "HBW".into(),
            BandwidthProfile::new("HBW", 5.0, 0.2, 1.0).unwrap(),
        );
        assert_eq!(
            compose_nonstationary(&jittery, &single, 9).unwrap(),
            generate_synthetic(&jittery["HBW"], 5.0, 9).unwrap()
        );

        let rep = RegimeSchedule::alternating(&["HBW", "LBW"], 3.0, 4).unwrap();
        let tr = compose_nonstationary(&profiles, &rep, 2).unwrap();
        for (i, r) in tr.regime_ids().iter().enumerate() {
            let expect = if (i / 3) % 2 == 0 { "HBW" } else { "LBW" };
            assert_eq!(r, expect);
        }

        let bad = RegimeSchedule::new(vec![("MID".into(), 5.0)]).unwrap();
        assert!(matches!(
            compose_nonstationary(&profiles, &bad, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn parses_minimal_and_rejects_bad_rows() {
        let tr = BandwidthTrace::parse_csv("0,4.0\n1,3.5", "mem").unwrap();
        assert_eq!(tr.len(), 2);
        let tr = BandwidthTrace::parse_csv(
            "# comment\r\nt_seconds,speed_mbps\r\n0,4.0\r\n1,3.5\r\n",
            "mem",
        )
        .unwrap();
        assert_eq!(tr.speeds(), &[4.0, 3.5]);

        let err = BandwidthTrace::parse_csv("1,4.0\n1,4.0", "mem").unwrap_err();
        assert!(
            err.to_string().contains("non-increasing timestamp at line 2"),
            "{err}"
        );
        let err = BandwidthTrace::parse_csv("0,1\n1,0", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = BandwidthTrace::parse_csv("0,1\n1,x\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = BandwidthTrace::parse_csv("0,1\n1\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(BandwidthTrace::parse_csv("0,1\n", "mem").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let tr = generate_synthetic(&BandwidthProfile::lbw(), 120.0, 4).unwrap();
        tr.save(&path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), tr);
        assert!(matches!(
            load_trace(dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }
}
