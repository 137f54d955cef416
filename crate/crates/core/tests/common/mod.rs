//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod suites;

use rand::Rng;
use resin_core::net::{mlp_specs, Activation, DenseNetwork, InitScheme, LayerSpec, Matrix};
use resin_core::rng::{rng_from_seed, SimRng};

pub fn random_batch(rng: &mut SimRng, n: usize, d: usize, scale: f64) -> Matrix {
    let data = (0..n * d).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
    Matrix::from_vec(n, d, data).unwrap()
}

/// Random net with 1 or 2 hidden layers of width <= 16 and random biases.
pub fn random_net(rng: &mut SimRng, activation: Activation) -> DenseNetwork {
    let input = rng.random_range(1..=6);
    let depth = rng.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=16)).collect();
    let output = rng.random_range(1..=4);
    let specs = mlp_specs(input, &hidden, output, activation);
    let mut net = DenseNetwork::init(&specs, rng.random(), InitScheme::FanUniform).unwrap();
    for l in 0..net.num_layers() {
        for b in net.biases_mut(l) {
            *b = rng.random::<f64>() * 0.4 - 0.2;
        }
    }
    net
}

/// Straight-line recomputation of the network output, written with explicit
/// index arithmetic over the flat parameter vector.
pub fn naive_forward(net: &DenseNetwork, x: &[f64]) -> Vec<f64> {
    let flat = net.to_flat();
    let mut offset = 0;
    let mut cur = x.to_vec();
    for spec in net.specs() {
        let LayerSpec {
            in_dim,
            out_dim,
            activation,
        } = *spec;
        let w = &flat[offset..offset + in_dim * out_dim];
        let b = &flat[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
        offset += in_dim * out_dim + out_dim;
        let mut next = vec![0.0; out_dim];
        for (o, n) in next.iter_mut().enumerate() {
            let mut z = b[o];
            for i in 0..in_dim {
                z += w[o * in_dim + i] * cur[i];
            }
            *n = match activation {
                Activation::Relu => {
                    if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                }
                Activation::Tanh => z.tanh(),
                Activation::Identity => z,
            };
        }
        cur = next;
    }
    cur
}

/// Scalar test loss `sum(c * y + 0.5 * y^2)` over every output entry.
pub fn test_loss(net: &DenseNetwork, batch: &Matrix, c: &Matrix) -> f64 {
    let mut total = 0.0;
    for s in 0..batch.rows() {
        let y = naive_forward(net, batch.row(s));
        for (o, v) in y.iter().enumerate() {
            total += c[(s, o)] * v + 0.5 * v * v;
        }
    }
    total
}

/// Smallest |pre-activation| of any relu unit on the batch.
pub fn min_relu_margin(net: &DenseNetwork, batch: &Matrix) -> f64 {
    let (_, tape) = net.forward(batch).unwrap();
    let mut m = f64::INFINITY;
    for (l, spec) in net.specs().iter().enumerate() {
        if spec.activation == Activation::Relu {
            for v in tape.pre[l].as_slice() {
                m = m.min(v.abs());
            }
        }
    }
    m
}

/// Largest relative error between analytic and central-difference gradients
/// of [`test_loss`]. The denominator is floored at `1e-5`.
pub fn finite_difference_error(net: &DenseNetwork, batch: &Matrix, c: &Matrix, h: f64) -> f64 {
    let (out, tape) = net.forward(batch).unwrap();
    let mut dy = c.clone();
    for (d, y) in dy.as_mut_slice().iter_mut().zip(out.as_slice()) {
        *d += y;
    }
    let analytic = net.backward_loss(&tape, &dy).unwrap().params.to_flat();
    let base = net.to_flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_flat(&p).unwrap();
        let up = test_loss(&probe, batch, c);
        p[k] = base[k] - h;
        probe.set_flat(&p).unwrap();
        let down = test_loss(&probe, batch, c);
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-5);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    worst
}

/// Random net and batch whose relu units all sit at least `margin` from the kink.
pub fn kink_free_case(seed: u64, batch: usize, margin: f64) -> (DenseNetwork, Matrix, Matrix) {
    let mut rng = rng_from_seed(seed);
    loop {
        let activation = if rng.random::<bool>() {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let net = random_net(&mut rng, activation);
        let x = random_batch(&mut rng, batch, net.input_dim(), 1.5);
        if min_relu_margin(&net, &x) >= margin {
            let c = random_batch(&mut rng, batch, net.output_dim(), 1.0);
            return (net, x, c);
        }
    }
}

/// Linear-interpolation quantile computed from ranks, independent of the
/// library implementation.
pub fn rank_quantile(values: &[f64], p: f64) -> f64 {
    let n = values.len();
    // selection by counting ranks
    let kth = |k: usize| -> f64 {
        *values
            .iter()
            .find(|&&x| {
                let below = values.iter().filter(|&&y| y < x).count();
                let equal = values.iter().filter(|&&y| y == x).count();
                below <= k && k < below + equal
            })
            .unwrap()
    };
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        kth(n - 1)
    } else {
        kth(lo) + frac * (kth(lo + 1) - kth(lo))
    }
}

use resin_core::env::{episode_qoe, QoEWeights, Session, SessionConfig, StepOutcome};
use resin_core::trace::BandwidthTrace;

/// Irregularly sampled trace with log-uniform speeds in `[0.05, 20]` Mbps.
pub fn random_trace(rng: &mut SimRng) -> BandwidthTrace {
    let n = rng.random_range(2..60);
    let mut t = rng.random::<f64>() * 2.0;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let speed = (0.05f64.ln() + rng.random::<f64>() * (20.0f64 / 0.05).ln()).exp();
        samples.push((t, speed));
        t += 0.1 + rng.random::<f64>() * 3.0;
    }
    BandwidthTrace::unlabeled(samples).unwrap()
}

pub fn random_session_config(rng: &mut SimRng) -> SessionConfig {
    let rungs = rng.random_range(2..=8);
    let mut ladder: Vec<f64> = Vec::with_capacity(rungs);
    let mut b = 0.1 + rng.random::<f64>();
    for _ in 0..rungs {
        ladder.push(b);
        b += 0.05 + rng.random::<f64>() * 2.0;
    }
    let chunk = 0.5 + rng.random::<f64>() * 5.5;
    let eta_low = 0.5 + rng.random::<f64>() * 0.5;
    SessionConfig {
        chunk_duration_s: chunk,
        num_chunks: rng.random_range(1..=48),
        bitrate_ladder: ladder,
        buffer_max_s: chunk * (1.0 + rng.random::<f64>() * 10.0),
        rtt_s: rng.random::<f64>() * 0.2,
        eta_low,
        eta_high: eta_low + rng.random::<f64>() * 0.6,
        qoe: QoEWeights {
            mu1: rng.random::<f64>() * 2.0,
            mu2: rng.random::<f64>() * 10.0,
            alpha: 0.1 + rng.random::<f64>() * 2.0,
            beta: rng.random::<f64>(),
        },
    }
}

#[derive(Debug, Default)]
pub struct DynamicsReport {
    pub episodes: usize,
    pub steps: usize,
    pub violations: Vec<String>,
}

/// Plays random episodes with random actions on random traces and checks
/// buffer bounds, non-negative stall and wait, exact clock telescoping, the
/// buffer recurrence and reward decomposition.
pub fn dynamics_suite(episodes: usize, seed: u64) -> DynamicsReport {
    let mut rng = rng_from_seed(seed);
    let mut report = DynamicsReport::default();
    for e in 0..episodes {
        let trace = random_trace(&mut rng);
        let cfg = random_session_config(&mut rng);
        let offset = rng.random::<f64>() * trace.duration() * 3.0;
        let mut session = Session::start(&cfg, offset).unwrap();
        let mut outcomes: Vec<StepOutcome> = Vec::new();
        let mut clock = 0.0;
        let mut buffer = 0.0f64;
        let mut reward_sum = 0.0;
        while !session.is_done() {
            let a = rng.random_range(0..cfg.num_actions());
            let step = session.step(a, &trace, &mut rng).unwrap();
            let o = step.outcome;
            let mut fail = |what: &str| report.violations.push(format!("episode {e} chunk {}: {what}", o.chunk));
            if !(o.buffer_s >= 0.0 && o.buffer_s <= cfg.buffer_max_s) {
                fail("buffer outside [0, max]");
            }
            if !(o.rebuffer_s >= 0.0 && o.wait_s >= 0.0) {
                fail("negative stall or wait");
            }
            let drained = (buffer - o.t_delay_s).max(0.0);
            let expect_rebuffer = (o.t_delay_s - buffer).max(0.0);
            let expect_wait = (drained + cfg.chunk_duration_s - cfg.buffer_max_s).max(0.0);
            let expect_buffer = (drained + cfg.chunk_duration_s - expect_wait).max(0.0).min(cfg.buffer_max_s);
            if (o.rebuffer_s - expect_rebuffer).abs() > 1e-12
                || (o.wait_s - expect_wait).abs() > 1e-12
                || (o.buffer_s - expect_buffer).abs() > 1e-12
            {
                fail("buffer recurrence mismatch");
            }
            let expect_reward = o.quality - cfg.qoe.mu1 * o.switch_penalty - cfg.qoe.mu2 * o.rebuffer_s;
            if (o.reward - expect_reward).abs() > 1e-12 {
                fail("reward decomposition mismatch");
            }
            clock += o.t_delay_s + o.wait_s;
            buffer = o.buffer_s;
            reward_sum += o.reward;
            outcomes.push(o);
            report.steps += 1;
        }
        if session.state().clock_s != clock {
            report.violations.push(format!(
                "episode {e}: clock {} != telescoped sum {clock}",
                session.state().clock_s
            ));
        }
        let qoe = episode_qoe(&outcomes, &cfg.qoe).unwrap();
        if (qoe - reward_sum).abs() > 1e-9 {
            report.violations.push(format!("episode {e}: episode_qoe {qoe} vs reward sum {reward_sum}"));
        }
        report.episodes += 1;
    }
    report
}
