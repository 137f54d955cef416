//! Oracle suites shared by the property tests and the acceptance target. Each
//! returns the list of violations it found; empty means pass.

use rand::Rng;
use resin_core::net::{
    apply_update, mlp_specs, Activation, AdamConfig, AdamState, DenseNetwork, InitScheme, Matrix,
};
use resin_core::plasticity::{
    activity_index, detect_dormant, detect_silent, detect_zero_grad, dormancy_index, gradient_index,
    overlap_coefficient, LayerActivity, NeuronActivityReport, NeuronSet, SetTag,
};
use resin_core::resin::{
    perturbation_bound, reset_neuron, select_for_reset, NetworkRole, ResetMode, ResetSweeper, ResinConfig,
};
use resin_core::rng::{rng_from_seed, SimRng};

use super::{finite_difference_error, kink_free_case, random_batch, random_net};

fn random_activation(rng: &mut SimRng) -> Activation {
    if rng.random::<bool>() {
        Activation::Relu
    } else {
        Activation::Tanh
    }
}

/// Random relu/tanh net where some hidden neurons are forced dead (large
/// negative bias) so that zero columns show up in the tapes.
pub fn random_tape_net(rng: &mut SimRng) -> (DenseNetwork, Matrix) {
    let act = random_activation(rng);
    let mut net = random_net(rng, act);
    for l in 0..net.num_hidden() {
        for i in 0..net.specs()[l].out_dim {
            if rng.random::<f64>() < 0.15 {
                net.weights_mut(l).row_mut(i).fill(0.0);
                net.biases_mut(l)[i] = if act == Activation::Relu { -1.0 } else { 0.0 };
            }
        }
    }
    let n = rng.random_range(1..=12);
    let x = random_batch(rng, n, net.input_dim(), 2.0);
    (net, x)
}

/// Max relative finite-difference error over `nets` random kink-free cases.
pub fn gradient_oracle(nets: usize, seed: u64) -> (f64, Vec<String>) {
    let mut worst: f64 = 0.0;
    let mut violations = Vec::new();
    for k in 0..nets as u64 {
        let (net, x, c) = kink_free_case(seed.wrapping_add(k), 8, 1e-3);
        let err = finite_difference_error(&net, &x, &c, 1e-5);
        worst = worst.max(err);
        if !(err < 1e-4) {
            violations.push(format!("case {k}: relative error {err}"));
        }
    }
    (worst, violations)
}

/// Dormancy and gradient normalization identities over random tapes.
pub fn normalization_identity(tapes: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let mut violations = Vec::new();
    let mut checked = 0;
    for t in 0..tapes {
        let (net, x) = random_tape_net(&mut rng);
        let (tape, gtape) = net.aggregate_output_gradients(&x).unwrap();
        for (kind, indices) in [("s", dormancy_index(&tape).unwrap()), ("xi_g", gradient_index(&gtape).unwrap())] {
            for (l, idx) in indices.iter().enumerate() {
                if idx.degenerate {
                    if idx.values.iter().any(|&v| v != 0.0) {
                        violations.push(format!("tape {t} layer {l}: degenerate {kind} not zeroed"));
                    }
                    continue;
                }
                let mut total = 0.0;
                for v in &idx.values {
                    total += v;
                }
                let mean = total / idx.values.len() as f64;
                if (mean - 1.0).abs() > 1e-9 {
                    violations.push(format!("tape {t} layer {l}: {kind} mean {mean}"));
                }
                checked += 1;
            }
        }
    }
    if checked == 0 {
        violations.push("no non-degenerate layer was checked".into());
    }
    violations
}

/// `xi` recomputed elementwise from the raw tapes and compared bitwise.
pub fn activity_recomputation(tapes: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let mut violations = Vec::new();
    for t in 0..tapes {
        let (net, x) = random_tape_net(&mut rng);
        let (tape, gtape) = net.aggregate_output_gradients(&x).unwrap();
        let xi = activity_index(&tape, &gtape).unwrap();
        let n = x.rows();
        for l in 0..net.num_hidden() {
            let width = net.specs()[l].out_dim;
            let mut eh = vec![0.0; width];
            let mut eg = vec![0.0; width];
            for i in 0..width {
                let mut sh = 0.0;
                let mut sg = 0.0;
                for s in 0..n {
                    sh += tape.hidden(l)[(s, i)].abs();
                    sg += gtape.hidden[l][(s, i)].abs();
                }
                eh[i] = sh / n as f64;
                eg[i] = sg / n as f64;
            }
            let mut layer_sum = 0.0;
            for v in &eh {
                layer_sum += v;
            }
            let layer_mean = layer_sum / width as f64;
            for i in 0..width {
                let expect = if layer_mean < 1e-12 { 0.0 } else { eh[i] * eg[i] / layer_mean };
                if xi[l][i].to_bits() != expect.to_bits() {
                    violations.push(format!("tape {t} ({l},{i}): xi {} vs {expect}", xi[l][i]));
                }
            }
        }
    }
    violations
}

/// Overlap coefficient against brute-force list arithmetic.
pub fn overlap_brute_force(pairs: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let mut violations = Vec::new();
    for p in 0..pairs {
        let widths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=10)).collect();
        let draw = |rng: &mut SimRng| {
            let density = rng.random::<f64>();
            let mut members = Vec::new();
            for (l, &w) in widths.iter().enumerate() {
                for i in 0..w {
                    if rng.random::<f64>() < density * 0.5 {
                        members.push((l, i));
                    }
                }
            }
            members
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let common = a.iter().filter(|m| b.contains(m)).count();
        let denom = a.len().min(b.len());
        let expect = if denom == 0 { None } else { Some(common as f64 / denom as f64) };
        let sa = NeuronSet::from_members(SetTag::Dormant, widths.clone(), a).unwrap();
        let sb = NeuronSet::from_members(SetTag::Dormant, widths.clone(), b).unwrap();
        let got = overlap_coefficient(&sa, &sb);
        if got != expect {
            violations.push(format!("pair {p}: {got:?} vs {expect:?}"));
        }
        if let Some(v) = got {
            if !(0.0..=1.0).contains(&v) {
                violations.push(format!("pair {p}: overlap {v} outside [0, 1]"));
            }
        }
    }
    violations
}

fn all_zero(it: impl Iterator<Item = f64>) -> bool {
    let mut any = false;
    for v in it {
        any = true;
        if v != 0.0 {
            return false;
        }
    }
    any
}

/// Explicit constructions for the forward, forward-to-backward and backward
/// dormancy properties, both directions of the silence characterization,
/// and a fixed instance of the joint-activity bound.
pub fn dormancy_fixtures() -> Vec<String> {
    let mut v = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            v.push(what.to_string());
        }
    };
    let x = random_batch(&mut rng_from_seed(99), 24, 3, 1.0);

    // Dead relu in layer 0: pre-activation negative on every sample.
    let mut net = DenseNetwork::init(&mlp_specs(3, &[5, 4], 2, Activation::Relu), 17, InitScheme::FanUniform).unwrap();
    net.biases_mut(0)[1] = -20.0;
    let (tape, gtape) = net.aggregate_output_gradients(&x).unwrap();
    let report = NeuronActivityReport::from_tapes(&tape, &gtape).unwrap();
    check(report.layers[0].s[1] == 0.0, "dead neuron should have s = 0");
    // forward dormancy: s = 0 means h vanishes on every sample
    check(all_zero(tape.hidden(0).column(1)), "s = 0 but h is not identically zero");
    // forward-to-backward: zero input-Jacobian and zero afferent gradient
    let jac = net.neuron_input_gradient(&tape, 0, 1).unwrap();
    check(all_zero(jac.as_slice().iter().copied()), "s = 0 but input-Jacobian is nonzero");
    check(
        all_zero(gtape.params.weights[0].row(1).iter().copied()) && gtape.params.biases[0][1] == 0.0,
        "s = 0 but afferent parameter gradient is nonzero",
    );
    // characterization, forward direction: zero gradient plus a zero activation
    check(tape.hidden(0)[(0, 1)] == 0.0, "no zero activation on the batch");

    // Converse: zero afferent row and bias means constant h with zero
    // Jacobian; a single zero activation then forces s = 0.
    let mut net = DenseNetwork::init(&mlp_specs(3, &[5, 4], 2, Activation::Tanh), 18, InitScheme::FanUniform).unwrap();
    net.weights_mut(1).row_mut(2).fill(0.0);
    net.biases_mut(1)[2] = 0.0;
    let (tape, gtape) = net.aggregate_output_gradients(&x).unwrap();
    let jac = net.neuron_input_gradient(&tape, 1, 2).unwrap();
    check(all_zero(jac.as_slice().iter().copied()), "zero afferent row but nonzero Jacobian");
    check(tape.hidden(1)[(3, 2)] == 0.0, "constructed neuron has no zero activation");
    let report = NeuronActivityReport::from_tapes(&tape, &gtape).unwrap();
    check(report.layers[1].s[2] == 0.0, "zero gradient with a zero activation but s != 0");
    check(report.layers[1].xi[2] == 0.0, "s = 0 but xi != 0");

    // Backward dormancy: afferent row, bias and efferent column all zero.
    let mut net = DenseNetwork::init(&mlp_specs(3, &[6, 5], 2, Activation::Tanh), 19, InitScheme::FanUniform).unwrap();
    net.weights_mut(0).row_mut(4).fill(0.0);
    net.biases_mut(0)[4] = 0.0;
    net.zero_efferent(0, 4).unwrap();
    let (tape, gtape) = net.aggregate_output_gradients(&x).unwrap();
    check(all_zero(tape.hidden(0).column(4)), "disconnected neuron has nonzero h");
    check(all_zero(gtape.hidden[0].column(4)), "disconnected neuron has nonzero g");
    let report = NeuronActivityReport::from_tapes(&tape, &gtape).unwrap();
    check(
        report.layers[0].s[4] == 0.0 && report.layers[0].xi_g[4] == 0.0,
        "disconnected neuron not silent",
    );

    // Joint-activity bound on a hand-built layer.
    let layer = LayerActivity::from_means(vec![0.01, 2.0, 4.0], vec![0.02, 1.0, 0.5]).unwrap();
    let m = layer.layer_mean_abs_h;
    let eps: f64 = 0.001;
    check(
        layer.mean_abs_h[0] < eps.sqrt() && layer.mean_abs_g[0] < eps.sqrt(),
        "fixture not small in both directions",
    );
    check(layer.xi[0] < eps / m, "small h and g but xi >= eps / m");
    check(layer.xi[0] * m < eps * (1.0 + 1e-12), "xi < eps but product not below eps * mean");
    v
}

/// Joint-activity inequality fuzz over random tapes. Both directions use a
/// relative slack of 1e-12 for the final rounding of each product.
pub fn joint_activity_fuzz(tapes: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = rng_from_seed(seed);
    let mut violations = Vec::new();
    let mut premises = 0;
    let slack = 1.0 + 1e-12;
    for t in 0..tapes {
        let (mut net, x) = random_tape_net(&mut rng);
        // shrink some neurons so the small-activity premise fires
        for l in 0..net.num_hidden() {
            let i = rng.random_range(0..net.specs()[l].out_dim);
            let c = 10f64.powf(-rng.random_range(0.0..4.0));
            for w in net.weights_mut(l).row_mut(i) {
                *w *= c;
            }
            net.biases_mut(l)[i] *= c;
        }
        let report = NeuronActivityReport::probe(&net, &x).unwrap();
        for (l, layer) in report.layers.iter().enumerate() {
            if layer.degenerate_h {
                continue;
            }
            let mean = layer.layer_mean_abs_h;
            for i in 0..layer.width() {
                let product = layer.mean_abs_h[i] * layer.mean_abs_g[i];
                let eps = layer.xi[i].max(1e-300) * 10f64.powf(rng.random_range(-1.0..1.0));
                if layer.xi[i] < eps {
                    premises += 1;
                    if !(product < eps * mean * slack) {
                        violations.push(format!("tape {t} ({l},{i}): xi < eps but product {product} >= eps*mean"));
                    }
                }
                let eps2 = product.max(1e-300) * 10f64.powf(rng.random_range(-0.5..2.0));
                let r = eps2.sqrt();
                if layer.mean_abs_h[i] < r && layer.mean_abs_g[i] < r {
                    premises += 1;
                    if !(layer.xi[i] < eps2 / mean * slack) {
                        violations.push(format!("tape {t} ({l},{i}): small h, g but xi {} >= eps/m", layer.xi[i]));
                    }
                }
            }
        }
    }
    (premises, violations)
}

/// Hand-built net with exactly one silent neuron; silent mode with zero
/// thresholds must reset that neuron and nothing else. The expected set is
/// recomputed from raw tapes.
pub fn constructed_reset_fixture() -> Vec<String> {
    let mut v = Vec::new();
    let mut net = DenseNetwork::init(&mlp_specs(4, &[6, 5], 3, Activation::Relu), 31, InitScheme::FanUniform).unwrap();
    for l in 0..2 {
        for b in net.biases_mut(l) {
            *b = 0.5;
        }
    }
    net.biases_mut(0)[3] = -50.0;
    net.zero_efferent(0, 3).unwrap();
    let x = random_batch(&mut rng_from_seed(4), 32, 4, 1.0);
    let (tape, gtape) = net.aggregate_output_gradients(&x).unwrap();
    let mut expected = Vec::new();
    for l in 0..net.num_hidden() {
        for i in 0..net.specs()[l].out_dim {
            if all_zero(tape.hidden(l).column(i)) && all_zero(gtape.hidden[l].column(i)) {
                expected.push((l, i));
            }
        }
    }
    if expected != vec![(0, 3)] {
        v.push(format!("fixture construction produced silent set {expected:?}"));
    }
    let cfg = ResinConfig {
        eps_g: 0.0,
        eps_d: 0.0,
        frequency: 1,
        mode: ResetMode::Silent,
        probe_batch_size: 32,
    };
    let (before, _) = net.forward(&x).unwrap();
    let mut adam = AdamState::new(&net);
    let out = ResetSweeper::new()
        .maybe_reset(&mut net, Some(&mut adam), &x, &cfg, 1, NetworkRole::Actor, &mut rng_from_seed(5))
        .unwrap();
    let got: Vec<(usize, usize)> = out.events.iter().map(|e| (e.layer, e.neuron)).collect();
    if got != expected {
        v.push(format!("reset {got:?}, expected {expected:?}"));
    }
    let (after, _) = net.forward(&x).unwrap();
    if before != after {
        v.push("resetting a dead neuron changed probe outputs".into());
    }
    v
}

/// Dormant-only sweeps with a zero threshold touch only neurons whose probe
/// output is exactly zero, so probe outputs must stay bit-identical.
pub fn dead_reset_preserves_outputs(nets: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::new();
    let mut resets = 0;
    let cfg = ResinConfig {
        eps_g: 0.0,
        eps_d: 0.0,
        frequency: 1,
        mode: ResetMode::DormantOnly,
        probe_batch_size: 64,
    };
    for k in 0..nets {
        let (mut net, x) = random_tape_net(&mut rng);
        let (before, tape) = net.forward(&x).unwrap();
        let report = NeuronActivityReport::probe(&net, &x).unwrap();
        let out = ResetSweeper::new()
            .reset_from_report(&mut net, None, &report, &cfg, 1, NetworkRole::Critic, &mut rng)
            .unwrap();
        for e in &out {
            if !all_zero(tape.hidden(e.layer).column(e.neuron)) && !report.layers[e.layer].degenerate_h {
                v.push(format!("net {k}: reset a live neuron ({}, {})", e.layer, e.neuron));
            }
        }
        resets += out.len();
        let (after, _) = net.forward(&x).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&before) != bits(&after) {
            v.push(format!("net {k}: outputs changed after {} dead-neuron resets", out.len()));
        }
    }
    (resets, v)
}

/// Random report with a mix of exact zeros and positive means.
pub fn random_report(rng: &mut SimRng) -> NeuronActivityReport {
    let layers = (0..rng.random_range(1..=3))
        .map(|_| {
            let w = rng.random_range(1..=12);
            let draw = |rng: &mut SimRng| -> Vec<f64> {
                (0..w)
                    .map(|_| if rng.random::<f64>() < 0.25 { 0.0 } else { rng.random::<f64>() * 2.0 })
                    .collect()
            };
            let h = draw(rng);
            let g = draw(rng);
            LayerActivity::from_means(h, g).unwrap()
        })
        .collect();
    NeuronActivityReport { layers }
}

/// Silent selection is contained in both single-criterion selections.
pub fn mode_lattice(reports: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::new();
    for k in 0..reports {
        let report = random_report(&mut rng);
        let eps = [0.0, 0.025, 0.1, 0.5, 1.0][rng.random_range(0..5)];
        let sel = |mode| {
            select_for_reset(
                &report,
                &ResinConfig {
                    eps_g: eps,
                    eps_d: eps,
                    mode,
                    ..Default::default()
                },
            )
        };
        let silent = sel(ResetMode::Silent);
        let dormant = sel(ResetMode::DormantOnly);
        let gradient = sel(ResetMode::GradientOnly);
        if !silent.is_subset(&dormant) || !silent.is_subset(&gradient) {
            v.push(format!("report {k}: silent set not contained at eps {eps}"));
        }
        if !sel(ResetMode::Off).is_empty() {
            v.push(format!("report {k}: off mode selected neurons"));
        }
        if silent != detect_silent(&report, eps, eps)
            || dormant != detect_dormant(&report, eps)
            || gradient != detect_zero_grad(&report, eps)
        {
            v.push(format!("report {k}: selection disagrees with detectors"));
        }
        if silent.len() != dormant.intersection_len(&gradient) {
            v.push(format!("report {k}: silent set is not the intersection"));
        }
    }
    v
}

/// Per-event output change after a single reset stays within the
/// downstream-norm bound.
pub fn perturbation_bounds(nets: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_from_seed(seed);
    let mut v = Vec::new();
    for k in 0..nets {
        let (mut net, x) = random_tape_net(&mut rng);
        let l = rng.random_range(0..net.num_hidden());
        let i = rng.random_range(0..net.specs()[l].out_dim);
        let bound = perturbation_bound(&net, &x, l, i).unwrap();
        let (before, _) = net.forward(&x).unwrap();
        reset_neuron(&mut net, None, l, i, &mut rng).unwrap();
        let (after, _) = net.forward(&x).unwrap();
        for s in 0..x.rows() {
            let change: f64 = before.row(s).iter().zip(after.row(s)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if change > bound * (1.0 + 1e-9) + 1e-12 {
                v.push(format!("net {k} ({l},{i}) sample {s}: change {change} > bound {bound}"));
            }
        }
    }
    v
}

/// A freshly reset neuron has zero gradient index on the next probe, yet its
/// efferent weights move again under training with a nonzero upstream signal.
pub fn revival_after_reset(seed: u64) -> Vec<String> {
    let mut v = Vec::new();
    let mut rng = rng_from_seed(seed);
    let mut net = DenseNetwork::init(&mlp_specs(3, &[8, 8], 2, Activation::Tanh), seed, InitScheme::FanUniform).unwrap();
    let x = random_batch(&mut rng, 16, 3, 1.0);
    let mut adam = AdamState::new(&net);
    reset_neuron(&mut net, Some(&mut adam), 0, 5, &mut rng).unwrap();
    let report = NeuronActivityReport::probe(&net, &x).unwrap();
    if report.layers[0].xi_g[5] != 0.0 {
        v.push(format!("just-reset neuron has xi_g {}", report.layers[0].xi_g[5]));
    }
    let target = random_batch(&mut rng, 16, 2, 1.0);
    let hyper = AdamConfig::with_lr(1e-2);
    for _ in 0..5 {
        let (out, tape) = net.forward(&x).unwrap();
        let mut dy = out.clone();
        for (d, t) in dy.as_mut_slice().iter_mut().zip(target.as_slice()) {
            *d -= t;
        }
        let g = net.backward_loss(&tape, &dy).unwrap();
        apply_update(&mut net, &g.params, &mut adam, &hyper).unwrap();
    }
    if net.weights(1).column(5).all(|w| w == 0.0) {
        v.push("efferent column stayed zero under training".into());
    }
    let report = NeuronActivityReport::probe(&net, &x).unwrap();
    if report.layers[0].xi_g[5] == 0.0 {
        v.push("revived neuron still has zero gradient index".into());
    }
    v
}

/// Identical inputs give identical events and parameters.
pub fn reset_determinism(seed: u64) -> Vec<String> {
    let run = || {
        let mut rng = rng_from_seed(seed);
        let (mut net, x) = random_tape_net(&mut rng);
        let mut adam = AdamState::new(&net);
        let cfg = ResinConfig {
            eps_g: 0.5,
            eps_d: 0.5,
            frequency: 1,
            mode: ResetMode::Silent,
            probe_batch_size: 16,
        };
        let out = ResetSweeper::new()
            .maybe_reset(&mut net, Some(&mut adam), &x, &cfg, 3, NetworkRole::Actor, &mut rng)
            .unwrap();
        (out.events, net.to_flat(), adam.moments_flat())
    };
    if run() != run() {
        vec!["two identical sweeps diverged".into()]
    } else {
        Vec::new()
    }
}
