//! Neuron-activity metrics over hidden layers.
//!
//! All expectations are means over the batch recorded in the tapes. Layer
//! means below [`DEGENERACY_FLOOR`] mark the layer degenerate; its indices are
//! reported as 0.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::net::{ActivationTape, DenseNetwork, GradientTape, Matrix};
use crate::{Error, Result};

pub const DEGENERACY_FLOOR: f64 = 1e-12;
pub const DEFAULT_THRESHOLD: f64 = 0.025;
pub const NA: &str = "NA";

/// Per-neuron CSV rows written at each snapshot.
pub const NEURON_LOG_HEADER: &str =
    "step,role,layer,neuron,mean_abs_h,mean_abs_g,s,xi_g,xi,is_dormant,is_zero_grad,is_silent";
/// Per-layer summary rows: ratios and overlaps against the previous snapshot.
pub const LAYER_LOG_HEADER: &str = "step,role,layer,LD,LDO,LZG,LZGO,LS,LSO";

/// Column means of `|m|`. Empty batches are rejected.
pub fn mean_abs_columns(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::Usage("metrics need a non-empty batch".into()));
    }
    let mut acc = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v.abs();
        }
    }
    let n = m.rows() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// A layer's values divided by their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIndex {
    pub values: Vec<f64>,
    pub layer_mean: f64,
    pub degenerate: bool,
}

pub fn normalize_by_layer_mean(means: &[f64]) -> LayerIndex {
    let layer_mean = if means.is_empty() {
        0.0
    } else {
        means.iter().sum::<f64>() / means.len() as f64
    };
    if layer_mean < DEGENERACY_FLOOR {
        return LayerIndex {
            values: vec![0.0; means.len()],
            layer_mean,
            degenerate: true,
        };
    }
    LayerIndex {
        values: means.iter().map(|m| m / layer_mean).collect(),
        layer_mean,
        degenerate: false,
    }
}

/// `s = E|h| / layer mean of E|h|`, one entry per hidden layer.
pub fn dormancy_index(tape: &ActivationTape) -> Result<Vec<LayerIndex>> {
    (0..tape.num_hidden())
        .map(|l| Ok(normalize_by_layer_mean(&mean_abs_columns(tape.hidden(l))?)))
        .collect()
}

/// `xi_g = E|g| / layer mean of E|g|`, one entry per hidden layer.
pub fn gradient_index(gtape: &GradientTape) -> Result<Vec<LayerIndex>> {
    gtape
        .hidden
        .iter()
        .map(|g| Ok(normalize_by_layer_mean(&mean_abs_columns(g)?)))
        .collect()
}

/// `xi = E|h| * E|g| / layer mean of E|h|` for one layer. Zero when the
/// forward layer mean is degenerate.
pub fn activity_from_means(mean_abs_h: &[f64], mean_abs_g: &[f64]) -> Vec<f64> {
    let fwd = normalize_by_layer_mean(mean_abs_h);
    if fwd.degenerate {
        return vec![0.0; mean_abs_h.len()];
    }
    mean_abs_h
        .iter()
        .zip(mean_abs_g)
        .map(|(h, g)| h * g / fwd.layer_mean)
        .collect()
}

pub fn activity_index(tape: &ActivationTape, gtape: &GradientTape) -> Result<Vec<Vec<f64>>> {
    check_same_batch(tape, gtape)?;
    (0..tape.num_hidden())
        .map(|l| {
            Ok(activity_from_means(
                &mean_abs_columns(tape.hidden(l))?,
                &mean_abs_columns(&gtape.hidden[l])?,
            ))
        })
        .collect()
}

fn check_same_batch(tape: &ActivationTape, gtape: &GradientTape) -> Result<()> {
    if tape.num_hidden() != gtape.hidden.len() {
        return Err(Error::Usage("tapes come from networks with different depth".into()));
    }
    for l in 0..tape.num_hidden() {
        if tape.hidden(l).shape() != gtape.hidden[l].shape() {
            return Err(Error::Usage(format!(
                "layer {l}: activation tape {:?} and gradient tape {:?} do not match",
                tape.hidden(l).shape(),
                gtape.hidden[l].shape()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerActivity {
    pub mean_abs_h: Vec<f64>,
    pub mean_abs_g: Vec<f64>,
    pub s: Vec<f64>,
    pub xi_g: Vec<f64>,
    pub xi: Vec<f64>,
    pub layer_mean_abs_h: f64,
    pub layer_mean_abs_g: f64,
    pub degenerate_h: bool,
    pub degenerate_g: bool,
}

impl LayerActivity {
    pub fn from_means(mean_abs_h: Vec<f64>, mean_abs_g: Vec<f64>) -> Result<Self> {
        if mean_abs_h.len() != mean_abs_g.len() || mean_abs_h.is_empty() {
            return Err(Error::Usage("forward and gradient means must be equally long and non-empty".into()));
        }
        if mean_abs_h.iter().chain(&mean_abs_g).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("activity means must be finite and non-negative".into()));
        }
        let s = normalize_by_layer_mean(&mean_abs_h);
        let g = normalize_by_layer_mean(&mean_abs_g);
        let xi = activity_from_means(&mean_abs_h, &mean_abs_g);
        Ok(LayerActivity {
            mean_abs_h,
            mean_abs_g,
            s: s.values,
            xi_g: g.values,
            xi,
            layer_mean_abs_h: s.layer_mean,
            layer_mean_abs_g: g.layer_mean,
            degenerate_h: s.degenerate,
            degenerate_g: g.degenerate,
        })
    }

    pub fn width(&self) -> usize {
        self.s.len()
    }
}

/// Every metric for every hidden neuron of one network on one batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronActivityReport {
    pub layers: Vec<LayerActivity>,
}

impl NeuronActivityReport {
    pub fn from_tapes(tape: &ActivationTape, gtape: &GradientTape) -> Result<Self> {
        check_same_batch(tape, gtape)?;
        let layers = (0..tape.num_hidden())
            .map(|l| {
                LayerActivity::from_means(
                    mean_abs_columns(tape.hidden(l))?,
                    mean_abs_columns(&gtape.hidden[l])?,
                )
            })
            .collect::<Result<_>>()?;
        Ok(NeuronActivityReport { layers })
    }

    /// Runs the probe batch forward and back through the summed-output target.
    pub fn probe(net: &DenseNetwork, batch: &Matrix) -> Result<Self> {
        if batch.rows() == 0 {
            return Err(Error::Usage("probe batch is empty".into()));
        }
        let (tape, gtape) = net.aggregate_output_gradients(batch)?;
        Self::from_tapes(&tape, &gtape)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerActivity::width).collect()
    }

    pub fn num_neurons(&self) -> usize {
        self.layers.iter().map(LayerActivity::width).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetTag {
    Dormant,
    ZeroGrad,
    Silent,
}

/// A set of hidden neurons `(layer, index)` of one network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronSet {
    pub tag: SetTag,
    widths: Vec<usize>,
    members: BTreeSet<(usize, usize)>,
}

impl NeuronSet {
    pub fn new(tag: SetTag, widths: Vec<usize>) -> Self {
        NeuronSet {
            tag,
            widths,
            members: BTreeSet::new(),
        }
    }

    pub fn from_members(
        tag: SetTag,
        widths: Vec<usize>,
        members: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut set = NeuronSet::new(tag, widths);
        for m in members {
            set.insert(m)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, (layer, neuron): (usize, usize)) -> Result<()> {
        match self.widths.get(layer) {
            Some(&w) if neuron < w => {
                self.members.insert((layer, neuron));
                Ok(())
            }
            _ => Err(Error::Usage(format!("neuron ({layer}, {neuron}) is outside the network"))),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, layer: usize, neuron: usize) -> bool {
        self.members.contains(&(layer, neuron))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.members.iter().copied()
    }

    pub fn is_subset(&self, other: &NeuronSet) -> bool {
        self.members.is_subset(&other.members)
    }

    pub fn intersection_len(&self, other: &NeuronSet) -> usize {
        self.members.intersection(&other.members).count()
    }

    /// Members that sit in `layer`.
    pub fn restrict(&self, layer: usize) -> NeuronSet {
        NeuronSet {
            tag: self.tag,
            widths: self.widths.clone(),
            members: self.members.iter().filter(|m| m.0 == layer).copied().collect(),
        }
    }

    pub fn remove_all(&mut self, other: &BTreeSet<(usize, usize)>) {
        self.members.retain(|m| !other.contains(m));
    }

    pub fn count_in_layer(&self, layer: usize) -> usize {
        self.members.iter().filter(|m| m.0 == layer).count()
    }
}

fn select(report: &NeuronActivityReport, tag: SetTag, pred: impl Fn(&LayerActivity, usize) -> bool) -> NeuronSet {
    let mut set = NeuronSet::new(tag, report.widths());
    for (l, layer) in report.layers.iter().enumerate() {
        for i in 0..layer.width() {
            if pred(layer, i) {
                set.members.insert((l, i));
            }
        }
    }
    set
}

/// Neurons with `s <= eps`.
pub fn detect_dormant(report: &NeuronActivityReport, eps: f64) -> NeuronSet {
    select(report, SetTag::Dormant, |l, i| l.s[i] <= eps)
}

/// Neurons with `xi_g <= eps`.
pub fn detect_zero_grad(report: &NeuronActivityReport, eps: f64) -> NeuronSet {
    select(report, SetTag::ZeroGrad, |l, i| l.xi_g[i] <= eps)
}

/// Neurons with `xi_g <= eps_g` and `s <= eps_d`.
pub fn detect_silent(report: &NeuronActivityReport, eps_g: f64, eps_d: f64) -> NeuronSet {
    select(report, SetTag::Silent, |l, i| l.xi_g[i] <= eps_g && l.s[i] <= eps_d)
}

/// `|A ∩ B| / min(|A|, |B|)`, or `None` when either set is empty.
pub fn overlap_coefficient(a: &NeuronSet, b: &NeuronSet) -> Option<f64> {
    let denom = a.len().min(b.len());
    if denom == 0 {
        return None;
    }
    Some(a.intersection_len(b) as f64 / denom as f64)
}

pub fn format_optional(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

/// The three classified sets of one report.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub dormant: NeuronSet,
    pub zero_grad: NeuronSet,
    pub silent: NeuronSet,
}

impl Classification {
    pub fn new(report: &NeuronActivityReport, eps_g: f64, eps_d: f64) -> Self {
        Classification {
            dormant: detect_dormant(report, eps_d),
            zero_grad: detect_zero_grad(report, eps_g),
            silent: detect_silent(report, eps_g, eps_d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRatios {
    pub layer: usize,
    pub dormant_ratio: f64,
    pub dormant_overlap: Option<f64>,
    pub zero_grad_ratio: f64,
    pub zero_grad_overlap: Option<f64>,
    pub silent_ratio: f64,
    pub silent_overlap: Option<f64>,
}

/// Per-layer ratios of each set, with overlaps against `previous` (restricted
/// to the same layer). Overlaps are `None` without a previous snapshot.
pub fn layer_ratios(current: &Classification, previous: Option<&Classification>) -> Vec<LayerRatios> {
    let widths = current.dormant.widths().to_vec();
    widths
        .iter()
        .enumerate()
        .map(|(l, &w)| {
            let ratio = |s: &NeuronSet| s.count_in_layer(l) as f64 / w as f64;
            let overlap = |cur: &NeuronSet, prev: Option<&NeuronSet>| {
                prev.and_then(|p| overlap_coefficient(&cur.restrict(l), &p.restrict(l)))
            };
            LayerRatios {
                layer: l,
                dormant_ratio: ratio(&current.dormant),
                dormant_overlap: overlap(&current.dormant, previous.map(|p| &p.dormant)),
                zero_grad_ratio: ratio(&current.zero_grad),
                zero_grad_overlap: overlap(&current.zero_grad, previous.map(|p| &p.zero_grad)),
                silent_ratio: ratio(&current.silent),
                silent_overlap: overlap(&current.silent, previous.map(|p| &p.silent)),
            }
        })
        .collect()
}

/// Appends one row per hidden neuron under [`NEURON_LOG_HEADER`].
pub fn write_neuron_rows(
    out: &mut String,
    step: u64,
    role: &str,
    report: &NeuronActivityReport,
    sets: &Classification,
) {
    for (l, layer) in report.layers.iter().enumerate() {
        for i in 0..layer.width() {
            let _ = writeln!(
                out,
                "{step},{role},{l},{i},{},{},{},{},{},{},{},{}",
                layer.mean_abs_h[i],
                layer.mean_abs_g[i],
                layer.s[i],
                layer.xi_g[i],
                layer.xi[i],
                u8::from(sets.dormant.contains(l, i)),
                u8::from(sets.zero_grad.contains(l, i)),
                u8::from(sets.silent.contains(l, i)),
            );
        }
    }
}

/// Appends one row per hidden layer under [`LAYER_LOG_HEADER`].
pub fn write_layer_rows(out: &mut String, step: u64, role: &str, ratios: &[LayerRatios]) {
    for r in ratios {
        let _ = writeln!(
            out,
            "{step},{role},{},{},{},{},{},{},{}",
            r.layer,
            r.dormant_ratio,
            format_optional(r.dormant_overlap),
            r.zero_grad_ratio,
            format_optional(r.zero_grad_overlap),
            r.silent_ratio,
            format_optional(r.silent_overlap),
        );
    }
}
