//! Periodic silent-neuron resets.
//!
//! A sweep probes the network, selects neurons per [`ResetMode`], redraws each
//! selected neuron's afferent row, zeros its efferent column and clears the
//! matching optimizer moments. Neurons reset at one sweep are exempt at the
//! next.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::net::{AdamState, DenseNetwork, Matrix};
use crate::plasticity::{
    detect_dormant, detect_silent, detect_zero_grad, NeuronActivityReport, NeuronSet, DEFAULT_THRESHOLD,
};
use crate::rng::SimRng;
use crate::{Error, Result};

pub const RESET_LOG_HEADER: &str = "step,role,layer,neuron,s,xi_g,mode";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// `xi_g <= eps_g` and `s <= eps_d`.
    Silent,
    /// `s <= eps_d`.
    DormantOnly,
    /// `xi_g <= eps_g`.
    GradientOnly,
    Off,
}

impl fmt::Display for ResetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResetMode::Silent => "silent",
            ResetMode::DormantOnly => "dormant_only",
            ResetMode::GradientOnly => "gradient_only",
            ResetMode::Off => "off",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResinConfig {
    pub eps_g: f64,
    pub eps_d: f64,
    /// Updates between sweeps.
    pub frequency: u64,
    pub mode: ResetMode,
    pub probe_batch_size: usize,
}

impl Default for ResinConfig {
    fn default() -> Self {
        ResinConfig {
            eps_g: DEFAULT_THRESHOLD,
            eps_d: DEFAULT_THRESHOLD,
            frequency: 10,
            mode: ResetMode::Off,
            probe_batch_size: 256,
        }
    }
}

impl ResinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_g >= 0.0) || !(self.eps_d >= 0.0) {
            return Err(Error::Validation("resin thresholds must be >= 0".into()));
        }
        if self.frequency == 0 {
            return Err(Error::Validation("resin.frequency must be >= 1".into()));
        }
        if self.probe_batch_size == 0 {
            return Err(Error::Validation("resin.probe_batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_trigger(&self, step: u64) -> bool {
        step % self.frequency == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    Actor,
    Critic,
}

impl fmt::Display for NetworkRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkRole::Actor => "actor",
            NetworkRole::Critic => "critic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResetEvent {
    pub step: u64,
    pub role: NetworkRole,
    pub layer: usize,
    pub neuron: usize,
    /// Dormancy index that triggered the reset.
    pub s: f64,
    /// Gradient index that triggered the reset.
    pub xi_g: f64,
    pub mode: ResetMode,
}

impl ResetEvent {
    pub fn write_csv_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.step, self.role, self.layer, self.neuron, self.s, self.xi_g, self.mode
        );
    }
}

/// Neurons the mode would reset, before exemptions. `Off` selects nothing.
pub fn select_for_reset(report: &NeuronActivityReport, cfg: &ResinConfig) -> NeuronSet {
    match cfg.mode {
        ResetMode::Silent => detect_silent(report, cfg.eps_g, cfg.eps_d),
        ResetMode::DormantOnly => detect_dormant(report, cfg.eps_d),
        ResetMode::GradientOnly => detect_zero_grad(report, cfg.eps_g),
        ResetMode::Off => NeuronSet::new(crate::plasticity::SetTag::Silent, report.widths()),
    }
}

/// Resets one hidden neuron: afferent redraw, efferent zero, moments cleared.
pub fn reset_neuron(
    net: &mut DenseNetwork,
    adam: Option<&mut AdamState>,
    layer: usize,
    neuron: usize,
    rng: &mut SimRng,
) -> Result<()> {
    net.reinit_afferent(layer, neuron, rng)?;
    net.zero_efferent(layer, neuron)?;
    if let Some(state) = adam {
        state.zero_neuron(layer, neuron);
    }
    Ok(())
}

/// Result of one sweep call.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    /// The probe report; `None` when the call was gated off.
    pub report: Option<NeuronActivityReport>,
    pub events: Vec<ResetEvent>,
}

/// Sweep state for one network: the neurons exempt at the next trigger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResetSweeper {
    exempt: BTreeSet<(usize, usize)>,
}

impl ResetSweeper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn exempt(&self) -> &BTreeSet<(usize, usize)> {
        &self.exempt
    }

    /// Sweeps when `step` is a trigger and the mode is not `Off`.
    #[allow(clippy::too_many_arguments)]
    pub fn maybe_reset(
        &mut self,
        net: &mut DenseNetwork,
        adam: Option<&mut AdamState>,
        probe: &Matrix,
        cfg: &ResinConfig,
        step: u64,
        role: NetworkRole,
        rng: &mut SimRng,
    ) -> Result<SweepOutcome> {
        if step == 0 {
            return Err(Error::Usage("reset sweeps start at step 1".into()));
        }
        if probe.rows() == 0 {
            return Err(Error::Usage("probe batch is empty".into()));
        }
        if cfg.mode == ResetMode::Off || !cfg.is_trigger(step) {
            return Ok(SweepOutcome::default());
        }
        let report = NeuronActivityReport::probe(net, probe)?;
        let events = self.reset_from_report(net, adam, &report, cfg, step, role, rng)?;
        Ok(SweepOutcome {
            report: Some(report),
            events,
        })
    }

    /// Applies the mode's selection on an already computed probe report.
    #[allow(clippy::too_many_arguments)]
    pub fn reset_from_report(
        &mut self,
        net: &mut DenseNetwork,
        mut adam: Option<&mut AdamState>,
        report: &NeuronActivityReport,
        cfg: &ResinConfig,
        step: u64,
        role: NetworkRole,
        rng: &mut SimRng,
    ) -> Result<Vec<ResetEvent>> {
        let mut selected = select_for_reset(report, cfg);
        selected.remove_all(&self.exempt);
        let mut events = Vec::with_capacity(selected.len());
        for (layer, neuron) in selected.iter() {
            reset_neuron(net, adam.as_deref_mut(), layer, neuron, rng)?;
            events.push(ResetEvent {
                step,
                role,
                layer,
                neuron,
                s: report.layers[layer].s[neuron],
                xi_g: report.layers[layer].xi_g[neuron],
                mode: cfg.mode,
            });
        }
        self.exempt = selected.iter().collect();
        Ok(events)
    }
}

fn frobenius(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// Upper bound on the per-sample L2 change of the outputs on `probe` caused
/// by zeroing the efferent column of `(layer, neuron)`: the column's L2 norm
/// times the neuron's largest `|h|` on the batch, times the Frobenius norms of
/// every later weight matrix. Valid for 1-Lipschitz activations.
pub fn perturbation_bound(net: &DenseNetwork, probe: &Matrix, layer: usize, neuron: usize) -> Result<f64> {
    if layer >= net.num_hidden() || neuron >= net.specs()[layer].out_dim {
        return Err(Error::Usage(format!("({layer}, {neuron}) is not a hidden neuron")));
    }
    let (_, tape) = net.forward(probe)?;
    let h_max = tape.hidden(layer).column(neuron).fold(0.0f64, |m, h| m.max(h.abs()));
    let col = net.weights(layer + 1).column(neuron).map(|w| w * w).sum::<f64>().sqrt();
    let downstream: f64 = (layer + 2..net.num_layers()).map(|k| frobenius(net.weights(k))).product();
    Ok(col * h_max * downstream)
}
