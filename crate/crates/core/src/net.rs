//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Every forward pass records an [`ActivationTape`] holding each layer's
//! pre- and post-activations for the whole batch, and every backward pass a
//! [`GradientTape`] holding the gradient with respect to each hidden
//! post-activation, per sample. The plasticity metrics are computed from
//! these tapes.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from_seed, SimRng};
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Usage(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Stacks equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Usage(format!(
                    "ragged rows: expected {cols} columns, got {}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.data[r * self.cols + c])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and post-activation `h`.
    pub fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Hidden layers of `hidden` widths with `activation`, then an identity output.
pub fn mlp_specs(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, activation));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, output, Activation::Identity));
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / in_dim)` for relu layers and
    /// `±sqrt(6 / (in_dim + out_dim))` otherwise; zero biases.
    #[default]
    FanUniform,
    /// Uniform in `±bound` for every layer; zero biases.
    Uniform { bound: f64 },
}

impl InitScheme {
    pub fn bound(&self, spec: &LayerSpec) -> f64 {
        match *self {
            InitScheme::FanUniform => match spec.activation {
                Activation::Relu => (6.0 / spec.in_dim as f64).sqrt(),
                _ => (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt(),
            },
            InitScheme::Uniform { bound } => bound,
        }
    }
}

fn draw_uniform(rng: &mut SimRng, bound: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * bound
}

/// Per-layer pre- and post-activations for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTape {
    pub inputs: Matrix,
    /// `pre[l]`: batch × out_dim of layer `l`, before the activation.
    pub pre: Vec<Matrix>,
    /// `post[l]`: batch × out_dim of layer `l`; the last entry is the output.
    pub post: Vec<Matrix>,
}

impl ActivationTape {
    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }

    pub fn num_hidden(&self) -> usize {
        self.post.len() - 1
    }

    /// Post-activations of hidden layer `l` (`h_{l,i}(x)` per sample).
    pub fn hidden(&self, l: usize) -> &Matrix {
        &self.post[l]
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("tape has at least one layer")
    }
}

/// Gradients of a scalar objective with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        ParamGrads {
            weights: net
                .specs
                .iter()
                .map(|s| Matrix::zeros(s.out_dim, s.in_dim))
                .collect(),
            biases: net.specs.iter().map(|s| vec![0.0; s.out_dim]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter().copied())
            .chain(self.biases.iter().flat_map(|b| b.iter().copied()))
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|g| *g *= factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Layer-ordered flat vector: each layer's weights row-major, then its biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Backward-pass record: per-sample gradients with respect to each hidden
/// post-activation, plus the parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    /// `hidden[l]`: batch × H_l, `d objective / d h_{l,i}(x)`.
    pub hidden: Vec<Matrix>,
    pub params: ParamGrads,
}

impl GradientTape {
    pub fn batch_size(&self) -> usize {
        self.hidden.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    specs: Vec<LayerSpec>,
    /// `weights[l]`: out_dim × in_dim; row `i` holds neuron `i`'s afferent weights.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    init: InitScheme,
    seed: u64,
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Validation("network needs at least one layer".into()));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Validation(format!("layer {l}: dimensions must be >= 1")));
        }
        if l > 0 && specs[l - 1].out_dim != s.in_dim {
            return Err(Error::Validation(format!(
                "layer {l}: in_dim {} does not match previous out_dim {}",
                s.in_dim,
                specs[l - 1].out_dim
            )));
        }
    }
    if specs.last().map(|s| s.activation) != Some(Activation::Identity) {
        return Err(Error::Validation("output layer must use identity activation".into()));
    }
    Ok(())
}

impl DenseNetwork {
    /// Draws weights per `scheme` from `seed`; biases start at zero.
    pub fn init(specs: &[LayerSpec], seed: u64, scheme: InitScheme) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for s in specs {
            let bound = scheme.bound(s);
            let data = (0..s.out_dim * s.in_dim)
                .map(|_| draw_uniform(&mut rng, bound))
                .collect();
            weights.push(Matrix::from_vec(s.out_dim, s.in_dim, data)?);
            biases.push(vec![0.0; s.out_dim]);
        }
        Ok(DenseNetwork {
            specs: specs.to_vec(),
            weights,
            biases,
            init: scheme,
            seed,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parameters(
        specs: &[LayerSpec],
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_specs(specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::Validation("one weight matrix and bias per layer".into()));
        }
        for (l, s) in specs.iter().enumerate() {
            if weights[l].shape() != (s.out_dim, s.in_dim) || biases[l].len() != s.out_dim {
                return Err(Error::Validation(format!("layer {l}: parameter shape mismatch")));
            }
        }
        let net = DenseNetwork {
            specs: specs.to_vec(),
            weights,
            biases,
            init: InitScheme::FanUniform,
            seed: 0,
        };
        if !net.is_finite() {
            return Err(Error::Validation("parameters must be finite".into()));
        }
        Ok(net)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init
    }

    pub fn num_layers(&self) -> usize {
        self.specs.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.specs.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.specs[..self.num_hidden()].iter().map(|s| s.out_dim).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.num_layers() - 1].out_dim
    }

    pub fn weights(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.specs.iter().map(|s| s.out_dim * s.in_dim + s.out_dim).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|b| b.is_finite())
    }

    /// Layer-ordered flat parameters: each layer's weights row-major, then its biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let nb = b.len();
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_hidden(&self, layer: usize, neuron: usize) -> Result<()> {
        if layer >= self.num_hidden() {
            return Err(Error::Usage(format!(
                "layer {layer} is not a hidden layer (network has {} hidden layers)",
                self.num_hidden()
            )));
        }
        if neuron >= self.specs[layer].out_dim {
            return Err(Error::Usage(format!(
                "neuron {neuron} out of range for layer {layer} of width {}",
                self.specs[layer].out_dim
            )));
        }
        Ok(())
    }

    /// Runs the batch (one sample per row) and records every layer.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ActivationTape)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Usage(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let n = batch.rows();
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.num_layers());
        for (l, spec) in self.specs.iter().enumerate() {
            let input = if l == 0 { batch } else { &post[l - 1] };
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z = Matrix::zeros(n, spec.out_dim);
            for s in 0..n {
                let x = input.row(s);
                let zr = z.row_mut(s);
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = b[o] + dot(w.row(o), x);
                }
            }
            let h = z.map(|v| spec.activation.apply(v));
            pre.push(z);
            post.push(h);
        }
        let out = post.last().expect("non-empty").clone();
        Ok((
            out,
            ActivationTape {
                inputs: batch.clone(),
                pre,
                post,
            },
        ))
    }

    /// Single-sample forward pass without a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Usage(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut cur = x.to_vec();
        for (l, spec) in self.specs.iter().enumerate() {
            let w = &self.weights[l];
            cur = (0..spec.out_dim)
                .map(|o| spec.activation.apply(self.biases[l][o] + dot(w.row(o), &cur)))
                .collect();
        }
        Ok(cur)
    }

    /// Reverse pass for a scalar objective whose gradient with respect to the
    /// outputs is `output_grad` (batch × output_dim).
    pub fn backward_loss(&self, tape: &ActivationTape, output_grad: &Matrix) -> Result<GradientTape> {
        let n = tape.batch_size();
        if output_grad.shape() != (n, self.output_dim()) {
            return Err(Error::Usage(format!(
                "output gradient is {:?}, outputs are {:?}",
                output_grad.shape(),
                (n, self.output_dim())
            )));
        }
        if tape.post.len() != self.num_layers() {
            return Err(Error::Usage("tape does not belong to this network".into()));
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut hidden = vec![Matrix::zeros(0, 0); self.num_hidden()];
        // d objective / d post-activation of the current layer
        let mut d_post = output_grad.clone();
        for l in (0..self.num_layers()).rev() {
            let spec = self.specs[l];
            let z = &tape.pre[l];
            let h = &tape.post[l];
            let mut delta = d_post;
            for s in 0..n {
                let (zr, hr) = (z.row(s), h.row(s));
                for (o, d) in delta.row_mut(s).iter_mut().enumerate() {
                    *d *= spec.activation.derivative(zr[o], hr[o]);
                }
            }
            let input = if l == 0 { &tape.inputs } else { &tape.post[l - 1] };
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for s in 0..n {
                let x = input.row(s);
                for (o, &d) in delta.row(s).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, x, gw.row_mut(o));
                        gb[o] += d;
                    }
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut d_in = Matrix::zeros(n, spec.in_dim);
                for s in 0..n {
                    let dr = d_in.row_mut(s);
                    for (o, &d) in delta.row(s).iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, w.row(o), dr);
                        }
                    }
                }
                hidden[l - 1] = d_in.clone();
                d_post = d_in;
            } else {
                d_post = Matrix::zeros(0, 0);
            }
        }
        Ok(GradientTape {
            hidden,
            params: grads,
        })
    }

    /// Gradients of the sum of every output entry over the batch. The hidden
    /// entries are `g_{l,i}(x) = d(sum of outputs) / d h_{l,i}(x)`, which does
    /// not depend on any training loss.
    pub fn aggregate_output_gradients(&self, batch: &Matrix) -> Result<(ActivationTape, GradientTape)> {
        let (out, tape) = self.forward(batch)?;
        let ones = Matrix::filled(out.rows(), out.cols(), 1.0);
        let g = self.backward_loss(&tape, &ones)?;
        Ok((tape, g))
    }

    /// Per-sample gradient of `h_{layer,neuron}` with respect to the layer's
    /// input: `sigma'(z) * w_row`. Rows are samples.
    pub fn neuron_input_gradient(
        &self,
        tape: &ActivationTape,
        layer: usize,
        neuron: usize,
    ) -> Result<Matrix> {
        self.check_hidden(layer, neuron)?;
        let spec = self.specs[layer];
        let w = self.weights[layer].row(neuron);
        let n = tape.batch_size();
        let mut out = Matrix::zeros(n, spec.in_dim);
        for s in 0..n {
            let d = spec
                .activation
                .derivative(tape.pre[layer][(s, neuron)], tape.post[layer][(s, neuron)]);
            for (o, &wi) in out.row_mut(s).iter_mut().zip(w) {
                *o = d * wi;
            }
        }
        Ok(out)
    }

    /// Redraws the afferent row and bias of a hidden neuron from the init scheme.
    pub fn reinit_afferent(&mut self, layer: usize, neuron: usize, rng: &mut SimRng) -> Result<()> {
        self.check_hidden(layer, neuron)?;
        let bound = self.init.bound(&self.specs[layer]);
        for w in self.weights[layer].row_mut(neuron) {
            *w = draw_uniform(rng, bound);
        }
        self.biases[layer][neuron] = 0.0;
        Ok(())
    }

    /// Sets a hidden neuron's efferent column (in the next layer) to zero.
    pub fn zero_efferent(&mut self, layer: usize, neuron: usize) -> Result<()> {
        self.check_hidden(layer, neuron)?;
        let next = &mut self.weights[layer + 1];
        for r in 0..next.rows() {
            next[(r, neuron)] = 0.0;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: impl AsRef<Path>, name: &str, step: u64) -> Result<()> {
        let dir = dir.as_ref();
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            specs: self.specs.clone(),
            seed: self.seed,
            step,
            init: self.init,
            num_params: self.num_params(),
        };
        let json_path = dir.join(format!("{name}.json"));
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let blob: Vec<u8> = self.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
        let bin_path = dir.join(format!("{name}.bin"));
        std::fs::write(&bin_path, blob).map_err(|e| Error::io(&bin_path, e))
    }

    /// Returns the network and the step recorded in its manifest.
    pub fn load_checkpoint(dir: impl AsRef<Path>, name: &str) -> Result<(Self, u64)> {
        let dir = dir.as_ref();
        let json_path = dir.join(format!("{name}.json"));
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", json_path.display())))?;
        let bin_path = dir.join(format!("{name}.bin"));
        let blob = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if blob.len() % 8 != 0 {
            return Err(Error::Validation(format!(
                "{}: length {} is not a multiple of 8",
                bin_path.display(),
                blob.len()
            )));
        }
        let flat: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut net = DenseNetwork::init(&manifest.specs, manifest.seed, manifest.init)?;
        net.set_flat(&flat)
            .map_err(|e| Error::Validation(format!("{}: {e}", bin_path.display())))?;
        Ok((net, manifest.step))
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    specs: Vec<LayerSpec>,
    seed: u64,
    step: u64,
    init: InitScheme,
    num_params: usize,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ParamGrads,
    v: ParamGrads,
    t: u64,
}

impl AdamState {
    pub fn new(net: &DenseNetwork) -> Self {
        AdamState {
            m: ParamGrads::zeros_like(net),
            v: ParamGrads::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clears the moments of a hidden neuron's afferent row, bias and
    /// efferent column.
    pub fn zero_neuron(&mut self, layer: usize, neuron: usize) {
        for p in [&mut self.m, &mut self.v] {
            p.weights[layer].row_mut(neuron).fill(0.0);
            p.biases[layer][neuron] = 0.0;
            let next = &mut p.weights[layer + 1];
            for r in 0..next.rows() {
                next[(r, neuron)] = 0.0;
            }
        }
    }

    pub fn moments_flat(&self) -> (Vec<f64>, Vec<f64>) {
        (self.m.to_flat(), self.v.to_flat())
    }
}

/// One bias-corrected Adam step. Non-finite gradients are rejected and leave
/// both the network and the optimizer untouched.
pub fn apply_update(
    net: &mut DenseNetwork,
    grads: &ParamGrads,
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    if grads.weights.len() != net.num_layers()
        || grads
            .weights
            .iter()
            .zip(&net.weights)
            .any(|(g, w)| g.shape() != w.shape())
    {
        return Err(Error::Usage("gradient shapes do not match the network".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient contains NaN or infinity; update skipped".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    };
    for l in 0..net.num_layers() {
        let w = net.weights[l].as_mut_slice();
        let g = grads.weights[l].as_slice();
        let m = state.m.weights[l].as_mut_slice();
        let v = state.v.weights[l].as_mut_slice();
        for i in 0..w.len() {
            step(&mut w[i], g[i], &mut m[i], &mut v[i]);
        }
        let b = &mut net.biases[l];
        let g = &grads.biases[l];
        let m = &mut state.m.biases[l];
        let v = &mut state.v.biases[l];
        for i in 0..b.len() {
            step(&mut b[i], g[i], &mut m[i], &mut v[i]);
        }
    }
    Ok(())
}
