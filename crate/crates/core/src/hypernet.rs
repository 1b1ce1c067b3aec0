//! The hypernetwork: an MLP that maps a period embedding to that period's
//! preference matrix `Θ_p` (`d_a × d_u`).
//!
//! In low-rank mode (`tau > 0`) the output vector is read as
//! `[Vec(A_p); Vec(B_p)]` with `A_p ∈ R^{d_a×τ}`, `B_p ∈ R^{d_u×τ}` (both
//! row-major) and `Θ_p = A_p B_pᵀ`, which shrinks the output layer from
//! `d_a·d_u` to `τ·(d_a + d_u)` units. With `tau == 0` the output is reshaped
//! row-major into `Θ_p` directly.
//!
//! Training minimizes a ListNet cross-entropy between the softmax of the
//! label vector of each logged step (chosen item: +1 on a click, −1 on a
//! skip; other candidates: 0) and the softmax of the estimated rewards
//! `c_aᵀ Θ_p c_u`, using Adam with early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::environment::InteractionRecord;
use crate::numerics::{dot, log_softmax, softmax, svd_values, Matrix, NumericsError};
use crate::policy::PreferenceMatrix;
use crate::seeding::{self, stream};
use crate::temporal::TimePeriod;

#[derive(Debug, Error)]
pub enum HypernetError {
    #[error("bad hypernetwork config: {0}")]
    BadConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training buffer is empty")]
    EmptyBuffer,
    #[error("record for user {user} has {got} candidates, expected {expected}")]
    RaggedRecord { user: usize, expected: usize, got: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<NumericsError> for HypernetError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::DimMismatch { expected, got } => HypernetError::DimMismatch { expected, got },
            other => HypernetError::BadConfig(other.to_string()),
        }
    }
}

/// Row split of the preference matrix: `d_a = observed_dim + latent_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaShape {
    pub observed_dim: usize,
    pub latent_dim: usize,
    pub user_dim: usize,
}

impl ThetaShape {
    pub fn item_dim(&self) -> usize {
        self.observed_dim + self.latent_dim
    }

    /// Output width of the hypernetwork for estimated rank `tau` (0 = full rank).
    pub fn output_width(&self, tau: usize) -> usize {
        if tau == 0 {
            self.item_dim() * self.user_dim
        } else {
            tau * (self.item_dim() + self.user_dim)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

/// Feed-forward parameter generator. Hidden layers use ReLU, the output
/// layer is linear.
///
/// Parameters live in one flat buffer: for each layer in order, the weight
/// matrix (`fan_out × fan_in`, row-major) followed by its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNetwork {
    layer_sizes: Vec<usize>,
    layout: Vec<LayerSlot>,
    params: Vec<f64>,
    tau: usize,
    shape: ThetaShape,
}

fn layout_for(layer_sizes: &[usize]) -> (Vec<LayerSlot>, usize) {
    let mut offset = 0;
    let layout = layer_sizes
        .windows(2)
        .map(|w| {
            let slot = LayerSlot {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                biases: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            slot
        })
        .collect();
    (layout, offset)
}

/// Per-call activations kept for the backward pass.
struct Trace {
    /// Input followed by the post-activation output of every layer.
    activations: Vec<Vec<f64>>,
}

impl HyperNetwork {
    fn validate(layer_sizes: &[usize], tau: usize, shape: ThetaShape) -> Result<(), HypernetError> {
        if layer_sizes.len() < 2 {
            return Err(HypernetError::BadConfig("need at least an input and an output layer".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(HypernetError::BadConfig("layer sizes must be positive".into()));
        }
        if shape.item_dim() == 0 || shape.user_dim == 0 {
            return Err(HypernetError::BadConfig("preference matrix dimensions must be positive".into()));
        }
        let out = *layer_sizes.last().expect("checked length");
        if out != shape.output_width(tau) {
            return Err(HypernetError::BadConfig(format!(
                "output width {out} does not match {} required for tau = {tau}",
                shape.output_width(tau)
            )));
        }
        Ok(())
    }

    /// Xavier-normal weights (`N(0, 2/(fan_in + fan_out))`), zero biases.
    pub fn init_xavier(layer_sizes: &[usize], tau: usize, shape: ThetaShape, seed: u64) -> Result<Self, HypernetError> {
        Self::validate(layer_sizes, tau, shape)?;
        let (layout, len) = layout_for(layer_sizes);
        let mut params = vec![0.0; len];
        let mut rng = stream(seed, &[seeding::TAG_HYPERNET]);
        for slot in &layout {
            let std = (2.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut params[slot.weights..slot.biases] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layout,
            params,
            tau,
            shape,
        })
    }

    /// All parameters zero; maps every input to `Θ = 0`.
    pub fn zeros(layer_sizes: &[usize], tau: usize, shape: ThetaShape) -> Result<Self, HypernetError> {
        Self::validate(layer_sizes, tau, shape)?;
        let (layout, len) = layout_for(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layout,
            params: vec![0.0; len],
            tau,
            shape,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn shape(&self) -> ThetaShape {
        self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter count of the output layer alone.
    pub fn output_layer_params(&self) -> usize {
        let slot = self.layout.last().expect("validated");
        slot.fan_in * slot.fan_out + slot.fan_out
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), HypernetError> {
        if params.len() != self.params.len() {
            return Err(HypernetError::DimMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Weight matrix of layer `l` (`fan_out × fan_in`).
    pub fn layer_weights(&self, l: usize) -> &[f64] {
        let slot = &self.layout[l];
        &self.params[slot.weights..slot.biases]
    }

    pub fn layer_biases(&self, l: usize) -> &[f64] {
        let slot = &self.layout[l];
        &self.params[slot.biases..slot.biases + slot.fan_out]
    }

    fn run(&self, input: &[f64]) -> Trace {
        let mut activations = Vec::with_capacity(self.layout.len() + 1);
        activations.push(input.to_vec());
        let last = self.layout.len() - 1;
        for (l, slot) in self.layout.iter().enumerate() {
            let x = &activations[l];
            let w = &self.params[slot.weights..slot.biases];
            let b = &self.params[slot.biases..slot.biases + slot.fan_out];
            let mut y: Vec<f64> = w.chunks_exact(slot.fan_in).zip(b).map(|(row, bi)| dot(row, x) + bi).collect();
            if l < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(y);
        }
        Trace { activations }
    }

    /// Raw output vector for embedding `s_p`.
    pub fn output(&self, s_p: &[f64]) -> Result<Vec<f64>, HypernetError> {
        self.check_input(s_p)?;
        Ok(self.run(s_p).activations.pop().expect("output layer"))
    }

    fn check_input(&self, s_p: &[f64]) -> Result<(), HypernetError> {
        if s_p.len() != self.input_dim() {
            return Err(HypernetError::DimMismatch {
                expected: self.input_dim(),
                got: s_p.len(),
            });
        }
        Ok(())
    }

    /// Splits the output into the low-rank factors `(A_p, B_p)`.
    fn factors(&self, out: &[f64]) -> (Matrix, Matrix) {
        let (d_a, d_u, tau) = (self.shape.item_dim(), self.shape.user_dim, self.tau);
        let a = Matrix::from_vec(d_a, tau, out[..d_a * tau].to_vec()).expect("sized");
        let b = Matrix::from_vec(d_u, tau, out[d_a * tau..].to_vec()).expect("sized");
        (a, b)
    }

    fn theta_from_output(&self, out: &[f64]) -> Matrix {
        if self.tau == 0 {
            Matrix::from_vec(self.shape.item_dim(), self.shape.user_dim, out.to_vec()).expect("sized")
        } else {
            let (a, b) = self.factors(out);
            a.matmul_tr(&b).expect("conformal factors")
        }
    }

    /// `Θ_p = h(s_p)`, split into observed and latent rows.
    pub fn forward(&self, s_p: &[f64]) -> Result<PreferenceMatrix, HypernetError> {
        let out = self.output(s_p)?;
        Ok(PreferenceMatrix::new(self.theta_from_output(&out), self.shape.observed_dim)?)
    }

    /// Maps `dL/dΘ` to `dL/d(output)`.
    fn output_gradient(&self, out: &[f64], grad_theta: &Matrix) -> Vec<f64> {
        if self.tau == 0 {
            return grad_theta.as_slice().to_vec();
        }
        let (a, b) = self.factors(out);
        // Θ = A Bᵀ  ⇒  dA = G B,  dB = Gᵀ A.
        let mut g = grad_theta.matmul(&b).expect("conformal").into_vec();
        g.extend(grad_theta.transpose().matmul(&a).expect("conformal").into_vec());
        g
    }

    /// Accumulates the parameter gradient for one input given `dL/d(output)`.
    fn backward(&self, trace: &Trace, grad_out: Vec<f64>, grad: &mut [f64]) {
        let mut delta = grad_out;
        for (l, slot) in self.layout.iter().enumerate().rev() {
            let x = &trace.activations[l];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                grad[slot.biases + j] += dj;
                let row = &mut grad[slot.weights + j * slot.fan_in..slot.weights + (j + 1) * slot.fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += dj * xi;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[slot.weights..slot.biases];
            let mut prev = vec![0.0; slot.fan_in];
            for (j, &dj) in delta.iter().enumerate() {
                if dj != 0.0 {
                    for (p, wji) in prev.iter_mut().zip(&w[j * slot.fan_in..(j + 1) * slot.fan_in]) {
                        *p += dj * wji;
                    }
                }
            }
            // ReLU derivative, taken as 0 at the kink.
            for (p, a) in prev.iter_mut().zip(&trace.activations[l]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    fn check_records(&self, records: &[&InteractionRecord], ctx: &TrainingContext) -> Result<(), HypernetError> {
        if records.is_empty() {
            return Err(HypernetError::EmptyBuffer);
        }
        let m = records[0].candidates.len();
        for r in records {
            if r.candidates.len() != m {
                return Err(HypernetError::RaggedRecord {
                    user: r.user,
                    expected: m,
                    got: r.candidates.len(),
                });
            }
        }
        ctx.check(self)
    }

    /// Loss and (optionally) gradient over `records`.
    fn evaluate(
        &self,
        records: &[&InteractionRecord],
        ctx: &TrainingContext,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>), HypernetError> {
        self.check_records(records, ctx)?;
        let mut by_period: BTreeMap<TimePeriod, Vec<&InteractionRecord>> = BTreeMap::new();
        for r in records {
            by_period.entry(r.period).or_default().push(r);
        }
        let (d_a, d_u) = (self.shape.item_dim(), self.shape.user_dim);
        let mut loss = 0.0;
        let mut grad = want_grad.then(|| vec![0.0; self.params.len()]);
        for (period, group) in by_period {
            let trace = self.run(ctx.embedding(period));
            let out = trace.activations.last().expect("output layer");
            let theta = self.theta_from_output(out);
            let mut grad_theta = Matrix::zeros(d_a, d_u);
            for record in group {
                let c_u = ctx.user(record.user);
                let projected = theta.mul_vec(c_u)?;
                let scores: Vec<f64> = record.candidates.iter().map(|&a| dot(ctx.item(a), &projected)).collect();
                let labels = ctx.labels(record);
                let target = softmax(&labels);
                let log_pred = log_softmax(&scores);
                loss -= target.iter().zip(&log_pred).map(|(p, lq)| p * lq).sum::<f64>();
                if want_grad {
                    // dL/dr̂_k = P̂_k − P_k;  dL/dΘ += (Σ_k g_k c_{a_k}) c_uᵀ.
                    let mut weighted = vec![0.0; d_a];
                    for ((&a, lq), p) in record.candidates.iter().zip(&log_pred).zip(&target) {
                        let g = lq.exp() - p;
                        for (w, c) in weighted.iter_mut().zip(ctx.item(a)) {
                            *w += g * c;
                        }
                    }
                    for (i, &wi) in weighted.iter().enumerate() {
                        if wi != 0.0 {
                            for (j, &cj) in c_u.iter().enumerate() {
                                grad_theta[(i, j)] += wi * cj;
                            }
                        }
                    }
                }
            }
            if let Some(grad) = grad.as_mut() {
                let grad_out = self.output_gradient(out, &grad_theta);
                self.backward(&trace, grad_out, grad);
            }
        }
        Ok((loss, grad))
    }

    /// ListNet cross-entropy summed over `buffer`.
    pub fn listnet_loss(&self, buffer: &[InteractionRecord], ctx: &TrainingContext) -> Result<f64, HypernetError> {
        let refs: Vec<&InteractionRecord> = buffer.iter().collect();
        Ok(self.evaluate(&refs, ctx, false)?.0)
    }

    /// Gradient of [`listnet_loss`](Self::listnet_loss) in flat parameter order.
    pub fn gradient(&self, buffer: &[InteractionRecord], ctx: &TrainingContext) -> Result<Vec<f64>, HypernetError> {
        let refs: Vec<&InteractionRecord> = buffer.iter().collect();
        Ok(self.evaluate(&refs, ctx, true)?.1.expect("requested"))
    }

    /// Adam with early stopping on a held-out tail of the shuffled buffer.
    /// The parameters with the best validation loss are kept. Returns the
    /// number of epochs run.
    pub fn train_minibatch(
        &mut self,
        buffer: &[InteractionRecord],
        ctx: &TrainingContext,
        opts: &TrainOptions,
    ) -> Result<usize, HypernetError> {
        if buffer.is_empty() {
            return Err(HypernetError::EmptyBuffer);
        }
        opts.validate()?;
        let all: Vec<&InteractionRecord> = buffer.iter().collect();
        self.check_records(&all, ctx)?;
        if opts.max_epochs == 0 {
            return Ok(0);
        }
        let mut rng = stream(opts.seed, &[seeding::TAG_TRAIN]);
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        order.shuffle(&mut rng);
        let n_val = (buffer.len() as f64 * opts.validation_fraction).floor() as usize;
        let (train_idx, val_idx) = if n_val == 0 || n_val >= buffer.len() {
            (order.clone(), order)
        } else {
            let split = buffer.len() - n_val;
            (order[..split].to_vec(), order[split..].to_vec())
        };
        let validation: Vec<&InteractionRecord> = val_idx.iter().map(|&i| &buffer[i]).collect();
        let mut train_order = train_idx;

        let mut adam = Adam::new(self.params.len(), opts);
        let mut best_loss = f64::INFINITY;
        let mut best_params = self.params.clone();
        let mut stale = 0;
        let mut epochs = 0;
        for _ in 0..opts.max_epochs {
            epochs += 1;
            train_order.shuffle(&mut rng);
            for chunk in train_order.chunks(opts.batch_size) {
                let batch: Vec<&InteractionRecord> = chunk.iter().map(|&i| &buffer[i]).collect();
                let grad = self.evaluate(&batch, ctx, true)?.1.expect("requested");
                adam.step(&mut self.params, &grad);
            }
            let val_loss = self.evaluate(&validation, ctx, false)?.0;
            if val_loss < best_loss {
                best_loss = val_loss;
                best_params.copy_from_slice(&self.params);
                stale = 0;
            } else {
                stale += 1;
                if stale >= opts.patience {
                    break;
                }
            }
        }
        self.params = best_params;
        Ok(epochs)
    }

    /// Singular values of `Θ_p` for every period.
    pub fn rank_report(&self, embeddings: &[Vec<f64>]) -> Result<Vec<(TimePeriod, Vec<f64>)>, HypernetError> {
        TimePeriod::all()
            .map(|p| {
                let emb = embeddings.get(p.index()).ok_or(HypernetError::DimMismatch {
                    expected: crate::temporal::NUM_PERIODS,
                    got: embeddings.len(),
                })?;
                Ok((p, svd_values(self.forward(emb)?.theta())))
            })
            .collect()
    }

    /// Text checkpoint; floats use Rust's shortest round-trip formatting so
    /// reading it back is bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.layer_sizes.iter().map(ToString::to_string).collect();
        writeln!(out, "hyperbandit-hypernet 1").unwrap();
        writeln!(out, "layers {}", sizes.join(",")).unwrap();
        writeln!(out, "tau {}", self.tau).unwrap();
        writeln!(out, "observed_dim {}", self.shape.observed_dim).unwrap();
        writeln!(out, "latent_dim {}", self.shape.latent_dim).unwrap();
        writeln!(out, "user_dim {}", self.shape.user_dim).unwrap();
        writeln!(out, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, HypernetError> {
        let bad = |msg: &str| HypernetError::Checkpoint(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("hyperbandit-hypernet 1") {
            return Err(bad("missing `hyperbandit-hypernet 1` header"));
        }
        let mut field = |name: &str| -> Result<String, HypernetError> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| HypernetError::Checkpoint(format!("expected `{name}` line, found `{line}`")))
        };
        let parse_usize = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let layer_sizes = field("layers")?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| bad("bad layer size")))
            .collect::<Result<Vec<_>, _>>()?;
        let tau = parse_usize(field("tau")?)?;
        let shape = ThetaShape {
            observed_dim: parse_usize(field("observed_dim")?)?,
            latent_dim: parse_usize(field("latent_dim")?)?,
            user_dim: parse_usize(field("user_dim")?)?,
        };
        let count = parse_usize(field("params")?)?;
        let mut net = Self::zeros(&layer_sizes, tau, shape)?;
        if count != net.params.len() {
            return Err(bad("parameter count does not match layer sizes"));
        }
        let params = lines
            .filter(|l| !l.is_empty())
            .map(|l| l.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("bad parameter value")))
            .collect::<Result<Vec<f64>, _>>()?;
        net.set_params(&params).map_err(|_| bad("parameter count mismatch"))?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HypernetError> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HypernetError> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

/// Features the loss reads: user contexts, full item contexts `[s_a; x_a]`
/// (latents as of training time), period embeddings and the click threshold.
#[derive(Debug, Clone)]
pub struct TrainingContext {
    pub users: Vec<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
    /// Embedding per period, indexed by period.
    pub embeddings: Vec<Vec<f64>>,
    /// A chosen item counts as clicked when its reward exceeds this.
    pub click_threshold: f64,
}

impl TrainingContext {
    fn user(&self, u: usize) -> &[f64] {
        &self.users[u]
    }

    fn item(&self, a: usize) -> &[f64] {
        &self.items[a]
    }

    fn embedding(&self, p: TimePeriod) -> &[f64] {
        &self.embeddings[p.index()]
    }

    fn check(&self, net: &HyperNetwork) -> Result<(), HypernetError> {
        let shape = net.shape();
        let mismatch = |expected, got| Err(HypernetError::DimMismatch { expected, got });
        if self.embeddings.len() != crate::temporal::NUM_PERIODS {
            return mismatch(crate::temporal::NUM_PERIODS, self.embeddings.len());
        }
        if let Some(e) = self.embeddings.iter().find(|e| e.len() != net.input_dim()) {
            return mismatch(net.input_dim(), e.len());
        }
        if let Some(u) = self.users.iter().find(|u| u.len() != shape.user_dim) {
            return mismatch(shape.user_dim, u.len());
        }
        if let Some(a) = self.items.iter().find(|a| a.len() != shape.item_dim()) {
            return mismatch(shape.item_dim(), a.len());
        }
        Ok(())
    }

    /// ListNet labels over the record's candidates.
    pub fn labels(&self, record: &InteractionRecord) -> Vec<f64> {
        record
            .candidates
            .iter()
            .map(|&a| {
                if a != record.chosen {
                    0.0
                } else if record.reward > self.click_threshold {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_epochs: 200,
            patience: 5,
            validation_fraction: 0.1,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<(), HypernetError> {
        let bad = |m: &str| Err(HypernetError::BadConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if self.patience == 0 || self.batch_size == 0 {
            return bad("patience and batch_size must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return bad("validation_fraction must lie in (0, 0.5]");
        }
        Ok(())
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, opts: &TrainOptions) -> Self {
        Self {
            lr: opts.learning_rate,
            beta1: opts.adam_beta1,
            beta2: opts.adam_beta2,
            eps: opts.adam_epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{EmbeddingMode, NUM_PERIODS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SHAPE: ThetaShape = ThetaShape {
        observed_dim: 2,
        latent_dim: 1,
        user_dim: 3,
    };

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn random_context(rng: &mut ChaCha8Rng, shape: ThetaShape, users: usize, items: usize) -> TrainingContext {
        TrainingContext {
            users: (0..users).map(|_| random_vec(rng, shape.user_dim)).collect(),
            items: (0..items).map(|_| random_vec(rng, shape.item_dim())).collect(),
            embeddings: EmbeddingMode::Euler.table(),
            click_threshold: 0.5,
        }
    }

    fn random_buffer(rng: &mut ChaCha8Rng, n: usize, users: usize, items: usize, m: usize) -> Vec<InteractionRecord> {
        (0..n)
            .map(|_| {
                let candidates = rand::seq::index::sample(rng, items, m).into_vec();
                InteractionRecord {
                    user: rng.random_range(0..users),
                    chosen: candidates[rng.random_range(0..m)],
                    period: TimePeriod::new(rng.random_range(0..NUM_PERIODS)).unwrap(),
                    reward: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
                    candidates,
                }
            })
            .collect()
    }

    fn finite_difference_check(net: &HyperNetwork, buffer: &[InteractionRecord], ctx: &TrainingContext) -> f64 {
        let analytic = net.gradient(buffer, ctx).unwrap();
        let h = 1e-5;
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for i in 0..net.num_params() {
            let mut p = net.params().to_vec();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = probe.listnet_loss(buffer, ctx).unwrap();
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = probe.listnet_loss(buffer, ctx).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
            if (numeric - analytic[i]).abs() > 1e-9 {
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn output_width_matches_mode() {
        let full = ThetaShape {
            observed_dim: 15,
            latent_dim: 10,
            user_dim: 25,
        };
        assert_eq!(full.output_width(5), 250);
        assert_eq!(full.output_width(0), 625);
        let sizes = [4, 256, 512, 1024, 1024, 1024, 1024, 512, 256, 250];
        let net = HyperNetwork::init_xavier(&sizes, 5, full, 1).unwrap();
        assert_eq!(net.output_dim(), 250);
        assert!(HyperNetwork::init_xavier(&[4, 8, 249], 5, full, 1).is_err());
        assert!(HyperNetwork::init_xavier(&[250], 5, full, 1).is_err());
    }

    #[test]
    fn xavier_is_deterministic_with_expected_variance() {
        let full = ThetaShape {
            observed_dim: 15,
            latent_dim: 10,
            user_dim: 25,
        };
        let sizes = [4, 256, 1024, 1024, 250];
        let a = HyperNetwork::init_xavier(&sizes, 5, full, 9).unwrap();
        let b = HyperNetwork::init_xavier(&sizes, 5, full, 9).unwrap();
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        for l in 0..4 {
            assert!(a.layer_biases(l).iter().all(|&x| x == 0.0));
        }
        let w = a.layer_weights(2);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let expected = 2.0 / 2048.0;
        assert!((var / expected - 1.0).abs() < 0.2, "{var} vs {expected}");
    }

    #[test]
    fn zero_network_gives_zero_theta() {
        let net = HyperNetwork::zeros(&[4, 6, SHAPE.output_width(2)], 2, SHAPE).unwrap();
        let theta = net.forward(&[1.0, 0.0, 0.5, 0.5]).unwrap();
        assert_eq!(theta.theta().max_abs(), 0.0);
        let report = net.rank_report(&EmbeddingMode::Euler.table()).unwrap();
        assert_eq!(report.len(), NUM_PERIODS);
        assert!(report.iter().all(|(_, s)| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn low_rank_forward_respects_tau() {
        let shape = ThetaShape {
            observed_dim: 4,
            latent_dim: 3,
            user_dim: 6,
        };
        for tau in [1, 3] {
            let net = HyperNetwork::init_xavier(&[4, 16, shape.output_width(tau)], tau, shape, 3).unwrap();
            for (_, s) in net.rank_report(&EmbeddingMode::Euler.table()).unwrap() {
                assert!(s.iter().filter(|v| **v > 1e-9).count() <= tau);
                assert!(s.windows(2).all(|w| w[0] >= w[1]));
            }
        }
        assert!(matches!(
            HyperNetwork::init_xavier(&[4, 16, shape.output_width(1)], 1, shape, 3)
                .unwrap()
                .forward(&[1.0; 3]),
            Err(HypernetError::DimMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn low_rank_output_reads_factors_row_major() {
        let shape = ThetaShape {
            observed_dim: 1,
            latent_dim: 1,
            user_dim: 2,
        };
        // One linear layer with zero weights: output equals the bias.
        let mut net = HyperNetwork::zeros(&[1, shape.output_width(1)], 1, shape).unwrap();
        let mut params = net.params().to_vec();
        let bias = [1.0, 2.0, 3.0, 4.0]; // A = [1; 2], B = [3; 4]
        let n = params.len();
        params[n - 4..].copy_from_slice(&bias);
        net.set_params(&params).unwrap();
        let theta = net.forward(&[0.0]).unwrap();
        assert_eq!(theta.theta().as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        assert_eq!(theta.theta_s().as_slice(), &[3.0, 4.0]);
        assert_eq!(theta.theta_x().as_slice(), &[6.0, 8.0]);
    }

    #[test]
    fn low_rank_is_smaller_below_threshold() {
        let shape = ThetaShape {
            observed_dim: 15,
            latent_dim: 10,
            user_dim: 25,
        };
        for tau in 1..=14 {
            let low = shape.output_width(tau);
            let full = shape.output_width(0);
            assert_eq!(low < full, tau <= 12, "tau {tau}");
        }
    }

    #[test]
    fn single_candidate_loss_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctx = random_context(&mut rng, SHAPE, 3, 5);
        let net = HyperNetwork::init_xavier(&[4, 8, SHAPE.output_width(2)], 2, SHAPE, 1).unwrap();
        let buffer = random_buffer(&mut rng, 6, 3, 5, 1);
        assert!(net.listnet_loss(&buffer, &ctx).unwrap().abs() < 1e-15);
    }

    #[test]
    fn matched_scores_give_target_entropy() {
        // Full-rank network with zero weights and a bias chosen so that
        // Θ = e_0 e_0ᵀ: r̂ equals the first item coordinate.
        let shape = ThetaShape {
            observed_dim: 1,
            latent_dim: 0,
            user_dim: 1,
        };
        let mut net = HyperNetwork::zeros(&[4, 1], 0, shape).unwrap();
        net.set_params(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let ctx = TrainingContext {
            users: vec![vec![1.0]],
            items: vec![vec![1.0], vec![0.0], vec![0.0]],
            embeddings: EmbeddingMode::Euler.table(),
            click_threshold: 0.5,
        };
        let record = InteractionRecord {
            user: 0,
            chosen: 0,
            period: TimePeriod::new(3).unwrap(),
            reward: 1.0,
            candidates: vec![0, 1, 2],
        };
        let loss = net.listnet_loss(std::slice::from_ref(&record), &ctx).unwrap();
        let p = softmax(&[1.0, 0.0, 0.0]);
        let entropy: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((loss - entropy).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ctx = random_context(&mut rng, SHAPE, 2, 3);
        let net = HyperNetwork::init_xavier(&[4, 5, SHAPE.output_width(0)], 0, SHAPE, 8).unwrap();
        let record = InteractionRecord {
            user: 1,
            chosen: 2,
            period: TimePeriod::new(12).unwrap(),
            reward: 0.0,
            candidates: vec![0, 1, 2],
        };
        // Hand evaluation: explicit matrix, explicit softmax, explicit sum.
        let theta = net.forward(&ctx.embeddings[12]).unwrap();
        let mut scores = [0.0; 3];
        for (k, a) in [0usize, 1, 2].iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    scores[k] += ctx.items[*a][i] * theta.theta()[(i, j)] * ctx.users[1][j];
                }
            }
        }
        let labels = [0.0, 0.0, -1.0];
        let z_y: f64 = labels.iter().map(|y: &f64| y.exp()).sum();
        let z_r: f64 = scores.iter().map(|r| r.exp()).sum();
        let expected: f64 = -(0..3).map(|k| labels[k].exp() / z_y * (scores[k].exp() / z_r).ln()).sum::<f64>();
        let got = net.listnet_loss(std::slice::from_ref(&record), &ctx).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn loss_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ctx = random_context(&mut rng, SHAPE, 2, 6);
        let net = HyperNetwork::init_xavier(&[4, 5, SHAPE.output_width(1)], 1, SHAPE, 8).unwrap();
        assert!(matches!(net.listnet_loss(&[], &ctx), Err(HypernetError::EmptyBuffer)));
        let mut buffer = random_buffer(&mut rng, 2, 2, 6, 3);
        buffer[1].candidates.push(5);
        if buffer[1].candidates[..3].contains(&5) {
            buffer[1].candidates.pop();
            buffer[1].candidates.push(4);
        }
        assert!(matches!(net.listnet_loss(&buffer, &ctx), Err(HypernetError::RaggedRecord { .. })));
        let mut wrong = ctx.clone();
        wrong.users[0].push(0.0);
        assert!(matches!(
            net.listnet_loss(&buffer[..1], &wrong),
            Err(HypernetError::DimMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for (tau, trial) in [(0, 0), (1, 1), (2, 2)] {
            let ctx = random_context(&mut rng, SHAPE, 3, 6);
            let net = HyperNetwork::init_xavier(&[4, 8, SHAPE.output_width(tau)], tau, SHAPE, trial).unwrap();
            let buffer = random_buffer(&mut rng, 5, 3, 6, 4);
            let worst = finite_difference_check(&net, &buffer, &ctx);
            assert!(worst < 1e-4, "tau {tau}: {worst}");
        }
    }

    #[test]
    fn zero_weight_gradient_is_uniform_residual() {
        let shape = ThetaShape {
            observed_dim: 2,
            latent_dim: 0,
            user_dim: 2,
        };
        let net = HyperNetwork::zeros(&[4, 3, shape.output_width(0)], 0, shape).unwrap();
        let ctx = TrainingContext {
            users: vec![vec![1.0, 0.5]],
            items: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            embeddings: EmbeddingMode::Euler.table(),
            click_threshold: 0.5,
        };
        let record = InteractionRecord {
            user: 0,
            chosen: 0,
            period: TimePeriod::new(0).unwrap(),
            reward: 1.0,
            candidates: vec![0, 1],
        };
        let grad = net.gradient(std::slice::from_ref(&record), &ctx).unwrap();
        // All scores are 0 ⇒ P̂ uniform; residual g_k = 1/2 − P_k.
        let p = softmax(&[1.0, 0.0]);
        let g = [0.5 - p[0], 0.5 - p[1]];
        // Output bias gradient = dL/dΘ row-major = g_k c_{a_k} c_uᵀ summed.
        let expected = [g[0] * 1.0, g[0] * 0.5, g[1] * 1.0, g[1] * 0.5];
        let n = grad.len();
        for (a, b) in grad[n - 4..].iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let worst = finite_difference_check(&net, std::slice::from_ref(&record), &ctx);
        assert!(worst < 1e-4);
    }

    #[test]
    fn duplicated_records_double_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = random_context(&mut rng, SHAPE, 3, 6);
        let net = HyperNetwork::init_xavier(&[4, 8, SHAPE.output_width(1)], 1, SHAPE, 2).unwrap();
        let buffer = random_buffer(&mut rng, 4, 3, 6, 3);
        let single = net.gradient(&buffer, &ctx).unwrap();
        let doubled: Vec<InteractionRecord> = buffer.iter().chain(buffer.iter()).cloned().collect();
        let twice = net.gradient(&doubled, &ctx).unwrap();
        for (a, b) in single.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ctx = random_context(&mut rng, SHAPE, 3, 6);
        let net = HyperNetwork::init_xavier(&[4, 8, SHAPE.output_width(2)], 2, SHAPE, 2).unwrap();
        let buffer = random_buffer(&mut rng, 3, 3, 6, 4);
        let mut permuted = buffer.clone();
        for r in &mut permuted {
            r.candidates.reverse();
            r.candidates.swap(0, 1);
        }
        let a = net.listnet_loss(&buffer, &ctx).unwrap();
        let b = net.listnet_loss(&permuted, &ctx).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn training_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ctx = random_context(&mut rng, SHAPE, 3, 6);
        let buffer = random_buffer(&mut rng, 40, 3, 6, 3);
        let net = HyperNetwork::init_xavier(&[4, 8, SHAPE.output_width(1)], 1, SHAPE, 2).unwrap();

        let mut frozen = net.clone();
        let opts = TrainOptions {
            learning_rate: 0.0,
            max_epochs: 3,
            ..TrainOptions::default()
        };
        frozen.train_minibatch(&buffer, &ctx, &opts).unwrap();
        assert_eq!(frozen, net);

        let mut idle = net.clone();
        let opts = TrainOptions {
            max_epochs: 0,
            ..TrainOptions::default()
        };
        assert_eq!(idle.train_minibatch(&buffer, &ctx, &opts).unwrap(), 0);
        assert_eq!(idle, net);

        let mut empty = net.clone();
        assert!(matches!(
            empty.train_minibatch(&[], &ctx, &TrainOptions::default()),
            Err(HypernetError::EmptyBuffer)
        ));
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let ctx = random_context(&mut rng, SHAPE, 4, 8);
        let buffer = random_buffer(&mut rng, 120, 4, 8, 4);
        let net = HyperNetwork::init_xavier(&[4, 16, SHAPE.output_width(2)], 2, SHAPE, 5).unwrap();
        let before = net.listnet_loss(&buffer, &ctx).unwrap();
        let opts = TrainOptions {
            learning_rate: 1e-2,
            ..TrainOptions::default()
        };
        let mut a = net.clone();
        let epochs = a.train_minibatch(&buffer, &ctx, &opts).unwrap();
        assert!(epochs >= 1 && epochs <= opts.max_epochs);
        let after = a.listnet_loss(&buffer, &ctx).unwrap();
        assert!(after <= before, "{after} > {before}");
        let mut b = net.clone();
        b.train_minibatch(&buffer, &ctx, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_options_validation() {
        assert!(TrainOptions::default().validate().is_ok());
        for bad in [
            TrainOptions {
                validation_fraction: 0.0,
                ..TrainOptions::default()
            },
            TrainOptions {
                validation_fraction: 0.6,
                ..TrainOptions::default()
            },
            TrainOptions {
                patience: 0,
                ..TrainOptions::default()
            },
            TrainOptions {
                learning_rate: -1.0,
                ..TrainOptions::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = HyperNetwork::init_xavier(&[4, 7, SHAPE.output_width(2)], 2, SHAPE, 13).unwrap();
        let text = net.to_checkpoint();
        let back = HyperNetwork::from_checkpoint(&text).unwrap();
        assert_eq!(back.layer_sizes(), net.layer_sizes());
        assert!(back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(HyperNetwork::from_checkpoint("garbage").is_err());
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(HyperNetwork::from_checkpoint(&truncated).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn checkpoint_round_trip(seed in any::<u64>(), hidden in 1usize..12, tau in 0usize..3) {
                let net = HyperNetwork::init_xavier(&[4, hidden, SHAPE.output_width(tau)], tau, SHAPE, seed).unwrap();
                let back = HyperNetwork::from_checkpoint(&net.to_checkpoint()).unwrap();
                prop_assert_eq!(back, net);
            }
        }
    }
}
