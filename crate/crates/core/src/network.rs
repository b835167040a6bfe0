//! Multilayer perceptron with hand-written backpropagation of the composite loss.
//!
//! Layers compute `a = act(W·x + b)` with `W` stored `[fan_out × fan_in]`. The
//! last layer is linear and produces logits. Inputs are standardized by a
//! per-feature affine map held in the model, fitted on the training split.
//!
//! # Checkpoint layout (little-endian)
//!
//! ```text
//! bytes 0..4   magic "SCDL"
//! byte  4      version (1)
//! byte  5      flags: bit 0 = input standardization present
//! u32          input_dim
//! u32          layer count L
//! L × (u32 fan_out, u8 activation: 0 = identity, 1 = relu)
//! L × (f64 weights row-major [fan_out × fan_in], f64 bias [fan_out])
//! if flag bit 0: f64 mean[input_dim], f64 inv_std[input_dim]
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::loss::{self, CompositeLossConfig, LossBreakdown, ProbVector, Reduction};
use crate::rng::SeededRng;
use crate::sampler::{OppositeSampler, Scenario};
use crate::taxonomy::{ClassId, SemanticPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-feature `(x − mean) · inv_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Standardizer {
    /// Statistics over all rows of `ds`. Constant features are only centered.
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.dim();
        let n = ds.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, &v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for ((s, &v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                let t = v as f64 - m;
                *s += t * t;
            }
        }
        let inv_std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-8 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, inv_std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: ProbVector,
    pub label: ClassId,
}

/// Gradients of the loss with respect to every layer's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    /// All gradient entries in the same order as [`MlpModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    input_dim: usize,
    class_count: usize,
    standardizer: Option<Standardizer>,
}

/// Hidden widths of the reference "MLP-3" classifier.
pub const MLP3_HIDDEN: [usize; 3] = [256, 256, 256];

impl MlpModel {
    /// ReLU hidden layers and a linear head, weights `N(0, 2/fan_in)`, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], class_count: usize, rng: &mut SeededRng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (i, &fan_out) in hidden.iter().chain(std::iter::once(&class_count)).enumerate() {
            let std = (2.0 / fan_in as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || std * rng.standard_normal());
            let activation = if i == hidden.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            });
            fan_in = fan_out;
        }
        MlpModel {
            layers,
            input_dim,
            class_count,
            standardizer: None,
        }
    }

    pub fn mlp3(input_dim: usize, class_count: usize, rng: &mut SeededRng) -> Self {
        MlpModel::new(input_dim, &MLP3_HIDDEN, class_count, rng)
    }

    /// Validates dimension chaining, a linear head, and finite parameters.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("model needs at least one layer".into()))?;
        let input_dim = first.fan_in();
        let mut prev = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in() != prev {
                return Err(Error::DimensionMismatch {
                    expected: prev,
                    actual: l.fan_in(),
                });
            }
            if l.bias.len() != l.fan_out() {
                return Err(Error::DimensionMismatch {
                    expected: l.fan_out(),
                    actual: l.bias.len(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
            prev = l.fan_out();
        }
        let last = layers.last().expect("non-empty");
        if last.activation != Activation::Identity {
            return Err(Error::InvalidArgument("final layer must be linear (logits)".into()));
        }
        let class_count = last.fan_out();
        Ok(MlpModel {
            layers,
            input_dim,
            class_count,
            standardizer: None,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn set_standardizer(&mut self, s: Option<Standardizer>) -> Result<()> {
        if let Some(s) = &s {
            if s.mean.len() != self.input_dim || s.inv_std.len() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    actual: s.mean.len(),
                });
            }
        }
        self.standardizer = s;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, per layer: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn input_row(&self, x: &[f32], out: &mut [f64]) {
        match &self.standardizer {
            Some(s) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (x[k] as f64 - s.mean[k]) * s.inv_std[k];
                }
            }
            None => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v as f64;
                }
            }
        }
    }

    /// Standardized `[rows × input_dim]` batch built from dataset rows.
    fn batch_input(&self, ds: &Dataset, idx: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((idx.len(), self.input_dim));
        for (r, &i) in idx.iter().enumerate() {
            let row = x.row_mut(r).into_slice().expect("standard layout");
            self.input_row(ds.row(i), row);
        }
        x
    }

    /// Activations of every layer (last entry holds the logits).
    fn forward_cache(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { acts[i - 1_usize].view() };
            let mut z = input.dot(&l.weights.t());
            z += &l.bias;
            if l.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Logits for a standardized batch.
    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cache(x).pop().expect("at least one layer")
    }

    /// Prediction for one raw (unstandardized) feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input feature".into()));
        }
        let input = self.standardize(x);
        let logits = self.logits_batch(input.view().insert_axis(Axis(0))).row(0).to_vec();
        let probs = ProbVector::from_logits(&logits);
        let label = probs.argmax();
        Ok(Prediction { logits, probs, label })
    }

    fn standardize(&self, x: &[f64]) -> Array1<f64> {
        match &self.standardizer {
            Some(s) => x
                .iter()
                .enumerate()
                .map(|(k, &v)| (v - s.mean[k]) * s.inv_std[k])
                .collect(),
            None => Array1::from(x.to_vec()),
        }
    }

    /// Loss and parameter gradients for a standardized batch.
    ///
    /// With [`Reduction::Mean`] the gradient is of the batch-mean loss; the
    /// returned breakdown is always the *sum* over the batch.
    pub fn batch_gradients(
        &self,
        x: ArrayView2<f64>,
        ys: &[ClassId],
        y_bars: Option<&[ClassId]>,
        cfg: &CompositeLossConfig,
    ) -> (Gradients, LossBreakdown, usize) {
        let b = x.nrows();
        let acts = self.forward_cache(x);
        let logits = acts.last().expect("at least one layer");
        let mut delta = Array2::zeros((b, self.class_count));
        let mut total = LossBreakdown::default();
        let mut correct = 0;
        for r in 0..b {
            let z = logits.row(r);
            let z = z.as_slice().expect("standard layout");
            if loss::argmax(z) == ys[r].0 {
                correct += 1;
            }
            let g = delta.row_mut(r).into_slice().expect("standard layout");
            let yb = y_bars.map(|v| v[r]);
            total.add(&loss::composite_loss_and_grad(z, ys[r], yb, cfg, g));
        }
        if cfg.reduction == Reduction::Mean {
            delta /= b as f64;
        }

        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            gw.push(delta.t().dot(&input));
            gb.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                let mut d_in = delta.dot(&self.layers[i].weights);
                if self.layers[i - 1].activation == Activation::Relu {
                    ndarray::Zip::from(&mut d_in).and(&acts[i - 1]).for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                delta = d_in;
            }
        }
        gw.reverse();
        gb.reverse();
        (
            Gradients {
                weights: gw,
                biases: gb,
            },
            total,
            correct,
        )
    }

    /// Parameter gradients of the composite loss for one raw sample.
    pub fn backward(
        &self,
        x: &[f64],
        y: ClassId,
        y_bar: Option<ClassId>,
        cfg: &CompositeLossConfig,
    ) -> Result<(Gradients, LossBreakdown)> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let input = self.standardize(x);
        let ybar_slice = y_bar.map(|b| [b]);
        let (g, l, _) = self.batch_gradients(
            input.view().insert_axis(Axis(0)),
            &[y],
            ybar_slice.as_ref().map(|s| &s[..]),
            cfg,
        );
        Ok((g, l))
    }

    /// Composite loss of one raw sample (used by finite-difference checks).
    pub fn sample_loss(
        &self,
        x: &[f64],
        y: ClassId,
        y_bar: Option<ClassId>,
        cfg: &CompositeLossConfig,
    ) -> Result<LossBreakdown> {
        let p = self.forward(x)?;
        Ok(loss::composite_loss_logits(&p.logits, y, y_bar, cfg))
    }

    /// Predicted labels for every row of `ds`.
    pub fn predict_dataset(&self, ds: &Dataset) -> Vec<ClassId> {
        const CHUNK: usize = 1024;
        let mut out = Vec::with_capacity(ds.len());
        let idx: Vec<usize> = (0..ds.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            let x = self.batch_input(ds, chunk);
            let logits = self.logits_batch(x.view());
            for row in logits.rows() {
                out.push(ClassId(loss::argmax(row.as_slice().expect("standard layout"))));
            }
        }
        out
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION, u8::from(self.standardizer.is_some())])?;
        w.write_all(&(self.input_dim as u32).to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.fan_out() as u32).to_le_bytes())?;
            w.write_all(&[match l.activation {
                Activation::Identity => 0,
                Activation::Relu => 1,
            }])?;
        }
        for v in self.params() {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(s) = &self.standardizer {
            for v in s.mean.iter().chain(&s.inv_std) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut offset = 0u64;
        let mut take = |r: &mut R, n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| Error::Format {
                format: "checkpoint",
                offset,
                message: format!("truncated, needed {n} more bytes"),
            })?;
            offset += n as u64;
            Ok(buf)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;

        let head = take(&mut r, 6)?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                format: "checkpoint",
                offset: 0,
                message: "bad magic".into(),
            });
        }
        if head[4] != CHECKPOINT_VERSION {
            return Err(Error::Format {
                format: "checkpoint",
                offset: 4,
                message: format!("unsupported version {}", head[4]),
            });
        }
        let has_norm = head[5] & 1 == 1;
        let dims = take(&mut r, 8)?;
        let input_dim = u32_at(&dims[..4]);
        let n_layers = u32_at(&dims[4..]);
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::Format {
                format: "checkpoint",
                offset: 10,
                message: format!("implausible layer count {n_layers}"),
            });
        }
        let mut shapes = Vec::with_capacity(n_layers);
        let mut fan_in = input_dim;
        for _ in 0..n_layers {
            let b = take(&mut r, 5)?;
            let fan_out = u32_at(&b[..4]);
            let act = match b[4] {
                0 => Activation::Identity,
                1 => Activation::Relu,
                other => {
                    return Err(Error::Format {
                        format: "checkpoint",
                        offset: 0,
                        message: format!("unknown activation code {other}"),
                    })
                }
            };
            shapes.push((fan_out, fan_in, act));
            fan_in = fan_out;
        }
        let mut read_f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let raw = take(r, n * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut layers = Vec::with_capacity(n_layers);
        for (fan_out, fan_in, activation) in shapes {
            let w = read_f64s(&mut r, fan_out * fan_in)?;
            let b = read_f64s(&mut r, fan_out)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((fan_out, fan_in), w).expect("shape matches length"),
                bias: Array1::from(b),
                activation,
            });
        }
        let mut model = MlpModel::from_layers(layers)?;
        if has_norm {
            let mean = read_f64s(&mut r, input_dim)?;
            let inv_std = read_f64s(&mut r, input_dim)?;
            model.standardizer = Some(Standardizer { mean, inv_std });
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SCDL";
const CHECKPOINT_VERSION: u8 = 1;

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(SolverKind::Sgd),
            "adam" => Ok(SolverKind::Adam),
            _ => Err(format!("unknown solver \"{s}\" (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl SolverConfig {
    pub fn adam() -> Self {
        SolverConfig {
            kind: SolverKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            epochs: 10,
        }
    }

    pub fn sgd() -> Self {
        SolverConfig {
            kind: SolverKind::Sgd,
            learning_rate: 0.05,
            momentum: 0.9,
            ..SolverConfig::adam()
        }
    }

    pub fn for_kind(kind: SolverKind) -> Self {
        match kind {
            SolverKind::Sgd => SolverConfig::sgd(),
            SolverKind::Adam => SolverConfig::adam(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("adam eps must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        Ok(())
    }
}

/// Optimizer state; buffers are laid out like [`MlpModel::params`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: SolverConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl Optimizer {
    pub fn new(cfg: SolverConfig, model: &MlpModel) -> Self {
        let n = model.param_count();
        Optimizer {
            cfg,
            first: vec![0.0; n],
            second: if cfg.kind == SolverKind::Adam {
                vec![0.0; n]
            } else {
                Vec::new()
            },
            step: 0,
        }
    }

    pub fn apply(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        let c = self.cfg;
        let (bc1, bc2) = (
            1.0 - c.beta1.powi(self.step as i32),
            1.0 - c.beta2.powi(self.step as i32),
        );
        let mut k = 0;
        for (layer, (gw, gb)) in model.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            for (p, &g) in params.zip(gw.iter().chain(gb.iter())) {
                match c.kind {
                    SolverKind::Sgd => {
                        let v = c.momentum * self.first[k] + g;
                        self.first[k] = v;
                        *p -= c.learning_rate * v;
                    }
                    SolverKind::Adam => {
                        let m = c.beta1 * self.first[k] + (1.0 - c.beta1) * g;
                        let v = c.beta2 * self.second[k] + (1.0 - c.beta2) * g * g;
                        self.first[k] = m;
                        self.second[k] = v;
                        *p -= c.learning_rate * (m / bc1) / ((v / bc2).sqrt() + c.eps);
                    }
                }
                k += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Epoch means over samples; accuracies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub positive: f64,
    pub opposite: f64,
    pub composite: f64,
    /// Accuracy of the predictions made while training through the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    /// Opposite labels drawn over the run (zero for OT).
    pub sampler_draws: u64,
    /// Row-major `c × c` counts of `(true, opposite)` pairs drawn.
    pub pair_counts: Vec<u64>,
}

/// Trains `model` in place. Fits the input standardizer on `train` first.
///
/// The stream of `rng` is consumed identically by every scenario (one draw
/// seeds the opposite-label stream, then per-epoch shuffles), so runs that
/// share a seed see the same minibatches and differ only in their opposite labels.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut MlpModel,
    train: &Dataset,
    test: Option<&Dataset>,
    prior: &SemanticPrior,
    scenario: Scenario,
    solver: &SolverConfig,
    cfg: &CompositeLossConfig,
    rng: &mut SeededRng,
) -> Result<TrainingLog> {
    solver.validate()?;
    cfg.validate()?;
    if train.class_count() != prior.class_count() || model.class_count() != prior.class_count() {
        return Err(Error::InvalidArgument(format!(
            "class counts disagree: dataset {}, prior {}, model {}",
            train.class_count(),
            prior.class_count(),
            model.class_count()
        )));
    }
    if train.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: train.dim(),
        });
    }
    model.set_standardizer(Some(Standardizer::fit(train)))?;

    let mut label_rng = SeededRng::new(rng.next_u64());
    let mut sampler = scenario
        .opposite_mode()
        .map(|mode| OppositeSampler::new(prior, mode).with_pair_log());
    let mut opt = Optimizer::new(*solver, model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 1..=solver.epochs {
        rng.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        let mut correct = 0usize;
        for (bi, idx) in order.chunks(solver.batch_size).enumerate() {
            let x = model.batch_input(train, idx);
            let ys: Vec<ClassId> = idx.iter().map(|&i| train.labels()[i]).collect();
            let y_bars: Option<Vec<ClassId>> = sampler
                .as_mut()
                .map(|s| s.resample(&ys, &mut label_rng).into_iter().map(|o| o.value).collect());
            let (grads, batch_loss, hits) = model.batch_gradients(x.view(), &ys, y_bars.as_deref(), cfg);
            if !batch_loss.composite.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            opt.apply(model, &grads);
            sum.add(&batch_loss);
            correct += hits;
        }
        sum.scale(1.0 / train.len() as f64);
        let stats = EpochStats {
            epoch,
            positive: sum.positive,
            opposite: sum.opposite,
            composite: sum.composite,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy: test.map(|t| evaluate(model, t)),
        };
        log::debug!(
            "{scenario} epoch {epoch}: loss {:.5} train acc {:.4} test acc {:?}",
            stats.composite,
            stats.train_accuracy,
            stats.test_accuracy
        );
        log.epochs.push(stats);
    }
    if let Some(s) = sampler {
        log.sampler_draws = s.draws();
        log.pair_counts = s.pair_counts().map(<[u64]>::to_vec).unwrap_or_default();
    }
    Ok(log)
}

/// Fraction of samples whose predicted label equals the true label.
pub fn evaluate(model: &MlpModel, ds: &Dataset) -> f64 {
    let preds = model.predict_dataset(ds);
    let hits = preds.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    hits as f64 / ds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_blobs, BlobSpec, Split};

    fn tiny(seed: u64) -> MlpModel {
        MlpModel::new(2, &[4], 3, &mut SeededRng::new(seed))
    }

    #[test]
    fn zero_model_predicts_uniform_class_zero() {
        let mut m = tiny(0);
        m.set_params(&vec![0.0; m.param_count()]).unwrap();
        let p = m.forward(&[0.3, -1.0]).unwrap();
        assert!(p.probs.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(p.label, ClassId(0));
    }

    #[test]
    fn identity_layer_picks_matching_class() {
        let layer = Layer {
            weights: Array2::eye(4),
            bias: Array1::zeros(4),
            activation: Activation::Identity,
        };
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        for k in 0..4 {
            let mut x = vec![0.0; 4];
            x[k] = 1.0;
            assert_eq!(m.forward(&x).unwrap().label, ClassId(k));
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = tiny(1);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.forward(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn from_layers_validation() {
        let relu_head = Layer {
            weights: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Relu,
        };
        assert!(MlpModel::from_layers(vec![relu_head]).is_err());
        let a = Layer {
            weights: Array2::zeros((3, 2)),
            bias: Array1::zeros(3),
            activation: Activation::Relu,
        };
        let b = Layer {
            weights: Array2::zeros((2, 4)),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        };
        assert!(MlpModel::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn seeded_model_is_reproducible() {
        let a = MlpModel::mlp3(10, 4, &mut SeededRng::new(5));
        let b = MlpModel::mlp3(10, 4, &mut SeededRng::new(5));
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let pa = a.forward(&x).unwrap();
        let pb = b.forward(&x).unwrap();
        assert_eq!(
            pa.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pb.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn final_bias_gradient_equals_logit_gradient() {
        let m = tiny(3);
        let cfg = CompositeLossConfig::default();
        let x = [0.7, -0.2];
        let (g, _) = m.backward(&x, ClassId(1), Some(ClassId(2)), &cfg).unwrap();
        let logits = m.forward(&x).unwrap().logits;
        let dz = loss::composite_grad_logits(&logits, ClassId(1), Some(ClassId(2)), &cfg);
        for (a, b) in g.biases.last().unwrap().iter().zip(&dz) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = tiny(9);
        let spec = BlobSpec::balanced(3, 3, 5, 1.0);
        let mut spec = spec;
        spec.dim = 6;
        let (ds, _) = synth_blobs(&spec, Split::Train, &mut SeededRng::new(0)).unwrap();
        let mut big = MlpModel::new(6, &[5], 3, &mut SeededRng::new(1));
        big.set_standardizer(Some(Standardizer::fit(&ds))).unwrap();
        for model in [&mut m, &mut big] {
            let mut buf = Vec::new();
            model.write_checkpoint(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"SCDL");
            assert_eq!(buf[4], 1);
            let back = MlpModel::read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(&back, &*model);
            let err = MlpModel::read_checkpoint(&buf[..buf.len() - 3]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }));
        }
    }

    #[test]
    fn solver_validation() {
        assert!(SolverConfig::adam().validate().is_ok());
        assert!(SolverConfig::sgd().validate().is_ok());
        let mut s = SolverConfig::sgd();
        s.momentum = 1.0;
        assert!(s.validate().is_err());
        s = SolverConfig::adam();
        s.batch_size = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn evaluate_constant_and_perfect() {
        let spec = BlobSpec::balanced(4, 2, 25, 10.0);
        let (ds, _) = synth_blobs(&spec, Split::Test, &mut SeededRng::new(2)).unwrap();
        // Constant predictor: only the bias of class 2 is positive.
        let layer = Layer {
            weights: Array2::zeros((4, ds.dim())),
            bias: Array1::from(vec![0.0, 0.0, 1.0, 0.0]),
            activation: Activation::Identity,
        };
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        assert!((evaluate(&m, &ds) - 0.25).abs() < 1e-12);
        // Nearest-mean classifier written as a linear layer: w_c = μ_c, b_c = −|μ_c|²/2.
        let mut w = Array2::zeros((4, ds.dim()));
        let mut b = Array1::zeros(4);
        for c in 0..4 {
            let mu = spec.class_mean(c);
            for (k, v) in mu.iter().enumerate() {
                w[[c, k]] = *v;
            }
            b[c] = -0.5 * mu.iter().map(|v| v * v).sum::<f64>();
        }
        let m = MlpModel::from_layers(vec![Layer {
            weights: w,
            bias: b,
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(evaluate(&m, &ds), 1.0);
    }

    #[test]
    fn sgd_momentum_update() {
        let mut m = MlpModel::from_layers(vec![Layer {
            weights: Array2::zeros((2, 1)),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut cfg = SolverConfig::sgd();
        cfg.learning_rate = 0.1;
        cfg.momentum = 0.5;
        let mut opt = Optimizer::new(cfg, &m);
        let g = Gradients {
            weights: vec![Array2::from_elem((2, 1), 1.0)],
            biases: vec![Array1::zeros(2)],
        };
        opt.apply(&mut m, &g);
        opt.apply(&mut m, &g);
        // v1 = 1, v2 = 1.5 → w = −0.1 − 0.15
        assert!((m.layers()[0].weights[[0, 0]] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut m = MlpModel::from_layers(vec![Layer {
            weights: Array2::zeros((1, 1)),
            bias: Array1::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut opt = Optimizer::new(SolverConfig::adam(), &m);
        let g = Gradients {
            weights: vec![Array2::from_elem((1, 1), 0.3)],
            biases: vec![Array1::from(vec![-2.0])],
        };
        opt.apply(&mut m, &g);
        assert!((m.layers()[0].weights[[0, 0]] + 1e-3).abs() < 1e-9);
        assert!((m.layers()[0].bias[0] - 1e-3).abs() < 1e-9);
    }
}
