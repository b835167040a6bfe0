//! Positive cross-entropy, opposite loss, and their weighted composite.
//!
//! With `p = softmax(z)`, true label `y`, sampled opposite label `ȳ` and clamp `ε`:
//!
//! ```text
//! L_P = −ln max(p_y, ε)
//! L_O = −ln max(1 − p_ȳ, ε)
//! L   = α1·L_P + α2·L_O
//! ```
//!
//! Gradient with respect to the logits (each term vanishes while its clamp is active):
//!
//! ```text
//! ∂L_P/∂z_k = p_k − [k = y]
//! ∂L_O/∂z_k = p_ȳ / (1 − p_ȳ) · ([k = ȳ] − p_k)
//! ```
//!
//! `1 − p_ȳ` is evaluated as the sum of the remaining probabilities so it keeps
//! full relative precision when `p_ȳ` is close to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::ClassId;

pub const DEFAULT_PROB_CLAMP: f64 = 1e-7;

/// Probability vector: non-negative entries summing to one (within 1e−9).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "probability entry {i} = {} is negative or non-finite",
                p[i]
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(p))
    }

    pub fn uniform(c: usize) -> Self {
        ProbVector(vec![1.0 / c as f64; c])
    }

    pub fn one_hot(c: usize, y: ClassId) -> Self {
        let mut p = vec![0.0; c];
        p[y.0] = 1.0;
        ProbVector(p)
    }

    pub fn from_logits(z: &[f64]) -> Self {
        ProbVector(softmax(z))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> ClassId {
        ClassId(argmax(&self.0))
    }
}

/// Lowest index among the maximal entries.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// How per-sample losses are combined over a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub prob_clamp: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for CompositeLossConfig {
    fn default() -> Self {
        CompositeLossConfig {
            alpha1: 1.0,
            alpha2: 0.5,
            prob_clamp: DEFAULT_PROB_CLAMP,
            reduction: Reduction::Mean,
        }
    }
}

impl CompositeLossConfig {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        let cfg = CompositeLossConfig {
            alpha1,
            alpha2,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plain cross-entropy (`α1 = 1, α2 = 0`).
    pub fn cross_entropy() -> Self {
        CompositeLossConfig {
            alpha1: 1.0,
            alpha2: 0.0,
            ..Default::default()
        }
    }

    pub fn with_clamp(mut self, eps: f64) -> Self {
        self.prob_clamp = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok_weight = |a: f64| a.is_finite() && a >= 0.0;
        if !ok_weight(self.alpha1) || !ok_weight(self.alpha2) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative (alpha1={}, alpha2={})",
                self.alpha1, self.alpha2
            )));
        }
        if self.alpha1 + self.alpha2 <= 0.0 {
            return Err(Error::InvalidArgument("alpha1 + alpha2 must be positive".into()));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp <= 1e-3) {
            return Err(Error::InvalidArgument(format!(
                "probability clamp {} outside (0, 1e-3]",
                self.prob_clamp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub positive: f64,
    pub opposite: f64,
    pub composite: f64,
}

impl LossBreakdown {
    fn combine(positive: f64, opposite: f64, cfg: &CompositeLossConfig) -> Self {
        LossBreakdown {
            positive,
            opposite,
            composite: cfg.alpha1 * positive + cfg.alpha2 * opposite,
        }
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.positive += other.positive;
        self.opposite += other.opposite;
        self.composite += other.composite;
    }

    pub fn scale(&mut self, k: f64) {
        self.positive *= k;
        self.opposite *= k;
        self.composite *= k;
    }
}

/// `−ln max(p_y, ε)`.
pub fn positive_loss(p: &ProbVector, y: ClassId, eps: f64) -> f64 {
    -p.0[y.0].max(eps).ln()
}

/// `−ln max(1 − p_ȳ, ε)`.
pub fn opposite_loss(p: &ProbVector, y_bar: ClassId, eps: f64) -> f64 {
    let rest = (1.0 - p.0[y_bar.0]).max(0.0);
    -rest.max(eps).ln()
}

/// Composite loss on a probability vector. `y_bar = None` gives the opposite term as zero.
pub fn composite_loss(p: &ProbVector, y: ClassId, y_bar: Option<ClassId>, cfg: &CompositeLossConfig) -> LossBreakdown {
    let positive = positive_loss(p, y, cfg.prob_clamp);
    let opposite = y_bar.map_or(0.0, |b| opposite_loss(p, b, cfg.prob_clamp));
    LossBreakdown::combine(positive, opposite, cfg)
}

/// Softmax pieces shared by the loss and its gradient.
struct LogitStats {
    probs: Vec<f64>,
    log_p_y: f64,
    // ln(1 − p_ȳ), computed from the other classes' mass.
    log_rest: Option<f64>,
    rest: f64,
}

fn logit_stats(z: &[f64], y: ClassId, y_bar: Option<ClassId>) -> LogitStats {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    let log_s = s.ln();
    let probs: Vec<f64> = exps.iter().map(|&e| e / s).collect();
    let log_p_y = z[y.0] - m - log_s;
    let (log_rest, rest) = match y_bar {
        Some(b) => {
            let others: f64 = exps
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != b.0)
                .map(|(_, &e)| e)
                .sum();
            (Some(others.ln() - log_s), others / s)
        }
        None => (None, 1.0),
    };
    LogitStats {
        probs,
        log_p_y,
        log_rest,
        rest,
    }
}

/// Composite loss evaluated directly from logits (log-sum-exp form).
pub fn composite_loss_logits(
    z: &[f64],
    y: ClassId,
    y_bar: Option<ClassId>,
    cfg: &CompositeLossConfig,
) -> LossBreakdown {
    let st = logit_stats(z, y, y_bar);
    let ln_eps = cfg.prob_clamp.ln();
    let positive = -st.log_p_y.max(ln_eps);
    let opposite = st.log_rest.map_or(0.0, |lr| -lr.max(ln_eps));
    LossBreakdown::combine(positive, opposite, cfg)
}

/// `∂L/∂z` for `p = softmax(z)`.
pub fn composite_grad_logits(z: &[f64], y: ClassId, y_bar: Option<ClassId>, cfg: &CompositeLossConfig) -> Vec<f64> {
    let mut grad = vec![0.0; z.len()];
    composite_loss_and_grad(z, y, y_bar, cfg, &mut grad);
    grad
}

/// Loss and logit gradient in one pass; `grad` is overwritten.
pub fn composite_loss_and_grad(
    z: &[f64],
    y: ClassId,
    y_bar: Option<ClassId>,
    cfg: &CompositeLossConfig,
    grad: &mut [f64],
) -> LossBreakdown {
    debug_assert_eq!(z.len(), grad.len());
    let st = logit_stats(z, y, y_bar);
    let ln_eps = cfg.prob_clamp.ln();
    grad.fill(0.0);

    let positive = -st.log_p_y.max(ln_eps);
    if st.log_p_y > ln_eps && cfg.alpha1 != 0.0 {
        for (k, g) in grad.iter_mut().enumerate() {
            *g += cfg.alpha1 * st.probs[k];
        }
        grad[y.0] -= cfg.alpha1;
    }

    let mut opposite = 0.0;
    if let (Some(b), Some(log_rest)) = (y_bar, st.log_rest) {
        opposite = -log_rest.max(ln_eps);
        if log_rest > ln_eps && cfg.alpha2 != 0.0 {
            let coef = cfg.alpha2 * st.probs[b.0] / st.rest;
            for (k, g) in grad.iter_mut().enumerate() {
                *g -= coef * st.probs[k];
            }
            grad[b.0] += coef;
        }
    }

    LossBreakdown::combine(positive, opposite, cfg)
}

/// Single-precision composite loss and logit gradient.
///
/// Tracks the `f64` reference to about 1e−4 relative.
pub fn composite_loss_and_grad_f32(
    z: &[f32],
    y: ClassId,
    y_bar: Option<ClassId>,
    alpha1: f32,
    alpha2: f32,
    eps: f32,
    grad: &mut [f32],
) -> (f32, f32, f32) {
    let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut s = 0.0f32;
    for (g, &v) in grad.iter_mut().zip(z) {
        *g = (v - m).exp();
        s += *g;
    }
    let log_s = s.ln();
    let ln_eps = eps.ln();
    let log_p_y = z[y.0] - m - log_s;
    let (log_rest, rest, p_b) = match y_bar {
        Some(b) => {
            let others = s - grad[b.0];
            (Some(others.ln() - log_s), others / s, grad[b.0] / s)
        }
        None => (None, 1.0, 0.0),
    };
    for g in grad.iter_mut() {
        *g /= s;
    }
    // grad now holds the probabilities.
    let positive = -log_p_y.max(ln_eps);
    let pos_active = log_p_y > ln_eps;
    let mut opposite = 0.0;
    let mut coef = 0.0;
    if let (Some(_), Some(lr)) = (y_bar, log_rest) {
        opposite = -lr.max(ln_eps);
        if lr > ln_eps {
            coef = alpha2 * p_b / rest;
        }
    }
    let a1 = if pos_active { alpha1 } else { 0.0 };
    for g in grad.iter_mut() {
        *g *= a1 - coef;
    }
    if pos_active {
        grad[y.0] -= alpha1;
    }
    if let Some(b) = y_bar {
        grad[b.0] += coef;
    }
    (positive, opposite, alpha1 * positive + alpha2 * opposite)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> ProbVector {
        ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap()
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.2, -0.2]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn positive_loss_values() {
        let eps = DEFAULT_PROB_CLAMP;
        assert_eq!(positive_loss(&ProbVector::one_hot(4, ClassId(2)), ClassId(2), eps), 0.0);
        assert!((positive_loss(&p3(), ClassId(0), eps) - 0.356_674_943_938_732_4).abs() < 1e-12);
        let u = ProbVector::uniform(10);
        for y in 0..10 {
            assert!((positive_loss(&u, ClassId(y), eps) - 10f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_loss_clamps_zero_probability() {
        let p = ProbVector::one_hot(3, ClassId(0));
        let l = positive_loss(&p, ClassId(1), 1e-7);
        assert!((l - 16.118_095_650_958_32).abs() < 1e-9);
    }

    #[test]
    fn opposite_loss_values() {
        let eps = DEFAULT_PROB_CLAMP;
        assert_eq!(opposite_loss(&ProbVector::one_hot(3, ClassId(0)), ClassId(1), eps), 0.0);
        assert!((opposite_loss(&p3(), ClassId(1), eps) - 0.223_143_551_314_209_7).abs() < 1e-12);
        let p = ProbVector::new(vec![1.0 - 1e-9, 1e-9]).unwrap();
        let l = opposite_loss(&p, ClassId(0), 1e-7);
        assert!((l - 16.118_095_650_958_32).abs() < 1e-9, "{l}");
    }

    #[test]
    fn composite_example() {
        let cfg = CompositeLossConfig::new(1.0, 0.5).unwrap();
        let b = composite_loss(&p3(), ClassId(0), Some(ClassId(2)), &cfg);
        assert!((b.positive - 0.356_674_943_938_732_4).abs() < 1e-12);
        assert!((b.opposite - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!((b.composite - 0.409_355_201_767_645_5).abs() < 1e-12);
        assert!((b.composite - (b.positive + 0.5 * b.opposite)).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha2_is_cross_entropy() {
        let cfg = CompositeLossConfig::cross_entropy();
        let b = composite_loss(&p3(), ClassId(1), Some(ClassId(0)), &cfg);
        assert_eq!(b.composite, b.positive);
        let z = [0.3, -1.2, 2.0, 0.1];
        let g = composite_grad_logits(&z, ClassId(2), Some(ClassId(0)), &cfg);
        let p = softmax(&z);
        for k in 0..4 {
            let expect = p[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((g[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CompositeLossConfig::new(0.0, 0.0).is_err());
        assert!(CompositeLossConfig::new(-1.0, 1.0).is_err());
        assert!(CompositeLossConfig::default().with_clamp(0.1).validate().is_err());
        assert!(CompositeLossConfig::default().with_clamp(0.0).validate().is_err());
        assert!(CompositeLossConfig::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn argmax_lowest_index_tie_break() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn logits_path_matches_probability_path() {
        let cfg = CompositeLossConfig::default();
        let z = [0.5, -0.3, 1.7, 0.0, -2.0];
        let p = ProbVector::from_logits(&z);
        let a = composite_loss(&p, ClassId(1), Some(ClassId(2)), &cfg);
        let b = composite_loss_logits(&z, ClassId(1), Some(ClassId(2)), &cfg);
        assert!((a.composite - b.composite).abs() < 1e-12);
    }

    #[test]
    fn saturated_opposite_has_zero_gradient_from_that_term() {
        let cfg = CompositeLossConfig::new(0.0, 1.0).unwrap();
        let z = [40.0, 0.0, 0.0];
        let g = composite_grad_logits(&z, ClassId(1), Some(ClassId(0)), &cfg);
        assert!(g.iter().all(|v| *v == 0.0));
        let l = composite_loss_logits(&z, ClassId(1), Some(ClassId(0)), &cfg);
        assert!((l.opposite + cfg.prob_clamp.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_precision_tracks_reference() {
        let cfg = CompositeLossConfig::default();
        let z = [0.5, -0.3, 1.7, 0.0, -2.0, 0.9];
        let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        let reference_grad = composite_grad_logits(&z, ClassId(4), Some(ClassId(2)), &cfg);
        let reference = composite_loss_logits(&z, ClassId(4), Some(ClassId(2)), &cfg);
        let mut g = vec![0.0f32; 6];
        let (_, _, comp) = composite_loss_and_grad_f32(&zf, ClassId(4), Some(ClassId(2)), 1.0, 0.5, 1e-7, &mut g);
        assert!(((comp as f64 - reference.composite) / reference.composite).abs() < 1e-4);
        let scale = reference_grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in g.iter().zip(&reference_grad) {
            assert!((*a as f64 - b).abs() / scale < 1e-4);
        }
    }
}
