//! Training objectives.
//!
//! Every loss takes logits (pre-sigmoid scores) for the branch that receives
//! gradient and returns the value together with `dL/dlogits`. Probabilities
//! entering a logarithm are clamped to `[PROB_EPS, 1 - PROB_EPS]`; where the
//! clamp is active the derivative is zero.

use crate::error::{Error, Result};
use crate::numcore::{clamp_prob, matvec, sigmoid, Matrix, PROB_EPS};
use crate::prior::PriorGraph;

/// Annotation state of one class for one sample.
pub const POSITIVE: i8 = 1;
pub const NEGATIVE: i8 = 0;
pub const UNKNOWN: i8 = -1;

/// Per-class annotations in `{+1, 0, -1}` (positive, negative, unknown).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::Validation(format!(
                "label values must be +1, 0 or -1, got {bad}"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == POSITIVE)
            .map(|(i, _)| i)
    }

    pub fn is_positive(&self, c: usize) -> bool {
        self.0[c] == POSITIVE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cst: f64,
    pub lambda_dstl: f64,
    /// Focal exponent.
    pub alpha: f64,
    /// Probability above which an unannotated class is treated as positive.
    pub beta: f64,
    /// Margin subtracted from positive-branch logits.
    pub margin: f64,
    /// Size cap of the confident set.
    pub k_conf: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cst: 0.125,
            lambda_dstl: 0.125,
            alpha: 2.0,
            beta: 0.6,
            margin: 1.0,
            k_conf: 3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cst >= 0.0) || !(self.lambda_dstl >= 0.0) {
            return Err(Error::Parameter("loss weights must be nonnegative".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Parameter(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Parameter(format!("margin must be nonnegative, got {}", self.margin)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.k_conf == 0 {
            return Err(Error::Parameter("k_conf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss value with its gradient on the input logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Clamped sigmoid and its derivative (zero while clamped).
fn clamped_sigmoid(z: f64) -> (f64, f64) {
    let p = sigmoid(z);
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        (clamp_prob(p), 0.0)
    } else {
        (p, p * (1.0 - p))
    }
}

/// `-(1-q)^α ln q` and its derivative in `q`.
fn focal_pos(q: f64, alpha: f64) -> (f64, f64) {
    let om = 1.0 - q;
    let value = -om.powf(alpha) * q.ln();
    let grad = if alpha == 0.0 {
        -1.0 / q
    } else {
        alpha * om.powf(alpha - 1.0) * q.ln() - om.powf(alpha) / q
    };
    (value, grad)
}

/// `-q^α ln(1-q)` and its derivative in `q`.
fn focal_neg(q: f64, alpha: f64) -> (f64, f64) {
    let om = 1.0 - q;
    let value = -q.powf(alpha) * om.ln();
    let grad = if alpha == 0.0 {
        1.0 / om
    } else {
        -alpha * q.powf(alpha - 1.0) * om.ln() + q.powf(alpha) / om
    };
    (value, grad)
}

/// Focal classification loss with a positive-branch margin and pseudo-positive
/// correction of unannotated classes.
///
/// Annotated positives use `p^m = σ(z - m)`. Every other class is a negative
/// unless its probability exceeds `beta`, in which case it is scored as a
/// positive without margin.
pub fn splc_focal_loss(logits: &[f64], y: &LabelVector, w: &LossWeights) -> Result<LossValue> {
    if logits.len() != y.len() {
        return Err(Error::shape(
            "splc_focal_loss",
            format!("{} logits for {} labels", logits.len(), y.len()),
        ));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (c, (&z, &label)) in logits.iter().zip(y.as_slice()).enumerate() {
        let (term, g) = if label == POSITIVE {
            let (q, dq) = clamped_sigmoid(z - w.margin);
            let (v, dv) = focal_pos(q, w.alpha);
            (v, dv * dq)
        } else {
            let (p, dp) = clamped_sigmoid(z);
            let (v, dv) = if p <= w.beta {
                focal_neg(p, w.alpha)
            } else {
                focal_pos(p, w.alpha)
            };
            (v, dv * dp)
        };
        value += term;
        grad[c] = g;
    }
    Ok(LossValue { value, grad })
}

/// Calibrate a likelihood vector with a row-stochastic correlation matrix: `W p`.
pub fn sasc(p: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    if !w.is_square() || w.rows() != p.len() {
        return Err(Error::shape(
            "sasc",
            format!("{:?} calibration for {} likelihoods", w.shape(), p.len()),
        ));
    }
    for (i, row) in w.row_iter().enumerate() {
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Calibration(format!("row {i} has a negative or non-finite entry")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Calibration(format!("row {i} sums to {total}")));
        }
    }
    matvec(w, p)
}

/// Per-class dynamic confidence thresholds with epoch-level hit counting.
///
/// During an epoch, every weak-view probability above `t_base` counts as a
/// hit for its class. At the epoch boundary each class's threshold becomes
/// `max(t_min, t_base * hits(c) / max_c hits(c))` and the counts reset.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    thresholds: Vec<f64>,
    hits: Vec<u64>,
    t_base: f64,
    t_min: f64,
}

impl ThresholdState {
    pub fn new(n_labels: usize, t_base: f64, t_min: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min <= t_base && t_base <= 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < t_min <= t_base <= 1, got t_min={t_min}, t_base={t_base}"
            )));
        }
        Ok(Self {
            thresholds: vec![t_base; n_labels],
            hits: vec![0; n_labels],
            t_base,
            t_min,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn hits(&self) -> &[u64] {
        &self.hits
    }

    pub fn t_base(&self) -> f64 {
        self.t_base
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    /// Count confident hits from one sample's weak-view probabilities.
    pub fn observe(&mut self, p_weak: &[f64]) {
        debug_assert_eq!(p_weak.len(), self.hits.len());
        for (h, &p) in self.hits.iter_mut().zip(p_weak) {
            if p > self.t_base {
                *h += 1;
            }
        }
    }

    pub fn observe_batch<'a>(&mut self, batch: impl IntoIterator<Item = &'a [f64]>) {
        for p in batch {
            self.observe(p);
        }
    }

    /// Close the epoch: recompute thresholds from the hit counts and reset them.
    pub fn update_thresholds(&mut self) {
        let max = self.hits.iter().copied().max().unwrap_or(0).max(1) as f64;
        for (t, h) in self.thresholds.iter_mut().zip(&mut self.hits) {
            let ratio = *h as f64 / max;
            *t = (ratio * self.t_base).max(self.t_min);
            *h = 0;
        }
    }
}

/// Pseudo-positive classes for one sample, in descending probability order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfidentSet(Vec<usize>);

impl ConfidentSet {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, c: usize) -> bool {
        self.0.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Top-`k_conf` classes of `p_weak` that also clear their own threshold.
pub fn confident_set(p_weak: &[f64], thresholds: &[f64], k_conf: usize) -> ConfidentSet {
    debug_assert_eq!(p_weak.len(), thresholds.len());
    let mut order: Vec<usize> = (0..p_weak.len()).collect();
    order.sort_by(|&a, &b| p_weak[b].total_cmp(&p_weak[a]));
    order.truncate(k_conf);
    order.retain(|&c| p_weak[c] > thresholds[c]);
    ConfidentSet(order)
}

/// `-Σ_{c∈O} ln p_s(c) - Σ_{c∉O} ln(1 - p_s(c))` on strong-view logits.
pub fn consistency_loss(strong_logits: &[f64], confident: &ConfidentSet) -> LossValue {
    let mut in_set = vec![false; strong_logits.len()];
    for &c in confident.indices() {
        in_set[c] = true;
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; strong_logits.len()];
    for (c, &z) in strong_logits.iter().enumerate() {
        let (p, dp) = clamped_sigmoid(z);
        if in_set[c] {
            value -= p.ln();
            grad[c] = -dp / p;
        } else {
            value -= (1.0 - p).ln();
            grad[c] = dp / (1.0 - p);
        }
    }
    LossValue { value, grad }
}

/// Per-class binary KL from the calibrated weak-view teacher to the strong view.
/// The teacher is a constant: no gradient is returned for it.
pub fn distill_loss(teacher: &[f64], strong_logits: &[f64]) -> Result<LossValue> {
    if teacher.len() != strong_logits.len() {
        return Err(Error::shape(
            "distill_loss",
            format!("{} teacher entries for {} logits", teacher.len(), strong_logits.len()),
        ));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; strong_logits.len()];
    for (c, (&t, &z)) in teacher.iter().zip(strong_logits).enumerate() {
        let q = clamp_prob(t);
        let (s, ds) = clamped_sigmoid(z);
        value += q * (q / s).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - s)).ln();
        grad[c] = (-q / s + (1.0 - q) / (1.0 - s)) * ds;
    }
    Ok(LossValue { value, grad })
}

/// Weighted self-supervised terms for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PesslLoss {
    /// `λ_cst · L_cst`.
    pub cst: f64,
    /// `λ_dstl · L_dstl`.
    pub dstl: f64,
    pub grad_strong: Vec<f64>,
    pub confident: ConfidentSet,
}

impl PesslLoss {
    pub fn value(&self) -> f64 {
        self.cst + self.dstl
    }
}

/// `λ_cst L_cst + λ_dstl L_dstl`. Terms whose weight is zero are skipped
/// entirely and contribute exactly zero.
pub fn pessl_loss(
    p_weak: &[f64],
    strong_logits: &[f64],
    graph: &PriorGraph,
    thresholds: &[f64],
    w: &LossWeights,
) -> Result<PesslLoss> {
    let n = strong_logits.len();
    if p_weak.len() != n || thresholds.len() != n || graph.n_labels() != n {
        return Err(Error::shape(
            "pessl_loss",
            format!(
                "weak {} / strong {} / thresholds {} / graph {}",
                p_weak.len(),
                n,
                thresholds.len(),
                graph.n_labels()
            ),
        ));
    }
    let confident = confident_set(p_weak, thresholds, w.k_conf);
    let mut grad_strong = vec![0.0; n];
    let mut cst = 0.0;
    let mut dstl = 0.0;
    if w.lambda_cst > 0.0 {
        let l = consistency_loss(strong_logits, &confident);
        cst = w.lambda_cst * l.value;
        for (g, d) in grad_strong.iter_mut().zip(&l.grad) {
            *g += w.lambda_cst * d;
        }
    }
    if w.lambda_dstl > 0.0 {
        let teacher = sasc(p_weak, graph.adjacency())?;
        let l = distill_loss(&teacher, strong_logits)?;
        dstl = w.lambda_dstl * l.value;
        for (g, d) in grad_strong.iter_mut().zip(&l.grad) {
            *g += w.lambda_dstl * d;
        }
    }
    Ok(PesslLoss {
        cst,
        dstl,
        grad_strong,
        confident,
    })
}

/// Classification plus self-supervised loss for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub cls: f64,
    pub cst: f64,
    pub dstl: f64,
    pub grad_weak: Vec<f64>,
    pub grad_strong: Vec<f64>,
    pub confident: ConfidentSet,
}

impl TotalLoss {
    pub fn value(&self) -> f64 {
        self.cls + self.cst + self.dstl
    }
}

/// Classification loss on the weak view plus the self-supervised terms; the
/// weak view acts as a detached teacher for the latter.
pub fn total_loss(
    weak_logits: &[f64],
    strong_logits: &[f64],
    y: &LabelVector,
    graph: &PriorGraph,
    thresholds: &[f64],
    w: &LossWeights,
) -> Result<TotalLoss> {
    let cls = splc_focal_loss(weak_logits, y, w)?;
    let p_weak: Vec<f64> = weak_logits.iter().map(|&z| sigmoid(z)).collect();
    let pessl = pessl_loss(&p_weak, strong_logits, graph, thresholds, w)?;
    Ok(TotalLoss {
        cls: cls.value,
        cst: pessl.cst,
        dstl: pessl.dstl,
        grad_weak: cls.grad,
        grad_strong: pessl.grad_strong,
        confident: pessl.confident,
    })
}
