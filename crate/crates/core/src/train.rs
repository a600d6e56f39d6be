//! Adam training loop over the refined-label model.
//!
//! Each batch runs the GCN once, scores the weak and strong views of every
//! sample, and back-propagates the batch-mean loss. Thresholds and (in
//! dynamic mode) the label graph are refreshed at epoch boundaries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::eval::{mean_ap, MapReport, PrecisionCounter, ScoreTable};
use crate::losses::{confident_set, sasc, total_loss, LossWeights, ThresholdState};
use crate::model::{
    init_model, sam_backward, sam_forward_cached, LabelHead, ModelGrads, ModelParams,
    DEFAULT_LAYERS, DEFAULT_LEAKY_SLOPE, DEFAULT_TAU,
};
use crate::numcore::{Matrix};
use crate::prior::{build_prior, dynamic_graph, GraphMode, LabelEmbeddings, PriorGraph, PriorParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&k| vec![0.0; k]).collect(),
            v: sizes.iter().map(|&k| vec![0.0; k]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over every tensor in `params`.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} tensors, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(Error::shape(
                "adam_step",
                format!("tensor {k}: {} params, {} grads", p.len(), g.len()),
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= hyper.learning_rate * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub graph_mode: GraphMode,
    pub prior: PriorParams,
    pub layers: usize,
    pub tau: f64,
    pub leaky_slope: f64,
    pub losses: LossWeights,
    /// Epochs over which `beta` ramps linearly from 1 to its configured value.
    pub beta_ramp_epochs: usize,
    pub t_base: f64,
    pub t_min: f64,
    pub enable_sam: bool,
    pub enable_cst: bool,
    pub enable_dstl: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            adam: AdamConfig::default(),
            graph_mode: GraphMode::Static,
            prior: PriorParams::default(),
            layers: DEFAULT_LAYERS,
            tau: DEFAULT_TAU,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            losses: LossWeights::default(),
            beta_ramp_epochs: 0,
            t_base: 0.9,
            t_min: 0.5,
            enable_sam: true,
            enable_cst: true,
            enable_dstl: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic experiments. Raw embeddings are not
    /// calibrated like a pretrained cosine head, so τ = 0.01 saturates the
    /// sigmoid; and with `τ′ = 1` the graph softmax over `Ā` (entries at most
    /// 1 − s) is close to uniform.
    pub fn synthetic() -> Self {
        Self {
            tau: 0.1,
            prior: PriorParams { tau_prime: 0.25, ..PriorParams::default() },
            ..Self::default()
        }
    }

    /// No graph, no label refinement and no self-supervised terms.
    pub fn baseline(self) -> Self {
        let mut cfg = self.sam_only();
        cfg.graph_mode = GraphMode::None;
        cfg.enable_sam = false;
        cfg
    }

    /// Label refinement through the graph without the self-supervised terms.
    pub fn sam_only(mut self) -> Self {
        self.enable_cst = false;
        self.enable_dstl = false;
        self.losses.lambda_cst = 0.0;
        self.losses.lambda_dstl = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if !(self.adam.learning_rate >= 0.0) || !self.adam.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate must be nonnegative, got {}",
                self.adam.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam.eps > 0.0) {
            return Err(Error::Parameter("Adam epsilon must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Parameter("number of GCN layers must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.prior.s > 0.0 && self.prior.s < 1.0) || !(self.prior.tau_prime > 0.0) || self.prior.top_k == 0 {
            return Err(Error::Parameter("prior needs K >= 1, s in (0, 1) and tau_prime > 0".into()));
        }
        ThresholdState::new(1, self.t_base, self.t_min)?;
        self.losses.validate()
    }

    /// Loss weights in effect for `epoch`, after ablation switches and the β ramp.
    pub fn effective_weights(&self, epoch: usize) -> LossWeights {
        let mut w = self.losses;
        if !self.enable_cst {
            w.lambda_cst = 0.0;
        }
        if !self.enable_dstl {
            w.lambda_dstl = 0.0;
        }
        if self.beta_ramp_epochs > 0 && epoch < self.beta_ramp_epochs {
            let frac = epoch as f64 / self.beta_ramp_epochs as f64;
            w.beta = 1.0 + (self.losses.beta - 1.0) * frac;
        }
        w
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cls: f64,
    /// Weighted consistency term.
    pub loss_cst: f64,
    /// Weighted distillation term.
    pub loss_dstl: f64,
    /// Precision of the confident sets drawn from raw weak-view predictions.
    pub pseudo_precision: Option<f64>,
    /// Same, after calibrating the weak view with the static prior.
    pub pseudo_precision_calibrated: Option<f64>,
    pub test_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "epoch,loss_total,loss_cls,loss_cst,loss_dstl,pseudo_precision,test_map";

    /// Comma-separated log; absent values are empty fields.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.8}"));
        for r in &self.records {
            writeln!(
                w,
                "{},{:.8},{:.8},{:.8},{:.8},{},{}",
                r.epoch,
                r.loss_total,
                r.loss_cls,
                r.loss_cst,
                r.loss_dstl,
                opt(r.pseudo_precision),
                opt(r.test_map)
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: TrainLog,
    /// Graph the model used in its final epoch.
    pub graph: PriorGraph,
}

/// Label graph the model consumes under `mode`.
pub fn model_graph(
    mode: GraphMode,
    emb: &LabelEmbeddings,
    label_table: &Matrix,
    params: PriorParams,
) -> Result<PriorGraph> {
    match mode {
        GraphMode::Static => build_prior(emb, params),
        GraphMode::Dynamic => dynamic_graph(label_table, params),
        GraphMode::None => Ok(PriorGraph::identity(emb.n_labels(), params)),
    }
}

/// Refined label table; the GCN is bypassed when SAM is disabled.
pub fn refined_labels(params: &ModelParams, graph: &PriorGraph, enable_sam: bool) -> Result<Matrix> {
    if enable_sam {
        Ok(sam_forward_cached(params, graph)?.z_star)
    } else {
        Ok(params.label_table.clone())
    }
}

/// Score every sample's base feature and compute mAP against its ground truth.
pub fn evaluate(
    params: &ModelParams,
    graph: &PriorGraph,
    enable_sam: bool,
    ds: &Dataset,
) -> Result<MapReport> {
    let z = refined_labels(params, graph, enable_sam)?;
    let head = LabelHead::new(&z, params.tau)?;
    let n = ds.n_labels();
    let mut scores = Matrix::zeros(ds.len(), n);
    let mut truth = Vec::with_capacity(ds.len() * n);
    for (i, s) in ds.samples.iter().enumerate() {
        // logits rank identically to p and do not saturate
        let pred = head.predict(&s.f_base)?;
        scores.row_mut(i).copy_from_slice(&pred.logits);
        truth.extend((0..n).map(|c| s.truth().is_positive(c)));
    }
    mean_ap(&ScoreTable::new(scores, truth)?)
}

fn check_dims(cfg: &TrainConfig, train: &Dataset, emb: &LabelEmbeddings) -> Result<()> {
    cfg.validate()?;
    if train.n_labels() != emb.n_labels() || train.dim != emb.dim() {
        return Err(Error::shape(
            "train",
            format!(
                "dataset has {} labels / {} dims, embeddings {} / {}",
                train.n_labels(),
                train.dim,
                emb.n_labels(),
                emb.dim()
            ),
        ));
    }
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    Ok(())
}

fn nan_guard(value: f64, term: &'static str, epoch: usize, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term, epoch, batch })
    }
}

/// Train from the embedding initialization.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    emb: &LabelEmbeddings,
) -> Result<TrainOutput> {
    check_dims(cfg, train_set, emb)?;
    let params = init_model(emb, cfg.layers, cfg.tau, cfg.leaky_slope, derive_seed(cfg.seed, 1))?;
    train_from(cfg, params, train_set, test_set, emb)
}

/// Train starting from explicit parameters.
pub fn train_from(
    cfg: &TrainConfig,
    mut params: ModelParams,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    emb: &LabelEmbeddings,
) -> Result<TrainOutput> {
    check_dims(cfg, train_set, emb)?;
    params.validate()?;
    let n = emb.n_labels();
    let reference_prior = build_prior(emb, cfg.prior)?;
    let mut graph = model_graph(cfg.graph_mode, emb, &params.label_table, cfg.prior)?;
    let mut thresholds = ThresholdState::new(n, cfg.t_base, cfg.t_min)?;
    let mut sizes = vec![params.label_table.as_slice().len()];
    sizes.extend(params.weights.iter().map(|w| w.as_slice().len()));
    let mut adam = AdamState::new(&sizes);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let weights = cfg.effective_weights(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100 + epoch as u64));
        order.shuffle(&mut rng);

        let (mut sum_cls, mut sum_cst, mut sum_dstl) = (0.0, 0.0, 0.0);
        let mut raw_prec = PrecisionCounter::default();
        let mut cal_prec = PrecisionCounter::default();

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let fwd = if cfg.enable_sam {
                Some(sam_forward_cached(&params, &graph)?)
            } else {
                None
            };
            let z_star = fwd.as_ref().map_or(&params.label_table, |f| &f.z_star);
            let head = LabelHead::new(z_star, params.tau)?;
            let mut grad_z = Matrix::zeros(n, params.dim());
            let scale = 1.0 / batch.len() as f64;
            let current = thresholds.thresholds().to_vec();

            for &i in batch {
                let s = &train_set.samples[i];
                let weak = head.predict(&s.f_weak)?;
                let strong = head.predict(&s.f_strong)?;
                let loss = total_loss(&weak.logits, &strong.logits, &s.y, &graph, &current, &weights)?;
                nan_guard(loss.cls, "cls", epoch, batch_idx)?;
                nan_guard(loss.cst, "cst", epoch, batch_idx)?;
                nan_guard(loss.dstl, "dstl", epoch, batch_idx)?;
                sum_cls += loss.cls;
                sum_cst += loss.cst;
                sum_dstl += loss.dstl;

                let gw: Vec<f64> = loss.grad_weak.iter().map(|g| g * scale).collect();
                let gs: Vec<f64> = loss.grad_strong.iter().map(|g| g * scale).collect();
                head.backward(&s.f_weak, &gw, &mut grad_z)?;
                head.backward(&s.f_strong, &gs, &mut grad_z)?;

                thresholds.observe(&weak.p);
                let truth = s.truth();
                raw_prec.record(&loss.confident, truth);
                let calibrated = sasc(&weak.p, reference_prior.adjacency())?;
                cal_prec.record(&confident_set(&calibrated, &current, weights.k_conf), truth);
            }

            let grads = match &fwd {
                Some(f) => sam_backward(&params, &graph, f, &grad_z)?,
                None => {
                    let mut g = ModelGrads::zeros_like(&params);
                    g.label_table = grad_z;
                    g
                }
            };
            let grad_slices: Vec<&[f64]> = std::iter::once(grads.label_table.as_slice())
                .chain(grads.weights.iter().map(Matrix::as_slice))
                .collect();
            let mut param_slices: Vec<&mut [f64]> = std::iter::once(params.label_table.as_mut_slice())
                .chain(params.weights.iter_mut().map(Matrix::as_mut_slice))
                .collect();
            adam_step(&mut param_slices, &grad_slices, &mut adam, &cfg.adam)?;
        }

        thresholds.update_thresholds();
        if cfg.graph_mode == GraphMode::Dynamic {
            graph = dynamic_graph(&params.label_table, cfg.prior)?;
        }
        let test_map = match test_set {
            Some(ds) => Some(evaluate(&params, &graph, cfg.enable_sam, ds)?.map),
            None => None,
        };
        let m = train_set.len() as f64;
        let (cls, cst, dstl) = (sum_cls / m, sum_cst / m, sum_dstl / m);
        log.records.push(EpochRecord {
            epoch: epoch + 1,
            loss_total: cls + cst + dstl,
            loss_cls: cls,
            loss_cst: cst,
            loss_dstl: dstl,
            pseudo_precision: raw_prec.precision(),
            pseudo_precision_calibrated: cal_prec.precision(),
            test_map,
        });
    }
    Ok(TrainOutput { params, log, graph })
}
