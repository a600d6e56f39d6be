//! Label-refinement network in embedding space.
//!
//! A learnable label table `H⁰` is refined by `L` graph-convolution layers
//! `H^{l+1} = LeakyReLU(A* H^l W^l)`, combined through the residual
//! `Z* = H⁰ + H^L`, and scored against an image feature with a
//! temperature-scaled cosine followed by a sigmoid. Backward passes are
//! written out by hand; `A*` is treated as a constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{dot, matmul, matmul_nt, matmul_tn, norm, sigmoid, Matrix};
use crate::prior::{LabelEmbeddings, PriorGraph};
use crate::prior::format_float;

pub const DEFAULT_LAYERS: usize = 3;
pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `H⁰`, one row per label.
    pub label_table: Matrix,
    /// GCN weights, each `d × d`.
    pub weights: Vec<Matrix>,
    pub tau: f64,
    pub leaky_slope: f64,
}

impl ModelParams {
    pub fn n_labels(&self) -> usize {
        self.label_table.rows()
    }

    pub fn dim(&self) -> usize {
        self.label_table.cols()
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.weights.is_empty() {
            return Err(Error::Parameter("at least one GCN layer is required".into()));
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.shape() != (d, d) {
                return Err(Error::shape(
                    "ModelParams",
                    format!("layer {l} weight is {:?}, expected ({d}, {d})", w.shape()),
                ));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Parameter("leaky slope must be finite".into()));
        }
        Ok(())
    }
}

/// Gradients matching the layout of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub label_table: Matrix,
    pub weights: Vec<Matrix>,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let (n, d) = params.label_table.shape();
        Self {
            label_table: Matrix::zeros(n, d),
            weights: vec![Matrix::zeros(d, d); params.layers()],
        }
    }
}

/// Copy the embeddings into the label table and draw Xavier-uniform weights.
pub fn init_model(
    emb: &LabelEmbeddings,
    layers: usize,
    tau: f64,
    leaky_slope: f64,
    seed: u64,
) -> Result<ModelParams> {
    if layers == 0 {
        return Err(Error::Parameter("number of GCN layers must be at least 1".into()));
    }
    let d = emb.dim();
    let bound = (6.0 / (2.0 * d as f64)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..layers)
        .map(|_| {
            let data = (0..d * d).map(|_| rng.random_range(-bound..=bound)).collect();
            Matrix::from_vec(d, d, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams {
        label_table: emb.vectors().clone(),
        weights,
        tau,
        leaky_slope,
    };
    params.validate()?;
    Ok(params)
}

/// Intermediate values of the GCN pass needed by the backward pass.
#[derive(Debug, Clone)]
pub struct SamForward {
    /// `A* H^l` for each layer.
    aggregated: Vec<Matrix>,
    /// `A* H^l W^l` before the nonlinearity.
    pre_activation: Vec<Matrix>,
    pub z_star: Matrix,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 { x } else { slope * x }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 { 1.0 } else { slope }
}

fn check_graph(params: &ModelParams, graph: &PriorGraph) -> Result<()> {
    if graph.n_labels() != params.n_labels() {
        return Err(Error::shape(
            "sam_forward",
            format!(
                "graph has {} labels, label table has {}",
                graph.n_labels(),
                params.n_labels()
            ),
        ));
    }
    Ok(())
}

pub fn sam_forward_cached(params: &ModelParams, graph: &PriorGraph) -> Result<SamForward> {
    check_graph(params, graph)?;
    let a = graph.adjacency();
    let mut h = params.label_table.clone();
    let mut aggregated = Vec::with_capacity(params.layers());
    let mut pre_activation = Vec::with_capacity(params.layers());
    for w in &params.weights {
        let m = matmul(a, &h)?;
        let p = matmul(&m, w)?;
        h = p.clone();
        for v in h.as_mut_slice() {
            *v = leaky(*v, params.leaky_slope);
        }
        aggregated.push(m);
        pre_activation.push(p);
    }
    h.add_scaled(&params.label_table, 1.0)?;
    Ok(SamForward {
        aggregated,
        pre_activation,
        z_star: h,
    })
}

/// Refined label table `Z* = H⁰ + H^L`.
pub fn sam_forward(params: &ModelParams, graph: &PriorGraph) -> Result<Matrix> {
    Ok(sam_forward_cached(params, graph)?.z_star)
}

/// Back-propagate `dL/dZ*` through the GCN stack. Returns gradients on the
/// label table and on each layer weight.
pub fn sam_backward(
    params: &ModelParams,
    graph: &PriorGraph,
    fwd: &SamForward,
    grad_z_star: &Matrix,
) -> Result<ModelGrads> {
    if grad_z_star.shape() != params.label_table.shape() {
        return Err(Error::shape(
            "sam_backward",
            format!("{:?} vs {:?}", grad_z_star.shape(), params.label_table.shape()),
        ));
    }
    let a = graph.adjacency();
    let layers = params.layers();
    let mut grad_w = vec![Matrix::zeros(params.dim(), params.dim()); layers];
    let mut grad_h = grad_z_star.clone();
    for l in (0..layers).rev() {
        let mut grad_pre = grad_h;
        for (g, &x) in grad_pre
            .as_mut_slice()
            .iter_mut()
            .zip(fwd.pre_activation[l].as_slice())
        {
            *g *= leaky_grad(x, params.leaky_slope);
        }
        grad_w[l] = matmul_tn(&fwd.aggregated[l], &grad_pre)?;
        let grad_m = matmul_nt(&grad_pre, &params.weights[l])?;
        grad_h = matmul_tn(a, &grad_m)?;
    }
    // residual path
    grad_h.add_scaled(grad_z_star, 1.0)?;
    Ok(ModelGrads {
        label_table: grad_h,
        weights: grad_w,
    })
}

/// Likelihoods for one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub p: Vec<f64>,
}

/// Unit-normalized label rows, reused across every sample of a batch.
#[derive(Debug, Clone)]
pub struct LabelHead {
    units: Matrix,
    norms: Vec<f64>,
    tau: f64,
}

impl LabelHead {
    pub fn new(z_star: &Matrix, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
        }
        let mut units = z_star.clone();
        let mut norms = Vec::with_capacity(z_star.rows());
        for i in 0..z_star.rows() {
            let nrm = norm(z_star.row(i));
            if !(nrm > 0.0) || !nrm.is_finite() {
                return Err(Error::DegenerateVector(format!(
                    "refined label {i} has norm {nrm}"
                )));
            }
            for v in units.row_mut(i) {
                *v /= nrm;
            }
            norms.push(nrm);
        }
        Ok(Self { units, norms, tau })
    }

    pub fn n_labels(&self) -> usize {
        self.norms.len()
    }

    /// Cosines between `f` and each label, plus `‖f‖`.
    fn cosines(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        if f.len() != self.units.cols() {
            return Err(Error::shape(
                "predict",
                format!("feature has {} dims, labels have {}", f.len(), self.units.cols()),
            ));
        }
        let fn_ = norm(f);
        if !(fn_ > 0.0) || !fn_.is_finite() {
            return Err(Error::DegenerateVector(format!("feature norm {fn_}")));
        }
        let cos = self
            .units
            .row_iter()
            .map(|u| dot(u, f) / fn_)
            .collect();
        Ok((cos, fn_))
    }

    pub fn predict(&self, f: &[f64]) -> Result<Prediction> {
        let (cos, _) = self.cosines(f)?;
        let logits: Vec<f64> = cos.iter().map(|c| c / self.tau).collect();
        let p = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(Prediction { logits, p })
    }

    /// Accumulate `dL/dZ*` into `grad_z_star` given `dL/dlogits`; returns `dL/df`.
    pub fn backward(
        &self,
        f: &[f64],
        grad_logits: &[f64],
        grad_z_star: &mut Matrix,
    ) -> Result<Vec<f64>> {
        if grad_logits.len() != self.n_labels() || grad_z_star.shape() != self.units.shape() {
            return Err(Error::shape(
                "predict_backward",
                format!(
                    "{} logit grads, accumulator {:?}, head {:?}",
                    grad_logits.len(),
                    grad_z_star.shape(),
                    self.units.shape()
                ),
            ));
        }
        let (cos, fn_) = self.cosines(f)?;
        let mut grad_f = vec![0.0; f.len()];
        for i in 0..self.n_labels() {
            let g = grad_logits[i] / self.tau;
            if g == 0.0 {
                continue;
            }
            let u = self.units.row(i);
            let zi = self.norms[i];
            let c = cos[i];
            // d cos / d z_i = (f̂ − c ẑ_i)/‖z_i‖,  d cos / d f = (ẑ_i − c f̂)/‖f‖
            for ((gz, &uk), &fk) in grad_z_star.row_mut(i).iter_mut().zip(u).zip(f) {
                *gz += g * (fk / fn_ - c * uk) / zi;
            }
            for ((gf, &uk), &fk) in grad_f.iter_mut().zip(u).zip(f) {
                *gf += g * (uk - c * fk / fn_) / fn_;
            }
        }
        Ok(grad_f)
    }
}

/// `p_i = σ(cos(f, z*_i) / τ)`.
pub fn predict(f: &[f64], z_star: &Matrix, tau: f64) -> Result<Prediction> {
    LabelHead::new(z_star, tau)?.predict(f)
}

/// Full-model gradients for one feature given `dL/dp`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGrads {
    pub params: ModelGrads,
    pub feature: Vec<f64>,
}

/// Gradients of a loss on `p(f)` with respect to the label table, the GCN
/// weights and the feature.
pub fn model_backward(
    params: &ModelParams,
    graph: &PriorGraph,
    f: &[f64],
    grad_p: &[f64],
) -> Result<FullGrads> {
    let fwd = sam_forward_cached(params, graph)?;
    let head = LabelHead::new(&fwd.z_star, params.tau)?;
    let pred = head.predict(f)?;
    if grad_p.len() != pred.p.len() {
        return Err(Error::shape(
            "model_backward",
            format!("{} upstream grads for {} labels", grad_p.len(), pred.p.len()),
        ));
    }
    let grad_logits: Vec<f64> = grad_p
        .iter()
        .zip(&pred.p)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    let mut grad_z = Matrix::zeros(params.n_labels(), params.dim());
    let feature = head.backward(f, &grad_logits, &mut grad_z)?;
    let grads = sam_backward(params, graph, &fwd, &grad_z)?;
    Ok(FullGrads {
        params: grads,
        feature,
    })
}

/// Checkpoint: `n d L tau leaky_slope`, then the label table rows, then each
/// weight matrix row-major, floats at 17 significant digits.
pub fn write_checkpoint<W: std::io::Write>(mut w: W, params: &ModelParams) -> Result<()> {
    writeln!(
        w,
        "{} {} {} {} {}",
        params.n_labels(),
        params.dim(),
        params.layers(),
        format_float(params.tau),
        format_float(params.leaky_slope)
    )?;
    let write_rows = |w: &mut W, m: &Matrix| -> Result<()> {
        for row in m.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    };
    write_rows(&mut w, &params.label_table)?;
    for m in &params.weights {
        write_rows(&mut w, m)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: std::io::BufRead>(r: R) -> Result<ModelParams> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let header = lines.first().ok_or(Error::Parse {
        line: 1,
        msg: "empty checkpoint".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Parse {
        line: 1,
        msg: format!("expected `n d L tau leaky_slope`, got {header:?}"),
    };
    if fields.len() != 5 {
        return Err(bad_header());
    }
    let n: usize = fields[0].parse().map_err(|_| bad_header())?;
    let d: usize = fields[1].parse().map_err(|_| bad_header())?;
    let layers: usize = fields[2].parse().map_err(|_| bad_header())?;
    let tau: f64 = fields[3].parse().map_err(|_| bad_header())?;
    let leaky_slope: f64 = fields[4].parse().map_err(|_| bad_header())?;
    let expected = 1 + n + layers * d;
    if lines.len() != expected {
        return Err(Error::Parse {
            line: lines.len().min(expected),
            msg: format!("expected {expected} lines, found {}", lines.len()),
        });
    }
    let read_block = |start: usize, rows: usize| -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * d);
        for (k, line) in lines[start..start + rows].iter().enumerate() {
            let lineno = start + k + 1;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("{e}"),
                })?;
            if vals.len() != d {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {d} values, found {}", vals.len()),
                });
            }
            data.extend(vals);
        }
        Matrix::from_vec(rows, d, data)
    };
    let label_table = read_block(1, n)?;
    let weights = (0..layers)
        .map(|l| read_block(1 + n + l * d, d))
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams {
        label_table,
        weights,
        tau,
        leaky_slope,
    };
    params.validate()?;
    Ok(params)
}
