//! Embedding and dataset files, incomplete-label masking, feature-space
//! augmentation and a synthetic generator with planted label co-occurrence.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LabelVector, NEGATIVE, POSITIVE, UNKNOWN};
use crate::numcore::{cosine_sim, normalized, Matrix};
use crate::prior::{format_float, LabelEmbeddings};

/// Write `<n> <d>` then one `<name> <d floats>` line per label.
pub fn write_embeddings<W: Write>(mut w: W, emb: &LabelEmbeddings) -> Result<()> {
    writeln!(w, "{} {}", emb.n_labels(), emb.dim())?;
    for (name, row) in emb.names().iter().zip(emb.vectors().row_iter()) {
        write!(w, "{name}")?;
        for v in row {
            write!(w, " {}", format_float(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<LabelEmbeddings> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        msg: "empty embedding file".into(),
    })?;
    let bad_header = || Error::Parse {
        line: 1,
        msg: format!("expected `<n> <d>`, got {header:?}"),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(bad_header());
    }
    let n: usize = fields[0].parse().map_err(|_| bad_header())?;
    let d: usize = fields[1].parse().map_err(|_| bad_header())?;
    let mut names = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for k in 0..n {
        let lineno = k + 2;
        let line = lines.next().transpose()?.ok_or(Error::Parse {
            line: lineno,
            msg: format!("header declares {n} labels, file ends after {k}"),
        })?;
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or(Error::Parse {
            line: lineno,
            msg: "empty row".into(),
        })?;
        let vals: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("row {name:?}: {e}"),
            })?;
        if vals.len() != d {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("row {name:?} has {} values, expected {d}", vals.len()),
            });
        }
        names.push(name.to_string());
        data.extend(vals);
    }
    for (k, rest) in lines.enumerate() {
        if !rest?.trim().is_empty() {
            return Err(Error::Parse {
                line: n + 2 + k,
                msg: format!("unexpected content after {n} label rows"),
            });
        }
    }
    LabelEmbeddings::new(names, Matrix::from_vec(n, d, data)?)
}

pub fn load_embeddings(path: &Path) -> Result<LabelEmbeddings> {
    read_embeddings(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub f_base: Vec<f64>,
    pub f_weak: Vec<f64>,
    pub f_strong: Vec<f64>,
    pub y: LabelVector,
    /// Complete ground truth, kept for evaluation and precision tracking.
    pub y_full: Option<LabelVector>,
}

impl Sample {
    /// Labels to evaluate against: the ground truth when present.
    pub fn truth(&self) -> &LabelVector {
        self.y_full.as_ref().unwrap_or(&self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub label_names: Vec<String>,
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_labels();
        for (i, s) in self.samples.iter().enumerate() {
            for (what, f) in [("f_base", &s.f_base), ("f_weak", &s.f_weak), ("f_strong", &s.f_strong)] {
                if f.len() != self.dim {
                    return Err(Error::Validation(format!(
                        "sample {i}: {what} has {} dims, expected {}",
                        f.len(),
                        self.dim
                    )));
                }
                if f.iter().any(|v| !v.is_finite()) || f.iter().all(|&v| v == 0.0) {
                    return Err(Error::Validation(format!(
                        "sample {i}: {what} is zero or non-finite"
                    )));
                }
            }
            if s.y.len() != n || s.y_full.as_ref().is_some_and(|y| y.len() != n) {
                return Err(Error::Validation(format!(
                    "sample {i}: label vector length differs from {n}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    f_base: Vec<f64>,
    f_weak: Vec<f64>,
    f_strong: Vec<f64>,
    y: Vec<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_full: Option<Vec<i8>>,
}

/// Header `<n_samples> <n_labels> <d> <name>...`, then one JSON object per sample.
pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    write!(w, "{} {} {}", ds.len(), ds.n_labels(), ds.dim)?;
    for name in &ds.label_names {
        write!(w, " {name}")?;
    }
    writeln!(w)?;
    for s in &ds.samples {
        let rec = SampleRecord {
            f_base: s.f_base.clone(),
            f_weak: s.f_weak.clone(),
            f_strong: s.f_strong.clone(),
            y: s.y.as_slice().to_vec(),
            y_full: s.y_full.as_ref().map(|y| y.as_slice().to_vec()),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        msg: "empty dataset file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Parse {
        line: 1,
        msg: "expected `<n_samples> <n_labels> <d> <label names...>`".into(),
    };
    if fields.len() < 3 {
        return Err(bad_header());
    }
    let n_samples: usize = fields[0].parse().map_err(|_| bad_header())?;
    let n_labels: usize = fields[1].parse().map_err(|_| bad_header())?;
    let dim: usize = fields[2].parse().map_err(|_| bad_header())?;
    let label_names: Vec<String> = fields[3..].iter().map(|s| s.to_string()).collect();
    if label_names.len() != n_labels {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{n_labels} labels declared, {} names given", label_names.len()),
        });
    }
    let mut samples = Vec::with_capacity(n_samples);
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let to_labels = |v: Vec<i8>| {
            LabelVector::new(v).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })
        };
        samples.push(Sample {
            f_base: rec.f_base,
            f_weak: rec.f_weak,
            f_strong: rec.f_strong,
            y: to_labels(rec.y)?,
            y_full: rec.y_full.map(to_labels).transpose()?,
        });
    }
    if samples.len() != n_samples {
        return Err(Error::Parse {
            line: samples.len() + 2,
            msg: format!("header declares {n_samples} samples, found {}", samples.len()),
        });
    }
    let ds = Dataset {
        label_names,
        dim,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Keep one uniformly chosen positive; every other class becomes unknown.
pub fn mask_single_positive(y_full: &LabelVector, seed: u64) -> Result<LabelVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mask_single_positive_with(y_full, &mut rng)
}

fn mask_single_positive_with<R: Rng>(y_full: &LabelVector, rng: &mut R) -> Result<LabelVector> {
    let positives: Vec<usize> = y_full.positives().collect();
    let keep = *positives
        .choose(rng)
        .ok_or_else(|| Error::Masking("sample has no positive label".into()))?;
    let mut y = vec![UNKNOWN; y_full.len()];
    y[keep] = POSITIVE;
    LabelVector::new(y)
}

/// Keep `round(ratio · n)` uniformly chosen annotations; the rest become unknown.
pub fn mask_partial(y_full: &LabelVector, ratio: f64, seed: u64) -> Result<LabelVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mask_partial_with(y_full, ratio, &mut rng)
}

fn mask_partial_with<R: Rng>(y_full: &LabelVector, ratio: f64, rng: &mut R) -> Result<LabelVector> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Parameter(format!("partial ratio must lie in (0, 1], got {ratio}")));
    }
    let n = y_full.len();
    let keep = ((ratio * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut y = vec![UNKNOWN; n];
    for &c in &idx[..keep] {
        y[c] = y_full.as_slice()[c];
    }
    LabelVector::new(y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub dropout_strong: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            sigma_weak: 0.05,
            sigma_strong: 0.2,
            dropout_strong: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_weak >= 0.0 && self.sigma_strong >= self.sigma_weak) {
            return Err(Error::Parameter(format!(
                "need 0 <= sigma_weak <= sigma_strong, got {} and {}",
                self.sigma_weak, self.sigma_strong
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_strong) {
            return Err(Error::Parameter(format!(
                "strong dropout must lie in [0, 1), got {}",
                self.dropout_strong
            )));
        }
        Ok(())
    }
}

/// Weak view: Gaussian jitter. Strong view: dropout plus larger jitter.
/// Both are renormalized to unit length.
pub fn augment(f_base: &[f64], cfg: &AugmentConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(f_base, cfg, &mut rng)
}

fn augment_with<R: Rng>(
    f_base: &[f64],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let base = normalized(f_base)?;
    let jitter = |v: &[f64], sigma: f64, rng: &mut R| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let g: f64 = StandardNormal.sample(rng);
                x + sigma * g
            })
            .collect()
    };
    let weak = normalized(&jitter(&base, cfg.sigma_weak, rng))?;
    let dropped = loop {
        let kept: Vec<f64> = base
            .iter()
            .map(|&x| if rng.random::<f64>() < cfg.dropout_strong { 0.0 } else { x })
            .collect();
        if kept.iter().any(|&x| x != 0.0) {
            break kept;
        }
    };
    let strong = loop {
        let s = jitter(&dropped, cfg.sigma_strong, rng);
        if let Ok(v) = normalized(&s) {
            break v;
        }
    };
    Ok((weak, strong))
}

/// How training labels are hidden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    SinglePositive,
    Partial(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_labels: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Probability that a label of the drawn cluster is present.
    pub p_in: f64,
    /// Probability that a label outside the drawn cluster is present.
    pub p_out: f64,
    /// Feature noise, as a norm relative to the clean feature.
    pub noise: f64,
    /// Spread of label embeddings around their cluster center, same scale.
    pub label_spread: f64,
    /// Offset between the published label embeddings and the per-label
    /// prototypes that generate features. Zero makes features a noisy mean of
    /// the embeddings themselves.
    pub modality_gap: f64,
    pub augment: AugmentConfig,
    pub mask: MaskMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_labels: 20,
            dim: 64,
            n_clusters: 4,
            n_train: 2000,
            n_test: 500,
            p_in: 0.5,
            p_out: 0.02,
            noise: 0.6,
            label_spread: 0.8,
            modality_gap: 1.5,
            augment: AugmentConfig::default(),
            mask: MaskMode::SinglePositive,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_labels < 2 || self.dim == 0 {
            return Err(Error::Parameter("need at least 2 labels and a positive dimension".into()));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_labels {
            return Err(Error::Parameter(format!(
                "n_clusters must lie in [1, {}], got {}",
                self.n_labels, self.n_clusters
            )));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::Parameter("p_in and p_out must be probabilities".into()));
        }
        if !(self.noise >= 0.0) || !(self.label_spread >= 0.0) || !(self.modality_gap >= 0.0) {
            return Err(Error::Parameter("noise levels must be nonnegative".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Parameter("n_train must be positive".into()));
        }
        if let MaskMode::Partial(r) = self.mask {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Parameter(format!("partial ratio must lie in (0, 1], got {r}")));
            }
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub embeddings: LabelEmbeddings,
    /// Pair counts over the training set; the diagonal holds per-label counts.
    pub cooccurrence: Matrix,
    /// Cluster index of each label.
    pub label_cluster: Vec<usize>,
}

fn gaussian<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// `normalize(v + scale · g / √d)` with `g` standard normal.
fn perturb<R: Rng>(v: &[f64], scale: f64, rng: &mut R) -> Result<Vec<f64>> {
    let d = v.len() as f64;
    let g = gaussian(rng, v.len());
    let mixed: Vec<f64> = v.iter().zip(&g).map(|(a, b)| a + scale * b / d.sqrt()).collect();
    normalized(&mixed)
}

/// Generate train and test sets whose label co-occurrence follows planted
/// clusters that are also visible in the label embeddings.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, d) = (cfg.n_labels, cfg.dim);

    let centers = (0..cfg.n_clusters)
        .map(|_| normalized(&gaussian(&mut rng, d)))
        .collect::<Result<Vec<_>>>()?;
    let label_cluster: Vec<usize> = (0..n).map(|i| i % cfg.n_clusters).collect();
    let mut emb_data = Vec::with_capacity(n * d);
    for &c in &label_cluster {
        emb_data.extend(perturb(&centers[c], cfg.label_spread, &mut rng)?);
    }
    let names = (0..n).map(|i| format!("label_{i:02}")).collect();
    let embeddings = LabelEmbeddings::new(names, Matrix::from_vec(n, d, emb_data)?)?;
    let prototypes = if cfg.modality_gap > 0.0 {
        let mut data = Vec::with_capacity(n * d);
        for row in embeddings.vectors().row_iter() {
            data.extend(perturb(row, cfg.modality_gap, &mut rng)?);
        }
        Matrix::from_vec(n, d, data)?
    } else {
        embeddings.vectors().clone()
    };
    let members: Vec<Vec<usize>> = (0..cfg.n_clusters)
        .map(|c| (0..n).filter(|&i| label_cluster[i] == c).collect())
        .collect();

    let draw_set = |count: usize, mask: Option<MaskMode>, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let cluster = rng.random_range(0..cfg.n_clusters);
            let mut truth = vec![NEGATIVE; n];
            for (i, t) in truth.iter_mut().enumerate() {
                let p = if label_cluster[i] == cluster { cfg.p_in } else { cfg.p_out };
                if rng.random::<f64>() < p {
                    *t = POSITIVE;
                }
            }
            if !truth.contains(&POSITIVE) {
                let pick = members[cluster][rng.random_range(0..members[cluster].len())];
                truth[pick] = POSITIVE;
            }
            let mut mean = vec![0.0; d];
            let positives: Vec<usize> = (0..n).filter(|&i| truth[i] == POSITIVE).collect();
            for &i in &positives {
                for (m, v) in mean.iter_mut().zip(prototypes.row(i)) {
                    *m += v / positives.len() as f64;
                }
            }
            let clean = normalized(&mean)?;
            let f_base = perturb(&clean, cfg.noise, rng)?;
            let (f_weak, f_strong) = augment_with(&f_base, &cfg.augment, rng)?;
            let y_full = LabelVector::new(truth)?;
            let y = match mask {
                None => y_full.clone(),
                Some(MaskMode::SinglePositive) => mask_single_positive_with(&y_full, rng)?,
                Some(MaskMode::Partial(r)) => mask_partial_with(&y_full, r, rng)?,
            };
            samples.push(Sample {
                f_base,
                f_weak,
                f_strong,
                y,
                y_full: Some(y_full),
            });
        }
        Ok(Dataset {
            label_names: embeddings.names().to_vec(),
            dim: d,
            samples,
        })
    };
    let train = draw_set(cfg.n_train, Some(cfg.mask), &mut rng)?;
    let test = draw_set(cfg.n_test, None, &mut rng)?;
    let cooccurrence = cooccurrence_counts(&train)?;
    Ok(SynthOutput {
        train,
        test,
        embeddings,
        cooccurrence,
        label_cluster,
    })
}

/// Count ground-truth positive pairs; falls back to `y` when `y_full` is absent.
pub fn cooccurrence_counts(ds: &Dataset) -> Result<Matrix> {
    let n = ds.n_labels();
    let mut m = Matrix::zeros(n, n);
    for s in &ds.samples {
        let pos: Vec<usize> = s.truth().positives().collect();
        for &i in &pos {
            for &j in &pos {
                m[(i, j)] += 1.0;
            }
        }
    }
    Ok(m)
}

/// Same layout as the graph export: `n`, then `n` rows of counts, then names.
pub fn write_cooccurrence<W: Write>(mut w: W, counts: &Matrix, names: &[String]) -> Result<()> {
    if counts.shape() != (names.len(), names.len()) {
        return Err(Error::shape(
            "write_cooccurrence",
            format!("{:?} counts for {} names", counts.shape(), names.len()),
        ));
    }
    writeln!(w, "{}", names.len())?;
    for row in counts.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    for name in names {
        writeln!(w, "{name}")?;
    }
    Ok(())
}

/// Pearson correlation, over label pairs `i < j`, between co-occurrence
/// counts and embedding cosine similarity.
pub fn cooccurrence_embedding_correlation(cooc: &Matrix, emb: &LabelEmbeddings) -> Result<f64> {
    let n = emb.n_labels();
    if cooc.shape() != (n, n) {
        return Err(Error::shape("cooccurrence_embedding_correlation", format!("{:?}", cooc.shape())));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            xs.push(cooc[(i, j)]);
            ys.push(cosine_sim(emb.vectors().row(i), emb.vectors().row(j))?);
        }
    }
    Ok(pearson(&xs, &ys))
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Derive an independent per-use seed from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::norm;
    use proptest::prelude::*;

    fn lv(v: &[i8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn embeddings_round_trip_bitwise() {
        let out = synth_generate(&SynthConfig { n_train: 4, n_test: 2, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &out.embeddings).unwrap();
        let back = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(back, out.embeddings);
        for (a, b) in back.vectors().as_slice().iter().zip(out.embeddings.vectors().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn embeddings_parse_errors() {
        let short = "3 2\na 1 0\nb 0 1\n";
        match read_embeddings(short.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let ragged = "2 2\na 1 0\nb 0 1 5\n";
        match read_embeddings(ragged.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("\"b\""), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let dup = "2 2\na 1 0\na 0 1\n";
        assert!(matches!(read_embeddings(dup.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn dataset_round_trip() {
        let out = synth_generate(&SynthConfig { n_train: 5, n_test: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &out.train).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), out.train);
        let text = String::from_utf8(buf).unwrap();
        let truncated: Vec<&str> = text.lines().take(3).collect();
        assert!(matches!(read_dataset(truncated.join("\n").as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn single_positive_examples() {
        let y = mask_single_positive(&lv(&[1, 0, 0]), 3).unwrap();
        assert_eq!(y.as_slice(), &[1, -1, -1]);
        let a = mask_single_positive(&lv(&[1, 1, 0]), 42).unwrap();
        let b = mask_single_positive(&lv(&[1, 1, 0]), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice() == [1, -1, -1] || a.as_slice() == [-1, 1, -1]);
        assert!(matches!(mask_single_positive(&lv(&[0, 0]), 1), Err(Error::Masking(_))));
    }

    #[test]
    fn single_positive_is_uniform() {
        let y = lv(&[1, 1, 0]);
        let first = (0..10_000u64)
            .filter(|&s| mask_single_positive(&y, s).unwrap().as_slice()[0] == 1)
            .count();
        let frac = first as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn partial_examples() {
        let y = lv(&[1, 0, 1, 0]);
        assert_eq!(mask_partial(&y, 1.0, 5).unwrap(), y);
        let m = mask_partial(&y, 0.5, 5).unwrap();
        assert_eq!(m.as_slice().iter().filter(|&&v| v != UNKNOWN).count(), 2);
        assert_eq!(m, mask_partial(&y, 0.5, 5).unwrap());
        assert!(mask_partial(&y, 0.0, 5).is_err());
        assert!(mask_partial(&y, 1.5, 5).is_err());
    }

    proptest! {
        #[test]
        fn masking_only_hides(
            raw in prop::collection::vec(prop::sample::select(vec![1i8, 0]), 2..12),
            ratio in 0.05f64..1.0,
            seed in any::<u64>(),
        ) {
            let y = lv(&raw);
            let m = mask_partial(&y, ratio, seed).unwrap();
            for (a, b) in m.as_slice().iter().zip(y.as_slice()) {
                prop_assert!(*a == UNKNOWN || a == b);
            }
            if y.positives().next().is_some() {
                let s = mask_single_positive(&y, seed).unwrap();
                prop_assert_eq!(s.positives().count(), 1);
                for (a, b) in s.as_slice().iter().zip(y.as_slice()) {
                    prop_assert!(*a == UNKNOWN || a == b);
                }
            }
        }
    }

    #[test]
    fn augment_without_noise_is_normalized_identity() {
        let cfg = AugmentConfig { sigma_weak: 0.0, sigma_strong: 0.0, dropout_strong: 0.0 };
        let (w, s) = augment(&[3.0, 4.0], &cfg, 1).unwrap();
        assert_eq!(w, vec![0.6, 0.8]);
        assert_eq!(s, vec![0.6, 0.8]);
    }

    #[test]
    fn strong_view_is_farther_than_weak() {
        let cfg = AugmentConfig::default();
        let base: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let unit = normalized(&base).unwrap();
        let (mut dw, mut ds) = (0.0, 0.0);
        for seed in 0..1000 {
            let (w, s) = augment(&base, &cfg, seed).unwrap();
            assert!((norm(&w) - 1.0).abs() < 1e-12 && (norm(&s) - 1.0).abs() < 1e-12);
            dw += w.iter().zip(&unit).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            ds += s.iter().zip(&unit).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        assert!(dw < ds, "weak {dw} strong {ds}");
    }

    #[test]
    fn synth_single_label_without_noise_is_embedding() {
        let cfg = SynthConfig {
            n_train: 50,
            n_test: 1,
            p_in: 0.0,
            p_out: 0.0,
            noise: 0.0,
            modality_gap: 0.0,
            ..Default::default()
        };
        let out = synth_generate(&cfg).unwrap();
        for s in &out.train.samples {
            let pos: Vec<usize> = s.y_full.as_ref().unwrap().positives().collect();
            assert_eq!(pos.len(), 1);
            let e = out.embeddings.vectors().row(pos[0]);
            for (a, b) in s.f_base.iter().zip(e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig { n_train: 30, n_test: 10, seed: 7, ..Default::default() };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
    }

    #[test]
    fn synth_cooccurrence_follows_clusters() {
        let out = synth_generate(&SynthConfig { seed: 3, ..Default::default() }).unwrap();
        let (mut same, mut cross, mut ns, mut nc) = (0.0, 0.0, 0, 0);
        for i in 0..20 {
            for j in (i + 1)..20 {
                if out.label_cluster[i] == out.label_cluster[j] {
                    same += out.cooccurrence[(i, j)];
                    ns += 1;
                } else {
                    cross += out.cooccurrence[(i, j)];
                    nc += 1;
                }
            }
        }
        assert!(same / ns as f64 > cross / nc as f64);
        let r = cooccurrence_embedding_correlation(&out.cooccurrence, &out.embeddings).unwrap();
        assert!(r > 0.5, "pearson {r}");
        for s in &out.train.samples {
            assert_eq!(s.y.positives().count(), 1);
            assert!(s.y_full.as_ref().unwrap().positives().count() >= 1);
        }
    }
}
