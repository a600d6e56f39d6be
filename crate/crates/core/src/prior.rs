//! Structured label-prior graph built from label embeddings.
//!
//! The pipeline is: clamped cosine correlation, per-row top-K sparsification
//! of off-diagonal entries, neighbour re-weighting that pins the self-weight to
//! `1 - s`, then a softmax over each row's nonzero support.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{cosine_sim, masked_row_softmax, norm, Matrix};

/// Named per-label embedding vectors, one row per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbeddings {
    names: Vec<String>,
    vectors: Matrix,
}

impl LabelEmbeddings {
    pub fn new(names: Vec<String>, vectors: Matrix) -> Result<Self> {
        if names.len() != vectors.rows() {
            return Err(Error::Validation(format!(
                "{} names for {} embedding rows",
                names.len(),
                vectors.rows()
            )));
        }
        if names.len() < 2 {
            return Err(Error::Validation("at least two labels are required".into()));
        }
        if vectors.cols() == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid label name {name:?}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate label name {name:?}")));
            }
        }
        if !vectors.is_finite() {
            return Err(Error::Validation("embedding contains non-finite values".into()));
        }
        for (i, row) in vectors.row_iter().enumerate() {
            if !(norm(row) > 0.0) {
                return Err(Error::DegenerateVector(format!(
                    "embedding row {i} ({}) has zero norm",
                    names[i]
                )));
            }
        }
        Ok(Self { names, vectors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn n_labels(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// How the label graph is sourced during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphMode {
    /// Built once from the pretrained embeddings.
    #[default]
    Static,
    /// Rebuilt every epoch from the model's current label table.
    Dynamic,
    /// Identity graph: no label-to-label prior.
    None,
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMode::Static => "static",
            GraphMode::Dynamic => "dynamic",
            GraphMode::None => "none",
        })
    }
}

impl FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(GraphMode::Static),
            "dynamic" => Ok(GraphMode::Dynamic),
            "none" => Ok(GraphMode::None),
            other => Err(Error::Parameter(format!(
                "graph mode must be static, dynamic or none, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    pub top_k: usize,
    pub s: f64,
    pub tau_prime: f64,
}

impl Default for PriorParams {
    fn default() -> Self {
        Self {
            top_k: 60,
            s: 0.2,
            tau_prime: 1.0,
        }
    }
}

/// Row-stochastic label graph together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGraph {
    adjacency: Matrix,
    params: PriorParams,
    mode: GraphMode,
}

impl PriorGraph {
    /// Identity graph used when the prior is switched off.
    pub fn identity(n: usize, params: PriorParams) -> Self {
        Self {
            adjacency: Matrix::identity(n),
            params,
            mode: GraphMode::None,
        }
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn params(&self) -> PriorParams {
        self.params
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn n_labels(&self) -> usize {
        self.adjacency.rows()
    }
}

/// `a_ij = max(0, cos(z_i, z_j))`, unit diagonal.
pub fn build_correlation(emb: &LabelEmbeddings) -> Result<Matrix> {
    correlation_of(emb.vectors())
}

fn correlation_of(vectors: &Matrix) -> Result<Matrix> {
    let n = vectors.rows();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let c = cosine_sim(vectors.row(i), vectors.row(j))?.max(0.0);
            a[(i, j)] = c;
            a[(j, i)] = c;
        }
    }
    Ok(a)
}

/// Keep the `k` largest off-diagonal entries of every row; the diagonal is
/// always kept. Ties go to the lower column index.
pub fn sparsify_topk(a: &Matrix, k: usize) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() {
        return Err(Error::shape("sparsify_topk", format!("{:?} is not square", a.shape())));
    }
    if k < 1 || k > n {
        return Err(Error::Parameter(format!("top-K must lie in [1, {n}], got {k}")));
    }
    let mut out = Matrix::zeros(n, n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = a.row(i);
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        // stable sort keeps ascending column order among equal values
        order.sort_by(|&x, &y| row[y].total_cmp(&row[x]));
        for &j in order.iter().take(k) {
            out[(i, j)] = row[j];
        }
        out[(i, i)] = row[i];
    }
    Ok(out)
}

/// Scale each row's off-diagonal mass to `s` and set the diagonal to `1 - s`.
/// Rows with no off-diagonal mass become one-hot on the diagonal.
pub fn reweight(sparse: &Matrix, s: f64) -> Result<Matrix> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Parameter(format!("s must lie in (0, 1), got {s}")));
    }
    if !sparse.is_square() {
        return Err(Error::shape("reweight", format!("{:?} is not square", sparse.shape())));
    }
    let n = sparse.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let row = sparse.row(i);
        let off: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v)
            .sum();
        if off > 0.0 {
            let scale = s / off;
            for (j, &v) in row.iter().enumerate() {
                if j != i {
                    out[(i, j)] = scale * v;
                }
            }
            out[(i, i)] = 1.0 - s;
        } else {
            out[(i, i)] = 1.0;
        }
    }
    Ok(out)
}

/// Softmax over each row's nonzero support at temperature `tau_prime`.
pub fn normalize_graph(reweighted: &Matrix, tau_prime: f64) -> Result<Matrix> {
    masked_row_softmax(reweighted, tau_prime)
}

fn build_from_vectors(vectors: &Matrix, params: PriorParams, mode: GraphMode) -> Result<PriorGraph> {
    let corr = correlation_of(vectors)?;
    let sparse = sparsify_topk(&corr, params.top_k)?;
    let reweighted = reweight(&sparse, params.s)?;
    let adjacency = normalize_graph(&reweighted, params.tau_prime)?;
    Ok(PriorGraph {
        adjacency,
        params,
        mode,
    })
}

/// Static prior from pretrained label embeddings.
///
/// `top_k` larger than `n - 1` keeps every off-diagonal entry, so COCO-scale
/// settings such as `K = 60` remain usable on smaller label sets.
pub fn build_prior(emb: &LabelEmbeddings, params: PriorParams) -> Result<PriorGraph> {
    let params = effective_params(emb.n_labels(), params)?;
    build_from_vectors(emb.vectors(), params, GraphMode::Static)
}

/// Same pipeline as [`build_prior`], sourced from the live label table.
pub fn dynamic_graph(label_table: &Matrix, params: PriorParams) -> Result<PriorGraph> {
    let params = effective_params(label_table.rows(), params)?;
    build_from_vectors(label_table, params, GraphMode::Dynamic)
}

fn effective_params(n: usize, mut params: PriorParams) -> Result<PriorParams> {
    if n < 2 {
        return Err(Error::Validation("prior graph needs at least two labels".into()));
    }
    if params.top_k == 0 {
        return Err(Error::Parameter("top-K must be at least 1".into()));
    }
    params.top_k = params.top_k.min(n - 1);
    Ok(params)
}

/// Text export: `n`, then `n` rows of `n` floats, then the `n` label names.
pub fn write_graph<W: std::io::Write>(mut w: W, a: &Matrix, names: &[String]) -> Result<()> {
    if names.len() != a.rows() {
        return Err(Error::shape(
            "write_graph",
            format!("{} names for a {}-label graph", names.len(), a.rows()),
        ));
    }
    writeln!(w, "{}", a.rows())?;
    for row in a.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    for name in names {
        writeln!(w, "{name}")?;
    }
    Ok(())
}

/// Parse the text export written by [`write_graph`].
pub fn read_graph<R: std::io::BufRead>(r: R) -> Result<(Matrix, Vec<String>)> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let (ln, header) = next("header")?;
    let n: usize = header.trim().parse().map_err(|_| Error::Parse {
        line: ln,
        msg: format!("bad header {header:?}"),
    })?;
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (ln, line) = next("adjacency row")?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: ln,
                msg: format!("{e}"),
            })?;
        if row.len() != n {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {n} values, found {}", row.len()),
            });
        }
        data.extend(row);
    }
    let mut names = Vec::with_capacity(n);
    for _ in 0..n {
        names.push(next("label name")?.1.trim().to_string());
    }
    Ok((Matrix::from_vec(n, n, data)?, names))
}

pub(crate) fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(rows: &[Vec<f64>]) -> LabelEmbeddings {
        let names = (0..rows.len()).map(|i| format!("l{i}")).collect();
        LabelEmbeddings::new(names, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let a = build_correlation(&emb(&[vec![1.0, 2.0], vec![1.0, 2.0]])).unwrap();
        assert!((a[(0, 1)] - 1.0).abs() < 1e-15);
        let a = build_correlation(&emb(&[vec![1.0, 0.0], vec![0.0, 3.0]])).unwrap();
        assert_eq!(a[(0, 1)], 0.0);
        let a = build_correlation(&emb(&[vec![1.0, -1.0], vec![-2.0, 2.0]])).unwrap();
        assert_eq!(a[(0, 1)], 0.0);
        assert_eq!(a[(0, 0)], 1.0);
    }

    #[test]
    fn embeddings_validation() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(LabelEmbeddings::new(vec!["a".into(), "a".into()], m.clone()).is_err());
        assert!(LabelEmbeddings::new(vec!["a".into()], m.clone()).is_err());
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            LabelEmbeddings::new(vec!["a".into(), "b".into()], z),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn topk_examples() {
        // diag first, then off-diagonals [0.9, 0.1, 0.5]
        let a = Matrix::from_rows(&[
            vec![1.0, 0.9, 0.1, 0.5],
            vec![0.9, 1.0, 0.0, 0.0],
            vec![0.1, 0.0, 1.0, 0.0],
            vec![0.5, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let s = sparsify_topk(&a, 2).unwrap();
        assert_eq!(s.row(0), &[1.0, 0.9, 0.0, 0.5]);
        assert_eq!(sparsify_topk(&a, 3).unwrap(), a);

        let t = Matrix::from_rows(&[
            vec![1.0, 0.5, 0.5, 0.2],
            vec![0.5, 1.0, 0.0, 0.0],
            vec![0.5, 0.0, 1.0, 0.0],
            vec![0.2, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(sparsify_topk(&t, 1).unwrap().row(0), &[1.0, 0.5, 0.0, 0.0]);

        assert!(matches!(sparsify_topk(&a, 0), Err(Error::Parameter(_))));
        assert!(matches!(sparsify_topk(&a, 5), Err(Error::Parameter(_))));
    }

    #[test]
    fn reweight_examples() {
        let a = Matrix::from_rows(&[
            vec![1.0, 0.5, 0.3, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let r = reweight(&a, 0.2).unwrap();
        assert!((r[(0, 1)] - 0.125).abs() < 1e-15);
        assert!((r[(0, 2)] - 0.075).abs() < 1e-15);
        assert_eq!(r[(0, 3)], 0.0);
        assert_eq!(r[(0, 0)], 0.8);
        assert_eq!(r.row(1), &[0.0, 1.0, 0.0, 0.0]);
        assert!(reweight(&a, 0.0).is_err());
        assert!(reweight(&a, 1.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let r = Matrix::from_rows(&[vec![0.8, 0.125, 0.075], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let g = normalize_graph(&r, 1.0).unwrap();
        let expected = [0.501_635_082_168_131_8, 0.255_410_722_887_899_8, 0.242_954_194_943_968_25];
        for (a, b) in g.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g.row(1), &[0.0, 1.0, 0.0]);
        let flat = normalize_graph(&r, 1e9).unwrap();
        for v in flat.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_embeddings_give_uniform_rows() {
        let e = emb(&vec![vec![0.3, 0.4, 0.5]; 4]);
        let g = build_prior(&e, PriorParams { top_k: 3, s: 0.2, tau_prime: 1.0 }).unwrap();
        for i in 0..4 {
            let row = g.adjacency().row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let off: Vec<f64> = (0..4).filter(|&j| j != i).map(|j| row[j]).collect();
            assert!(off.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
            assert!(row[i] > off[0]);
        }
    }

    #[test]
    fn coco_defaults_accepted() {
        let e = emb(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![0.7, 0.7]]);
        let g = build_prior(&e, PriorParams::default()).unwrap();
        assert_eq!(g.params().top_k, 2);
        assert_eq!(g.mode(), GraphMode::Static);
    }

    #[test]
    fn dynamic_equals_static_on_same_input() {
        let e = emb(&[vec![1.0, 0.2, 0.1], vec![0.3, 1.0, -0.2], vec![0.7, 0.7, 0.4], vec![-0.1, 0.2, 1.0]]);
        let p = PriorParams { top_k: 2, s: 0.3, tau_prime: 0.5 };
        let s = build_prior(&e, p).unwrap();
        let d = dynamic_graph(e.vectors(), p).unwrap();
        assert_eq!(s.adjacency(), d.adjacency());
        assert_eq!(d.mode(), GraphMode::Dynamic);
    }

    #[test]
    fn graph_text_round_trip() {
        let e = emb(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![0.7, 0.7]]);
        let g = build_prior(&e, PriorParams { top_k: 1, s: 0.2, tau_prime: 1.0 }).unwrap();
        let mut buf = Vec::new();
        write_graph(&mut buf, g.adjacency(), e.names()).unwrap();
        let (a, names) = read_graph(buf.as_slice()).unwrap();
        assert_eq!(&a, g.adjacency());
        assert_eq!(names, e.names());
    }

    fn brute_topk_row(row: &[f64], i: usize, k: usize) -> Vec<f64> {
        // exhaustive: entry j survives iff fewer than k off-diagonal entries beat it
        (0..row.len())
            .map(|j| {
                if j == i {
                    return row[j];
                }
                let better = (0..row.len())
                    .filter(|&m| m != i && m != j)
                    .filter(|&m| row[m] > row[j] || (row[m] == row[j] && m < j))
                    .count();
                if better < k { row[j] } else { 0.0 }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn topk_matches_brute_force(
            vals in prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9]), 100),
            k in 1usize..=10,
        ) {
            let a = Matrix::from_vec(10, 10, vals).unwrap();
            let s = sparsify_topk(&a, k).unwrap();
            for i in 0..10 {
                prop_assert_eq!(s.row(i).to_vec(), brute_topk_row(a.row(i), i, k));
            }
        }

        #[test]
        fn prior_invariants(
            vals in prop::collection::vec(-1.0f64..1.0, 8 * 5),
            k in 1usize..8,
            s in 0.05f64..0.95,
            tau in 0.1f64..3.0,
        ) {
            let m = Matrix::from_vec(8, 5, vals).unwrap();
            prop_assume!(m.row_iter().all(|r| norm(r) > 1e-6));
            let e = LabelEmbeddings::new((0..8).map(|i| format!("c{i}")).collect(), m).unwrap();
            let corr = build_correlation(&e).unwrap();
            let sparse = sparsify_topk(&corr, k).unwrap();
            let rw = reweight(&sparse, s).unwrap();
            let g = normalize_graph(&rw, tau).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    prop_assert_eq!(corr[(i, j)], corr[(j, i)]);
                    prop_assert!((0.0..=1.0).contains(&corr[(i, j)]));
                    prop_assert_eq!(rw[(i, j)] == 0.0, g[(i, j)] == 0.0);
                }
                let off: f64 = (0..8).filter(|&j| j != i).map(|j| rw[(i, j)]).sum();
                if off > 0.0 {
                    prop_assert!((off - s).abs() <= 1e-12);
                    prop_assert_eq!(rw[(i, i)], 1.0 - s);
                }
                prop_assert!((g.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(g.row(i).iter().filter(|&&v| v != 0.0).count() <= k + 1);
            }
        }
    }
}
