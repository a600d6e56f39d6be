use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use scpnet::data::{
    cooccurrence_embedding_correlation, load_dataset, load_embeddings, synth_generate,
    write_cooccurrence, write_dataset, write_embeddings, Dataset,
};
use scpnet::model::{read_checkpoint, write_checkpoint};
use scpnet::prior::{build_prior, read_graph, write_graph};
use scpnet::train::{evaluate, model_graph, train};
use scpnet::{LabelEmbeddings, Matrix};

use crate::config::{usage, Settings};

pub const TRAIN_LOG: &str = "trainlog.csv";
pub const CHECKPOINT: &str = "checkpoint.txt";

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> scpnet::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn embeddings(s: &Settings) -> Result<LabelEmbeddings> {
    let path = s.path("emb")?;
    load_embeddings(&path).with_context(|| format!("reading embeddings {}", path.display()))
}

fn dataset(s: &Settings, key: &str) -> Result<Dataset> {
    let path = s.path(key)?;
    load_dataset(&path).with_context(|| format!("reading dataset {}", path.display()))
}

fn check_labels(ds: &Dataset, emb: &LabelEmbeddings, what: &str) -> Result<()> {
    if ds.label_names != emb.names() || ds.dim != emb.dim() {
        bail!(
            "{what}: {} labels / {} dims do not match the embeddings' {} / {}",
            ds.n_labels(),
            ds.dim,
            emb.n_labels(),
            emb.dim()
        );
    }
    Ok(())
}

pub fn synth(s: &Settings) -> Result<()> {
    let cfg = s.synth()?;
    let out = s.path("out")?;
    let data = synth_generate(&cfg).context("generating synthetic data")?;
    let r = cooccurrence_embedding_correlation(&data.cooccurrence, &data.embeddings)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("embeddings.txt"), |w| write_embeddings(w, &data.embeddings))?;
    write_file(&out.join("train.jsonl"), |w| write_dataset(w, &data.train))?;
    write_file(&out.join("test.jsonl"), |w| write_dataset(w, &data.test))?;
    write_file(&out.join("cooccurrence.txt"), |w| {
        write_cooccurrence(w, &data.cooccurrence, data.embeddings.names())
    })?;
    println!(
        "wrote {} train / {} test samples to {} (co-occurrence vs embedding similarity r = {r:.4})",
        data.train.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

pub fn build_prior_cmd(s: &Settings) -> Result<()> {
    let params = s.prior()?;
    let out = s.path("out")?;
    let emb = embeddings(s)?;
    let graph = build_prior(&emb, params).context("building prior graph")?;
    write_file(&out, |w| write_graph(w, graph.adjacency(), emb.names()))?;
    println!(
        "wrote {}-label graph (K = {}) to {}",
        emb.n_labels(),
        graph.params().top_k,
        out.display()
    );
    Ok(())
}

pub fn inspect_graph(s: &Settings) -> Result<()> {
    let top: usize = s.get("top")?;
    let (adjacency, names) = match (s.opt_path("graph"), s.opt_path("emb")) {
        (Some(_), Some(_)) => return Err(usage("give either `graph` or `emb`, not both")),
        (None, None) => return Err(usage("inspect-graph needs `graph` or `emb`")),
        (Some(path), None) => {
            let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            read_graph(BufReader::new(file)).with_context(|| format!("reading graph {}", path.display()))?
        }
        (None, Some(_)) => {
            let emb = embeddings(s)?;
            let graph = build_prior(&emb, s.prior()?).context("building prior graph")?;
            (graph.adjacency().clone(), emb.names().to_vec())
        }
    };
    print!("{}", describe(&adjacency, &names, top));
    if let Some(out) = s.opt_path("out") {
        write_file(&out, |w| write_graph(w, &adjacency, &names))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// One line per label: self weight, row sum and strongest neighbours.
fn describe(a: &Matrix, names: &[String], top: usize) -> String {
    let mut text = String::new();
    for (i, row) in a.row_iter().enumerate() {
        let mut others: Vec<usize> = (0..row.len()).filter(|&j| j != i && row[j] > 0.0).collect();
        others.sort_by(|&x, &y| row[y].total_cmp(&row[x]));
        let shown: Vec<String> = others
            .iter()
            .take(top)
            .map(|&j| format!("{} {:.4}", names[j], row[j]))
            .collect();
        text.push_str(&format!(
            "{:<12} self {:.4} sum {:.6} | {}\n",
            names[i],
            row[i],
            row.iter().sum::<f64>(),
            shown.join(", ")
        ));
    }
    text
}

pub fn train_cmd(s: &Settings) -> Result<()> {
    let cfg = s.train()?;
    let out = s.path("out")?;
    let emb = embeddings(s)?;
    let train_set = dataset(s, "train")?;
    check_labels(&train_set, &emb, "training set")?;
    let test_set = match s.raw("test") {
        Some(_) => {
            let ds = dataset(s, "test")?;
            check_labels(&ds, &emb, "test set")?;
            Some(ds)
        }
        None => None,
    };
    let result = train(&cfg, &train_set, test_set.as_ref(), &emb).context("training")?;
    for r in &result.log.records {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        println!(
            "epoch {:>3}  loss {:.5} (cls {:.5} cst {:.5} dstl {:.5})  precision {}  mAP {}",
            r.epoch,
            r.loss_total,
            r.loss_cls,
            r.loss_cst,
            r.loss_dstl,
            fmt(r.pseudo_precision),
            fmt(r.test_map)
        );
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join(CHECKPOINT), |w| write_checkpoint(w, &result.params))?;
    write_file(&out.join(TRAIN_LOG), |w| result.log.write_csv(w))?;
    println!("wrote {} and {} to {}", CHECKPOINT, TRAIN_LOG, out.display());
    Ok(())
}

pub fn eval_cmd(s: &Settings) -> Result<()> {
    let mode = s.graph_mode()?;
    let enable_sam: bool = s.get("enable_sam")?;
    let prior = s.prior()?;
    let path = s.path("checkpoint")?;
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let params = read_checkpoint(BufReader::new(file)).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let emb = embeddings(s)?;
    let test_set = dataset(s, "test")?;
    check_labels(&test_set, &emb, "test set")?;
    if params.n_labels() != emb.n_labels() || params.dim() != emb.dim() {
        bail!(
            "checkpoint is {} labels x {} dims, embeddings {} x {}",
            params.n_labels(),
            params.dim(),
            emb.n_labels(),
            emb.dim()
        );
    }
    let graph = model_graph(mode, &emb, &params.label_table, prior)?;
    let report = evaluate(&params, &graph, enable_sam, &test_set).context("evaluating")?;
    match s.opt_path("out") {
        Some(out) => {
            let mut w = create(&out)?;
            report.write_csv(&mut w, emb.names())?;
            w.flush()?;
            println!("wrote {}", out.display());
        }
        None => report.write_csv(std::io::stdout().lock(), emb.names())?,
    }
    let skipped: Vec<&str> = report.skipped().map(|c| emb.names()[c].as_str()).collect();
    if !skipped.is_empty() {
        println!("skipped (no positives): {}", skipped.join(" "));
    }
    println!("mAP {:.6}", report.map);
    Ok(())
}
