use scpnet::data::{
    cooccurrence_embedding_correlation, load_dataset, load_embeddings, synth_generate, write_dataset,
    write_embeddings, MaskMode, SynthConfig,
};
use scpnet::losses::splc_focal_loss;
use scpnet::model::{init_model, read_checkpoint, write_checkpoint, LabelHead, ModelParams};
use scpnet::train::{evaluate, model_graph, refined_labels, train, train_from, TrainConfig};
use scpnet::{Error, GraphMode, PriorGraph};

fn small(seed: u64, mask: MaskMode) -> SynthConfig {
    SynthConfig { n_train: 120, n_test: 60, dim: 12, seed, mask, ..SynthConfig::default() }
}

fn cls_loss(params: &ModelParams, graph: &PriorGraph, ds: &scpnet::data::Dataset, cfg: &TrainConfig) -> f64 {
    let z = refined_labels(params, graph, cfg.enable_sam).unwrap();
    let head = LabelHead::new(&z, params.tau).unwrap();
    ds.samples
        .iter()
        .map(|s| {
            let logits = head.predict(&s.f_weak).unwrap().logits;
            splc_focal_loss(&logits, &s.y, &cfg.losses).unwrap().value
        })
        .sum::<f64>()
        / ds.len() as f64
}

#[test]
fn one_small_step_decreases_classification_loss() {
    for (seed, mode) in [(0, GraphMode::Static), (1, GraphMode::None), (2, GraphMode::Static)] {
        let data = synth_generate(&small(seed, MaskMode::Partial(1.0))).unwrap();
        let mut cfg = TrainConfig {
            epochs: 1,
            batch_size: data.train.len(),
            graph_mode: mode,
            enable_sam: mode != GraphMode::None,
            tau: 0.1,
            seed,
            ..TrainConfig::default()
        }
        .sam_only();
        cfg.adam.learning_rate = 1e-4;
        let params = init_model(&data.embeddings, cfg.layers, cfg.tau, cfg.leaky_slope, seed).unwrap();
        let graph = model_graph(mode, &data.embeddings, &params.label_table, cfg.prior).unwrap();
        let before = cls_loss(&params, &graph, &data.train, &cfg);
        let out = train_from(&cfg, params, &data.train, None, &data.embeddings).unwrap();
        let after = cls_loss(&out.params, &graph, &data.train, &cfg);
        assert!(after < before, "seed {seed}: {before} -> {after}");
        let logged = out.log.records[0].loss_cls;
        assert!((logged - before).abs() < 1e-12, "logged loss is the pre-step batch mean");
    }
}

#[test]
fn zero_weight_terms_leave_no_trace() {
    let data = synth_generate(&small(3, MaskMode::SinglePositive)).unwrap();
    let base = TrainConfig { epochs: 3, batch_size: 32, tau: 0.1, seed: 3, ..TrainConfig::default() };
    let run = |cfg: &TrainConfig| train(cfg, &data.train, None, &data.embeddings).unwrap();

    let mut zero_dstl = base.clone();
    zero_dstl.losses.lambda_dstl = 0.0;
    let switched_off = TrainConfig { enable_dstl: false, ..base.clone() };
    let (a, b) = (run(&zero_dstl), run(&switched_off));
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    assert!(a.log.records.iter().all(|r| r.loss_dstl == 0.0 && r.loss_cst > 0.0));

    let mut zero_cst = base.clone();
    zero_cst.losses.lambda_cst = 0.0;
    let c = run(&zero_cst);
    assert_eq!(c.params, run(&TrainConfig { enable_cst: false, ..base.clone() }).params);
    assert!(c.log.records.iter().all(|r| r.loss_cst == 0.0 && r.loss_dstl > 0.0));

    let cls_only = run(&base.clone().sam_only());
    let mut both_zero = base.clone();
    both_zero.losses.lambda_cst = 0.0;
    both_zero.losses.lambda_dstl = 0.0;
    assert_eq!(run(&both_zero).params, cls_only.params);
    for r in &cls_only.log.records {
        assert_eq!(r.loss_total, r.loss_cls);
    }
    // the terms do change the trajectory when switched on
    assert_ne!(run(&base).params, cls_only.params);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(&small(4, MaskMode::SinglePositive)).unwrap();
    let emb_path = dir.path().join("emb.txt");
    let ds_path = dir.path().join("train.jsonl");
    write_embeddings(std::fs::File::create(&emb_path).unwrap(), &data.embeddings).unwrap();
    write_dataset(std::fs::File::create(&ds_path).unwrap(), &data.train).unwrap();
    assert_eq!(load_embeddings(&emb_path).unwrap(), data.embeddings);
    assert_eq!(load_dataset(&ds_path).unwrap(), data.train);

    let cfg = TrainConfig { epochs: 2, tau: 0.1, seed: 4, ..TrainConfig::default() };
    let out = train(&cfg, &data.train, Some(&data.test), &data.embeddings).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &out.params).unwrap();
    let restored = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(restored, out.params);
    let report = evaluate(&restored, &out.graph, true, &data.test).unwrap();
    assert_eq!(Some(report.map), out.log.last().unwrap().test_map);
}

#[test]
fn dynamic_graph_moves_away_from_the_static_prior() {
    let data = synth_generate(&small(5, MaskMode::SinglePositive)).unwrap();
    let cfg = TrainConfig { epochs: 2, tau: 0.1, graph_mode: GraphMode::Dynamic, seed: 5, ..TrainConfig::default() };
    let out = train(&cfg, &data.train, None, &data.embeddings).unwrap();
    let fixed = model_graph(GraphMode::Static, &data.embeddings, &out.params.label_table, cfg.prior).unwrap();
    let gap = out.graph.adjacency().frobenius_distance(fixed.adjacency()).unwrap();
    assert!(gap > 0.0);
    assert_eq!(out.graph.mode(), GraphMode::Dynamic);
}

#[test]
fn default_generator_plants_the_prior() {
    let data = synth_generate(&SynthConfig { n_train: 500, n_test: 10, ..SynthConfig::default() }).unwrap();
    let r = cooccurrence_embedding_correlation(&data.cooccurrence, &data.embeddings).unwrap();
    assert!(r > 0.5, "{r}");
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let data = synth_generate(&small(6, MaskMode::SinglePositive)).unwrap();
    let other = synth_generate(&SynthConfig { dim: 8, ..small(6, MaskMode::SinglePositive) }).unwrap();
    let err = train(&TrainConfig::default(), &data.train, None, &other.embeddings).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
}
