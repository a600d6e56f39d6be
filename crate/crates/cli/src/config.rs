//! Flat `key = value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scpnet::data::{AugmentConfig, MaskMode, SynthConfig};
use scpnet::losses::LossWeights;
use scpnet::train::{AdamConfig, TrainConfig};
use scpnet::{GraphMode, PriorParams};

/// Bad invocation: unknown key, malformed value, missing required setting.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    pub default: Option<String>,
}

fn key(name: &'static str, help: &'static str, default: Option<String>) -> Key {
    Key { name, help, default }
}

/// Every recognised key with its default. Defaults come from the library so
/// the two cannot drift apart.
pub fn registry() -> Vec<Key> {
    let synth = SynthConfig::default();
    let prior = PriorParams::default();
    let train = TrainConfig::default();
    let losses = LossWeights::default();
    let adam = AdamConfig::default();
    let s = |v: &dyn fmt::Display| Some(v.to_string());
    vec![
        key("seed", "master random seed", None),
        key("emb", "label embedding file", None),
        key("train", "training dataset file", None),
        key("test", "test dataset file", None),
        key("checkpoint", "model checkpoint file", None),
        key("graph", "graph file written by build-prior", None),
        key("out", "output file or directory", None),
        key("n_labels", "number of labels", s(&synth.n_labels)),
        key("dim", "embedding dimension", s(&synth.dim)),
        key("n_clusters", "planted label clusters", s(&synth.n_clusters)),
        key("n_train", "training samples", s(&synth.n_train)),
        key("n_test", "test samples", s(&synth.n_test)),
        key("p_in", "in-cluster label probability", s(&synth.p_in)),
        key("p_out", "out-of-cluster label probability", s(&synth.p_out)),
        key("noise", "feature noise", s(&synth.noise)),
        key("label_spread", "label spread around cluster centers", s(&synth.label_spread)),
        key("modality_gap", "offset between embeddings and feature prototypes", s(&synth.modality_gap)),
        key("sigma_weak", "weak-view jitter", s(&synth.augment.sigma_weak)),
        key("sigma_strong", "strong-view jitter", s(&synth.augment.sigma_strong)),
        key("dropout_strong", "strong-view dropout rate", s(&synth.augment.dropout_strong)),
        key("mask", "label masking: single or partial", s(&"single")),
        key("partial_ratio", "kept fraction under partial masking", s(&0.5)),
        key("K", "neighbours kept per label", s(&prior.top_k)),
        key("s", "off-diagonal mass", s(&prior.s)),
        key("tau_prime", "graph softmax temperature", s(&prior.tau_prime)),
        key("mode", "graph mode: static, dynamic or none", s(&train.graph_mode)),
        key("layers", "GCN layers", s(&train.layers)),
        key("tau", "likelihood temperature", s(&train.tau)),
        key("leaky_slope", "LeakyReLU negative slope", s(&train.leaky_slope)),
        key("enable_sam", "refine labels through the GCN", s(&train.enable_sam)),
        key("enable_cst", "use the consistency term", s(&train.enable_cst)),
        key("enable_dstl", "use the distillation term", s(&train.enable_dstl)),
        key("lambda_cst", "consistency weight", s(&losses.lambda_cst)),
        key("lambda_dstl", "distillation weight", s(&losses.lambda_dstl)),
        key("alpha", "focal exponent", s(&losses.alpha)),
        key("beta", "pseudo-positive threshold", s(&losses.beta)),
        key("margin", "positive-branch margin", s(&losses.margin)),
        key("k_conf", "confident labels per sample", s(&losses.k_conf)),
        key("t_base", "base confidence threshold", s(&train.t_base)),
        key("t_min", "threshold floor", s(&train.t_min)),
        key("beta_ramp_epochs", "epochs of linear beta ramp from 1", s(&train.beta_ramp_epochs)),
        key("epochs", "training epochs", s(&train.epochs)),
        key("batch_size", "samples per batch", s(&train.batch_size)),
        key("lr", "Adam learning rate", s(&adam.learning_rate)),
        key("adam_beta1", "Adam first-moment decay", s(&adam.beta1)),
        key("adam_beta2", "Adam second-moment decay", s(&adam.beta2)),
        key("adam_eps", "Adam epsilon", s(&adam.eps)),
        key("top", "neighbours shown per label", s(&3)),
    ]
}

const PRIOR_KEYS: [&str; 3] = ["K", "s", "tau_prime"];
const SYNTH_KEYS: [&str; 17] = [
    "seed", "out", "n_labels", "dim", "n_clusters", "n_train", "n_test", "p_in", "p_out", "noise",
    "label_spread", "modality_gap", "sigma_weak", "sigma_strong", "dropout_strong", "mask",
    "partial_ratio",
];
const TRAIN_KEYS: [&str; 27] = [
    "seed", "emb", "train", "test", "out", "mode", "layers", "tau", "leaky_slope", "enable_sam",
    "enable_cst", "enable_dstl", "lambda_cst", "lambda_dstl", "alpha", "beta", "margin", "k_conf",
    "t_base", "t_min", "beta_ramp_epochs", "epochs", "batch_size", "lr", "adam_beta1", "adam_beta2",
    "adam_eps",
];

/// Keys accepted as flags by each subcommand, in display order.
pub fn command_keys(command: &str) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = match command {
        "synth" => SYNTH_KEYS.to_vec(),
        "build-prior" => vec!["emb", "out"],
        "inspect-graph" => vec!["graph", "emb", "out", "top"],
        "train" => TRAIN_KEYS.to_vec(),
        "eval" => vec!["checkpoint", "emb", "test", "out", "mode", "enable_sam"],
        _ => Vec::new(),
    };
    if command != "synth" {
        keys.extend(PRIOR_KEYS);
    }
    keys
}

/// Resolved settings for one run: defaults, then the config file, then flags.
#[derive(Debug, Clone)]
pub struct Settings {
    keys: Vec<&'static str>,
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn resolve(
        command: &str,
        file: Option<&Path>,
        flags: impl IntoIterator<Item = (&'static str, String)>,
    ) -> anyhow::Result<Self> {
        let registry = registry();
        let mut values: BTreeMap<&'static str, String> = registry
            .iter()
            .filter_map(|k| k.default.clone().map(|d| (k.name, d)))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
            for (name, value) in parse_config(&text, &registry)? {
                values.insert(name, value);
            }
        }
        for (name, value) in flags {
            values.insert(name, value);
        }
        values.retain(|_, v| !v.is_empty());
        Ok(Self { keys: command_keys(command), values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key).ok_or_else(|| usage(format!("missing required setting `{key}`")))?;
        raw.parse()
            .map_err(|e| usage(format!("invalid value {raw:?} for `{key}`: {e}")))
    }

    pub fn path(&self, key: &str) -> anyhow::Result<PathBuf> {
        self.get(key)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// The command's keys as `key = value` lines, itself a valid config file.
    pub fn render(&self) -> String {
        self.keys
            .iter()
            .map(|k| format!("{k} = {}\n", self.raw(k).unwrap_or("")))
            .collect()
    }

    pub fn prior(&self) -> anyhow::Result<PriorParams> {
        Ok(PriorParams {
            top_k: self.get("K")?,
            s: self.get("s")?,
            tau_prime: self.get("tau_prime")?,
        })
    }

    pub fn graph_mode(&self) -> anyhow::Result<GraphMode> {
        self.get("mode")
    }

    pub fn synth(&self) -> anyhow::Result<SynthConfig> {
        let mask = match self.raw("mask") {
            Some("single") => MaskMode::SinglePositive,
            Some("partial") => MaskMode::Partial(self.get("partial_ratio")?),
            other => return Err(usage(format!("mask must be `single` or `partial`, got {other:?}"))),
        };
        let cfg = SynthConfig {
            n_labels: self.get("n_labels")?,
            dim: self.get("dim")?,
            n_clusters: self.get("n_clusters")?,
            n_train: self.get("n_train")?,
            n_test: self.get("n_test")?,
            p_in: self.get("p_in")?,
            p_out: self.get("p_out")?,
            noise: self.get("noise")?,
            label_spread: self.get("label_spread")?,
            modality_gap: self.get("modality_gap")?,
            augment: AugmentConfig {
                sigma_weak: self.get("sigma_weak")?,
                sigma_strong: self.get("sigma_strong")?,
                dropout_strong: self.get("dropout_strong")?,
            },
            mask,
            seed: self.get("seed")?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self) -> anyhow::Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            adam: AdamConfig {
                learning_rate: self.get("lr")?,
                beta1: self.get("adam_beta1")?,
                beta2: self.get("adam_beta2")?,
                eps: self.get("adam_eps")?,
            },
            graph_mode: self.graph_mode()?,
            prior: self.prior()?,
            layers: self.get("layers")?,
            tau: self.get("tau")?,
            leaky_slope: self.get("leaky_slope")?,
            losses: LossWeights {
                lambda_cst: self.get("lambda_cst")?,
                lambda_dstl: self.get("lambda_dstl")?,
                alpha: self.get("alpha")?,
                beta: self.get("beta")?,
                margin: self.get("margin")?,
                k_conf: self.get("k_conf")?,
            },
            beta_ramp_epochs: self.get("beta_ramp_epochs")?,
            t_base: self.get("t_base")?,
            t_min: self.get("t_min")?,
            enable_sam: self.get("enable_sam")?,
            enable_cst: self.get("enable_cst")?,
            enable_dstl: self.get("enable_dstl")?,
            seed: self.get("seed")?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Parse `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_config(text: &str, registry: &[Key]) -> anyhow::Result<Vec<(&'static str, String)>> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        let known = registry
            .iter()
            .find(|key| key.name == k)
            .ok_or_else(|| usage(format!("config line {}: unknown key `{k}`", i + 1)))?;
        if out.iter().any(|(name, _)| *name == known.name) {
            return Err(usage(format!("config line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((known.name, v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let reg = registry();
        let parsed = parse_config("# run\nK = 4  # neighbours\n\ntau=0.1\n", &reg).unwrap();
        assert_eq!(parsed, vec![("K", "4".to_string()), ("tau", "0.1".to_string())]);
        let err = parse_config("bogus = 1\n", &reg).unwrap_err();
        assert!(err.is::<UsageError>());
        assert!(parse_config("K = 1\nK = 2\n", &reg).is_err());
        assert!(parse_config("K 1\n", &reg).is_err());
    }

    #[test]
    fn defaults_match_library() {
        let s = Settings::resolve("train", None, [("seed", "3".to_string())]).unwrap();
        let cfg = s.train().unwrap();
        assert_eq!(cfg, TrainConfig { seed: 3, ..TrainConfig::default() });
        let s = Settings::resolve("synth", None, [("seed", "3".to_string())]).unwrap();
        assert_eq!(s.synth().unwrap(), SynthConfig { seed: 3, ..SynthConfig::default() });
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "K = 4\ns = 0.3\n").unwrap();
        let s = Settings::resolve("build-prior", Some(&path), [("K", "7".to_string())]).unwrap();
        let p = s.prior().unwrap();
        assert_eq!((p.top_k, p.s), (7, 0.3));
    }

    #[test]
    fn render_round_trips() {
        let s = Settings::resolve("train", None, [("seed", "1".to_string()), ("tau", "0.1".to_string())]).unwrap();
        let again = parse_config(&s.render(), &registry()).unwrap();
        assert!(again.contains(&("tau", "0.1".to_string())));
        assert!(again.contains(&("seed", "1".to_string())));
    }

    #[test]
    fn every_command_key_is_registered() {
        let reg = registry();
        for cmd in ["synth", "build-prior", "inspect-graph", "train", "eval"] {
            for k in command_keys(cmd) {
                assert!(reg.iter().any(|r| r.name == k), "{cmd}: {k}");
            }
        }
    }
}
