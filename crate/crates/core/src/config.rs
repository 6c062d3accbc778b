//! Run configuration.
//!
//! A config is one JSON document with the sections `topology`, `dataset`,
//! `allocation`, `strategy`, `training` and `run`. Unknown keys anywhere are
//! rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{PRESET_MNIST_MLP, PRESET_TINY};
use crate::rng::derive_seed;
use crate::strategies::{EpsilonRule, StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub topology: TopologySpec,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub allocation: AllocationSpec,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi,
    BarabasiAlbert,
    /// A topology JSON file, e.g. written by `gen-graph`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: GraphKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Edge probability for `erdos_renyi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Attachments per node for `barabasi_albert`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Generator seed; derived from the master seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Draw a fresh graph for every replica instead of sharing one.
    #[serde(default)]
    pub per_replica: bool,
    /// Constant ω applied to every edge.
    #[serde(default = "one")]
    pub weight: f64,
    /// Per-edge `[i, j, ω]` overrides, applied after `weight`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_overrides: Vec<(usize, usize, f64)>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxSpec>,
    /// Keep only the first K training samples of each class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_per_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub test_per_class: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationScheme {
    Zipf,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSpec {
    #[serde(default = "zipf")]
    pub scheme: AllocationScheme,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "one_usize")]
    pub min_per_class: usize,
    /// Base seed; each replica mixes in its index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn zipf() -> AllocationScheme {
    AllocationScheme::Zipf
}
fn default_alpha() -> f64 {
    1.26
}
fn one_usize() -> usize {
    1
}

impl Default for AllocationSpec {
    fn default() -> Self {
        Self {
            scheme: zipf(),
            alpha: default_alpha(),
            min_per_class: 1,
            seed: None,
        }
    }
}

/// One strategy kind or a list of kinds run side by side on identical
/// topologies, allocations and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kinds {
    One(StrategyKind),
    Many(Vec<StrategyKind>),
}

impl Kinds {
    pub fn to_vec(&self) -> Vec<StrategyKind> {
        match self {
            Kinds::One(k) => vec![*k],
            Kinds::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: Kinds,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "inverse_degree")]
    pub epsilon: EpsilonRule,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn inverse_degree() -> EpsilonRule {
    EpsilonRule::InverseDegree
}
fn default_beta() -> f64 {
    0.9
}

impl StrategySpec {
    pub fn configs(&self) -> Vec<StrategyConfig> {
        self.kind
            .to_vec()
            .into_iter()
            .map(|kind| StrategyConfig {
                kind,
                s: self.s,
                epsilon: self.epsilon,
                beta: self.beta,
            })
            .collect()
    }
}

/// Hidden layer widths: a named preset or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hidden {
    Preset(String),
    Explicit(Vec<usize>),
}

impl Hidden {
    pub fn resolve(&self) -> Option<Vec<usize>> {
        match self {
            Hidden::Preset(name) => match name.as_str() {
                "mnist-mlp" => Some(PRESET_MNIST_MLP.to_vec()),
                "tiny" => Some(PRESET_TINY.to_vec()),
                _ => None,
            },
            Hidden::Explicit(v) => Some(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    #[serde(default = "tiny")]
    pub hidden: Hidden,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "one_usize")]
    pub epochs: usize,
    /// Per-node epoch counts, overriding `epochs` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_per_node: Option<Vec<usize>>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Zero the momentum buffer after every aggregation.
    #[serde(default)]
    pub reset_velocity: bool,
}

fn tiny() -> Hidden {
    Hidden::Preset("tiny".into())
}
fn default_eta() -> f64 {
    0.001
}
fn default_mu() -> f64 {
    0.5
}
fn default_batch() -> usize {
    32
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            hidden: tiny(),
            eta: default_eta(),
            mu: default_mu(),
            epochs: 1,
            epochs_per_node: None,
            batch_size: default_batch(),
            reset_velocity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Evaluate every k-th round (the last round is always evaluated).
    #[serde(default = "one_usize")]
    pub eval_every: usize,
    /// Write each evaluated round's parameters here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_rounds() -> usize {
    200
}
fn default_replicas() -> usize {
    4
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            replicas: default_replicas(),
            master_seed: 0,
            eval_every: 1,
            checkpoint_dir: None,
        }
    }
}

fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

impl SimConfig {
    /// Parse and validate. Parse errors carry the JSON path of the offending
    /// field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        crate::json::to_sorted_string_pretty(self)
    }

    /// Number of participating nodes in the graph.
    pub fn node_count(&self) -> Option<usize> {
        self.topology.n
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.training.hidden.resolve().unwrap_or_default()
    }

    /// Semantic checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let t = &self.topology;
        match t.kind {
            GraphKind::ErdosRenyi => {
                if t.n.unwrap_or(0) == 0 {
                    return Err(bad("topology.n", "required and positive for erdos_renyi"));
                }
                match t.p {
                    Some(p) if (0.0..=1.0).contains(&p) => {}
                    Some(p) => return Err(bad("topology.p", format!("{p} is outside [0, 1]"))),
                    None => return Err(bad("topology.p", "required for erdos_renyi")),
                }
            }
            GraphKind::BarabasiAlbert => {
                let n = t.n.unwrap_or(0);
                match t.m {
                    Some(m) if m >= 1 && m < n => {}
                    _ => return Err(bad("topology.m", "required, with 1 <= m < n")),
                }
            }
            GraphKind::File => {
                if t.path.is_none() {
                    return Err(bad("topology.path", "required for kind = file"));
                }
            }
        }
        if !(t.weight.is_finite() && t.weight > 0.0) {
            return Err(bad("topology.weight", "must be finite and positive"));
        }
        for (k, &(i, j, w)) in t.weight_overrides.iter().enumerate() {
            if i == j || !(w.is_finite() && w > 0.0) {
                return Err(bad(
                    &format!("topology.weight_overrides[{k}]"),
                    "needs distinct endpoints and a positive weight",
                ));
            }
        }

        let d = &self.dataset;
        match (&d.synthetic, &d.idx) {
            (Some(s), None) => {
                if s.n_per_class == 0 || s.test_per_class == 0 || s.num_classes == 0 || s.feature_dim == 0 {
                    return Err(bad("dataset.synthetic", "counts and dimensions must be positive"));
                }
                if !(s.spread.is_finite() && s.spread >= 0.0) {
                    return Err(bad("dataset.synthetic.spread", "must be non-negative"));
                }
            }
            (None, Some(_)) => {}
            _ => return Err(bad("dataset", "exactly one of `synthetic` or `idx` is required")),
        }
        if d.max_per_class == Some(0) {
            return Err(bad("dataset.max_per_class", "must be positive"));
        }

        let a = &self.allocation;
        if a.scheme == AllocationScheme::Zipf {
            if !(a.alpha.is_finite() && a.alpha > 0.0) {
                return Err(bad("allocation.alpha", "must be positive"));
            }
            if a.min_per_class == 0 {
                return Err(bad("allocation.min_per_class", "must be at least 1"));
            }
        }

        let kinds = self.strategy.kind.to_vec();
        if kinds.is_empty() {
            return Err(bad("strategy.kind", "at least one strategy is required"));
        }
        for (k, kind) in kinds.iter().enumerate() {
            if kinds[..k].contains(kind) {
                return Err(bad("strategy.kind", format!("{} listed twice", kind.tag())));
            }
        }
        for cfg in self.strategy.configs() {
            cfg.validate().map_err(|e| bad("strategy", e.to_string()))?;
        }
        if kinds.contains(&StrategyKind::DecDiffVT) && self.strategy.beta > 1.0 {
            return Err(bad("strategy.beta", "must not exceed 1"));
        }

        let tr = &self.training;
        match tr.hidden.resolve() {
            None => return Err(bad("training.hidden", "unknown preset (expected `mnist-mlp` or `tiny`)")),
            Some(h) if h.contains(&0) => return Err(bad("training.hidden", "layer widths must be positive")),
            Some(_) => {}
        }
        if !(tr.eta.is_finite() && tr.eta > 0.0) {
            return Err(bad("training.eta", "must be positive"));
        }
        if !(0.0..1.0).contains(&tr.mu) {
            return Err(bad("training.mu", "must lie in [0, 1)"));
        }
        if tr.batch_size == 0 {
            return Err(bad("training.batch_size", "must be positive"));
        }
        if let (Some(per), Some(n)) = (&tr.epochs_per_node, t.n) {
            if per.len() != n {
                return Err(bad(
                    "training.epochs_per_node",
                    format!("{} entries for {n} nodes", per.len()),
                ));
            }
        }

        let r = &self.run;
        if r.replicas == 0 {
            return Err(bad("run.replicas", "must be at least 1"));
        }
        if r.eval_every == 0 {
            return Err(bad("run.eval_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Seed of the topology used by `replica`.
    pub fn topology_seed(&self, replica: usize) -> u64 {
        let rep = if self.topology.per_replica { replica as u64 } else { 0 };
        match self.topology.seed {
            Some(s) if self.topology.per_replica => crate::rng::fold_seed(s, &[rep]),
            Some(s) => s,
            None => derive_seed(self.run.master_seed, rep, 0, 0, "topology"),
        }
    }

    pub fn allocation_seed(&self, replica: usize) -> u64 {
        match self.allocation.seed {
            Some(s) => crate::rng::fold_seed(s, &[replica as u64]),
            None => derive_seed(self.run.master_seed, replica as u64, 0, 0, "allocation"),
        }
    }

    /// Synthetic data is global: shared by every replica.
    pub fn dataset_seed(&self, purpose: &str) -> u64 {
        let base = self.dataset.synthetic.as_ref().and_then(|s| s.seed);
        match base {
            Some(s) => crate::rng::fold_seed(s, &[crate::rng::tag_hash(purpose)]),
            None => derive_seed(self.run.master_seed, 0, 0, 0, purpose),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "topology": {"kind": "erdos_renyi", "n": 6, "p": 0.5},
        "dataset": {"synthetic": {"n_per_class": 20, "test_per_class": 10,
                     "num_classes": 3, "feature_dim": 4, "spread": 0.1}},
        "strategy": {"kind": "DecDiffVT"}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = SimConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.run.rounds, 200);
        assert_eq!(cfg.run.replicas, 4);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.eta, 0.001);
        assert_eq!(cfg.training.mu, 0.5);
        assert_eq!(cfg.hidden_dims(), vec![64, 32]);
        assert_eq!(cfg.allocation.alpha, 1.26);
        assert_eq!(cfg.strategy.configs()[0].s, 1.0);
        let again = SimConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let text = MINIMAL.replace("\"spread\": 0.1", "\"spread\": 0.1, \"sprad\": 2");
        match SimConfig::from_json(&text) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "dataset.synthetic.sprad");
                assert!(message.contains("sprad"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = MINIMAL.replace("\"p\": 0.5", "\"p\": 1.5");
        assert!(matches!(SimConfig::from_json(&text), Err(Error::Config { path, .. }) if path == "topology.p"));
        let text = MINIMAL.replace("\"kind\": \"DecDiffVT\"", "\"kind\": \"DecDiffVT\", \"s\": 0.5");
        assert!(matches!(SimConfig::from_json(&text), Err(Error::Config { path, .. }) if path == "strategy"));
    }

    #[test]
    fn strategy_lists() {
        let text = MINIMAL.replace("\"DecDiffVT\"", "[\"Isolation\", \"DecDiff\"]");
        let cfg = SimConfig::from_json(&text).unwrap();
        let kinds: Vec<_> = cfg.strategy.configs().iter().map(|c| c.kind).collect();
        assert_eq!(kinds, vec![StrategyKind::Isolation, StrategyKind::DecDiff]);
        let dup = MINIMAL.replace("\"DecDiffVT\"", "[\"DecDiff\", \"DecDiff\"]");
        assert!(SimConfig::from_json(&dup).is_err());
    }

    #[test]
    fn seeds_follow_sharing_rules() {
        let mut cfg = SimConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.topology_seed(0), cfg.topology_seed(3));
        assert_ne!(cfg.allocation_seed(0), cfg.allocation_seed(1));
        cfg.topology.per_replica = true;
        assert_ne!(cfg.topology_seed(0), cfg.topology_seed(3));
    }
}
