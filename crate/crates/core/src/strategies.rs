//! Model-combination rules.
//!
//! Every operator here is a pure function of its inputs. Neighbor lists are
//! processed in the order given; the simulator always passes them in
//! ascending node id so results are reproducible bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LossKind, Mlp, Objective, Targets};
use crate::params::{l2_norm, ParamVector};

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("aggregation needs at least one neighbor")]
    EmptyNeighborhood,
    #[error("parameter vector of length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{what}: {got} entries for {expected} models")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dataset sizes must be positive")]
    BadSize,
    #[error("edge weight {0} must be finite and positive")]
    BadOmega(f64),
    #[error("damping constant s = {0} must be finite and at least 1")]
    BadDamping(f64),
    #[error("consensus step {epsilon} outside (0, {max}]")]
    BadEpsilon { epsilon: f64, max: f64 },
    #[error("teacher confidence {0} must lie in (0, 1]")]
    BadBeta(f64),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// The combination rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// One model trained on the pooled data.
    Centralized,
    /// Local training only.
    Isolation,
    /// Server-side size-weighted average, broadcast to every node.
    FedAvg,
    /// Neighborhood averaging from a common initial model.
    DecAvgCoord,
    /// Neighborhood averaging from independent initial models.
    DecHetero,
    /// Distance-damped step towards the neighbor average.
    DecDiff,
    /// DecDiff with virtual-teacher local training.
    DecDiffVT,
    /// Consensus-based federated averaging.
    #[serde(rename = "CFA")]
    Cfa,
    /// CFA plus a neighbor-gradient exchange.
    #[serde(rename = "CFAGE")]
    CfaGe,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::Centralized,
        StrategyKind::Isolation,
        StrategyKind::FedAvg,
        StrategyKind::DecAvgCoord,
        StrategyKind::DecHetero,
        StrategyKind::DecDiff,
        StrategyKind::DecDiffVT,
        StrategyKind::Cfa,
        StrategyKind::CfaGe,
    ];

    /// Tag used in metrics files.
    pub fn tag(self) -> &'static str {
        match self {
            StrategyKind::Centralized => "Centralized",
            StrategyKind::Isolation => "Isolation",
            StrategyKind::FedAvg => "FedAvg",
            StrategyKind::DecAvgCoord => "DecAvgCoord",
            StrategyKind::DecHetero => "DecHetero",
            StrategyKind::DecDiff => "DecDiff",
            StrategyKind::DecDiffVT => "DecDiffVT",
            StrategyKind::Cfa => "CFA",
            StrategyKind::CfaGe => "CFAGE",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Whether every node starts from the same model.
    pub fn common_init(self) -> bool {
        matches!(
            self,
            StrategyKind::Centralized | StrategyKind::FedAvg | StrategyKind::DecAvgCoord
        )
    }

    /// Whether nodes exchange models with graph neighbors.
    pub fn is_gossip(self) -> bool {
        matches!(
            self,
            StrategyKind::DecAvgCoord
                | StrategyKind::DecHetero
                | StrategyKind::DecDiff
                | StrategyKind::DecDiffVT
                | StrategyKind::Cfa
                | StrategyKind::CfaGe
        )
    }
}

/// Step size rule for CFA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `1/Δ` with `Δ` the node's degree.
    InverseDegree,
    /// A constant, capped at `1/Δ` per node.
    Fixed(f64),
}

impl EpsilonRule {
    pub fn for_degree(self, degree: usize) -> f64 {
        let cap = 1.0 / degree as f64;
        match self {
            EpsilonRule::InverseDegree => cap,
            EpsilonRule::Fixed(e) => e.min(cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// DecDiff damping constant.
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: EpsilonRule,
    /// Virtual-teacher confidence on the true class.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_s() -> f64 {
    1.0
}
fn default_epsilon() -> EpsilonRule {
    EpsilonRule::InverseDegree
}
fn default_beta() -> f64 {
    0.9
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            s: default_s(),
            epsilon: default_epsilon(),
            beta: default_beta(),
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        if !(self.s.is_finite() && self.s >= 1.0) {
            return Err(StrategyError::BadDamping(self.s));
        }
        if let EpsilonRule::Fixed(e) = self.epsilon {
            if !(e > 0.0 && e <= 1.0) {
                return Err(StrategyError::BadEpsilon { epsilon: e, max: 1.0 });
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(StrategyError::BadBeta(self.beta));
        }
        Ok(())
    }

    /// Local training objective for this strategy.
    pub fn objective(&self) -> Objective {
        match self.kind {
            StrategyKind::DecDiffVT => Objective::VirtualTeacher { beta: self.beta },
            _ => Objective::CrossEntropy,
        }
    }
}

fn check_len(expected: usize, v: &[f64]) -> Result<(), StrategyError> {
    if v.len() != expected {
        return Err(StrategyError::LengthMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_count(what: &'static str, expected: usize, got: usize) -> Result<(), StrategyError> {
    if expected != got {
        return Err(StrategyError::CountMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn weighted_sum(vectors: &[&[f64]], weights: &[f64]) -> Result<ParamVector, StrategyError> {
    let len = vectors.first().ok_or(StrategyError::EmptyNeighborhood)?.len();
    let mut out = vec![0.0; len];
    for (v, &w) in vectors.iter().zip(weights) {
        check_len(len, v)?;
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    Ok(ParamVector::new(out))
}

/// Normalized neighbor weights `ω_ij p_ij / Σ_k ω_ik p_ik`, where
/// `p_ij = |D_j| / Σ_k |D_k|` over the same set.
pub fn neighborhood_weights(sizes: &[f64], omegas: &[f64]) -> Result<Vec<f64>, StrategyError> {
    if sizes.is_empty() {
        return Err(StrategyError::EmptyNeighborhood);
    }
    check_count("edge weights", sizes.len(), omegas.len())?;
    if sizes.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(StrategyError::BadSize);
    }
    if let Some(&bad) = omegas.iter().find(|&&w| !(w.is_finite() && w > 0.0)) {
        return Err(StrategyError::BadOmega(bad));
    }
    let size_total: f64 = sizes.iter().sum();
    let raw: Vec<f64> = sizes
        .iter()
        .zip(omegas)
        .map(|(s, w)| w * (s / size_total))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// DecAvg: replace the local model by the weighted average over the node
/// itself (with `ω_ii = 1`) and its neighbors.
pub fn decavg_aggregate(
    own: &[f64],
    own_size: f64,
    neighbors: &[&[f64]],
    neighbor_sizes: &[f64],
    omegas: &[f64],
) -> Result<ParamVector, StrategyError> {
    check_count("dataset sizes", neighbors.len(), neighbor_sizes.len())?;
    check_count("edge weights", neighbors.len(), omegas.len())?;
    let mut models = Vec::with_capacity(neighbors.len() + 1);
    models.push(own);
    models.extend_from_slice(neighbors);
    let mut sizes = vec![own_size];
    sizes.extend_from_slice(neighbor_sizes);
    let mut w = vec![1.0];
    w.extend_from_slice(omegas);
    let weights = neighborhood_weights(&sizes, &w)?;
    weighted_sum(&models, &weights)
}

/// Neighborhood average used by DecDiff; the local model is excluded.
pub fn decdiff_average(
    neighbors: &[&[f64]],
    neighbor_sizes: &[f64],
    omegas: &[f64],
) -> Result<ParamVector, StrategyError> {
    check_count("dataset sizes", neighbors.len(), neighbor_sizes.len())?;
    let weights = neighborhood_weights(neighbor_sizes, omegas)?;
    weighted_sum(neighbors, &weights)
}

/// DecDiff step: `w + (w̄ − w) / (‖w̄ − w‖₂ + s)`.
///
/// The step length is `d / (d + s)` for `d = ‖w̄ − w‖₂`, always below 1.
pub fn decdiff_update(own: &[f64], avg: &[f64], s: f64) -> Result<ParamVector, StrategyError> {
    check_len(own.len(), avg)?;
    if !(s.is_finite() && s >= 1.0) {
        return Err(StrategyError::BadDamping(s));
    }
    let diff: Vec<f64> = avg.iter().zip(own).map(|(a, w)| a - w).collect();
    let denom = l2_norm(&diff) + s;
    Ok(ParamVector::new(
        own.iter().zip(&diff).map(|(w, d)| w + d / denom).collect(),
    ))
}

/// CFA: `w + ε Σ_j p_ij (w_j − w)` with `p_ij` the neighbor size shares.
pub fn cfa_update(
    own: &[f64],
    neighbors: &[&[f64]],
    neighbor_sizes: &[f64],
    epsilon: f64,
) -> Result<ParamVector, StrategyError> {
    check_count("dataset sizes", neighbors.len(), neighbor_sizes.len())?;
    let max = 1.0 / neighbors.len().max(1) as f64;
    if !(epsilon > 0.0 && epsilon <= max * (1.0 + 1e-12)) {
        return Err(StrategyError::BadEpsilon { epsilon, max });
    }
    let shares = neighborhood_weights(neighbor_sizes, &vec![1.0; neighbor_sizes.len()])?;
    let mut out = own.to_vec();
    for (v, &p) in neighbors.iter().zip(&shares) {
        check_len(own.len(), v)?;
        for ((o, x), w) in out.iter_mut().zip(v.iter()).zip(own) {
            *o += epsilon * p * (x - w);
        }
    }
    Ok(ParamVector::new(out))
}

/// Gradient a neighbor computes for node `i`'s model on one of its own
/// mini-batches (cross-entropy, mean-reduced).
pub fn ge_gradient(model: &Mlp, x: &[f64], labels: &[usize]) -> Result<Vec<f64>, StrategyError> {
    Ok(model.backward(x, Targets::Hard(labels), LossKind::CrossEntropy)?)
}

/// Apply the returned neighbor gradients: `w − η · mean_j g_j`.
///
/// An empty gradient list leaves the model untouched.
pub fn apply_neighbor_gradients(
    own: &[f64],
    gradients: &[Vec<f64>],
    eta: f64,
) -> Result<ParamVector, StrategyError> {
    let mut out = own.to_vec();
    if gradients.is_empty() {
        return Ok(ParamVector::new(out));
    }
    let scale = eta / gradients.len() as f64;
    for g in gradients {
        check_len(own.len(), g)?;
        for (o, gv) in out.iter_mut().zip(g) {
            *o -= scale * gv;
        }
    }
    Ok(ParamVector::new(out))
}

/// The gradient-exchange half of a CFA-GE round for one node.
///
/// `neighbor_batches[j]` is the mini-batch neighbor `j` draws from its own
/// data, or `None` when that neighbor holds no data.
pub fn cfa_ge_round(
    model: &Mlp,
    neighbor_batches: &[Option<(Vec<f64>, Vec<usize>)>],
    eta: f64,
) -> Result<ParamVector, StrategyError> {
    let grads = neighbor_batches
        .iter()
        .flatten()
        .map(|(x, y)| ge_gradient(model, x, y))
        .collect::<Result<Vec<_>, _>>()?;
    apply_neighbor_gradients(model.params(), &grads, eta)
}

/// FedAvg: size-weighted mean of every node's model.
pub fn fedavg_aggregate(all: &[&[f64]], sizes: &[f64]) -> Result<ParamVector, StrategyError> {
    check_count("dataset sizes", all.len(), sizes.len())?;
    let weights = neighborhood_weights(sizes, &vec![1.0; sizes.len()])?;
    weighted_sum(all, &weights)
}
