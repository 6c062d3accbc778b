//! Synchronous round engine.
//!
//! Round 0 trains every node once and evaluates. Each later round trains,
//! exchanges the freshly trained models along graph edges, aggregates and
//! evaluates. All nodes send the same snapshot: aggregation at node `i` only
//! ever sees the post-training parameters of the current round, so the
//! result does not depend on the order nodes are visited.
//!
//! Randomness is keyed by `(master, replica, node, round, purpose)` and never
//! by thread or visiting order. Output is identical for any thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AllocationScheme, GraphKind, SimConfig};
use crate::data::{iid_allocate, load_idx, synth_blobs, zipf_allocate, Allocation, LabeledDataset};
use crate::error::{Error, Result};
use crate::graph::{gen_barabasi_albert, gen_erdos_renyi, Topology};
use crate::metrics::RoundRecord;
use crate::nn::{evaluate, train_local, Mlp, Sgd};
use crate::params::ParamVector;
use crate::rng::{derive_seed, fold_seed, rng_from_seed};
use crate::strategies::{
    cfa_ge_round, cfa_update, decavg_aggregate, decdiff_average, decdiff_update, fedavg_aggregate,
    StrategyConfig, StrategyKind,
};

/// Loaded data plus the config that produced it. Shared read-only by every
/// replica and strategy.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: SimConfig,
    train: LabeledDataset,
    test: LabeledDataset,
}

impl Experiment {
    /// Validate the config and load (or synthesize) the datasets.
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = if let Some(s) = &config.dataset.synthetic {
            let train = synth_blobs(
                s.n_per_class,
                s.num_classes,
                s.feature_dim,
                s.spread,
                config.dataset_seed("train"),
            );
            let test = synth_blobs(
                s.test_per_class,
                s.num_classes,
                s.feature_dim,
                s.spread,
                config.dataset_seed("test"),
            );
            (train, test)
        } else {
            let idx = config.dataset.idx.as_ref().expect("validated");
            (
                load_idx(&idx.train_images, &idx.train_labels)?,
                load_idx(&idx.test_images, &idx.test_labels)?,
            )
        };
        Self::with_data(config, train, test)
    }

    /// Use already loaded datasets; `dataset.max_per_class` still applies.
    pub fn with_data(config: SimConfig, train: LabeledDataset, test: LabeledDataset) -> Result<Self> {
        config.validate()?;
        if train.feature_dim() != test.feature_dim() {
            return Err(Error::config(
                "dataset",
                format!(
                    "train features have dimension {}, test features {}",
                    train.feature_dim(),
                    test.feature_dim()
                ),
            ));
        }
        let train = match config.dataset.max_per_class {
            Some(k) => train.first_per_class(k),
            None => train,
        };
        Ok(Self { config, train, test })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn train(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn test(&self) -> &LabeledDataset {
        &self.test
    }

    /// Layer widths `[input, hidden.., classes]`.
    pub fn model_dims(&self) -> Vec<usize> {
        let classes = self.train.num_classes().max(self.test.num_classes());
        let mut dims = vec![self.train.feature_dim()];
        dims.extend(self.config.hidden_dims());
        dims.push(classes);
        dims
    }

    /// The communication graph of `replica`, with edge weights applied.
    pub fn topology(&self, replica: usize) -> Result<Topology> {
        let t = &self.config.topology;
        let seed = self.config.topology_seed(replica);
        let mut topo = match t.kind {
            GraphKind::ErdosRenyi => gen_erdos_renyi(t.n.unwrap_or(0), t.p.unwrap_or(0.0), seed)?,
            GraphKind::BarabasiAlbert => gen_barabasi_albert(t.n.unwrap_or(0), t.m.unwrap_or(0), seed)?,
            GraphKind::File => {
                let path = t.path.as_ref().expect("validated");
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::config("topology.path", format!("{}: {e}", path.display()))
                })?;
                let topo = Topology::from_json(&text)?;
                if let Some(n) = t.n {
                    if n != topo.node_count() {
                        return Err(Error::config(
                            "topology.n",
                            format!("{n} does not match the file's {} nodes", topo.node_count()),
                        ));
                    }
                }
                topo
            }
        };
        if t.weight != 1.0 {
            topo.set_all_weights(t.weight)?;
        }
        for &(i, j, w) in &t.weight_overrides {
            topo.set_weight(i, j, w)?;
        }
        Ok(topo)
    }

    /// The data partition of `replica` over `n` nodes.
    pub fn allocation(&self, replica: usize, n: usize) -> Result<Allocation> {
        let a = &self.config.allocation;
        let seed = self.config.allocation_seed(replica);
        Ok(match a.scheme {
            AllocationScheme::Zipf => zipf_allocate(&self.train, n, a.alpha, a.min_per_class, seed)?,
            AllocationScheme::Iid => iid_allocate(&self.train, n, seed)?,
        })
    }

    /// Every `(replica, strategy)` run, in parallel on the current rayon
    /// pool. A failing run is logged and reported without stopping the rest.
    pub fn run_all(&self) -> MetricsLog {
        let strategies = self.config.strategy.configs();
        let units: Vec<(usize, &StrategyConfig)> = strategies
            .iter()
            .flat_map(|s| (0..self.config.run.replicas).map(move |r| (r, s)))
            .collect();
        let results: Vec<_> = units
            .par_iter()
            .map(|&(replica, strategy)| (replica, strategy.kind, self.run_one(replica, strategy)))
            .collect();
        let mut log = MetricsLog::default();
        for (replica, strategy, result) in results {
            match result {
                Ok(records) => log.records.extend(records),
                Err(e) => {
                    log::error!("{} replica {replica} failed: {e}", strategy.tag());
                    log.failures.push(RunFailure {
                        replica,
                        strategy,
                        message: e.to_string(),
                    });
                }
            }
        }
        log
    }

    /// As [`Experiment::run_all`] on a dedicated pool of `threads` workers
    /// (0 picks the rayon default).
    pub fn run_all_with(&self, threads: usize) -> Result<MetricsLog> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::config("threads", e.to_string()))?;
        Ok(pool.install(|| self.run_all()))
    }

    /// One complete run: rounds `0..=T`, returning the evaluated records.
    pub fn run_one(&self, replica: usize, strategy: &StrategyConfig) -> Result<Vec<RoundRecord>> {
        let mut run = Run::new(self, replica, strategy.clone())?;
        let mut records = Vec::new();
        for _ in 0..=self.config.run.rounds {
            if let Some(r) = run.step()? {
                records.extend(r);
            }
        }
        Ok(records)
    }
}

/// A run that could not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub replica: usize,
    pub strategy: StrategyKind,
    pub message: String,
}

/// Records from every completed run, in config strategy order, then replica,
/// round and node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<RoundRecord>,
    pub failures: Vec<RunFailure>,
}

/// Per-node training state.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub model: Mlp,
    pub opt: Sgd,
    pub indices: Vec<usize>,
    pub epochs: usize,
}

/// One strategy on one replica, advanced a round at a time.
#[derive(Debug)]
pub struct Run<'a> {
    exp: &'a Experiment,
    replica: usize,
    strategy: StrategyConfig,
    topology: Topology,
    gini: f64,
    nodes: Vec<NodeState>,
    round: usize,
}

impl<'a> Run<'a> {
    pub fn new(exp: &'a Experiment, replica: usize, strategy: StrategyConfig) -> Result<Self> {
        strategy.validate()?;
        let cfg = &exp.config;
        let topology = exp.topology(replica)?;
        let n = topology.node_count();
        let alloc = exp.allocation(replica, n)?;
        let gini = alloc.gini();
        let dims = exp.model_dims();
        let tr = &cfg.training;
        let master = cfg.run.master_seed;
        let rep = replica as u64;

        let epochs_of = |i: usize| tr.epochs_per_node.as_ref().map_or(tr.epochs, |v| v[i]);
        let init = |i: usize| -> Result<NodeState> {
            let seed = if strategy.kind.common_init() {
                derive_seed(master, rep, 0, 0, "init-common")
            } else {
                derive_seed(master, rep, i as u64, 0, "init")
            };
            let model = Mlp::init_random(&dims, seed)?;
            let opt = Sgd::new(tr.eta, tr.mu, model.param_count())?;
            Ok(NodeState {
                model,
                opt,
                indices: Vec::new(),
                epochs: epochs_of(i),
            })
        };

        let nodes = if strategy.kind == StrategyKind::Centralized {
            let mut node = init(0)?;
            node.indices = (0..exp.train.len()).collect();
            node.epochs = tr.epochs;
            vec![node]
        } else {
            for i in 0..n {
                if topology.degree(i) == 0 && strategy.kind.is_gossip() {
                    log::warn!(
                        "{} replica {replica}: node {i} has no neighbors and will never aggregate",
                        strategy.kind.tag()
                    );
                }
            }
            alloc
                .per_node
                .into_iter()
                .enumerate()
                .map(|(i, idx)| {
                    let mut node = init(i)?;
                    node.indices = idx;
                    Ok(node)
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            exp,
            replica,
            strategy,
            topology,
            gini,
            nodes,
            round: 0,
        })
    }

    /// Index of the next round `step` will execute.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Mutable node state, e.g. to install custom initial models. Dataset
    /// sizes used for weighting are read from `indices` every round.
    pub fn nodes_mut(&mut self) -> &mut [NodeState] {
        &mut self.nodes
    }

    fn sizes(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.indices.len() as f64).collect()
    }

    /// Per-node-total Gini of this replica's allocation.
    pub fn gini(&self) -> f64 {
        self.gini
    }

    /// Floats each node sends during round `round`.
    pub fn comm_floats(&self, node: usize, round: usize) -> u64 {
        if round == 0 {
            return 0;
        }
        let p = self.nodes[0].model.param_count() as u64;
        let deg = self.topology.degree(node) as u64;
        match self.strategy.kind {
            StrategyKind::Centralized | StrategyKind::Isolation => 0,
            StrategyKind::FedAvg => p,
            StrategyKind::CfaGe => 2 * deg * p,
            _ => deg * p,
        }
    }

    /// Execute one round. Returns its records when the round is evaluated.
    pub fn step(&mut self) -> Result<Option<Vec<RoundRecord>>> {
        let t = self.round;
        self.train(t)?;
        if t > 0 {
            self.aggregate(t)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.model.params().iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "{} replica {}: node {i} has non-finite parameters at round {t}",
                    self.strategy.kind.tag(),
                    self.replica
                )));
            }
        }
        self.round += 1;
        let run = &self.exp.config.run;
        if !t.is_multiple_of(run.eval_every) && t != run.rounds {
            return Ok(None);
        }
        if let Some(dir) = &run.checkpoint_dir {
            self.checkpoint(dir, t)?;
        }
        self.evaluate(t).map(Some)
    }

    fn train(&mut self, round: usize) -> Result<()> {
        let cfg = &self.exp.config;
        let (master, rep) = (cfg.run.master_seed, self.replica as u64);
        let objective = self.strategy.objective();
        let batch = cfg.training.batch_size;
        let train = &self.exp.train;
        self.nodes
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, node)| -> Result<()> {
                let mut rng = rng_from_seed(derive_seed(master, rep, i as u64, round as u64, "train"));
                train_local(
                    &mut node.model,
                    &mut node.opt,
                    train,
                    &node.indices,
                    node.epochs,
                    batch,
                    objective,
                    &mut rng,
                )?;
                Ok(())
            })
    }

    fn aggregate(&mut self, round: usize) -> Result<()> {
        let kind = self.strategy.kind;
        if matches!(kind, StrategyKind::Centralized | StrategyKind::Isolation) {
            return Ok(());
        }
        let snapshot: Vec<ParamVector> = self.nodes.iter().map(|n| n.model.get_params()).collect();
        let views: Vec<&[f64]> = snapshot.iter().map(|p| p.as_ref()).collect();

        let updated: Vec<Option<ParamVector>> = if kind == StrategyKind::FedAvg {
            let global = fedavg_aggregate(&views, &self.sizes())?;
            vec![Some(global); self.nodes.len()]
        } else {
            (0..self.nodes.len())
                .into_par_iter()
                .map(|i| self.aggregate_node(i, round, &views))
                .collect::<Result<_>>()?
        };

        let reset = self.exp.config.training.reset_velocity;
        for (node, new) in self.nodes.iter_mut().zip(updated) {
            if let Some(p) = new {
                node.model.set_params(&p)?;
                if reset {
                    node.opt.reset();
                }
            }
        }
        Ok(())
    }

    /// New parameters for node `i`, or `None` when it has no neighbors.
    fn aggregate_node(&self, i: usize, round: usize, views: &[&[f64]]) -> Result<Option<ParamVector>> {
        let nbrs = self.topology.neighbors(i)?;
        if nbrs.is_empty() {
            return Ok(None);
        }
        let own = views[i];
        let models: Vec<&[f64]> = nbrs.iter().map(|&j| views[j]).collect();
        let size = |j: usize| self.nodes[j].indices.len() as f64;
        let sizes: Vec<f64> = nbrs.iter().map(|&j| size(j)).collect();
        let omegas: Vec<f64> = nbrs
            .iter()
            .map(|&j| self.topology.weight(i, j).expect("neighbor edge"))
            .collect();
        let s = &self.strategy;
        let out = match s.kind {
            StrategyKind::DecAvgCoord | StrategyKind::DecHetero => {
                decavg_aggregate(own, size(i), &models, &sizes, &omegas)?
            }
            StrategyKind::DecDiff | StrategyKind::DecDiffVT => {
                let avg = decdiff_average(&models, &sizes, &omegas)?;
                decdiff_update(own, &avg, s.s)?
            }
            StrategyKind::Cfa => cfa_update(own, &models, &sizes, s.epsilon.for_degree(nbrs.len()))?,
            StrategyKind::CfaGe => {
                let consensus = cfa_update(own, &models, &sizes, s.epsilon.for_degree(nbrs.len()))?;
                let mut probe = self.nodes[i].model.clone();
                probe.set_params(&consensus)?;
                let batches: Vec<_> = nbrs
                    .iter()
                    .map(|&j| Some(self.ge_batch(j, i, round)))
                    .collect();
                cfa_ge_round(&probe, &batches, self.exp.config.training.eta)?
            }
            StrategyKind::Centralized | StrategyKind::Isolation | StrategyKind::FedAvg => {
                unreachable!("handled by the caller")
            }
        };
        Ok(Some(out))
    }

    /// The mini-batch neighbor `j` draws from its data to compute a gradient
    /// for node `i`.
    fn ge_batch(&self, j: usize, i: usize, round: usize) -> (Vec<f64>, Vec<usize>) {
        let cfg = &self.exp.config;
        let seed = fold_seed(
            derive_seed(cfg.run.master_seed, self.replica as u64, j as u64, round as u64, "ge"),
            &[i as u64],
        );
        let pool = &self.nodes[j].indices;
        let k = cfg.training.batch_size.min(pool.len());
        let mut picks: Vec<usize> = sample(&mut rng_from_seed(seed), pool.len(), k)
            .into_iter()
            .map(|p| pool[p])
            .collect();
        picks.sort_unstable();
        self.exp.train.gather(&picks)
    }

    fn evaluate(&self, round: usize) -> Result<Vec<RoundRecord>> {
        let test = &self.exp.test;
        let scores: Vec<(f64, f64)> = self
            .nodes
            .par_iter()
            .map(|n| evaluate(&n.model, test))
            .collect::<Result<_, _>>()?;
        Ok(scores
            .into_iter()
            .enumerate()
            .map(|(i, (accuracy, test_ce_loss))| RoundRecord {
                replica: self.replica,
                round,
                node: i,
                strategy: self.strategy.kind,
                accuracy,
                test_ce_loss,
                comm_floats_sent: self.comm_floats(i, round),
                gini: self.gini,
            })
            .collect())
    }

    fn checkpoint(&self, dir: &Path, round: usize) -> Result<()> {
        let base: PathBuf = dir
            .join(self.strategy.kind.tag())
            .join(format!("replica{}", self.replica));
        fs::create_dir_all(&base)?;
        for (i, node) in self.nodes.iter().enumerate() {
            let path = base.join(format!("round{round}_node{i}.bin"));
            fs::write(path, node.model.get_params().to_bytes())?;
        }
        Ok(())
    }
}

/// Load data and execute every configured run on the global rayon pool.
pub fn run_simulation(config: &SimConfig) -> Result<MetricsLog> {
    Ok(Experiment::new(config.clone())?.run_all())
}

/// As [`run_simulation`] on a dedicated pool of `threads` workers
/// (0 picks the rayon default).
pub fn run_simulation_with(config: &SimConfig, threads: usize) -> Result<MetricsLog> {
    Experiment::new(config.clone())?.run_all_with(threads)
}
