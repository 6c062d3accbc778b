//! Deterministic simulator for fully decentralized federated learning.
//!
//! Nodes on an undirected graph each train a small MLP on a private,
//! label-skewed slice of a dataset and periodically combine their models
//! with their neighbors'. The crate provides the graph generators, the
//! data partitioner, the network and its training loop, the combination
//! rules and the round engine that ties them together.
//!
//! ```
//! use dflsim::{run_simulation, SimConfig};
//!
//! let config = SimConfig::from_json(r#"{
//!     "topology": {"kind": "erdos_renyi", "n": 4, "p": 0.8, "seed": 1},
//!     "dataset": {"synthetic": {"n_per_class": 20, "test_per_class": 5,
//!                  "num_classes": 2, "feature_dim": 3, "spread": 0.1}},
//!     "strategy": {"kind": ["Isolation", "DecDiffVT"]},
//!     "training": {"hidden": [4], "eta": 0.1},
//!     "run": {"rounds": 2, "replicas": 1}
//! }"#).unwrap();
//! let log = run_simulation(&config).unwrap();
//! assert_eq!(log.records.len(), 2 * 3 * 4);
//! ```

pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod json;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod rng;
pub mod simulator;
pub mod strategies;

pub use config::SimConfig;
pub use data::{Allocation, LabeledDataset};
pub use error::{Error, Result};
pub use graph::Topology;
pub use metrics::{summarize, RoundRecord, Summary};
pub use nn::Mlp;
pub use params::ParamVector;
pub use simulator::{run_simulation, run_simulation_with, Experiment, MetricsLog, Run};
pub use strategies::{StrategyConfig, StrategyKind};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/topologies.md")]
mod book_topologies {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/allocation.md")]
mod book_allocation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/aggregation.md")]
mod book_aggregation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/simulator.md")]
mod book_simulator {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
