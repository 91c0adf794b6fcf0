//! The three generation stages (nodes, parameters, edges): models, teacher
//! forced training, validity-masked sampling and prefix-conditioned completion.

pub mod bundle;
pub mod edges;
pub mod model;
pub mod nodes;
pub mod params;
pub mod sample;
pub mod train;

use std::fmt;
use std::str::FromStr;

use matformer_core::sequencer::SequenceError;
use matformer_core::GraphError;
use matformer_nn::NnError;
use serde::{Deserialize, Serialize};

pub use bundle::{Models, BUNDLE_MANIFEST};
pub use model::{ModelConfig, StageMeta, StageModel};
pub use sample::{
    autocomplete, complete, generate_graph, masked_distribution, pinned_order, reproduces, sample_edges, sample_nodes,
    sample_params, CompletionRequest, Generated, Prefix, SamplerConfig,
};
pub use train::{EpochLog, TrainConfig, TrainState, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("generated graph failed validation: {0}")]
    Assembly(String),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Nodes,
    Params,
    Edges,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Nodes, Stage::Params, Stage::Edges];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Nodes => "nodes",
            Stage::Params => "params",
            Stage::Edges => "edges",
        }
    }

    /// Batch size used when none is given.
    pub fn default_batch_size(self) -> usize {
        match self {
            Stage::Edges => 16,
            _ => 64,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected nodes, params or edges)"))
    }
}
