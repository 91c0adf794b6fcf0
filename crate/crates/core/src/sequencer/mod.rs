//! Codec between material graphs and the token sequences of the three
//! generation stages.

mod edges;
mod nodes;
pub mod ordering;
mod params;
pub mod quantize;

use std::sync::Arc;

pub use edges::{decode_edges, edge_sort_key, encode_edges, EdgeBuilder, EdgeSequence, SlotSequence};
pub use nodes::{decode_nodes, encode_nodes, NodeSequence};
pub use ordering::{order_nodes, NodeOrdering};
pub use params::{decode_params, encode_params, value_range, ParamCursor, ParamSequence};
pub use quantize::{QuantKey, Quantizer, LEVELS};

use crate::graph::{Edge, GraphError, MaterialGraph, NodeId, ParamValue};
use crate::library::Library;
use crate::schema::OperatorType;

pub const MAX_NODES: usize = 400;
pub const MAX_PARAM_TOKENS: usize = 512;
pub const MAX_EDGES: usize = 700;
pub const MAX_SLOTS: usize = 800;
/// Depth tokens are `0..DEPTH_VOCAB`; larger depths are clamped.
pub const DEPTH_VOCAB: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SequenceError {
    #[error("{what} sequence holds {len} entries, limit is {max}")]
    Overflow { what: &'static str, len: usize, max: usize },
    #[error("no quantizer bounds for {0:?}")]
    UnknownKey(QuantKey),
    #[error("decode: {0}")]
    Decode(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Token vocabularies derived from a library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub num_types: usize,
    /// Value tokens before the special tokens: max(levels, widest discrete range).
    pub value_tokens: usize,
    /// Largest parameter count of any operator.
    pub max_params: usize,
    /// Largest slot count (inputs + outputs) of any operator.
    pub max_node_slots: usize,
}

impl Vocab {
    pub fn for_library(library: &Library) -> Self {
        let widest = library.schemas().flat_map(|s| &s.params).filter(|p| p.is_discrete).map(|p| p.discrete_range()).max();
        Vocab {
            num_types: library.len(),
            value_tokens: widest.unwrap_or(0).max(LEVELS),
            max_params: library.schemas().map(|s| s.params.len()).max().unwrap_or(0).max(1),
            max_node_slots: library.schemas().map(|s| s.num_slots()).max().unwrap_or(0).max(1),
        }
    }

    pub fn type_alpha(&self) -> u32 {
        self.num_types as u32
    }

    pub fn type_omega(&self) -> u32 {
        self.num_types as u32 + 1
    }

    pub fn type_size(&self) -> usize {
        self.num_types + 2
    }

    pub fn value_alpha(&self) -> u32 {
        self.value_tokens as u32
    }

    pub fn value_omega(&self) -> u32 {
        self.value_tokens as u32 + 1
    }

    pub fn value_size(&self) -> usize {
        self.value_tokens + 2
    }

    pub fn slot_alpha(&self) -> u32 {
        MAX_SLOTS as u32
    }

    pub fn slot_omega(&self) -> u32 {
        MAX_SLOTS as u32 + 1
    }
}

pub fn clamp_depth(d: u32) -> u32 {
    d.min(DEPTH_VOCAB as u32 - 1)
}

/// All sequences describing one graph under one node ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedGraph {
    pub ordering: NodeOrdering,
    /// `order[i]` is the original id of the node at sequence position `i`.
    pub order: Vec<NodeId>,
    pub nodes: NodeSequence,
    pub params: Vec<ParamSequence>,
    pub slots: SlotSequence,
    pub edges: EdgeSequence,
}

/// Library and quantizer needed to move between graphs and tokens.
#[derive(Debug, Clone)]
pub struct Codec {
    pub library: Arc<Library>,
    pub quantizer: Quantizer,
    pub vocab: Vocab,
}

impl Codec {
    pub fn new(library: Arc<Library>, quantizer: Quantizer) -> Self {
        let vocab = Vocab::for_library(&library);
        Codec { library, quantizer, vocab }
    }

    pub fn encode(&self, graph: &MaterialGraph, ordering: NodeOrdering, seed: u64) -> Result<TokenizedGraph, SequenceError> {
        let order = order_nodes(graph, ordering, seed);
        self.encode_with_order(graph, ordering, order, None)
    }

    /// Encodes with an explicit node order. `depths`, indexed by original
    /// node id, overrides the depths computed from the graph.
    pub fn encode_with_order(
        &self,
        graph: &MaterialGraph,
        ordering: NodeOrdering,
        order: Vec<NodeId>,
        depths: Option<&[u32]>,
    ) -> Result<TokenizedGraph, SequenceError> {
        let computed;
        let depths = match depths {
            Some(d) => d,
            None => {
                computed = graph.depths(ordering.depth_mode());
                &computed
            }
        };
        let nodes = encode_nodes(graph, &order, depths, &self.vocab)?;
        let params = order
            .iter()
            .map(|&id| encode_params(graph, id, &self.quantizer, &self.vocab))
            .collect::<Result<Vec<_>, _>>()?;
        let ordered_depths: Vec<u32> = order.iter().map(|&id| clamp_depth(depths[id])).collect();
        let (slots, edges) = encode_edges(graph, &order, &ordered_depths, &self.vocab)?;
        Ok(TokenizedGraph { ordering, order, nodes, params, slots, edges })
    }

    /// Rebuilds a graph whose node `i` is the node at sequence position `i`.
    pub fn decode(&self, tokens: &TokenizedGraph) -> Result<MaterialGraph, SequenceError> {
        let types = decode_nodes(&tokens.nodes, &self.vocab)?;
        if tokens.params.len() != types.len() {
            return Err(SequenceError::Decode(format!(
                "{} parameter sequences for {} nodes",
                tokens.params.len(),
                types.len()
            )));
        }
        let params = types
            .iter()
            .zip(&tokens.params)
            .map(|(&op, seq)| self.decode_node_params(op, seq))
            .collect::<Result<Vec<_>, _>>()?;
        let edges = decode_edges(&tokens.slots, &tokens.edges, &self.vocab)?;
        self.assemble(&types, params, &edges)
    }

    pub fn decode_node_params(&self, op: OperatorType, seq: &ParamSequence) -> Result<Vec<ParamValue>, SequenceError> {
        let schema = self.library.schema(op).ok_or(SequenceError::Graph(GraphError::UnknownOperator(op.0)))?;
        let interior = seq.interior_pairs(&self.vocab);
        decode_params(schema, &interior, &self.quantizer)
    }

    pub fn assemble(
        &self,
        types: &[OperatorType],
        params: Vec<Vec<ParamValue>>,
        edges: &[Edge],
    ) -> Result<MaterialGraph, SequenceError> {
        Ok(MaterialGraph::from_parts(self.library.clone(), types.iter().copied().zip(params), edges.iter().copied())?)
    }
}
