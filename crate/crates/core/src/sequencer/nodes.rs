use crate::graph::{MaterialGraph, NodeId};
use crate::schema::OperatorType;

use super::{clamp_depth, SequenceError, Vocab, MAX_NODES};

/// Operator types with depths and positions, framed by start and stop tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeSequence {
    pub types: Vec<u32>,
    pub depths: Vec<u32>,
    pub positions: Vec<u32>,
}

impl NodeSequence {
    /// A sequence holding only the start token.
    pub fn start(vocab: &Vocab) -> Self {
        NodeSequence { types: vec![vocab.type_alpha()], depths: vec![0], positions: vec![1] }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn push(&mut self, ty: u32, depth: u32) {
        self.types.push(ty);
        self.depths.push(clamp_depth(depth));
        self.positions.push(self.positions.len() as u32 + 1);
    }

    /// Number of node tokens, excluding start and stop.
    pub fn node_count(&self, vocab: &Vocab) -> usize {
        self.types.iter().filter(|&&t| t < vocab.type_alpha()).count()
    }

    pub fn is_closed(&self, vocab: &Vocab) -> bool {
        self.types.last() == Some(&vocab.type_omega())
    }
}

/// `depths` is indexed by original node id.
pub fn encode_nodes(
    graph: &MaterialGraph,
    order: &[NodeId],
    depths: &[u32],
    vocab: &Vocab,
) -> Result<NodeSequence, SequenceError> {
    if order.len() > MAX_NODES {
        return Err(SequenceError::Overflow { what: "node", len: order.len(), max: MAX_NODES });
    }
    let mut seq = NodeSequence::start(vocab);
    for &id in order {
        seq.push(graph.nodes()[id].op.0, depths[id]);
    }
    seq.push(vocab.type_omega(), 0);
    Ok(seq)
}

/// Operator types of the interior tokens, up to the first stop token.
pub fn decode_nodes(seq: &NodeSequence, vocab: &Vocab) -> Result<Vec<OperatorType>, SequenceError> {
    if seq.types.first() != Some(&vocab.type_alpha()) {
        return Err(SequenceError::Decode("node sequence must begin with the start token".into()));
    }
    let mut out = Vec::new();
    for &t in &seq.types[1..] {
        if t == vocab.type_omega() {
            return Ok(out);
        }
        if t >= vocab.type_alpha() {
            return Err(SequenceError::Decode(format!("token {t} is not an operator type")));
        }
        out.push(OperatorType(t));
    }
    Ok(out)
}
