use crate::graph::{Edge, MaterialGraph, NodeId, SlotDirection, SlotRef};
use crate::library::Library;
use crate::schema::OperatorType;

use super::{clamp_depth, SequenceError, Vocab, MAX_EDGES, MAX_SLOTS};

/// One entry per slot: nodes in sequence order, inputs before outputs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotSequence {
    pub types: Vec<u32>,
    /// Sequence position of the owning node.
    pub nodes: Vec<u32>,
    pub depths: Vec<u32>,
    /// Index of the slot within its node's inputs-then-outputs list.
    pub kinds: Vec<u32>,
    pub positions: Vec<u32>,
    /// Slot references with node ids given as sequence positions.
    pub refs: Vec<SlotRef>,
}

impl SlotSequence {
    /// Builds the slot list for nodes `types` (in sequence order) with their depths.
    pub fn build(library: &Library, types: &[OperatorType], depths: &[u32]) -> Result<Self, SequenceError> {
        let mut s = SlotSequence::default();
        for (j, (&op, &d)) in types.iter().zip(depths).enumerate() {
            let schema = library.schema(op).ok_or(SequenceError::Decode(format!("unknown operator {}", op.0)))?;
            let slots = (0..schema.num_input_slots)
                .map(|k| SlotRef::input(j, k))
                .chain((0..schema.num_output_slots).map(|k| SlotRef::output(j, k)));
            for (k, r) in slots.enumerate() {
                s.types.push(op.0);
                s.nodes.push(j as u32);
                s.depths.push(clamp_depth(d));
                s.kinds.push(k as u32);
                s.positions.push(s.refs.len() as u32);
                s.refs.push(r);
            }
        }
        if s.len() > MAX_SLOTS {
            return Err(SequenceError::Overflow { what: "slot", len: s.len(), max: MAX_SLOTS });
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Global index of a slot, given its node's sequence position.
    pub fn index_of(&self, r: SlotRef) -> Option<usize> {
        self.refs.iter().position(|&x| x == r)
    }
}

/// Slot-index pairs framed by start and stop tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeSequence {
    pub slots: Vec<u32>,
    pub positions: Vec<u32>,
    /// 0 at start/stop, then alternating 1 (source) and 2 (destination).
    pub tuple: Vec<u32>,
}

impl EdgeSequence {
    pub fn start(vocab: &Vocab) -> Self {
        EdgeSequence { slots: vec![vocab.slot_alpha()], positions: vec![1], tuple: vec![0] }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Tuple index the next token will carry.
    pub fn next_tuple(&self) -> u32 {
        if self.slots.len() % 2 == 1 {
            1
        } else {
            2
        }
    }

    pub fn push(&mut self, slot: u32) {
        let t = self.next_tuple();
        self.slots.push(slot);
        self.positions.push(self.positions.len() as u32 + 1);
        self.tuple.push(t);
    }

    pub fn close(&mut self, vocab: &Vocab) {
        self.slots.push(vocab.slot_omega());
        self.positions.push(self.positions.len() as u32 + 1);
        self.tuple.push(0);
    }

    pub fn is_closed(&self, vocab: &Vocab) -> bool {
        self.slots.last() == Some(&vocab.slot_omega())
    }
}

/// Order in which edges are emitted: by the later of the two endpoint
/// nodes, then destination slot, then source slot. Edges among any prefix
/// of the node sequence therefore form a prefix of the edge sequence.
pub fn edge_sort_key(src_pos: usize, src_slot: usize, dst_pos: usize, dst_slot: usize) -> (usize, usize, usize) {
    (src_pos.max(dst_pos), dst_slot, src_slot)
}

pub fn encode_edges(
    graph: &MaterialGraph,
    order: &[NodeId],
    ordered_depths: &[u32],
    vocab: &Vocab,
) -> Result<(SlotSequence, EdgeSequence), SequenceError> {
    let types: Vec<OperatorType> = order.iter().map(|&id| graph.nodes()[id].op).collect();
    let slots = SlotSequence::build(graph.library(), &types, ordered_depths)?;
    if graph.edge_count() > MAX_EDGES {
        return Err(SequenceError::Overflow { what: "edge", len: graph.edge_count(), max: MAX_EDGES });
    }
    let mut pos = vec![0usize; graph.node_count()];
    for (j, &id) in order.iter().enumerate() {
        pos[id] = j;
    }
    let mut offsets = Vec::with_capacity(order.len());
    let mut acc = 0;
    for &id in order {
        offsets.push(acc);
        acc += graph.schema(id).num_slots();
    }
    let mut pairs: Vec<(usize, usize, usize, usize)> = graph
        .edges()
        .iter()
        .map(|e| {
            let (ps, pd) = (pos[e.from.node], pos[e.to.node]);
            let src = offsets[ps] + graph.schema(e.from.node).num_input_slots + e.from.slot;
            let dst = offsets[pd] + e.to.slot;
            (ps, src, pd, dst)
        })
        .collect();
    pairs.sort_by_key(|&(ps, src, pd, dst)| edge_sort_key(ps, src, pd, dst));
    let mut seq = EdgeSequence::start(vocab);
    for (_, src, _, dst) in pairs {
        seq.push(src as u32);
        seq.push(dst as u32);
    }
    seq.close(vocab);
    Ok((slots, seq))
}

/// Edges from the interior of an edge sequence, with node ids as sequence positions.
pub fn decode_edges(slots: &SlotSequence, edges: &EdgeSequence, vocab: &Vocab) -> Result<Vec<Edge>, SequenceError> {
    if edges.slots.first() != Some(&vocab.slot_alpha()) {
        return Err(SequenceError::Decode("edge sequence must begin with the start token".into()));
    }
    let interior: Vec<u32> = edges.slots[1..].iter().copied().take_while(|&t| t != vocab.slot_omega()).collect();
    if interior.len() % 2 != 0 {
        return Err(SequenceError::Decode(format!("odd edge sequence length {}", interior.len())));
    }
    let lookup = |t: u32, dir: SlotDirection| -> Result<SlotRef, SequenceError> {
        let r = slots
            .refs
            .get(t as usize)
            .copied()
            .ok_or_else(|| SequenceError::Decode(format!("slot index {t} out of range ({} slots)", slots.len())))?;
        if r.direction != dir {
            return Err(SequenceError::Decode(format!("slot index {t} is not an {dir:?} slot")));
        }
        Ok(r)
    };
    interior
        .chunks(2)
        .map(|pair| Ok(Edge { from: lookup(pair[0], SlotDirection::Output)?, to: lookup(pair[1], SlotDirection::Input)? }))
        .collect()
}

/// Incremental edge-set state that yields the legal next slot indices.
///
/// Sources must be output slots with at least one admissible destination;
/// destinations must be free input slots on nodes that cannot reach the
/// source node.
#[derive(Debug, Clone)]
pub struct EdgeBuilder {
    refs: Vec<SlotRef>,
    occupied: Vec<bool>,
    /// Bitset per node of the nodes reachable from it, itself included.
    reach: Vec<Vec<u64>>,
    free_inputs: Vec<usize>,
    pending: Option<usize>,
    edges: usize,
    /// Nodes at positions below this may not gain edges among themselves.
    frozen: usize,
}

impl EdgeBuilder {
    pub fn new(slots: &SlotSequence) -> Self {
        let n = slots.refs.iter().map(|r| r.node + 1).max().unwrap_or(0);
        let words = n.div_ceil(64).max(1);
        let mut reach = vec![vec![0u64; words]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i / 64] |= 1 << (i % 64);
        }
        let mut free_inputs = vec![0; n];
        for r in &slots.refs {
            if r.direction == SlotDirection::Input {
                free_inputs[r.node] += 1;
            }
        }
        EdgeBuilder { refs: slots.refs.clone(), occupied: vec![false; slots.len()], reach, free_inputs, pending: None, edges: 0, frozen: 0 }
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        self.reach[from][to / 64] >> (to % 64) & 1 == 1
    }

    /// Forbids further edges whose endpoints both lie among the first `nodes` nodes.
    pub fn freeze_prefix(&mut self, nodes: usize) {
        self.frozen = nodes;
    }

    fn both_frozen(&self, a: usize, b: usize) -> bool {
        a < self.frozen && b < self.frozen
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    /// Stopping is legal only between complete edges.
    pub fn can_stop(&self) -> bool {
        self.pending.is_none()
    }

    fn has_target(&self, src_node: usize) -> bool {
        (0..self.free_inputs.len())
            .any(|t| self.free_inputs[t] > 0 && !self.reaches(t, src_node) && !self.both_frozen(t, src_node))
    }

    pub fn mask(&self) -> Vec<bool> {
        match self.pending {
            None => {
                if self.edges >= MAX_EDGES {
                    return vec![false; self.refs.len()];
                }
                let n = self.free_inputs.len();
                let ok: Vec<bool> = (0..n).map(|s| self.has_target(s)).collect();
                self.refs.iter().map(|r| r.direction == SlotDirection::Output && ok[r.node]).collect()
            }
            Some(src) => {
                let s = self.refs[src].node;
                self.refs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        r.direction == SlotDirection::Input
                            && !self.occupied[i]
                            && !self.reaches(r.node, s)
                            && !self.both_frozen(r.node, s)
                    })
                    .collect()
            }
        }
    }

    pub fn push(&mut self, idx: usize) -> Result<(), SequenceError> {
        if !self.mask().get(idx).copied().unwrap_or(false) {
            return Err(SequenceError::Decode(format!("slot index {idx} is not legal here")));
        }
        match self.pending.take() {
            None => self.pending = Some(idx),
            Some(src) => {
                let s = self.refs[src].node;
                let t = self.refs[idx].node;
                self.occupied[idx] = true;
                self.free_inputs[t] -= 1;
                let add = self.reach[t].clone();
                for x in 0..self.reach.len() {
                    if self.reaches(x, s) {
                        for (w, a) in self.reach[x].iter_mut().zip(&add) {
                            *w |= a;
                        }
                    }
                }
                self.edges += 1;
            }
        }
        Ok(())
    }
}
