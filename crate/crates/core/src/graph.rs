//! Material node graphs: a directed acyclic multigraph of operator instances.
//!
//! Node ids are assigned sequentially at insertion and double as indices into
//! the node list. Edges connect an output slot to an input slot; every input
//! slot holds at most one edge, and the edge set never contains a cycle.

use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::library::{Library, ParamSet};
use crate::schema::{OperatorSchema, OperatorType};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub param_index: usize,
    pub values: Vec<f64>,
}

impl ParamValue {
    pub fn new(param_index: usize, values: Vec<f64>) -> Self {
        Self { param_index, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub op: OperatorType,
    /// Non-default parameters only, strictly increasing `param_index`.
    pub params: Vec<ParamValue>,
}

impl Node {
    pub fn param(&self, k: usize) -> Option<&ParamValue> {
        self.params.iter().find(|p| p.param_index == k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotDirection {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotRef {
    pub node: NodeId,
    pub direction: SlotDirection,
    pub slot: usize,
}

impl SlotRef {
    pub fn output(node: NodeId, slot: usize) -> Self {
        Self { node, direction: SlotDirection::Output, slot }
    }

    pub fn input(node: NodeId, slot: usize) -> Self {
        Self { node, direction: SlotDirection::Input, slot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: SlotRef,
    pub to: SlotRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    /// Hops along edge direction to the nearest output marker.
    ToOutput,
    /// Hops against edge direction to the nearest generator.
    ToGenerator,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown operator type {0}")]
    UnknownOperator(u32),
    #[error("node {node}: parameter index {index} out of range")]
    ParamIndex { node: NodeId, index: usize },
    #[error("node {node}: duplicate parameter index {index}")]
    DuplicateParam { node: NodeId, index: usize },
    #[error("node {node}: {message}")]
    ParamValue { node: NodeId, message: String },
    #[error("slot {0:?} does not exist")]
    DanglingSlot(SlotRef),
    #[error("edge must run from an output slot to an input slot")]
    Direction,
    #[error("input slot {0:?} is already connected")]
    Occupied(SlotRef),
    #[error("edge {from:?} -> {to:?} would introduce a cycle")]
    Cycle { from: SlotRef, to: SlotRef },
    #[error("node ids must be sequential: expected {expected}, found {found}")]
    NodeId { expected: NodeId, found: NodeId },
}

#[derive(Debug, Clone)]
pub struct MaterialGraph {
    library: Arc<Library>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// `incoming[node][slot]` is the index of the edge feeding that input slot.
    incoming: Vec<Vec<Option<usize>>>,
}

impl PartialEq for MaterialGraph {
    fn eq(&self, other: &Self) -> bool {
        self.library.content_hash() == other.library.content_hash()
            && self.nodes == other.nodes
            && self.edge_set() == other.edge_set()
    }
}

impl MaterialGraph {
    pub fn new(library: Arc<Library>) -> Self {
        Self { library, nodes: Vec::new(), edges: Vec::new(), incoming: Vec::new() }
    }

    /// Builds a graph by replaying `add_node`/`add_edge` in order.
    pub fn from_parts(
        library: Arc<Library>,
        nodes: impl IntoIterator<Item = (OperatorType, Vec<ParamValue>)>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(library);
        for (op, params) in nodes {
            g.add_node(op, params)?;
        }
        for e in edges {
            g.add_edge(e.from, e.to)?;
        }
        Ok(g)
    }

    pub fn library(&self) -> &Arc<Library> {
        &self.library
    }

    pub fn library_ref(&self) -> &str {
        self.library.version()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Schema of a node that is known to exist.
    pub fn schema(&self, id: NodeId) -> &OperatorSchema {
        self.library.schema(self.nodes[id].op).expect("nodes only reference library operators")
    }

    /// Edges sorted into a canonical order, for structural comparison.
    pub fn edge_set(&self) -> Vec<Edge> {
        let mut e = self.edges.clone();
        e.sort();
        e
    }

    pub fn incoming_edge(&self, node: NodeId, slot: usize) -> Option<&Edge> {
        self.incoming.get(node)?.get(slot)?.map(|i| &self.edges[i])
    }

    /// Full parameter assignment with defaults filled in.
    pub fn param_set(&self, id: NodeId) -> ParamSet {
        let schema = self.schema(id);
        let mut values: Vec<Vec<f64>> = schema.params.iter().map(|p| p.default_value.clone()).collect();
        for pv in &self.nodes[id].params {
            values[pv.param_index] = pv.values.clone();
        }
        ParamSet::new(values)
    }

    /// Validates and normalizes a sparse parameter list against a schema:
    /// sorts by index and drops entries equal to the default.
    pub fn normalize_params(
        schema: &OperatorSchema,
        node: NodeId,
        mut params: Vec<ParamValue>,
    ) -> Result<Vec<ParamValue>, GraphError> {
        params.sort_by_key(|p| p.param_index);
        for w in params.windows(2) {
            if w[0].param_index == w[1].param_index {
                return Err(GraphError::DuplicateParam { node, index: w[0].param_index });
            }
        }
        for p in &params {
            let ps = schema
                .params
                .get(p.param_index)
                .ok_or(GraphError::ParamIndex { node, index: p.param_index })?;
            ps.check_values(&p.values).map_err(|message| GraphError::ParamValue { node, message })?;
        }
        params.retain(|p| p.values != schema.params[p.param_index].default_value);
        Ok(params)
    }

    pub fn add_node(&mut self, op: OperatorType, params: Vec<ParamValue>) -> Result<NodeId, GraphError> {
        let schema = self.library.schema(op).ok_or(GraphError::UnknownOperator(op.0))?;
        let id = self.nodes.len();
        let params = Self::normalize_params(schema, id, params)?;
        self.incoming.push(vec![None; schema.num_input_slots]);
        self.nodes.push(Node { id, op, params });
        Ok(id)
    }

    /// Replaces the parameters of an existing node.
    pub fn set_params(&mut self, id: NodeId, params: Vec<ParamValue>) -> Result<(), GraphError> {
        let schema = self.library.schema(self.nodes[id].op).ok_or(GraphError::UnknownOperator(self.nodes[id].op.0))?;
        self.nodes[id].params = Self::normalize_params(schema, id, params)?;
        Ok(())
    }

    fn check_slot(&self, s: SlotRef) -> Result<(), GraphError> {
        let node = self.nodes.get(s.node).ok_or(GraphError::DanglingSlot(s))?;
        let schema = self.library.schema(node.op).ok_or(GraphError::UnknownOperator(node.op.0))?;
        let count = match s.direction {
            SlotDirection::Input => schema.num_input_slots,
            SlotDirection::Output => schema.num_output_slots,
        };
        if s.slot >= count {
            return Err(GraphError::DanglingSlot(s));
        }
        Ok(())
    }

    /// Whether `target` can be reached from `start` along edge direction.
    pub fn reaches(&self, start: NodeId, target: NodeId) -> bool {
        if start == target {
            return true;
        }
        let children = self.children_lists();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(n) = stack.pop() {
            for &c in &children[n] {
                if c == target {
                    return true;
                }
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    pub fn add_edge(&mut self, from: SlotRef, to: SlotRef) -> Result<(), GraphError> {
        if from.direction != SlotDirection::Output || to.direction != SlotDirection::Input {
            return Err(GraphError::Direction);
        }
        self.check_slot(from)?;
        self.check_slot(to)?;
        if self.incoming[to.node][to.slot].is_some() {
            return Err(GraphError::Occupied(to));
        }
        if self.reaches(to.node, from.node) {
            return Err(GraphError::Cycle { from, to });
        }
        self.incoming[to.node][to.slot] = Some(self.edges.len());
        self.edges.push(Edge { from, to });
        Ok(())
    }

    /// Shorthand for an output-to-input edge.
    pub fn connect(&mut self, src: NodeId, out_slot: usize, dst: NodeId, in_slot: usize) -> Result<(), GraphError> {
        self.add_edge(SlotRef::output(src, out_slot), SlotRef::input(dst, in_slot))
    }

    /// Distinct child node ids per node, in edge insertion order.
    pub fn children_lists(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if !out[e.from.node].contains(&e.to.node) {
                out[e.from.node].push(e.to.node);
            }
        }
        out
    }

    /// Distinct parent node ids per node, in edge insertion order.
    pub fn parent_lists(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if !out[e.to.node].contains(&e.from.node) {
                out[e.to.node].push(e.from.node);
            }
        }
        out
    }

    /// Kahn's algorithm with the lowest ready node id first.
    pub fn topological_order(&self) -> Vec<NodeId> {
        let children = self.children_lists();
        let mut indegree = vec![0usize; self.nodes.len()];
        for list in &children {
            for &c in list {
                indegree[c] += 1;
            }
        }
        let mut ready: BinaryHeap<std::cmp::Reverse<NodeId>> =
            (0..self.nodes.len()).filter(|&n| indegree[n] == 0).map(std::cmp::Reverse).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(std::cmp::Reverse(n)) = ready.pop() {
            order.push(n);
            for &c in &children[n] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(std::cmp::Reverse(c));
                }
            }
        }
        debug_assert_eq!(order.len(), self.nodes.len(), "graph invariant: acyclic");
        order
    }

    /// Depth of every node; unreachable nodes get `max observed + 1`.
    pub fn depths(&self, mode: DepthMode) -> Vec<u32> {
        let n = self.nodes.len();
        let (adj, is_source): (Vec<Vec<NodeId>>, Box<dyn Fn(&OperatorSchema) -> bool>) = match mode {
            DepthMode::ToOutput => (self.parent_lists(), Box::new(|s: &OperatorSchema| s.is_output_marker)),
            DepthMode::ToGenerator => (self.children_lists(), Box::new(|s: &OperatorSchema| s.is_generator)),
        };
        let mut depth: Vec<Option<u32>> = vec![None; n];
        let mut queue = VecDeque::new();
        for id in 0..n {
            if is_source(self.schema(id)) {
                depth[id] = Some(0);
                queue.push_back(id);
            }
        }
        // Multi-source BFS: walking `adj` from the sources moves against the
        // direction in which depth is measured.
        while let Some(v) = queue.pop_front() {
            let d = depth[v].expect("queued nodes have a depth");
            for &u in &adj[v] {
                if depth[u].is_none() {
                    depth[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        let sentinel = depth.iter().flatten().copied().max().unwrap_or(0) + 1;
        depth.into_iter().map(|d| d.unwrap_or(sentinel)).collect()
    }

    pub fn node_depth(&self, id: NodeId, mode: DepthMode) -> u32 {
        self.depths(mode)[id]
    }

    /// Subgraph induced by `keep` (ascending id order preserved, ids compacted).
    /// Returns the graph and the old-to-new id map.
    pub fn induced_subgraph(&self, keep: &[NodeId]) -> (MaterialGraph, Vec<Option<NodeId>>) {
        let mut keep: Vec<NodeId> = keep.iter().copied().filter(|&k| k < self.nodes.len()).collect();
        keep.sort_unstable();
        keep.dedup();
        let mut map = vec![None; self.nodes.len()];
        let mut g = MaterialGraph::new(self.library.clone());
        for &old in &keep {
            let node = &self.nodes[old];
            let new = g.add_node(node.op, node.params.clone()).expect("existing node is valid");
            map[old] = Some(new);
        }
        for e in &self.edges {
            if let (Some(a), Some(b)) = (map[e.from.node], map[e.to.node]) {
                g.add_edge(SlotRef::output(a, e.from.slot), SlotRef::input(b, e.to.slot))
                    .expect("subgraph of a valid graph is valid");
            }
        }
        (g, map)
    }

    /// Reorders nodes so that `order[i]` becomes node `i`.
    pub fn relabeled(&self, order: &[NodeId]) -> MaterialGraph {
        let mut map = vec![0; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            map[old] = new;
        }
        let mut g = MaterialGraph::new(self.library.clone());
        for &old in order {
            let node = &self.nodes[old];
            g.add_node(node.op, node.params.clone()).expect("existing node is valid");
        }
        for e in &self.edges {
            g.add_edge(SlotRef::output(map[e.from.node], e.from.slot), SlotRef::input(map[e.to.node], e.to.slot))
                .expect("relabeling preserves validity");
        }
        g
    }
}

/// Checks every graph invariant from scratch, independent of the incremental
/// checks in `add_node`/`add_edge`.
pub fn validate(graph: &MaterialGraph) -> Result<(), GraphError> {
    let lib = graph.library();
    for (i, node) in graph.nodes().iter().enumerate() {
        if node.id != i {
            return Err(GraphError::NodeId { expected: i, found: node.id });
        }
        let schema = lib.schema(node.op).ok_or(GraphError::UnknownOperator(node.op.0))?;
        let mut last: Option<usize> = None;
        for p in &node.params {
            if last.is_some_and(|l| l >= p.param_index) {
                return Err(GraphError::DuplicateParam { node: i, index: p.param_index });
            }
            last = Some(p.param_index);
            let ps = schema.params.get(p.param_index).ok_or(GraphError::ParamIndex { node: i, index: p.param_index })?;
            ps.check_values(&p.values).map_err(|message| GraphError::ParamValue { node: i, message })?;
        }
    }
    let n = graph.node_count();
    let mut occupied = std::collections::HashSet::new();
    let mut adj = vec![Vec::new(); n];
    for e in graph.edges() {
        if e.from.direction != SlotDirection::Output || e.to.direction != SlotDirection::Input {
            return Err(GraphError::Direction);
        }
        for s in [e.from, e.to] {
            let node = graph.nodes().get(s.node).ok_or(GraphError::DanglingSlot(s))?;
            let schema = lib.schema(node.op).ok_or(GraphError::UnknownOperator(node.op.0))?;
            let count = if s.direction == SlotDirection::Input { schema.num_input_slots } else { schema.num_output_slots };
            if s.slot >= count {
                return Err(GraphError::DanglingSlot(s));
            }
        }
        if !occupied.insert((e.to.node, e.to.slot)) {
            return Err(GraphError::Occupied(e.to));
        }
        adj[e.from.node].push((e.to.node, *e));
    }
    // Iterative three-color DFS.
    let mut color = vec![0u8; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = 1;
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < adj[v].len() {
                let (w, e) = adj[v][*i];
                *i += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => return Err(GraphError::Cycle { from: e.from, to: e.to }),
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::MaterialChannel;

    fn lib() -> Arc<Library> {
        Library::builtin()
    }

    fn op(name: &str) -> OperatorType {
        lib().by_name(name).unwrap()
    }

    fn chain(names: &[&str]) -> MaterialGraph {
        let mut g = MaterialGraph::new(lib());
        for (i, n) in names.iter().enumerate() {
            g.add_node(op(n), vec![]).unwrap();
            if i > 0 {
                g.connect(i - 1, 0, i, 0).unwrap();
            }
        }
        g
    }

    #[test]
    fn add_node_allocates_sequential_ids() {
        let mut g = MaterialGraph::new(lib());
        assert_eq!(g.add_node(op("checker"), vec![]).unwrap(), 0);
        assert_eq!(g.add_node(op("invert"), vec![]).unwrap(), 1);
        assert_eq!(g.add_node(op("invert"), vec![]).unwrap(), 2);
    }

    #[test]
    fn add_node_rejects_bad_params() {
        let mut g = MaterialGraph::new(lib());
        let above_max = g.add_node(op("uniform_gray"), vec![ParamValue::new(0, vec![1.5])]);
        assert!(matches!(above_max, Err(GraphError::ParamValue { .. })));
        let bad_index = g.add_node(op("uniform_gray"), vec![ParamValue::new(3, vec![0.1])]);
        assert!(matches!(bad_index, Err(GraphError::ParamIndex { .. })));
        assert!(matches!(g.add_node(OperatorType(999), vec![]), Err(GraphError::UnknownOperator(999))));
        assert!(g.is_empty());
    }

    #[test]
    fn add_node_drops_default_entries() {
        let mut g = MaterialGraph::new(lib());
        let id = g.add_node(op("uniform_gray"), vec![ParamValue::new(0, vec![0.5])]).unwrap();
        assert!(g.node(id).unwrap().params.is_empty());
    }

    #[test]
    fn edge_errors() {
        let mut g = MaterialGraph::new(lib());
        g.add_node(op("invert"), vec![]).unwrap();
        g.add_node(op("invert"), vec![]).unwrap();
        g.connect(0, 0, 1, 0).unwrap();
        assert!(matches!(g.connect(1, 0, 0, 0), Err(GraphError::Cycle { .. })));
        g.add_node(op("checker"), vec![]).unwrap();
        assert!(matches!(g.connect(2, 0, 1, 0), Err(GraphError::Occupied(_))));
        assert_eq!(g.add_edge(SlotRef::input(0, 0), SlotRef::input(1, 0)), Err(GraphError::Direction));
        assert!(matches!(g.connect(2, 5, 0, 0), Err(GraphError::DanglingSlot(_))));
        assert!(matches!(g.connect(7, 0, 0, 0), Err(GraphError::DanglingSlot(_))));
        assert!(matches!(g.connect(0, 0, 0, 0), Err(GraphError::Cycle { .. })));
        validate(&g).unwrap();
    }

    #[test]
    fn chain_topological_order() {
        let g = chain(&["checker", "invert", "invert"]);
        assert_eq!(g.topological_order(), vec![0, 1, 2]);
    }

    #[test]
    fn disconnected_nodes_lowest_id_first() {
        let mut g = MaterialGraph::new(lib());
        g.add_node(op("checker"), vec![]).unwrap();
        g.add_node(op("checker"), vec![]).unwrap();
        assert_eq!(g.topological_order(), vec![0, 1]);
    }

    fn diamond() -> MaterialGraph {
        let mut g = MaterialGraph::new(lib());
        g.add_node(op("checker"), vec![]).unwrap(); // A
        g.add_node(op("invert"), vec![]).unwrap(); // B
        g.add_node(op("invert"), vec![]).unwrap(); // C
        g.add_node(op("blend"), vec![]).unwrap(); // D
        g.connect(0, 0, 1, 0).unwrap();
        g.connect(0, 0, 2, 0).unwrap();
        g.connect(1, 0, 3, 0).unwrap();
        g.connect(2, 0, 3, 1).unwrap();
        g
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn diamond_order_is_one_of_all_valid_orders() {
        let g = diamond();
        let valid: Vec<Vec<usize>> = permutations(4)
            .into_iter()
            .filter(|p| {
                let pos = |n: usize| p.iter().position(|&x| x == n).unwrap();
                g.edges().iter().all(|e| pos(e.from.node) < pos(e.to.node))
            })
            .collect();
        assert_eq!(valid.len(), 2);
        let order = g.topological_order();
        assert!(valid.contains(&order));
        assert_eq!(order[0], 0);
        assert_eq!(order[3], 3);
    }

    #[test]
    fn depths_on_chain() {
        let g = chain(&["checker", "invert", "invert", "output_height"]);
        assert_eq!(g.node_depth(3, DepthMode::ToOutput), 0);
        assert_eq!(g.node_depth(0, DepthMode::ToGenerator), 0);
        // BFS oracle: gen -> F1 -> F2 -> out, F1 is two hops from the output.
        assert_eq!(g.node_depth(1, DepthMode::ToOutput), 2);
        assert_eq!(g.depths(DepthMode::ToGenerator), vec![0, 1, 2, 3]);
    }

    #[test]
    fn unreachable_depth_uses_sentinel() {
        let mut g = chain(&["checker", "output_height"]);
        g.add_node(op("invert"), vec![]).unwrap();
        let d = g.depths(DepthMode::ToOutput);
        assert_eq!(d, vec![1, 0, 2]);
        let d = g.depths(DepthMode::ToGenerator);
        assert_eq!(d[2], 2);
    }

    #[test]
    fn multiple_output_markers_allowed() {
        let mut g = chain(&["checker", "output_height"]);
        let m = g.add_node(lib().output_marker(MaterialChannel::Roughness).unwrap(), vec![]).unwrap();
        g.connect(0, 0, m, 0).unwrap();
        validate(&g).unwrap();
    }

    #[test]
    fn induced_subgraph_keeps_mutual_edges() {
        let g = diamond();
        let (sub, map) = g.induced_subgraph(&[0, 2, 3]);
        assert_eq!(sub.node_count(), 3);
        assert_eq!(map, vec![Some(0), None, Some(1), Some(2)]);
        assert_eq!(sub.edge_count(), 2);
        validate(&sub).unwrap();
    }
}
