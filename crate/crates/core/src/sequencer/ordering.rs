//! Linearizations of a graph's nodes.

use std::collections::VecDeque;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{DepthMode, MaterialGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeOrdering {
    /// Back-to-front breadth-first from the output markers.
    #[serde(rename = "r")]
    BackToFront,
    /// `BackToFront` reversed.
    #[serde(rename = "rr")]
    BackToFrontReversed,
    /// Front-to-back breadth-first from the root nodes.
    #[serde(rename = "b")]
    FrontToBack,
    /// Random valid topological order.
    #[serde(rename = "t")]
    RandomTopological,
}

impl NodeOrdering {
    pub const ALL: [NodeOrdering; 4] = [
        NodeOrdering::BackToFront,
        NodeOrdering::BackToFrontReversed,
        NodeOrdering::FrontToBack,
        NodeOrdering::RandomTopological,
    ];

    pub fn code(self) -> &'static str {
        match self {
            NodeOrdering::BackToFront => "r",
            NodeOrdering::BackToFrontReversed => "rr",
            NodeOrdering::FrontToBack => "b",
            NodeOrdering::RandomTopological => "t",
        }
    }

    /// Depth convention paired with the ordering.
    pub fn depth_mode(self) -> DepthMode {
        match self {
            NodeOrdering::BackToFront => DepthMode::ToOutput,
            _ => DepthMode::ToGenerator,
        }
    }

    /// Orderings whose prefixes are closed under parents, usable for completion.
    pub fn is_front_to_back(self) -> bool {
        matches!(self, NodeOrdering::BackToFrontReversed | NodeOrdering::FrontToBack | NodeOrdering::RandomTopological)
    }
}

impl FromStr for NodeOrdering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeOrdering::ALL
            .into_iter()
            .find(|o| o.code() == s)
            .ok_or_else(|| format!("unknown ordering `{s}` (expected r, rr, b or t)"))
    }
}

impl std::fmt::Display for NodeOrdering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

pub fn order_nodes(graph: &MaterialGraph, ordering: NodeOrdering, seed: u64) -> Vec<NodeId> {
    match ordering {
        NodeOrdering::BackToFront => back_to_front(graph),
        NodeOrdering::BackToFrontReversed => {
            let mut order = back_to_front(graph);
            order.reverse();
            order
        }
        NodeOrdering::FrontToBack => front_to_back(graph, &mut ChaCha8Rng::seed_from_u64(seed)),
        NodeOrdering::RandomTopological => random_topological(graph, &mut ChaCha8Rng::seed_from_u64(seed)),
    }
}

fn back_to_front(graph: &MaterialGraph) -> Vec<NodeId> {
    let n = graph.node_count();
    let children = graph.children_lists();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue: VecDeque<NodeId> = VecDeque::new();
    for id in 0..n {
        if graph.schema(id).is_output_marker {
            visited[id] = true;
            queue.push_back(id);
        }
    }
    loop {
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for slot in 0..graph.schema(v).num_input_slots {
                if let Some(e) = graph.incoming_edge(v, slot) {
                    let p = e.from.node;
                    if !visited[p] {
                        visited[p] = true;
                        queue.push_back(p);
                    }
                }
            }
        }
        // Nodes that feed no output marker: restart from the lowest-id sink.
        match (0..n).find(|&id| !visited[id] && children[id].is_empty()) {
            Some(s) => {
                visited[s] = true;
                queue.push_back(s);
            }
            None => break,
        }
    }
    debug_assert_eq!(order.len(), n);
    order
}

fn front_to_back(graph: &MaterialGraph, rng: &mut impl Rng) -> Vec<NodeId> {
    let n = graph.node_count();
    let mut indegree = vec![0usize; n];
    for e in graph.edges() {
        indegree[e.to.node] += 1;
    }
    // Children grouped by the output slot they hang off.
    let mut by_slot: Vec<Vec<Vec<NodeId>>> =
        (0..n).map(|id| vec![Vec::new(); graph.schema(id).num_output_slots]).collect();
    for e in graph.edges() {
        by_slot[e.from.node][e.from.slot].push(e.to.node);
    }
    let mut visited = vec![false; n];
    let mut queue: VecDeque<NodeId> = VecDeque::new();
    for id in 0..n {
        if indegree[id] == 0 {
            visited[id] = true;
            queue.push_back(id);
        }
    }
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for slot_children in &by_slot[v] {
            let mut kids = slot_children.clone();
            kids.sort_unstable();
            kids.dedup();
            kids.shuffle(rng);
            for c in kids {
                if !visited[c] {
                    visited[c] = true;
                    queue.push_back(c);
                }
            }
        }
    }
    debug_assert_eq!(order.len(), n);
    order
}

fn random_topological(graph: &MaterialGraph, rng: &mut impl Rng) -> Vec<NodeId> {
    let n = graph.node_count();
    let children = graph.children_lists();
    let mut indegree = vec![0usize; n];
    for list in &children {
        for &c in list {
            indegree[c] += 1;
        }
    }
    let mut ready: Vec<NodeId> = (0..n).filter(|&id| indegree[id] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let v = ready.swap_remove(rng.random_range(0..ready.len()));
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::Library;

    fn chain() -> MaterialGraph {
        let lib = Library::builtin();
        let mut g = MaterialGraph::new(lib.clone());
        let gen = g.add_node(lib.by_name("checker").unwrap(), vec![]).unwrap();
        let f = g.add_node(lib.by_name("invert").unwrap(), vec![]).unwrap();
        let out = g.add_node(lib.by_name("output_height").unwrap(), vec![]).unwrap();
        g.connect(gen, 0, f, 0).unwrap();
        g.connect(f, 0, out, 0).unwrap();
        g
    }

    #[test]
    fn chain_orders() {
        let g = chain();
        assert_eq!(order_nodes(&g, NodeOrdering::BackToFront, 0), vec![2, 1, 0]);
        assert_eq!(order_nodes(&g, NodeOrdering::BackToFrontReversed, 0), vec![0, 1, 2]);
        for seed in 0..5 {
            assert_eq!(order_nodes(&g, NodeOrdering::RandomTopological, seed), vec![0, 1, 2]);
            assert_eq!(order_nodes(&g, NodeOrdering::FrontToBack, seed), vec![0, 1, 2]);
        }
    }

    #[test]
    fn back_to_front_visits_parents_by_input_slot() {
        let lib = Library::builtin();
        let mut g = MaterialGraph::new(lib.clone());
        let a = g.add_node(lib.by_name("checker").unwrap(), vec![]).unwrap();
        let b = g.add_node(lib.by_name("cell_noise").unwrap(), vec![]).unwrap();
        let blend = g.add_node(lib.by_name("blend").unwrap(), vec![]).unwrap();
        let out = g.add_node(lib.by_name("output_albedo").unwrap(), vec![]).unwrap();
        let stray = g.add_node(lib.by_name("invert").unwrap(), vec![]).unwrap();
        g.connect(b, 0, blend, 0).unwrap();
        g.connect(a, 0, blend, 1).unwrap();
        g.connect(blend, 0, out, 0).unwrap();
        g.connect(a, 0, stray, 0).unwrap();
        assert_eq!(order_nodes(&g, NodeOrdering::BackToFront, 0), vec![out, blend, b, a, stray]);
    }

    #[test]
    fn parses_codes() {
        for o in NodeOrdering::ALL {
            assert_eq!(o.code().parse::<NodeOrdering>().unwrap(), o);
        }
        assert!("x".parse::<NodeOrdering>().is_err());
    }
}
