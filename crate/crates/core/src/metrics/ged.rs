//! Graph edit distance with unit node and edge insertion/deletion costs.
//!
//! Nodes may only be matched to nodes of the same operator type, at no cost.
//! Edges are labeled by their slots, so an edge is preserved only when both
//! endpoints map onto an edge between the same slots.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::graph::MaterialGraph;

/// Graphs up to this many nodes are solved exactly.
pub const EXACT_NODE_LIMIT: usize = 12;
const EXPANSION_LIMIT: usize = 2_000_000;
const BEAM_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GedResult {
    pub distance: u32,
    /// False when the distance is an upper bound from beam search.
    pub exact: bool,
}

type LabeledEdge = (usize, usize, usize, usize);

struct Problem {
    /// Node types of g1 in processing order, with original ids.
    order: Vec<usize>,
    types1: Vec<u32>,
    types2: Vec<u32>,
    edges1: Vec<LabeledEdge>,
    edges2: Vec<LabeledEdge>,
    set2: HashSet<LabeledEdge>,
    set1: HashSet<LabeledEdge>,
    /// For each g1 node, incident edges.
    inc1: Vec<Vec<usize>>,
    inc2: Vec<Vec<usize>>,
    num_types: usize,
}

#[derive(Clone, PartialEq, Eq)]
struct State {
    /// Image of g1 node `order[i]` for each processed i; `None` = deleted.
    map: Vec<Option<usize>>,
    used: Vec<bool>,
    cost: u32,
}

fn labeled(g: &MaterialGraph) -> Vec<LabeledEdge> {
    g.edges().iter().map(|e| (e.from.node, e.from.slot, e.to.node, e.to.slot)).collect()
}

impl Problem {
    fn new(g1: &MaterialGraph, g2: &MaterialGraph) -> Self {
        let edges1 = labeled(g1);
        let edges2 = labeled(g2);
        let incident = |n: usize, edges: &[LabeledEdge]| {
            let mut inc = vec![Vec::new(); n];
            for (i, e) in edges.iter().enumerate() {
                inc[e.0].push(i);
                inc[e.2].push(i);
            }
            inc
        };
        let inc1 = incident(g1.node_count(), &edges1);
        let inc2 = incident(g2.node_count(), &edges2);
        let mut order: Vec<usize> = (0..g1.node_count()).collect();
        order.sort_by_key(|&v| (Reverse(inc1[v].len()), v));
        let num_types = g1.library().len().max(g2.library().len());
        Problem {
            order,
            types1: g1.nodes().iter().map(|n| n.op.0).collect(),
            types2: g2.nodes().iter().map(|n| n.op.0).collect(),
            set1: edges1.iter().copied().collect(),
            set2: edges2.iter().copied().collect(),
            edges1,
            edges2,
            inc1,
            inc2,
            num_types,
        }
    }

    fn start(&self) -> State {
        // With nothing to map, the start is already complete: insert all of g2.
        let cost = if self.order.is_empty() { (self.types2.len() + self.edges2.len()) as u32 } else { 0 };
        State { map: Vec::new(), used: vec![false; self.types2.len()], cost }
    }

    fn image_of(&self, s: &State, pos_of: &[Option<usize>], v: usize) -> Option<Option<usize>> {
        pos_of[v].map(|i| s.map[i])
    }

    /// Extends `s` by mapping the next g1 node to `target`.
    fn extend(&self, s: &State, target: Option<usize>) -> State {
        let i = s.map.len();
        let v = self.order[i];
        let mut next = s.clone();
        next.map.push(target);
        if let Some(y) = target {
            next.used[y] = true;
        }
        let mut cost = s.cost + target.is_none() as u32;
        // Position of each processed g1 node in `order`.
        let mut pos_of = vec![None; self.types1.len()];
        for (k, &u) in self.order.iter().take(i + 1).enumerate() {
            pos_of[u] = Some(k);
        }
        for &ei in &self.inc1[v] {
            let (a, sa, b, sb) = self.edges1[ei];
            let (Some(ia), Some(ib)) = (self.image_of(&next, &pos_of, a), self.image_of(&next, &pos_of, b)) else {
                continue;
            };
            let preserved = matches!((ia, ib), (Some(x), Some(y)) if self.set2.contains(&(x, sa, y, sb)));
            cost += !preserved as u32;
        }
        if let Some(y) = target {
            // g2 edges between `y` and already used nodes with no g1 counterpart.
            let mut preimage = vec![None; self.types2.len()];
            for (k, m) in next.map.iter().enumerate() {
                if let Some(t) = m {
                    preimage[*t] = Some(self.order[k]);
                }
            }
            for &ei in &self.inc2[y] {
                let (a, sa, b, sb) = self.edges2[ei];
                let (Some(pa), Some(pb)) = (preimage[a], preimage[b]) else {
                    continue;
                };
                cost += !self.set1.contains(&(pa, sa, pb, sb)) as u32;
            }
        }
        next.cost = cost;
        if next.map.len() == self.order.len() {
            // Insert every unused g2 node and each g2 edge touching one.
            cost += next.used.iter().filter(|&&u| !u).count() as u32;
            cost += self.edges2.iter().filter(|e| !next.used[e.0] || !next.used[e.2]).count() as u32;
            next.cost = cost;
        }
        next
    }

    fn heuristic(&self, s: &State) -> u32 {
        let i = s.map.len();
        if i == self.order.len() {
            return 0;
        }
        let mut r1 = vec![0i32; self.num_types];
        let mut r2 = vec![0i32; self.num_types];
        let mut processed = vec![false; self.types1.len()];
        for &u in &self.order[..i] {
            processed[u] = true;
        }
        for &u in &self.order[i..] {
            r1[self.types1[u] as usize] += 1;
        }
        for (y, &used) in s.used.iter().enumerate() {
            if !used {
                r2[self.types2[y] as usize] += 1;
            }
        }
        let nodes: i32 = r1.iter().zip(&r2).map(|(a, b)| (a - b).abs()).sum();
        let e1 = self.edges1.iter().filter(|e| !processed[e.0] || !processed[e.2]).count() as i32;
        let e2 = self.edges2.iter().filter(|e| !s.used[e.0] || !s.used[e.2]).count() as i32;
        (nodes + (e1 - e2).abs()) as u32
    }

    fn successors(&self, s: &State) -> Vec<State> {
        let v = self.order[s.map.len()];
        let mut out = vec![self.extend(s, None)];
        for y in 0..self.types2.len() {
            if !s.used[y] && self.types2[y] == self.types1[v] {
                out.push(self.extend(s, Some(y)));
            }
        }
        out
    }

    fn astar(&self) -> Option<u32> {
        let mut heap: BinaryHeap<(Reverse<u32>, usize, usize)> = BinaryHeap::new();
        let mut states = vec![self.start()];
        heap.push((Reverse(self.heuristic(&states[0])), 0, 0));
        let mut expansions = 0;
        while let Some((Reverse(_), _, idx)) = heap.pop() {
            let s = states[idx].clone();
            if s.map.len() == self.order.len() {
                return Some(s.cost);
            }
            expansions += 1;
            if expansions > EXPANSION_LIMIT {
                return None;
            }
            for n in self.successors(&s) {
                let f = n.cost + self.heuristic(&n);
                let depth = n.map.len();
                states.push(n);
                heap.push((Reverse(f), depth, states.len() - 1));
            }
        }
        unreachable!("the deletion branch always reaches a goal")
    }

    fn beam(&self) -> u32 {
        let mut beam = vec![self.start()];
        for _ in 0..self.order.len() {
            let mut next: Vec<(u32, State)> =
                beam.iter().flat_map(|s| self.successors(s)).map(|n| (n.cost + self.heuristic(&n), n)).collect();
            next.sort_by_key(|(f, _)| *f);
            next.truncate(BEAM_WIDTH);
            beam = next.into_iter().map(|(_, s)| s).collect();
        }
        beam.iter().map(|s| s.cost).min().unwrap_or(0).min(self.trivial_bound())
    }

    /// Delete everything and insert everything.
    fn trivial_bound(&self) -> u32 {
        (self.types1.len() + self.types2.len() + self.edges1.len() + self.edges2.len()) as u32
    }
}

pub fn graph_edit_distance(g1: &MaterialGraph, g2: &MaterialGraph) -> GedResult {
    if g1.node_count() == 0 && g2.node_count() == 0 {
        return GedResult { distance: 0, exact: true };
    }
    // Search over the smaller graph's nodes.
    let (a, b) = if g1.node_count() <= g2.node_count() { (g1, g2) } else { (g2, g1) };
    let p = Problem::new(a, b);
    if a.node_count().max(b.node_count()) <= EXACT_NODE_LIMIT {
        if let Some(d) = p.astar() {
            return GedResult { distance: d, exact: true };
        }
    }
    GedResult { distance: p.beam(), exact: false }
}
