//! Corpus-level graph statistics compared by 1-D earth mover's distance.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::graph::MaterialGraph;

use super::MetricError;

/// Distances beyond this land in a single overflow bin.
pub const DISTANCE_CAP: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StatKey {
    NodeCount,
    Components,
    LongestPath,
    /// Nodes of one operator type per graph.
    TypeCount(u32),
    /// Per node of a type: hops to the closest output marker.
    TypeDepth(u32),
    /// Per node of a type: number of connected input slots.
    TypeInputs(u32),
    /// Per graph containing both types: shortest directed path between them.
    PairDistance(u32, u32),
}

impl StatKey {
    fn capped(self) -> bool {
        matches!(self, StatKey::TypeDepth(_) | StatKey::PairDistance(..))
    }
}

/// Raw samples of every statistic, before binning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphCorpusStats {
    pub samples: BTreeMap<StatKey, Vec<u32>>,
    pub graphs: usize,
}

pub fn weak_components(g: &MaterialGraph) -> usize {
    let n = g.node_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in g.edges() {
        let (a, b) = (find(&mut parent, e.from.node), find(&mut parent, e.to.node));
        if a != b {
            parent[a] = b;
        }
    }
    (0..n).filter(|&x| find(&mut parent, x) == x).count()
}

/// Number of edges on the longest directed path.
pub fn longest_path(g: &MaterialGraph) -> u32 {
    let children = g.children_lists();
    let mut best = vec![0u32; g.node_count()];
    for &v in g.topological_order().iter().rev() {
        best[v] = children[v].iter().map(|&c| best[c] + 1).max().unwrap_or(0);
    }
    best.into_iter().max().unwrap_or(0)
}

fn bfs_from(children: &[Vec<usize>], start: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; children.len()];
    dist[start] = Some(0);
    let mut q = VecDeque::from([start]);
    while let Some(v) = q.pop_front() {
        let d = dist[v].expect("queued");
        for &c in &children[v] {
            if dist[c].is_none() {
                dist[c] = Some(d + 1);
                q.push_back(c);
            }
        }
    }
    dist
}

pub fn graph_statistics<'a>(corpus: impl IntoIterator<Item = &'a MaterialGraph>) -> GraphCorpusStats {
    let mut stats = GraphCorpusStats::default();
    let mut push = |k: StatKey, v: u32| stats.samples.entry(k).or_default().push(v);
    let mut graphs = 0;
    for g in corpus {
        graphs += 1;
        let n = g.node_count();
        push(StatKey::NodeCount, n as u32);
        push(StatKey::Components, weak_components(g) as u32);
        push(StatKey::LongestPath, longest_path(g));

        let num_types = g.library().len() as u32;
        let mut counts = vec![0u32; num_types as usize];
        for node in g.nodes() {
            counts[node.op.index()] += 1;
        }
        for (t, &c) in counts.iter().enumerate() {
            push(StatKey::TypeCount(t as u32), c);
        }

        // Distance to output: nodes with no path take the overflow bin.
        let mut depth = vec![None; n];
        let parents = g.parent_lists();
        let mut q = VecDeque::new();
        for id in 0..n {
            if g.schema(id).is_output_marker {
                depth[id] = Some(0u32);
                q.push_back(id);
            }
        }
        while let Some(v) = q.pop_front() {
            let d = depth[v].expect("queued");
            for &p in &parents[v] {
                if depth[p].is_none() {
                    depth[p] = Some(d + 1);
                    q.push_back(p);
                }
            }
        }
        for node in g.nodes() {
            let d = depth[node.id].unwrap_or(DISTANCE_CAP + 1).min(DISTANCE_CAP + 1);
            push(StatKey::TypeDepth(node.op.0), d);
            let connected = (0..g.schema(node.id).num_input_slots).filter(|&s| g.incoming_edge(node.id, s).is_some()).count();
            push(StatKey::TypeInputs(node.op.0), connected as u32);
        }

        let children = g.children_lists();
        let mut pair: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for a in 0..n {
            let dist = bfs_from(&children, a);
            let ta = g.nodes()[a].op.0;
            for b in 0..n {
                let tb = g.nodes()[b].op.0;
                let d = if a == b { None } else { dist[b] };
                let entry = pair.entry((ta, tb)).or_insert(DISTANCE_CAP + 1);
                if let Some(d) = d {
                    *entry = (*entry).min(d.min(DISTANCE_CAP + 1));
                }
            }
        }
        for ((a, b), d) in pair {
            push(StatKey::PairDistance(a, b), d);
        }
    }
    stats.graphs = graphs;
    stats
}

/// `Σ |cumulative difference| × bin_width` over histograms of equal length.
pub fn emd_1d(a: &[f64], b: &[f64], bin_width: f64) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::BinMismatch(a.len(), b.len()));
    }
    let mut carry = 0.0;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        carry += x - y;
        total += carry.abs();
    }
    Ok(total * bin_width)
}

/// Unit-width normalized histogram over `0..bins`; values at or above the
/// last bin fall into it. An empty sample becomes unit mass in the last bin.
pub fn histogram(samples: &[u32], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if samples.is_empty() {
        h[bins - 1] = 1.0;
        return h;
    }
    for &s in samples {
        h[(s as usize).min(bins - 1)] += 1.0;
    }
    let n = samples.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// EMD of one statistic between two corpora, with the axis rescaled to [0, 1].
pub fn stat_emd(key: StatKey, a: &[u32], b: &[u32]) -> f64 {
    let observed = a.iter().chain(b).copied().max().unwrap_or(0) as usize;
    let bins = if key.capped() { DISTANCE_CAP as usize + 2 } else { observed + 2 };
    let ha = histogram(a, bins);
    let hb = histogram(b, bins);
    emd_1d(&ha, &hb, 1.0 / bins as f64).expect("equal bins")
}

/// Mean EMD over every statistic present in either corpus.
pub fn graph_stat_emd(a: &GraphCorpusStats, b: &GraphCorpusStats) -> f64 {
    let keys: std::collections::BTreeSet<StatKey> = a.samples.keys().chain(b.samples.keys()).copied().collect();
    if keys.is_empty() {
        return 0.0;
    }
    let empty = Vec::new();
    let total: f64 = keys
        .iter()
        .map(|&k| stat_emd(k, a.samples.get(&k).unwrap_or(&empty), b.samples.get(&k).unwrap_or(&empty)))
        .sum();
    total / keys.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::Library;
    use proptest::prelude::*;

    fn build(names: &[&str], edges: &[(usize, usize, usize)]) -> MaterialGraph {
        let lib = Library::builtin();
        let mut g = MaterialGraph::new(lib.clone());
        for n in names {
            g.add_node(lib.by_name(n).unwrap(), vec![]).unwrap();
        }
        for &(a, b, slot) in edges {
            g.connect(a, 0, b, slot).unwrap();
        }
        g
    }

    #[test]
    fn single_node_and_chain() {
        let g = build(&["checker"], &[]);
        assert_eq!(weak_components(&g), 1);
        assert_eq!(longest_path(&g), 0);
        let c = build(&["checker", "invert", "output_height"], &[(0, 1, 0), (1, 2, 0)]);
        assert_eq!(longest_path(&c), 2);
    }

    /// Longest path by enumerating every simple directed path.
    fn brute_longest(g: &MaterialGraph) -> u32 {
        fn walk(ch: &[Vec<usize>], v: usize) -> u32 {
            ch[v].iter().map(|&c| 1 + walk(ch, c)).max().unwrap_or(0)
        }
        let ch = g.children_lists();
        (0..g.node_count()).map(|v| walk(&ch, v)).max().unwrap_or(0)
    }

    #[test]
    fn diamond() {
        let g = build(&["checker", "invert", "levels", "blend"], &[(0, 1, 0), (0, 2, 0), (1, 3, 0), (2, 3, 1)]);
        assert_eq!(longest_path(&g), 2);
        assert_eq!(longest_path(&g), brute_longest(&g));
        assert_eq!(weak_components(&g), 1);
    }

    #[test]
    fn emd_examples() {
        assert_eq!(emd_1d(&[0.2, 0.8], &[0.2, 0.8], 1.0).unwrap(), 0.0);
        assert_eq!(emd_1d(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), 1.0);
        assert!((emd_1d(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(emd_1d(&[1.0], &[0.5, 0.5], 1.0), Err(MetricError::BinMismatch(1, 2))));
    }

    #[test]
    fn corpus_against_itself_is_zero() {
        let gs = vec![
            build(&["checker", "invert", "output_height"], &[(0, 1, 0), (1, 2, 0)]),
            build(&["checker", "cell_noise", "blend"], &[(0, 2, 0), (1, 2, 1)]),
        ];
        let s = graph_statistics(&gs);
        assert_eq!(graph_stat_emd(&s, &s), 0.0);
        let other = graph_statistics(&gs[..1]);
        assert!(graph_stat_emd(&s, &other) > 0.0);
    }

    #[test]
    fn statistics_ignore_relabeling() {
        let g = build(&["checker", "cell_noise", "blend", "output_albedo"], &[(0, 2, 0), (1, 2, 1), (2, 3, 0)]);
        let r = g.relabeled(&[3, 1, 0, 2]);
        assert_eq!(graph_statistics([&g]), graph_statistics([&r]));
    }

    fn normalized(v: Vec<f64>) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn emd_is_a_metric(
            a in prop::collection::vec(0.01f64..1.0, 6),
            b in prop::collection::vec(0.01f64..1.0, 6),
            c in prop::collection::vec(0.01f64..1.0, 6),
        ) {
            let (a, b, c) = (normalized(a), normalized(b), normalized(c));
            let ab = emd_1d(&a, &b, 1.0).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - emd_1d(&b, &a, 1.0).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= emd_1d(&a, &c, 1.0).unwrap() + emd_1d(&c, &b, 1.0).unwrap() + 1e-12);
            prop_assert_eq!(emd_1d(&a, &a, 1.0).unwrap(), 0.0);
        }
    }
}
