use std::collections::BTreeSet;
use std::sync::Arc;

use matformer_core::dataset::synthesize_graph;
use matformer_core::sequencer::{order_nodes, Codec, NodeOrdering, QuantKey, Quantizer, SequenceError, MAX_NODES};
use matformer_core::{validate, DepthMode, Library, MaterialGraph, ParamValue};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, seed: u64) -> Vec<MaterialGraph> {
    let lib = Library::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let size = rng.random_range(5..=60);
            synthesize_graph(lib.clone(), size, &mut rng)
        })
        .collect()
}

fn lib() -> Arc<Library> {
    Library::builtin()
}

fn chain() -> MaterialGraph {
    let lib = lib();
    let mut g = MaterialGraph::new(lib.clone());
    g.add_node(lib.by_name("checker").unwrap(), vec![]).unwrap();
    g.add_node(lib.by_name("invert").unwrap(), vec![]).unwrap();
    g.add_node(lib.by_name("output_height").unwrap(), vec![]).unwrap();
    g.connect(0, 0, 1, 0).unwrap();
    g.connect(1, 0, 2, 0).unwrap();
    g
}

/// Checks that `decoded` equals `g` relabeled by `order`, with continuous
/// components within half a bin and discrete ones exact.
fn assert_reconstructs(codec: &Codec, g: &MaterialGraph, order: &[usize], decoded: &MaterialGraph) {
    assert_eq!(decoded.node_count(), g.node_count());
    let mut pos = vec![0; g.node_count()];
    for (i, &id) in order.iter().enumerate() {
        pos[id] = i;
        assert_eq!(decoded.nodes()[i].op, g.nodes()[id].op);
        let schema = g.schema(id);
        let (a, b) = (g.param_set(id), decoded.param_set(i));
        for (k, ps) in schema.params.iter().enumerate() {
            assert_eq!(a.raw(k).len(), b.raw(k).len(), "param {} length", ps.name);
            for (c, (x, y)) in a.raw(k).iter().zip(b.raw(k)).enumerate() {
                if ps.is_discrete {
                    assert_eq!(x, y);
                } else {
                    let key = QuantKey { op: schema.op_type.0, param: k, component: c % ps.vector_dim };
                    let half = codec.quantizer.bin_width(key).unwrap() / 2.0;
                    assert!((x - y).abs() <= half + 1e-12, "{}[{c}]: {x} vs {y}", ps.name);
                }
            }
        }
    }
    let expected: BTreeSet<_> =
        g.edges().iter().map(|e| (pos[e.from.node], e.from.slot, pos[e.to.node], e.to.slot)).collect();
    let got: BTreeSet<_> = decoded.edges().iter().map(|e| (e.from.node, e.from.slot, e.to.node, e.to.slot)).collect();
    assert_eq!(expected, got);
}

#[test]
fn chain_orderings() {
    let g = chain();
    assert_eq!(order_nodes(&g, NodeOrdering::BackToFront, 0), vec![2, 1, 0]);
    assert_eq!(order_nodes(&g, NodeOrdering::BackToFrontReversed, 0), vec![0, 1, 2]);
    assert_eq!(order_nodes(&g, NodeOrdering::RandomTopological, 9), vec![0, 1, 2]);
}

#[test]
fn chain_node_sequence() {
    let codec = Codec::new(lib(), Quantizer::from_schema(&lib()));
    let t = codec.encode(&chain(), NodeOrdering::BackToFront, 0).unwrap();
    assert_eq!(t.nodes.types.len(), 5);
    assert_eq!(&t.nodes.depths[1..4], &[0, 1, 2]);
    let expected: Vec<u32> = (1..=5).collect();
    assert_eq!(t.nodes.positions, expected);
    assert_eq!(t.edges.slots.len() - 2, 4);
    assert_eq!(&t.edges.tuple[1..5], &[1, 2, 1, 2]);
}

#[test]
fn empty_graph_encodes_to_start_stop() {
    let codec = Codec::new(lib(), Quantizer::from_schema(&lib()));
    let g = MaterialGraph::new(lib());
    let t = codec.encode(&g, NodeOrdering::BackToFront, 0).unwrap();
    assert_eq!(t.nodes.types, vec![codec.vocab.type_alpha(), codec.vocab.type_omega()]);
    assert_eq!(t.edges.slots, vec![codec.vocab.slot_alpha(), codec.vocab.slot_omega()]);
    assert_eq!(codec.decode(&t).unwrap().node_count(), 0);
}

#[test]
fn oversized_graph_overflows() {
    let lib = lib();
    let mut g = MaterialGraph::new(lib.clone());
    for _ in 0..=MAX_NODES {
        g.add_node(lib.by_name("checker").unwrap(), vec![]).unwrap();
    }
    let codec = Codec::new(lib.clone(), Quantizer::from_schema(&lib));
    let err = codec.encode(&g, NodeOrdering::BackToFront, 0).unwrap_err();
    assert!(matches!(err, SequenceError::Overflow { len: 401, max: 400, .. }), "{err}");
}

#[test]
fn vector_parameter_flattening() {
    let lib = lib();
    let op = lib.by_name("transform_2d").unwrap();
    let offset = lib.schema(op).unwrap().param_index("offset").unwrap();
    let mut g = MaterialGraph::new(lib.clone());
    g.add_node(op, vec![ParamValue::new(offset, vec![0.25, -0.5])]).unwrap();
    let codec = Codec::new(lib.clone(), Quantizer::from_schema(&lib));
    let t = codec.encode(&g, NodeOrdering::BackToFront, 0).unwrap();
    let p = &t.params[0];
    assert_eq!(p.values.len(), 4);
    assert_eq!(&p.vector_idx[1..3], &[1, 2]);
    assert_eq!(p.indices[1], p.indices[2]);
    assert_eq!(p.indices[1], offset as u32);
}

#[test]
fn round_trip_over_corpus_and_orderings() {
    let graphs = corpus(60, 1);
    let codec = Codec::new(lib(), Quantizer::fit(&lib(), &graphs));
    for (i, g) in graphs.iter().enumerate() {
        for ordering in NodeOrdering::ALL {
            let t = codec.encode(g, ordering, i as u64).unwrap();
            let slots: usize = (0..g.node_count()).map(|n| g.schema(n).num_slots()).sum();
            assert_eq!(t.slots.len(), slots);
            let decoded = codec.decode(&t).unwrap();
            validate(&decoded).unwrap();
            assert_reconstructs(&codec, g, &t.order, &decoded);
        }
    }
}

#[test]
fn depth_streams_follow_the_ordering() {
    let g = &corpus(1, 4)[0];
    let codec = Codec::new(lib(), Quantizer::fit(&lib(), [g]));
    for ordering in NodeOrdering::ALL {
        let t = codec.encode(g, ordering, 0).unwrap();
        let mode = if ordering == NodeOrdering::BackToFront { DepthMode::ToOutput } else { DepthMode::ToGenerator };
        let depths = g.depths(mode);
        for (i, &id) in t.order.iter().enumerate() {
            assert_eq!(t.nodes.depths[i + 1], depths[id].min(31));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reversed_back_to_front_is_reverse(seed in any::<u64>(), size in 5usize..80) {
        let g = synthesize_graph(lib(), size, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut r = order_nodes(&g, NodeOrdering::BackToFront, seed);
        r.reverse();
        prop_assert_eq!(order_nodes(&g, NodeOrdering::BackToFrontReversed, seed), r);
    }

    #[test]
    fn every_ordering_is_a_permutation(seed in any::<u64>(), size in 5usize..80) {
        let g = synthesize_graph(lib(), size, &mut ChaCha8Rng::seed_from_u64(seed));
        for ordering in NodeOrdering::ALL {
            let mut o = order_nodes(&g, ordering, seed);
            o.sort_unstable();
            prop_assert_eq!(o, (0..size).collect::<Vec<_>>());
        }
    }

    #[test]
    fn random_topological_respects_edges(seed in any::<u64>(), size in 5usize..80) {
        let g = synthesize_graph(lib(), size, &mut ChaCha8Rng::seed_from_u64(seed));
        let o = order_nodes(&g, NodeOrdering::RandomTopological, seed);
        let mut pos = vec![0; size];
        for (i, &id) in o.iter().enumerate() {
            pos[id] = i;
        }
        for e in g.edges() {
            prop_assert!(pos[e.from.node] < pos[e.to.node]);
        }
    }

    #[test]
    fn edge_stream_alternates_direction(seed in any::<u64>(), size in 5usize..60) {
        let g = synthesize_graph(lib(), size, &mut ChaCha8Rng::seed_from_u64(seed));
        let codec = Codec::new(lib(), Quantizer::fit(&lib(), [&g]));
        let t = codec.encode(&g, NodeOrdering::BackToFront, seed).unwrap();
        let interior = &t.edges.slots[1..t.edges.slots.len() - 1];
        prop_assert_eq!(interior.len() % 2, 0);
        for (i, &s) in interior.iter().enumerate() {
            let dir = t.slots.refs[s as usize].direction;
            let want = if i % 2 == 0 { matformer_core::SlotDirection::Output } else { matformer_core::SlotDirection::Input };
            prop_assert_eq!(dir, want);
        }
    }
}
