use std::collections::BTreeSet;
use std::sync::Arc;

use matformer_core::dataset::synthesize_graph;
use matformer_core::sequencer::{
    decode_edges, order_nodes, Codec, NodeOrdering, ParamSequence, Quantizer, SlotSequence,
};
use matformer_core::{validate, Library, MaterialGraph, OperatorSchema};
use matformer_gen::{
    autocomplete, complete, generate_graph, sample_edges, sample_params, CompletionRequest, GenError, ModelConfig, Models,
    Prefix, SamplerConfig, Stage, StageModel,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_models(ordering: NodeOrdering) -> Models {
    let lib = Library::builtin();
    let codec = Codec::new(lib.clone(), Quantizer::from_schema(&lib));
    let m = |s: Stage, seed| StageModel::new(s, ordering, &codec, ModelConfig::micro(), seed).unwrap();
    Models::new(codec.clone(), m(Stage::Nodes, 11), m(Stage::Params, 12), m(Stage::Edges, 13)).unwrap()
}

fn find(lib: &Library, pred: impl Fn(&OperatorSchema) -> bool) -> OperatorSchema {
    lib.schemas().find(|s| pred(s)).expect("builtin library has a matching operator").clone()
}

fn random_embedding(dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((1, dim), |_| rng.random_range(-1.0..1.0))
}

fn sample_graph(seed: u64, nodes: usize) -> MaterialGraph {
    synthesize_graph(Library::builtin(), nodes, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn zero_parameter_operator_yields_start_stop() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let schema = find(&models.codec.library, |s| s.params.is_empty());
    let mut expected = ParamSequence::start(&models.codec.vocab);
    expected.close(&models.codec.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in [0.0, 1.0, 5.0] {
        let emb = random_embedding(ModelConfig::micro().dim, &mut rng);
        let seq = sample_params(&models, &emb, &schema, t, &mut rng).unwrap();
        assert_eq!(seq, expected);
    }
}

#[test]
fn sampled_parameter_indices_and_values_stay_in_range() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let lib = models.codec.library.clone();
    let schema = find(&lib, |s| s.params.len() >= 3 && s.params.iter().any(|p| p.is_discrete));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let emb = random_embedding(ModelConfig::micro().dim, &mut rng);
        let seq = sample_params(&models, &emb, &schema, 2.0, &mut rng).unwrap();
        for (k, v) in seq.interior_pairs(&models.codec.vocab) {
            assert!(k < schema.params.len(), "index {k} for {} params", schema.params.len());
            let p = &schema.params[k];
            if p.is_discrete {
                assert!((v as f64) <= p.max_value - p.min_value, "discrete value token {v} for {}", p.name);
            } else {
                assert!((v as usize) < models.codec.quantizer.levels);
            }
        }
        // Decoding succeeds, so the structure (vector completion, ordering) is legal too.
        models.codec.decode_node_params(schema.op_type, &seq).unwrap();
    }
}

/// Independent legality check of an edge set over two nodes.
fn legal_two_node(edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut targets = BTreeSet::new();
    for &(a, b) in edges {
        if a == b || !targets.insert(b) {
            return false;
        }
    }
    !(edges.contains(&(0, 1)) && edges.contains(&(1, 0)))
}

#[test]
fn two_node_edge_sampling_only_produces_legal_sets() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let lib = models.codec.library.clone();
    let op = find(&lib, |s| s.num_input_slots == 1 && s.num_output_slots == 1 && !s.is_output_marker).op_type;
    let slots = SlotSequence::build(&lib, &[op, op], &[1, 0]).unwrap();

    let mut legal = BTreeSet::new();
    let candidates = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for mask in 0u32..16 {
        let set: BTreeSet<_> = (0..4).filter(|i| mask >> i & 1 == 1).map(|i| candidates[i]).collect();
        if legal_two_node(&set) {
            legal.insert(set.into_iter().collect::<Vec<_>>());
        }
    }
    assert_eq!(legal.len(), 3);

    let mut seen = BTreeSet::new();
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sample_edges(&models, &slots, &Prefix::default(), 1.0, &mut rng).unwrap();
        let edges = decode_edges(&slots, &seq, &models.codec.vocab).unwrap();
        let set: Vec<_> = edges.iter().map(|e| (e.from.node, e.to.node)).collect::<BTreeSet<_>>().into_iter().collect();
        assert!(legal.contains(&set), "seed {seed}: illegal edge set {set:?}");
        seen.insert(set);
    }
    assert_eq!(seen, legal, "every legal edge set is reachable");
}

#[test]
fn greedy_generation_is_deterministic_and_seed_free() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let cfg = SamplerConfig { max_nodes: 20, ..SamplerConfig::greedy(1) };
    let a = generate_graph(&models, &cfg).unwrap();
    let b = generate_graph(&models, &cfg).unwrap();
    let c = generate_graph(&models, &SamplerConfig { seed: 99, ..cfg }).unwrap();
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.graph, c.graph);
    assert_eq!(a.nodes, c.nodes);
}

#[test]
fn full_prefix_is_closed_with_a_forced_stop() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let g = sample_graph(3, 12);
    let order = order_nodes(&g, NodeOrdering::BackToFrontReversed, 0);
    let prefix = Prefix::from_graph(&g, &order, NodeOrdering::BackToFrontReversed.depth_mode());
    let cfg = SamplerConfig { max_nodes: g.node_count(), ..SamplerConfig::default() };
    let out = complete(&models, &prefix, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.graph.node_count(), g.node_count());
    assert_eq!(out.nodes.types.len(), g.node_count() + 2);
    assert_eq!(*out.nodes.types.last().unwrap(), models.codec.vocab.type_omega());
}

#[test]
fn invalid_sampler_settings_are_rejected() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let mut cfg = SamplerConfig::default();
    cfg.edge_temperature = f64::NAN;
    assert!(matches!(generate_graph(&models, &cfg), Err(GenError::Request(_))));
    cfg = SamplerConfig { max_nodes: 10_000, ..SamplerConfig::default() };
    assert!(matches!(generate_graph(&models, &cfg), Err(GenError::Request(_))));
}

#[test]
fn autocomplete_needs_a_front_to_back_ordering() {
    let models = micro_models(NodeOrdering::BackToFront);
    let req = CompletionRequest { graph: sample_graph(1, 8), pinned: vec![0], count: 1, sampler: SamplerConfig::default() };
    assert!(matches!(autocomplete(&models, &req), Err(GenError::Incompatible(_))));

    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let req = CompletionRequest { pinned: vec![0, 100], ..req };
    assert!(matches!(autocomplete(&models, &req), Err(GenError::Request(_))));
}

#[test]
fn autocomplete_is_deterministic_per_seed() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let g = sample_graph(4, 10);
    let req = CompletionRequest {
        graph: g,
        pinned: vec![1, 3, 4],
        count: 3,
        sampler: SamplerConfig { max_nodes: 30, ..SamplerConfig::with_temperature(1.0, 5) },
    };
    let a = autocomplete(&models, &req).unwrap();
    let b = autocomplete(&models, &req).unwrap();
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.graph, y.graph);
        assert_eq!(x.pinned, 3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_graphs_always_validate(seed in any::<u64>(), t in 0.0f64..3.0) {
        let models = micro_models(NodeOrdering::BackToFrontReversed);
        let cfg = SamplerConfig { max_nodes: 40, ..SamplerConfig::with_temperature(t, seed) };
        let out = generate_graph(&models, &cfg).unwrap();
        prop_assert!(validate(&out.graph).is_ok());
        prop_assert!(out.graph.node_count() <= 40);
    }

    #[test]
    fn completion_keeps_the_prefix_verbatim(seed in any::<u64>(), size in 5usize..25, cut in 0.0f64..1.0) {
        let models = micro_models(NodeOrdering::BackToFrontReversed);
        let g = sample_graph(seed, size);
        let order = order_nodes(&g, NodeOrdering::BackToFrontReversed, 0);
        let k = ((cut * size as f64) as usize).clamp(1, size);
        let prefix = Prefix::from_graph(&g, &order[..k], NodeOrdering::BackToFrontReversed.depth_mode());
        let cfg = SamplerConfig { max_nodes: size + 15, ..SamplerConfig::with_temperature(1.0, seed) };
        let out = complete(&models, &prefix, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(validate(&out.graph).is_ok());
        prop_assert_eq!(out.pinned, k);
        for (j, &id) in order[..k].iter().enumerate() {
            prop_assert_eq!(out.graph.nodes()[j].op, g.nodes()[id].op);
            prop_assert_eq!(&out.graph.nodes()[j].params, &g.nodes()[id].params);
        }
        let among: BTreeSet<_> = out
            .graph
            .edges()
            .iter()
            .filter(|e| e.from.node < k && e.to.node < k)
            .map(|e| (e.from.node, e.from.slot, e.to.node, e.to.slot))
            .collect();
        let expected: BTreeSet<_> = prefix.edges.iter().map(|e| (e.from.node, e.from.slot, e.to.node, e.to.slot)).collect();
        prop_assert_eq!(among, expected);
    }
}

#[test]
fn bundles_round_trip_and_refuse_foreign_libraries() {
    let models = micro_models(NodeOrdering::BackToFrontReversed);
    let dir = tempfile::tempdir().unwrap();
    models.save(dir.path()).unwrap();
    let loaded = Models::load(dir.path(), Library::builtin()).unwrap();
    let cfg = SamplerConfig { max_nodes: 25, ..SamplerConfig::with_temperature(1.0, 8) };
    assert_eq!(generate_graph(&models, &cfg).unwrap().graph, generate_graph(&loaded, &cfg).unwrap().graph);

    let other = Arc::new(Library::new("other", Library::builtin().kernels()[..3].to_vec()).unwrap());
    let err = Models::load(dir.path(), other).unwrap_err();
    assert!(err.to_string().contains("library"), "{err}");
}

#[test]
fn stages_with_different_orderings_do_not_bundle() {
    let lib = Library::builtin();
    let codec = Codec::new(lib.clone(), Quantizer::from_schema(&lib));
    let m = |s: Stage, o| StageModel::new(s, o, &codec, ModelConfig::micro(), 0).unwrap();
    let r = Models::new(
        codec.clone(),
        m(Stage::Nodes, NodeOrdering::BackToFront),
        m(Stage::Params, NodeOrdering::BackToFrontReversed),
        m(Stage::Edges, NodeOrdering::BackToFrontReversed),
    );
    assert!(matches!(r, Err(GenError::Incompatible(_))));
    let r = Models::new(
        codec.clone(),
        m(Stage::Params, NodeOrdering::BackToFront),
        m(Stage::Params, NodeOrdering::BackToFront),
        m(Stage::Edges, NodeOrdering::BackToFront),
    );
    assert!(r.is_err());
}
