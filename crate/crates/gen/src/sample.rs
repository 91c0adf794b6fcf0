//! Validity-masked sampling of the three stages and prefix-conditioned completion.

use matformer_core::sequencer::{
    decode_edges, decode_nodes, edge_sort_key, order_nodes, value_range, Codec, EdgeBuilder, EdgeSequence, NodeOrdering,
    NodeSequence, ParamCursor, ParamSequence, SlotSequence, TokenizedGraph, MAX_NODES, MAX_SLOTS,
};
use matformer_core::{validate, DepthMode, Edge, MaterialGraph, NodeId, OperatorSchema, OperatorType, ParamValue, SlotRef};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::Models;
use crate::train::mix_seed;
use crate::GenError;

/// Per-stage temperatures (0 means argmax) and the RNG seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub node_temperature: f64,
    pub param_temperature: f64,
    pub edge_temperature: f64,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::with_temperature(1.0, 0)
    }
}

impl SamplerConfig {
    pub fn with_temperature(t: f64, seed: u64) -> Self {
        SamplerConfig { node_temperature: t, param_temperature: t, edge_temperature: t, max_nodes: MAX_NODES, seed }
    }

    pub fn greedy(seed: u64) -> Self {
        SamplerConfig::with_temperature(0.0, seed)
    }

    pub fn check(&self) -> Result<(), GenError> {
        for t in [self.node_temperature, self.param_temperature, self.edge_temperature] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(GenError::Request(format!("temperature must be finite and non-negative, got {t}")));
            }
        }
        if self.max_nodes > MAX_NODES {
            return Err(GenError::Request(format!("max_nodes {} exceeds {MAX_NODES}", self.max_nodes)));
        }
        Ok(())
    }
}

/// Softmax of `logits / temperature` restricted to the entries where `mask`
/// is true. Temperature 0 puts all mass on the best unmasked entry (lowest
/// index on ties). Returns all zeros when nothing is unmasked.
pub fn masked_distribution(logits: &[f64], mask: &[bool], temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    let allowed = || logits.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m).map(|(i, (&l, _))| (i, l));
    let Some((best, top)) = allowed().fold(None, |acc: Option<(usize, f64)>, (i, l)| match acc {
        Some((_, b)) if b >= l => acc,
        _ => Some((i, l)),
    }) else {
        return out;
    };
    if temperature == 0.0 || !top.is_finite() {
        out[best] = 1.0;
        return out;
    }
    let mut total = 0.0;
    for (i, l) in allowed() {
        let e = ((l - top) / temperature).exp();
        out[i] = e;
        total += e;
    }
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Inverse-CDF draw; never returns an entry with zero mass.
fn draw(dist: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let last = dist.iter().rposition(|&p| p > 0.0)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate().take(last) {
        acc += p;
        if p > 0.0 && u < acc {
            return Some(i);
        }
    }
    Some(last)
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let t = if temperature == 0.0 { 1.0 } else { temperature };
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| ((l - top) / t).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| (l - top) / t - lse).collect()
}

/// Nodes (with their parameters and mutual edges) that a completion must keep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prefix {
    pub types: Vec<OperatorType>,
    pub depths: Vec<u32>,
    pub params: Vec<Vec<ParamValue>>,
    /// Edges among the prefix, node ids given as prefix positions.
    pub edges: Vec<Edge>,
}

impl Prefix {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Prefix made of `order` (nodes of `graph`) with depths measured in `graph`.
    pub fn from_graph(graph: &MaterialGraph, order: &[NodeId], mode: DepthMode) -> Self {
        let depths = graph.depths(mode);
        let mut pos = vec![None; graph.node_count()];
        for (j, &id) in order.iter().enumerate() {
            pos[id] = Some(j);
        }
        let edges = graph
            .edges()
            .iter()
            .filter_map(|e| {
                let (a, b) = (pos[e.from.node]?, pos[e.to.node]?);
                Some(Edge { from: SlotRef::output(a, e.from.slot), to: SlotRef::input(b, e.to.slot) })
            })
            .collect();
        Prefix {
            types: order.iter().map(|&id| graph.nodes()[id].op).collect(),
            depths: order.iter().map(|&id| depths[id]).collect(),
            params: order.iter().map(|&id| graph.nodes()[id].params.clone()).collect(),
            edges,
        }
    }
}

/// Sequence order for pinned nodes: the ordering applied to their induced subgraph.
pub fn pinned_order(graph: &MaterialGraph, pinned: &[NodeId], ordering: NodeOrdering) -> Vec<NodeId> {
    let (sub, map) = graph.induced_subgraph(pinned);
    let mut back = vec![0; sub.node_count()];
    for (old, new) in map.iter().enumerate() {
        if let Some(n) = new {
            back[*n] = old;
        }
    }
    order_nodes(&sub, ordering, 0).into_iter().map(|n| back[n]).collect()
}

/// A sampled graph; its first `pinned` nodes came from the prefix.
#[derive(Debug, Clone)]
pub struct Generated {
    pub graph: MaterialGraph,
    pub pinned: usize,
    pub nodes: NodeSequence,
    pub edges: EdgeSequence,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub graph: MaterialGraph,
    pub pinned: Vec<NodeId>,
    pub count: usize,
    pub sampler: SamplerConfig,
}

fn schema(codec: &Codec, op: OperatorType) -> Result<&OperatorSchema, GenError> {
    codec.library.schema(op).ok_or_else(|| GenError::Assembly(format!("unknown operator {}", op.0)))
}

/// Node tokens extending the prefix until stop or `cfg.max_nodes`.
pub fn sample_nodes(models: &Models, prefix: &Prefix, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<NodeSequence, GenError> {
    let codec = &models.codec;
    let vocab = &codec.vocab;
    let net = models.node_net();
    let mut seq = NodeSequence::start(vocab);
    let mut slots = 0;
    for (&op, &d) in prefix.types.iter().zip(&prefix.depths) {
        seq.push(op.0, d);
        slots += schema(codec, op)?.num_slots();
    }
    let omega = vocab.type_omega() as usize;
    while seq.node_count(vocab) < cfg.max_nodes {
        let (type_logits, depth_logits) = net.next_logits(&models.nodes.store, &seq)?;
        let mut mask = vec![false; vocab.type_size()];
        for s in codec.library.schemas() {
            mask[s.op_type.index()] = slots + s.num_slots() <= MAX_SLOTS;
        }
        mask[omega] = true;
        let ty = draw(&masked_distribution(&type_logits, &mask, cfg.node_temperature), rng).unwrap_or(omega);
        if ty == omega {
            break;
        }
        let depth = draw(&masked_distribution(&depth_logits, &vec![true; depth_logits.len()], cfg.node_temperature), rng)
            .unwrap_or(0);
        seq.push(ty as u32, depth as u32);
        slots += schema(codec, OperatorType(ty as u32))?.num_slots();
    }
    seq.push(vocab.type_omega(), 0);
    Ok(seq)
}

/// Samples one node's parameter tokens. Index and value are drawn jointly
/// over the legal pairs; stopping scores as (value ω, index 0). `embedding`
/// is the node's row of [`ParamNet::node_embeddings`](crate::params::ParamNet::node_embeddings).
pub fn sample_params(
    models: &Models,
    embedding: &Array2<f64>,
    schema: &OperatorSchema,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<ParamSequence, GenError> {
    let codec = &models.codec;
    let vocab = &codec.vocab;
    let net = models.param_net();
    let mut seq = ParamSequence::start(vocab);
    let mut cursor = ParamCursor::default();
    loop {
        let legal = cursor.legal_params(schema);
        let can_stop = cursor.can_stop(schema);
        if legal.is_empty() {
            break;
        }
        let (value_logits, index_logits) = net.next_logits(&models.params.store, embedding, &seq)?;
        let lv = log_softmax(&value_logits, temperature);
        let lk = log_softmax(&index_logits, temperature);
        let mut choices = Vec::new();
        let mut scores = Vec::new();
        if can_stop {
            choices.push(None);
            scores.push(lv[vocab.value_omega() as usize] + lk[0]);
        }
        for &k in &legal {
            for v in 0..value_range(schema, k, codec.quantizer.levels) {
                choices.push(Some((k, v as u32)));
                scores.push(lk[k] + lv[v]);
            }
        }
        let t = if temperature == 0.0 { 0.0 } else { 1.0 };
        let dist = masked_distribution(&scores, &vec![true; scores.len()], t);
        let pick = draw(&dist, rng).ok_or_else(|| GenError::Assembly("no legal parameter token".into()))?;
        match choices[pick] {
            None => break,
            Some((k, v)) => {
                seq.push_raw(v, k as u32, cursor.side(schema, k));
                cursor.push(k);
            }
        }
    }
    seq.close(vocab);
    Ok(seq)
}

/// Edge tokens over `slots`; the prefix's edges come first and its nodes are frozen.
pub fn sample_edges(
    models: &Models,
    slots: &SlotSequence,
    prefix: &Prefix,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<EdgeSequence, GenError> {
    let vocab = &models.codec.vocab;
    let net = models.edge_net();
    let mut builder = EdgeBuilder::new(slots);
    let mut seq = EdgeSequence::start(vocab);
    let mut fixed: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(prefix.edges.len());
    for e in &prefix.edges {
        let src = slots.index_of(e.from).ok_or_else(|| GenError::Request(format!("pinned edge source {:?} has no slot", e.from)))?;
        let dst = slots.index_of(e.to).ok_or_else(|| GenError::Request(format!("pinned edge target {:?} has no slot", e.to)))?;
        fixed.push((e.from.node, src, e.to.node, dst));
    }
    fixed.sort_by_key(|&(ps, src, pd, dst)| edge_sort_key(ps, src, pd, dst));
    for (_, src, _, dst) in fixed {
        builder.push(src)?;
        builder.push(dst)?;
        seq.push(src as u32);
        seq.push(dst as u32);
    }
    builder.freeze_prefix(prefix.len());
    let embeddings = net.slot_embeddings(&models.edges.store, slots)?;
    let n = slots.len();
    loop {
        let mut mask = builder.mask();
        mask.push(builder.can_stop());
        if !mask.iter().any(|&m| m) {
            return Err(GenError::Assembly("edge sampler has no legal continuation".into()));
        }
        let logits = net.next_logits(&models.edges.store, &embeddings, &seq)?;
        let pick = draw(&masked_distribution(&logits, &mask, temperature), rng)
            .ok_or_else(|| GenError::Assembly("edge distribution is empty".into()))?;
        if pick == n {
            break;
        }
        builder.push(pick)?;
        seq.push(pick as u32);
    }
    seq.close(vocab);
    Ok(seq)
}

/// Whether `generated` (node `i` at sequence position `i`) tokenizes exactly
/// as `target`: same node, quantized parameter and edge sequences.
pub fn reproduces(codec: &Codec, target: &TokenizedGraph, generated: &MaterialGraph) -> bool {
    let order = (0..generated.node_count()).collect();
    codec
        .encode_with_order(generated, target.ordering, order, None)
        .is_ok_and(|t| t.nodes == target.nodes && t.params == target.params && t.edges == target.edges)
}

/// Samples one graph extending `prefix`. The prefix nodes keep their
/// types, parameters and mutual edges; new edges among them are never added.
pub fn complete(models: &Models, prefix: &Prefix, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<Generated, GenError> {
    cfg.check()?;
    if prefix.len() > cfg.max_nodes {
        return Err(GenError::Request(format!("{} pinned nodes exceed the {}-node limit", prefix.len(), cfg.max_nodes)));
    }
    let codec = &models.codec;
    let vocab = &codec.vocab;
    let nodes = sample_nodes(models, prefix, cfg, rng)?;
    let types: Vec<OperatorType> = decode_nodes(&nodes, vocab)?.into_iter().collect();
    let depths = &nodes.depths[1..=types.len()];

    let mut params: Vec<Vec<ParamValue>> = prefix.params.clone();
    if types.len() > prefix.len() {
        let emb = models.param_net().node_embeddings(&models.params.store, &nodes)?;
        for (j, &op) in types.iter().enumerate().skip(prefix.len()) {
            let row = emb.slice(ndarray::s![j + 1..j + 2, ..]).to_owned();
            let seq = sample_params(models, &row, schema(codec, op)?, cfg.param_temperature, rng)?;
            params.push(codec.decode_node_params(op, &seq)?);
        }
    }

    let slots = SlotSequence::build(&codec.library, &types, depths)?;
    let edges = sample_edges(models, &slots, prefix, cfg.edge_temperature, rng)?;
    let edge_list = decode_edges(&slots, &edges, vocab)?;
    let graph = codec.assemble(&types, params, &edge_list).map_err(|e| GenError::Assembly(e.to_string()))?;
    validate(&graph).map_err(|e| GenError::Assembly(e.to_string()))?;
    Ok(Generated { graph, pinned: prefix.len(), nodes, edges })
}

/// Unconditional generation seeded by `cfg.seed`.
pub fn generate_graph(models: &Models, cfg: &SamplerConfig) -> Result<Generated, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    complete(models, &Prefix::default(), cfg, &mut rng)
}

/// `count` completions of the pinned part of a partial graph. Completion `i`
/// draws from its own RNG stream so results do not depend on `count`.
pub fn autocomplete(models: &Models, req: &CompletionRequest) -> Result<Vec<Generated>, GenError> {
    if !models.ordering.is_front_to_back() {
        return Err(GenError::Incompatible(format!(
            "completion needs a front-to-back ordering, models use `{}`",
            models.ordering
        )));
    }
    if let Some(&bad) = req.pinned.iter().find(|&&id| id >= req.graph.node_count()) {
        return Err(GenError::Request(format!("pinned node {bad} does not exist")));
    }
    let order = pinned_order(&req.graph, &req.pinned, models.ordering);
    let (sub, map) = req.graph.induced_subgraph(&order);
    let sub_order: Vec<NodeId> = order.iter().map(|&id| map[id].expect("pinned node kept")).collect();
    let prefix = Prefix::from_graph(&sub, &sub_order, models.ordering.depth_mode());
    (0..req.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(req.sampler.seed, i as u64, 0xc0));
            complete(models, &prefix, &req.sampler, &mut rng)
        })
        .collect()
}
