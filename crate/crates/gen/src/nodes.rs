//! Node generator: next operator type and depth from the node prefix.

use matformer_core::sequencer::{Codec, NodeSequence, TokenizedGraph, DEPTH_VOCAB, MAX_NODES};
use matformer_nn::{Linear, ParamStore, Tape, Transformer, TransformerConfig, Var};
use rand::Rng;

use crate::model::{concat_segments, last_row, stream_mean, ModelConfig};
use crate::GenError;

/// Node positions run from 1 (start token) to `MAX_NODES + 2` (stop token).
pub const NODE_POSITIONS: usize = MAX_NODES + 3;

#[derive(Debug, Clone)]
pub struct NodeNet {
    pub decoder: Transformer,
    pub type_head: Linear,
    pub depth_head: Linear,
    type_omega: u32,
}

impl NodeNet {
    pub fn new(store: &mut ParamStore, codec: &Codec, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, GenError> {
        let v = &codec.vocab;
        let tc = TransformerConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            dim: cfg.dim,
            stream_vocab: vec![v.type_size(), DEPTH_VOCAB, NODE_POSITIONS],
            causal: true,
            conditional: false,
        };
        Ok(NodeNet {
            decoder: Transformer::new(store, "nodes", tc, rng)?,
            type_head: Linear::new(store, "nodes.type_head", cfg.dim, v.type_size(), rng),
            depth_head: Linear::new(store, "nodes.depth_head", cfg.dim, DEPTH_VOCAB, rng),
            type_omega: v.type_omega(),
        })
    }

    fn heads(&self, tape: &mut Tape, store: &ParamStore, seqs: &[&NodeSequence]) -> Result<(Var, Var), GenError> {
        let types: Vec<&[u32]> = seqs.iter().map(|s| &s.types[..]).collect();
        let depths: Vec<&[u32]> = seqs.iter().map(|s| &s.depths[..]).collect();
        let positions: Vec<&[u32]> = seqs.iter().map(|s| &s.positions[..]).collect();
        let (t, segments) = concat_segments(&types);
        let (d, _) = concat_segments(&depths);
        let (p, _) = concat_segments(&positions);
        let h = self.decoder.forward(tape, store, &[&t, &d, &p], &segments, None)?;
        Ok((self.type_head.forward(tape, store, h), self.depth_head.forward(tape, store, h)))
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&TokenizedGraph]) -> Result<Var, GenError> {
        let inputs: Vec<NodeSequence> = batch.iter().map(|g| drop_last(&g.nodes)).collect();
        let refs: Vec<&NodeSequence> = inputs.iter().collect();
        let (type_logits, depth_logits) = self.heads(tape, store, &refs)?;
        let mut type_targets = Vec::new();
        let mut depth_targets = Vec::new();
        for g in batch {
            for (&t, &d) in g.nodes.types[1..].iter().zip(&g.nodes.depths[1..]) {
                type_targets.push(Some(t as usize));
                // The stop token carries no depth.
                depth_targets.push((t != self.type_omega).then_some(d as usize));
            }
        }
        stream_mean(tape, &[(type_logits, type_targets), (depth_logits, depth_targets)])
    }

    /// Type and depth logits for the token following `seq`.
    pub fn next_logits(&self, store: &ParamStore, seq: &NodeSequence) -> Result<(Vec<f64>, Vec<f64>), GenError> {
        let mut tape = Tape::new();
        let (t, d) = self.heads(&mut tape, store, &[seq])?;
        Ok((last_row(&tape, t), last_row(&tape, d)))
    }
}

fn drop_last(s: &NodeSequence) -> NodeSequence {
    let n = s.len() - 1;
    NodeSequence { types: s.types[..n].to_vec(), depths: s.depths[..n].to_vec(), positions: s.positions[..n].to_vec() }
}
