//! Edge generator: a slot encoder plus a decoder whose outputs are pointer
//! queries over the slot embeddings and a learned stop key.

use matformer_core::sequencer::{Codec, EdgeSequence, SlotSequence, TokenizedGraph, DEPTH_VOCAB, MAX_EDGES, MAX_NODES, MAX_SLOTS};
use matformer_nn::{pointer_logits, Linear, ParamId, ParamStore, Tape, Transformer, TransformerConfig, Var};
use ndarray::Array2;
use rand::Rng;

use crate::model::{concat_segments, ModelConfig};
use crate::GenError;

pub const EDGE_POSITIONS: usize = 2 * MAX_EDGES + 3;

#[derive(Debug, Clone)]
pub struct EdgeNet {
    pub encoder: Transformer,
    pub decoder: Transformer,
    /// Projects the embedding of the previous slot into the decoder input.
    pub slot_input: Linear,
    pub query: Linear,
    /// Input row standing in for the start token.
    pub start_row: ParamId,
    pub stop_key: ParamId,
    slot_omega: u32,
}

impl EdgeNet {
    pub fn new(store: &mut ParamStore, codec: &Codec, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, GenError> {
        let v = &codec.vocab;
        let enc = TransformerConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            dim: cfg.dim,
            stream_vocab: vec![v.num_types.max(1), MAX_NODES, DEPTH_VOCAB, v.max_node_slots, MAX_SLOTS],
            causal: false,
            conditional: false,
        };
        let dec = TransformerConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            dim: cfg.dim,
            stream_vocab: vec![EDGE_POSITIONS, 3],
            causal: true,
            conditional: false,
        };
        Ok(EdgeNet {
            encoder: Transformer::new(store, "edges.slot_encoder", enc, rng)?,
            decoder: Transformer::new(store, "edges", dec, rng)?,
            slot_input: Linear::new(store, "edges.slot_input", cfg.dim, cfg.dim, rng),
            query: Linear::new(store, "edges.query", cfg.dim, cfg.dim, rng),
            start_row: store.normal("edges.start_row", 1, cfg.dim, rng),
            stop_key: store.normal("edges.stop_key", 1, cfg.dim, rng),
            slot_omega: v.slot_omega(),
        })
    }

    fn encode(&self, tape: &mut Tape, store: &ParamStore, slots: &[&SlotSequence]) -> Result<(Var, Vec<(usize, usize)>), GenError> {
        let pick = |f: fn(&SlotSequence) -> &[u32]| {
            let parts: Vec<&[u32]> = slots.iter().map(|s| f(s)).collect();
            concat_segments(&parts)
        };
        let (types, segments) = pick(|s| &s.types);
        let (nodes, _) = pick(|s| &s.nodes);
        let (depths, _) = pick(|s| &s.depths);
        let (kinds, _) = pick(|s| &s.kinds);
        let (positions, _) = pick(|s| &s.positions);
        if types.is_empty() {
            let dim = self.encoder.config.dim;
            return Ok((tape.constant(Array2::zeros((0, dim))), segments));
        }
        let h = self.encoder.forward(tape, store, &[&types, &nodes, &depths, &kinds, &positions], &segments, None)?;
        Ok((h, segments))
    }

    /// Pointer queries for edge prefixes; `slot_segments[i]` locates prefix `i`'s slots in `slot_emb`.
    fn queries(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefixes: &[&[u32]],
        positions: &[&[u32]],
        tuples: &[&[u32]],
        slot_emb: Var,
        slot_segments: &[(usize, usize)],
    ) -> Result<(Var, Vec<(usize, usize)>), GenError> {
        let (pos, segments) = concat_segments(positions);
        let (tup, _) = concat_segments(tuples);
        let x = self.decoder.embed(tape, store, &[&pos, &tup])?;
        // Row 0 of `source` is the start row, row 1 + s is the projection of slot s.
        let start = tape.param(store, self.start_row);
        let source = if tape.value(slot_emb).nrows() == 0 {
            start
        } else {
            let projected = self.slot_input.forward(tape, store, slot_emb);
            tape.concat_rows(&[start, projected])
        };
        let mut gather = Vec::with_capacity(pos.len());
        for (prefix, &(slot_start, slot_len)) in prefixes.iter().zip(slot_segments) {
            for &t in prefix.iter() {
                if (t as usize) < slot_len {
                    gather.push(1 + slot_start + t as usize);
                } else {
                    gather.push(0);
                }
            }
        }
        let inputs = tape.gather_rows(source, &gather);
        let x = tape.add(x, inputs);
        let h = self.decoder.forward_embedded(tape, store, x, &segments, None)?;
        Ok((self.query.forward(tape, store, h), segments))
    }

    /// Pointer logits of rows `rows` of `queries` over one graph's slots plus the stop key.
    fn pointer(&self, tape: &mut Tape, store: &ParamStore, queries: Var, rows: (usize, usize), slot_emb: Var, slots: (usize, usize)) -> Var {
        let q = tape.slice_rows(queries, rows.0, rows.1);
        let stop = tape.param(store, self.stop_key);
        let keys = if slots.1 == 0 {
            stop
        } else {
            let s = tape.slice_rows(slot_emb, slots.0, slots.1);
            tape.concat_rows(&[s, stop])
        };
        pointer_logits(tape, q, keys)
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&TokenizedGraph]) -> Result<Var, GenError> {
        let slots: Vec<&SlotSequence> = batch.iter().map(|g| &g.slots).collect();
        let (emb, slot_segments) = self.encode(tape, store, &slots)?;
        let cut = |s: &EdgeSequence| s.len() - 1;
        let prefixes: Vec<&[u32]> = batch.iter().map(|g| &g.edges.slots[..cut(&g.edges)]).collect();
        let positions: Vec<&[u32]> = batch.iter().map(|g| &g.edges.positions[..cut(&g.edges)]).collect();
        let tuples: Vec<&[u32]> = batch.iter().map(|g| &g.edges.tuple[..cut(&g.edges)]).collect();
        let (queries, row_segments) = self.queries(tape, store, &prefixes, &positions, &tuples, emb, &slot_segments)?;
        let mut total: Option<Var> = None;
        let mut count = 0usize;
        for (i, g) in batch.iter().enumerate() {
            let n_slots = slot_segments[i].1;
            let targets: Vec<Option<usize>> = g.edges.slots[1..]
                .iter()
                .map(|&t| Some(if t == self.slot_omega { n_slots } else { t as usize }))
                .collect();
            count += targets.len();
            let logits = self.pointer(tape, store, queries, row_segments[i], emb, slot_segments[i]);
            let ce = tape.cross_entropy_sum(logits, &targets);
            total = Some(match total {
                Some(t) => tape.add(t, ce),
                None => ce,
            });
        }
        let total = total.ok_or_else(|| GenError::Request("empty batch".into()))?;
        Ok(tape.scale(total, 1.0 / count as f64))
    }

    /// Slot embeddings of one graph, `slots × dim`.
    pub fn slot_embeddings(&self, store: &ParamStore, slots: &SlotSequence) -> Result<Array2<f64>, GenError> {
        let mut tape = Tape::new();
        let (h, _) = self.encode(&mut tape, store, &[slots])?;
        Ok(tape.value(h).clone())
    }

    /// Pointer logits (slots, then stop) for the token following `prefix`.
    pub fn next_logits(&self, store: &ParamStore, slot_emb: &Array2<f64>, prefix: &EdgeSequence) -> Result<Vec<f64>, GenError> {
        let mut tape = Tape::new();
        let emb = tape.constant(slot_emb.clone());
        let n = slot_emb.nrows();
        let (q, _) =
            self.queries(&mut tape, store, &[&prefix.slots], &[&prefix.positions], &[&prefix.tuple], emb, &[(0, n)])?;
        let rows = prefix.len();
        let logits = self.pointer(&mut tape, store, q, (rows - 1, 1), emb, (0, n));
        Ok(tape.value(logits).row(0).to_vec())
    }
}
