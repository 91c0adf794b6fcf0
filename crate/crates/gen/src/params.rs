//! Parameter generator conditioned on a sequence-aware node embedding.

use matformer_core::sequencer::{Codec, NodeSequence, ParamSequence, TokenizedGraph, DEPTH_VOCAB, MAX_PARAM_TOKENS};
use ndarray::Array2;
use matformer_nn::{Linear, ParamStore, Tape, Transformer, TransformerConfig, Var};
use rand::Rng;

use crate::model::{concat_segments, last_row, stream_mean, ModelConfig};
use crate::nodes::NODE_POSITIONS;
use crate::GenError;

pub const PARAM_POSITIONS: usize = MAX_PARAM_TOKENS + 3;

#[derive(Debug, Clone)]
pub struct ParamNet {
    /// Bidirectional encoder over the full node sequence.
    pub encoder: Transformer,
    pub decoder: Transformer,
    pub value_head: Linear,
    pub index_head: Linear,
}

impl ParamNet {
    pub fn new(store: &mut ParamStore, codec: &Codec, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, GenError> {
        let v = &codec.vocab;
        let max_vector = codec.library.schemas().flat_map(|s| &s.params).map(|p| p.vector_dim).max().unwrap_or(1);
        let enc = TransformerConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            dim: cfg.dim,
            stream_vocab: vec![v.type_size(), DEPTH_VOCAB, NODE_POSITIONS],
            causal: false,
            conditional: false,
        };
        let dec = TransformerConfig {
            layers: cfg.layers,
            heads: cfg.heads,
            dim: cfg.dim,
            stream_vocab: vec![
                v.value_size(),
                v.max_params,
                PARAM_POSITIONS,
                max_vector + 1,
                MAX_PARAM_TOKENS + 1,
                v.max_params + 1,
            ],
            causal: true,
            conditional: true,
        };
        Ok(ParamNet {
            encoder: Transformer::new(store, "params.node_encoder", enc, rng)?,
            decoder: Transformer::new(store, "params", dec, rng)?,
            value_head: Linear::new(store, "params.value_head", cfg.dim, v.value_size(), rng),
            index_head: Linear::new(store, "params.index_head", cfg.dim, v.max_params, rng),
        })
    }

    /// Encoder rows for each node sequence; node `j` sits at row `j + 1` of its segment.
    fn encode(&self, tape: &mut Tape, store: &ParamStore, seqs: &[&NodeSequence]) -> Result<(Var, Vec<(usize, usize)>), GenError> {
        let types: Vec<&[u32]> = seqs.iter().map(|s| &s.types[..]).collect();
        let depths: Vec<&[u32]> = seqs.iter().map(|s| &s.depths[..]).collect();
        let positions: Vec<&[u32]> = seqs.iter().map(|s| &s.positions[..]).collect();
        let (t, segments) = concat_segments(&types);
        let (d, _) = concat_segments(&depths);
        let (p, _) = concat_segments(&positions);
        let h = self.encoder.forward(tape, store, &[&t, &d, &p], &segments, None)?;
        Ok((h, segments))
    }

    /// Runs the decoder on parameter prefixes, each conditioned on row `cond_rows[i]` of `embeddings`.
    fn heads(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prefixes: &[&ParamSequence],
        embeddings: Var,
        cond_rows: &[usize],
    ) -> Result<(Var, Var), GenError> {
        let pick = |f: fn(&ParamSequence) -> &[u32]| -> (Vec<u32>, Vec<(usize, usize)>) {
            let parts: Vec<&[u32]> = prefixes.iter().map(|s| f(s)).collect();
            concat_segments(&parts)
        };
        let (values, segments) = pick(|s| &s.values);
        let (indices, _) = pick(|s| &s.indices);
        let (positions, _) = pick(|s| &s.positions);
        let (vector, _) = pick(|s| &s.vector_idx);
        let (array, _) = pick(|s| &s.array_idx);
        let (ordinals, _) = pick(|s| &s.ordinals);
        let rows: Vec<usize> =
            segments.iter().zip(cond_rows).flat_map(|(&(_, len), &r)| std::iter::repeat_n(r, len)).collect();
        let cond = tape.gather_rows(embeddings, &rows);
        let h = self.decoder.forward(
            tape,
            store,
            &[&values, &indices, &positions, &vector, &array, &ordinals],
            &segments,
            Some(cond),
        )?;
        Ok((self.value_head.forward(tape, store, h), self.index_head.forward(tape, store, h)))
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&TokenizedGraph]) -> Result<Var, GenError> {
        let node_seqs: Vec<&NodeSequence> = batch.iter().map(|g| &g.nodes).collect();
        let (enc, enc_segments) = self.encode(tape, store, &node_seqs)?;
        let mut inputs = Vec::new();
        let mut cond_rows = Vec::new();
        let mut value_targets = Vec::new();
        let mut index_targets = Vec::new();
        for (g, &(start, _)) in batch.iter().zip(&enc_segments) {
            for (j, seq) in g.params.iter().enumerate() {
                inputs.push(truncate(seq, seq.len() - 1));
                cond_rows.push(start + j + 1);
                value_targets.extend(seq.values[1..].iter().map(|&v| Some(v as usize)));
                index_targets.extend(seq.indices[1..].iter().map(|&k| Some(k as usize)));
            }
        }
        if inputs.is_empty() {
            return Ok(tape.constant(Array2::zeros((1, 1))));
        }
        let refs: Vec<&ParamSequence> = inputs.iter().collect();
        let (vl, kl) = self.heads(tape, store, &refs, enc, &cond_rows)?;
        stream_mean(tape, &[(vl, value_targets), (kl, index_targets)])
    }

    /// Encoder output for one complete node sequence, `len × dim`.
    pub fn node_embeddings(&self, store: &ParamStore, nodes: &NodeSequence) -> Result<Array2<f64>, GenError> {
        let mut tape = Tape::new();
        let (h, _) = self.encode(&mut tape, store, &[nodes])?;
        Ok(tape.value(h).clone())
    }

    /// Value and index logits for the token following `prefix`, conditioned on `embedding` (`1 × dim`).
    pub fn next_logits(
        &self,
        store: &ParamStore,
        embedding: &Array2<f64>,
        prefix: &ParamSequence,
    ) -> Result<(Vec<f64>, Vec<f64>), GenError> {
        let mut tape = Tape::new();
        let e = tape.constant(embedding.clone());
        let (vl, kl) = self.heads(&mut tape, store, &[prefix], e, &[0])?;
        Ok((last_row(&tape, vl), last_row(&tape, kl)))
    }
}

fn truncate(s: &ParamSequence, n: usize) -> ParamSequence {
    ParamSequence {
        values: s.values[..n].to_vec(),
        indices: s.indices[..n].to_vec(),
        positions: s.positions[..n].to_vec(),
        vector_idx: s.vector_idx[..n].to_vec(),
        array_idx: s.array_idx[..n].to_vec(),
        ordinals: s.ordinals[..n].to_vec(),
    }
}
