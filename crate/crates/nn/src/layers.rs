//! Transformer building blocks on top of the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::NnError;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: store.normal(&format!("{name}.weight"), input, output, rng),
            bias: store.zeros(&format!("{name}.bias"), 1, output),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Norm { gamma: store.ones(&format!("{name}.gamma"), 1, dim), beta: store.zeros(&format!("{name}.beta"), 1, dim) }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Hidden-layer GELU network: `Linear → (GELU → Linear)*`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = tape.gelu(x);
            }
            x = l.forward(tape, store, x);
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Vocabulary size of each input stream; stream embeddings are summed.
    pub stream_vocab: Vec<usize>,
    pub causal: bool,
    /// Adds a condition path to every feed-forward block.
    pub conditional: bool,
}

impl TransformerConfig {
    pub fn check(&self) -> Result<(), NnError> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(NnError::Config(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if self.stream_vocab.is_empty() || self.stream_vocab.contains(&0) {
            return Err(NnError::Config("every stream needs a non-empty vocabulary".into()));
        }
        Ok(())
    }
}

/// Pre-norm block; the feed-forward part optionally adds `MLP_c(LN_c(c))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln_attn: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_ff: Norm,
    pub ff: Mlp,
    pub cond: Option<(Norm, Mlp)>,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.dim;
        let cond = cfg.conditional.then(|| {
            (Norm::new(store, &format!("{name}.cond_ln"), d), Mlp::new(store, &format!("{name}.cond_mlp"), &[d, d, d, d], rng))
        });
        Block {
            ln_attn: Norm::new(store, &format!("{name}.attn_ln"), d),
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            out: Linear::new(store, &format!("{name}.attn_out"), d, d, rng),
            ln_ff: Norm::new(store, &format!("{name}.ff_ln"), d),
            ff: Mlp::new(store, &format!("{name}.ff"), &[d, 4 * d, d], rng),
            cond,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cfg: &TransformerConfig,
        x: Var,
        segments: &[(usize, usize)],
        cond: Option<Var>,
    ) -> Var {
        let h = self.ln_attn.forward(tape, store, x);
        let q = self.query.forward(tape, store, h);
        let k = self.key.forward(tape, store, h);
        let v = self.value.forward(tape, store, h);
        let a = tape.attention(q, k, v, cfg.heads, segments, cfg.causal);
        let a = self.out.forward(tape, store, a);
        let x = tape.add(x, a);
        self.feed_forward(tape, store, x, cond)
    }

    /// `x + MLP(LN(x)) [+ MLP_c(LN_c(c))]`
    pub fn feed_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, cond: Option<Var>) -> Var {
        let h = self.ln_ff.forward(tape, store, x);
        let f = self.ff.forward(tape, store, h);
        let mut y = tape.add(x, f);
        if let (Some((ln, mlp)), Some(c)) = (&self.cond, cond) {
            let hc = ln.forward(tape, store, c);
            let fc = mlp.forward(tape, store, hc);
            y = tape.add(y, fc);
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub embeddings: Vec<ParamId>,
    pub blocks: Vec<Block>,
    pub ln_final: Norm,
}

impl Transformer {
    pub fn new(store: &mut ParamStore, name: &str, config: TransformerConfig, rng: &mut impl Rng) -> Result<Self, NnError> {
        config.check()?;
        let embeddings = config
            .stream_vocab
            .iter()
            .enumerate()
            .map(|(i, &v)| store.normal(&format!("{name}.embed{i}"), v, config.dim, rng))
            .collect();
        let blocks = (0..config.layers).map(|l| Block::new(store, &format!("{name}.block{l}"), &config, rng)).collect();
        let ln_final = Norm::new(store, &format!("{name}.final_ln"), config.dim);
        Ok(Transformer { config, embeddings, blocks, ln_final })
    }

    /// Sum of per-stream token embeddings, `rows × dim`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, streams: &[&[u32]]) -> Result<Var, NnError> {
        if streams.len() != self.embeddings.len() {
            return Err(NnError::Shape(format!("expected {} streams, got {}", self.embeddings.len(), streams.len())));
        }
        let rows = streams[0].len();
        let mut acc: Option<Var> = None;
        for (s, (&table, tokens)) in self.embeddings.iter().zip(streams).enumerate() {
            if tokens.len() != rows {
                return Err(NnError::Shape(format!("stream {s} has {} tokens, stream 0 has {rows}", tokens.len())));
            }
            let vocab = self.config.stream_vocab[s];
            if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
                return Err(NnError::Shape(format!("token {t} outside stream {s} vocabulary of {vocab}")));
            }
            let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
            let tv = tape.param(store, table);
            let e = tape.gather_rows(tv, &ids);
            acc = Some(match acc {
                Some(a) => tape.add(a, e),
                None => e,
            });
        }
        acc.ok_or_else(|| NnError::Shape("no input streams".into()))
    }

    /// Runs the blocks on precomputed input rows; returns normalized features.
    pub fn forward_embedded(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: Var,
        segments: &[(usize, usize)],
        cond: Option<Var>,
    ) -> Result<Var, NnError> {
        let rows = tape.value(x).nrows();
        if segments.iter().map(|s| s.1).sum::<usize>() != rows || segments.iter().any(|s| s.0 + s.1 > rows) {
            return Err(NnError::Shape(format!("segments do not tile {rows} rows")));
        }
        if let Some(c) = cond {
            if tape.value(c).dim() != (rows, self.config.dim) {
                return Err(NnError::Shape(format!("condition shape {:?}", tape.value(c).dim())));
            }
        }
        for b in &self.blocks {
            x = b.forward(tape, store, &self.config, x, segments, cond);
        }
        Ok(self.ln_final.forward(tape, store, x))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        streams: &[&[u32]],
        segments: &[(usize, usize)],
        cond: Option<Var>,
    ) -> Result<Var, NnError> {
        let x = self.embed(tape, store, streams)?;
        self.forward_embedded(tape, store, x, segments, cond)
    }
}

/// Pointer-head logits: dot products of each query row with each key row.
pub fn pointer_logits(tape: &mut Tape, queries: Var, keys: Var) -> Var {
    tape.matmul_nt(queries, keys)
}

/// Numerically stable softmax of a slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Pointer distribution over keys for one query vector.
pub fn pointer_distribution(query: &[f64], keys: &[Vec<f64>]) -> Result<Vec<f64>, NnError> {
    if keys.is_empty() {
        return Err(NnError::Shape("pointer over an empty slot list".into()));
    }
    let logits = keys
        .iter()
        .map(|k| {
            if k.len() != query.len() {
                return Err(NnError::Shape(format!("key of length {} for query of length {}", k.len(), query.len())));
            }
            Ok(k.iter().zip(query).map(|(a, b)| a * b).sum())
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(softmax(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pointer_closed_form() {
        let q = vec![1.0, 0.0];
        let keys = vec![vec![0.0, 5.0], vec![2f64.ln(), 1.0], vec![4f64.ln(), -3.0]];
        let p = pointer_distribution(&q, &keys).unwrap();
        for (a, b) in p.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pointer_uniform_and_saturated() {
        let p = pointer_distribution(&[0.3, 0.4], &vec![vec![1.0, 1.0]; 4]).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-12));
        let p = pointer_distribution(&[1.0], &[vec![0.0], vec![1000.0], vec![1.0]]).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-12);
        assert!(pointer_distribution(&[1.0], &[]).is_err());
    }

    #[test]
    fn mismatched_streams_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = TransformerConfig { layers: 1, heads: 2, dim: 8, stream_vocab: vec![5, 3], causal: true, conditional: false };
        let t = Transformer::new(&mut store, "m", cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        assert!(t.forward(&mut tape, &store, &[&[1, 2], &[0]], &[(0, 2)], None).is_err());
        assert!(t.forward(&mut tape, &store, &[&[1, 7], &[0, 0]], &[(0, 2)], None).is_err());
        assert!(t.forward(&mut tape, &store, &[&[1, 2], &[0, 0]], &[(0, 2)], None).is_ok());
        let bad = TransformerConfig { dim: 9, ..t.config.clone() };
        assert!(Transformer::new(&mut ParamStore::new(), "m", bad, &mut rng).is_err());
        let c = tape.constant(Array2::zeros((1, 8)));
        assert!(t.forward(&mut tape, &store, &[&[1, 2], &[0, 0]], &[(0, 2)], Some(c)).is_err());
    }
}
