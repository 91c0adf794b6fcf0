use std::collections::BTreeMap;

use crate::graph::{MaterialGraph, NodeId, ParamValue};
use crate::schema::{OperatorSchema, ParamKind};

use super::quantize::{QuantKey, Quantizer};
use super::{SequenceError, Vocab, MAX_PARAM_TOKENS};

/// Flattened non-default parameter values of one node with their side streams.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamSequence {
    pub values: Vec<u32>,
    /// Parameter index of each value; 0 at the start and stop tokens.
    pub indices: Vec<u32>,
    pub positions: Vec<u32>,
    /// 1-based component within the vector; 0 at start/stop.
    pub vector_idx: Vec<u32>,
    /// 1-based entry within an array parameter; 0 for non-arrays.
    pub array_idx: Vec<u32>,
    /// 1-based ordinal of the parameter within this sequence.
    pub ordinals: Vec<u32>,
}

impl ParamSequence {
    pub fn start(vocab: &Vocab) -> Self {
        let mut s = ParamSequence::default();
        s.push_raw(vocab.value_alpha(), 0, (0, 0, 0));
        s
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push_raw(&mut self, value: u32, index: u32, side: (u32, u32, u32)) {
        self.values.push(value);
        self.indices.push(index);
        self.positions.push(self.positions.len() as u32 + 1);
        self.vector_idx.push(side.0);
        self.array_idx.push(side.1);
        self.ordinals.push(side.2);
    }

    pub fn close(&mut self, vocab: &Vocab) {
        self.push_raw(vocab.value_omega(), 0, (0, 0, 0));
    }

    pub fn is_closed(&self, vocab: &Vocab) -> bool {
        self.values.last() == Some(&vocab.value_omega())
    }

    /// `(param index, value token)` pairs between start and the first stop.
    pub fn interior_pairs(&self, vocab: &Vocab) -> Vec<(usize, u32)> {
        self.values
            .iter()
            .zip(&self.indices)
            .skip(1)
            .take_while(|(&v, _)| v != vocab.value_omega())
            .map(|(&v, &k)| (k as usize, v))
            .collect()
    }
}

/// Tracks which parameters may follow a partial parameter sequence.
///
/// Vectors must be completed before moving on, indices never decrease, and
/// array parameters may repeat once per complete entry.
#[derive(Debug, Clone, Default)]
pub struct ParamCursor {
    current: Option<usize>,
    count: usize,
    ordinal: u32,
    tokens: usize,
}

impl ParamCursor {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    fn complete(&self, schema: &OperatorSchema) -> bool {
        match self.current {
            None => true,
            Some(k) => {
                let p = &schema.params[k];
                match p.kind {
                    ParamKind::Array => self.count % p.vector_dim == 0,
                    _ => self.count >= p.vector_dim,
                }
            }
        }
    }

    pub fn can_stop(&self, schema: &OperatorSchema) -> bool {
        self.complete(schema)
    }

    pub fn legal_params(&self, schema: &OperatorSchema) -> Vec<usize> {
        let room = MAX_PARAM_TOKENS - self.tokens.min(MAX_PARAM_TOKENS);
        if !self.complete(schema) {
            return if room > 0 { vec![self.current.expect("incomplete implies current")] } else { Vec::new() };
        }
        let mut out = Vec::new();
        if let Some(k) = self.current {
            let p = &schema.params[k];
            if p.kind == ParamKind::Array && room >= p.vector_dim {
                out.push(k);
            }
        }
        let start = self.current.map_or(0, |k| k + 1);
        out.extend((start..schema.params.len()).filter(|&k| room >= schema.params[k].vector_dim));
        out
    }

    /// Side-stream values `(vector, array, ordinal)` for a token of parameter `k`.
    pub fn side(&self, schema: &OperatorSchema, k: usize) -> (u32, u32, u32) {
        let p = &schema.params[k];
        let continuing = self.current == Some(k);
        let n = if continuing { self.count } else { 0 };
        let pv = (n % p.vector_dim) as u32 + 1;
        let pa = if p.kind == ParamKind::Array { (n / p.vector_dim) as u32 + 1 } else { 0 };
        let pp = if continuing { self.ordinal } else { self.ordinal + 1 };
        (pv, pa, pp)
    }

    pub fn push(&mut self, k: usize) {
        if self.current != Some(k) {
            self.current = Some(k);
            self.count = 0;
            self.ordinal += 1;
        }
        self.count += 1;
        self.tokens += 1;
    }
}

/// Number of value tokens a parameter admits.
pub fn value_range(schema: &OperatorSchema, k: usize, levels: usize) -> usize {
    let p = &schema.params[k];
    if p.is_discrete {
        p.discrete_range()
    } else {
        levels
    }
}

pub fn encode_params(
    graph: &MaterialGraph,
    id: NodeId,
    quantizer: &Quantizer,
    vocab: &Vocab,
) -> Result<ParamSequence, SequenceError> {
    let node = &graph.nodes()[id];
    let schema = graph.schema(id);
    let total: usize = node.params.iter().map(|p| p.values.len()).sum();
    if total > MAX_PARAM_TOKENS {
        return Err(SequenceError::Overflow { what: "parameter", len: total, max: MAX_PARAM_TOKENS });
    }
    let mut seq = ParamSequence::start(vocab);
    let mut cursor = ParamCursor::default();
    for pv in &node.params {
        let k = pv.param_index;
        let ps = &schema.params[k];
        for (i, &v) in pv.values.iter().enumerate() {
            let token = if ps.is_discrete {
                (v - ps.min_value).round() as u32
            } else {
                quantizer.quantize(v, QuantKey { op: node.op.0, param: k, component: i % ps.vector_dim })? as u32
            };
            seq.push_raw(token, k as u32, cursor.side(schema, k));
            cursor.push(k);
        }
    }
    seq.close(vocab);
    Ok(seq)
}

/// Rebuilds sparse parameter values from `(param index, value token)` pairs.
///
/// Short vectors are padded with defaults and arrays are truncated to whole
/// entries; parameters left with no complete entry are dropped.
pub fn decode_params(
    schema: &OperatorSchema,
    pairs: &[(usize, u32)],
    quantizer: &Quantizer,
) -> Result<Vec<ParamValue>, SequenceError> {
    let mut grouped: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for &(k, v) in pairs {
        if k >= schema.params.len() {
            return Err(SequenceError::Decode(format!(
                "parameter index {k} out of range for `{}` ({} parameters)",
                schema.name,
                schema.params.len()
            )));
        }
        grouped.entry(k).or_default().push(v);
    }
    let mut out = Vec::new();
    for (k, tokens) in grouped {
        let ps = &schema.params[k];
        let mut values = Vec::with_capacity(tokens.len());
        for (i, &t) in tokens.iter().enumerate() {
            let v = if ps.is_discrete {
                if t as usize >= ps.discrete_range() {
                    return Err(SequenceError::Decode(format!("value token {t} outside `{}` range", ps.name)));
                }
                ps.min_value + t as f64
            } else {
                let key = QuantKey { op: schema.op_type.0, param: k, component: i % ps.vector_dim };
                quantizer.dequantize(t as usize, key)?.clamp(ps.min_value, ps.max_value)
            };
            values.push(v);
        }
        match ps.kind {
            ParamKind::Array => {
                let whole = values.len() / ps.vector_dim * ps.vector_dim;
                values.truncate(whole);
                if values.is_empty() {
                    continue;
                }
            }
            _ => {
                values.truncate(ps.vector_dim);
                let n = values.len();
                values.extend_from_slice(&ps.default_value[n..]);
            }
        }
        out.push(ParamValue::new(k, values));
    }
    Ok(out)
}
