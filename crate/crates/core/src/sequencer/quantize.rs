//! Uniform quantization of continuous parameter components.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::MaterialGraph;
use crate::library::Library;

use super::SequenceError;

pub const LEVELS: usize = 32;

/// Identifies one scalar component of one operator parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuantKey {
    pub op: u32,
    pub param: usize,
    pub component: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Bound {
    key: QuantKey,
    min: f64,
    max: f64,
}

/// Per-component bounds for every continuous parameter in a library.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub levels: usize,
    bounds: BTreeMap<QuantKey, (f64, f64)>,
    /// Keys whose observed range was degenerate and had to be widened.
    widened: Vec<QuantKey>,
}

#[derive(Serialize, Deserialize)]
struct QuantizerRecord {
    levels: usize,
    bounds: Vec<Bound>,
    #[serde(default)]
    widened: Vec<QuantKey>,
}

impl Serialize for Quantizer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        QuantizerRecord {
            levels: self.levels,
            bounds: self.bounds.iter().map(|(&key, &(min, max))| Bound { key, min, max }).collect(),
            widened: self.widened.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Quantizer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = QuantizerRecord::deserialize(d)?;
        Ok(Quantizer {
            levels: r.levels,
            bounds: r.bounds.into_iter().map(|b| (b.key, (b.min, b.max))).collect(),
            widened: r.widened,
        })
    }
}

fn widen(min: f64, max: f64) -> (f64, f64, bool) {
    if max > min {
        (min, max, false)
    } else {
        let eps = f64::EPSILON * min.abs().max(1.0);
        (min, min + eps, true)
    }
}

impl Quantizer {
    /// Uses schema bounds for every continuous component.
    pub fn from_schema(library: &Library) -> Self {
        Self::fit(library, std::iter::empty())
    }

    /// Observed min/max over the explicit parameter values of `graphs`;
    /// components never observed fall back to schema bounds.
    pub fn fit<'a>(library: &Library, graphs: impl IntoIterator<Item = &'a MaterialGraph>) -> Self {
        let mut observed: BTreeMap<QuantKey, (f64, f64)> = BTreeMap::new();
        for g in graphs {
            for node in g.nodes() {
                let schema = g.schema(node.id);
                for pv in &node.params {
                    let ps = &schema.params[pv.param_index];
                    if ps.is_discrete {
                        continue;
                    }
                    for (i, &v) in pv.values.iter().enumerate() {
                        let key = QuantKey { op: node.op.0, param: pv.param_index, component: i % ps.vector_dim };
                        let entry = observed.entry(key).or_insert((v, v));
                        entry.0 = entry.0.min(v);
                        entry.1 = entry.1.max(v);
                    }
                }
            }
        }
        let mut bounds = BTreeMap::new();
        let mut widened = Vec::new();
        for schema in library.schemas() {
            for (k, ps) in schema.params.iter().enumerate() {
                if ps.is_discrete {
                    continue;
                }
                for c in 0..ps.vector_dim {
                    let key = QuantKey { op: schema.op_type.0, param: k, component: c };
                    let (lo, hi) = observed.get(&key).copied().unwrap_or((ps.min_value, ps.max_value));
                    let (lo, hi, w) = widen(lo, hi);
                    if w {
                        widened.push(key);
                    }
                    bounds.insert(key, (lo, hi));
                }
            }
        }
        Quantizer { levels: LEVELS, bounds, widened }
    }

    /// Builds a quantizer from explicit bounds; degenerate ranges are widened.
    pub fn from_bounds(levels: usize, bounds: impl IntoIterator<Item = (QuantKey, f64, f64)>) -> Self {
        let mut widened = Vec::new();
        let bounds = bounds
            .into_iter()
            .map(|(k, lo, hi)| {
                let (lo, hi, w) = widen(lo, hi);
                if w {
                    widened.push(k);
                }
                (k, (lo, hi))
            })
            .collect();
        Quantizer { levels, bounds, widened }
    }

    pub fn bounds(&self, key: QuantKey) -> Option<(f64, f64)> {
        self.bounds.get(&key).copied()
    }

    pub fn widened(&self) -> &[QuantKey] {
        &self.widened
    }

    pub fn bin_width(&self, key: QuantKey) -> Result<f64, SequenceError> {
        let (lo, hi) = self.bounds(key).ok_or(SequenceError::UnknownKey(key))?;
        Ok((hi - lo) / self.levels as f64)
    }

    pub fn quantize(&self, value: f64, key: QuantKey) -> Result<usize, SequenceError> {
        let (lo, hi) = self.bounds(key).ok_or(SequenceError::UnknownKey(key))?;
        let t = ((value - lo) / (hi - lo) * self.levels as f64).floor();
        Ok(t.clamp(0.0, (self.levels - 1) as f64) as usize)
    }

    /// Center of bin `level`.
    pub fn dequantize(&self, level: usize, key: QuantKey) -> Result<f64, SequenceError> {
        let (lo, hi) = self.bounds(key).ok_or(SequenceError::UnknownKey(key))?;
        let level = level.min(self.levels - 1);
        Ok(lo + (level as f64 + 0.5) / self.levels as f64 * (hi - lo))
    }

    /// Whether the quantizer covers every continuous component of `library`.
    pub fn covers(&self, library: &Library) -> bool {
        library.schemas().all(|s| {
            s.params.iter().enumerate().all(|(k, p)| {
                p.is_discrete
                    || (0..p.vector_dim).all(|c| self.bounds.contains_key(&QuantKey { op: s.op_type.0, param: k, component: c }))
            })
        })
    }

    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("quantizer serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KEY: QuantKey = QuantKey { op: 0, param: 0, component: 0 };

    fn unit() -> Quantizer {
        Quantizer::from_bounds(32, [(KEY, 0.0, 1.0)])
    }

    proptest! {
        #[test]
        fn json_round_trip_keeps_hash(lo in -1e3f64..1e3, span in 1e-9f64..1e3) {
            let q = Quantizer::from_bounds(32, [(KEY, lo, lo + span)]);
            let back: Quantizer = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
            prop_assert_eq!(back.content_hash(), q.content_hash());
            prop_assert_eq!(back, q);
        }
    }

    #[test]
    fn endpoints_and_center() {
        let q = unit();
        assert_eq!(q.quantize(0.0, KEY).unwrap(), 0);
        assert_eq!(q.quantize(1.0, KEY).unwrap(), 31);
        assert_eq!(q.quantize(0.5, KEY).unwrap(), 16);
        assert_eq!(q.dequantize(16, KEY).unwrap(), (16.0 + 0.5) / 32.0);
        assert_eq!(q.dequantize(16, KEY).unwrap(), 0.515625);
    }

    #[test]
    fn unknown_key_errors() {
        let q = unit();
        let other = QuantKey { op: 1, param: 0, component: 0 };
        assert!(matches!(q.quantize(0.2, other), Err(SequenceError::UnknownKey(_))));
    }

    #[test]
    fn degenerate_range_is_widened() {
        let q = Quantizer::from_bounds(32, [(KEY, 0.3, 0.3)]);
        let (lo, hi) = q.bounds(KEY).unwrap();
        assert!(hi > lo);
        assert_eq!(q.widened(), &[KEY]);
        assert_eq!(q.quantize(0.3, KEY).unwrap(), 0);
    }

    #[test]
    fn builtin_schema_coverage_and_serde() {
        let lib = Library::builtin();
        let q = Quantizer::from_schema(&lib);
        assert!(q.covers(&lib));
        let json = serde_json::to_string(&q).unwrap();
        let back: Quantizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, q);
        assert_eq!(back.content_hash(), q.content_hash());
    }

    proptest! {
        #[test]
        fn dequantize_then_quantize_is_identity(lo in -10.0f64..10.0, span in 1e-3f64..20.0, level in 0usize..32) {
            let q = Quantizer::from_bounds(32, [(KEY, lo, lo + span)]);
            let v = q.dequantize(level, KEY).unwrap();
            prop_assert_eq!(q.quantize(v, KEY).unwrap(), level);
        }

        #[test]
        fn error_within_half_bin(lo in -10.0f64..10.0, span in 1e-3f64..20.0, t in 0.0f64..=1.0) {
            let q = Quantizer::from_bounds(32, [(KEY, lo, lo + span)]);
            let v = lo + t * span;
            let back = q.dequantize(q.quantize(v, KEY).unwrap(), KEY).unwrap();
            prop_assert!((back - v).abs() <= q.bin_width(KEY).unwrap() / 2.0 + 1e-12);
        }
    }
}
