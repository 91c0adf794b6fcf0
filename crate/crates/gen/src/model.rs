//! Stage model container, shared loss helpers and checkpoint metadata.

use matformer_core::sequencer::{Codec, NodeOrdering, Quantizer, TokenizedGraph};
use matformer_nn::{Checkpoint, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edges::EdgeNet;
use crate::nodes::NodeNet;
use crate::params::ParamNet;
use crate::train::TrainState;
use crate::{GenError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: 2, heads: 4, dim: 64 }
    }
}

impl ModelConfig {
    /// Smallest useful size, for gradient checks.
    pub fn micro() -> Self {
        ModelConfig { layers: 1, heads: 2, dim: 8 }
    }
}

pub const STAGE_FORMAT: &str = "matformer-stage";

/// JSON record stored in the config field of a stage checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub format: String,
    pub stage: Stage,
    pub ordering: NodeOrdering,
    pub model: ModelConfig,
    pub library_version: String,
    pub library_hash: String,
    pub quantizer_hash: String,
    /// Present in resumable training checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainState>,
}

#[derive(Debug, Clone)]
pub enum Net {
    Nodes(NodeNet),
    Params(ParamNet),
    Edges(EdgeNet),
}

/// One trained (or trainable) stage: weights plus the network layout.
#[derive(Debug, Clone)]
pub struct StageModel {
    pub stage: Stage,
    pub ordering: NodeOrdering,
    pub config: ModelConfig,
    pub store: ParamStore,
    pub net: Net,
}

impl StageModel {
    pub fn new(stage: Stage, ordering: NodeOrdering, codec: &Codec, config: ModelConfig, seed: u64) -> Result<Self, GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match stage {
            Stage::Nodes => Net::Nodes(NodeNet::new(&mut store, codec, &config, &mut rng)?),
            Stage::Params => Net::Params(ParamNet::new(&mut store, codec, &config, &mut rng)?),
            Stage::Edges => Net::Edges(EdgeNet::new(&mut store, codec, &config, &mut rng)?),
        };
        Ok(StageModel { stage, ordering, config, store, net })
    }

    /// Mean teacher-forced loss of `batch` under the weights in `store`.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &[&TokenizedGraph]) -> Result<Var, GenError> {
        match &self.net {
            Net::Nodes(n) => n.loss(tape, store, batch),
            Net::Params(n) => n.loss(tape, store, batch),
            Net::Edges(n) => n.loss(tape, store, batch),
        }
    }

    pub fn loss_value(&self, batch: &[&TokenizedGraph]) -> Result<f64, GenError> {
        let mut tape = Tape::new();
        let l = self.loss(&mut tape, &self.store, batch)?;
        Ok(tape.scalar(l))
    }

    pub fn meta(&self, codec: &Codec, train: Option<TrainState>) -> StageMeta {
        StageMeta {
            format: STAGE_FORMAT.into(),
            stage: self.stage,
            ordering: self.ordering,
            model: self.config,
            library_version: codec.library.version().into(),
            library_hash: codec.library.content_hash().into(),
            quantizer_hash: codec.quantizer.content_hash(),
            train,
        }
    }

    pub fn to_checkpoint(&self, codec: &Codec) -> Result<Checkpoint, GenError> {
        let meta = serde_json::to_string(&self.meta(codec, None))?;
        Ok(Checkpoint::from_store(meta, serde_json::to_string(&codec.quantizer)?, &self.store, None))
    }

    /// Rebuilds a stage from a checkpoint; the library hash must match `codec`.
    /// The quantizer stored in the checkpoint is returned alongside.
    pub fn from_checkpoint(ck: &Checkpoint, codec: &Codec) -> Result<(Self, StageMeta), GenError> {
        let meta = read_meta(ck)?;
        if meta.library_hash != codec.library.content_hash() {
            return Err(GenError::Incompatible(format!(
                "checkpoint was trained on library {} ({}), loaded library is {} ({})",
                meta.library_version,
                meta.library_hash,
                codec.library.version(),
                codec.library.content_hash()
            )));
        }
        if meta.quantizer_hash != codec.quantizer.content_hash() {
            return Err(GenError::Incompatible("checkpoint quantizer differs from the codec's".into()));
        }
        let mut model = StageModel::new(meta.stage, meta.ordering, codec, meta.model, 0)?;
        ck.restore(&mut model.store)?;
        Ok((model, meta))
    }
}

pub fn read_meta(ck: &Checkpoint) -> Result<StageMeta, GenError> {
    let meta: StageMeta = serde_json::from_str(&ck.config)?;
    if meta.format != STAGE_FORMAT {
        return Err(GenError::Incompatible(format!("unknown checkpoint format `{}`", meta.format)));
    }
    Ok(meta)
}

pub fn read_quantizer(ck: &Checkpoint) -> Result<Quantizer, GenError> {
    Ok(serde_json::from_str(&ck.quantizer)?)
}

// Shared helpers ------------------------------------------------------------

/// Concatenates row blocks; returns the rows and their `(start, len)` segments.
pub(crate) fn concat_segments<T: Copy>(parts: &[&[T]]) -> (Vec<T>, Vec<(usize, usize)>) {
    let mut rows = Vec::new();
    let mut segments = Vec::with_capacity(parts.len());
    for p in parts {
        segments.push((rows.len(), p.len()));
        rows.extend_from_slice(p);
    }
    (rows, segments)
}

/// Mean cross-entropy of each output stream, averaged over the streams that
/// have at least one target.
pub(crate) fn stream_mean(tape: &mut Tape, streams: &[(Var, Vec<Option<usize>>)]) -> Result<Var, GenError> {
    let mut terms = Vec::new();
    for (logits, targets) in streams {
        let count = targets.iter().flatten().count();
        if count == 0 {
            continue;
        }
        let ce = tape.cross_entropy_sum(*logits, targets);
        terms.push(tape.scale(ce, 1.0 / count as f64));
    }
    let n = terms.len();
    let mut acc = *terms.first().ok_or_else(|| GenError::Request("batch has no targets".into()))?;
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    Ok(tape.scale(acc, 1.0 / n as f64))
}

/// Logits of the last row of `v` as a plain vector.
pub(crate) fn last_row(tape: &Tape, v: Var) -> Vec<f64> {
    let a = tape.value(v);
    a.row(a.nrows() - 1).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_rows() {
        let (rows, segs) = concat_segments(&[&[1, 2][..], &[][..], &[3][..]]);
        assert_eq!(rows, vec![1, 2, 3]);
        assert_eq!(segs, vec![(0, 2), (2, 0), (2, 1)]);
    }
}
