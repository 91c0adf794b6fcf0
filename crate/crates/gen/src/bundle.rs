//! The three trained stages packaged together with a manifest.

use std::path::Path;
use std::sync::Arc;

use matformer_core::sequencer::{Codec, NodeOrdering};
use matformer_core::Library;
use matformer_nn::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::edges::EdgeNet;
use crate::model::{read_quantizer, Net, StageModel};
use crate::nodes::NodeNet;
use crate::params::ParamNet;
use crate::{GenError, Stage};

pub const BUNDLE_MANIFEST: &str = "bundle.json";
const BUNDLE_FORMAT: &str = "matformer-bundle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub ordering: NodeOrdering,
    pub library_version: String,
    pub library_hash: String,
    pub quantizer_hash: String,
    pub nodes: String,
    pub params: String,
    pub edges: String,
}

/// Everything needed to sample graphs: codec plus one model per stage.
#[derive(Debug, Clone)]
pub struct Models {
    pub codec: Codec,
    pub ordering: NodeOrdering,
    pub nodes: StageModel,
    pub params: StageModel,
    pub edges: StageModel,
}

pub fn stage_file(stage: Stage) -> String {
    format!("{stage}.mfck")
}

impl Models {
    pub fn new(codec: Codec, nodes: StageModel, params: StageModel, edges: StageModel) -> Result<Self, GenError> {
        for (m, want) in [(&nodes, Stage::Nodes), (&params, Stage::Params), (&edges, Stage::Edges)] {
            if m.stage != want {
                return Err(GenError::Incompatible(format!("expected a {want} model, got a {} model", m.stage)));
            }
        }
        let ordering = nodes.ordering;
        if params.ordering != ordering || edges.ordering != ordering {
            return Err(GenError::Incompatible(format!(
                "stages were trained with different orderings ({}, {}, {})",
                nodes.ordering, params.ordering, edges.ordering
            )));
        }
        Ok(Models { codec, ordering, nodes, params, edges })
    }

    pub fn node_net(&self) -> &NodeNet {
        match &self.nodes.net {
            Net::Nodes(n) => n,
            _ => unreachable!("checked in Models::new"),
        }
    }

    pub fn param_net(&self) -> &ParamNet {
        match &self.params.net {
            Net::Params(n) => n,
            _ => unreachable!("checked in Models::new"),
        }
    }

    pub fn edge_net(&self) -> &EdgeNet {
        match &self.edges.net {
            Net::Edges(n) => n,
            _ => unreachable!("checked in Models::new"),
        }
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            format: BUNDLE_FORMAT.into(),
            ordering: self.ordering,
            library_version: self.codec.library.version().into(),
            library_hash: self.codec.library.content_hash().into(),
            quantizer_hash: self.codec.quantizer.content_hash(),
            nodes: stage_file(Stage::Nodes),
            params: stage_file(Stage::Params),
            edges: stage_file(Stage::Edges),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), GenError> {
        std::fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (m, file) in [(&self.nodes, &manifest.nodes), (&self.params, &manifest.params), (&self.edges, &manifest.edges)] {
            m.to_checkpoint(&self.codec)?.save(&dir.join(file))?;
        }
        std::fs::write(dir.join(BUNDLE_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Builds a bundle from per-stage checkpoints; the quantizer comes from the node checkpoint.
    pub fn from_checkpoints(library: Arc<Library>, checkpoints: [&Checkpoint; 3]) -> Result<Self, GenError> {
        let quantizer = read_quantizer(checkpoints[0])?;
        let codec = Codec::new(library, quantizer);
        let [n, p, e] = checkpoints.map(|ck| StageModel::from_checkpoint(ck, &codec).map(|(m, _)| m));
        Models::new(codec.clone(), n?, p?, e?)
    }

    /// Loads a bundle directory, refusing it if it was built for a different library.
    pub fn load(dir: &Path, library: Arc<Library>) -> Result<Self, GenError> {
        let manifest: BundleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(BUNDLE_MANIFEST))?)?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(GenError::Incompatible(format!("unknown bundle format `{}`", manifest.format)));
        }
        if manifest.library_hash != library.content_hash() {
            return Err(GenError::Incompatible(format!(
                "bundle was trained on library {} ({}), loaded library is {} ({})",
                manifest.library_version,
                manifest.library_hash,
                library.version(),
                library.content_hash()
            )));
        }
        let load = |f: &str| Checkpoint::load(&dir.join(f));
        let (n, p, e) = (load(&manifest.nodes)?, load(&manifest.params)?, load(&manifest.edges)?);
        let models = Models::from_checkpoints(library, [&n, &p, &e])?;
        if models.codec.quantizer.content_hash() != manifest.quantizer_hash {
            return Err(GenError::Incompatible("bundle quantizer hash does not match its checkpoints".into()));
        }
        if models.ordering != manifest.ordering {
            return Err(GenError::Incompatible("bundle ordering does not match its checkpoints".into()));
        }
        Ok(models)
    }
}
