//! Synthetic corpus generation: template graphs, parameter augmentation,
//! size filtering, train/validation split and the on-disk corpus layout.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Edge, MaterialGraph, ParamValue, SlotRef};
use crate::graphfile::{self, GraphFileError};
use crate::library::Library;
use crate::schema::{MaterialChannel, OperatorType, ParamKind, ParamSchema};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("need at least {needed} base graphs to hold out {held_out}, found {found}")]
    TooFewBases { needed: usize, held_out: usize, found: usize },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: GraphFileError },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub graph_count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub augmentations: usize,
    pub validation_bases: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { graph_count: 200, min_nodes: 5, max_nodes: 120, augmentations: 100, validation_bases: 5, seed: 0 }
    }
}

impl CorpusSpec {
    pub fn check(&self) -> Result<(), DatasetError> {
        if self.graph_count == 0 {
            return Err(DatasetError::Spec("graph count must be at least 1".into()));
        }
        if self.augmentations == 0 {
            return Err(DatasetError::Spec("augmentations must be at least 1".into()));
        }
        if self.min_nodes < 5 || self.min_nodes > self.max_nodes {
            return Err(DatasetError::Spec(format!(
                "node range [{}, {}] must satisfy 5 <= min <= max",
                self.min_nodes, self.max_nodes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub max_nodes: usize,
    pub max_edges: usize,
    pub max_input_slots: usize,
    pub max_output_slots: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds { max_nodes: 400, max_edges: 700, max_input_slots: 21, max_output_slots: 14 }
    }
}

/// Per-criterion violation counts; a graph failing several criteria counts once in each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub too_many_nodes: usize,
    pub too_many_edges: usize,
    pub too_many_input_slots: usize,
    pub too_many_output_slots: usize,
    pub dropped: usize,
    pub retained: usize,
}

// Template builder ------------------------------------------------------

const GENERATORS: &[&str] =
    &["uniform_gray", "checker", "brick", "value_noise", "gradient_ramp", "polygon", "cell_noise"];
const FILTERS: &[&str] = &[
    "invert",
    "levels",
    "levels",
    "blur",
    "sharpen",
    "transform_2d",
    "tile",
    "threshold",
    "height_from_grayscale",
    "edge_detect",
];

/// Graph under construction; edges may be rewired before freezing.
struct Draft {
    lib: Arc<Library>,
    nodes: Vec<(OperatorType, Vec<ParamValue>)>,
    edges: Vec<(usize, usize, usize, usize)>,
}

impl Draft {
    fn op(&self, name: &str) -> OperatorType {
        self.lib.by_name(name).expect("builtin operator")
    }

    fn add(&mut self, name: &str, rng: &mut impl Rng) -> usize {
        let op = self.op(name);
        let schema = self.lib.schema(op).expect("builtin operator");
        let params = random_params(&schema.params, rng);
        self.nodes.push((op, params));
        self.nodes.len() - 1
    }

    fn connect(&mut self, src: usize, src_slot: usize, dst: usize, dst_slot: usize) {
        self.edges.push((src, src_slot, dst, dst_slot));
    }

    /// Inserts a one-in one-out node into edge `e`.
    fn splice(&mut self, e: usize, name: &str, rng: &mut impl Rng) -> usize {
        let (s, ss, d, ds) = self.edges[e];
        let f = self.add(name, rng);
        self.edges[e] = (s, ss, f, 0);
        self.connect(f, 0, d, ds);
        f
    }

    /// A generator followed by `len` random filters; returns the chain end.
    fn chain(&mut self, len: usize, rng: &mut impl Rng) -> usize {
        let mut last = self.add(GENERATORS.choose(rng).expect("non-empty"), rng);
        for _ in 0..len {
            let f = self.add(FILTERS.choose(rng).expect("non-empty"), rng);
            self.connect(last, 0, f, 0);
            last = f;
        }
        last
    }

    fn freeze(self) -> MaterialGraph {
        MaterialGraph::from_parts(
            self.lib,
            self.nodes,
            self.edges.into_iter().map(|(s, ss, d, ds)| Edge { from: SlotRef::output(s, ss), to: SlotRef::input(d, ds) }),
        )
        .expect("templates only build valid graphs")
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn random_params(params: &[ParamSchema], rng: &mut impl Rng) -> Vec<ParamValue> {
    let mut out = Vec::new();
    for (k, p) in params.iter().enumerate() {
        if !rng.random_bool(0.5) {
            continue;
        }
        let draw = |rng: &mut dyn rand::RngCore| -> f64 {
            if p.is_discrete {
                rng.random_range(p.min_value as i64..=p.max_value as i64) as f64
            } else {
                round3(rng.random_range(p.min_value..=p.max_value)).clamp(p.min_value, p.max_value)
            }
        };
        let values: Vec<f64> = match p.kind {
            ParamKind::Array => {
                // Gradient keys: position followed by color, sorted by position.
                let entries = rng.random_range(2..=4);
                let mut rows: Vec<Vec<f64>> = (0..entries).map(|_| (0..p.vector_dim).map(|_| draw(rng)).collect()).collect();
                rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
                rows.concat()
            }
            _ => (0..p.vector_dim).map(|_| draw(rng)).collect(),
        };
        out.push(ParamValue::new(k, values));
    }
    out
}

/// One layered-material graph with exactly `target` nodes (at least 5).
pub fn synthesize_graph(library: Arc<Library>, target: usize, rng: &mut impl Rng) -> MaterialGraph {
    assert!(target >= 5, "templates need at least five nodes");
    let mut d = Draft { lib: library, nodes: Vec::new(), edges: Vec::new() };

    // Skeleton: height trunk feeding a colorized albedo and the height output.
    let trunk = d.chain(1, rng);
    let color = d.add(if rng.random_bool(0.5) { "gradient_map" } else { "grayscale_to_color" }, rng);
    let albedo = d.add("output_albedo", rng);
    let height = d.add("output_height", rng);
    d.connect(trunk, 0, color, 0);
    d.connect(color, 0, albedo, 0);
    d.connect(trunk, 0, height, 0);

    let mut branches: Vec<MaterialChannel> =
        vec![MaterialChannel::Normal, MaterialChannel::Roughness, MaterialChannel::Metallic];
    branches.shuffle(rng);
    while d.nodes.len() < target {
        let remaining = target - d.nodes.len();
        let roll: f64 = rng.random();
        if !branches.is_empty() && remaining >= 2 && roll < 0.3 {
            let channel = branches.pop().expect("non-empty");
            let filter = match channel {
                MaterialChannel::Normal => "normal_from_height",
                MaterialChannel::Roughness => ["levels", "invert"][rng.random_range(0..2)],
                _ => "threshold",
            };
            let f = d.add(filter, rng);
            let m = d.add(&format!("output_{}", channel.name()), rng);
            d.connect(trunk, 0, f, 0);
            d.connect(f, 0, m, 0);
        } else if remaining >= 3 && roll < 0.55 {
            // Blend or warp in a second pattern chain.
            let e = rng.random_range(0..d.edges.len());
            let mixer = if rng.random_bool(0.7) { "blend" } else { "warp" };
            let len = rng.random_range(0..=(remaining - 2).min(3));
            let m = d.splice(e, mixer, rng);
            let other = d.chain(len, rng);
            d.connect(other, 0, m, 1);
        } else if remaining >= 5 && roll < 0.6 {
            // Split into channels, process each, merge back.
            let e = rng.random_range(0..d.edges.len());
            let split = d.splice(e, "channel_split", rng);
            let (_, _, after, after_slot) = d.edges.iter().copied().find(|x| x.0 == split).expect("splice added it");
            let idx = d.edges.iter().position(|x| x.0 == split).expect("present");
            d.edges.remove(idx);
            let merge = d.add("channel_merge", rng);
            d.connect(merge, 0, after, after_slot);
            let f = d.add(FILTERS.choose(rng).expect("non-empty"), rng);
            d.connect(split, 0, f, 0);
            d.connect(f, 0, merge, 0);
            d.connect(split, 1, merge, 1);
            d.connect(split, 2, merge, 2);
        } else {
            let e = rng.random_range(0..d.edges.len());
            d.splice(e, FILTERS.choose(rng).expect("non-empty"), rng);
        }
    }
    debug_assert_eq!(d.nodes.len(), target);
    d.freeze()
}

fn graph_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn synthesize_base_graphs(library: Arc<Library>, spec: &CorpusSpec) -> Vec<MaterialGraph> {
    (0..spec.graph_count)
        .map(|i| {
            let mut rng = graph_rng(spec.seed, i as u64);
            let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
            synthesize_graph(library.clone(), n, &mut rng)
        })
        .collect()
}

// Augmentation -----------------------------------------------------------

/// Uniform draw in the interval spanned by 0.8v and 1.2v, clamped to the schema.
pub fn perturb_value(v: f64, schema: &ParamSchema, rng: &mut impl Rng) -> f64 {
    let (a, b) = (0.8 * v, 1.2 * v);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let x = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    x.clamp(schema.min_value, schema.max_value)
}

/// `count` copies with every explicitly set continuous component perturbed.
pub fn augment(graph: &MaterialGraph, count: usize, seed: u64) -> Vec<MaterialGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut g = graph.clone();
            for id in 0..g.node_count() {
                let schema = g.schema(id).clone();
                let params: Vec<ParamValue> = g.nodes()[id]
                    .params
                    .iter()
                    .map(|pv| {
                        let ps = &schema.params[pv.param_index];
                        if ps.is_discrete {
                            return pv.clone();
                        }
                        let values = pv.values.iter().map(|&v| perturb_value(v, ps, &mut rng)).collect();
                        ParamValue::new(pv.param_index, values)
                    })
                    .collect();
                g.set_params(id, params).expect("perturbed values stay in bounds");
            }
            g
        })
        .collect()
}

// Filtering and splitting --------------------------------------------------

pub fn filter_corpus<T>(
    items: Vec<T>,
    graph_of: impl Fn(&T) -> &MaterialGraph,
    thresholds: &FilterThresholds,
) -> (Vec<T>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for item in items {
        let g = graph_of(&item);
        let nodes = g.node_count() > thresholds.max_nodes;
        let edges = g.edge_count() > thresholds.max_edges;
        let inputs = (0..g.node_count()).any(|i| g.schema(i).num_input_slots > thresholds.max_input_slots);
        let outputs = (0..g.node_count()).any(|i| g.schema(i).num_output_slots > thresholds.max_output_slots);
        report.too_many_nodes += nodes as usize;
        report.too_many_edges += edges as usize;
        report.too_many_input_slots += inputs as usize;
        report.too_many_output_slots += outputs as usize;
        if nodes || edges || inputs || outputs {
            report.dropped += 1;
        } else {
            report.retained += 1;
            kept.push(item);
        }
    }
    (kept, report)
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub base: usize,
    pub augmentation: usize,
    pub graph: MaterialGraph,
}

impl CorpusEntry {
    pub fn file_name(&self) -> String {
        format!("graph_{:05}_{:03}.mfg", self.base, self.augmentation)
    }
}

/// Holds out every augmentation of `validation_bases` randomly chosen bases.
pub fn split_corpus(
    entries: Vec<CorpusEntry>,
    validation_bases: usize,
    seed: u64,
) -> Result<(Vec<CorpusEntry>, Vec<CorpusEntry>), DatasetError> {
    let bases: BTreeSet<usize> = entries.iter().map(|e| e.base).collect();
    if bases.len() < validation_bases + 1 {
        return Err(DatasetError::TooFewBases { needed: validation_bases + 1, held_out: validation_bases, found: bases.len() });
    }
    let mut ids: Vec<usize> = bases.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5917));
    let held: BTreeSet<usize> = ids.into_iter().take(validation_bases).collect();
    Ok(entries.into_iter().partition(|e| !held.contains(&e.base)))
}

// Corpus on disk -------------------------------------------------------------

pub const MANIFEST: &str = "manifest.json";
pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub library_version: String,
    pub library_hash: String,
    pub spec: CorpusSpec,
    pub filter: FilterReport,
    pub validation_bases: Vec<usize>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: Manifest,
    pub train: Vec<MaterialGraph>,
    pub validation: Vec<MaterialGraph>,
}

/// Synthesizes, augments, filters and splits a corpus.
pub fn forge(library: Arc<Library>, spec: &CorpusSpec) -> Result<(Vec<CorpusEntry>, Vec<CorpusEntry>, FilterReport), DatasetError> {
    spec.check()?;
    let bases = synthesize_base_graphs(library, spec);
    let mut entries = Vec::with_capacity(bases.len() * spec.augmentations);
    for (b, g) in bases.iter().enumerate() {
        let aug_seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(b as u64);
        for (a, graph) in augment(g, spec.augmentations, aug_seed).into_iter().enumerate() {
            entries.push(CorpusEntry { base: b, augmentation: a, graph });
        }
    }
    let (entries, report) = filter_corpus(entries, |e| &e.graph, &FilterThresholds::default());
    let (train, validation) = split_corpus(entries, spec.validation_bases, spec.seed)?;
    Ok((train, validation, report))
}

pub fn write_corpus(
    dir: &Path,
    library: &Library,
    spec: &CorpusSpec,
    train: &[CorpusEntry],
    validation: &[CorpusEntry],
    filter: FilterReport,
) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir)?;
    for e in train.iter().chain(validation) {
        std::fs::write(dir.join(e.file_name()), graphfile::to_string(&e.graph))?;
    }
    let held: BTreeSet<usize> = validation.iter().map(|e| e.base).collect();
    let manifest = Manifest {
        format_version: CORPUS_FORMAT_VERSION,
        library_version: library.version().to_string(),
        library_hash: library.content_hash().to_string(),
        spec: spec.clone(),
        filter,
        validation_bases: held.into_iter().collect(),
        train: train.iter().map(CorpusEntry::file_name).collect(),
        validation: validation.iter().map(CorpusEntry::file_name).collect(),
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_corpus(dir: &Path, library: Arc<Library>) -> Result<Corpus, DatasetError> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    let load = |names: &[String]| -> Result<Vec<MaterialGraph>, DatasetError> {
        names
            .iter()
            .map(|n| {
                let path = dir.join(n);
                graphfile::load(&path, library.clone()).map_err(|source| DatasetError::File { path, source })
            })
            .collect()
    };
    let train = load(&manifest.train)?;
    let validation = load(&manifest.validation)?;
    Ok(Corpus { manifest, train, validation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate;

    fn small_spec() -> CorpusSpec {
        CorpusSpec { graph_count: 8, augmentations: 3, seed: 11, ..CorpusSpec::default() }
    }

    #[test]
    fn exact_node_counts_and_validity() {
        let lib = Library::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [5, 6, 7, 9, 20, 57, 120] {
            let g = synthesize_graph(lib.clone(), n, &mut rng);
            assert_eq!(g.node_count(), n);
            validate(&g).unwrap();
            assert!((0..n).any(|i| g.schema(i).is_generator));
            assert!((0..n).any(|i| g.schema(i).is_output_marker));
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let lib = Library::builtin();
        let a = synthesize_base_graphs(lib.clone(), &small_spec());
        let b = synthesize_base_graphs(lib, &small_spec());
        assert_eq!(a, b);
    }

    #[test]
    fn augmentation_keeps_structure_and_discrete_values() {
        let lib = Library::builtin();
        let g = synthesize_graph(lib, 40, &mut ChaCha8Rng::seed_from_u64(9));
        for a in augment(&g, 5, 1) {
            validate(&a).unwrap();
            assert_eq!(a.edge_set(), g.edge_set());
            for (na, ng) in a.nodes().iter().zip(g.nodes()) {
                assert_eq!(na.op, ng.op);
                let schema = g.schema(ng.id);
                for pv in &ng.params {
                    if schema.params[pv.param_index].is_discrete {
                        assert_eq!(na.param(pv.param_index), Some(pv));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_stays_zero_and_clamps_to_max() {
        let ps = ParamSchema::scalar("x", 0.0, 1.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(perturb_value(0.0, &ps, &mut rng), 0.0);
        for _ in 0..10_000 {
            let v = perturb_value(1.0, &ps, &mut rng);
            assert!((0.8..=1.0).contains(&v));
        }
        let neg = ParamSchema::scalar("y", -1.0, 1.0, 0.0);
        for _ in 0..1000 {
            let v = perturb_value(-0.5, &neg, &mut rng);
            assert!((-0.6..=-0.4).contains(&v));
        }
    }

    #[test]
    fn split_holds_out_whole_bases() {
        let lib = Library::builtin();
        let (train, val, report) = forge(lib, &small_spec()).unwrap();
        assert_eq!(report.dropped, 0);
        assert_eq!(val.len(), 5 * 3);
        assert_eq!(train.len(), 3 * 3);
        let tb: BTreeSet<usize> = train.iter().map(|e| e.base).collect();
        let vb: BTreeSet<usize> = val.iter().map(|e| e.base).collect();
        assert!(tb.is_disjoint(&vb));
    }

    #[test]
    fn too_few_bases() {
        let lib = Library::builtin();
        let spec = CorpusSpec { graph_count: 5, augmentations: 1, ..CorpusSpec::default() };
        assert!(matches!(forge(lib, &spec), Err(DatasetError::TooFewBases { .. })));
    }

    #[test]
    fn spec_validation() {
        let spec = CorpusSpec { augmentations: 0, ..CorpusSpec::default() };
        assert!(spec.check().is_err());
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let lib = Library::builtin();
        let spec = small_spec();
        let (train, val, report) = forge(lib.clone(), &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &lib, &spec, &train, &val, report).unwrap();
        let corpus = load_corpus(dir.path(), lib).unwrap();
        assert_eq!(corpus.train.len(), train.len());
        for (a, b) in corpus.train.iter().zip(&train) {
            assert_eq!(a, &b.graph);
        }
    }
}
