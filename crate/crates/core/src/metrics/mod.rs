//! Quantitative comparison of generated and reference graph corpora.

pub mod ged;
pub mod render;
pub mod stats;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use ged::{graph_edit_distance, GedResult, EXACT_NODE_LIMIT};
pub use render::{frechet_distance, render_features, render_stat_distance};
pub use stats::{emd_1d, graph_stat_emd, graph_statistics, longest_path, weak_components, GraphCorpusStats, StatKey};

use crate::evaluate::{evaluate_graph, EvalError};
use crate::graph::MaterialGraph;

/// The edit-distance metric only considers graphs at least this large.
pub const MIN_EDIT_NODES: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("histograms have {0} and {1} bins")]
    BinMismatch(usize, usize),
    #[error("need at least {needed} samples per side, got {generated} generated and {reference} reference")]
    TooFewSamples { needed: usize, generated: usize, reference: usize },
    #[error("reference corpus has zero nearest-neighbor spread; normalization undefined")]
    DegenerateReference,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighbor {
    /// Mean generated-to-reference distance over the reference's own spread.
    pub value: f64,
    pub mean_distance: f64,
    pub reference_spread: f64,
    pub generated: usize,
    pub reference: usize,
}

/// Mean nearest-reference distance of generated samples, normalized by the
/// mean leave-one-out nearest-neighbor distance within the reference.
pub fn nearest_neighbor_distance<T>(
    generated: &[T],
    reference: &[T],
    dist: impl Fn(&T, &T) -> f64,
) -> Result<NearestNeighbor, MetricError> {
    if generated.is_empty() || reference.len() < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, generated: generated.len(), reference: reference.len() });
    }
    let nearest = |x: &T, skip: Option<usize>| {
        reference
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, r)| dist(x, r))
            .fold(f64::INFINITY, f64::min)
    };
    let mean_distance = generated.iter().map(|g| nearest(g, None)).sum::<f64>() / generated.len() as f64;
    let spread = reference.iter().enumerate().map(|(i, r)| nearest(r, Some(i))).sum::<f64>() / reference.len() as f64;
    if spread <= 0.0 {
        return Err(MetricError::DegenerateReference);
    }
    Ok(NearestNeighbor {
        value: mean_distance / spread,
        mean_distance,
        reference_spread: spread,
        generated: generated.len(),
        reference: reference.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub eligible_generated: usize,
    pub eligible_reference: usize,
    /// Nearest-neighbor result, or why it could not be computed.
    pub result: Result<NearestNeighbor, String>,
    /// Whether every pairwise distance came from the exact solver.
    pub all_exact: bool,
}

pub fn edit_nearest_neighbor(generated: &[MaterialGraph], reference: &[MaterialGraph], max_samples: usize) -> EditReport {
    let gen: Vec<&MaterialGraph> = generated.iter().filter(|g| g.node_count() >= MIN_EDIT_NODES).collect();
    let reference: Vec<&MaterialGraph> = reference.iter().filter(|g| g.node_count() >= MIN_EDIT_NODES).collect();
    let (eligible_generated, eligible_reference) = (gen.len(), reference.len());
    let exact = std::cell::Cell::new(true);
    let gen = &gen[..gen.len().min(max_samples)];
    let reference = &reference[..reference.len().min(max_samples)];
    let result = nearest_neighbor_distance(gen, reference, |a, b| {
        let r = graph_edit_distance(a, b);
        if !r.exact {
            exact.set(false);
        }
        r.distance as f64
    })
    .map_err(|e| e.to_string());
    EditReport { eligible_generated, eligible_reference, result, all_exact: exact.get() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub graph_stat_emd: f64,
    pub nearest_edit: EditReport,
    /// Fréchet distance of render features; a proxy, not a learned perceptual metric.
    pub render_stat_distance: Result<f64, String>,
    pub generated: usize,
    pub reference: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub render_resolution: usize,
    pub max_render_samples: usize,
    pub max_edit_samples: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { render_resolution: 64, max_render_samples: 200, max_edit_samples: 40 }
    }
}

pub fn compute_report(
    generated: &[MaterialGraph],
    reference: &[MaterialGraph],
    opts: &ReportOptions,
) -> Result<MetricReport, MetricError> {
    let sg = graph_statistics(generated);
    let sr = graph_statistics(reference);
    let render = |gs: &[MaterialGraph]| -> Result<Vec<_>, MetricError> {
        gs.iter().take(opts.max_render_samples).map(|g| Ok(evaluate_graph(g, opts.render_resolution)?)).collect()
    };
    let rg = render(generated)?;
    let rr = render(reference)?;
    Ok(MetricReport {
        graph_stat_emd: graph_stat_emd(&sg, &sr),
        nearest_edit: edit_nearest_neighbor(generated, reference, opts.max_edit_samples),
        render_stat_distance: render_stat_distance(&rg, &rr).map_err(|e| e.to_string()),
        generated: generated.len(),
        reference: reference.len(),
    })
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>12}", "metric", "value");
        let _ = writeln!(s, "{:<28} {:>12.6}", "graph statistics EMD", self.graph_stat_emd);
        match &self.nearest_edit.result {
            Ok(nn) => {
                let _ = writeln!(s, "{:<28} {:>12.6}", "nearest edit distance", nn.value);
            }
            Err(e) => {
                let _ = writeln!(s, "{:<28} {:>12}  ({e})", "nearest edit distance", "n/a");
            }
        }
        let _ = writeln!(
            s,
            "{:<28} {:>12}",
            "  eligible (>= 50 nodes)",
            format!("{}/{}", self.nearest_edit.eligible_generated, self.nearest_edit.eligible_reference)
        );
        if !self.nearest_edit.all_exact {
            let _ = writeln!(s, "  (some distances are beam-search upper bounds)");
        }
        match &self.render_stat_distance {
            Ok(d) => {
                let _ = writeln!(s, "{:<28} {:>12.6}", "render-stat distance", d);
            }
            Err(e) => {
                let _ = writeln!(s, "{:<28} {:>12}  ({e})", "render-stat distance", "n/a");
            }
        }
        let _ = writeln!(s, "{:<28} {:>12}", "graphs (generated/ref)", format!("{}/{}", self.generated, self.reference));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_match_is_zero_and_outlier_exceeds_one() {
        let reference = vec![0.0, 1.0, 2.0, 3.0];
        let d = |a: &f64, b: &f64| (a - b).abs();
        let same = nearest_neighbor_distance(&reference, &reference, d).unwrap();
        assert_eq!(same.value, 0.0);
        let far = nearest_neighbor_distance(&[10.0], &reference, d).unwrap();
        assert!(far.value > 1.0);
    }

    #[test]
    fn sampled_from_same_distribution_is_near_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let reference: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let generated: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let r = nearest_neighbor_distance(&generated, &reference, |a, b| (a - b).abs()).unwrap();
        assert!((r.value - 1.0).abs() < 0.15, "{}", r.value);
    }

    #[test]
    fn empty_eligible_set_is_reported() {
        let r = edit_nearest_neighbor(&[], &[], 10);
        assert!(r.result.is_err());
        assert_eq!(r.eligible_generated, 0);
    }
}
