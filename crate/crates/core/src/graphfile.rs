//! Line-oriented text format for material graphs.
//!
//! ```text
//! mfgraph 1
//! library synthetic-v1 3f1c...
//! node 0 checker tiles=2
//! node 1 levels gamma=1.5 in_low=0.1
//! node 2 output_height
//! edge 0:0 1:0
//! edge 1:0 2:0
//! ```
//!
//! Nodes are listed by id; only non-default parameters are written, vector
//! components separated by commas. Edges are `src:out_slot dst:in_slot`,
//! sorted by destination node and slot.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::graph::{Edge, GraphError, MaterialGraph, ParamValue, SlotRef};
use crate::library::Library;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "mfgraph";

#[derive(Debug, thiserror::Error)]
pub enum GraphFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("graph was written for library {found}, loaded library is {expected}")]
    LibraryMismatch { expected: String, found: String },
    #[error("line {line}: {source}")]
    Graph { line: usize, source: GraphError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, message: impl Into<String>) -> GraphFileError {
    GraphFileError::Syntax { line, message: message.into() }
}

/// Edges in file order: by destination node, then destination slot.
pub fn canonical_edges(graph: &MaterialGraph) -> Vec<Edge> {
    let mut edges = graph.edges().to_vec();
    edges.sort_by_key(|e| (e.to.node, e.to.slot));
    edges
}

pub fn to_string(graph: &MaterialGraph) -> String {
    let lib = graph.library();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "library {} {}", lib.version(), lib.content_hash());
    for node in graph.nodes() {
        let schema = graph.schema(node.id);
        let _ = write!(out, "node {} {}", node.id, schema.name);
        for p in &node.params {
            let values: Vec<String> = p.values.iter().map(|v| format!("{v}")).collect();
            let _ = write!(out, " {}={}", schema.params[p.param_index].name, values.join(","));
        }
        out.push('\n');
    }
    for e in canonical_edges(graph) {
        let _ = writeln!(out, "edge {}:{} {}:{}", e.from.node, e.from.slot, e.to.node, e.to.slot);
    }
    out
}

fn parse_endpoint(token: &str, line: usize) -> Result<(usize, usize), GraphFileError> {
    let (node, slot) = token.split_once(':').ok_or_else(|| syntax(line, format!("expected node:slot, got `{token}`")))?;
    let node = node.parse().map_err(|_| syntax(line, format!("bad node id `{node}`")))?;
    let slot = slot.parse().map_err(|_| syntax(line, format!("bad slot index `{slot}`")))?;
    Ok((node, slot))
}

/// Parses a graph file against `library`, which must match the recorded hash.
pub fn parse(text: &str, library: Arc<Library>) -> Result<MaterialGraph, GraphFileError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| syntax(1, "empty file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(syntax(ln, "missing `mfgraph` header"));
    }
    let version: u32 =
        parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| syntax(ln, "missing format version"))?;
    if version != FORMAT_VERSION {
        return Err(GraphFileError::Version(version));
    }

    let (ln, lib_line) = lines.next().ok_or_else(|| syntax(ln + 1, "missing library line"))?;
    let parts: Vec<&str> = lib_line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "library" {
        return Err(syntax(ln, "expected `library <version> <hash>`"));
    }
    if parts[2] != library.content_hash() {
        return Err(GraphFileError::LibraryMismatch {
            expected: format!("{} {}", library.version(), library.content_hash()),
            found: format!("{} {}", parts[1], parts[2]),
        });
    }

    let mut graph = MaterialGraph::new(library.clone());
    let mut seen_edge = false;
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("node") => {
                if seen_edge {
                    return Err(syntax(ln, "node lines must precede edge lines"));
                }
                let id: usize =
                    parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| syntax(ln, "missing node id"))?;
                if id != graph.node_count() {
                    return Err(syntax(ln, format!("expected node id {}, found {id}", graph.node_count())));
                }
                let name = parts.next().ok_or_else(|| syntax(ln, "missing operator name"))?;
                let op = library.by_name(name).ok_or_else(|| syntax(ln, format!("unknown operator `{name}`")))?;
                let schema = library.schema(op).expect("by_name returns library ids");
                let mut params = Vec::new();
                for assignment in parts {
                    let (pname, raw) =
                        assignment.split_once('=').ok_or_else(|| syntax(ln, format!("expected name=value, got `{assignment}`")))?;
                    let index = schema
                        .param_index(pname)
                        .ok_or_else(|| syntax(ln, format!("operator `{name}` has no parameter `{pname}`")))?;
                    let values = raw
                        .split(',')
                        .map(|v| v.parse::<f64>().map_err(|_| syntax(ln, format!("bad number `{v}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    params.push(ParamValue::new(index, values));
                }
                graph.add_node(op, params).map_err(|source| GraphFileError::Graph { line: ln, source })?;
            }
            Some("edge") => {
                seen_edge = true;
                let from = parts.next().ok_or_else(|| syntax(ln, "missing edge source"))?;
                let to = parts.next().ok_or_else(|| syntax(ln, "missing edge destination"))?;
                if parts.next().is_some() {
                    return Err(syntax(ln, "trailing tokens after edge"));
                }
                let (a, sa) = parse_endpoint(from, ln)?;
                let (b, sb) = parse_endpoint(to, ln)?;
                graph
                    .add_edge(SlotRef::output(a, sa), SlotRef::input(b, sb))
                    .map_err(|source| GraphFileError::Graph { line: ln, source })?;
            }
            Some(other) => return Err(syntax(ln, format!("unknown record `{other}`"))),
            None => unreachable!("blank lines are filtered"),
        }
    }
    Ok(graph)
}

pub fn save(graph: &MaterialGraph, path: &Path) -> Result<(), GraphFileError> {
    std::fs::write(path, to_string(graph))?;
    Ok(())
}

pub fn load(path: &Path, library: Arc<Library>) -> Result<MaterialGraph, GraphFileError> {
    parse(&std::fs::read_to_string(path)?, library)
}
