//! Evaluates a material graph into channel images.

use std::collections::BTreeMap;
use std::path::Path;

use crate::graph::MaterialGraph;
use crate::image::ChannelImage;
use crate::library::KernelContext;
use crate::schema::MaterialChannel;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("resolution must be positive")]
    Resolution,
    #[error("unknown operator type {0}")]
    UnknownOperator(u32),
    #[error("operator `{name}` produced {got} outputs, schema declares {expected}")]
    OutputCount { name: String, got: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The five material channels, all at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialOutput {
    pub channels: BTreeMap<MaterialChannel, ChannelImage>,
}

impl MaterialOutput {
    pub fn get(&self, channel: MaterialChannel) -> &ChannelImage {
        &self.channels[&channel]
    }

    pub fn albedo(&self) -> &ChannelImage {
        self.get(MaterialChannel::Albedo)
    }

    pub fn normal(&self) -> &ChannelImage {
        self.get(MaterialChannel::Normal)
    }

    pub fn roughness(&self) -> &ChannelImage {
        self.get(MaterialChannel::Roughness)
    }

    pub fn height(&self) -> &ChannelImage {
        self.get(MaterialChannel::Height)
    }

    pub fn metallic(&self) -> &ChannelImage {
        self.get(MaterialChannel::Metallic)
    }

    /// Writes `<prefix>_<channel>.png` for every channel.
    pub fn save_pngs(&self, dir: &Path, prefix: &str) -> std::io::Result<()> {
        for (ch, img) in &self.channels {
            img.save_png(&dir.join(format!("{prefix}_{}.png", ch.name())))?;
        }
        Ok(())
    }

    pub fn save_ppms(&self, dir: &Path, prefix: &str) -> std::io::Result<()> {
        for (ch, img) in &self.channels {
            let ext = if img.channels == 1 { "pgm" } else { "ppm" };
            img.save_ppm(&dir.join(format!("{prefix}_{}.{ext}", ch.name())))?;
        }
        Ok(())
    }
}

fn conform(img: &ChannelImage, channel: MaterialChannel) -> ChannelImage {
    if channel.color_channels() == 3 {
        img.to_rgb()
    } else {
        img.to_gray()
    }
}

/// Runs every kernel feeding an output marker in topological order.
///
/// Unconnected input slots receive an all-zero grayscale image. When several
/// markers annotate the same channel, the lowest node id wins.
pub fn evaluate_graph(graph: &MaterialGraph, resolution: usize) -> Result<MaterialOutput, EvalError> {
    if resolution == 0 {
        return Err(EvalError::Resolution);
    }
    let lib = graph.library();
    let n = graph.node_count();
    for node in graph.nodes() {
        if lib.schema(node.op).is_none() {
            return Err(EvalError::UnknownOperator(node.op.0));
        }
    }

    // Only ancestors of output markers need evaluation.
    let parents = graph.parent_lists();
    let mut needed = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| graph.schema(i).is_output_marker).collect();
    while let Some(v) = stack.pop() {
        if !needed[v] {
            needed[v] = true;
            stack.extend(parents[v].iter().copied());
        }
    }

    let zero = ChannelImage::zeros(resolution, resolution);
    let mut outputs: Vec<Option<Vec<ChannelImage>>> = vec![None; n];
    let mut result: BTreeMap<MaterialChannel, ChannelImage> = BTreeMap::new();
    for id in graph.topological_order() {
        if !needed[id] {
            continue;
        }
        let kernel = lib.kernel(graph.nodes()[id].op).expect("checked above");
        let schema = &kernel.schema;
        let inputs: Vec<ChannelImage> = (0..schema.num_input_slots)
            .map(|slot| match graph.incoming_edge(id, slot) {
                Some(e) => outputs[e.from.node].as_ref().expect("parents evaluate first")[e.from.slot].clone(),
                None => zero.clone(),
            })
            .collect();
        let params = graph.param_set(id);
        let ctx = KernelContext { inputs: &inputs, params: &params, width: resolution, height: resolution };
        let out = (kernel.eval)(&ctx);
        if schema.is_output_marker {
            let channel = schema.output_channel.expect("markers name a channel");
            let connected = graph.incoming_edge(id, 0).is_some();
            if connected && !result.contains_key(&channel) {
                result.insert(channel, conform(&out[0], channel));
            }
        } else if out.len() != schema.num_output_slots {
            return Err(EvalError::OutputCount { name: schema.name.clone(), got: out.len(), expected: schema.num_output_slots });
        }
        outputs[id] = Some(out);
    }
    for channel in MaterialChannel::ALL {
        result.entry(channel).or_insert_with(|| conform(&zero, channel));
    }
    Ok(MaterialOutput { channels: result })
}
