//! Operator library: schemas paired with pure evaluation kernels.

use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::image::ChannelImage;
use crate::ops;
use crate::schema::{MaterialChannel, OperatorSchema, OperatorType, ParamSchema};

pub const BUILTIN_LIBRARY_VERSION: &str = "synthetic-v1";

/// Full parameter assignment of a node (defaults filled in).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    values: Vec<Vec<f64>>,
}

impl ParamSet {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    pub fn defaults(schema: &OperatorSchema) -> Self {
        Self::new(schema.params.iter().map(|p| p.default_value.clone()).collect())
    }

    pub fn raw(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn scalar(&self, k: usize) -> f32 {
        self.values[k][0] as f32
    }

    pub fn int(&self, k: usize) -> i64 {
        self.values[k][0].round() as i64
    }

    pub fn vec3(&self, k: usize) -> [f32; 3] {
        let v = &self.values[k];
        [v[0] as f32, v[1] as f32, v[2] as f32]
    }

    pub fn vec2(&self, k: usize) -> [f32; 2] {
        let v = &self.values[k];
        [v[0] as f32, v[1] as f32]
    }
}

/// Everything a kernel sees: connected (or default) inputs, parameters, and target size.
pub struct KernelContext<'a> {
    pub inputs: &'a [ChannelImage],
    pub params: &'a ParamSet,
    pub width: usize,
    pub height: usize,
}

pub type KernelFn = fn(&KernelContext<'_>) -> Vec<ChannelImage>;

#[derive(Clone)]
pub struct OperatorKernel {
    pub schema: OperatorSchema,
    pub eval: KernelFn,
}

impl std::fmt::Debug for OperatorKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorKernel").field("schema", &self.schema.name).finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("operator `{name}` has id {found}, expected {expected}")]
    BadId { name: String, found: u32, expected: u32 },
    #[error("duplicate operator name `{0}`")]
    DuplicateName(String),
    #[error("invalid schema: {0}")]
    Schema(String),
}

#[derive(Debug)]
pub struct Library {
    version: String,
    kernels: Vec<OperatorKernel>,
    by_name: HashMap<String, OperatorType>,
    hash: String,
}

impl Library {
    pub fn new(version: &str, kernels: Vec<OperatorKernel>) -> Result<Self, LibraryError> {
        let mut by_name = HashMap::new();
        for (i, k) in kernels.iter().enumerate() {
            if k.schema.op_type.index() != i {
                return Err(LibraryError::BadId {
                    name: k.schema.name.clone(),
                    found: k.schema.op_type.0,
                    expected: i as u32,
                });
            }
            k.schema.check().map_err(LibraryError::Schema)?;
            if by_name.insert(k.schema.name.clone(), k.schema.op_type).is_some() {
                return Err(LibraryError::DuplicateName(k.schema.name.clone()));
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(version.as_bytes());
        for k in &kernels {
            hasher.update(serde_json::to_vec(&k.schema).expect("schema serializes"));
        }
        let hash = hex::encode(hasher.finalize());
        Ok(Self { version: version.to_string(), kernels, by_name, hash })
    }

    /// The synthetic operator set shared by the corpus, the models and the evaluator.
    pub fn builtin() -> Arc<Library> {
        static BUILTIN: std::sync::OnceLock<Arc<Library>> = std::sync::OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                Arc::new(Library::new(BUILTIN_LIBRARY_VERSION, builtin_kernels()).expect("builtin library is valid"))
            })
            .clone()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Content hash over the version tag and all schemas.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn schema(&self, op: OperatorType) -> Option<&OperatorSchema> {
        self.kernels.get(op.index()).map(|k| &k.schema)
    }

    pub fn kernel(&self, op: OperatorType) -> Option<&OperatorKernel> {
        self.kernels.get(op.index())
    }

    pub fn kernels(&self) -> &[OperatorKernel] {
        &self.kernels
    }

    pub fn schemas(&self) -> impl Iterator<Item = &OperatorSchema> {
        self.kernels.iter().map(|k| &k.schema)
    }

    pub fn by_name(&self, name: &str) -> Option<OperatorType> {
        self.by_name.get(name).copied()
    }

    pub fn output_marker(&self, channel: MaterialChannel) -> Option<OperatorType> {
        self.schemas()
            .find(|s| s.is_output_marker && s.output_channel == Some(channel))
            .map(|s| s.op_type)
    }

    pub fn max_input_slots(&self) -> usize {
        self.schemas().map(|s| s.num_input_slots).max().unwrap_or(0)
    }

    pub fn max_output_slots(&self) -> usize {
        self.schemas().map(|s| s.num_output_slots).max().unwrap_or(0)
    }
}

/// Starts a schema; ids are assigned by position in the final list.
fn op(name: &str, inputs: usize, outputs: usize, mut params: Vec<ParamSchema>) -> OperatorSchema {
    params.sort_by(|a, b| a.name.cmp(&b.name));
    OperatorSchema {
        op_type: OperatorType(0),
        name: name.to_string(),
        num_input_slots: inputs,
        num_output_slots: outputs,
        params,
        is_generator: inputs == 0,
        is_output_marker: false,
        output_channel: None,
    }
}

fn marker(channel: MaterialChannel) -> OperatorSchema {
    OperatorSchema {
        op_type: OperatorType(0),
        name: format!("output_{}", channel.name()),
        num_input_slots: 1,
        num_output_slots: 0,
        params: Vec::new(),
        is_generator: false,
        is_output_marker: true,
        output_channel: Some(channel),
    }
}

fn builtin_kernels() -> Vec<OperatorKernel> {
    use ParamSchema as P;
    let table: Vec<(OperatorSchema, KernelFn)> = vec![
        // generators
        (op("uniform_color", 0, 1, vec![P::vector("color", 0.0, 1.0, &[0.5, 0.5, 0.5])]), ops::uniform_color),
        (op("uniform_gray", 0, 1, vec![P::scalar("value", 0.0, 1.0, 0.5)]), ops::uniform_gray),
        (op("checker", 0, 1, vec![P::integer("tiles", 1, 32, 8)]), ops::checker),
        (
            op(
                "brick",
                0,
                1,
                vec![
                    P::scalar("bevel", 0.0, 0.5, 0.1),
                    P::integer("columns", 1, 16, 4),
                    P::scalar("offset", 0.0, 1.0, 0.5),
                    P::integer("rows", 1, 32, 8),
                ],
            ),
            ops::brick,
        ),
        (
            op(
                "value_noise",
                0,
                1,
                vec![
                    P::integer("octaves", 1, 8, 4),
                    P::scalar("persistence", 0.0, 1.0, 0.5),
                    P::integer("scale", 1, 32, 4),
                    P::integer("seed", 0, 255, 0),
                ],
            ),
            ops::value_noise,
        ),
        (op("gradient_ramp", 0, 1, vec![P::scalar("angle", 0.0, 1.0, 0.0)]), ops::gradient_ramp),
        (
            op(
                "polygon",
                0,
                1,
                vec![
                    P::scalar("radius", 0.0, 1.0, 0.4),
                    P::integer("sides", 3, 12, 6),
                    P::integer("tiles", 1, 16, 1),
                ],
            ),
            ops::polygon,
        ),
        (
            op(
                "cell_noise",
                0,
                1,
                vec![
                    P::scalar("jitter", 0.0, 1.0, 1.0),
                    P::integer("scale", 1, 32, 6),
                    P::integer("seed", 0, 255, 0),
                ],
            ),
            ops::cell_noise,
        ),
        // filters
        (op("invert", 1, 1, vec![]), ops::invert),
        (
            op(
                "levels",
                1,
                1,
                vec![
                    P::scalar("gamma", 0.1, 5.0, 1.0),
                    P::scalar("in_high", 0.0, 1.0, 1.0),
                    P::scalar("in_low", 0.0, 1.0, 0.0),
                    P::scalar("out_high", 0.0, 1.0, 1.0),
                    P::scalar("out_low", 0.0, 1.0, 0.0),
                ],
            ),
            ops::levels,
        ),
        (op("blur", 1, 1, vec![P::scalar("intensity", 0.0, 0.1, 0.02)]), ops::blur),
        (op("sharpen", 1, 1, vec![P::scalar("intensity", 0.0, 2.0, 0.5)]), ops::sharpen),
        (
            op(
                "transform_2d",
                1,
                1,
                vec![
                    P::vector("offset", -1.0, 1.0, &[0.0, 0.0]),
                    P::scalar("rotation", 0.0, 1.0, 0.0),
                    P::vector("scale", 0.25, 4.0, &[1.0, 1.0]),
                ],
            ),
            ops::transform_2d,
        ),
        (op("tile", 1, 1, vec![P::integer("tiles_x", 1, 8, 2), P::integer("tiles_y", 1, 8, 2)]), ops::tile),
        (op("warp", 2, 1, vec![P::scalar("intensity", 0.0, 0.5, 0.1)]), ops::warp),
        (
            op("blend", 2, 1, vec![P::integer("mode", 0, 4, 0), P::scalar("opacity", 0.0, 1.0, 1.0)]),
            ops::blend,
        ),
        (op("grayscale_to_color", 1, 1, vec![P::vector("tint", 0.0, 1.0, &[1.0, 1.0, 1.0])]), ops::grayscale_to_color),
        (
            op("color_to_grayscale", 1, 1, vec![P::vector("weights", 0.0, 1.0, &[0.299, 0.587, 0.114])]),
            ops::color_to_grayscale,
        ),
        (
            op("threshold", 1, 1, vec![P::scalar("level", 0.0, 1.0, 0.5), P::scalar("smoothness", 0.0, 0.5, 0.0)]),
            ops::threshold,
        ),
        (
            op("gradient_map", 1, 1, vec![P::array("keys", 4, 0.0, 1.0, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0])]),
            ops::gradient_map,
        ),
        (op("normal_from_height", 1, 1, vec![P::scalar("intensity", 0.0, 10.0, 1.0)]), ops::normal_from_height),
        (
            op(
                "height_from_grayscale",
                1,
                1,
                vec![P::scalar("contrast", 0.0, 4.0, 1.0), P::scalar("offset", -0.5, 0.5, 0.0)],
            ),
            ops::height_from_grayscale,
        ),
        (op("channel_merge", 3, 1, vec![]), ops::channel_merge),
        (op("channel_split", 1, 3, vec![]), ops::channel_split),
        (op("edge_detect", 1, 1, vec![P::scalar("intensity", 0.0, 4.0, 1.0)]), ops::edge_detect),
        // output markers
        (marker(MaterialChannel::Albedo), ops::passthrough),
        (marker(MaterialChannel::Normal), ops::passthrough),
        (marker(MaterialChannel::Roughness), ops::passthrough),
        (marker(MaterialChannel::Height), ops::passthrough),
        (marker(MaterialChannel::Metallic), ops::passthrough),
    ];
    table
        .into_iter()
        .enumerate()
        .map(|(i, (mut schema, eval))| {
            schema.op_type = OperatorType(i as u32);
            OperatorKernel { schema, eval }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ParamKind;

    #[test]
    fn builtin_has_required_shape() {
        let lib = Library::builtin();
        assert!(lib.len() >= 24 + 5);
        assert!(lib.schemas().any(|s| s.is_generator));
        assert_eq!(lib.schemas().filter(|s| s.is_output_marker).count(), 5);
        for ch in MaterialChannel::ALL {
            assert!(lib.output_marker(ch).is_some());
        }
        for s in lib.schemas() {
            assert!(s.params.windows(2).all(|w| w[0].name < w[1].name), "{} params unsorted", s.name);
            assert_eq!(s.is_generator, s.num_input_slots == 0);
        }
        assert!(lib.schemas().flat_map(|s| &s.params).any(|p| p.kind == ParamKind::Array));
        assert!(lib.schemas().flat_map(|s| &s.params).any(|p| p.is_discrete));
    }

    #[test]
    fn hash_is_stable_and_version_sensitive() {
        let a = Library::new("a", builtin_kernels()).unwrap();
        let b = Library::new("a", builtin_kernels()).unwrap();
        let c = Library::new("b", builtin_kernels()).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn rejects_unsorted_params() {
        let mut k = builtin_kernels();
        k[3].schema.params.swap(0, 1);
        assert!(matches!(Library::new("x", k), Err(LibraryError::Schema(_))));
    }
}
