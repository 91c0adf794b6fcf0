//! Operator signatures: slot counts and typed parameter schemas.

use serde::{Deserialize, Serialize};

/// Index of an operator in its library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OperatorType(pub u32);

impl OperatorType {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Scalar,
    Vector,
    /// Variable-length array of fixed-size vectors.
    Array,
}

/// The material channels an output marker can annotate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialChannel {
    Albedo,
    Normal,
    Roughness,
    Height,
    Metallic,
}

impl MaterialChannel {
    pub const ALL: [MaterialChannel; 5] = [
        MaterialChannel::Albedo,
        MaterialChannel::Normal,
        MaterialChannel::Roughness,
        MaterialChannel::Height,
        MaterialChannel::Metallic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaterialChannel::Albedo => "albedo",
            MaterialChannel::Normal => "normal",
            MaterialChannel::Roughness => "roughness",
            MaterialChannel::Height => "height",
            MaterialChannel::Metallic => "metallic",
        }
    }

    /// Number of color channels the material channel is stored with.
    pub fn color_channels(self) -> usize {
        match self {
            MaterialChannel::Albedo | MaterialChannel::Normal => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    pub kind: ParamKind,
    pub vector_dim: usize,
    pub is_discrete: bool,
    pub min_value: f64,
    pub max_value: f64,
    pub default_value: Vec<f64>,
}

impl ParamSchema {
    pub fn scalar(name: &str, min: f64, max: f64, default: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Scalar,
            vector_dim: 1,
            is_discrete: false,
            min_value: min,
            max_value: max,
            default_value: vec![default],
        }
    }

    pub fn integer(name: &str, min: i64, max: i64, default: i64) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Scalar,
            vector_dim: 1,
            is_discrete: true,
            min_value: min as f64,
            max_value: max as f64,
            default_value: vec![default as f64],
        }
    }

    pub fn vector(name: &str, min: f64, max: f64, default: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Vector,
            vector_dim: default.len(),
            is_discrete: false,
            min_value: min,
            max_value: max,
            default_value: default.to_vec(),
        }
    }

    /// Array of `dim`-vectors; `default` holds the flattened entries.
    pub fn array(name: &str, dim: usize, min: f64, max: f64, default: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            kind: ParamKind::Array,
            vector_dim: dim,
            is_discrete: false,
            min_value: min,
            max_value: max,
            default_value: default.to_vec(),
        }
    }

    /// Number of distinct values of a discrete parameter.
    pub fn discrete_range(&self) -> usize {
        (self.max_value - self.min_value).round() as usize + 1
    }

    /// Checks a flat value list against kind, dimension, bounds and integrality.
    pub fn check_values(&self, values: &[f64]) -> Result<(), String> {
        match self.kind {
            ParamKind::Scalar | ParamKind::Vector => {
                if values.len() != self.vector_dim {
                    return Err(format!(
                        "parameter `{}` expects {} values, got {}",
                        self.name,
                        self.vector_dim,
                        values.len()
                    ));
                }
            }
            ParamKind::Array => {
                if values.is_empty() || values.len() % self.vector_dim != 0 {
                    return Err(format!(
                        "array parameter `{}` needs a positive multiple of {} values, got {}",
                        self.name,
                        self.vector_dim,
                        values.len()
                    ));
                }
            }
        }
        for &v in values {
            if !v.is_finite() || v < self.min_value || v > self.max_value {
                return Err(format!(
                    "parameter `{}` value {v} outside [{}, {}]",
                    self.name, self.min_value, self.max_value
                ));
            }
            if self.is_discrete && v.fract() != 0.0 {
                return Err(format!("discrete parameter `{}` got non-integer {v}", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSchema {
    pub op_type: OperatorType,
    pub name: String,
    pub num_input_slots: usize,
    /// Zero only for output markers.
    pub num_output_slots: usize,
    /// Sorted alphabetically by name.
    pub params: Vec<ParamSchema>,
    pub is_generator: bool,
    pub is_output_marker: bool,
    pub output_channel: Option<MaterialChannel>,
}

impl OperatorSchema {
    pub fn num_slots(&self) -> usize {
        self.num_input_slots + self.num_output_slots
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Checks the structural invariants of the signature itself.
    pub fn check(&self) -> Result<(), String> {
        if self.is_generator != (self.num_input_slots == 0) {
            return Err(format!("operator `{}`: generator flag disagrees with input slots", self.name));
        }
        if self.num_output_slots == 0 && !self.is_output_marker {
            return Err(format!("operator `{}` has no output slots", self.name));
        }
        if self.is_output_marker
            && (self.num_input_slots != 1 || !self.params.is_empty() || self.output_channel.is_none())
        {
            return Err(format!("output marker `{}` must have one input and no parameters", self.name));
        }
        if self.params.windows(2).any(|w| w[0].name >= w[1].name) {
            return Err(format!("operator `{}`: parameters not sorted by name", self.name));
        }
        for p in &self.params {
            if p.kind == ParamKind::Scalar && p.vector_dim != 1 {
                return Err(format!("scalar parameter `{}` with vector_dim {}", p.name, p.vector_dim));
            }
            if p.vector_dim == 0 || p.min_value > p.max_value {
                return Err(format!("parameter `{}` has an empty domain", p.name));
            }
            p.check_values(&p.default_value)
                .map_err(|e| format!("operator `{}` default: {e}", self.name))?;
        }
        Ok(())
    }
}
