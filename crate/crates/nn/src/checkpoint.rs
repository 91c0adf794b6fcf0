//! MFCK checkpoint container.
//!
//! Layout (little endian):
//! `"MFCK" | u32 version | u32 len, config JSON | u32 len, quantizer JSON |
//! u32 tensor count | per tensor: u32 name len, name, u8 dtype, u32 rank,
//! u32 dims…, f32 payload`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::adam::Adam;
use crate::params::ParamStore;
use crate::NnError;

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_array(name: &str, a: &Array2<f64>) -> Self {
        Tensor { name: name.to_string(), dims: vec![a.nrows(), a.ncols()], data: a.iter().map(|&x| x as f32).collect() }
    }

    pub fn to_array(&self) -> Result<Array2<f64>, NnError> {
        let (r, c) = match self.dims[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => return Err(NnError::Checkpoint(format!("tensor `{}` has rank {}", self.name, self.dims.len()))),
        };
        Array2::from_shape_vec((r, c), self.data.iter().map(|&x| x as f64).collect())
            .map_err(|e| NnError::Checkpoint(format!("tensor `{}`: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON describing the model and training state.
    pub config: String,
    /// JSON of the parameter quantizer the model was trained with.
    pub quantizer: String,
    pub tensors: Vec<Tensor>,
}

fn put_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read, limit: usize) -> Result<String, NnError> {
    let n = get_u32(r)? as usize;
    if n > limit {
        return Err(NnError::Checkpoint(format!("string of {n} bytes exceeds {limit}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Checkpoint(e.to_string()))
}

impl Checkpoint {
    /// Parameters, plus optimizer moments when `adam` is given.
    pub fn from_store(config: String, quantizer: String, store: &ParamStore, adam: Option<&Adam>) -> Self {
        let mut tensors: Vec<Tensor> = store.iter().map(|(_, n, a)| Tensor::from_array(n, a)).collect();
        if let Some(adam) = adam {
            for (id, name, _) in store.iter() {
                tensors.push(Tensor::from_array(&format!("{MOMENT1}{name}"), &adam.m[id]));
                tensors.push(Tensor::from_array(&format!("{MOMENT2}{name}"), &adam.v[id]));
            }
        }
        Checkpoint { config, quantizer, tensors }
    }

    fn find(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrites every parameter of `store`; all names and shapes must match.
    /// Parameter names never contain `/`.
    pub fn restore(&self, store: &mut ParamStore) -> Result<(), NnError> {
        let ids: Vec<(usize, String)> = store.iter().map(|(i, n, _)| (i, n.to_string())).collect();
        for (id, name) in ids {
            let t = self.find(&name).ok_or_else(|| NnError::Checkpoint(format!("missing tensor `{name}`")))?;
            store.set(id, t.to_array()?)?;
        }
        // Auxiliary tensors (optimizer moments and the like) live under a `prefix/` namespace.
        let params = self.tensors.iter().filter(|t| !t.name.contains('/')).count();
        if params != store.len() {
            return Err(NnError::Checkpoint(format!("checkpoint holds {params} tensors, model has {}", store.len())));
        }
        Ok(())
    }

    /// Optimizer moments, if the checkpoint carries them.
    pub fn restore_adam(&self, store: &ParamStore, adam: &mut Adam) -> Result<bool, NnError> {
        let mut found = false;
        for (id, name, a) in store.iter() {
            let (Some(m), Some(v)) = (self.find(&format!("{MOMENT1}{name}")), self.find(&format!("{MOMENT2}{name}"))) else {
                continue;
            };
            let (m, v) = (m.to_array()?, v.to_array()?);
            if m.dim() != a.dim() || v.dim() != a.dim() {
                return Err(NnError::Checkpoint(format!("moment shape mismatch for `{name}`")));
            }
            adam.m[id] = m;
            adam.v[id] = v;
            found = true;
        }
        Ok(found)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_str(w, &self.config)?;
        put_str(w, &self.quantizer)?;
        put_u32(w, self.tensors.len() as u32)?;
        for t in &self.tensors {
            put_str(w, &t.name)?;
            w.write_all(&[DTYPE_F32])?;
            put_u32(w, t.dims.len() as u32)?;
            for &d in &t.dims {
                put_u32(w, d as u32)?;
            }
            let mut bytes = Vec::with_capacity(t.data.len() * 4);
            for x in &t.data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("not an MFCK checkpoint".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config = get_str(r, 1 << 28)?;
        let quantizer = get_str(r, 1 << 28)?;
        let count = get_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = get_str(r, 4096)?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            if dtype[0] != DTYPE_F32 {
                return Err(NnError::Checkpoint(format!("tensor `{name}` has unknown dtype {}", dtype[0])));
            }
            let rank = get_u32(r)? as usize;
            if rank > 8 {
                return Err(NnError::Checkpoint(format!("tensor `{name}` has rank {rank}")));
            }
            let dims: Vec<usize> = (0..rank).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n <= 1 << 28);
            let n = n.ok_or_else(|| NnError::Checkpoint(format!("tensor `{name}` is too large")))?;
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(Tensor { name, dims, data });
        }
        Ok(Checkpoint { config, quantizer, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}
