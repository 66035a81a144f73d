use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `±sqrt(6 / (rows + cols))`.
    pub fn xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    pub fn to_checkpoint(&self, format: &str) -> Checkpoint {
        Checkpoint {
            format: format.to_string(),
            version: CHECKPOINT_VERSION,
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    shape: t.shape(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Replaces every tensor with the checkpoint's, which must carry the same
    /// names and shapes in the same order.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint, format: &str) -> Result<()> {
        if ckpt.format != format {
            return Err(Error::Configuration(format!(
                "checkpoint format `{}`, expected `{format}`",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Configuration(format!(
                "checkpoint version {}, expected {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        if ckpt.tensors.len() != self.tensors.len() {
            return Err(Error::Configuration(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                ckpt.tensors.len(),
                self.tensors.len()
            )));
        }
        let mut loaded = Vec::with_capacity(self.tensors.len());
        for (i, nt) in ckpt.tensors.iter().enumerate() {
            if nt.name != self.names[i] || nt.shape != self.tensors[i].shape() {
                return Err(Error::Configuration(format!(
                    "checkpoint tensor `{}` {:?} does not match `{}` {:?}",
                    nt.name,
                    nt.shape,
                    self.names[i],
                    self.tensors[i].shape()
                )));
            }
            let t = Tensor::from_vec(nt.shape[0], nt.shape[1], nt.data.clone())
                .map_err(|e| Error::Configuration(format!("tensor `{}`: {e}", nt.name)))?;
            if !t.is_finite() {
                return Err(Error::Configuration(format!("tensor `{}` is not finite", nt.name)));
            }
            loaded.push(t);
        }
        self.tensors = loaded;
        Ok(())
    }

    pub fn save(&self, path: &Path, format: &str) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint(format))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &Path, format: &str) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        self.load_checkpoint(&ckpt, format)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

/// Tape handles for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients accumulated on the tape, aligned with the store.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| tape.grad(v).cloned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::from_vec(1, 3, vec![0.1, 1.0 / 3.0, -2.5e-7]).unwrap());
        let ckpt = a.to_checkpoint("test");
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let mut b = ParamStore::new();
        b.zeros("w", 1, 3);
        b.load_checkpoint(&back, "test").unwrap();
        assert_eq!(a, b);

        let mut c = ParamStore::new();
        c.zeros("w", 3, 1);
        assert!(c.load_checkpoint(&back, "test").is_err());
        assert!(b.load_checkpoint(&back, "other").is_err());
    }
}
