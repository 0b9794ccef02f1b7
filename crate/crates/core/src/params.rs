//! Named parameters, their momentum buffers, SGD, and the binary
//! checkpoint container.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph};
use crate::scalar::Scalar;
use crate::tensor::{numel, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSSP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    momentum: Vec<T>,
    /// Multiplies the global learning rate for this parameter.
    lr_scale: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        value.set_requires_grad(true);
        let momentum = vec![T::zero(); value.len()];
        self.params.push(Param {
            name: name.clone(),
            value,
            momentum,
            lr_scale: T::one(),
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn momentum(&self, id: ParamId) -> &[T] {
        &self.params[id.0].momentum
    }

    pub fn lr_scale(&self, id: ParamId) -> T {
        self.params[id.0].lr_scale
    }

    pub fn set_lr_scale(&mut self, id: ParamId, scale: T) {
        self.params[id.0].lr_scale = scale;
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds the gradients of every parameter leaf of `graph` into the
    /// parameter gradient buffers. Parameters that the loss does not reach
    /// still get a (zero) buffer.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &Gradients<T>) {
        for &(id, var) in graph.param_vars() {
            let p = &mut self.params[id.0].value;
            match grads.get(var) {
                Some(g) => p.accumulate_grad(g),
                None => p.accumulate_grad(&vec![T::zero(); p.len()]),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    /// SGD with momentum and L2 weight decay:
    /// `v ← μ·v + g + λ·p`, `p ← p − lr·s·v` with `s` the parameter's
    /// learning-rate scale. Gradients are zeroed afterwards.
    pub fn sgd_step(&mut self, lr: T, momentum: T, weight_decay: T) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.value.grad().is_none()) {
            return Err(Error::Invariant(format!(
                "sgd_step: parameter {:?} has no gradient",
                p.name
            )));
        }
        for p in &mut self.params {
            let grad = p.value.take_grad().expect("checked above");
            let lr = lr * p.lr_scale;
            for ((v, w), &g) in p.momentum.iter_mut().zip(p.value.data_mut()).zip(&grad) {
                *v = momentum * *v + g + weight_decay * *w;
                *w -= lr * *v;
            }
            p.value.accumulate_grad(&vec![T::zero(); grad.len()]);
        }
        Ok(())
    }

    /// All parameter values flattened in insertion order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: {
                        let mut t: Tensor<U> = p.value.cast();
                        t.set_requires_grad(true);
                        t
                    },
                    momentum: p.momentum.iter().map(|v| U::lit(v.as_f64())).collect(),
                    lr_scale: U::lit(p.lr_scale.as_f64()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Serializes values (not momentum) in the `DSSP` container.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            for d in p.value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::data::write_atomic(path, &buf)
    }

    /// Overwrites values from a checkpoint. Every stored parameter must be
    /// present with a matching shape; momentum is reset.
    pub fn load_checkpoint(&mut self, records: Vec<(String, Tensor<f32>)>) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} parameters, network expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, value) in records {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Input(format!("checkpoint parameter {name:?} unknown to network")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(Error::Input(format!(
                    "checkpoint parameter {name:?} has shape {:?}, network expects {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            let mut t: Tensor<T> = value.cast();
            t.set_requires_grad(true);
            p.value = t;
            p.momentum.iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint(read_checkpoint(&mut bytes.as_slice())?)
    }
}

fn take<'a>(buf: &mut &'a [u8], n: usize, offset: &mut usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Parse {
            offset: *offset,
            message: format!("truncated checkpoint while reading {what}"),
        });
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    *offset += n;
    Ok(head)
}

fn u32_at(buf: &mut &[u8], offset: &mut usize, what: &str) -> Result<u32> {
    let b = take(buf, 4, offset, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses a `DSSP` container into `(name, tensor)` records in file order.
pub fn read_checkpoint<R: Read>(reader: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut buf = bytes.as_slice();
    let mut offset = 0;
    if take(&mut buf, 4, &mut offset, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad checkpoint magic (expected DSSP)".into(),
        });
    }
    let version = u32_at(&mut buf, &mut offset, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut records = Vec::new();
    while !buf.is_empty() {
        let start = offset;
        let len = u32_at(&mut buf, &mut offset, "name length")? as usize;
        let name = std::str::from_utf8(take(&mut buf, len, &mut offset, "name")?)
            .map_err(|_| Error::Parse {
                offset: start + 4,
                message: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let mut shape: Shape = [0; 4];
        for d in &mut shape {
            *d = u32_at(&mut buf, &mut offset, "shape")? as usize;
        }
        let n = numel(shape);
        let raw = take(&mut buf, n * 4, &mut offset, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(records)
}
