//! Named trainable parameters, gradient buffers, the Adam update, and
//! the versioned checkpoint format.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::linalg::Matrix;

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable matrix with its gradient and Adam moment buffers, all
/// shape-matched to the value.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub gradient: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

/// Adam hyperparameters. Defaults: lr 0.001, betas (0.9, 0.999), eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        let (r, c) = (value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            gradient: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        });
        self.by_name.insert(name, id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Adds `scale ·` the buffered gradients into the parameters' own
    /// gradient slots.
    pub fn accumulate_gradients(&mut self, buf: &GradBuffer, scale: f64) {
        assert_eq!(buf.grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(&buf.grads) {
            for (dst, src) in p.gradient.data_mut().iter_mut().zip(g.data()) {
                *dst += scale * src;
            }
        }
    }

    pub fn zero_gradients(&mut self) {
        for p in &mut self.params {
            p.gradient.data_mut().fill(0.0);
        }
    }

    /// One bias-corrected Adam step over every parameter, consuming and
    /// clearing the stored gradients. `step_count` advances by exactly 1.
    pub fn adam_step(&mut self, h: &AdamParams) {
        for p in &mut self.params {
            let t = p.step_count + 1;
            let bc1 = 1.0 - h.beta1.powi(t as i32);
            let bc2 = 1.0 - h.beta2.powi(t as i32);
            for i in 0..p.value.data().len() {
                let g = p.gradient.data()[i];
                let m = h.beta1 * p.adam_m.data()[i] + (1.0 - h.beta1) * g;
                let v = h.beta2 * p.adam_v.data()[i] + (1.0 - h.beta2) * g * g;
                p.adam_m.data_mut()[i] = m;
                p.adam_v.data_mut()[i] = v;
                let update = h.lr * (m / bc1) / ((v / bc2).sqrt() + h.eps);
                p.value.data_mut()[i] -= update;
            }
            p.gradient.data_mut().fill(0.0);
            p.step_count = t;
        }
    }

    /// Serializes every parameter value (name, rows, cols, row-major f64
    /// little-endian entries) behind a magic tag and format version.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    /// Loads checkpoint values into this store. Every stored matrix must
    /// match an existing parameter's name and shape.
    pub fn load_checkpoint_into<R: Read>(&mut self, mut r: R) -> Result<(), NetError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(NetError::Io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NetError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u64(&mut r)? as usize;
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(NetError::Io)?;
            let name = String::from_utf8(name)
                .map_err(|e| NetError::Checkpoint(format!("bad name: {e}")))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf).map_err(NetError::Io)?;
                *v = f64::from_le_bytes(buf);
            }
            let id = self.by_name(&name).ok_or_else(|| {
                NetError::Checkpoint(format!("unknown parameter {name:?} in checkpoint"))
            })?;
            let p = self.get_mut(id);
            if p.value.rows() != rows || p.value.cols() != cols {
                return Err(NetError::Checkpoint(format!(
                    "shape mismatch for {name:?}: {}x{} vs {rows}x{cols}",
                    p.value.rows(),
                    p.value.cols()
                )));
            }
            p.value = Matrix::new(rows, cols, data)
                .map_err(|e| NetError::Checkpoint(format!("{name:?}: {e}")))?;
        }
        Ok(())
    }

    pub fn load_checkpoint_file(&mut self, path: &Path) -> Result<(), NetError> {
        let file = std::fs::File::open(path).map_err(NetError::Io)?;
        self.load_checkpoint_into(std::io::BufReader::new(file))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"IDATNCK1";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(NetError::Io)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(NetError::Io)?;
    Ok(u64::from_le_bytes(b))
}

/// Dense per-parameter gradient accumulator, used so that several tapes
/// (one per example) can be reduced deterministically.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Matrix>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub(crate) fn add_to(&mut self, id: ParamId, m: &Matrix) {
        let g = &mut self.grads[id.0];
        debug_assert_eq!((g.rows(), g.cols()), (m.rows(), m.cols()));
        for (dst, src) in g.data_mut().iter_mut().zip(m.data()) {
            *dst += src;
        }
    }

    pub(crate) fn add_row_to(&mut self, id: ParamId, row: usize, v: &[f64]) {
        let g = &mut self.grads[id.0];
        for (dst, src) in g.row_mut(row).iter_mut().zip(v) {
            *dst += src;
        }
    }

    /// Adds another buffer into this one (fixed call order keeps batch
    /// reductions bit-deterministic).
    pub fn merge(&mut self, other: &GradBuffer) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}
