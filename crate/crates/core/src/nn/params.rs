use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;

use super::{NnError, Tensor};
use crate::rng::Rng;

const MAGIC: &[u8; 4] = b"CFNN";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub trainable: bool,
}

/// Named parameters with their Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        let n = value.len();
        self.params.insert(
            name.to_string(),
            Param {
                value,
                m: vec![0.0; n],
                v: vec![0.0; n],
                trainable,
            },
        );
    }

    /// Uniform in `±scale`.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], scale: f64, rng: &mut Rng) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.insert(name, Tensor::new(shape, data), true);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_values(&self, trainable_only: bool) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable || !trainable_only)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if p.value.shape != value.shape {
            return Err(NnError::Shape {
                op: "set",
                detail: format!("{name}: {:?} vs {:?}", p.value.shape, value.shape),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Copies values (not optimizer state) of every parameter under
    /// `prefix` from another store.
    pub fn copy_prefix(&mut self, other: &ParamStore, prefix: &str) -> Result<(), NnError> {
        for (name, p) in other.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            self.set(name, p.value.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::from(p.trainable));
            out.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
            for &d in &p.value.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for buf in [&p.value.data, &p.m, &p.v] {
                for v in buf.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let step = r.u64()?;
        let mut store = ParamStore {
            params: BTreeMap::new(),
            step,
        };
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| NnError::Checkpoint("name is not utf-8".into()))?;
            let trainable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = r.f64s(n)?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            store.params.insert(
                name,
                Param {
                    value: Tensor::new(&shape, data),
                    m,
                    v,
                    trainable,
                },
            );
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<ParamStore, NnError> {
        let bytes = std::fs::read(path)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        ParamStore::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("size".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update of every named gradient. Frozen
    /// parameters are skipped.
    pub fn step(&self, store: &mut ParamStore, grads: &[(String, Vec<f64>)]) -> Result<(), NnError> {
        for (name, g) in grads {
            let p = store
                .params
                .get(name)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
            if p.value.len() != g.len() {
                return Err(NnError::Shape {
                    op: "adam",
                    detail: format!("{name}: {} values, {} gradients", p.value.len(), g.len()),
                });
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.params.get_mut(name).expect("checked above");
            if !p.trainable {
                continue;
            }
            for i in 0..g.len() {
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g[i];
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = p.m[i] / c1;
                let vhat = p.v[i] / c2;
                p.value.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(String, Vec<f64>)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        grads
            .iter_mut()
            .flat_map(|(_, g)| g.iter_mut())
            .for_each(|v| *v *= f);
    }
    norm
}
