use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, parse_error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PXF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub(crate) first_moment: Vec<T>,
    pub(crate) second_moment: Vec<T>,
}

/// Named parameters in creation order plus optimizer state.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    pub(crate) step: u64,
    init_rng: ChaCha8Rng,
}

/// Graph leaves for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParameterStore<T> {
    /// Empty store; `seed` drives parameter initialization.
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
            init_rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(invalid(format!("parameter `{name}` already exists")));
        }
        let n = value.numel();
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: vec![T::zero(); n],
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
        });
        Ok(ParamId(id))
    }

    /// Adds a parameter with entries uniform in `[-bound, bound]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.init_rng.random_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::lit(value)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Pushes every parameter into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| g.leaf(p.value.clone(), trainable))
                .collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Copies the gradients of the bound leaves out of a graph.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Option<Vec<T>>> {
        bound.vars.iter().map(|&v| g.grad(v).map(<[T]>::to_vec)).collect()
    }

    /// `grad += scale * grads` in parameter order.
    pub fn accumulate_grads(&mut self, grads: &[Option<Vec<T>>], scale: T) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                for (d, &s) in p.grad.iter_mut().zip(g) {
                    *d += scale * s;
                }
            }
        }
    }

    /// Serializes parameter values to the PXF1 checkpoint format.
    pub fn to_pxf1(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Parses a PXF1 checkpoint. Optimizer state starts fresh.
    pub fn from_pxf1(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(parse_error(bytes.len() as u64, "checkpoint shorter than header and checksum"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(parse_error(0, "bad checkpoint magic"));
        }
        let body_end = bytes.len() - 8;
        let expected = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        let actual = fnv1a64(&bytes[..body_end]);
        if expected != actual {
            return Err(parse_error(body_end as u64, format!(
                "checksum mismatch: stored {expected:#018x}, computed {actual:#018x}"
            )));
        }
        let mut r = ByteReader { bytes: &bytes[..body_end], pos: 4 };
        let mut store = Self::new(0);
        while r.pos < body_end {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| parse_error(at as u64, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data_at = r.pos;
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            store
                .add(name, Tensor::new(shape, data)?)
                .map_err(|e| parse_error(data_at as u64, e.to_string()))?;
        }
        Ok(store)
    }

    /// Overwrites values from `other`, which must hold the same names and
    /// shapes in the same order.
    pub fn load_values(&mut self, other: &ParameterStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(invalid(format!(
                    "checkpoint parameter `{}` {:?} does not match model parameter `{}` {:?}",
                    theirs.name,
                    theirs.value.shape(),
                    mine.name,
                    mine.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(parse_error(self.pos as u64, format!("truncated record: need {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl Bound {
    /// Graph leaves standing in for a store's parameters, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}
