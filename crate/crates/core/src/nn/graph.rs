//! Reverse-mode automatic differentiation over a tape of dense tensors.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep. Values
//! live in the graph; callers hold [`Var`] handles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::nearest_neighbors;
use crate::nn::kernels;
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Chamfer convention used by the differentiable loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdVariant {
    /// Half the sum of mean Euclidean nearest-neighbor distances.
    #[default]
    L1,
    /// Sum of mean squared nearest-neighbor distances.
    L2,
}

impl std::str::FromStr for CdVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(invalid(format!("cd variant must be l1|l2, got {other}"))),
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Abs(Var),
    Reshape(Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceCols { src: Var, start: usize },
    Gather { src: Var, index: Vec<usize> },
    Sum(Var),
    Mean(Var),
    ReduceMax { src: Var, axis: usize, argmax: Vec<usize> },
    ReduceMean { src: Var, axis: usize },
    Softmax(Var),
    GroupSoftmax { src: Var, group: usize },
    GroupSum { src: Var, group: usize },
    GroupMax { src: Var, argmax: Vec<usize> },
    LayerNorm { src: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Dropout { src: Var, mask: Vec<T> },
    Chamfer { a: Var, b: Var, variant: CdVariant, nn_ab: Vec<usize>, nn_ba: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of tensors and the operations that produced them.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    training: bool,
    seed: u64,
    step: u64,
    dropout_ops: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines key parts into one RNG seed.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5158_4650_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

impl<T: Real> Graph<T> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            seed: 0,
            step: 0,
            dropout_ops: 0,
        }
    }

    /// Training-mode graph. Dropout masks are keyed by `(seed, step, op index)`.
    pub fn training(seed: u64, step: u64) -> Self {
        Self {
            training: true,
            seed,
            step,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(invalid(format!("{op}: expected a 2-D tensor, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`c` bias to every row of an `r x c` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(bias).numel() != c {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let vx = self.value(x);
        let data = vx
            .data()
            .chunks_exact(c.max(1))
            .flat_map(|row| row.iter().zip(&b).map(|(&v, &bb)| v + bb))
            .collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| v * s).collect())
            .expect("same shape");
        self.push(t, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|v| v.abs()).collect())
            .expect("same shape");
        self.push(t, Op::Abs(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        if shape.iter().product::<usize>() != vx.numel() {
            return Err(mismatch("reshape", vx.shape(), &shape));
        }
        let t = vx.clone().with_shape(shape);
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let data = kernels::transpose(self.value(x).data(), r, c);
        Ok(self.push(Tensor::matrix(c, r, data)?, Op::Transpose(x), &[x]))
    }

    /// Concatenates 2-D tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| invalid("concat: no inputs"))?;
        let (r0, c0) = self.dims2("concat", first)?;
        match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &v in inputs {
                    let (r, c) = self.dims2("concat", v)?;
                    if c != c0 {
                        return Err(mismatch("concat", self.shape(first), self.shape(v)));
                    }
                    rows += r;
                    data.extend_from_slice(self.value(v).data());
                }
                let t = Tensor::matrix(rows, c0, data)?;
                Ok(self.push(t, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
            }
            1 => {
                let mut cols = 0;
                for &v in inputs {
                    let (r, c) = self.dims2("concat", v)?;
                    if r != r0 {
                        return Err(mismatch("concat", self.shape(first), self.shape(v)));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(i));
                    }
                }
                let t = Tensor::matrix(r0, cols, data)?;
                Ok(self.push(t, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
            }
            _ => Err(invalid(format!("concat: axis {axis} not supported for 2-D tensors"))),
        }
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if start + len > c {
            return Err(invalid(format!(
                "slice_cols: columns {start}..{} out of range for shape {:?}",
                start + len,
                self.shape(x)
            )));
        }
        let vx = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&vx.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(r, len, data)?, Op::SliceCols { src: x, start }, &[x]))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("gather", x)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(invalid(format!("gather: row {bad} out of range for {r} rows")));
        }
        let vx = self.value(x);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(vx.row(i));
        }
        let t = Tensor::matrix(index.len(), c, data)?;
        Ok(self.push(t, Op::Gather { src: x, index: index.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let s = vx.data().iter().fold(T::zero(), |a, &b| a + b) / T::from_count(vx.numel());
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Max over rows (`axis = 0`, result `1 x c`) or columns (`axis = 1`,
    /// result `r x 1`). Ties pick the first position.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2("reduce_max", x)?;
        let vx = self.value(x);
        let (shape, argmax) = match axis {
            0 => {
                let mut arg = vec![0usize; c];
                for j in 0..c {
                    for i in 1..r {
                        if vx.get(i, j) > vx.get(arg[j], j) {
                            arg[j] = i;
                        }
                    }
                }
                (vec![1, c], arg)
            }
            1 => {
                let mut arg = vec![0usize; r];
                for (i, a) in arg.iter_mut().enumerate() {
                    for j in 1..c {
                        if vx.get(i, j) > vx.get(i, *a) {
                            *a = j;
                        }
                    }
                }
                (vec![r, 1], arg)
            }
            _ => return Err(invalid(format!("reduce_max: axis {axis} not supported"))),
        };
        let data = if axis == 0 {
            argmax.iter().enumerate().map(|(j, &i)| vx.get(i, j)).collect()
        } else {
            argmax.iter().enumerate().map(|(i, &j)| vx.get(i, j)).collect()
        };
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::ReduceMax { src: x, axis, argmax }, &[x]))
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2("reduce_mean", x)?;
        let vx = self.value(x);
        let t = match axis {
            0 => {
                let mut out = vec![T::zero(); c];
                for i in 0..r {
                    for (o, &v) in out.iter_mut().zip(vx.row(i)) {
                        *o += v;
                    }
                }
                let rn = T::from_count(r);
                Tensor::matrix(1, c, out.into_iter().map(|v| v / rn).collect())?
            }
            1 => {
                let cn = T::from_count(c);
                let out = (0..r)
                    .map(|i| vx.row(i).iter().fold(T::zero(), |a, &b| a + b) / cn)
                    .collect();
                Tensor::matrix(r, 1, out)?
            }
            _ => return Err(invalid(format!("reduce_mean: axis {axis} not supported"))),
        };
        Ok(self.push(t, Op::ReduceMean { src: x, axis }, &[x]))
    }

    /// Softmax along `axis` of a 2-D tensor, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2("softmax", x)?;
        match axis {
            1 => {
                let vx = self.value(x);
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = vx.row(i);
                    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                    let start = data.len();
                    let mut s = T::zero();
                    for &v in row {
                        let e = (v - m).exp();
                        s += e;
                        data.push(e);
                    }
                    for e in &mut data[start..] {
                        *e /= s;
                    }
                }
                let t = Tensor::matrix(r, c, data)?;
                Ok(self.push(t, Op::Softmax(x), &[x]))
            }
            0 => self.group_softmax(x, r),
            _ => Err(invalid(format!("softmax: axis {axis} not supported"))),
        }
    }

    fn check_groups(&self, op: &'static str, x: Var, group: usize) -> Result<(usize, usize)> {
        let (r, c) = self.dims2(op, x)?;
        if group == 0 || r % group != 0 {
            return Err(invalid(format!(
                "{op}: {r} rows cannot be split into groups of {group}"
            )));
        }
        Ok((r / group, c))
    }

    /// For each block of `group` consecutive rows, softmax down each column.
    pub fn group_softmax(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, c) = self.check_groups("group_softmax", x, group)?;
        let vx = self.value(x).data();
        let mut data = vec![T::zero(); vx.len()];
        for g in 0..n {
            let base = g * group * c;
            for j in 0..c {
                let mut m = T::neg_infinity();
                for r in 0..group {
                    m = m.max(vx[base + r * c + j]);
                }
                let mut s = T::zero();
                for r in 0..group {
                    let e = (vx[base + r * c + j] - m).exp();
                    data[base + r * c + j] = e;
                    s += e;
                }
                for r in 0..group {
                    data[base + r * c + j] /= s;
                }
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::GroupSoftmax { src: x, group }, &[x]))
    }

    /// Sums each block of `group` consecutive rows: `(n*group) x c -> n x c`.
    pub fn group_sum(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, c) = self.check_groups("group_sum", x, group)?;
        let vx = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for g in 0..n {
            for r in 0..group {
                let row = &vx[(g * group + r) * c..(g * group + r + 1) * c];
                for (o, &v) in out[g * c..(g + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::GroupSum { src: x, group }, &[x]))
    }

    /// Column-wise max over each block of `group` rows (local max pooling).
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, c) = self.check_groups("group_max", x, group)?;
        let vx = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        let mut argmax = vec![0usize; n * c];
        for g in 0..n {
            for j in 0..c {
                let mut best = g * group;
                for r in 1..group {
                    if vx[(g * group + r) * c + j] > vx[best * c + j] {
                        best = g * group + r;
                    }
                }
                argmax[g * c + j] = best;
                out[g * c + j] = vx[best * c + j];
            }
        }
        let t = Tensor::matrix(n, c, out)?;
        Ok(self.push(t, Op::GroupMax { src: x, argmax }, &[x]))
    }

    /// Layer normalization over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(gain).numel() != c {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        if self.value(bias).numel() != c {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(bias)));
        }
        let vx = self.value(x);
        let r = vx.rows();
        let cn = T::from_count(c);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(vx.numel());
        for i in 0..r {
            let row = vx.row(i);
            let mu = row.iter().fold(T::zero(), |a, &v| a + v) / cn;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / cn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm { src: x, gain, bias, xhat, inv_std },
            &[x, gain, bias],
        ))
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid(format!("dropout: rate {rate} must be in [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let op_id = self.dropout_ops;
        self.dropout_ops += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, self.step, op_id]));
        let keep = T::lit(1.0 / (1.0 - rate));
        let vx = self.value(x);
        let mask: Vec<T> = (0..vx.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = vx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { src: x, mask }, &[x]))
    }

    /// Differentiable Chamfer distance between two `n x 3` point sets.
    pub fn chamfer(&mut self, a: Var, b: Var, variant: CdVariant) -> Result<Var> {
        let (na, ca) = self.dims2("chamfer", a)?;
        let (nb, cb) = self.dims2("chamfer", b)?;
        if ca != 3 || cb != 3 || na == 0 || nb == 0 {
            return Err(mismatch("chamfer", self.shape(a), self.shape(b)));
        }
        let pa = as_points(self.value(a).data());
        let pb = as_points(self.value(b).data());
        let ab = nearest_neighbors(&pb, &pa);
        let ba = nearest_neighbors(&pa, &pb);
        let mean = |m: &[(usize, T)], f: &dyn Fn(T) -> T| {
            m.iter().fold(T::zero(), |s, x| s + f(x.1)) / T::from_count(m.len())
        };
        let value = match variant {
            CdVariant::L1 => T::lit(0.5) * (mean(&ab, &|d| d.sqrt()) + mean(&ba, &|d| d.sqrt())),
            CdVariant::L2 => mean(&ab, &|d| d) + mean(&ba, &|d| d),
        };
        let op = Op::Chamfer {
            a,
            b,
            variant,
            nn_ab: ab.iter().map(|m| m.0).collect(),
            nn_ba: ba.iter().map(|m| m.0).collect(),
        };
        Ok(self.push(Tensor::scalar(value), op, &[a, b]))
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Runs the backward pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            propagate(&self.nodes, &mut self.grads, i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }
}

pub(crate) fn as_points<T: Real>(flat: &[T]) -> Vec<[T; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn slot<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn add_into<T: Real>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let node = &nodes[i];
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            if nodes[a.0].requires_grad {
                let da = kernels::matmul_bt(g, val(*b).data(), m, n, k);
                add_into(slot(grads, nodes, *a).unwrap(), da);
            }
            if nodes[b.0].requires_grad {
                let db = kernels::matmul_at(val(*a).data(), g, m, k, n);
                add_into(slot(grads, nodes, *b).unwrap(), db);
            }
        }
        Op::Add(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                add_into(s, g.iter().copied());
            }
            if let Some(s) = slot(grads, nodes, *b) {
                add_into(s, g.iter().copied());
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                add_into(s, g.iter().copied());
            }
            if let Some(s) = slot(grads, nodes, *b) {
                add_into(s, g.iter().map(|&v| -v));
            }
        }
        Op::Mul(a, b) => {
            let (ga, gb): (Vec<T>, Vec<T>) = g
                .iter()
                .zip(val(*a).data().iter().zip(val(*b).data()))
                .map(|(&gv, (&x, &y))| (gv * y, gv * x))
                .unzip();
            if let Some(s) = slot(grads, nodes, *a) {
                add_into(s, ga);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                add_into(s, gb);
            }
        }
        Op::AddBias(x, bias) => {
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, g.iter().copied());
            }
            let c = val(*bias).numel();
            if let Some(s) = slot(grads, nodes, *bias) {
                for row in g.chunks_exact(c.max(1)) {
                    add_into(s, row.iter().copied());
                }
            }
        }
        Op::Scale(x, k) => {
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, g.iter().map(|&v| v * *k));
            }
        }
        Op::Relu(x) => {
            let xv = val(*x).data();
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, g.iter().zip(xv).map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() }));
            }
        }
        Op::Abs(x) => {
            let xv = val(*x).data();
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(
                    s,
                    g.iter().zip(xv).map(|(&gv, &v)| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
        }
        Op::Reshape(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, g.iter().copied());
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, kernels::transpose(g, c, r));
            }
        }
        Op::Concat { inputs, axis } => {
            let out_cols = node.value.cols();
            let mut offset = 0;
            for &v in inputs {
                let (r, c) = (val(v).shape()[0], val(v).shape()[1]);
                if let Some(s) = slot(grads, nodes, v) {
                    if *axis == 0 {
                        add_into(s, g[offset * out_cols..(offset + r) * out_cols].iter().copied());
                    } else {
                        for row in 0..r {
                            let src = &g[row * out_cols + offset..row * out_cols + offset + c];
                            add_into(&mut s[row * c..(row + 1) * c], src.iter().copied());
                        }
                    }
                }
                offset += if *axis == 0 { r } else { c };
            }
        }
        Op::SliceCols { src, start } => {
            let c = val(*src).cols();
            let len = node.value.cols();
            if let Some(s) = slot(grads, nodes, *src) {
                for (row, gr) in g.chunks_exact(len).enumerate() {
                    add_into(&mut s[row * c + start..row * c + start + len], gr.iter().copied());
                }
            }
        }
        Op::Gather { src, index } => {
            let c = val(*src).cols();
            if let Some(s) = slot(grads, nodes, *src) {
                for (r, &idx) in index.iter().enumerate() {
                    add_into(&mut s[idx * c..(idx + 1) * c], g[r * c..(r + 1) * c].iter().copied());
                }
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                for d in s.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean(x) => {
            let n = T::from_count(val(*x).numel());
            if let Some(s) = slot(grads, nodes, *x) {
                for d in s.iter_mut() {
                    *d += g[0] / n;
                }
            }
        }
        Op::ReduceMax { src, axis, argmax } => {
            let c = val(*src).cols();
            if let Some(s) = slot(grads, nodes, *src) {
                if *axis == 0 {
                    for (j, &i) in argmax.iter().enumerate() {
                        s[i * c + j] += g[j];
                    }
                } else {
                    for (i, &j) in argmax.iter().enumerate() {
                        s[i * c + j] += g[i];
                    }
                }
            }
        }
        Op::ReduceMean { src, axis } => {
            let (r, c) = (val(*src).shape()[0], val(*src).shape()[1]);
            if let Some(s) = slot(grads, nodes, *src) {
                if *axis == 0 {
                    let rn = T::from_count(r);
                    for row in s.chunks_exact_mut(c) {
                        add_into(row, g.iter().map(|&v| v / rn));
                    }
                } else {
                    let cn = T::from_count(c);
                    for (row, &gv) in s.chunks_exact_mut(c).zip(g) {
                        for d in row.iter_mut() {
                            *d += gv / cn;
                        }
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let c = node.value.cols();
            if let Some(s) = slot(grads, nodes, *x) {
                for ((sr, yr), gr) in s.chunks_exact_mut(c).zip(y.chunks_exact(c)).zip(g.chunks_exact(c)) {
                    let dotp = yr.iter().zip(gr).fold(T::zero(), |a, (&yv, &gv)| a + yv * gv);
                    add_into(sr, yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dotp)));
                }
            }
        }
        Op::GroupSoftmax { src, group } => {
            let y = node.value.data();
            let c = node.value.cols();
            let n = node.value.rows() / group;
            if let Some(s) = slot(grads, nodes, *src) {
                for blk in 0..n {
                    let base = blk * group * c;
                    for j in 0..c {
                        let mut dotp = T::zero();
                        for r in 0..*group {
                            let k = base + r * c + j;
                            dotp += y[k] * g[k];
                        }
                        for r in 0..*group {
                            let k = base + r * c + j;
                            s[k] += y[k] * (g[k] - dotp);
                        }
                    }
                }
            }
        }
        Op::GroupSum { src, group } => {
            let c = node.value.cols();
            if let Some(s) = slot(grads, nodes, *src) {
                for (r, row) in s.chunks_exact_mut(c).enumerate() {
                    let gi = r / group;
                    add_into(row, g[gi * c..(gi + 1) * c].iter().copied());
                }
            }
        }
        Op::GroupMax { src, argmax, .. } => {
            let c = node.value.cols();
            if let Some(s) = slot(grads, nodes, *src) {
                for (k, &row) in argmax.iter().enumerate() {
                    s[row * c + k % c] += g[k];
                }
            }
        }
        Op::LayerNorm { src, gain, bias, xhat, inv_std } => {
            let c = node.value.cols();
            let gv = val(*gain).data();
            if let Some(s) = slot(grads, nodes, *gain) {
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    add_into(s, gr.iter().zip(hr).map(|(&a, &b)| a * b));
                }
            }
            if let Some(s) = slot(grads, nodes, *bias) {
                for gr in g.chunks_exact(c) {
                    add_into(s, gr.iter().copied());
                }
            }
            if let Some(s) = slot(grads, nodes, *src) {
                let cn = T::from_count(c);
                for (row, ((gr, hr), sr)) in g
                    .chunks_exact(c)
                    .zip(xhat.chunks_exact(c))
                    .zip(s.chunks_exact_mut(c))
                    .enumerate()
                {
                    let dh: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                    let mean_dh = dh.iter().fold(T::zero(), |a, &b| a + b) / cn;
                    let mean_dhh = dh.iter().zip(hr).fold(T::zero(), |a, (&d, &h)| a + d * h) / cn;
                    let is = inv_std[row];
                    add_into(sr, dh.iter().zip(hr).map(|(&d, &h)| is * (d - mean_dh - h * mean_dhh)));
                }
            }
        }
        Op::Dropout { src, mask } => {
            if let Some(s) = slot(grads, nodes, *src) {
                add_into(s, g.iter().zip(mask).map(|(&a, &m)| a * m));
            }
        }
        Op::Chamfer { a, b, variant, nn_ab, nn_ba } => {
            let pa = val(*a).data();
            let pb = val(*b).data();
            let (na, nb) = (nn_ab.len(), nn_ba.len());
            let mut da = vec![T::zero(); pa.len()];
            let mut db = vec![T::zero(); pb.len()];
            let pair = |from: &[T], to: &[T], dfrom: &mut [T], dto: &mut [T], i: usize, j: usize, w: T| {
                let diff = [
                    from[3 * i] - to[3 * j],
                    from[3 * i + 1] - to[3 * j + 1],
                    from[3 * i + 2] - to[3 * j + 2],
                ];
                let factor = match variant {
                    CdVariant::L1 => {
                        let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
                        if d > T::zero() {
                            w / d
                        } else {
                            T::zero()
                        }
                    }
                    CdVariant::L2 => T::lit(2.0) * w,
                };
                for d in 0..3 {
                    dfrom[3 * i + d] += factor * diff[d];
                    dto[3 * j + d] -= factor * diff[d];
                }
            };
            let (wa, wb) = match variant {
                CdVariant::L1 => (T::lit(0.5) / T::from_count(na), T::lit(0.5) / T::from_count(nb)),
                CdVariant::L2 => (T::one() / T::from_count(na), T::one() / T::from_count(nb)),
            };
            for (i, &j) in nn_ab.iter().enumerate() {
                pair(pa, pb, &mut da, &mut db, i, j, wa * g[0]);
            }
            for (j, &i) in nn_ba.iter().enumerate() {
                pair(pb, pa, &mut db, &mut da, j, i, wb * g[0]);
            }
            if let Some(s) = slot(grads, nodes, *a) {
                add_into(s, da);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                add_into(s, db);
            }
        }
    }
}
