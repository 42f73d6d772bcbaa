//! Parameterized building blocks. Each layer holds [`ParamId`]s into a
//! [`ParameterStore`] and runs against a [`Bound`] copy of the store inside a
//! graph.

use crate::error::{invalid, Result};
use crate::geometry::{knn_points, Point3};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{Bound, ParamId, ParameterStore};
use crate::nn::tensor::Tensor;
use crate::scalar::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// `y = x W + b` over the rows of `x`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights uniform in `±sqrt(1 / in_dim)`, zero bias.
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = (1.0 / in_dim as f64).sqrt();
        Ok(Self {
            weight: store.add_uniform(format!("{name}.weight"), vec![in_dim, out_dim], bound)?,
            bias: store.add_full(format!("{name}.bias"), vec![out_dim], 0.0)?,
            in_dim,
            out_dim,
        })
    }

    pub fn zeroed<T: Real>(store: &mut ParameterStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add_full(format!("{name}.weight"), vec![in_dim, out_dim], 0.0)?,
            bias: store.add_full(format!("{name}.bias"), vec![out_dim], 0.0)?,
            in_dim,
            out_dim,
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        g.add_bias(y, p.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_full(format!("{name}.gain"), vec![dim], 1.0)?,
            bias: store.add_full(format!("{name}.bias"), vec![dim], 0.0)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias), T::lit(LAYER_NORM_EPS))
    }
}

/// `linear(C -> hidden) -> ReLU -> dropout -> linear(hidden -> C)`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, dim: usize, hidden: usize, dropout: f64) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim)?,
            dropout,
        })
    }

    pub fn param_count(dim: usize, hidden: usize) -> usize {
        Linear::param_count(dim, hidden) + Linear::param_count(hidden, dim)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout)?;
        self.down.forward(g, p, h)
    }
}

/// Multi-head scaled dot-product attention with queries from one input and
/// keys/values from another.
///
/// By default keys and values share a single projection; `separate_value`
/// gives the value path its own weights.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key_value: Linear,
    pub value: Option<Linear>,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        separate_value: bool,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid(format!(
                "multi_head_attention: model dim {dim} is not divisible by {heads} heads"
            )));
        }
        let query = Linear::new(store, &format!("{name}.query"), dim, dim)?;
        let key_value = Linear::new(store, &format!("{name}.key_value"), dim, dim)?;
        let value = if separate_value {
            Some(Linear::new(store, &format!("{name}.value"), dim, dim)?)
        } else {
            None
        };
        let output = Linear::zeroed(store, &format!("{name}.output"), dim, dim)?;
        Ok(Self { query, key_value, value, output, heads, dim })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Returns the projected queries and the attention output.
    pub fn forward_parts<T: Real>(&self, g: &mut Graph<T>, p: &Bound, q_in: Var, kv_in: Var) -> Result<(Var, Var)> {
        let q = self.query.forward(g, p, q_in)?;
        let k = self.key_value.forward(g, p, kv_in)?;
        let v = match &self.value {
            Some(l) => l.forward(g, p, kv_in)?,
            None => k,
        };
        let dk = self.head_dim();
        let scale = T::one() / T::from_count(dk).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores, 1)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat(&heads, 1)?;
        let out = self.output.forward(g, p, merged)?;
        Ok((q, out))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, q_in: Var, kv_in: Var) -> Result<Var> {
        Ok(self.forward_parts(g, p, q_in, kv_in)?.1)
    }
}

/// Neighborhood indices for vector attention: row `i*k + j` pairs center
/// `i` with its `j`-th nearest neighbor.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    pub k: usize,
    pub center: Vec<usize>,
    pub neighbor: Vec<usize>,
}

impl Neighborhood {
    pub fn build<T: Real>(reference: &[Point3<T>], queries: &[Point3<T>], k: usize) -> Result<Self> {
        let neighbor = knn_points(reference, queries, k)?;
        let center = (0..queries.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        Ok(Self { k, center, neighbor })
    }

    /// `p_neighbor - p_center` for every row, as an `(n*k) x 3` tensor.
    pub fn relative_coords<T: Real>(&self, reference: &[Point3<T>], queries: &[Point3<T>]) -> Tensor<T> {
        let data = self
            .center
            .iter()
            .zip(&self.neighbor)
            .flat_map(|(&c, &n)| {
                let (a, b) = (reference[n], queries[c]);
                [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
            })
            .collect();
        Tensor::matrix(self.center.len(), 3, data).expect("n*k x 3")
    }
}

/// Point Transformer style vector self-attention over k-NN neighborhoods.
///
/// For center `i` and neighbor `j`: `delta = pos_mlp(p_i - p_j)`,
/// `w = softmax_j(attn_mlp(q_i - k_j + delta))` per channel, and
/// `y_i = sum_j w * (v_j + delta)`. The block returns `x + out(y)`.
#[derive(Clone, Debug)]
pub struct VectorAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub pos1: Linear,
    pub pos2: Linear,
    pub attn1: Linear,
    pub attn2: Linear,
    pub output: Linear,
    pub dim: usize,
}

impl VectorAttention {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim)?,
            pos1: Linear::new(store, &format!("{name}.pos1"), 3, dim)?,
            pos2: Linear::new(store, &format!("{name}.pos2"), dim, dim)?,
            attn1: Linear::new(store, &format!("{name}.attn1"), dim, dim)?,
            attn2: Linear::new(store, &format!("{name}.attn2"), dim, dim)?,
            output: Linear::zeroed(store, &format!("{name}.output"), dim, dim)?,
            dim,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        Linear::param_count(3, dim) + 7 * Linear::param_count(dim, dim)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var, coords: &[Point3<T>], k: usize) -> Result<Var> {
        let n = coords.len();
        if g.shape(features) != [n, self.dim] {
            return Err(invalid(format!(
                "vector_attention: features {:?} do not match {n} points x {} channels",
                g.shape(features),
                self.dim
            )));
        }
        if k == 0 || k > n {
            return Err(invalid(format!("vector_attention: k = {k} must be in 1..={n}")));
        }
        let nb = Neighborhood::build(coords, coords, k)?;
        // center minus neighbor
        let rel = nb.relative_coords(coords, coords);
        let rel = g.constant(rel);
        let rel = g.scale(rel, -T::one());

        let q = self.query.forward(g, p, features)?;
        let kx = self.key.forward(g, p, features)?;
        let v = self.value.forward(g, p, features)?;

        let delta = self.pos1.forward(g, p, rel)?;
        let delta = g.relu(delta);
        let delta = self.pos2.forward(g, p, delta)?;

        let q_c = g.gather(q, &nb.center)?;
        let k_n = g.gather(kx, &nb.neighbor)?;
        let v_n = g.gather(v, &nb.neighbor)?;

        let rel_qk = g.sub(q_c, k_n)?;
        let rel_qk = g.add(rel_qk, delta)?;
        let a = self.attn1.forward(g, p, rel_qk)?;
        let a = g.relu(a);
        let a = self.attn2.forward(g, p, a)?;
        let w = g.group_softmax(a, k)?;

        let vd = g.add(v_n, delta)?;
        let weighted = g.mul(w, vd)?;
        let y = g.group_sum(weighted, k)?;
        let out = self.output.forward(g, p, y)?;
        g.add(features, out)
    }
}
