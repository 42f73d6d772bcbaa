use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::nn::{Bound, FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, ParamId, ParameterStore, Tensor, Var};
use crate::scalar::Real;

use super::config::ModelConfig;

/// Expands `N x C` existing features to `M x C` missing features. The
/// channels are split into `U` groups; one shared linear map widens every
/// group and each widened group is reshaped to `M` rows.
#[derive(Clone, Debug)]
pub struct MissingFeatureGenerator {
    pub expand: Linear,
    pub groups: usize,
    pub missing: usize,
}

impl MissingFeatureGenerator {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &ModelConfig) -> Result<Self> {
        if !(cfg.missing_proxies * cfg.dim).is_multiple_of(cfg.proxies * cfg.groups) || !cfg.dim.is_multiple_of(cfg.groups) {
            return Err(invalid(format!(
                "missing_feature_generator: M*C = {} must be divisible by N*U = {} and C = {} by U",
                cfg.missing_proxies * cfg.dim,
                cfg.proxies * cfg.groups,
                cfg.dim
            )));
        }
        Ok(Self {
            expand: Linear::new(store, "generator.expand", cfg.group_width(), cfg.expansion())?,
            groups: cfg.groups,
            missing: cfg.missing_proxies,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var) -> Result<Var> {
        let (n, c) = (g.shape(features)[0], g.shape(features)[1]);
        let width = self.expand.in_dim;
        if c != width * self.groups || n * self.expand.out_dim != self.missing * width {
            return Err(invalid(format!(
                "missing_feature_generator: input {n}x{c} does not match {} groups of {width} expanding to {} rows",
                self.groups, self.missing
            )));
        }
        let mut parts = Vec::with_capacity(self.groups);
        for u in 0..self.groups {
            let group = g.slice_cols(features, u * width, width)?;
            let wide = self.expand.forward(g, p, group)?;
            parts.push(g.reshape(wide, vec![self.missing, width])?);
        }
        g.concat(&parts, 1)
    }
}

/// Global max-pool over the proxies followed by a linear map to `M x 3`.
#[derive(Clone, Debug)]
pub struct CoarseHead {
    pub project: Linear,
    pub points: usize,
}

impl CoarseHead {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            project: Linear::new(store, "coarse.project", cfg.dim, 3 * cfg.missing_proxies)?,
            points: cfg.missing_proxies,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var) -> Result<Var> {
        let pooled = g.reduce_max(features, 0)?;
        let flat = self.project.forward(g, p, pooled)?;
        g.reshape(flat, vec![self.points, 3])
    }
}

/// `rows x cols` matrix of i.i.d. standard normal entries.
pub fn random_position_encoding<T: Real>(rows: usize, cols: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::lit(v)
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("rows x cols")
}

#[derive(Clone, Debug)]
pub struct SensitiveBlock {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
    pub ffn: FeedForward,
}

/// Stack of cross-attention blocks with queries from the missing proxies and
/// keys/values from the existing proxies:
/// `T = LN(Q + MHA(Q, K, V))`, `out = FFN(T) + T`.
#[derive(Clone, Debug)]
pub struct SensitiveTransformer {
    pub blocks: Vec<SensitiveBlock>,
    pub dim: usize,
}

impl SensitiveTransformer {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..cfg.depth)
            .map(|b| {
                let name = format!("transformer.{b}");
                Ok(SensitiveBlock {
                    attention: MultiHeadAttention::new(store, &format!("{name}.attention"), cfg.dim, cfg.heads, cfg.separate_value)?,
                    norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.dim)?,
                    ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.dim, cfg.ffn_hidden, cfg.dropout)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks, dim: cfg.dim })
    }

    /// `queries` is the missing-proxy value, `keys` the existing-proxy value.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, queries: Var, keys: Var) -> Result<Var> {
        if g.shape(queries)[1] != self.dim || g.shape(keys)[1] != self.dim {
            return Err(invalid(format!(
                "sensitive_transformer: queries {:?} and keys {:?} must both have {} columns",
                g.shape(queries),
                g.shape(keys),
                self.dim
            )));
        }
        let mut x = queries;
        for block in &self.blocks {
            let (q, att) = block.attention.forward_parts(g, p, x, keys)?;
            let t = g.add(q, att)?;
            let t = block.norm.forward(g, p, t)?;
            let f = block.ffn.forward(g, p, t)?;
            x = g.add(f, t)?;
        }
        Ok(x)
    }
}

/// Linear map over `[feature, code]` computed as two products so the
/// per-proxy feature term is evaluated once and broadcast over the grid.
#[derive(Clone, Copy, Debug)]
pub struct FoldLayer {
    pub feature: ParamId,
    pub code: ParamId,
    pub bias: ParamId,
    pub out: Linear,
}

impl FoldLayer {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, feature_dim: usize, code_dim: usize, hidden: usize) -> Result<Self> {
        let bound = (1.0 / (feature_dim + code_dim) as f64).sqrt();
        Ok(Self {
            feature: store.add_uniform(format!("{name}.feature"), vec![feature_dim, hidden], bound)?,
            code: store.add_uniform(format!("{name}.code"), vec![code_dim, hidden], bound)?,
            bias: store.add_full(format!("{name}.bias"), vec![hidden], 0.0)?,
            out: Linear::new(store, &format!("{name}.out"), hidden, 3)?,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var, repeat: &[usize], codes: Var) -> Result<Var> {
        let hf = g.matmul(features, p.var(self.feature))?;
        let hf = g.gather(hf, repeat)?;
        let hc = g.matmul(codes, p.var(self.code))?;
        let h = g.add(hf, hc)?;
        let h = g.add_bias(h, p.var(self.bias))?;
        let h = g.relu(h);
        self.out.forward(g, p, h)
    }
}

/// Two folding stages deforming a square lattice around every coarse point.
#[derive(Clone, Debug)]
pub struct FoldingDecoder {
    pub fold1: FoldLayer,
    pub fold2: FoldLayer,
    pub grid: usize,
}

pub const FOLD_SPAN: f64 = 0.05;

/// `side x side` lattice spanning `[-FOLD_SPAN, FOLD_SPAN]^2`, row-major.
pub fn fold_lattice(side: usize) -> Vec<[f64; 2]> {
    let coord = |i: usize| {
        if side == 1 {
            0.0
        } else {
            -FOLD_SPAN + 2.0 * FOLD_SPAN * i as f64 / (side - 1) as f64
        }
    };
    (0..side * side).map(|i| [coord(i / side), coord(i % side)]).collect()
}

impl FoldingDecoder {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &ModelConfig) -> Result<Self> {
        let side = cfg.fold_side();
        if side * side != cfg.fold_grid {
            return Err(invalid(format!("folding_decoder: fold_grid = {} is not a perfect square", cfg.fold_grid)));
        }
        Ok(Self {
            fold1: FoldLayer::new(store, "folding.fold1", cfg.dim, 2, cfg.fold_hidden)?,
            fold2: FoldLayer::new(store, "folding.fold2", cfg.dim, 3, cfg.fold_hidden)?,
            grid: cfg.fold_grid,
        })
    }

    /// Returns `(M * grid) x 3` dense points; row `j * grid + t` belongs to
    /// coarse point `j`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, features: Var, coarse: Var) -> Result<Var> {
        let m = g.shape(features)[0];
        if g.shape(coarse) != [m, 3] {
            return Err(invalid(format!(
                "folding_decoder: coarse {:?} does not match {m} proxies",
                g.shape(coarse)
            )));
        }
        let side = (self.grid as f64).sqrt().round() as usize;
        if side * side != self.grid {
            return Err(invalid(format!("folding_decoder: fold_grid = {} is not a perfect square", self.grid)));
        }
        let repeat: Vec<usize> = (0..m).flat_map(|j| std::iter::repeat_n(j, self.grid)).collect();
        let lattice = fold_lattice(side);
        let codes: Vec<T> = (0..m).flat_map(|_| lattice.iter().flat_map(|c| [T::lit(c[0]), T::lit(c[1])])).collect();
        let codes = g.constant(Tensor::matrix(m * self.grid, 2, codes)?);
        let first = self.fold1.forward(g, p, features, &repeat, codes)?;
        let offset = self.fold2.forward(g, p, features, &repeat, first)?;
        let seeds = g.gather(coarse, &repeat)?;
        g.add(seeds, offset)
    }
}
