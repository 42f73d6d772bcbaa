use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{CdVariant, FeedForward, Linear, VectorAttention, DEFAULT_DROPOUT, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};

/// Every architectural and training hyperparameter of the completion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub profile: String,
    /// P: points in the partial input.
    pub input_points: usize,
    /// Points in the ground-truth complete cloud.
    pub gt_points: usize,
    /// Points in the true missing part.
    pub missing_points: usize,
    /// Width of the per-point lift from coordinates.
    pub lift_dim: usize,
    pub c1: usize,
    pub c2: usize,
    /// N: existing proxies.
    pub proxies: usize,
    /// M: missing proxies, also the coarse point count.
    pub missing_proxies: usize,
    /// C: proxy width.
    pub dim: usize,
    /// U: channel groups in the missing feature generator.
    pub groups: usize,
    /// K: neighborhood size for feature lifting, vector attention and
    /// position extraction.
    pub k: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Dense points generated per coarse point; a perfect square.
    pub fold_grid: usize,
    pub fold_hidden: usize,
    /// FPS downsampling factors of the two extractor stages.
    pub stride1: usize,
    pub stride2: usize,
    pub gamma: f64,
    pub cd_variant: CdVariant,
    pub dropout: f64,
    pub separate_value: bool,
    pub lr: f64,
    pub weight_decay: f64,
}

pub const PROFILES: [&str; 3] = ["pcn", "shapenet55", "toy"];

impl ModelConfig {
    pub fn pcn() -> Self {
        Self {
            profile: "pcn".into(),
            input_points: 2048,
            gt_points: 16384,
            missing_points: 3584,
            lift_dim: 32,
            c1: 128,
            c2: 384,
            proxies: 128,
            missing_proxies: 224,
            dim: 384,
            groups: 16,
            k: 16,
            depth: 8,
            heads: 8,
            ffn_hidden: 768,
            fold_grid: 64,
            fold_hidden: 256,
            stride1: 4,
            stride2: 4,
            gamma: 1.5,
            cd_variant: CdVariant::L1,
            dropout: DEFAULT_DROPOUT,
            separate_value: false,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }

    pub fn shapenet55() -> Self {
        Self {
            profile: "shapenet55".into(),
            gt_points: 8192,
            missing_points: 1536,
            missing_proxies: 96,
            ..Self::pcn()
        }
    }

    pub fn toy() -> Self {
        Self {
            profile: "toy".into(),
            input_points: 256,
            gt_points: 1024,
            missing_points: 224,
            c1: 32,
            c2: 64,
            proxies: 32,
            missing_proxies: 28,
            dim: 64,
            groups: 8,
            depth: 2,
            heads: 4,
            ffn_hidden: 128,
            fold_grid: 16,
            fold_hidden: 32,
            stride1: 2,
            ..Self::pcn()
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            profile: "tiny".into(),
            input_points: 64,
            gt_points: 256,
            missing_points: 112,
            lift_dim: 8,
            c1: 16,
            c2: 32,
            proxies: 8,
            missing_proxies: 14,
            dim: 32,
            groups: 4,
            k: 4,
            depth: 2,
            heads: 4,
            ffn_hidden: 64,
            fold_grid: 4,
            fold_hidden: 16,
            stride1: 2,
            stride2: 4,
            dropout: 0.0,
            ..Self::pcn()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "pcn" => Ok(Self::pcn()),
            "shapenet55" => Ok(Self::shapenet55()),
            "toy" => Ok(Self::toy()),
            "tiny" => Ok(Self::tiny()),
            other => Err(invalid(format!(
                "unknown profile `{other}` (expected one of pcn, shapenet55, toy, tiny)"
            ))),
        }
    }

    /// Width each channel group is expanded to by the missing feature
    /// generator.
    pub fn expansion(&self) -> usize {
        self.missing_proxies * self.dim / (self.proxies * self.groups)
    }

    pub fn group_width(&self) -> usize {
        self.dim / self.groups
    }

    pub fn fold_side(&self) -> usize {
        (self.fold_grid as f64).sqrt().round() as usize
    }

    pub fn dense_points(&self) -> usize {
        self.missing_proxies * self.fold_grid
    }

    pub fn complete_points(&self) -> usize {
        self.input_points + self.dense_points()
    }

    pub fn total_stride(&self) -> usize {
        self.stride1 * self.stride2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_points", self.input_points),
            ("missing_points", self.missing_points),
            ("lift_dim", self.lift_dim),
            ("c1", self.c1),
            ("c2", self.c2),
            ("proxies", self.proxies),
            ("missing_proxies", self.missing_proxies),
            ("dim", self.dim),
            ("groups", self.groups),
            ("k", self.k),
            ("depth", self.depth),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("fold_grid", self.fold_grid),
            ("fold_hidden", self.fold_hidden),
            ("stride1", self.stride1),
            ("stride2", self.stride2),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("config: `{name}` must be positive")));
        }
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(invalid(msg)) };
        check(
            (self.missing_proxies * self.dim).is_multiple_of(self.proxies * self.groups),
            format!(
                "config: M*C = {} must be divisible by N*U = {}",
                self.missing_proxies * self.dim,
                self.proxies * self.groups
            ),
        )?;
        check(self.dim.is_multiple_of(self.groups), format!("config: C = {} must be divisible by U = {}", self.dim, self.groups))?;
        check(self.dim.is_multiple_of(self.heads), format!("config: C = {} must be divisible by heads = {}", self.dim, self.heads))?;
        let side = self.fold_side();
        check(side * side == self.fold_grid, format!("config: fold_grid = {} is not a perfect square", self.fold_grid))?;
        let s = self.total_stride();
        check(
            self.input_points == self.proxies * s,
            format!("config: input_points = {} must equal N * stride1 * stride2 = {}", self.input_points, self.proxies * s),
        )?;
        check(
            self.missing_points == self.missing_proxies * s,
            format!(
                "config: missing_points = {} must equal M * stride1 * stride2 = {}",
                self.missing_points,
                self.missing_proxies * s
            ),
        )?;
        let smallest = self.proxies.min(self.missing_proxies);
        check(self.k <= smallest, format!("config: k = {} exceeds the smallest proxy count {smallest}", self.k))?;
        check((0.0..1.0).contains(&self.dropout), format!("config: dropout = {} must be in [0, 1)", self.dropout))?;
        check(self.gamma >= 0.0 && self.gamma.is_finite(), format!("config: gamma = {} must be finite and >= 0", self.gamma))?;
        Ok(())
    }

    /// Applies a `key=value` override. The value is parsed as JSON, falling
    /// back to a bare string; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let map = doc.as_object_mut().expect("config serializes to an object");
        if !map.contains_key(key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(doc)
            .map_err(|e| invalid(format!("config: bad value `{value}` for `{key}`: {e}")))?;
        Ok(())
    }

    /// Applies a sequence of overrides, each `key=value`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| invalid(format!("override `{o}` is not of the form key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let lin = Linear::param_count;
        let c = self.dim;
        let extractor = lin(3, self.lift_dim)
            + lin(self.lift_dim + 3, self.c1)
            + VectorAttention::param_count(self.c1)
            + lin(self.c1 + 3, self.c2)
            + VectorAttention::param_count(self.c2)
            + lin(self.c2, c)
            + lin(c, c)
            + lin(3 + self.c2, c)
            + 3 * lin(c, c);
        let generator = lin(self.group_width(), self.expansion());
        let coarse = lin(c, 3 * self.missing_proxies);
        let projections = if self.separate_value { 4 } else { 3 };
        let block = projections * lin(c, c) + 2 * c + FeedForward::param_count(c, self.ffn_hidden);
        let h = self.fold_hidden;
        let folding = lin(c + 2, h) + lin(h, 3) + lin(c + 3, h) + lin(h, 3);
        extractor + generator + coarse + self.depth * block + folding
    }
}
