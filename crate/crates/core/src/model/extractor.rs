use crate::error::{invalid, Result};
use crate::geometry::{farthest_point_sample_default, Point3, PointCloud};
use crate::nn::{Bound, Graph, Linear, Neighborhood, ParameterStore, Tensor, Var, VectorAttention};
use crate::scalar::Real;

use super::config::ModelConfig;

/// Proxies inside a graph: `features` and `positions` share a shape and a
/// proxy's value is their element-wise sum.
#[derive(Clone, Debug)]
pub struct ProxySet<T> {
    pub features: Var,
    pub positions: Var,
    pub centers: Vec<Point3<T>>,
}

impl<T: Real> ProxySet<T> {
    pub fn value(&self, g: &mut Graph<T>) -> Result<Var> {
        g.add(self.features, self.positions)
    }
}

/// FPS to `len / stride` centers, then max-pool of `[f_j, p_j - p_i]` lifted
/// by a shared linear map over each center's k nearest input points.
#[derive(Clone, Debug)]
pub struct TransitionDown {
    pub lift: Linear,
    pub stride: usize,
    pub k: usize,
}

impl TransitionDown {
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        stride: usize,
        k: usize,
    ) -> Result<Self> {
        Ok(Self { lift: Linear::new(store, name, in_dim + 3, out_dim)?, stride, k })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        points: &[Point3<T>],
        features: Var,
    ) -> Result<(Vec<Point3<T>>, Var)> {
        let m = points.len() / self.stride;
        if m == 0 || self.k > points.len() {
            return Err(invalid(format!(
                "transition_down: {} points cannot be downsampled by {} with k = {}",
                points.len(),
                self.stride,
                self.k
            )));
        }
        let cloud = PointCloud::new(points.to_vec())?;
        let centers: Vec<Point3<T>> =
            farthest_point_sample_default(&cloud, m)?.into_iter().map(|i| points[i]).collect();
        let nb = Neighborhood::build(points, &centers, self.k)?;
        let rel = g.constant(nb.relative_coords(points, &centers));
        let grouped = g.gather(features, &nb.neighbor)?;
        let x = g.concat(&[grouped, rel], 1)?;
        let x = self.lift.forward(g, p, x)?;
        let x = g.relu(x);
        Ok((centers, g.group_max(x, self.k)?))
    }
}

/// Position encoding from the k-neighborhood of every center: relative
/// coordinates and absolute feature offsets are concatenated, mapped to
/// transition features, and summed under per-channel softmax weights.
#[derive(Clone, Debug)]
pub struct PositionExtractor {
    pub transition1: Linear,
    pub transition2: Linear,
    pub attn1: Linear,
    pub attn2: Linear,
    pub k: usize,
}

impl PositionExtractor {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, name: &str, feature_dim: usize, out_dim: usize, k: usize) -> Result<Self> {
        Ok(Self {
            transition1: Linear::new(store, &format!("{name}.transition1"), 3 + feature_dim, out_dim)?,
            transition2: Linear::new(store, &format!("{name}.transition2"), out_dim, out_dim)?,
            attn1: Linear::new(store, &format!("{name}.attn1"), out_dim, out_dim)?,
            attn2: Linear::new(store, &format!("{name}.attn2"), out_dim, out_dim)?,
            k,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, centers: &[Point3<T>], features: Var) -> Result<Var> {
        let n = centers.len();
        if self.k > n {
            return Err(invalid(format!("position_extractor: k = {} exceeds {n} centers", self.k)));
        }
        let nb = Neighborhood::build(centers, centers, self.k)?;
        let rel = g.constant(nb.relative_coords(centers, centers));
        let fk = g.gather(features, &nb.neighbor)?;
        let fi = g.gather(features, &nb.center)?;
        let offset = g.sub(fk, fi)?;
        let offset = g.abs(offset);
        let x = g.concat(&[rel, offset], 1)?;
        let tf = self.transition1.forward(g, p, x)?;
        let tf = g.relu(tf);
        let tf = self.transition2.forward(g, p, tf)?;
        let a = self.attn1.forward(g, p, tf)?;
        let a = g.relu(a);
        let a = self.attn2.forward(g, p, a)?;
        let w = g.group_softmax(a, self.k)?;
        let weighted = g.mul(w, tf)?;
        g.group_sum(weighted, self.k)
    }
}

/// Feature and position extractor: turns a cloud into proxies and their
/// centers.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub lift: Linear,
    pub down1: TransitionDown,
    pub attention1: VectorAttention,
    pub down2: TransitionDown,
    pub attention2: VectorAttention,
    pub seed1: Linear,
    pub seed2: Linear,
    pub position: PositionExtractor,
    pub k: usize,
}

impl FeatureExtractor {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            lift: Linear::new(store, "fape.lift", 3, cfg.lift_dim)?,
            down1: TransitionDown::new(store, "fape.down1", cfg.lift_dim, cfg.c1, cfg.stride1, cfg.k)?,
            attention1: VectorAttention::new(store, "fape.attention1", cfg.c1)?,
            down2: TransitionDown::new(store, "fape.down2", cfg.c1, cfg.c2, cfg.stride2, cfg.k)?,
            attention2: VectorAttention::new(store, "fape.attention2", cfg.c2)?,
            seed1: Linear::new(store, "fape.seed1", cfg.c2, cfg.dim)?,
            seed2: Linear::new(store, "fape.seed2", cfg.dim, cfg.dim)?,
            position: PositionExtractor::new(store, "fape.position", cfg.c2, cfg.dim, cfg.k)?,
            k: cfg.k,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, cloud: &PointCloud<T>) -> Result<ProxySet<T>> {
        let stride = self.down1.stride * self.down2.stride;
        if cloud.len() < stride {
            return Err(invalid(format!(
                "fape: {} points is fewer than the total downsampling factor {stride}",
                cloud.len()
            )));
        }
        let points = cloud.points();
        let coords = g.constant(Tensor::matrix(cloud.len(), 3, cloud.flat())?);
        let x = self.lift.forward(g, p, coords)?;
        let x = g.relu(x);
        let (c1, x) = self.down1.forward(g, p, points, x)?;
        let x = self.attention1.forward(g, p, x, &c1, self.k.min(c1.len()))?;
        let (c2, x) = self.down2.forward(g, p, &c1, x)?;
        let x = self.attention2.forward(g, p, x, &c2, self.k.min(c2.len()))?;
        let seed = self.seed1.forward(g, p, x)?;
        let seed = g.relu(seed);
        let seed = self.seed2.forward(g, p, seed)?;
        let positions = self.position.forward(g, p, &c2, x)?;
        Ok(ProxySet { features: seed, positions, centers: c2 })
    }
}

