use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{downsample, squared_distance, PointCloud};
use crate::scalar::Real;

/// Range of removed fractions used for training.
pub const TRAIN_FRACTION_RANGE: (f64, f64) = (0.25, 0.75);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    /// Direction from the centroid to the camera.
    pub viewpoint: [f64; 3],
    pub remove_fraction: f64,
    pub partial_points: usize,
    pub missing_points: usize,
}

impl OcclusionSpec {
    /// Uniformly random viewpoint and a removed fraction from the training
    /// range.
    pub fn random(rng: &mut impl Rng, partial_points: usize, missing_points: usize) -> Self {
        let viewpoint = loop {
            let v: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
            let n2 = v.iter().map(|c| c * c).sum::<f64>();
            if n2 > 1e-6 && n2 <= 1.0 {
                let n = n2.sqrt();
                break v.map(|c| c / n);
            }
        };
        let (lo, hi) = TRAIN_FRACTION_RANGE;
        Self {
            viewpoint,
            remove_fraction: rng.random_range(lo..=hi),
            partial_points,
            missing_points,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Occlusion<T> {
    pub partial: PointCloud<T>,
    pub missing: PointCloud<T>,
    /// Indices into the input of the points kept, ascending.
    pub kept_idx: Vec<usize>,
    /// Indices into the input of the points removed, nearest to the camera
    /// first.
    pub removed_idx: Vec<usize>,
}

/// Removes the `floor(fraction * n)` points nearest a camera placed at
/// twice the bounding radius from the centroid along `viewpoint`, then
/// resamples both parts.
pub fn occlude<T: Real>(gt: &PointCloud<T>, spec: &OcclusionSpec) -> Result<Occlusion<T>> {
    gt.require_non_empty("occlude")?;
    if !(0.0..1.0).contains(&spec.remove_fraction) {
        return Err(invalid(format!("occlude: remove_fraction {} must be in [0, 1)", spec.remove_fraction)));
    }
    let norm = spec.viewpoint.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(invalid("occlude: viewpoint must be a non-zero finite vector"));
    }
    let center = gt.centroid()?;
    let radius = gt
        .points()
        .iter()
        .map(|p| squared_distance(p, &center))
        .fold(T::zero(), T::max)
        .sqrt();
    let radius = if radius > T::zero() { radius } else { T::one() };
    let camera: [T; 3] =
        std::array::from_fn(|d| center[d] + T::lit(2.0 * spec.viewpoint[d] / norm) * radius);

    let n = gt.len();
    let removed = (spec.remove_fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let dist: Vec<T> = gt.points().iter().map(|p| squared_distance(p, &camera)).collect();
    order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).expect("finite").then(a.cmp(&b)));
    let removed_idx = order[..removed].to_vec();
    let mut kept_idx = order[removed..].to_vec();
    kept_idx.sort_unstable();

    let partial = downsample(&gt.select(&kept_idx), spec.partial_points)?;
    let missing = if spec.missing_points == 0 {
        PointCloud::empty()
    } else if removed_idx.is_empty() {
        return Err(invalid("occlude: nothing was removed, so the missing part cannot be resampled"));
    } else {
        downsample(&gt.select(&removed_idx), spec.missing_points)?
    };
    Ok(Occlusion { partial, missing, kept_idx, removed_idx })
}

/// Resamples to exactly `m` points; see [`downsample`].
pub fn resample<T: Real>(pc: &PointCloud<T>, m: usize) -> Result<PointCloud<T>> {
    downsample(pc, m)
}
