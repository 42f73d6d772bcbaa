//! Completion metrics: Chamfer distance (L1 and L2 conventions), density-aware
//! Chamfer distance, F-score, fidelity and minimal matching distance.
//!
//! L1 CD is half the sum of the two mean Euclidean nearest-neighbor
//! distances. L2 CD is the sum of the two mean squared distances, without the
//! half; reports scale it by 1000.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{nearest_neighbors, PointCloud};
use crate::scalar::Real;

pub const DEFAULT_DCD_TEMPERATURE: f64 = 1000.0;
pub const DEFAULT_FSCORE_THRESHOLD: f64 = 0.01;

fn require<T: Real>(op: &str, a: &PointCloud<T>, b: &PointCloud<T>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid(format!("{op}: point clouds must be non-empty")));
    }
    Ok(())
}

fn mean<T: Real>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.fold(T::zero(), |acc, v| acc + v) / T::from_count(n)
}

pub fn chamfer_l1<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    require("chamfer_l1", a, b)?;
    let ab = nearest_neighbors(b.points(), a.points());
    let ba = nearest_neighbors(a.points(), b.points());
    let half = T::lit(0.5);
    Ok(half * (mean(ab.iter().map(|m| m.1.sqrt()), a.len()) + mean(ba.iter().map(|m| m.1.sqrt()), b.len())))
}

pub fn chamfer_l2<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    require("chamfer_l2", a, b)?;
    let ab = nearest_neighbors(b.points(), a.points());
    let ba = nearest_neighbors(a.points(), b.points());
    Ok(mean(ab.iter().map(|m| m.1), a.len()) + mean(ba.iter().map(|m| m.1), b.len()))
}

/// Density-aware Chamfer distance, bounded in `[0, 1]`.
///
/// Each point `x` of one set is matched to its nearest neighbor `y` in the
/// other; `n_y` counts how many points of the first set chose `y`. The term
/// is `1 - exp(-temperature * |x - y|) / n_y`, averaged per direction and
/// then over the two directions.
pub fn dcd<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>, temperature: T) -> Result<T> {
    require("dcd", a, b)?;
    let half = T::lit(0.5);
    Ok(half * dcd_direction(a, b, temperature) + half * dcd_direction(b, a, temperature))
}

fn dcd_direction<T: Real>(from: &PointCloud<T>, to: &PointCloud<T>, temperature: T) -> T {
    let matches = nearest_neighbors(to.points(), from.points());
    let mut counts = vec![0usize; to.len()];
    for &(j, _) in &matches {
        counts[j] += 1;
    }
    mean(
        matches.iter().map(|&(j, d2)| {
            T::one() - (-temperature * d2.sqrt()).exp() / T::from_count(counts[j])
        }),
        from.len(),
    )
}

/// F-score at `threshold`: harmonic mean of precision (fraction of `pred`
/// strictly within `threshold` of `gt`) and recall (the converse).
pub fn fscore<T: Real>(pred: &PointCloud<T>, gt: &PointCloud<T>, threshold: T) -> Result<T> {
    require("fscore", pred, gt)?;
    let t2 = threshold * threshold;
    let within = |from: &PointCloud<T>, to: &PointCloud<T>| {
        let hits = nearest_neighbors(to.points(), from.points())
            .iter()
            .filter(|m| m.1 < t2)
            .count();
        T::from_count(hits) / T::from_count(from.len())
    };
    let precision = within(pred, gt);
    let recall = within(gt, pred);
    if precision + recall == T::zero() {
        return Ok(T::zero());
    }
    Ok(T::lit(2.0) * precision * recall / (precision + recall))
}

/// Mean distance from every input point to its nearest output point.
pub fn fidelity<T: Real>(partial: &PointCloud<T>, output: &PointCloud<T>) -> Result<T> {
    require("fidelity", partial, output)?;
    let m = nearest_neighbors(output.points(), partial.points());
    Ok(mean(m.iter().map(|x| x.1.sqrt()), partial.len()))
}

/// L2 Chamfer distance to the best-matching candidate shape.
pub fn mmd<T: Real>(output: &PointCloud<T>, candidates: &[PointCloud<T>]) -> Result<T> {
    if candidates.is_empty() {
        return Err(invalid("mmd: candidate set is empty"));
    }
    let mut best = T::infinity();
    for c in candidates {
        let d = chamfer_l2(output, c)?;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricOptions {
    pub dcd_temperature: f64,
    pub fscore_threshold: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            dcd_temperature: DEFAULT_DCD_TEMPERATURE,
            fscore_threshold: DEFAULT_FSCORE_THRESHOLD,
        }
    }
}

/// Metrics for one predicted shape. `cd_l2` is stored unscaled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub dcd: f64,
    pub fscore: f64,
    pub fidelity: Option<f64>,
    pub mmd: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MetricReportWire {
    cd_l1: f64,
    cd_l2_x1000: f64,
    dcd: f64,
    fscore: f64,
    fidelity: Option<f64>,
    mmd: Option<f64>,
}

impl Serialize for MetricReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MetricReportWire {
            cd_l1: self.cd_l1,
            cd_l2_x1000: self.cd_l2 * 1000.0,
            dcd: self.dcd,
            fscore: self.fscore,
            fidelity: self.fidelity,
            mmd: self.mmd,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MetricReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = MetricReportWire::deserialize(d)?;
        Ok(Self {
            cd_l1: w.cd_l1,
            cd_l2: w.cd_l2_x1000 / 1000.0,
            dcd: w.dcd,
            fscore: w.fscore,
            fidelity: w.fidelity,
            mmd: w.mmd,
        })
    }
}

impl MetricReport {
    pub fn evaluate<T: Real>(
        pred: &PointCloud<T>,
        gt: &PointCloud<T>,
        partial: Option<&PointCloud<T>>,
        candidates: Option<&[PointCloud<T>]>,
        opts: &MetricOptions,
    ) -> Result<Self> {
        Ok(Self {
            cd_l1: chamfer_l1(pred, gt)?.to_f64_lossy(),
            cd_l2: chamfer_l2(pred, gt)?.to_f64_lossy(),
            dcd: dcd(pred, gt, T::lit(opts.dcd_temperature))?.to_f64_lossy(),
            fscore: fscore(pred, gt, T::lit(opts.fscore_threshold))?.to_f64_lossy(),
            fidelity: partial
                .map(|p| fidelity(p, pred).map(Real::to_f64_lossy))
                .transpose()?,
            mmd: candidates
                .map(|c| mmd(pred, c).map(Real::to_f64_lossy))
                .transpose()?,
        })
    }

    /// Element-wise mean of several reports; optional fields average over
    /// the reports that carry them.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: fn(&MetricReport) -> Option<f64>| {
            let vals: Vec<f64> = reports.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Some(MetricReport {
            cd_l1: avg(|r| r.cd_l1),
            cd_l2: avg(|r| r.cd_l2),
            dcd: avg(|r| r.dcd),
            fscore: avg(|r| r.fscore),
            fidelity: avg_opt(|r| r.fidelity),
            mmd: avg_opt(|r| r.mmd),
        })
    }
}
