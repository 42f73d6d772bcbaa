use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::cloud::{dot, norm, sub, Point3, PointCloud};
use crate::geometry::neighbors::nearest_neighbors;
use crate::geometry::normals::{estimate_normals_with, NormalEigen};
use crate::scalar::Real;

/// Length of the error vector `a - r`.
pub fn point_to_point_distance<T: Real>(a: &Point3<T>, r: &Point3<T>) -> T {
    norm(&sub(a, r))
}

/// Length of the error vector projected on the unit normal `n` at `r`.
pub fn point_to_plane_distance<T: Real>(a: &Point3<T>, r: &Point3<T>, n: &Point3<T>) -> Result<T> {
    let len = norm(n);
    if (len - T::one()).abs() > T::lit(1e-6) {
        return Err(invalid(format!(
            "point_to_plane_distance: normal has length {len}, expected 1"
        )));
    }
    Ok(dot(&sub(a, r), n).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub k_normal: usize,
    /// Weight of the point-to-point term.
    pub alpha: f64,
    /// Weight of the point-to-plane term.
    pub beta: f64,
    pub threshold: f64,
    pub normal_eigen: NormalEigen,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            k_normal: 16,
            alpha: 0.2,
            beta: 0.8,
            threshold: 0.01,
            normal_eigen: NormalEigen::Smallest,
        }
    }
}

/// Split of ground-truth indices into existing and missing parts.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionResult<T> {
    pub existing_idx: Vec<usize>,
    pub missing_idx: Vec<usize>,
    /// Weighted distance of every ground-truth point to the partial scan.
    pub distances: Vec<T>,
    pub degenerate_normals: usize,
}

/// Partitions `gt` into the part covered by `partial` and the missing rest.
///
/// Normals are estimated on `partial`; each GT point is matched to its
/// nearest partial point `r` and scored with
/// `D = alpha * |a - r| + beta * |(a - r) . n_r|`. Points with
/// `D <= threshold` are existing.
pub fn extract_missing_part<T: Real>(
    gt: &PointCloud<T>,
    partial: &PointCloud<T>,
    opts: &ExtractOptions,
) -> Result<PartitionResult<T>> {
    if partial.is_empty() {
        return Err(invalid("extract_missing_part: partial cloud is empty"));
    }
    if gt.is_empty() {
        return Err(invalid("extract_missing_part: ground truth cloud is empty"));
    }
    if partial.len() < opts.k_normal {
        return Err(invalid(format!(
            "extract_missing_part: partial has {} points, fewer than k_normal = {}",
            partial.len(),
            opts.k_normal
        )));
    }
    let normals = estimate_normals_with(partial, opts.k_normal, opts.normal_eigen)?;
    let matches = nearest_neighbors(partial.points(), gt.points());
    let alpha = T::lit(opts.alpha);
    let beta = T::lit(opts.beta);
    let threshold = T::lit(opts.threshold);

    let mut existing_idx = Vec::new();
    let mut missing_idx = Vec::new();
    let mut distances = Vec::with_capacity(gt.len());
    for (i, (a, &(j, _))) in gt.points().iter().zip(matches.iter()).enumerate() {
        let r = &partial.points()[j];
        let err = sub(a, r);
        let c2c = norm(&err);
        let c2p = dot(&err, &normals.normals[j]).abs();
        let d = alpha * c2c + beta * c2p;
        distances.push(d);
        if d <= threshold {
            existing_idx.push(i);
        } else {
            missing_idx.push(i);
        }
    }
    Ok(PartitionResult {
        existing_idx,
        missing_idx,
        distances,
        degenerate_normals: normals.degenerate,
    })
}
