use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::cloud::{squared_distance, Point3, PointCloud};
use crate::scalar::Real;

const PAR_THRESHOLD: usize = 1 << 14;

/// k nearest reference points for every query, row-major `queries.len() x k`.
///
/// Rows are sorted by ascending Euclidean distance; equal distances are
/// ordered by reference index.
pub fn knn<T: Real>(
    reference: &PointCloud<T>,
    queries: &PointCloud<T>,
    k: usize,
) -> Result<Vec<usize>> {
    knn_points(reference.points(), queries.points(), k)
}

pub(crate) fn knn_points<T: Real>(
    reference: &[Point3<T>],
    queries: &[Point3<T>],
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 || k > reference.len() {
        return Err(invalid(format!(
            "knn: k = {k} must be in 1..={}",
            reference.len()
        )));
    }
    let row = |q: &Point3<T>| -> Vec<usize> {
        let mut cand: Vec<(T, usize)> = reference
            .iter()
            .enumerate()
            .map(|(i, r)| (squared_distance(q, r), i))
            .collect();
        let order = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        };
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
            cand.truncate(k);
        }
        cand.sort_unstable_by(order);
        cand.into_iter().map(|(_, i)| i).collect()
    };
    let rows: Vec<Vec<usize>> = if queries.len() * reference.len() >= PAR_THRESHOLD {
        queries.par_iter().map(row).collect()
    } else {
        queries.iter().map(row).collect()
    };
    Ok(rows.concat())
}

/// Nearest reference index and squared distance for every query point.
/// Ties go to the lowest reference index.
pub fn nearest_neighbors<T: Real>(
    reference: &[Point3<T>],
    queries: &[Point3<T>],
) -> Vec<(usize, T)> {
    let one = |q: &Point3<T>| {
        let mut best = (0usize, T::infinity());
        for (i, r) in reference.iter().enumerate() {
            let d = squared_distance(q, r);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    };
    if queries.len() * reference.len() >= PAR_THRESHOLD {
        queries.par_iter().map(one).collect()
    } else {
        queries.iter().map(one).collect()
    }
}
