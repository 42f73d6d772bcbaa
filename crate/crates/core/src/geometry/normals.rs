use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::cloud::{Point3, PointCloud};
use crate::geometry::eigen::{symmetric_eigen3, Mat3};
use crate::geometry::neighbors::knn;
use crate::scalar::Real;

/// Which covariance eigenvector becomes the normal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalEigen {
    /// Minimum-variance direction: the surface normal.
    #[default]
    Smallest,
    /// Maximum-variance direction (literal reading of the extractor description).
    Largest,
}

impl std::str::FromStr for NormalEigen {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallest" => Ok(Self::Smallest),
            "largest" => Ok(Self::Largest),
            other => Err(invalid(format!("normal eigen mode must be smallest|largest, got {other}"))),
        }
    }
}

/// One unit normal per point of the associated cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalField<T> {
    pub normals: Vec<Point3<T>>,
    /// Number of points whose neighborhood collapsed to a single location;
    /// those get the fallback normal `(0, 0, 1)`.
    pub degenerate: usize,
}

impl<T> NormalField<T> {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

/// PCA normals over the `k` nearest neighbors of each point.
pub fn estimate_normals<T: Real>(pc: &PointCloud<T>, k: usize) -> Result<NormalField<T>> {
    estimate_normals_with(pc, k, NormalEigen::Smallest)
}

pub fn estimate_normals_with<T: Real>(
    pc: &PointCloud<T>,
    k: usize,
    mode: NormalEigen,
) -> Result<NormalField<T>> {
    if k < 3 {
        return Err(invalid(format!("estimate_normals: k = {k} must be at least 3")));
    }
    if k > pc.len() {
        return Err(invalid(format!(
            "estimate_normals: k = {k} exceeds point count {}",
            pc.len()
        )));
    }
    let neighbors = knn(pc, pc, k)?;
    let pts = pc.points();
    let mut degenerate = 0;
    let normals = neighbors
        .chunks_exact(k)
        .map(|row| {
            let cov = covariance(row.iter().map(|&j| &pts[j]));
            let trace = cov[0][0] + cov[1][1] + cov[2][2];
            if !(trace > T::zero()) {
                degenerate += 1;
                return [T::zero(), T::zero(), T::one()];
            }
            let eig = symmetric_eigen3(&cov);
            let v = match mode {
                NormalEigen::Smallest => eig.vectors[0],
                NormalEigen::Largest => eig.vectors[2],
            };
            orient(v)
        })
        .collect();
    Ok(NormalField { normals, degenerate })
}

/// Covariance about the centroid, normalized by the neighbor count.
pub fn covariance<'a, T: Real>(points: impl Iterator<Item = &'a Point3<T>> + Clone) -> Mat3<T> {
    let mut n = 0usize;
    let mut mean = [T::zero(); 3];
    for p in points.clone() {
        n += 1;
        for d in 0..3 {
            mean[d] += p[d];
        }
    }
    let nf = T::from_count(n);
    let mean = mean.map(|v| v / nf);
    let mut c = [[T::zero(); 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= nf;
        }
    }
    c
}

/// Flips `v` so its largest-magnitude component is positive.
pub(crate) fn orient<T: Real>(v: Point3<T>) -> Point3<T> {
    let mut arg = 0;
    for d in 1..3 {
        if v[d].abs() > v[arg].abs() {
            arg = d;
        }
    }
    if v[arg] < T::zero() {
        v.map(|x| -x)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                let jitter = ((i * 7 + j * 3) % 5) as f64 * 0.01;
                pts.push([i as f64 * 0.1 + jitter, j as f64 * 0.1, 0.0]);
            }
        }
        let pc = PointCloud::new(pts).unwrap();
        let nf = estimate_normals(&pc, 8).unwrap();
        assert_eq!(nf.degenerate, 0);
        for n in &nf.normals {
            assert!((n[2] - 1.0).abs() < 1e-12 && n[0].abs() < 1e-12 && n[1].abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_neighbors_fall_back() {
        let pc = PointCloud::new(vec![[0.5, 0.5, 0.5]; 4]).unwrap();
        let nf = estimate_normals(&pc, 3).unwrap();
        assert_eq!(nf.degenerate, 4);
        assert!(nf.normals.iter().all(|n| *n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn bad_k() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(estimate_normals(&pc, 2).is_err());
        assert!(estimate_normals(&pc, 4).is_err());
    }

    #[test]
    fn largest_mode_on_line() {
        let pc = PointCloud::new((0..6).map(|i| [i as f64, 0.0, 0.001 * (i % 2) as f64]).collect()).unwrap();
        let nf = estimate_normals_with(&pc, 4, NormalEigen::Largest).unwrap();
        for n in &nf.normals {
            assert!(n[0] > 0.99);
        }
    }
}
