use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

pub type Point3<T> = [T; 3];

/// An ordered list of 3-D points.
///
/// Every coordinate is finite; constructors enforce it. Most operations
/// additionally require a non-empty cloud and say so in their errors.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud<T> {
    points: Vec<Point3<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    /// Builds a cloud from a flat row-major `n x 3` buffer.
    pub fn from_flat(data: &[T]) -> Result<Self> {
        if !data.len().is_multiple_of(3) {
            return Err(invalid(format!(
                "flat buffer length {} is not a multiple of 3",
                data.len()
            )));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<T>> {
        self.points
    }

    pub fn flat(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        Self { points }
    }

    pub fn centroid(&self) -> Result<Point3<T>> {
        self.require_non_empty("centroid")?;
        let n = T::from_count(self.len());
        let mut c = [T::zero(); 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        Ok(c.map(|v| v / n))
    }

    /// Index of the point closest to the centroid, lowest index on ties.
    pub fn nearest_to_centroid(&self) -> Result<usize> {
        let c = self.centroid()?;
        let mut best = 0;
        let mut best_d = T::infinity();
        for (i, p) in self.points.iter().enumerate() {
            let d = squared_distance(p, &c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        Ok(best)
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| U::lit(c.to_f64_lossy())))
                .collect(),
        }
    }

    pub(crate) fn require_non_empty(&self, op: &str) -> Result<()> {
        if self.is_empty() {
            Err(invalid(format!("{op}: point cloud is empty")))
        } else {
            Ok(())
        }
    }
}

impl<T: Real> FromIterator<Point3<T>> for PointCloud<T> {
    /// Collects points without re-validating finiteness; callers feed values
    /// derived from already-valid clouds.
    fn from_iter<I: IntoIterator<Item = Point3<T>>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

#[inline]
pub fn sub<T: Real>(a: &Point3<T>, b: &Point3<T>) -> Point3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot<T: Real>(a: &Point3<T>, b: &Point3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: &Point3<T>, b: &Point3<T>) -> Point3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: &Point3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn squared_distance<T: Real>(a: &Point3<T>, b: &Point3<T>) -> T {
    let d = sub(a, b);
    dot(&d, &d)
}
