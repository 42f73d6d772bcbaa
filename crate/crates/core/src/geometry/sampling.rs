use crate::error::{invalid, Result};
use crate::geometry::cloud::{squared_distance, PointCloud};
use crate::scalar::Real;

/// Greedy farthest point sampling.
///
/// The first index is `seed_index`; each following index maximizes the
/// distance to the already selected set. Ties go to the lowest index.
pub fn farthest_point_sample<T: Real>(
    pc: &PointCloud<T>,
    m: usize,
    seed_index: usize,
) -> Result<Vec<usize>> {
    let n = pc.len();
    if n == 0 {
        return Err(invalid("farthest_point_sample: point cloud is empty"));
    }
    if m == 0 || m > n {
        return Err(invalid(format!(
            "farthest_point_sample: m = {m} must be in 1..={n}"
        )));
    }
    if seed_index >= n {
        return Err(invalid(format!(
            "farthest_point_sample: seed index {seed_index} out of range for {n} points"
        )));
    }
    let pts = pc.points();
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![T::infinity(); n];
    let mut current = seed_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == m {
            break;
        }
        let anchor = pts[current];
        let mut best = usize::MAX;
        let mut best_d = T::neg_infinity();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = squared_distance(&pts[i], &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// FPS seeded at the point nearest the centroid.
pub fn farthest_point_sample_default<T: Real>(pc: &PointCloud<T>, m: usize) -> Result<Vec<usize>> {
    let seed = pc.nearest_to_centroid()?;
    farthest_point_sample(pc, m, seed)
}

/// Resamples a cloud to exactly `m` points.
///
/// Downsampling keeps the FPS points (seeded at the point nearest the
/// centroid). Upsampling keeps every original point and then repeats points
/// round-robin in index order.
pub fn downsample<T: Real>(pc: &PointCloud<T>, m: usize) -> Result<PointCloud<T>> {
    if pc.is_empty() {
        return Err(invalid("downsample: point cloud is empty"));
    }
    if m == 0 {
        return Err(invalid("downsample: target count must be at least 1"));
    }
    let n = pc.len();
    if m <= n {
        let idx = farthest_point_sample_default(pc, m)?;
        Ok(pc.select(&idx))
    } else {
        let idx: Vec<usize> = (0..m).map(|i| i % n).collect();
        Ok(pc.select(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud<f64> {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn square_corners_pick_opposite_corner() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(farthest_point_sample(&pc, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn collinear_points() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(farthest_point_sample(&pc, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn exhaustive_sample_is_permutation() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [0.3, 0.1, 0.0], [0.9, 0.2, 0.5], [0.1, 0.7, 0.2], [0.4, 0.4, 0.4]]);
        let mut idx = farthest_point_sample(&pc, 5, 3).unwrap();
        assert_eq!(idx[0], 3);
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn argument_errors() {
        let pc = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(farthest_point_sample(&pc, 2, 0).is_err());
        assert!(farthest_point_sample(&pc, 1, 1).is_err());
        assert!(farthest_point_sample(&PointCloud::<f64>::empty(), 1, 0).is_err());
        assert!(downsample(&PointCloud::<f64>::empty(), 3).is_err());
    }

    #[test]
    fn pad_repeats_round_robin() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let up = downsample(&pc, 4).unwrap();
        assert_eq!(up.points(), &[pc.points()[0], pc.points()[1], pc.points()[0], pc.points()[1]]);
    }

    #[test]
    fn downsample_to_count_is_reordering() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.0, 3.0, 1.0]]);
        let d = downsample(&pc, 4).unwrap();
        let mut a: Vec<_> = d.points().iter().map(|p| p.map(f64::to_bits)).collect();
        let mut b: Vec<_> = pc.points().iter().map(|p| p.map(f64::to_bits)).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        // the seed is the point nearest the centroid
        assert_eq!(d.points()[0], pc.points()[2]);
    }
}
