//! Symmetric 3x3 eigendecomposition.
//!
//! Eigenvalues come from the characteristic polynomial in trigonometric form.
//! When two eigenvalues nearly coincide (gap below `1e-12 * |trace|`), or a
//! closed-form eigenvector fails its residual check, the cyclic Jacobi solver
//! takes over.

use crate::geometry::cloud::{cross, dot, norm, Point3};
use crate::scalar::Real;

pub type Mat3<T> = [[T; 3]; 3];

/// Eigenpairs sorted by ascending eigenvalue. Eigenvectors are unit length.
#[derive(Clone, Copy, Debug)]
pub struct SymmetricEigen3<T> {
    pub values: [T; 3],
    pub vectors: [Point3<T>; 3],
}

pub fn symmetric_eigen3<T: Real>(a: &Mat3<T>) -> SymmetricEigen3<T> {
    closed_form(a).unwrap_or_else(|| jacobi(a))
}

fn closed_form<T: Real>(a: &Mat3<T>) -> Option<SymmetricEigen3<T>> {
    let zero = T::zero();
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if p1 == zero {
        return None;
    }
    let trace = a[0][0] + a[1][1] + a[2][2];
    let three = T::lit(3.0);
    let q = trace / three;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + T::lit(2.0) * p1;
    let p = (p2 / T::lit(6.0)).sqrt();
    if p == zero {
        return None;
    }
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] -= q;
        for v in row.iter_mut() {
            *v /= p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / T::lit(2.0)).max(-T::one()).min(T::one());
    let phi = r.acos() / three;
    let two_pi_3 = T::lit(2.0 * std::f64::consts::PI / 3.0);
    let largest = q + T::lit(2.0) * p * phi.cos();
    let smallest = q + T::lit(2.0) * p * (phi + two_pi_3).cos();
    let middle = three * q - largest - smallest;
    let values = [smallest, middle, largest];

    let gap = (middle - smallest).min(largest - middle);
    if gap < T::lit(1e-12) * trace.abs() {
        return None;
    }
    let scale = largest.abs().max(smallest.abs());
    let mut vectors = [[zero; 3]; 3];
    for (slot, &lambda) in vectors.iter_mut().zip(values.iter()) {
        let v = null_vector(a, lambda)?;
        let av = mat_vec(a, &v);
        let residual = norm(&[av[0] - lambda * v[0], av[1] - lambda * v[1], av[2] - lambda * v[2]]);
        if residual > T::lit(1e-6).max(T::epsilon().sqrt()) * scale {
            return None;
        }
        *slot = v;
    }
    Some(SymmetricEigen3 { values, vectors })
}

fn null_vector<T: Real>(a: &Mat3<T>, lambda: T) -> Option<Point3<T>> {
    let mut rows = *a;
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let candidates = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let mut best = candidates[0];
    let mut best_n = norm(&best);
    for c in &candidates[1..] {
        let n = norm(c);
        if n > best_n {
            best = *c;
            best_n = n;
        }
    }
    if !(best_n > T::zero()) {
        return None;
    }
    Some(best.map(|x| x / best_n))
}

fn mat_vec<T: Real>(a: &Mat3<T>, v: &Point3<T>) -> Point3<T> {
    [dot(&a[0], v), dot(&a[1], v), dot(&a[2], v)]
}

/// Cyclic Jacobi rotations; robust for repeated eigenvalues.
pub fn jacobi<T: Real>(a: &Mat3<T>) -> SymmetricEigen3<T> {
    let zero = T::zero();
    let one = T::one();
    let mut m = *a;
    let mut v = [[one, zero, zero], [zero, one, zero], [zero, zero, one]];
    for _sweep in 0..64 {
        let off = m[0][1].abs() + m[0][2].abs() + m[1][2].abs();
        if off == zero {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if m[p][q] == zero {
                continue;
            }
            let theta = (m[q][q] - m[p][p]) / (T::lit(2.0) * m[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + one).sqrt());
            let c = one / (t * t + one).sqrt();
            let s = t * c;
            for k in 0..3 {
                let mkp = m[k][p];
                let mkq = m[k][q];
                m[k][p] = c * mkp - s * mkq;
                m[k][q] = s * mkp + c * mkq;
            }
            for k in 0..3 {
                let mpk = m[p][k];
                let mqk = m[q][k];
                m[p][k] = c * mpk - s * mqk;
                m[q][k] = s * mpk + c * mqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap().then(i.cmp(&j)));
    let values = order.map(|i| m[i][i]);
    let vectors = order.map(|i| {
        let col = [v[0][i], v[1][i], v[2][i]];
        let n = norm(&col);
        col.map(|x| x / n)
    });
    SymmetricEigen3 { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(a: &Mat3<f64>, e: &SymmetricEigen3<f64>) {
        for (lambda, v) in e.values.iter().zip(e.vectors.iter()) {
            let av = mat_vec(a, v);
            for d in 0..3 {
                assert!((av[d] - lambda * v[d]).abs() < 1e-10, "{a:?} {e:?}");
            }
            assert!((norm(v) - 1.0).abs() < 1e-12);
        }
        assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
    }

    #[test]
    fn distinct_eigenvalues() {
        let a = [[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]];
        let e = symmetric_eigen3(&a);
        check(&a, &e);
    }

    #[test]
    fn repeated_eigenvalues_use_fallback() {
        let a = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let e = symmetric_eigen3(&a);
        check(&a, &e);
        assert!(e.values[0].abs() < 1e-15);
        assert!((e.vectors[0][2].abs() - 1.0).abs() < 1e-12);

        let b = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
        let e = symmetric_eigen3(&b);
        check(&b, &e);
        assert!((e.values[0] - 1.0).abs() < 1e-12 && (e.values[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_agrees_with_closed_form() {
        let a: Mat3<f64> = [[0.7, -0.1, 0.25], [-0.1, 0.4, 0.05], [0.25, 0.05, 0.9]];
        let c = closed_form(&a).unwrap();
        let j = jacobi(&a);
        for i in 0..3 {
            assert!((c.values[i] - j.values[i]).abs() < 1e-12);
            assert!(dot(&c.vectors[i], &j.vectors[i]).abs() > 1.0 - 1e-12);
        }
    }
}
