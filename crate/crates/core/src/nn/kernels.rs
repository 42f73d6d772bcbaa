//! Dense matrix kernels over row-major buffers.

use crate::scalar::Real;

/// `a (m x k) * b (k x n)`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut out);
    out
}

/// `a (m x n) * b^T` where `b` is `k x n`; result `m x k`.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    T::gemm(m, n, k, a, n as isize, 1, b, 1, n as isize, &mut out);
    out
}

/// `a^T * b` where `a` is `m x k` and `b` is `m x n`; result `k x n`.
pub fn matmul_at<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    T::gemm(k, m, n, a, 1, k as isize, b, n as isize, 1, &mut out);
    out
}

pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}
