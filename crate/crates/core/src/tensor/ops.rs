use super::{numel, Dtype, NdArray};
use crate::error::{Error, Result};

fn check_same_shape(op: &str, a: &NdArray, b: &NdArray) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_with(op: &str, a: &NdArray, b: &NdArray, f: impl Fn(f32, f32) -> f32) -> Result<NdArray> {
    check_same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    NdArray::from_vec_dtype(a.shape(), data, a.dtype().join(b.dtype()))
}

pub fn add(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn maximum(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    zip_with("max", a, b, f32::max)
}

pub fn scale(a: &NdArray, k: f32) -> NdArray {
    let mut out = a.clone();
    out.map_inplace(|v| v * k);
    out
}

pub fn fill(shape: &[usize], value: f32, dtype: Dtype) -> NdArray {
    NdArray::full(shape, value, dtype)
}

/// `c += a · b` with `a: (m, k)`, `b: (k, n)`, `c: (m, n)`, all row-major.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `c += aᵀ · b` with `a: (k, m)`, `b: (k, n)`, `c: (m, n)`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            if a_pi == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_pi * b_pj;
            }
        }
    }
}

/// `c += a · bᵀ` with `a: (m, k)`, `b: (n, k)`, `c: (m, n)`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// Matrix product of two rank-2 arrays, accumulated in `f32` and stored as `out`.
pub fn matmul(a: &NdArray, b: &NdArray, out: Dtype) -> Result<NdArray> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut c = vec![0.0; numel(&[m, n])];
    gemm_nn(m, k, n, a.data(), b.data(), &mut c);
    NdArray::from_vec_dtype(&[m, n], c, out)
}
