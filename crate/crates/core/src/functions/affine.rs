//! Fully connected layer. Inputs of rank above `base_axis + 1` are flattened
//! so that `(B, 16, 4, 4)` is consumed as `(B, 256)`.

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, numel, Dtype, NdArray};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AffineArgs {
    pub out_features: usize,
    pub base_axis: usize,
}

impl AffineArgs {
    pub fn new(out_features: usize) -> Self {
        AffineArgs {
            out_features,
            base_axis: 1,
        }
    }
}

pub fn output_shape(args: &AffineArgs, x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<Vec<usize>> {
    if args.base_axis == 0 || x.len() <= args.base_axis {
        return Err(Error::shape(format!(
            "affine input {:?} needs rank above base_axis {}",
            x, args.base_axis
        )));
    }
    let inner = numel(&x[args.base_axis..]);
    if w != [inner, args.out_features] {
        return Err(Error::shape(format!(
            "affine weight {:?}, expected [{}, {}]",
            w, inner, args.out_features
        )));
    }
    if let Some(b) = b {
        if b != [args.out_features] {
            return Err(Error::shape(format!(
                "affine bias {:?}, expected [{}]",
                b, args.out_features
            )));
        }
    }
    let mut out = x[..args.base_axis].to_vec();
    out.push(args.out_features);
    Ok(out)
}

fn dims(args: &AffineArgs, x: &NdArray) -> (usize, usize, usize) {
    let outer = numel(&x.shape()[..args.base_axis]);
    let inner = numel(&x.shape()[args.base_axis..]);
    (outer, inner, args.out_features)
}

/// `y = x·W + b` with the bias broadcast over rows.
pub fn forward(args: &AffineArgs, x: &NdArray, w: &NdArray, b: Option<&NdArray>) -> Result<NdArray> {
    let shape = output_shape(args, x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let (rows, inner, out) = dims(args, x);
    let mut y = vec![0.0f32; rows * out];
    gemm_nn(rows, inner, out, x.data(), w.data(), &mut y);
    if let Some(b) = b {
        for row in y.chunks_mut(out) {
            for (v, &bias) in row.iter_mut().zip(b.data()) {
                *v += bias;
            }
        }
    }
    NdArray::from_vec_dtype(&shape, y, Dtype::F32)
}

pub struct AffineGrads {
    pub x: Option<NdArray>,
    pub w: Option<NdArray>,
    pub b: Option<NdArray>,
}

/// `gx = gy·Wᵀ`, `gW = xᵀ·gy`, `gb = Σ_rows gy`.
pub fn backward(args: &AffineArgs, x: &NdArray, w: &NdArray, gy: &NdArray, need: [bool; 3]) -> Result<AffineGrads> {
    let (rows, inner, out) = dims(args, x);
    let gx = need[0].then(|| {
        let mut gx = vec![0.0f32; rows * inner];
        gemm_nt(rows, out, inner, gy.data(), w.data(), &mut gx);
        NdArray::from_vec_dtype(x.shape(), gx, Dtype::F32)
    });
    let gw = need[1].then(|| {
        let mut gw = vec![0.0f32; inner * out];
        gemm_tn(inner, rows, out, x.data(), gy.data(), &mut gw);
        NdArray::from_vec_dtype(w.shape(), gw, Dtype::F32)
    });
    let gb = need[2].then(|| {
        let mut gb = vec![0.0f32; out];
        for row in gy.data().chunks(out) {
            for (acc, &g) in gb.iter_mut().zip(row) {
                *acc += g;
            }
        }
        NdArray::from_vec_dtype(&[out], gb, Dtype::F32)
    });
    Ok(AffineGrads {
        x: gx.transpose()?,
        w: gw.transpose()?,
        b: gb.transpose()?,
    })
}
