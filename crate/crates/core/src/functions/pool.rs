//! Max pooling over the two trailing axes.
//!
//! Padding cells never win a window. With `ignore_border = false` the output
//! extent uses ceiling division and trailing windows are clipped to the input.
//! Ties resolve to the first element in row-major window order.

use crate::error::{Error, Result};
use crate::tensor::{Dtype, NdArray};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPoolingArgs {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub ignore_border: bool,
    pub pad: [usize; 2],
}

impl MaxPoolingArgs {
    /// Stride defaults to the kernel, borders ignored, no padding.
    pub fn new(kernel: [usize; 2]) -> Self {
        MaxPoolingArgs {
            kernel,
            stride: kernel,
            ignore_border: true,
            pad: [0, 0],
        }
    }
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize, ignore_border: bool) -> Result<usize> {
    let padded = input + 2 * pad;
    if ignore_border {
        if padded < kernel {
            return Err(Error::shape(format!(
                "pooling kernel {kernel} exceeds padded extent {padded}"
            )));
        }
        Ok((padded - kernel) / stride + 1)
    } else if padded <= kernel {
        Ok(1)
    } else {
        Ok((padded - kernel).div_ceil(stride) + 1)
    }
}

pub fn output_shape(args: &MaxPoolingArgs, x: &[usize]) -> Result<Vec<usize>> {
    if x.len() < 2 {
        return Err(Error::shape(format!("pooling input {x:?} has rank below 2")));
    }
    if args.kernel.contains(&0) || args.stride.contains(&0) {
        return Err(Error::shape(format!("invalid pooling arguments {args:?}")));
    }
    let r = x.len();
    let mut out = x.to_vec();
    out[r - 2] = out_extent(
        x[r - 2],
        args.kernel[0],
        args.stride[0],
        args.pad[0],
        args.ignore_border,
    )?;
    out[r - 1] = out_extent(
        x[r - 1],
        args.kernel[1],
        args.stride[1],
        args.pad[1],
        args.ignore_border,
    )?;
    Ok(out)
}

/// Visits every output cell with the flat input index of its window maximum.
fn for_each_argmax(
    args: &MaxPoolingArgs,
    x: &NdArray,
    out_shape: &[usize],
    mut visit: impl FnMut(usize, Option<usize>),
) {
    let r = x.ndim();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (oh, ow) = (out_shape[r - 2], out_shape[r - 1]);
    let planes = x.len() / (h * w).max(1);
    let data = x.data();
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            let y0 = (oy * args.stride[0]) as isize - args.pad[0] as isize;
            let ys = y0.max(0) as usize..((y0 + args.kernel[0] as isize).max(0) as usize).min(h);
            for ox in 0..ow {
                let x0 = (ox * args.stride[1]) as isize - args.pad[1] as isize;
                let xs = x0.max(0) as usize..((x0 + args.kernel[1] as isize).max(0) as usize).min(w);
                let mut best: Option<usize> = None;
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        let idx = base + iy * w + ix;
                        match best {
                            Some(b) if data[idx] <= data[b] => {}
                            _ => best = Some(idx),
                        }
                    }
                }
                visit((p * oh + oy) * ow + ox, best);
            }
        }
    }
}

pub fn forward(args: &MaxPoolingArgs, x: &NdArray) -> Result<NdArray> {
    let shape = output_shape(args, x.shape())?;
    let mut y = NdArray::zeros(&shape, Dtype::F32);
    let out = y.data_mut();
    for_each_argmax(args, x, &shape, |o, best| {
        out[o] = best.map_or(0.0, |i| x.data()[i]);
    });
    Ok(y)
}

pub fn backward(args: &MaxPoolingArgs, x: &NdArray, gy: &NdArray) -> Result<NdArray> {
    let shape = output_shape(args, x.shape())?;
    let mut gx = NdArray::zeros(x.shape(), Dtype::F32);
    let g = gx.data_mut();
    for_each_argmax(args, x, &shape, |o, best| {
        if let Some(i) = best {
            g[i] += gy.data()[o];
        }
    });
    Ok(gx)
}
