//! 2-D convolution (cross-correlation, no kernel flip) over NCHW input,
//! lowered to GEMM through im2col per sample.

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Dtype, NdArray};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvolutionArgs {
    pub out_maps: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
}

impl ConvolutionArgs {
    pub fn new(out_maps: usize, kernel: [usize; 2]) -> Self {
        ConvolutionArgs {
            out_maps,
            kernel,
            stride: [1, 1],
            pad: [0, 0],
        }
    }

    pub fn with_stride(mut self, stride: [usize; 2]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, pad: [usize; 2]) -> Self {
        self.pad = pad;
        self
    }
}

struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch(&self, args: &ConvolutionArgs) -> usize {
        self.channels * args.kernel[0] * args.kernel[1]
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry(args: &ConvolutionArgs, x: &[usize]) -> Result<Geometry> {
    if x.len() != 4 {
        return Err(Error::shape(format!("convolution input {x:?} is not NCHW")));
    }
    if args.kernel.contains(&0) || args.stride.contains(&0) || args.out_maps == 0 {
        return Err(Error::shape(format!("invalid convolution arguments {args:?}")));
    }
    let (h, w) = (x[2] + 2 * args.pad[0], x[3] + 2 * args.pad[1]);
    if h < args.kernel[0] || w < args.kernel[1] {
        return Err(Error::KernelTooLarge {
            kernel: args.kernel.to_vec(),
            input: vec![h, w],
        });
    }
    Ok(Geometry {
        batch: x[0],
        channels: x[1],
        height: x[2],
        width: x[3],
        out_h: (h - args.kernel[0]) / args.stride[0] + 1,
        out_w: (w - args.kernel[1]) / args.stride[1] + 1,
    })
}

pub fn output_shape(args: &ConvolutionArgs, x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<Vec<usize>> {
    let g = geometry(args, x)?;
    let expected = [args.out_maps, g.channels, args.kernel[0], args.kernel[1]];
    if w != expected {
        return Err(Error::shape(format!("convolution weight {w:?}, expected {expected:?}")));
    }
    if let Some(b) = b {
        if b != [args.out_maps] {
            return Err(Error::shape(format!(
                "convolution bias {b:?}, expected [{}]",
                args.out_maps
            )));
        }
    }
    Ok(vec![g.batch, args.out_maps, g.out_h, g.out_w])
}

/// Unrolls one sample into a `(C·kh·kw, H'·W')` matrix.
fn im2col(args: &ConvolutionArgs, g: &Geometry, x: &[f32], cols: &mut [f32]) {
    let [kh, kw] = args.kernel;
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * args.stride[0] + ki) as isize - args.pad[0] as isize;
                    for ox in 0..g.out_w {
                        let ix = (ox * args.stride[1] + kj) as isize - args.pad[1] as isize;
                        dst[oy * g.out_w + ox] =
                            if iy >= 0 && (iy as usize) < g.height && ix >= 0 && (ix as usize) < g.width {
                                plane[iy as usize * g.width + ix as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one sample.
fn col2im(args: &ConvolutionArgs, g: &Geometry, cols: &[f32], gx: &mut [f32]) {
    let [kh, kw] = args.kernel;
    let positions = g.positions();
    for c in 0..g.channels {
        let plane = &mut gx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * args.stride[0] + ki) as isize - args.pad[0] as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * args.stride[1] + kj) as isize - args.pad[1] as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn forward(args: &ConvolutionArgs, x: &NdArray, w: &NdArray, b: Option<&NdArray>) -> Result<NdArray> {
    let shape = output_shape(args, x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let g = geometry(args, x.shape())?;
    let (patch, positions, maps) = (g.patch(args), g.positions(), args.out_maps);
    let in_len = g.channels * g.height * g.width;
    let out_len = maps * positions;
    let mut y = vec![0.0f32; g.batch * out_len];
    let mut cols = vec![0.0f32; patch * positions];
    for n in 0..g.batch {
        im2col(args, &g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let y_n = &mut y[n * out_len..(n + 1) * out_len];
        gemm_nn(maps, patch, positions, w.data(), &cols, y_n);
        if let Some(b) = b {
            for (map, &bias) in y_n.chunks_mut(positions).zip(b.data()) {
                map.iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    NdArray::from_vec_dtype(&shape, y, Dtype::F32)
}

pub struct ConvolutionGrads {
    pub x: Option<NdArray>,
    pub w: Option<NdArray>,
    pub b: Option<NdArray>,
}

pub fn backward(
    args: &ConvolutionArgs,
    x: &NdArray,
    w: &NdArray,
    gy: &NdArray,
    need: [bool; 3],
) -> Result<ConvolutionGrads> {
    let g = geometry(args, x.shape())?;
    let (patch, positions, maps) = (g.patch(args), g.positions(), args.out_maps);
    let in_len = g.channels * g.height * g.width;
    let out_len = maps * positions;

    let mut gx = need[0].then(|| vec![0.0f32; x.len()]);
    let mut gw = need[1].then(|| vec![0.0f32; w.len()]);
    let mut gb = need[2].then(|| vec![0.0f32; maps]);
    let mut cols = vec![0.0f32; patch * positions];

    for n in 0..g.batch {
        let gy_n = &gy.data()[n * out_len..(n + 1) * out_len];
        if let Some(gw) = gw.as_mut() {
            im2col(args, &g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
            gemm_nt(maps, positions, patch, gy_n, &cols, gw);
        }
        if let Some(gx) = gx.as_mut() {
            cols.iter_mut().for_each(|v| *v = 0.0);
            gemm_tn(patch, maps, positions, w.data(), gy_n, &mut cols);
            col2im(args, &g, &cols, &mut gx[n * in_len..(n + 1) * in_len]);
        }
        if let Some(gb) = gb.as_mut() {
            for (acc, map) in gb.iter_mut().zip(gy_n.chunks(positions)) {
                *acc += map.iter().sum::<f32>();
            }
        }
    }
    Ok(ConvolutionGrads {
        x: gx.map(|v| NdArray::from_vec(x.shape(), v)).transpose()?,
        w: gw.map(|v| NdArray::from_vec(w.shape(), v)).transpose()?,
        b: gb.map(|v| NdArray::from_vec(&[maps], v)).transpose()?,
    })
}
