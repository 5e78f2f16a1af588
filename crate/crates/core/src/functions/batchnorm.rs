//! Batch normalization over axis 1. All statistics and parameter math run in
//! `f32` whatever the storage precision of `x`.
//!
//! Inputs are ordered `x, beta, gamma, mean, var`, parameters shaped `(C,)`.
//! Running variance is tracked with the unbiased estimator.

use crate::error::{Error, Result};
use crate::tensor::{Dtype, NdArray};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormArgs {
    pub eps: f32,
    pub momentum: f32,
    pub batch_stat: bool,
}

impl Default for BatchNormArgs {
    fn default() -> Self {
        BatchNormArgs {
            eps: 1e-5,
            momentum: 0.9,
            batch_stat: true,
        }
    }
}

pub fn output_shape(x: &[usize], params: &[&[usize]]) -> Result<Vec<usize>> {
    if x.len() < 2 {
        return Err(Error::shape(format!("batch norm input {x:?} has rank below 2")));
    }
    for p in params {
        if *p != [x[1]] {
            return Err(Error::shape(format!("batch norm parameter {p:?}, expected [{}]", x[1])));
        }
    }
    Ok(x.to_vec())
}

struct Layout {
    batch: usize,
    channels: usize,
    spatial: usize,
}

impl Layout {
    fn of(x: &NdArray) -> Layout {
        let s = x.shape();
        Layout {
            batch: s[0],
            channels: s[1],
            spatial: s[2..].iter().product(),
        }
    }

    fn count(&self) -> usize {
        self.batch * self.spatial
    }

    fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let base = (b * self.channels + c) * self.spatial;
            (base..base + self.spatial).for_each(&mut f);
        }
    }
}

fn batch_moments(x: &NdArray, l: &Layout) -> (Vec<f32>, Vec<f32>) {
    let n = l.count() as f32;
    let mut mean = vec![0.0f32; l.channels];
    let mut var = vec![0.0f32; l.channels];
    for c in 0..l.channels {
        let mut s = 0.0f32;
        l.for_channel(c, |i| s += x.data()[i]);
        let mu = s / n;
        let mut sq = 0.0f32;
        l.for_channel(c, |i| sq += (x.data()[i] - mu) * (x.data()[i] - mu));
        mean[c] = mu;
        var[c] = sq / n;
    }
    (mean, var)
}

pub struct BatchNormForward {
    pub y: NdArray,
    /// Updated running `(mean, var)` in training mode.
    pub running: Option<(NdArray, NdArray)>,
}

pub fn forward(
    args: &BatchNormArgs,
    x: &NdArray,
    beta: &NdArray,
    gamma: &NdArray,
    mean: &NdArray,
    var: &NdArray,
) -> Result<BatchNormForward> {
    output_shape(x.shape(), &[beta.shape(), gamma.shape(), mean.shape(), var.shape()])?;
    let l = Layout::of(x);
    let (mu, sigma2, running) = if args.batch_stat {
        if l.count() <= 1 {
            return Err(Error::DegenerateBatch(l.count()));
        }
        let (mu, sigma2) = batch_moments(x, &l);
        let unbias = l.count() as f32 / (l.count() - 1) as f32;
        let m = args.momentum;
        let new_mean = mean
            .data()
            .iter()
            .zip(&mu)
            .map(|(&r, &b)| m * r + (1.0 - m) * b)
            .collect();
        let new_var = var
            .data()
            .iter()
            .zip(&sigma2)
            .map(|(&r, &b)| m * r + (1.0 - m) * b * unbias)
            .collect();
        let running = (
            NdArray::from_vec(mean.shape(), new_mean)?,
            NdArray::from_vec(var.shape(), new_var)?,
        );
        (mu, sigma2, Some(running))
    } else {
        (mean.data().to_vec(), var.data().to_vec(), None)
    };
    let mut y = NdArray::zeros(x.shape(), Dtype::F32);
    let out = y.data_mut();
    for c in 0..l.channels {
        let inv_std = 1.0 / (sigma2[c] + args.eps).sqrt();
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        l.for_channel(c, |i| out[i] = g * (x.data()[i] - mu[c]) * inv_std + b);
    }
    Ok(BatchNormForward { y, running })
}

pub struct BatchNormGrads {
    pub x: Option<NdArray>,
    pub beta: Option<NdArray>,
    pub gamma: Option<NdArray>,
}

pub fn backward(
    args: &BatchNormArgs,
    x: &NdArray,
    gamma: &NdArray,
    mean: &NdArray,
    var: &NdArray,
    gy: &NdArray,
    need: [bool; 3],
) -> Result<BatchNormGrads> {
    let l = Layout::of(x);
    let n = l.count() as f32;
    let (mu, sigma2) = if args.batch_stat {
        batch_moments(x, &l)
    } else {
        (mean.data().to_vec(), var.data().to_vec())
    };
    let mut gx = NdArray::zeros(x.shape(), Dtype::F32);
    let mut gbeta = vec![0.0f32; l.channels];
    let mut ggamma = vec![0.0f32; l.channels];
    let gxd = gx.data_mut();
    for c in 0..l.channels {
        let inv_std = 1.0 / (sigma2[c] + args.eps).sqrt();
        let (mut sum_g, mut sum_gx) = (0.0f32, 0.0f32);
        l.for_channel(c, |i| {
            let xhat = (x.data()[i] - mu[c]) * inv_std;
            sum_g += gy.data()[i];
            sum_gx += gy.data()[i] * xhat;
        });
        gbeta[c] = sum_g;
        ggamma[c] = sum_gx;
        let g = gamma.data()[c];
        if args.batch_stat {
            let k = g * inv_std / n;
            l.for_channel(c, |i| {
                let xhat = (x.data()[i] - mu[c]) * inv_std;
                gxd[i] = k * (n * gy.data()[i] - sum_g - xhat * sum_gx);
            });
        } else {
            l.for_channel(c, |i| gxd[i] = gy.data()[i] * g * inv_std);
        }
    }
    let c = l.channels;
    Ok(BatchNormGrads {
        x: need[0].then_some(gx),
        beta: need[1].then(|| NdArray::from_vec(&[c], gbeta)).transpose()?,
        gamma: need[2].then(|| NdArray::from_vec(&[c], ggamma)).transpose()?,
    })
}
