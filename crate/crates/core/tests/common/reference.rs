//! Straightforward f64 forwards for every supported function kind.

use nanonnl::functions::Function;
use nanonnl::NdArray;

fn f64s(a: &NdArray) -> Vec<f64> {
    a.data().iter().map(|&v| v as f64).collect()
}

pub fn forward(f: &Function, inputs: &[&NdArray]) -> Vec<f64> {
    match f {
        Function::Affine(a) => {
            let x = f64s(inputs[0]);
            let w = f64s(inputs[1]);
            let rows: usize = inputs[0].shape()[..a.base_axis].iter().product();
            let (inp, out) = (x.len() / rows, a.out_features);
            let mut y = vec![0.0; rows * out];
            for r in 0..rows {
                for o in 0..out {
                    let mut s = inputs.get(2).map_or(0.0, |b| b.data()[o] as f64);
                    for i in 0..inp {
                        s += x[r * inp + i] * w[i * out + o];
                    }
                    y[r * out + o] = s;
                }
            }
            y
        }
        Function::Convolution(a) => {
            let (xs, ws) = (inputs[0].shape(), inputs[1].shape());
            let (b, c, h, w) = (xs[0], xs[1], xs[2] as isize, xs[3] as isize);
            let (m, kh, kw) = (ws[0], ws[2], ws[3]);
            let oh = (h as usize + 2 * a.pad[0] - kh) / a.stride[0] + 1;
            let ow = (w as usize + 2 * a.pad[1] - kw) / a.stride[1] + 1;
            let (x, wt) = (f64s(inputs[0]), f64s(inputs[1]));
            let mut y = Vec::with_capacity(b * m * oh * ow);
            for bi in 0..b {
                for mi in 0..m {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = inputs.get(2).map_or(0.0, |bias| bias.data()[mi] as f64);
                            for ci in 0..c {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = (oy * a.stride[0] + ky) as isize - a.pad[0] as isize;
                                        let ix = (ox * a.stride[1] + kx) as isize - a.pad[1] as isize;
                                        if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                            continue;
                                        }
                                        let xi = ((bi * c + ci) * h as usize + iy as usize) * w as usize + ix as usize;
                                        s += x[xi] * wt[((mi * c + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                            y.push(s);
                        }
                    }
                }
            }
            y
        }
        Function::MaxPooling(a) => {
            let s = inputs[0].shape();
            let r = s.len();
            let (h, w) = (s[r - 2], s[r - 1]);
            let extent = |n: usize, k: usize, st: usize, p: usize| {
                let padded = n + 2 * p;
                if a.ignore_border {
                    (padded - k) / st + 1
                } else if padded <= k {
                    1
                } else {
                    (padded - k).div_ceil(st) + 1
                }
            };
            let oh = extent(h, a.kernel[0], a.stride[0], a.pad[0]);
            let ow = extent(w, a.kernel[1], a.stride[1], a.pad[1]);
            let x = f64s(inputs[0]);
            let mut y = Vec::new();
            for plane in 0..x.len() / (h * w) {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        for ky in 0..a.kernel[0] {
                            for kx in 0..a.kernel[1] {
                                let iy = (oy * a.stride[0] + ky) as isize - a.pad[0] as isize;
                                let ix = (ox * a.stride[1] + kx) as isize - a.pad[1] as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    best = best.max(x[plane * h * w + iy as usize * w + ix as usize]);
                                }
                            }
                        }
                        y.push(if best.is_finite() { best } else { 0.0 });
                    }
                }
            }
            y
        }
        Function::ReLU => f64s(inputs[0]).into_iter().map(|v| v.max(0.0)).collect(),
        Function::SoftmaxCrossEntropy => {
            let k = inputs[0].shape()[1];
            let x = f64s(inputs[0]);
            let rows = x.len() / k;
            let total: f64 = x
                .chunks(k)
                .enumerate()
                .map(|(b, row)| {
                    let t = inputs[1].data()[b] as usize;
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[t]
                })
                .sum();
            vec![total / rows as f64]
        }
        Function::BatchNormalization(a) => {
            let s = inputs[0].shape();
            let (b, c) = (s[0], s[1]);
            let sp: usize = s[2..].iter().product();
            let x = f64s(inputs[0]);
            let (beta, gamma) = (f64s(inputs[1]), f64s(inputs[2]));
            let mut y = vec![0.0; x.len()];
            for ch in 0..c {
                let idx: Vec<usize> = (0..b)
                    .flat_map(|bi| (0..sp).map(move |k| (bi * c + ch) * sp + k))
                    .collect();
                let (mu, var) = if a.batch_stat {
                    let n = idx.len() as f64;
                    let mu = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
                    (mu, idx.iter().map(|&i| (x[i] - mu).powi(2)).sum::<f64>() / n)
                } else {
                    (inputs[3].data()[ch] as f64, inputs[4].data()[ch] as f64)
                };
                let inv = 1.0 / (var + a.eps as f64).sqrt();
                for &i in &idx {
                    y[i] = gamma[ch] * (x[i] - mu) * inv + beta[ch];
                }
            }
            y
        }
        other => panic!("no reference for {}", other.kind()),
    }
}
