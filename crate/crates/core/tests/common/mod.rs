#![allow(dead_code)]

pub mod criteria;
pub mod reference;

use nanonnl::functions::{AffineArgs, BatchNormArgs, ConvolutionArgs, Function, MaxPoolingArgs};
use nanonnl::tensor::Rng;
use nanonnl::{NdArray, Variable};

pub const FD_EPS: f32 = 1e-3;
pub const FD_REL: f64 = 1e-2;
pub const FD_ABS: f64 = 1e-4;
/// Relative error allowed in an f32 backward kernel beyond the stated tolerance.
pub const ANALYTIC_REL: f64 = 1e-5;

/// One finite-difference case: a function and its inputs (data, checked).
pub struct GradCase {
    pub label: String,
    pub function: Function,
    pub inputs: Vec<(NdArray, bool)>,
}

#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    pub max_abs: f64,
}

fn rng_values(rng: &mut Rng, n: usize, low: f32, high: f32) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(low, high)).collect()
}

pub fn uniform(rng: &mut Rng, shape: &[usize], low: f32, high: f32) -> NdArray {
    let n = shape.iter().product();
    NdArray::from_vec(shape, rng_values(rng, n, low, high)).unwrap()
}

/// Distinct values at least `gap` apart in a random order, centred on zero.
pub fn spread(rng: &mut Rng, shape: &[usize], gap: f32) -> NdArray {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * gap).collect();
    rng.shuffle(&mut v);
    NdArray::from_vec(shape, v).unwrap()
}

/// Uniform values with magnitude at least `floor`, so a kink at zero is never crossed.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], floor: f32) -> NdArray {
    let mut a = uniform(rng, shape, -1.0, 1.0);
    a.map_inplace(|v| if v >= 0.0 { v + floor } else { v - floor });
    a
}

pub fn labels(rng: &mut Rng, batch: usize, classes: usize) -> NdArray {
    NdArray::from_vec(&[batch, 1], (0..batch).map(|_| rng.below(classes) as f32).collect()).unwrap()
}

fn ulp(v: f32) -> f64 {
    let v = v.abs();
    (f32::from_bits(v.to_bits() + 1) - v) as f64
}

/// Error estimate of the quotient (y+ - y-) / h: at least one ulp of each
/// output, and at least the second difference, which for a smooth function
/// is dominated by the rounding noise of the forward.
fn resolution(yp: f32, y0: f32, ym: f32, h: f64) -> f64 {
    let second = (yp as f64 - 2.0 * y0 as f64 + ym as f64).abs();
    ((ulp(yp) + ulp(ym)).max(second)) / h
}

fn within(a: f64, numeric: f64, floor: f64) -> bool {
    let err = (a - numeric).abs();
    err <= FD_ABS.max(floor) || err <= FD_REL * a.abs().max(numeric.abs())
}

/// Central differences against the backward kernel, entry by entry.
///
/// Every Jacobian entry dy_j/dx_i is compared: the analytic row j comes from
/// the backward kernel with a one-hot output gradient, the numeric column i
/// from two perturbed f32 forwards, divided by the step actually
/// representable in f32. The tolerance never drops below the rounding error
/// those two forwards actually made, measured against an f64 reference.
pub fn grad_check(case: &GradCase) -> Result<GradReport, String> {
    let f = &case.function;
    let err = |e: nanonnl::Error| format!("{}: {e}", case.label);
    let arrays: Vec<&NdArray> = case.inputs.iter().map(|(a, _)| a).collect();
    let y = f.compute(&arrays).map_err(err)?.output;
    for (j, (got, want)) in y.data().iter().zip(reference::forward(f, &arrays)).enumerate() {
        if (*got as f64 - want).abs() > 1e-5 * want.abs().max(1.0) {
            return Err(format!("{}: forward out[{j}] is {got}, reference {want}", case.label));
        }
    }
    let need: Vec<bool> = case.inputs.iter().map(|(_, c)| *c).collect();

    // rows[j][k] is the gradient of y_j with respect to input k
    let mut rows = Vec::with_capacity(y.len());
    for j in 0..y.len() {
        let mut onehot = vec![0f32; y.len()];
        onehot[j] = 1.0;
        let gy = NdArray::from_vec(y.shape(), onehot).unwrap();
        rows.push(f.gradients(&arrays, &gy, &need).map_err(err)?);
    }

    let mut checked = 0;
    let mut max_abs = 0f64;
    for (k, (base, is_checked)) in case.inputs.iter().enumerate() {
        if !is_checked {
            continue;
        }
        for i in 0..base.len() {
            let eval = |delta: f32| -> Result<(NdArray, Vec<f64>, f64), String> {
                let mut v = base.data().to_vec();
                v[i] += delta;
                let at = v[i] as f64;
                let moved = NdArray::from_vec(base.shape(), v).unwrap();
                let mut args = arrays.clone();
                args[k] = &moved;
                let exact = reference::forward(f, &args);
                Ok((f.compute(&args).map_err(err)?.output, exact, at))
            };
            let (yp, ep, xp) = eval(FD_EPS)?;
            let (ym, em, xm) = eval(-FD_EPS)?;
            let (_, hp, xhp) = eval(FD_EPS / 2.0)?;
            let (_, hm, xhm) = eval(-FD_EPS / 2.0)?;
            for j in 0..y.len() {
                let numeric = (yp.data()[j] as f64 - ym.data()[j] as f64) / (xp - xm);
                let a = rows[j]
                    .get(k)
                    .and_then(|g| g.as_ref())
                    .ok_or_else(|| format!("{}: no gradient for input {k}", case.label))?
                    .data()[i] as f64;
                max_abs = max_abs.max((a - numeric).abs());
                // Error budget of the numeric value: rounding actually made by
                // the two f32 forwards, the truncation of the central
                // difference (Richardson estimate on the reference), and the
                // accumulated f32 error of the analytic value.
                let rounding = ((yp.data()[j] as f64 - ep[j]).abs() + (ym.data()[j] as f64 - em[j]).abs()) / (xp - xm);
                let full = (ep[j] - em[j]) / (xp - xm);
                let half = (hp[j] - hm[j]) / (xhp - xhm);
                let truncation = (full - half).abs() * 4.0 / 3.0;
                let noise = rounding + truncation + ANALYTIC_REL * a.abs();
                if !within(a, numeric, noise) {
                    return Err(format!(
                        "{}: d out[{j}] / d input{k}[{i}]: analytic {a:.6e} numeric {numeric:.6e}",
                        case.label
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(GradReport { checked, max_abs })
}

/// The same check through the graph: `build` must return a scalar, and
/// `Variable::backward` supplies the analytic gradients.
pub fn graph_grad_check(
    inputs: &[(NdArray, bool)],
    build: impl Fn(&[Variable]) -> nanonnl::Result<Variable>,
) -> Result<GradReport, String> {
    let vars: Vec<Variable> = inputs
        .iter()
        .map(|(a, c)| Variable::from_array(a.clone(), *c))
        .collect();
    let y = build(&vars).map_err(|e| e.to_string())?;
    y.forward(false).map_err(|e| e.to_string())?;
    y.backward(1.0, false).map_err(|e| e.to_string())?;
    let y0 = y.d().data()[0];
    let mut checked = 0;
    let mut max_abs = 0f64;
    for (k, (base, is_checked)) in inputs.iter().enumerate() {
        if !is_checked {
            continue;
        }
        let analytic = vars[k].grad();
        for i in 0..base.len() {
            let eval = |delta: f32| -> Result<(f32, f64), String> {
                let mut v = base.data().to_vec();
                v[i] += delta;
                let at = v[i] as f64;
                let moved: Vec<Variable> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (a, _))| {
                        let data = if j == k {
                            NdArray::from_vec(base.shape(), v.clone()).unwrap()
                        } else {
                            a.clone()
                        };
                        Variable::from_array(data, false)
                    })
                    .collect();
                let out = build(&moved).map_err(|e| e.to_string())?;
                out.forward(false).map_err(|e| e.to_string())?;
                Ok((out.d().data()[0], at))
            };
            let (fp, xp) = eval(FD_EPS)?;
            let (fm, xm) = eval(-FD_EPS)?;
            let numeric = (fp as f64 - fm as f64) / (xp - xm);
            let a = analytic.data()[i] as f64;
            max_abs = max_abs.max((a - numeric).abs());
            if !within(a, numeric, resolution(fp, y0, fm, xp - xm)) {
                return Err(format!("input {k} element {i}: analytic {a:.6e} numeric {numeric:.6e}"));
            }
            checked += 1;
        }
    }
    Ok(GradReport { checked, max_abs })
}

/// Five or more shape cases for each supported function kind.
pub fn grad_cases(kind: &str, rng: &mut Rng) -> Vec<GradCase> {
    let mut cases = Vec::new();
    match kind {
        "Affine" => {
            for (x, out, bias) in [
                (vec![2, 3], 4, true),
                (vec![3, 2, 2], 3, true),
                (vec![1, 5], 2, false),
                (vec![4, 3], 1, true),
                (vec![2, 2, 3], 5, false),
            ] {
                let inp: usize = x[1..].iter().product();
                let mut inputs = vec![
                    (uniform(rng, &x, -1.0, 1.0), true),
                    (uniform(rng, &[inp, out], -1.0, 1.0), true),
                ];
                if bias {
                    inputs.push((uniform(rng, &[out], -1.0, 1.0), true));
                }
                cases.push(GradCase {
                    label: format!("affine x{x:?} out {out} bias {bias}"),
                    function: Function::Affine(AffineArgs::new(out)),
                    inputs,
                });
            }
        }
        "Convolution" => {
            for (x, maps, kernel, stride, pad, bias) in [
                (vec![1, 1, 5, 5], 2, [3, 3], [1, 1], [0, 0], true),
                (vec![2, 2, 4, 4], 3, [2, 2], [1, 1], [1, 1], true),
                (vec![1, 3, 5, 4], 2, [3, 2], [2, 1], [1, 0], false),
                (vec![2, 1, 6, 6], 1, [3, 3], [2, 2], [0, 0], true),
                (vec![1, 2, 3, 5], 4, [1, 3], [1, 2], [0, 1], false),
            ] {
                let w = vec![maps, x[1], kernel[0], kernel[1]];
                let mut inputs = vec![(uniform(rng, &x, -1.0, 1.0), true), (uniform(rng, &w, -1.0, 1.0), true)];
                if bias {
                    inputs.push((uniform(rng, &[maps], -1.0, 1.0), true));
                }
                cases.push(GradCase {
                    label: format!("conv x{x:?} w{w:?} stride {stride:?} pad {pad:?}"),
                    function: Function::Convolution(
                        ConvolutionArgs::new(maps, kernel).with_stride(stride).with_pad(pad),
                    ),
                    inputs,
                });
            }
        }
        "MaxPooling" => {
            for (x, kernel, stride, ignore_border, pad) in [
                (vec![1, 1, 4, 4], [2, 2], [2, 2], true, [0, 0]),
                (vec![2, 2, 5, 5], [2, 2], [2, 2], false, [0, 0]),
                (vec![1, 3, 6, 4], [3, 2], [2, 1], true, [0, 0]),
                (vec![2, 1, 5, 6], [2, 3], [1, 2], true, [1, 1]),
                (vec![1, 2, 7, 5], [3, 3], [3, 3], false, [0, 0]),
            ] {
                cases.push(GradCase {
                    label: format!("pool x{x:?} k{kernel:?} s{stride:?} ib {ignore_border} pad {pad:?}"),
                    function: Function::MaxPooling(MaxPoolingArgs {
                        kernel,
                        stride,
                        ignore_border,
                        pad,
                    }),
                    inputs: vec![(spread(rng, &x, 0.01), true)],
                });
            }
        }
        "ReLU" => {
            for x in [vec![3], vec![2, 4], vec![2, 3, 2], vec![1, 2, 3, 3], vec![5, 1]] {
                cases.push(GradCase {
                    label: format!("relu x{x:?}"),
                    function: Function::ReLU,
                    inputs: vec![(away_from_zero(rng, &x, 0.01), true)],
                });
            }
        }
        "SoftmaxCrossEntropy" => {
            for (batch, classes) in [(1, 2), (2, 3), (4, 5), (3, 10), (5, 4)] {
                let logits = uniform(rng, &[batch, classes], -2.0, 2.0);
                let t = labels(rng, batch, classes);
                cases.push(GradCase {
                    label: format!("sce {batch}x{classes}"),
                    function: Function::SoftmaxCrossEntropy,
                    inputs: vec![(logits, true), (t, false)],
                });
            }
        }
        "BatchNormalization" => {
            for (x, batch_stat) in [
                (vec![4, 3], true),
                (vec![2, 2, 3, 3], true),
                (vec![3, 1, 2, 2], true),
                (vec![5, 2], true),
                (vec![2, 3, 2, 2], false),
                (vec![4, 2], false),
            ] {
                let c = x[1];
                cases.push(GradCase {
                    label: format!("bn x{x:?} batch_stat {batch_stat}"),
                    function: Function::BatchNormalization(BatchNormArgs {
                        batch_stat,
                        ..Default::default()
                    }),
                    inputs: vec![
                        (uniform(rng, &x, -1.0, 1.0), true),
                        (uniform(rng, &[c], -0.5, 0.5), true),
                        (uniform(rng, &[c], 0.5, 1.5), true),
                        (uniform(rng, &[c], -0.2, 0.2), false),
                        (uniform(rng, &[c], 0.5, 1.5), false),
                    ],
                });
            }
        }
        other => panic!("no gradient cases for {other}"),
    }
    cases
}

/// Every case of every supported kind; returns the number of elements checked.
pub fn check_all_gradients(seed: u64) -> Result<usize, String> {
    let mut rng = Rng::new(seed);
    let mut total = 0;
    for kind in nanonnl::functions::SUPPORTED_KINDS {
        let cases = grad_cases(kind, &mut rng);
        assert!(cases.len() >= 5, "{kind} has fewer than five cases");
        for case in &cases {
            total += grad_check(case)?.checked;
        }
    }
    Ok(total)
}

/// Largest |a - b| over the largest |b|; 0 when both are zero.
pub fn max_rel(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0f64, |m, v| m.max(v.abs() as f64));
    let diff = a
        .iter()
        .zip(b)
        .fold(0f64, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn bits(a: &NdArray) -> Vec<u32> {
    a.data().iter().map(|v| v.to_bits()).collect()
}
