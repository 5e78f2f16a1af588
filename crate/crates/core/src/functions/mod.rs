//! The function library.
//!
//! [`Function`] carries a kind and its attributes and dispatches shape
//! inference, forward, and backward math to the per-kind kernels. The free
//! functions at the bottom ([`relu`], [`max_pooling`], …) apply a function to
//! graph variables. Kind names and attribute keys are the vocabulary of the
//! NNP network text.

pub mod affine;
pub mod batchnorm;
pub mod conv;
pub mod loss;
pub mod pool;
pub mod relu;

pub use self::affine::AffineArgs;
pub use self::batchnorm::BatchNormArgs;
pub use self::conv::ConvolutionArgs;
pub use self::pool::MaxPoolingArgs;

use crate::error::{Error, Result};
use crate::graph::{apply, Variable};
use crate::tensor::NdArray;

/// Kinds this crate can execute.
pub const SUPPORTED_KINDS: [&str; 6] = [
    "Affine",
    "Convolution",
    "MaxPooling",
    "ReLU",
    "SoftmaxCrossEntropy",
    "BatchNormalization",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Function {
    Affine(AffineArgs),
    Convolution(ConvolutionArgs),
    MaxPooling(MaxPoolingArgs),
    ReLU,
    SoftmaxCrossEntropy,
    BatchNormalization(BatchNormArgs),
    /// A kind this crate does not implement, kept for inspection only.
    Opaque {
        kind: String,
        args: Vec<(String, String)>,
    },
}

/// Result of a forward kernel: the output plus in-place state updates of
/// inputs (batch-norm running statistics).
pub struct Computed {
    pub output: NdArray,
    pub updates: Vec<(usize, NdArray)>,
}

fn pair(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn join2(v: [usize; 2]) -> String {
    format!("{},{}", v[0], v[1])
}

struct ArgReader<'a> {
    kind: &'a str,
    args: Vec<(String, String)>,
}

impl ArgReader<'_> {
    fn take(&mut self, key: &str) -> Result<Option<String>> {
        match self.args.iter().position(|(k, _)| k == key) {
            Some(i) => Ok(Some(self.args.remove(i).1)),
            None => Ok(None),
        }
    }

    fn bad(&self, key: &str, value: &str) -> Error {
        Error::Config(format!("{}: bad value `{value}` for `{key}`", self.kind))
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.take(key)? {
            Some(v) => v.parse().map_err(|_| self.bad(key, &v)),
            None => default.ok_or_else(|| Error::Config(format!("{}: missing `{key}`", self.kind))),
        }
    }

    fn pair(&mut self, key: &str, default: Option<[usize; 2]>) -> Result<[usize; 2]> {
        match self.take(key)? {
            Some(v) => {
                let parts: Vec<&str> = v.split(',').collect();
                match parts.as_slice() {
                    [a, b] => Ok([
                        a.parse().map_err(|_| self.bad(key, &v))?,
                        b.parse().map_err(|_| self.bad(key, &v))?,
                    ]),
                    _ => Err(self.bad(key, &v)),
                }
            }
            None => default.ok_or_else(|| Error::Config(format!("{}: missing `{key}`", self.kind))),
        }
    }

    fn f32(&mut self, key: &str, default: f32) -> Result<f32> {
        match self.take(key)? {
            Some(v) => v.parse().map_err(|_| self.bad(key, &v)),
            None => Ok(default),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key)? {
            Some(v) => v.parse().map_err(|_| self.bad(key, &v)),
            None => Ok(default),
        }
    }
}

fn expect_inputs(kind: &str, got: usize, allowed: &[usize]) -> Result<()> {
    if allowed.contains(&got) {
        Ok(())
    } else {
        Err(Error::shape(format!("{kind} takes {allowed:?} inputs, got {got}")))
    }
}

impl Function {
    pub fn kind(&self) -> &str {
        match self {
            Function::Affine(_) => "Affine",
            Function::Convolution(_) => "Convolution",
            Function::MaxPooling(_) => "MaxPooling",
            Function::ReLU => "ReLU",
            Function::SoftmaxCrossEntropy => "SoftmaxCrossEntropy",
            Function::BatchNormalization(_) => "BatchNormalization",
            Function::Opaque { kind, .. } => kind,
        }
    }

    /// Lower-case identifier used for generated instance names.
    pub fn snake_name(&self) -> String {
        snake_case(self.kind())
    }

    pub fn is_executable(&self) -> bool {
        !matches!(self, Function::Opaque { .. })
    }

    /// Attributes as ordered key/value strings.
    pub fn args(&self) -> Vec<(String, String)> {
        match self {
            Function::Affine(a) => vec![pair("out_features", a.out_features), pair("base_axis", a.base_axis)],
            Function::Convolution(a) => vec![
                pair("out_maps", a.out_maps),
                pair("kernel", join2(a.kernel)),
                pair("stride", join2(a.stride)),
                pair("pad", join2(a.pad)),
            ],
            Function::MaxPooling(a) => vec![
                pair("kernel", join2(a.kernel)),
                pair("stride", join2(a.stride)),
                pair("ignore_border", a.ignore_border),
                pair("pad", join2(a.pad)),
            ],
            Function::ReLU | Function::SoftmaxCrossEntropy => Vec::new(),
            Function::BatchNormalization(a) => vec![
                pair("eps", a.eps),
                pair("momentum", a.momentum),
                pair("batch_stat", a.batch_stat),
            ],
            Function::Opaque { args, .. } => args.clone(),
        }
    }

    /// Rebuilds a function from its kind and attributes. Unknown kinds become
    /// [`Function::Opaque`]; attributes a known kind does not use are returned.
    pub fn from_parts(kind: &str, args: Vec<(String, String)>) -> Result<(Function, Vec<(String, String)>)> {
        let mut r = ArgReader { kind, args };
        let f = match kind {
            "Affine" => Function::Affine(AffineArgs {
                out_features: r.usize("out_features", None)?,
                base_axis: r.usize("base_axis", Some(1))?,
            }),
            "Convolution" => Function::Convolution(ConvolutionArgs {
                out_maps: r.usize("out_maps", None)?,
                kernel: r.pair("kernel", None)?,
                stride: r.pair("stride", Some([1, 1]))?,
                pad: r.pair("pad", Some([0, 0]))?,
            }),
            "MaxPooling" => {
                let kernel = r.pair("kernel", None)?;
                Function::MaxPooling(MaxPoolingArgs {
                    kernel,
                    stride: r.pair("stride", Some(kernel))?,
                    ignore_border: r.bool("ignore_border", true)?,
                    pad: r.pair("pad", Some([0, 0]))?,
                })
            }
            "ReLU" => Function::ReLU,
            "SoftmaxCrossEntropy" => Function::SoftmaxCrossEntropy,
            "BatchNormalization" => {
                let d = BatchNormArgs::default();
                Function::BatchNormalization(BatchNormArgs {
                    eps: r.f32("eps", d.eps)?,
                    momentum: r.f32("momentum", d.momentum)?,
                    batch_stat: r.bool("batch_stat", d.batch_stat)?,
                })
            }
            other => {
                return Ok((
                    Function::Opaque {
                        kind: other.to_string(),
                        args: std::mem::take(&mut r.args),
                    },
                    Vec::new(),
                ))
            }
        };
        Ok((f, r.args))
    }

    /// Output shape from input shapes alone.
    pub fn infer_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let kind = self.kind();
        match self {
            Function::Affine(a) => {
                expect_inputs(kind, inputs.len(), &[2, 3])?;
                affine::output_shape(a, inputs[0], inputs[1], inputs.get(2).copied())
            }
            Function::Convolution(a) => {
                expect_inputs(kind, inputs.len(), &[2, 3])?;
                conv::output_shape(a, inputs[0], inputs[1], inputs.get(2).copied())
            }
            Function::MaxPooling(a) => {
                expect_inputs(kind, inputs.len(), &[1])?;
                pool::output_shape(a, inputs[0])
            }
            Function::ReLU => {
                expect_inputs(kind, inputs.len(), &[1])?;
                Ok(inputs[0].to_vec())
            }
            Function::SoftmaxCrossEntropy => {
                expect_inputs(kind, inputs.len(), &[2])?;
                loss::output_shape(inputs[0], inputs[1])
            }
            Function::BatchNormalization(_) => {
                expect_inputs(kind, inputs.len(), &[5])?;
                batchnorm::output_shape(inputs[0], &inputs[1..])
            }
            Function::Opaque { kind, .. } => Err(Error::UnknownFunction(kind.clone())),
        }
    }

    /// Forward kernel; the output is `f32` and the caller applies storage dtype.
    pub fn compute(&self, inputs: &[&NdArray]) -> Result<Computed> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|a| a.shape()).collect();
        self.infer_shape(&shapes)?;
        let output = match self {
            Function::Affine(a) => affine::forward(a, inputs[0], inputs[1], inputs.get(2).copied())?,
            Function::Convolution(a) => conv::forward(a, inputs[0], inputs[1], inputs.get(2).copied())?,
            Function::MaxPooling(a) => pool::forward(a, inputs[0])?,
            Function::ReLU => relu::forward(inputs[0]),
            Function::SoftmaxCrossEntropy => loss::forward(inputs[0], inputs[1])?,
            Function::BatchNormalization(a) => {
                let out = batchnorm::forward(a, inputs[0], inputs[1], inputs[2], inputs[3], inputs[4])?;
                let updates = match out.running {
                    Some((mean, var)) => vec![(3, mean), (4, var)],
                    None => Vec::new(),
                };
                return Ok(Computed { output: out.y, updates });
            }
            Function::Opaque { kind, .. } => return Err(Error::UnknownFunction(kind.clone())),
        };
        Ok(Computed {
            output,
            updates: Vec::new(),
        })
    }

    /// Input gradients in `f32` given the output gradient `gy`; entries whose
    /// `need` flag is false may be `None`.
    pub fn gradients(&self, inputs: &[&NdArray], gy: &NdArray, need: &[bool]) -> Result<Vec<Option<NdArray>>> {
        let flag = |i: usize| need.get(i).copied().unwrap_or(false);
        Ok(match self {
            Function::Affine(a) => {
                let g = affine::backward(a, inputs[0], inputs[1], gy, [flag(0), flag(1), flag(2)])?;
                let mut out = vec![g.x, g.w];
                if inputs.len() == 3 {
                    out.push(g.b);
                }
                out
            }
            Function::Convolution(a) => {
                let g = conv::backward(a, inputs[0], inputs[1], gy, [flag(0), flag(1), flag(2)])?;
                let mut out = vec![g.x, g.w];
                if inputs.len() == 3 {
                    out.push(g.b);
                }
                out
            }
            Function::MaxPooling(a) => vec![flag(0).then(|| pool::backward(a, inputs[0], gy)).transpose()?],
            Function::ReLU => vec![flag(0).then(|| relu::backward(inputs[0], gy))],
            Function::SoftmaxCrossEntropy => {
                vec![
                    flag(0).then(|| loss::backward(inputs[0], inputs[1], gy)).transpose()?,
                    None,
                ]
            }
            Function::BatchNormalization(a) => {
                let g = batchnorm::backward(
                    a,
                    inputs[0],
                    inputs[2],
                    inputs[3],
                    inputs[4],
                    gy,
                    [flag(0), flag(1), flag(2)],
                )?;
                vec![g.x, g.beta, g.gamma, None, None]
            }
            Function::Opaque { kind, .. } => return Err(Error::UnknownFunction(kind.clone())),
        })
    }

    /// Multiply-add count of one application.
    pub fn multiply_adds(&self, inputs: &[&[usize]], output: &[usize]) -> u64 {
        match self {
            Function::Affine(a) => {
                let x = inputs[0];
                let rows: usize = x[..a.base_axis].iter().product();
                let inner: usize = x[a.base_axis..].iter().product();
                (rows * inner * a.out_features) as u64
            }
            Function::Convolution(a) => {
                let x = inputs[0];
                (output[0] * a.out_maps * x[1] * a.kernel[0] * a.kernel[1] * output[2] * output[3]) as u64
            }
            _ => 0,
        }
    }
}

/// `MaxPooling` → `max_pooling`, `LSTM` → `lstm`.
pub fn snake_case(kind: &str) -> String {
    match kind {
        "ReLU" => return "relu".to_string(),
        "BatchNormalization" => return "batch_normalization".to_string(),
        _ => {}
    }
    let chars: Vec<char> = kind.chars().collect();
    let mut out = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_uppercase() && i > 0 && chars[i - 1].is_lowercase() {
            out.push('_');
        }
        out.extend(c.to_lowercase());
    }
    out
}

pub fn affine(x: &Variable, w: &Variable, b: Option<&Variable>, out_features: usize) -> Result<Variable> {
    let mut inputs = vec![x, w];
    inputs.extend(b);
    apply(Function::Affine(AffineArgs::new(out_features)), &inputs, None)
}

pub fn convolution(x: &Variable, w: &Variable, b: Option<&Variable>, args: ConvolutionArgs) -> Result<Variable> {
    let mut inputs = vec![x, w];
    inputs.extend(b);
    apply(Function::Convolution(args), &inputs, None)
}

/// Pooling with stride equal to the kernel, borders ignored, no padding.
pub fn max_pooling(x: &Variable, kernel: [usize; 2]) -> Result<Variable> {
    max_pooling_with(x, MaxPoolingArgs::new(kernel))
}

pub fn max_pooling_with(x: &Variable, args: MaxPoolingArgs) -> Result<Variable> {
    apply(Function::MaxPooling(args), &[x], None)
}

pub fn relu(x: &Variable) -> Result<Variable> {
    apply(Function::ReLU, &[x], None)
}

pub fn softmax_cross_entropy(logits: &Variable, labels: &Variable) -> Result<Variable> {
    apply(Function::SoftmaxCrossEntropy, &[logits, labels], None)
}

pub fn batch_normalization(
    x: &Variable,
    beta: &Variable,
    gamma: &Variable,
    mean: &Variable,
    var: &Variable,
    args: BatchNormArgs,
) -> Result<Variable> {
    apply(Function::BatchNormalization(args), &[x, beta, gamma, mean, var], None)
}
