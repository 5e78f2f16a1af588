use crate::error::Result;
use crate::tensor::{seeded_uniform, Dtype, NdArray, Rng};

#[derive(Clone, Debug, PartialEq)]
pub enum Initializer {
    /// Uniform on the open interval `(-L, L)` with `L = sqrt(6 / (fan_in + fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Uniform {
        low: f32,
        high: f32,
    },
    Constant(f32),
    Array(NdArray),
}

impl Initializer {
    pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f32 {
        (6.0 / (fan_in + fan_out) as f32).sqrt()
    }

    pub fn generate(&self, shape: &[usize], rng: &mut Rng) -> Result<NdArray> {
        match self {
            Initializer::Glorot { fan_in, fan_out } => {
                let limit = Self::glorot_limit(*fan_in, *fan_out);
                let mut a = seeded_uniform(shape, -limit, limit, rng)?;
                // keep the lower end open as well
                let above = f32::from_bits((-limit).to_bits() - 1);
                a.map_inplace(|v| if v <= -limit { above } else { v });
                Ok(a)
            }
            Initializer::Uniform { low, high } => seeded_uniform(shape, *low, *high, rng),
            Initializer::Constant(c) => Ok(NdArray::full(shape, *c, Dtype::F32)),
            Initializer::Array(a) => a.clone().reshape(shape),
        }
    }
}

/// Initializer for parameter `leaf` of a layer of `kind`.
///
/// Weights are Glorot-uniform: affine `(I, O)` uses fans `I` and `O`,
/// convolution `(O, C, kh, kw)` uses `C·kh·kw` and `O·kh·kw`. Biases and
/// `beta`/`mean` start at zero, `gamma`/`var` at one.
pub fn default_initializer(kind: &str, leaf: &str, shape: &[usize]) -> Initializer {
    match leaf {
        "W" => {
            let (fan_in, fan_out) = match kind {
                "Convolution" if shape.len() >= 2 => {
                    let receptive: usize = shape[2..].iter().product();
                    (shape[1] * receptive, shape[0] * receptive)
                }
                _ if !shape.is_empty() => {
                    let out = shape[shape.len() - 1];
                    (shape[..shape.len() - 1].iter().product(), out)
                }
                _ => (1, 1),
            };
            Initializer::Glorot { fan_in, fan_out }
        }
        "gamma" | "var" => Initializer::Constant(1.0),
        _ => Initializer::Constant(0.0),
    }
}
