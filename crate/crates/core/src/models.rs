//! Reference networks.

use crate::error::Result;
use crate::functions as F;
use crate::graph::Variable;
use crate::parameters::ParameterDirectory;
use crate::parametric as PF;

/// LeNet: two 5×5 convolutions with 16 maps, 2×2 max pooling, and two
/// affine layers, expecting `(B, 1, 28, 28)` input and giving `(B, 10)` logits.
pub fn lenet(x: &Variable) -> Result<Variable> {
    lenet_with_classes(x, 10)
}

pub fn lenet_with_classes(x: &Variable, classes: usize) -> Result<Variable> {
    let h = PF::convolution(x, 16, [5, 5], Some("conv1"))?;
    let h = F::max_pooling(&h, [2, 2])?;
    let h = F::relu(&h)?;
    let h = PF::convolution(&h, 16, [5, 5], Some("conv2"))?;
    let h = F::max_pooling(&h, [2, 2])?;
    let h = F::relu(&h)?;
    let h = PF::affine(&h, 50, Some("affine3"))?;
    let h = F::relu(&h)?;
    PF::affine(&h, classes, Some("affine4"))
}

/// The same LeNet written against an explicit parameter directory.
pub fn lenet_explicit(x: &Variable, parameters: &ParameterDirectory) -> Result<Variable> {
    use crate::functions::MaxPoolingArgs;
    use crate::parametric::explicit as pf;

    let pool = MaxPoolingArgs {
        kernel: [2, 2],
        stride: [2, 2],
        ignore_border: true,
        pad: [0, 0],
    };
    let h = pf::convolution(x, 1, 16, [5, 5], &parameters.at("conv1"))?;
    let h = F::max_pooling_with(&h, pool)?;
    let h = F::relu(&h)?;
    let h = pf::convolution(&h, 1, 16, [5, 5], &parameters.at("conv2"))?;
    let h = F::max_pooling_with(&h, pool)?;
    let h = F::relu(&h)?;
    let h = pf::affine(&h, 1, 50, &parameters.at("affine3"))?;
    let h = F::relu(&h)?;
    pf::affine(&h, 1, 10, &parameters.at("affine4"))
}

/// Two-layer perceptron: `affine(hidden) → relu → affine(classes)`.
pub fn mlp(x: &Variable, hidden: usize, classes: usize) -> Result<Variable> {
    let h = PF::affine(x, hidden, Some("fc1"))?;
    let h = F::relu(&h)?;
    PF::affine(&h, classes, Some("fc2"))
}

/// Total element count of the registry's trainable parameters.
pub fn parameter_count(params: &indexmap::IndexMap<String, Variable>) -> usize {
    params.values().map(|v| v.shape().iter().product::<usize>()).sum()
}
