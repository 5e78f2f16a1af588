//! Layers that own trainable parameters.
//!
//! The functions at module level take an optional layer name and use the
//! thread's current registry and scope: `convolution(&x, 16, [5, 5], Some("conv1"))`.
//! [`explicit`] takes a [`ParameterDirectory`] instead, `params.at("conv1")`.
//! Both routes build identical graphs and parameter sets.

use crate::error::Result;
use crate::functions::{AffineArgs, BatchNormArgs, ConvolutionArgs, Function};
use crate::graph::{self, apply, Variable};
use crate::parameters::{default_initializer, ParameterDirectory, ParameterRegistry};
use crate::tensor::{numel, Dtype};

fn directory(name: Option<&str>, base: &str) -> ParameterDirectory {
    let registry = ParameterRegistry::current();
    let leaf = match name {
        Some(n) => n.to_string(),
        None => registry.auto_name(base),
    };
    registry.scoped(&leaf)
}

fn weight(dir: &ParameterDirectory, kind: &str, leaf: &str, shape: &[usize]) -> Result<Variable> {
    dir.get_or_create(
        leaf,
        shape,
        &default_initializer(kind, leaf, shape),
        graph::storage_dtype(),
        true,
    )
}

fn affine_in(dir: &ParameterDirectory, x: &Variable, args: AffineArgs) -> Result<Variable> {
    let shape = x.shape();
    let inner = numel(&shape[args.base_axis.min(shape.len())..]);
    let w = weight(dir, "Affine", "W", &[inner, args.out_features])?;
    let b = weight(dir, "Affine", "b", &[args.out_features])?;
    apply(Function::Affine(args), &[x, &w, &b], Some(dir.path().to_string()))
}

fn convolution_in(dir: &ParameterDirectory, x: &Variable, args: ConvolutionArgs) -> Result<Variable> {
    let shape = x.shape();
    let channels = shape.get(1).copied().unwrap_or(0);
    let w = weight(
        dir,
        "Convolution",
        "W",
        &[args.out_maps, channels, args.kernel[0], args.kernel[1]],
    )?;
    let b = weight(dir, "Convolution", "b", &[args.out_maps])?;
    apply(Function::Convolution(args), &[x, &w, &b], Some(dir.path().to_string()))
}

fn batch_normalization_in(dir: &ParameterDirectory, x: &Variable, args: BatchNormArgs) -> Result<Variable> {
    let channels = x.shape().get(1).copied().unwrap_or(0);
    let shape = [channels];
    let mut vars = Vec::with_capacity(4);
    for (leaf, trainable) in [("beta", true), ("gamma", true), ("mean", false), ("var", false)] {
        // batch-norm parameters stay f32 under half precision
        vars.push(dir.get_or_create(
            leaf,
            &shape,
            &default_initializer("BatchNormalization", leaf, &shape),
            Dtype::F32,
            trainable,
        )?);
    }
    apply(
        Function::BatchNormalization(args),
        &[x, &vars[0], &vars[1], &vars[2], &vars[3]],
        Some(dir.path().to_string()),
    )
}

/// Fully connected layer with parameters `W: (I, O)` and `b: (O,)`;
/// unnamed layers are called `affine`, `affine_1`, ….
pub fn affine(x: &Variable, out_features: usize, name: Option<&str>) -> Result<Variable> {
    affine_in(&directory(name, "affine"), x, AffineArgs::new(out_features))
}

pub fn convolution(x: &Variable, out_maps: usize, kernel: [usize; 2], name: Option<&str>) -> Result<Variable> {
    convolution_with(x, ConvolutionArgs::new(out_maps, kernel), name)
}

pub fn convolution_with(x: &Variable, args: ConvolutionArgs, name: Option<&str>) -> Result<Variable> {
    convolution_in(&directory(name, "convolution"), x, args)
}

pub fn batch_normalization(x: &Variable, batch_stat: bool, name: Option<&str>) -> Result<Variable> {
    let args = BatchNormArgs {
        batch_stat,
        ..Default::default()
    };
    batch_normalization_in(&directory(name, "batch_normalization"), x, args)
}

/// Layers addressed through an explicit parameter directory.
pub mod explicit {
    use super::*;

    pub fn affine(
        x: &Variable,
        base_axis: usize,
        out_features: usize,
        params: &ParameterDirectory,
    ) -> Result<Variable> {
        affine_in(
            params,
            x,
            AffineArgs {
                out_features,
                base_axis,
            },
        )
    }

    pub fn convolution(
        x: &Variable,
        base_axis: usize,
        out_maps: usize,
        kernel: [usize; 2],
        params: &ParameterDirectory,
    ) -> Result<Variable> {
        debug_assert_eq!(base_axis, 1, "only NCHW convolution is supported");
        convolution_in(params, x, ConvolutionArgs::new(out_maps, kernel))
    }

    pub fn batch_normalization(x: &Variable, batch_stat: bool, params: &ParameterDirectory) -> Result<Variable> {
        batch_normalization_in(
            params,
            x,
            BatchNormArgs {
                batch_stat,
                ..Default::default()
            },
        )
    }
}
