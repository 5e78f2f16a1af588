//! The `.nnp` model container.
//!
//! A model is a ZIP archive with three stored members, always in this order:
//!
//! * `nnp_version.txt`: `0.1` and a newline
//! * `network.nntxt`: line-oriented text describing networks and the
//!   training, dataset, optimizer, monitor and executor records
//! * `parameter.bin`: little-endian parameter records
//!
//! ```text
//! config global default_context=static:float:host
//! network main
//! variable x buffer 4x1x28x28
//! variable conv1/W parameter 16x1x5x5
//! function conv1 Convolution inputs=x,conv1/W,conv1/b outputs=conv1/out arg.out_maps=16 arg.kernel=5,5
//! executor runtime network=main inputs=x outputs=y
//! ```
//!
//! Keys and lines this version does not understand are kept and written back
//! unchanged. A function named `_` has no name yet; [`normalize`] assigns one.

mod archive;
mod binary;
mod check;
mod convert;
mod text;

pub use self::archive::{load_nnp, load_nnp_bytes, save_nnp, save_nnp_bytes, NNP_VERSION};
pub use self::binary::{read_parameters, write_parameters, PARAMETER_MAGIC};
pub use self::check::{
    fill_function_names, normalize, query_unsupported, read_supported_set, supported_kinds, validate, Diagnostic,
    DiagnosticKind,
};
pub use self::convert::{build_network, export_model, export_network, load_parameters, BuiltNetwork};
pub use self::text::{parse_network_text, write_network_text};

use crate::graph::ExecutionContext;
use crate::tensor::NdArray;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalConfig {
    /// Execution context descriptor, e.g. `static:half:host`.
    pub default_context: String,
    pub extras: Vec<String>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            default_context: ExecutionContext::default().to_string(),
            extras: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingConfig {
    pub max_epoch: u64,
    pub batch_size: u64,
    pub iter_per_epoch: u64,
    pub extras: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableKind {
    Buffer,
    Parameter,
}

impl VariableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariableKind::Buffer => "buffer",
            VariableKind::Parameter => "parameter",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableDef {
    pub name: String,
    pub kind: VariableKind,
    pub shape: Vec<usize>,
    pub extras: Vec<String>,
}

impl VariableDef {
    pub fn new(name: impl Into<String>, kind: VariableKind, shape: &[usize]) -> Self {
        VariableDef {
            name: name.into(),
            kind,
            shape: shape.to_vec(),
            extras: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionDef {
    /// Empty when the file left the name out.
    pub name: String,
    pub kind: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub args: Vec<(String, String)>,
    pub extras: Vec<String>,
}

impl FunctionDef {
    pub fn new(name: impl Into<String>, kind: impl Into<String>, inputs: &[&str], outputs: &[&str]) -> Self {
        FunctionDef {
            name: name.into(),
            kind: kind.into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            args: Vec::new(),
            extras: Vec::new(),
        }
    }

    pub fn with_arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.push((key.to_string(), value.to_string()));
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkDef {
    pub name: String,
    pub variables: Vec<VariableDef>,
    pub functions: Vec<FunctionDef>,
    pub extras: Vec<String>,
    /// Unrecognized lines inside this network's section.
    pub extra_lines: Vec<String>,
}

impl NetworkDef {
    pub fn new(name: impl Into<String>) -> Self {
        NetworkDef {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn variable(&self, name: &str) -> Option<&VariableDef> {
        self.variables.iter().find(|v| v.name == name)
    }
}

/// A stored parameter. The array's dtype decides the payload width.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterRecord {
    pub name: String,
    pub data: NdArray,
    pub need_grad: bool,
}

impl ParameterRecord {
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRef {
    pub name: String,
    pub uri: String,
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerDef {
    pub name: String,
    pub network: String,
    pub dataset: String,
    pub solver: String,
    pub lr: f32,
    /// `none`, `static:V` or `dynamic:INIT,FACTOR,INTERVAL`.
    pub loss_scaling: String,
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorDef {
    pub name: String,
    pub network: String,
    pub dataset: String,
    pub variable: String,
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutorDef {
    pub name: String,
    pub network: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub extras: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NnpModel {
    pub global_config: GlobalConfig,
    pub training_config: TrainingConfig,
    pub networks: Vec<NetworkDef>,
    pub parameters: Vec<ParameterRecord>,
    pub datasets: Vec<DatasetRef>,
    pub optimizers: Vec<OptimizerDef>,
    pub monitors: Vec<MonitorDef>,
    pub executors: Vec<ExecutorDef>,
    /// Unrecognized top-level lines.
    pub extra_lines: Vec<String>,
}

impl NnpModel {
    pub fn network(&self, name: &str) -> Option<&NetworkDef> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterRecord> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn executor(&self, name: Option<&str>) -> Option<&ExecutorDef> {
        match name {
            Some(n) => self.executors.iter().find(|e| e.name == n),
            None => self.executors.first(),
        }
    }

    /// Structural equality with parameters compared bit for bit.
    pub fn bit_eq(&self, other: &NnpModel) -> bool {
        let strip = |m: &NnpModel| NnpModel {
            parameters: Vec::new(),
            ..m.clone()
        };
        strip(self) == strip(other)
            && self.parameters.len() == other.parameters.len()
            && self
                .parameters
                .iter()
                .zip(&other.parameters)
                .all(|(a, b)| a.name == b.name && a.need_grad == b.need_grad && a.data.bit_eq(&b.data))
    }
}
