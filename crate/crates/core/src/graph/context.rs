use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::tensor::Dtype;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ExecutionMode {
    /// Define-then-run: `apply` only records the node, `forward` computes.
    #[default]
    Static,
    /// Define-by-run: every `apply` computes its output immediately.
    Dynamic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TypeConfig {
    #[default]
    Float,
    Half,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Device {
    #[default]
    Host,
}

/// Selects how subsequently applied functions execute and store results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ExecutionContext {
    pub mode: ExecutionMode,
    pub type_config: TypeConfig,
    pub device: Device,
}

impl ExecutionContext {
    pub fn new(mode: ExecutionMode, type_config: TypeConfig) -> Self {
        ExecutionContext {
            mode,
            type_config,
            device: Device::Host,
        }
    }

    pub fn dynamic(mut self) -> Self {
        self.mode = ExecutionMode::Dynamic;
        self
    }

    pub fn half(mut self) -> Self {
        self.type_config = TypeConfig::Half;
        self
    }

    /// Storage dtype for activations, weights, and gradients.
    pub fn dtype(&self) -> Dtype {
        match self.type_config {
            TypeConfig::Float => Dtype::F32,
            TypeConfig::Half => Dtype::F16,
        }
    }
}

impl fmt::Display for ExecutionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            ExecutionMode::Static => "static",
            ExecutionMode::Dynamic => "dynamic",
        };
        let tc = match self.type_config {
            TypeConfig::Float => "float",
            TypeConfig::Half => "half",
        };
        write!(f, "{mode}:{tc}:host")
    }
}

impl FromStr for ExecutionContext {
    type Err = Error;

    /// Parses `mode:type_config:device`, e.g. `static:half:host`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("bad context descriptor `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mode = match parts[0] {
            "static" => ExecutionMode::Static,
            "dynamic" => ExecutionMode::Dynamic,
            _ => return Err(bad()),
        };
        let type_config = match parts[1] {
            "float" => TypeConfig::Float,
            "half" => TypeConfig::Half,
            _ => return Err(bad()),
        };
        if parts[2] != "host" {
            return Err(bad());
        }
        Ok(ExecutionContext::new(mode, type_config))
    }
}

thread_local! {
    static DEFAULT_CONTEXT: Cell<ExecutionContext> = Cell::new(ExecutionContext::default());
}

/// Sets the context used by functions applied afterwards on this thread.
pub fn set_default_context(ctx: ExecutionContext) {
    DEFAULT_CONTEXT.with(|c| c.set(ctx));
}

pub fn default_context() -> ExecutionContext {
    DEFAULT_CONTEXT.with(|c| c.get())
}

/// Runs `f` under `ctx`, restoring the previous default afterwards.
pub fn with_default_context<R>(ctx: ExecutionContext, f: impl FnOnce() -> R) -> R {
    struct Restore(ExecutionContext);
    impl Drop for Restore {
        fn drop(&mut self) {
            set_default_context(self.0);
        }
    }
    let _restore = Restore(default_context());
    set_default_context(ctx);
    f()
}
