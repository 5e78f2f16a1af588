//! The parameter registry: a dictionary of trainable variables keyed by
//! scoped names, created on first use and fetched afterwards.
//!
//! Each thread has a current registry (see [`ParameterRegistry::current`]),
//! which is what the builder-style layers in [`crate::parametric`] use. Tests
//! and worker replicas create isolated registries with [`ParameterRegistry::new`].

mod init;

pub use self::init::{default_initializer, Initializer};

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::{self, Variable};
use crate::tensor::{Dtype, Rng};

pub const DEFAULT_SEED: u64 = 0;

struct RegistryState {
    entries: IndexMap<String, Variable>,
    scope: Vec<String>,
    seed: u64,
    rng: Rng,
    auto_names: HashMap<String, usize>,
}

/// Shared handle to a parameter dictionary. Clones refer to the same registry.
#[derive(Clone)]
pub struct ParameterRegistry {
    inner: Arc<Mutex<RegistryState>>,
}

thread_local! {
    static CURRENT: RefCell<ParameterRegistry> = RefCell::new(ParameterRegistry::new(DEFAULT_SEED));
}

impl ParameterRegistry {
    pub fn new(seed: u64) -> Self {
        ParameterRegistry {
            inner: Arc::new(Mutex::new(RegistryState {
                entries: IndexMap::new(),
                scope: Vec::new(),
                seed,
                rng: Rng::new(seed),
                auto_names: HashMap::new(),
            })),
        }
    }

    /// This thread's current registry.
    pub fn current() -> Self {
        CURRENT.with(|c| c.borrow().clone())
    }

    /// Makes `self` the current registry of this thread.
    pub fn make_current(&self) {
        CURRENT.with(|c| *c.borrow_mut() = self.clone());
    }

    fn lock(&self) -> MutexGuard<'_, RegistryState> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn same_as(&self, other: &ParameterRegistry) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn seed(&self) -> u64 {
        self.lock().seed
    }

    /// Drops every entry and restarts the initializer stream from `seed`.
    pub fn reset(&self, seed: u64) {
        let mut s = self.lock();
        s.entries.clear();
        s.auto_names.clear();
        s.seed = seed;
        s.rng = Rng::new(seed);
    }

    /// [`ParameterRegistry::reset`] with the current seed.
    pub fn clear(&self) {
        let seed = self.seed();
        self.reset(seed);
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Looks up a fully scoped name.
    pub fn get(&self, name: &str) -> Option<Variable> {
        self.lock().entries.get(name).cloned()
    }

    /// Registers an existing variable under a fully scoped name.
    pub fn insert(&self, name: &str, variable: Variable) -> Result<()> {
        if name.is_empty() {
            return Err(Error::EmptyParameterName);
        }
        variable.set_name(name);
        self.lock().entries.insert(name.to_string(), variable);
        Ok(())
    }

    /// Resolves `leaf` against the scope stack, `outer/inner/leaf`.
    pub fn scoped_name(&self, leaf: &str) -> String {
        let s = self.lock();
        join_scope(&s.scope, leaf)
    }

    /// Fetches the parameter at the scoped `name`, creating it with
    /// `initializer` in the current context's storage dtype when missing.
    pub fn get_or_create(&self, name: &str, shape: &[usize], initializer: &Initializer) -> Result<Variable> {
        let full = self.scoped_name(name);
        self.get_or_create_absolute(&full, shape, initializer, graph::storage_dtype(), true)
    }

    pub(crate) fn get_or_create_absolute(
        &self,
        name: &str,
        shape: &[usize],
        initializer: &Initializer,
        dtype: Dtype,
        need_grad: bool,
    ) -> Result<Variable> {
        if name.is_empty() || name.ends_with('/') {
            return Err(Error::EmptyParameterName);
        }
        let mut s = self.lock();
        if let Some(existing) = s.entries.get(name) {
            let existing_shape = existing.shape();
            if existing_shape != shape {
                return Err(Error::ShapeConflict {
                    name: name.to_string(),
                    existing: existing_shape,
                    requested: shape.to_vec(),
                });
            }
            return Ok(existing.clone());
        }
        let data = initializer.generate(shape, &mut s.rng)?.into_dtype(dtype);
        let var = Variable::from_array(data, need_grad);
        var.set_name(name);
        s.entries.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Trainable entries (`need_grad`) in creation order.
    pub fn get_parameters(&self) -> IndexMap<String, Variable> {
        self.lock()
            .entries
            .iter()
            .filter(|(_, v)| v.need_grad())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Every entry, including frozen ones such as running statistics.
    pub fn get_all_parameters(&self) -> IndexMap<String, Variable> {
        self.lock().entries.clone()
    }

    /// Pushes `name` onto the scope stack until the guard drops.
    pub fn scope(&self, name: &str) -> ScopeGuard {
        let mut s = self.lock();
        let depth = s.scope.len();
        s.scope.push(name.to_string());
        ScopeGuard {
            registry: self.clone(),
            depth,
        }
    }

    pub fn with_scope<R>(&self, name: &str, f: impl FnOnce() -> R) -> R {
        let _guard = self.scope(name);
        f()
    }

    pub fn scope_depth(&self) -> usize {
        self.lock().scope.len()
    }

    /// Generated layer name at the current scope: `base`, then `base_1`, ….
    pub fn auto_name(&self, base: &str) -> String {
        let mut s = self.lock();
        let key = join_scope(&s.scope, base);
        let n = s.auto_names.entry(key).or_insert(0);
        let name = if *n == 0 {
            base.to_string()
        } else {
            format!("{base}_{n}")
        };
        *n += 1;
        name
    }

    /// Restarts generated names, so a rebuilt network reuses its parameters.
    pub fn reset_auto_names(&self) {
        self.lock().auto_names.clear();
    }

    /// A directory rooted at the absolute path `path`.
    pub fn at(&self, path: &str) -> ParameterDirectory {
        ParameterDirectory {
            registry: self.clone(),
            prefix: path.trim_matches('/').to_string(),
        }
    }

    /// A directory rooted at `name` under the current scope.
    pub fn scoped(&self, name: &str) -> ParameterDirectory {
        let path = self.scoped_name(name);
        self.at(&path)
    }
}

fn join_scope(scope: &[String], leaf: &str) -> String {
    if scope.is_empty() {
        leaf.to_string()
    } else {
        format!("{}/{}", scope.join("/"), leaf)
    }
}

/// Pops the scope stack back to its depth at creation.
pub struct ScopeGuard {
    registry: ParameterRegistry,
    depth: usize,
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        self.registry.lock().scope.truncate(self.depth);
    }
}

/// A registry view rooted at a fixed path, e.g. `params.at("conv1")`.
#[derive(Clone)]
pub struct ParameterDirectory {
    registry: ParameterRegistry,
    prefix: String,
}

impl ParameterDirectory {
    pub fn path(&self) -> &str {
        &self.prefix
    }

    pub fn registry(&self) -> &ParameterRegistry {
        &self.registry
    }

    pub fn at(&self, child: &str) -> ParameterDirectory {
        self.registry.at(&self.join(child))
    }

    fn join(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}/{}", self.prefix, leaf)
        }
    }

    pub fn get_or_create(
        &self,
        leaf: &str,
        shape: &[usize],
        initializer: &Initializer,
        dtype: Dtype,
        need_grad: bool,
    ) -> Result<Variable> {
        self.registry
            .get_or_create_absolute(&self.join(leaf), shape, initializer, dtype, need_grad)
    }
}

/// Trainable parameters of the current registry.
pub fn get_parameters() -> IndexMap<String, Variable> {
    ParameterRegistry::current().get_parameters()
}

pub fn clear_parameters() {
    ParameterRegistry::current().clear();
}

/// Runs `f` inside a named scope of the current registry.
pub fn parameter_scope<R>(name: &str, f: impl FnOnce() -> R) -> R {
    ParameterRegistry::current().with_scope(name, f)
}
