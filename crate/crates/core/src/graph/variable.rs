use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, Weak};

use crate::error::{Error, Result};
use crate::functions::Function;
use crate::tensor::{Dtype, NdArray};

static NEXT_VAR_ID: AtomicU64 = AtomicU64::new(0);

struct VarState {
    shape: Vec<usize>,
    dtype: Dtype,
    data: Option<Arc<NdArray>>,
    /// `None` reads as zeros.
    grad: Option<Arc<NdArray>>,
    need_grad: bool,
    persistent: bool,
    name: Option<String>,
    parent: Option<Arc<FunctionNode>>,
}

/// A graph node holding data and gradient arrays of one shape.
///
/// Cloning yields another handle to the same variable.
#[derive(Clone)]
pub struct Variable {
    id: u64,
    state: Arc<Mutex<VarState>>,
}

impl Variable {
    fn with_state(state: VarState) -> Self {
        Variable {
            id: NEXT_VAR_ID.fetch_add(1, Ordering::Relaxed),
            state: Arc::new(Mutex::new(state)),
        }
    }

    /// A leaf without data; set it with [`Variable::set_data`] before use.
    pub fn new(shape: &[usize], need_grad: bool) -> Self {
        Self::new_with_dtype(shape, Dtype::F32, need_grad)
    }

    pub fn new_with_dtype(shape: &[usize], dtype: Dtype, need_grad: bool) -> Self {
        Self::with_state(VarState {
            shape: shape.to_vec(),
            dtype,
            data: None,
            grad: None,
            need_grad,
            persistent: false,
            name: None,
            parent: None,
        })
    }

    pub fn from_array(array: NdArray, need_grad: bool) -> Self {
        let v = Self::new_with_dtype(array.shape(), array.dtype(), need_grad);
        v.lock().data = Some(Arc::new(array));
        v
    }

    pub(crate) fn interior(shape: &[usize], dtype: Dtype) -> Self {
        Self::new_with_dtype(shape, dtype, false)
    }

    fn lock(&self) -> MutexGuard<'_, VarState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Unique identity of this variable.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn same_as(&self, other: &Variable) -> bool {
        Arc::ptr_eq(&self.state, &other.state)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.lock().shape.clone()
    }

    pub fn dtype(&self) -> Dtype {
        self.lock().dtype
    }

    pub fn data(&self) -> Option<Arc<NdArray>> {
        self.lock().data.clone()
    }

    /// Data array; panics if the variable has none.
    pub fn d(&self) -> Arc<NdArray> {
        self.data()
            .unwrap_or_else(|| panic!("variable {} has no data", self.label()))
    }

    /// Replaces the data, converting to this variable's dtype.
    pub fn set_data(&self, array: NdArray) -> Result<()> {
        let mut s = self.lock();
        if array.shape() != s.shape.as_slice() {
            return Err(Error::shape(format!(
                "data {:?} for variable of shape {:?}",
                array.shape(),
                s.shape
            )));
        }
        let dtype = s.dtype;
        s.data = Some(Arc::new(array.into_dtype(dtype)));
        Ok(())
    }

    pub(crate) fn store_data(&self, array: NdArray) {
        self.lock().data = Some(Arc::new(array));
    }

    pub(crate) fn release_data(&self) {
        self.lock().data = None;
    }

    /// Gradient array (zeros if nothing has been accumulated).
    pub fn grad(&self) -> Arc<NdArray> {
        let s = self.lock();
        match &s.grad {
            Some(g) => g.clone(),
            None => Arc::new(NdArray::zeros(&s.shape, s.dtype)),
        }
    }

    /// Replaces the gradient. The array keeps its own dtype, so solvers can
    /// hold unscaled gradients in `f32` next to F16 weights.
    pub fn set_grad(&self, array: NdArray) -> Result<()> {
        let mut s = self.lock();
        if array.shape() != s.shape.as_slice() {
            return Err(Error::shape(format!(
                "grad {:?} for variable of shape {:?}",
                array.shape(),
                s.shape
            )));
        }
        s.grad = Some(Arc::new(array));
        Ok(())
    }

    pub(crate) fn store_grad(&self, array: NdArray) {
        self.lock().grad = Some(Arc::new(array));
    }

    pub fn zero_grad(&self) {
        let mut s = self.lock();
        s.grad = Some(Arc::new(NdArray::zeros(&s.shape, s.dtype)));
    }

    pub(crate) fn release_grad(&self) {
        self.lock().grad = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &NdArray) -> Result<()> {
        let mut s = self.lock();
        if delta.shape() != s.shape.as_slice() {
            return Err(Error::shape(format!(
                "gradient {:?} for variable of shape {:?}",
                delta.shape(),
                s.shape
            )));
        }
        let dtype = s.dtype;
        match s.grad.as_mut() {
            Some(g) => {
                let g = Arc::make_mut(g);
                for (acc, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *acc += d;
                }
                g.requantize();
            }
            None => s.grad = Some(Arc::new(delta.to_dtype(dtype))),
        }
        Ok(())
    }

    pub fn need_grad(&self) -> bool {
        self.lock().need_grad
    }

    pub fn set_need_grad(&self, need_grad: bool) {
        self.lock().need_grad = need_grad;
    }

    /// Persistent variables are never released by `clear_buffer`.
    pub fn persistent(&self) -> bool {
        self.lock().persistent
    }

    pub fn set_persistent(&self, persistent: bool) {
        self.lock().persistent = persistent;
    }

    pub fn name(&self) -> Option<String> {
        self.lock().name.clone()
    }

    pub fn set_name(&self, name: impl Into<String>) {
        self.lock().name = Some(name.into());
    }

    pub(crate) fn label(&self) -> String {
        self.name().unwrap_or_else(|| format!("#{}", self.id))
    }

    pub fn parent(&self) -> Option<Arc<FunctionNode>> {
        self.lock().parent.clone()
    }

    pub(crate) fn set_parent(&self, node: Arc<FunctionNode>) {
        self.lock().parent = Some(node);
    }

    pub fn is_leaf(&self) -> bool {
        self.lock().parent.is_none()
    }

    /// Runs every ancestor node in creation order.
    ///
    /// With `clear_buffer`, intermediate outputs that no later backward can
    /// need are released once their last consumer has run.
    pub fn forward(&self, clear_buffer: bool) -> Result<()> {
        super::forward(self, clear_buffer)
    }

    /// Seeds this variable's gradient with `grad_seed` (filled over its shape),
    /// resets every other reachable gradient, and back-propagates.
    pub fn backward(&self, grad_seed: f32, clear_buffer: bool) -> Result<()> {
        super::backward(self, grad_seed, clear_buffer)
    }
}

impl fmt::Debug for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.lock();
        f.debug_struct("Variable")
            .field("id", &self.id)
            .field("name", &s.name)
            .field("shape", &s.shape)
            .field("dtype", &s.dtype)
            .field("need_grad", &s.need_grad)
            .finish()
    }
}

/// One application of a function in a graph.
pub struct FunctionNode {
    seq: u64,
    name: Option<String>,
    function: Function,
    inputs: Vec<Variable>,
    output_id: u64,
    output_shape: Vec<usize>,
    output: Weak<Mutex<VarState>>,
    dtype: Dtype,
}

impl FunctionNode {
    pub(crate) fn new(
        seq: u64,
        name: Option<String>,
        function: Function,
        inputs: Vec<Variable>,
        output: &Variable,
        dtype: Dtype,
    ) -> Self {
        FunctionNode {
            seq,
            name,
            function,
            inputs,
            output_id: output.id,
            output_shape: output.shape(),
            output: Arc::downgrade(&output.state),
            dtype,
        }
    }

    /// Creation sequence number; inputs always come from smaller numbers.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn function(&self) -> &Function {
        &self.function
    }

    pub fn inputs(&self) -> &[Variable] {
        &self.inputs
    }

    pub fn output(&self) -> Option<Variable> {
        self.output.upgrade().map(|state| Variable {
            id: self.output_id,
            state,
        })
    }

    pub fn output_id(&self) -> u64 {
        self.output_id
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Storage dtype of the output.
    pub fn dtype(&self) -> Dtype {
        self.dtype
    }
}

impl fmt::Debug for FunctionNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionNode")
            .field("seq", &self.seq)
            .field("name", &self.name)
            .field("kind", &self.function.kind())
            .field("inputs", &self.inputs.iter().map(|v| v.id).collect::<Vec<_>>())
            .field("output", &self.output_id)
            .finish()
    }
}
