//! Computation graphs and reverse-mode differentiation.
//!
//! A [`Variable`] pairs a data array with a same-shaped gradient array. Applying
//! a [`Function`] to variables creates a [`FunctionNode`] and its output
//! variable. Nodes are numbered by a process-wide creation sequence; every input
//! of a node was created before it, so ascending sequence order is a valid
//! topological order and is the one used by both passes.
//!
//! The same construction code runs in either mode of the default
//! [`ExecutionContext`]: in static mode nothing is computed until
//! [`Variable::forward`]; in dynamic mode each `apply` computes its node on the
//! spot and keeps the node record, so [`Variable::backward`] works identically.

mod context;
mod variable;

pub use self::context::{
    default_context, set_default_context, with_default_context, Device, ExecutionContext, ExecutionMode, TypeConfig,
};
pub use self::variable::{FunctionNode, Variable};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::functions::Function;
use crate::tensor::{Dtype, NdArray};

static NEXT_NODE_SEQ: AtomicU64 = AtomicU64::new(0);

/// Records `function` applied to `inputs` and returns its output variable.
///
/// Shapes are validated eagerly in both modes. Under a `Half` context the
/// output is stored as F16.
pub fn apply(function: Function, inputs: &[&Variable], name: Option<String>) -> Result<Variable> {
    if !function.is_executable() {
        return Err(Error::UnknownFunction(function.kind().to_string()));
    }
    let ctx = default_context();
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|v| v.shape()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let out_shape = function.infer_shape(&shape_refs)?;
    let dtype = ctx.dtype();

    let output = Variable::interior(&out_shape, dtype);
    let node = Arc::new(FunctionNode::new(
        NEXT_NODE_SEQ.fetch_add(1, Ordering::Relaxed),
        name,
        function,
        inputs.iter().map(|v| (*v).clone()).collect(),
        &output,
        dtype,
    ));
    output.set_parent(node.clone());
    if ctx.mode == ExecutionMode::Dynamic {
        execute(&node, &output)?;
    }
    Ok(output)
}

fn execute(node: &FunctionNode, output: &Variable) -> Result<()> {
    let arrays = node
        .inputs()
        .iter()
        .map(|v| {
            v.data().ok_or_else(|| {
                if v.is_leaf() {
                    Error::UninitializedInput(v.label())
                } else {
                    Error::ForwardNotRun(v.label())
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&NdArray> = arrays.iter().map(Arc::as_ref).collect();
    let computed = node.function().compute(&refs)?;
    output.store_data(computed.output.into_dtype(node.dtype()));
    for (index, state) in computed.updates {
        let target = &node.inputs()[index];
        let dtype = target.dtype();
        target.store_data(state.into_dtype(dtype));
    }
    Ok(())
}

/// Every node reachable from `root`, ascending by creation sequence.
fn collect_nodes(root: &Variable) -> Result<Vec<Arc<FunctionNode>>> {
    let mut found: BTreeMap<u64, Arc<FunctionNode>> = BTreeMap::new();
    let mut stack: Vec<Arc<FunctionNode>> = root.parent().into_iter().collect();
    while let Some(node) = stack.pop() {
        if found.contains_key(&node.seq()) {
            continue;
        }
        for input in node.inputs() {
            if let Some(parent) = input.parent() {
                if parent.seq() >= node.seq() {
                    return Err(Error::CycleDetected(node.seq()));
                }
                stack.push(parent);
            }
        }
        found.insert(node.seq(), node);
    }
    Ok(found.into_values().collect())
}

/// Whether gradients must flow into each variable, keyed by variable id.
fn grad_requirements(nodes: &[Arc<FunctionNode>]) -> (HashMap<u64, bool>, Vec<bool>) {
    let mut var_req: HashMap<u64, bool> = HashMap::new();
    let mut node_req = Vec::with_capacity(nodes.len());
    for node in nodes {
        let mut any = false;
        for input in node.inputs() {
            let r = if input.is_leaf() {
                input.need_grad()
            } else {
                var_req.get(&input.id()).copied().unwrap_or(false)
            };
            var_req.insert(input.id(), r);
            any |= r;
        }
        var_req.insert(node.output_id(), any);
        node_req.push(any);
    }
    (var_req, node_req)
}

pub(crate) fn forward(root: &Variable, clear_buffer: bool) -> Result<()> {
    let nodes = collect_nodes(root)?;
    let (_, node_req) = grad_requirements(&nodes);

    // For clear_buffer: remaining consumer count per interior variable and
    // whether any consumer will need it during backward.
    let mut consumers: HashMap<u64, (usize, bool)> = HashMap::new();
    if clear_buffer {
        for (node, &req) in nodes.iter().zip(&node_req) {
            for input in node.inputs().iter().filter(|v| !v.is_leaf()) {
                let entry = consumers.entry(input.id()).or_insert((0, false));
                entry.0 += 1;
                entry.1 |= req;
            }
        }
    }

    let mut written: HashSet<u64> = HashSet::new();
    for node in &nodes {
        for input in node.inputs() {
            if !input.is_leaf() && !written.contains(&input.id()) {
                return Err(Error::ForwardNotRun(input.label()));
            }
        }
        let output = node
            .output()
            .ok_or_else(|| Error::ForwardNotRun(format!("output of #{}", node.seq())))?;
        execute(node, &output)?;
        written.insert(output.id());

        if clear_buffer {
            for input in node.inputs().iter().filter(|v| !v.is_leaf()) {
                if let Some(entry) = consumers.get_mut(&input.id()) {
                    entry.0 -= 1;
                    if entry.0 == 0 && !entry.1 && !input.persistent() && input.id() != root.id() {
                        input.release_data();
                    }
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn backward(root: &Variable, grad_seed: f32, clear_buffer: bool) -> Result<()> {
    if root.data().is_none() {
        return Err(Error::ForwardNotRun(root.label()));
    }
    let nodes = collect_nodes(root)?;
    let mut outputs = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let out = node
            .output()
            .filter(|o| o.data().is_some())
            .ok_or_else(|| Error::ForwardNotRun(format!("output of #{} ({})", node.seq(), node.function().kind())))?;
        outputs.push(out);
    }
    let (var_req, node_req) = grad_requirements(&nodes);

    for node in &nodes {
        for input in node.inputs() {
            if var_req.get(&input.id()).copied().unwrap_or(false) {
                input.zero_grad();
            }
        }
    }
    for out in &outputs {
        out.zero_grad();
    }
    let seed = NdArray::full(&root.shape(), grad_seed, root.dtype());
    root.store_grad(seed);

    for ((node, out), &req) in nodes.iter().zip(&outputs).zip(&node_req).rev() {
        if !req {
            continue;
        }
        let gy = out.grad();
        let need: Vec<bool> = node
            .inputs()
            .iter()
            .map(|v| var_req.get(&v.id()).copied().unwrap_or(false))
            .collect();
        let arrays = node
            .inputs()
            .iter()
            .map(|v| v.data().ok_or_else(|| Error::ForwardNotRun(v.label())))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&NdArray> = arrays.iter().map(Arc::as_ref).collect();
        let grads = node.function().gradients(&refs, &gy, &need)?;
        for ((input, grad), needed) in node.inputs().iter().zip(grads).zip(&need) {
            if let (Some(grad), true) = (grad, *needed) {
                input.accumulate_grad(&grad)?;
            }
        }
        if clear_buffer && out.id() != root.id() && !out.persistent() {
            out.release_data();
            out.release_grad();
        }
    }
    Ok(())
}

/// Output shapes of every node reachable from `root`, in execution order.
pub fn shape_chain(root: &Variable) -> Result<Vec<(String, Vec<usize>)>> {
    Ok(collect_nodes(root)?
        .iter()
        .map(|n| (n.function().kind().to_string(), n.output_shape().to_vec()))
        .collect())
}

/// Nodes reachable from `root` in execution order.
pub fn topological_nodes(root: &Variable) -> Result<Vec<Arc<FunctionNode>>> {
    collect_nodes(root)
}

pub(crate) fn storage_dtype() -> Dtype {
    default_context().dtype()
}
