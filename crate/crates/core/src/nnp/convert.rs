//! Conversion between live graphs and [`NnpModel`] records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;

use super::check::fill_function_names;
use super::*;
use crate::error::{Error, Result};
use crate::functions::Function;
use crate::graph::{self, apply, default_context, FunctionNode, Variable};
use crate::parameters::{default_initializer, ParameterRegistry};

fn declare(net: &mut NetworkDef, declared: &mut HashSet<u64>, v: &Variable, name: String, kind: VariableKind) {
    if declared.insert(v.id()) {
        net.variables.push(VariableDef::new(name, kind, &v.shape()));
    }
}

fn unique(base: String, taken: &mut HashSet<String>) -> String {
    if taken.insert(base.clone()) {
        return base;
    }
    let mut i = 1;
    loop {
        let candidate = format!("{base}_{i}");
        if taken.insert(candidate.clone()) {
            return candidate;
        }
        i += 1;
    }
}

/// Describes the graph reaching `outputs` as a network named `name`.
///
/// Leaves found in `registry` become parameter variables and records (in
/// registry order); `inputs` and `outputs` keep the given names. Unnamed
/// functions are named `kind_index`, and each function's output is `<function>/out`.
pub fn export_network(
    name: &str,
    inputs: &[(&str, &Variable)],
    outputs: &[(&str, &Variable)],
    registry: &ParameterRegistry,
) -> Result<(NetworkDef, Vec<ParameterRecord>)> {
    let mut nodes: BTreeMap<u64, Arc<FunctionNode>> = BTreeMap::new();
    for (_, v) in outputs {
        for n in graph::topological_nodes(v)? {
            nodes.insert(n.seq(), n);
        }
    }

    let all_params = registry.get_all_parameters();
    let param_name: HashMap<u64, String> = all_params.iter().map(|(k, v)| (v.id(), k.clone())).collect();

    let mut names: HashMap<u64, String> = HashMap::new();
    let mut taken_vars: HashSet<String> = HashSet::new();
    for (n, v) in inputs.iter().chain(outputs) {
        names.insert(v.id(), n.to_string());
        taken_vars.insert(n.to_string());
    }

    let mut net = NetworkDef::new(name);
    let mut declared: HashSet<u64> = HashSet::new();
    let mut used_params: HashSet<String> = HashSet::new();
    for (n, v) in inputs {
        declare(&mut net, &mut declared, v, n.to_string(), VariableKind::Buffer);
    }

    let mut taken_functions: HashSet<String> = HashSet::new();
    let mut counters: HashMap<String, usize> = HashMap::new();
    let mut leaf_counter = 0usize;
    for node in nodes.values() {
        let fname = match node.name() {
            Some(n) => unique(n.to_string(), &mut taken_functions),
            None => {
                let base = node.function().snake_name();
                loop {
                    let c = counters.entry(base.clone()).or_insert(0);
                    let candidate = format!("{base}_{c}");
                    *c += 1;
                    if taken_functions.insert(candidate.clone()) {
                        break candidate;
                    }
                }
            }
        };
        let mut input_names = Vec::with_capacity(node.inputs().len());
        for v in node.inputs() {
            let vname = if let Some(n) = names.get(&v.id()) {
                n.clone()
            } else if let Some(p) = param_name.get(&v.id()) {
                used_params.insert(p.clone());
                names.insert(v.id(), p.clone());
                declare(&mut net, &mut declared, v, p.clone(), VariableKind::Parameter);
                p.clone()
            } else if v.is_leaf() {
                let base = v.name().unwrap_or_else(|| {
                    leaf_counter += 1;
                    format!("input_{}", leaf_counter - 1)
                });
                let n = unique(base, &mut taken_vars);
                names.insert(v.id(), n.clone());
                n
            } else {
                return Err(Error::ForwardNotRun(format!(
                    "input of `{fname}` is produced outside the exported graph"
                )));
            };
            if v.is_leaf() && !param_name.contains_key(&v.id()) {
                declare(&mut net, &mut declared, v, vname.clone(), VariableKind::Buffer);
            }
            input_names.push(vname);
        }
        let out_name = match names.get(&node.output_id()) {
            Some(n) => n.clone(),
            None => {
                let n = unique(format!("{fname}/out"), &mut taken_vars);
                names.insert(node.output_id(), n.clone());
                n
            }
        };
        if declared.insert(node.output_id()) {
            net.variables.push(VariableDef::new(
                out_name.clone(),
                VariableKind::Buffer,
                node.output_shape(),
            ));
        }
        net.functions.push(FunctionDef {
            name: fname,
            kind: node.function().kind().to_string(),
            inputs: input_names,
            outputs: vec![out_name],
            args: node.function().args(),
            extras: Vec::new(),
        });
    }

    let records = all_params
        .iter()
        .filter(|(k, _)| used_params.contains(*k))
        .map(|(k, v)| {
            let data = v.data().ok_or_else(|| Error::UninitializedInput(k.clone()))?;
            Ok(ParameterRecord {
                name: k.clone(),
                data: (*data).clone(),
                need_grad: v.need_grad(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((net, records))
}

/// A complete model with one network, its parameters, the current default
/// context, and an executor `runtime` over `inputs` → `outputs`.
pub fn export_model(
    name: &str,
    inputs: &[(&str, &Variable)],
    outputs: &[(&str, &Variable)],
    registry: &ParameterRegistry,
) -> Result<NnpModel> {
    let (net, parameters) = export_network(name, inputs, outputs, registry)?;
    Ok(NnpModel {
        global_config: GlobalConfig {
            default_context: default_context().to_string(),
            extras: Vec::new(),
        },
        executors: vec![ExecutorDef {
            name: "runtime".to_string(),
            network: name.to_string(),
            inputs: inputs.iter().map(|(n, _)| n.to_string()).collect(),
            outputs: outputs.iter().map(|(n, _)| n.to_string()).collect(),
            extras: Vec::new(),
        }],
        networks: vec![net],
        parameters,
        ..Default::default()
    })
}

/// Registers every stored parameter in `registry`, replacing same-named entries.
pub fn load_parameters(model: &NnpModel, registry: &ParameterRegistry) -> Result<()> {
    for p in &model.parameters {
        registry.insert(&p.name, Variable::from_array(p.data.clone(), p.need_grad))?;
    }
    Ok(())
}

/// Variables of a network rebuilt by [`build_network`], by name.
pub struct BuiltNetwork {
    pub variables: IndexMap<String, Variable>,
}

impl BuiltNetwork {
    pub fn get(&self, name: &str) -> Result<&Variable> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::Config(format!("network has no variable `{name}`")))
    }
}

/// Builds the graph of network `name` in the current context.
///
/// Parameter variables come from `registry` (call [`load_parameters`] first
/// to use stored values); missing ones are created with the default
/// initializer of their consuming function. `batch` replaces the leading
/// dimension of source buffers.
pub fn build_network(
    model: &NnpModel,
    name: &str,
    registry: &ParameterRegistry,
    batch: Option<usize>,
) -> Result<BuiltNetwork> {
    let mut net = model
        .network(name)
        .ok_or_else(|| Error::Config(format!("model has no network `{name}`")))?
        .clone();
    fill_function_names(&mut net);
    let produced: HashSet<&str> = net
        .functions
        .iter()
        .flat_map(|f| f.outputs.iter().map(String::as_str))
        .collect();
    let consumer_kind: HashMap<&str, &str> = net
        .functions
        .iter()
        .rev()
        .flat_map(|f| f.inputs.iter().map(move |i| (i.as_str(), f.kind.as_str())))
        .collect();

    let mut vars: IndexMap<String, Variable> = IndexMap::new();
    for v in &net.variables {
        if produced.contains(v.name.as_str()) {
            continue;
        }
        let var = match v.kind {
            VariableKind::Parameter => match registry.get(&v.name) {
                Some(p) => p,
                None => {
                    let kind = consumer_kind.get(v.name.as_str()).copied().unwrap_or("");
                    let leaf = v.name.rsplit('/').next().unwrap_or(&v.name);
                    let init = default_initializer(kind, leaf, &v.shape);
                    let need_grad = !matches!(leaf, "mean" | "var");
                    let dtype = if kind == "BatchNormalization" {
                        crate::tensor::Dtype::F32
                    } else {
                        graph::storage_dtype()
                    };
                    registry
                        .at("")
                        .get_or_create(&v.name, &v.shape, &init, dtype, need_grad)?
                }
            },
            VariableKind::Buffer => {
                let mut shape = v.shape.clone();
                if let (Some(b), Some(first)) = (batch, shape.first_mut()) {
                    *first = b;
                }
                let var = Variable::new(&shape, false);
                var.set_name(v.name.clone());
                var
            }
        };
        vars.insert(v.name.clone(), var);
    }

    for f in &net.functions {
        let (function, _) = Function::from_parts(&f.kind, f.args.clone())?;
        let inputs: Vec<&Variable> = f
            .inputs
            .iter()
            .map(|n| {
                vars.get(n)
                    .ok_or_else(|| Error::ValidationFailed(format!("`{}` reads `{n}` before it exists", f.name)))
            })
            .collect::<Result<_>>()?;
        let out = apply(function, &inputs, Some(f.name.clone()))?;
        let [out_name] = f.outputs.as_slice() else {
            return Err(Error::ValidationFailed(format!("`{}` must have one output", f.name)));
        };
        if batch.is_none() {
            if let Some(decl) = net.variable(out_name) {
                if decl.shape != out.shape() {
                    return Err(Error::shape(format!(
                        "`{out_name}` declared {:?}, computed {:?}",
                        decl.shape,
                        out.shape()
                    )));
                }
            }
        }
        out.set_name(out_name.clone());
        vars.insert(out_name.clone(), out);
    }
    Ok(BuiltNetwork { variables: vars })
}
