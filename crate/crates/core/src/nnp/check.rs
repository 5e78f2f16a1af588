use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use super::*;
use crate::error::{Error, Result};
use crate::functions::{snake_case, Function, SUPPORTED_KINDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    EmptyModel,
    UnresolvedName,
    ShapeConflict,
    DuplicateName,
    MissingName,
    NotTopological,
    InvalidArgument,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.location, self.message)
    }
}

fn diag(kind: DiagnosticKind, location: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        kind,
        location: location.into(),
        message: message.into(),
    }
}

fn function_label(net: &NetworkDef, i: usize) -> String {
    let f = &net.functions[i];
    if f.name.is_empty() {
        format!("{}/#{i}({})", net.name, f.kind)
    } else {
        format!("{}/{}", net.name, f.name)
    }
}

fn validate_network(net: &NetworkDef, model: &NnpModel, out: &mut Vec<Diagnostic>) {
    use DiagnosticKind::*;
    if net.functions.is_empty() {
        out.push(diag(EmptyModel, &net.name, "network has no functions"));
    }
    let mut declared: HashMap<&str, &VariableDef> = HashMap::new();
    for v in &net.variables {
        if declared.insert(&v.name, v).is_some() {
            out.push(diag(
                DuplicateName,
                &net.name,
                format!("variable `{}` declared twice", v.name),
            ));
        }
        if v.kind == VariableKind::Parameter {
            if let Some(p) = model.parameter(&v.name) {
                if p.shape() != v.shape.as_slice() {
                    out.push(diag(
                        ShapeConflict,
                        format!("{}/{}", net.name, v.name),
                        format!("declared {:?}, stored parameter has {:?}", v.shape, p.shape()),
                    ));
                }
            }
        }
    }

    let mut producer: HashMap<&str, usize> = HashMap::new();
    let mut names = HashSet::new();
    for (i, f) in net.functions.iter().enumerate() {
        if f.name.is_empty() {
            out.push(diag(MissingName, function_label(net, i), "function has no name"));
        } else if !names.insert(f.name.as_str()) {
            out.push(diag(DuplicateName, function_label(net, i), "function name used twice"));
        }
        for o in &f.outputs {
            if producer.insert(o, i).is_some() {
                out.push(diag(
                    DuplicateName,
                    function_label(net, i),
                    format!("`{o}` has two producers"),
                ));
            }
        }
    }

    for (i, f) in net.functions.iter().enumerate() {
        let loc = function_label(net, i);
        for name in f.inputs.iter().chain(&f.outputs) {
            if !declared.contains_key(name.as_str()) {
                out.push(diag(UnresolvedName, &loc, format!("variable `{name}` is not declared")));
            }
        }
        for name in &f.inputs {
            if let Some(&p) = producer.get(name.as_str()) {
                if p >= i {
                    out.push(diag(
                        NotTopological,
                        &loc,
                        format!("`{name}` is produced by a later function"),
                    ));
                }
            }
        }
        let function = match Function::from_parts(&f.kind, f.args.clone()) {
            Ok((function, _)) => function,
            Err(e) => {
                out.push(diag(InvalidArgument, &loc, e.to_string()));
                continue;
            }
        };
        if !function.is_executable() {
            continue;
        }
        let shapes: Option<Vec<&[usize]>> = f
            .inputs
            .iter()
            .map(|n| declared.get(n.as_str()).map(|v| v.shape.as_slice()))
            .collect();
        let Some(shapes) = shapes else { continue };
        match function.infer_shape(&shapes) {
            Ok(shape) => {
                if let [o] = f.outputs.as_slice() {
                    if let Some(v) = declared.get(o.as_str()) {
                        if v.shape != shape {
                            out.push(diag(
                                ShapeConflict,
                                &loc,
                                format!("`{o}` declared {:?}, inputs give {:?}", v.shape, shape),
                            ));
                        }
                    }
                } else {
                    out.push(diag(InvalidArgument, &loc, "expected exactly one output"));
                }
            }
            Err(e) => out.push(diag(ShapeConflict, &loc, e.to_string())),
        }
    }
}

/// Every problem found in `model`; empty means valid.
pub fn validate(model: &NnpModel) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out = Vec::new();
    if model.networks.is_empty() {
        out.push(diag(EmptyModel, "model", "model has no networks"));
    }
    let mut net_names = HashSet::new();
    for net in &model.networks {
        if !net_names.insert(net.name.as_str()) {
            out.push(diag(DuplicateName, &net.name, "network name used twice"));
        }
        validate_network(net, model, &mut out);
    }

    let declared_anywhere = |name: &str| model.networks.iter().any(|n| n.variable(name).is_some());
    for p in &model.parameters {
        if !declared_anywhere(&p.name) {
            out.push(diag(
                UnresolvedName,
                "parameters",
                format!("`{}` is not used by any network", p.name),
            ));
        }
    }

    let check_var = |out: &mut Vec<Diagnostic>, loc: &str, net: Option<&NetworkDef>, name: &str| {
        if let Some(net) = net {
            if net.variable(name).is_none() {
                out.push(diag(
                    UnresolvedName,
                    loc,
                    format!("`{name}` is not a variable of network `{}`", net.name),
                ));
            }
        }
    };
    let find_net = |out: &mut Vec<Diagnostic>, loc: &str, name: &str| {
        let net = model.network(name);
        if net.is_none() {
            out.push(diag(UnresolvedName, loc, format!("network `{name}` does not exist")));
        }
        net
    };
    let dataset_exists = |name: &str| model.datasets.iter().any(|d| d.name == name);
    for e in &model.executors {
        let loc = format!("executor {}", e.name);
        let net = find_net(&mut out, &loc, &e.network);
        for v in e.inputs.iter().chain(&e.outputs) {
            check_var(&mut out, &loc, net, v);
        }
    }
    for o in &model.optimizers {
        let loc = format!("optimizer {}", o.name);
        find_net(&mut out, &loc, &o.network);
        if !dataset_exists(&o.dataset) {
            out.push(diag(
                UnresolvedName,
                &loc,
                format!("dataset `{}` does not exist", o.dataset),
            ));
        }
    }
    for m in &model.monitors {
        let loc = format!("monitor {}", m.name);
        let net = find_net(&mut out, &loc, &m.network);
        check_var(&mut out, &loc, net, &m.variable);
        if !dataset_exists(&m.dataset) {
            out.push(diag(
                UnresolvedName,
                &loc,
                format!("dataset `{}` does not exist", m.dataset),
            ));
        }
    }
    out
}

/// Names unnamed functions `kind_index`, counting per kind and skipping taken names.
pub fn fill_function_names(net: &mut NetworkDef) {
    let mut taken: HashSet<String> = net
        .functions
        .iter()
        .filter(|f| !f.name.is_empty())
        .map(|f| f.name.clone())
        .collect();
    let mut counters: HashMap<String, usize> = HashMap::new();
    for f in net.functions.iter_mut().filter(|f| f.name.is_empty()) {
        let base = snake_case(&f.kind);
        let n = counters.entry(base.clone()).or_insert(0);
        let name = loop {
            let candidate = format!("{base}_{n}");
            *n += 1;
            if !taken.contains(&candidate) {
                break candidate;
            }
        };
        taken.insert(name.clone());
        f.name = name;
    }
}

/// Stable topological order: among ready functions the earliest listed goes first.
fn topological_sort(net: &mut NetworkDef) -> Result<()> {
    let n = net.functions.len();
    let mut producer: HashMap<&str, usize> = HashMap::new();
    for (i, f) in net.functions.iter().enumerate() {
        for o in &f.outputs {
            producer.insert(o, i);
        }
    }
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, f) in net.functions.iter().enumerate() {
        for input in &f.inputs {
            match producer.get(input.as_str()) {
                Some(&i) => {
                    indegree[j] += 1;
                    consumers[i].push(j);
                }
                None if net.variable(input).is_some() => {}
                None => {
                    return Err(Error::Unnormalizable(format!(
                        "`{input}` used by {} has no producer or declaration",
                        function_label(net, j)
                    )))
                }
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &consumers[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<String> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| function_label(net, i))
            .collect();
        return Err(Error::Unnormalizable(format!("cycle through {}", stuck.join(", "))));
    }
    let mut slots: Vec<Option<FunctionDef>> = std::mem::take(&mut net.functions).into_iter().map(Some).collect();
    net.functions = order
        .into_iter()
        .map(|i| slots[i].take().expect("each index once"))
        .collect();
    Ok(())
}

/// Declares function outputs that were left undeclared, using inferred shapes.
fn declare_outputs(net: &mut NetworkDef) -> Result<()> {
    for i in 0..net.functions.len() {
        let f = &net.functions[i];
        let missing: Vec<String> = f
            .outputs
            .iter()
            .filter(|o| net.variable(o).is_none())
            .cloned()
            .collect();
        if missing.is_empty() {
            continue;
        }
        let label = function_label(net, i);
        let (function, _) = Function::from_parts(&f.kind, f.args.clone())
            .map_err(|e| Error::Unnormalizable(format!("{label}: {e}")))?;
        let shapes: Vec<Vec<usize>> = f
            .inputs
            .iter()
            .map(|n| net.variable(n).map(|v| v.shape.clone()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Unnormalizable(format!("{label}: inputs have no known shape")))?;
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let shape = function
            .infer_shape(&refs)
            .map_err(|e| Error::Unnormalizable(format!("{label}: cannot infer output shape: {e}")))?;
        if missing.len() != 1 || f.outputs.len() != 1 {
            return Err(Error::Unnormalizable(format!("{label}: expected exactly one output")));
        }
        net.variables
            .push(VariableDef::new(missing[0].clone(), VariableKind::Buffer, &shape));
    }
    Ok(())
}

fn synthesize_executor(net: &NetworkDef) -> ExecutorDef {
    let produced: HashSet<&str> = net
        .functions
        .iter()
        .flat_map(|f| f.outputs.iter().map(String::as_str))
        .collect();
    let consumed: HashSet<&str> = net
        .functions
        .iter()
        .flat_map(|f| f.inputs.iter().map(String::as_str))
        .collect();
    let inputs = net
        .variables
        .iter()
        .filter(|v| {
            v.kind == VariableKind::Buffer && !produced.contains(v.name.as_str()) && consumed.contains(v.name.as_str())
        })
        .map(|v| v.name.clone())
        .collect();
    let outputs = net
        .functions
        .iter()
        .flat_map(|f| f.outputs.iter())
        .filter(|o| !consumed.contains(o.as_str()))
        .cloned()
        .collect();
    ExecutorDef {
        name: "executor".to_string(),
        network: net.name.clone(),
        inputs,
        outputs,
        extras: Vec::new(),
    }
}

/// Fills names and the default executor, sorts functions topologically, and
/// re-validates. Applying it twice gives the same model.
pub fn normalize(model: &NnpModel) -> Result<NnpModel> {
    let mut m = model.clone();
    for net in &mut m.networks {
        fill_function_names(net);
        topological_sort(net)?;
        declare_outputs(net)?;
    }
    if m.executors.is_empty() && m.networks.len() == 1 {
        m.executors.push(synthesize_executor(&m.networks[0]));
    }
    let diagnostics = validate(&m);
    if !diagnostics.is_empty() {
        let text: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(Error::Unnormalizable(text.join("; ")));
    }
    Ok(m)
}

/// The function kinds this crate executes.
pub fn supported_kinds() -> BTreeSet<String> {
    SUPPORTED_KINDS.iter().map(|s| s.to_string()).collect()
}

/// Names of function instances whose kind is not in `supported`. Unnamed
/// functions are reported under the name [`normalize`] would give them.
pub fn query_unsupported(model: &NnpModel, supported: &BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for net in &model.networks {
        let mut net = net.clone();
        fill_function_names(&mut net);
        out.extend(
            net.functions
                .iter()
                .filter(|f| !supported.contains(&f.kind))
                .map(|f| f.name.clone()),
        );
    }
    out
}

/// Reads a supported-set file: one kind per line, `#` comments allowed.
pub fn read_supported_set(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
