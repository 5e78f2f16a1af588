use std::fmt::Write as _;

use super::*;
use crate::error::{Error, Result};

const MEMBER: &str = "network.nntxt";

fn shape_token(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn list(names: &[String]) -> String {
    names.join(",")
}

fn push_extras(line: &mut String, extras: &[String]) {
    for e in extras {
        line.push(' ');
        line.push_str(e);
    }
}

pub fn write_network_text(model: &NnpModel) -> String {
    let mut out = String::new();
    let g = &model.global_config;
    let mut line = format!("config global default_context={}", g.default_context);
    push_extras(&mut line, &g.extras);
    out.push_str(&line);
    out.push('\n');

    let t = &model.training_config;
    let mut line = format!(
        "config training max_epoch={} batch_size={} iter_per_epoch={}",
        t.max_epoch, t.batch_size, t.iter_per_epoch
    );
    push_extras(&mut line, &t.extras);
    out.push_str(&line);
    out.push('\n');

    for net in &model.networks {
        let mut line = format!("network {}", net.name);
        push_extras(&mut line, &net.extras);
        let _ = writeln!(out, "{line}");
        for v in &net.variables {
            let mut line = format!("variable {} {} {}", v.name, v.kind.as_str(), shape_token(&v.shape));
            push_extras(&mut line, &v.extras);
            let _ = writeln!(out, "{line}");
        }
        for f in &net.functions {
            let name = if f.name.is_empty() { "_" } else { &f.name };
            let mut line = format!(
                "function {} {} inputs={} outputs={}",
                name,
                f.kind,
                list(&f.inputs),
                list(&f.outputs)
            );
            for (k, v) in &f.args {
                let _ = write!(line, " arg.{k}={v}");
            }
            push_extras(&mut line, &f.extras);
            let _ = writeln!(out, "{line}");
        }
        for l in &net.extra_lines {
            let _ = writeln!(out, "{l}");
        }
    }
    for d in &model.datasets {
        let mut line = format!("dataset {} uri={}", d.name, d.uri);
        push_extras(&mut line, &d.extras);
        let _ = writeln!(out, "{line}");
    }
    for o in &model.optimizers {
        let mut line = format!(
            "optimizer {} network={} dataset={} solver={} lr={} loss_scaling={}",
            o.name, o.network, o.dataset, o.solver, o.lr, o.loss_scaling
        );
        push_extras(&mut line, &o.extras);
        let _ = writeln!(out, "{line}");
    }
    for m in &model.monitors {
        let mut line = format!(
            "monitor {} network={} dataset={} variable={}",
            m.name, m.network, m.dataset, m.variable
        );
        push_extras(&mut line, &m.extras);
        let _ = writeln!(out, "{line}");
    }
    for e in &model.executors {
        let mut line = format!(
            "executor {} network={} inputs={} outputs={}",
            e.name,
            e.network,
            list(&e.inputs),
            list(&e.outputs)
        );
        push_extras(&mut line, &e.extras);
        let _ = writeln!(out, "{line}");
    }
    for l in &model.extra_lines {
        let _ = writeln!(out, "{l}");
    }
    out
}

/// Key/value tokens of one line; known keys are taken out, the rest stays as extras.
struct Fields {
    line: usize,
    tokens: Vec<String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        let prefix = format!("{key}=");
        let i = self.tokens.iter().position(|t| t.starts_with(&prefix))?;
        Some(self.tokens.remove(i)[prefix.len()..].to_string())
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::parse(MEMBER, self.line, format!("missing `{key}=`")))
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::parse(MEMBER, self.line, format!("bad value `{v}` for `{key}`")))
    }

    fn list(&mut self, key: &str) -> Result<Vec<String>> {
        let v = self.require(key)?;
        Ok(split_list(&v))
    }

    fn rest(self) -> Vec<String> {
        self.tokens
    }
}

fn split_list(v: &str) -> Vec<String> {
    if v.is_empty() {
        Vec::new()
    } else {
        v.split(',').map(str::to_string).collect()
    }
}

fn parse_shape(token: &str, line: usize) -> Result<Vec<usize>> {
    if token == "scalar" {
        return Ok(Vec::new());
    }
    token
        .split('x')
        .map(|d| {
            d.parse()
                .map_err(|_| Error::parse(MEMBER, line, format!("bad shape `{token}`")))
        })
        .collect()
}

enum Scope {
    Top,
    Network,
}

pub fn parse_network_text(text: &str) -> Result<NnpModel> {
    let mut model = NnpModel::default();
    let mut scope = Scope::Top;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let mut positional = |what: &str| {
            tokens
                .next()
                .map(str::to_string)
                .ok_or_else(|| Error::parse(MEMBER, line, format!("`{keyword}` needs a {what}")))
        };
        match keyword {
            "config" => {
                let section = positional("section")?;
                let mut f = Fields {
                    line,
                    tokens: tokens.map(str::to_string).collect(),
                };
                match section.as_str() {
                    "global" => {
                        model.global_config = GlobalConfig {
                            default_context: f.require("default_context")?,
                            extras: f.rest(),
                        }
                    }
                    "training" => {
                        model.training_config = TrainingConfig {
                            max_epoch: f.number("max_epoch")?,
                            batch_size: f.number("batch_size")?,
                            iter_per_epoch: f.number("iter_per_epoch")?,
                            extras: f.rest(),
                        }
                    }
                    _ => {
                        model.extra_lines.push(trimmed.to_string());
                    }
                }
                scope = Scope::Top;
            }
            "network" => {
                let name = positional("name")?;
                let mut net = NetworkDef::new(name);
                net.extras = tokens.map(str::to_string).collect();
                model.networks.push(net);
                scope = Scope::Network;
            }
            "variable" | "function" => {
                let net = model
                    .networks
                    .last_mut()
                    .ok_or_else(|| Error::parse(MEMBER, line, format!("`{keyword}` outside a network")))?;
                let name = positional("name")?;
                if keyword == "variable" {
                    let kind = match positional("kind")?.as_str() {
                        "buffer" => VariableKind::Buffer,
                        "parameter" => VariableKind::Parameter,
                        other => return Err(Error::parse(MEMBER, line, format!("unknown variable kind `{other}`"))),
                    };
                    let shape = parse_shape(&positional("shape")?, line)?;
                    net.variables.push(VariableDef {
                        name,
                        kind,
                        shape,
                        extras: tokens.map(str::to_string).collect(),
                    });
                } else {
                    let kind = positional("kind")?;
                    let mut f = Fields {
                        line,
                        tokens: tokens.map(str::to_string).collect(),
                    };
                    let inputs = f.list("inputs")?;
                    let outputs = f.list("outputs")?;
                    let mut args = Vec::new();
                    let mut extras = Vec::new();
                    for t in f.rest() {
                        match t.strip_prefix("arg.").and_then(|kv| kv.split_once('=')) {
                            Some((k, v)) => args.push((k.to_string(), v.to_string())),
                            None => extras.push(t),
                        }
                    }
                    net.functions.push(FunctionDef {
                        name: if name == "_" { String::new() } else { name },
                        kind,
                        inputs,
                        outputs,
                        args,
                        extras,
                    });
                }
                scope = Scope::Network;
            }
            "dataset" | "optimizer" | "monitor" | "executor" => {
                let name = positional("name")?;
                let mut f = Fields {
                    line,
                    tokens: tokens.map(str::to_string).collect(),
                };
                match keyword {
                    "dataset" => {
                        let uri = f.require("uri")?;
                        model.datasets.push(DatasetRef {
                            name,
                            uri,
                            extras: f.rest(),
                        })
                    }
                    "optimizer" => {
                        let network = f.require("network")?;
                        let dataset = f.require("dataset")?;
                        let solver = f.require("solver")?;
                        let lr = f.number("lr")?;
                        let loss_scaling = f.require("loss_scaling")?;
                        model.optimizers.push(OptimizerDef {
                            name,
                            network,
                            dataset,
                            solver,
                            lr,
                            loss_scaling,
                            extras: f.rest(),
                        })
                    }
                    "monitor" => {
                        let network = f.require("network")?;
                        let dataset = f.require("dataset")?;
                        let variable = f.require("variable")?;
                        model.monitors.push(MonitorDef {
                            name,
                            network,
                            dataset,
                            variable,
                            extras: f.rest(),
                        })
                    }
                    _ => {
                        let network = f.require("network")?;
                        let inputs = f.list("inputs")?;
                        let outputs = f.list("outputs")?;
                        model.executors.push(ExecutorDef {
                            name,
                            network,
                            inputs,
                            outputs,
                            extras: f.rest(),
                        })
                    }
                }
                scope = Scope::Top;
            }
            _ => match (&scope, model.networks.last_mut()) {
                (Scope::Network, Some(net)) => net.extra_lines.push(trimmed.to_string()),
                _ => model.extra_lines.push(trimmed.to_string()),
            },
        }
    }
    Ok(model)
}
