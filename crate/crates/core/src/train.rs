//! End-to-end training and evaluation of the reference classifiers.
//!
//! [`train`] builds the configured network on every worker, runs
//! data-parallel SGD for the configured epochs, reports one [`EpochRecord`]
//! per epoch and returns the trained model as an [`NnpModel`]. [`evaluate`]
//! runs a model's executor over a dataset. Training measures validation
//! error with `evaluate` on a snapshot, so both report the same numbers.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::communicator::{data_parallel_step, run_workers, shard_range, Worker};
use crate::data::{DataKind, DataSpec, Dataset};
use crate::error::{Error, Result};
use crate::functions as F;
use crate::graph::{shape_chain, with_default_context, ExecutionContext, Variable};
use crate::models;
use crate::nnp::{
    build_network, export_network, load_parameters, DatasetRef, ExecutorDef, GlobalConfig, MonitorDef, NnpModel,
    OptimizerDef, TrainingConfig,
};
use crate::parameters::{ParameterRegistry, DEFAULT_SEED};
use crate::solver::{LossScaling, SgdSolver};
use crate::tensor::{NdArray, Rng};

/// Samples per forward pass in [`evaluate`].
pub const EVAL_BATCH: usize = 250;
/// Consecutive non-finite epochs after which f32 training gives up.
pub const DIVERGENCE_EPOCHS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkChoice {
    Mlp { hidden: usize },
    Lenet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    Mixed,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "mixed" => Ok(Precision::Mixed),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkChoice,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub precision: Precision,
    /// `None` picks no scaling in f32 and `dynamic:8,2,2000` in mixed precision.
    pub loss_scaling: Option<LossScaling>,
    pub workers: usize,
    pub seed: u64,
    pub data: DataSpec,
    /// Defaults to the training source with a quarter of the samples and the next seed.
    pub val_data: Option<DataSpec>,
    pub out: Option<PathBuf>,
    pub monitor: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkChoice::Mlp { hidden: 32 },
            epochs: 10,
            batch_size: 20,
            lr: 0.1,
            precision: Precision::F32,
            loss_scaling: None,
            workers: 1,
            seed: DEFAULT_SEED,
            data: DataSpec::gaussians(2, 2000, 2),
            val_data: None,
            out: None,
            monitor: None,
        }
    }
}

impl TrainConfig {
    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut hidden = match self.network {
            NetworkChoice::Mlp { hidden } => hidden,
            NetworkChoice::Lenet => 32,
        };
        let mut network = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || Error::Config(format!("line {}: bad value `{v}` for `{k}`", i + 1));
            match k {
                "network" => network = Some(v.to_string()),
                "hidden" => hidden = v.parse().map_err(|_| bad())?,
                "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
                "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
                "lr" => self.lr = v.parse().map_err(|_| bad())?,
                "precision" => self.precision = v.parse()?,
                "loss_scale" | "loss_scaling" => self.loss_scaling = Some(LossScaling::parse(v)?),
                "workers" => self.workers = v.parse().map_err(|_| bad())?,
                "seed" => self.seed = v.parse().map_err(|_| bad())?,
                "data" => self.data = v.parse()?,
                "val_data" => self.val_data = Some(v.parse()?),
                "out" => self.out = Some(PathBuf::from(v)),
                "monitor" => self.monitor = Some(PathBuf::from(v)),
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", i + 1))),
            }
        }
        self.network = match network.as_deref() {
            None => match self.network {
                NetworkChoice::Mlp { .. } => NetworkChoice::Mlp { hidden },
                lenet => lenet,
            },
            Some("mlp") => NetworkChoice::Mlp { hidden },
            Some("lenet") => NetworkChoice::Lenet,
            Some(other) => return Err(Error::Config(format!("unknown network `{other}`"))),
        };
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !self.batch_size.is_multiple_of(self.workers) {
            return Err(Error::Config(format!(
                "batch_size {} is not divisible by {} workers",
                self.batch_size, self.workers
            )));
        }
        if let NetworkChoice::Mlp { hidden: 0 } = self.network {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        Ok(())
    }

    pub fn context(&self) -> ExecutionContext {
        match self.precision {
            Precision::F32 => ExecutionContext::default(),
            Precision::Mixed => ExecutionContext::default().half(),
        }
    }

    pub fn resolved_loss_scaling(&self) -> LossScaling {
        match (&self.loss_scaling, self.precision) {
            (Some(s), _) => s.clone(),
            (None, Precision::F32) => LossScaling::None,
            (None, Precision::Mixed) => LossScaling::Dynamic(Default::default()),
        }
    }

    /// Training and validation sources with seeds filled in.
    pub fn resolved_data(&self) -> (DataSpec, DataSpec) {
        let mut train = self.data.clone();
        let seed = *train.seed.get_or_insert(self.seed);
        let val = match &self.val_data {
            Some(v) => {
                let mut v = v.clone();
                v.seed.get_or_insert(seed.wrapping_add(1));
                v
            }
            None => {
                let mut v = train.clone();
                v.seed = Some(seed.wrapping_add(1));
                if !matches!(v.kind, DataKind::Csv { .. }) {
                    v.samples = (train.samples / 4).max(1);
                }
                v
            }
        };
        (train, val)
    }
}

/// Logits for `x` from the configured network, using the current registry.
pub fn build_classifier(network: NetworkChoice, x: &Variable, classes: usize) -> Result<Variable> {
    match network {
        NetworkChoice::Mlp { hidden } => models::mlp(x, hidden, classes),
        NetworkChoice::Lenet => {
            if x.shape()[1..] != [1, 28, 28] {
                return Err(Error::Data(format!(
                    "lenet expects 1x28x28 samples, got {:?}",
                    &x.shape()[1..]
                )));
            }
            models::lenet_with_classes(x, classes)
        }
    }
}

/// Shapes along the classifier for a given batch, built in a scratch registry.
pub fn classifier_shape_chain(
    network: NetworkChoice,
    batch: usize,
    sample_shape: &[usize],
    classes: usize,
) -> Result<Vec<(String, Vec<usize>)>> {
    let previous = ParameterRegistry::current();
    let scratch = ParameterRegistry::new(0);
    scratch.make_current();
    let mut shape = vec![batch];
    shape.extend_from_slice(sample_shape);
    let x = Variable::new(&shape, false);
    let result = build_classifier(network, &x, classes).and_then(|y| shape_chain(&y));
    previous.make_current();
    let mut chain = vec![("x".to_string(), shape)];
    chain.extend(result?);
    Ok(chain)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Iterations completed so far.
    pub iteration: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_error: f64,
    /// Loss scale at the end of the epoch; `None` in f32 training.
    pub loss_scale: Option<f32>,
}

pub const MONITOR_HEADER: &str = "epoch,iteration,train_loss,train_error,val_error,loss_scale";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{}",
            self.epoch,
            self.iteration,
            self.train_loss,
            self.train_error,
            self.val_error,
            self.loss_scale.map(|s| s.to_string()).unwrap_or_default()
        )
    }
}

pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub model: NnpModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub error: f64,
    pub loss: f64,
    pub samples: usize,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_errors(logits: &NdArray, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l)
        .count()
}

fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = Rng::new(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch as u64 + 1));
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    perm
}

/// Classification error and mean cross-entropy of the model's first executor on `data`.
pub fn evaluate(model: &NnpModel, data: &Dataset) -> Result<Metrics> {
    let ctx: ExecutionContext = model.global_config.default_context.parse()?;
    let exec = model
        .executor(None)
        .ok_or_else(|| Error::Config("model has no executor".into()))?;
    let net = model
        .network(&exec.network)
        .ok_or_else(|| Error::Config(format!("executor names missing network `{}`", exec.network)))?;
    let (Some(input), Some(output)) = (exec.inputs.first(), exec.outputs.first()) else {
        return Err(Error::Config("executor needs an input and an output".into()));
    };
    let in_def = net
        .variable(input)
        .ok_or_else(|| Error::Config(format!("executor input `{input}` is not declared")))?;
    if in_def.shape.get(1..) != Some(data.sample_shape.as_slice()) {
        return Err(Error::Data(format!(
            "data samples are {:?}, model input `{input}` takes {:?}",
            data.sample_shape,
            in_def.shape.get(1..).unwrap_or(&[])
        )));
    }
    let classes = net
        .variable(output)
        .and_then(|v| v.shape.last().copied())
        .ok_or_else(|| Error::Config(format!("executor output `{output}` is not declared")))?;
    if data.classes > classes {
        return Err(Error::Data(format!(
            "data has {} classes, model predicts {classes}",
            data.classes
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }

    with_default_context(ctx, || {
        let registry = ParameterRegistry::new(0);
        load_parameters(model, &registry)?;
        let mut graphs: HashMap<usize, (Variable, Variable)> = HashMap::new();
        let mut errors = 0usize;
        let mut loss = 0f64;
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(EVAL_BATCH) {
            let (x, y) = match graphs.entry(chunk.len()) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    let built = build_network(model, &net.name, &registry, Some(chunk.len()))?;
                    e.insert((built.get(input)?.clone(), built.get(output)?.clone()))
                }
            };
            let (xb, _) = data.batch(chunk)?;
            x.set_data(xb)?;
            y.forward(true)?;
            let logits = y.d();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            errors += count_errors(&logits, &labels);
            for (row, &l) in logits.data().chunks(classes).zip(&labels) {
                let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
                let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
                loss += lse - row[l] as f64;
            }
        }
        Ok(Metrics {
            error: errors as f64 / data.len() as f64,
            loss: loss / data.len() as f64,
            samples: data.len(),
        })
    })
}

struct Replica {
    x: Variable,
    t: Variable,
    y: Variable,
    loss: Variable,
}

fn describe(
    cfg: &TrainConfig,
    replica: &Replica,
    registry: &ParameterRegistry,
    train: &DataSpec,
    val: &DataSpec,
    iters: usize,
    scaling: &LossScaling,
) -> Result<NnpModel> {
    let (net, parameters) = export_network(
        "main",
        &[("x", &replica.x), ("t", &replica.t)],
        &[("y", &replica.y), ("loss", &replica.loss)],
        registry,
    )?;
    let monitor = |name: &str, dataset: &str, variable: &str| MonitorDef {
        name: name.to_string(),
        network: "main".to_string(),
        dataset: dataset.to_string(),
        variable: variable.to_string(),
        extras: Vec::new(),
    };
    Ok(NnpModel {
        global_config: GlobalConfig {
            default_context: cfg.context().to_string(),
            extras: Vec::new(),
        },
        training_config: TrainingConfig {
            max_epoch: cfg.epochs as u64,
            batch_size: cfg.batch_size as u64,
            iter_per_epoch: iters as u64,
            extras: vec![format!("workers={}", cfg.workers), format!("seed={}", cfg.seed)],
        },
        networks: vec![net],
        parameters,
        datasets: vec![
            DatasetRef {
                name: "train".into(),
                uri: train.to_string(),
                extras: Vec::new(),
            },
            DatasetRef {
                name: "validation".into(),
                uri: val.to_string(),
                extras: Vec::new(),
            },
        ],
        optimizers: vec![OptimizerDef {
            name: "optimizer".into(),
            network: "main".into(),
            dataset: "train".into(),
            solver: "Sgd".into(),
            lr: cfg.lr,
            loss_scaling: scaling.descriptor(),
            extras: Vec::new(),
        }],
        monitors: vec![
            monitor("train_loss", "train", "loss"),
            monitor("train_error", "train", "y"),
            monitor("val_error", "validation", "y"),
        ],
        executors: vec![ExecutorDef {
            name: "runtime".into(),
            network: "main".into(),
            inputs: vec!["x".into()],
            outputs: vec!["y".into()],
            extras: Vec::new(),
        }],
        extra_lines: Vec::new(),
    })
}

fn train_worker(
    w: Worker,
    cfg: &TrainConfig,
    train_spec: &DataSpec,
    val_spec: &DataSpec,
    train: &Dataset,
    val: &Dataset,
    on_epoch: &(dyn Fn(&EpochRecord) -> Result<()> + Sync),
) -> Result<Option<TrainOutcome>> {
    let k = w.comm.size();
    let shard = cfg.batch_size / k;
    let mut shape = vec![shard];
    shape.extend_from_slice(&train.sample_shape);
    let x = Variable::new(&shape, false);
    let t = Variable::new(&[shard, 1], false);
    let y = build_classifier(cfg.network, &x, train.classes)?;
    y.set_persistent(true);
    let loss = F::softmax_cross_entropy(&y, &t)?;
    let replica = Replica { x, t, y, loss };

    let mut solver = SgdSolver::new(cfg.lr);
    solver.setup(&w.registry.get_parameters())?;
    let mut scaling = cfg.resolved_loss_scaling();
    let initial_scaling = scaling.clone();
    let iters = train.len() / cfg.batch_size;
    if iters == 0 {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut bad_epochs = 0;
    for epoch in 0..cfg.epochs {
        let perm = epoch_permutation(cfg.seed, epoch, train.len());
        let mut losses = Vec::with_capacity(iters);
        let mut errors = 0usize;
        for it in 0..iters {
            let batch = &perm[it * cfg.batch_size..(it + 1) * cfg.batch_size];
            let mine = &batch[shard_range(cfg.batch_size, k, w.rank())];
            let (xb, tb) = train.batch(mine)?;
            replica.x.set_data(xb)?;
            replica.t.set_data(tb)?;
            data_parallel_step(&w.comm, &replica.loss, &mut solver, &mut scaling)?;
            losses.push(replica.loss.d().data()[0]);
            let labels: Vec<usize> = mine.iter().map(|&i| train.labels[i]).collect();
            errors += count_errors(&replica.y.d(), &labels);
        }
        let all_losses = w.comm.all_gather(losses)?;
        let all_errors = w.comm.all_gather(errors)?;
        let mut sum = 0f64;
        for it in 0..iters {
            for rank_losses in &all_losses {
                sum += rank_losses[it] as f64;
            }
        }
        let train_loss = sum / (iters * k) as f64;
        let train_error = all_errors.iter().sum::<usize>() as f64 / (iters * cfg.batch_size) as f64;

        if cfg.precision == Precision::F32 && !train_loss.is_finite() {
            bad_epochs += 1;
            if bad_epochs >= DIVERGENCE_EPOCHS {
                return Err(Error::Diverged(bad_epochs));
            }
        } else {
            bad_epochs = 0;
        }

        if w.rank() == 0 {
            let snapshot = describe(
                cfg,
                &replica,
                &w.registry,
                train_spec,
                val_spec,
                iters,
                &initial_scaling,
            )?;
            let val_error = evaluate(&snapshot, val)?.error;
            let record = EpochRecord {
                epoch: epoch + 1,
                iteration: (epoch + 1) * iters,
                train_loss,
                train_error,
                val_error,
                loss_scale: match cfg.precision {
                    Precision::F32 => None,
                    Precision::Mixed => Some(scaling.seed()),
                },
            };
            on_epoch(&record)?;
            records.push(record);
        }
    }

    if w.rank() == 0 {
        let model = describe(
            cfg,
            &replica,
            &w.registry,
            train_spec,
            val_spec,
            iters,
            &initial_scaling,
        )?;
        Ok(Some(TrainOutcome { records, model }))
    } else {
        Ok(None)
    }
}

/// Trains per `cfg`, calling `on_epoch` after every epoch.
pub fn train(cfg: &TrainConfig, on_epoch: &(dyn Fn(&EpochRecord) -> Result<()> + Sync)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_spec, val_spec) = cfg.resolved_data();
    let train = train_spec.load()?;
    let val = val_spec.load()?;
    if val.sample_shape != train.sample_shape {
        return Err(Error::Data("training and validation samples differ in shape".into()));
    }
    let outcomes = run_workers(cfg.workers, cfg.seed, cfg.context(), |w| {
        train_worker(w, cfg, &train_spec, &val_spec, &train, &val, on_epoch)
    })?;
    outcomes
        .into_iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::Config("rank 0 produced no result".into()))
}
