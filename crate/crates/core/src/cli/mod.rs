//! The `nanonnl` command line: `train`, `eval`, `convert`, `query`, `dump`.
//!
//! Exit codes: 0 ok, 1 query found unsupported functions, 2 config or parse
//! error, 3 data error, 4 training diverged, 5 model cannot be normalized.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use crate::data::DataSpec;
use crate::error::{Error, Result};
use crate::functions::Function;
use crate::nnp::{self, NnpModel};
use crate::solver::LossScaling;
use crate::train::{self, EpochRecord, NetworkChoice, TrainConfig, MONITOR_HEADER};

pub const SEED_ENV: &str = "NANONNL_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FOUND: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_UNNORMALIZABLE: i32 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "nanonnl",
    version,
    about = "Train, evaluate and inspect small neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write the model and monitor log.
    Train(TrainArgs),
    /// Print classification error and mean loss of a model.
    Eval {
        model: PathBuf,
        /// Data descriptor; defaults to the model's validation dataset.
        #[arg(long)]
        data: Option<String>,
    },
    /// Rewrite a model in normalized form.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Accepted for clarity; output is always normalized.
        #[arg(long)]
        normalize: bool,
    },
    /// List function instances whose kind is not supported.
    Query {
        input: PathBuf,
        /// File with one supported kind per line; defaults to the built-in set.
        #[arg(long)]
        supported: Option<PathBuf>,
    },
    /// Summarize networks, shapes, parameter count and multiply-adds.
    Dump { input: PathBuf },
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// f32 or mixed.
    #[arg(long)]
    precision: Option<String>,
    /// none, static:V or dynamic:I,F,N.
    #[arg(long = "loss-scale")]
    loss_scale: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model output; defaults to model.nnp.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monitor CSV; defaults to the model path with a .csv extension.
    #[arg(long)]
    monitor: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training data descriptor.
    #[arg(long)]
    data: Option<String>,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) | Error::LabelOutOfRange { .. } => EXIT_DATA,
        Error::Diverged(_) => EXIT_DIVERGED,
        Error::Unnormalizable(_) | Error::CycleDetected(_) => EXIT_UNNORMALIZABLE,
        _ => EXIT_CONFIG,
    }
}

/// Runs the command line in `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval { model, data } => cmd_eval(&model, data.as_deref(), &mut out),
        Command::Convert { input, output, .. } => cmd_convert(&input, &output),
        Command::Query { input, supported } => cmd_query(&input, supported.as_deref(), &mut out),
        Command::Dump { input } => cmd_dump(&input, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(path) = &a.config {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(p) = &a.precision {
        cfg.precision = p.parse()?;
    }
    if let Some(s) = &a.loss_scale {
        cfg.loss_scaling = Some(LossScaling::parse(s)?);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(d) = &a.data {
        cfg.data = d.parse()?;
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(m) = &a.monitor {
        cfg.monitor = Some(m.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let cfg = train_config(&a)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("model.nnp"));
    let monitor_path = cfg.monitor.clone().unwrap_or_else(|| out.with_extension("csv"));

    if cfg.network == NetworkChoice::Lenet {
        let shape = cfg.data.sample_shape().unwrap_or_else(|| vec![1, 28, 28]);
        if let Ok(chain) = train::classifier_shape_chain(cfg.network, cfg.batch_size, &shape, cfg.data.classes) {
            let text: Vec<String> = chain.iter().map(|(_, s)| format!("{s:?}")).collect();
            eprintln!("lenet shapes: {}", text.join(" -> "));
        }
    }

    let mut file = File::create(&monitor_path)?;
    writeln!(file, "{MONITOR_HEADER}")?;
    file.flush()?;
    let monitor = Mutex::new(file);
    let on_epoch = |r: &EpochRecord| -> Result<()> {
        let mut f = monitor.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(f, "{}", r.csv_row())?;
        f.flush()?;
        eprintln!(
            "epoch {} loss {:.6} train_error {:.4} val_error {:.4}",
            r.epoch, r.train_loss, r.train_error, r.val_error
        );
        Ok(())
    };
    let outcome = train::train(&cfg, &on_epoch)?;
    nnp::save_nnp(&outcome.model, &out)?;
    eprintln!("wrote {} and {}", out.display(), monitor_path.display());
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> Result<NnpModel> {
    nnp::load_nnp(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn cmd_eval(path: &Path, data: Option<&str>, out: &mut impl Write) -> Result<i32> {
    let model = load_model(path)?;
    let diagnostics = nnp::validate(&model);
    if !diagnostics.is_empty() {
        let text: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(Error::ValidationFailed(text.join("; ")));
    }
    let spec: DataSpec = match data {
        Some(d) => d.parse()?,
        None => {
            let uri = model
                .datasets
                .iter()
                .find(|d| d.name == "validation")
                .or(model.datasets.first())
                .map(|d| d.uri.clone())
                .ok_or_else(|| Error::Config("model names no dataset; pass --data".into()))?;
            uri.parse()?
        }
    };
    let dataset = spec.load()?;
    let m = train::evaluate(&model, &dataset)?;
    writeln!(out, "error={:.6} loss={:.6} samples={}", m.error, m.loss, m.samples)?;
    Ok(EXIT_OK)
}

fn cmd_convert(input: &Path, output: &Path) -> Result<i32> {
    let model = load_model(input)?;
    let normalized = nnp::normalize(&model)?;
    for e in &normalized.executors {
        if !model.executors.iter().any(|x| x.name == e.name) {
            eprintln!(
                "note: added executor `{}` ({} -> {})",
                e.name,
                e.inputs.join(","),
                e.outputs.join(",")
            );
        }
    }
    for (before, after) in model.networks.iter().zip(&normalized.networks) {
        let order = |n: &nnp::NetworkDef| n.functions.iter().map(|f| f.kind.clone()).collect::<Vec<_>>();
        if order(before) != order(after) {
            eprintln!("note: reordered functions of network `{}`", after.name);
        }
    }
    nnp::save_nnp(&normalized, output)?;
    Ok(EXIT_OK)
}

fn cmd_query(input: &Path, supported: Option<&Path>, out: &mut impl Write) -> Result<i32> {
    let model = load_model(input)?;
    let set = match supported {
        Some(p) => {
            nnp::read_supported_set(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?
        }
        None => nnp::supported_kinds(),
    };
    let found = nnp::query_unsupported(&model, &set);
    for name in &found {
        writeln!(out, "{name}")?;
    }
    Ok(if found.is_empty() { EXIT_OK } else { EXIT_FOUND })
}

fn cmd_dump(input: &Path, out: &mut impl Write) -> Result<i32> {
    let model = load_model(input)?;
    writeln!(out, "context {}", model.global_config.default_context)?;
    let mut total_macs = 0u64;
    for net in &model.networks {
        let mut net = net.clone();
        nnp::fill_function_names(&mut net);
        writeln!(out, "network {}", net.name)?;
        for v in &net.variables {
            writeln!(out, "  variable {} {} {:?}", v.name, v.kind.as_str(), v.shape)?;
        }
        for f in &net.functions {
            let shape_of = |n: &String| net.variable(n).map(|v| v.shape.clone());
            let ins: Option<Vec<Vec<usize>>> = f.inputs.iter().map(shape_of).collect();
            let out_shape = f.outputs.first().and_then(shape_of);
            let macs = match (Function::from_parts(&f.kind, f.args.clone()), ins, &out_shape) {
                (Ok((func, _)), Some(ins), Some(o)) => {
                    let refs: Vec<&[usize]> = ins.iter().map(Vec::as_slice).collect();
                    Some(func.multiply_adds(&refs, o))
                }
                _ => None,
            };
            total_macs += macs.unwrap_or(0);
            writeln!(
                out,
                "  function {} {} {} -> {} {} macs={}",
                f.name,
                f.kind,
                f.inputs.join(","),
                f.outputs.join(","),
                out_shape.map(|s| format!("{s:?}")).unwrap_or_else(|| "?".into()),
                macs.map(|m| m.to_string()).unwrap_or_else(|| "?".into())
            )?;
        }
    }
    let count: usize = model
        .parameters
        .iter()
        .map(|p| p.shape().iter().product::<usize>())
        .sum();
    writeln!(out, "parameters {} arrays {} values", model.parameters.len(), count)?;
    writeln!(out, "multiply-adds {total_macs}")?;
    Ok(EXIT_OK)
}
