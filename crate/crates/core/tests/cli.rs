use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use nanonnl::nnp::{self, NnpModel};
use nanonnl::{models, ParameterRegistry, Variable};
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn nanonnl(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nanonnl"));
    cmd.current_dir(dir).args(args).env_remove("NANONNL_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,iteration,train_loss,train_error,val_error,loss_scale")
    );
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn train_mlp(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, Vec<Vec<String>>) {
    let model = format!("{name}.nnp");
    let mut args = vec!["train", "--seed", "5", "--epochs", "4", "--out", &model];
    args.extend_from_slice(extra);
    let run = nanonnl(dir, &args, &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    (dir.join(&model), rows(&dir.join(format!("{name}.csv"))))
}

fn lenet_model(batch: usize) -> NnpModel {
    let registry = ParameterRegistry::new(2);
    registry.make_current();
    let x = Variable::new(&[batch, 1, 28, 28], false);
    let y = models::lenet(&x).unwrap();
    nnp::export_model("lenet", &[("x", &x)], &[("y", &y)], &registry).unwrap()
}

/// Writes an archive member by member, bypassing the validating writer.
fn write_raw_nnp(path: &Path, network_text: &str) {
    let mut zip = zip::ZipWriter::new(std::fs::File::create(path).unwrap());
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
    for (name, bytes) in [
        ("nnp_version.txt", b"0.1\n".to_vec()),
        ("network.nntxt", network_text.as_bytes().to_vec()),
        ("parameter.bin", nnp::write_parameters(&[])),
    ] {
        zip.start_file(name, opts).unwrap();
        zip.write_all(&bytes).unwrap();
    }
    zip.finish().unwrap();
}

#[test]
fn monitor_rows_are_ordered_and_scale_only_filled_in_mixed() {
    let dir = TempDir::new().unwrap();
    let (_, plain) = train_mlp(dir.path(), "plain", &[]);
    let (_, mixed) = train_mlp(dir.path(), "mixed", &["--precision", "mixed"]);
    for log in [&plain, &mixed] {
        let keys: Vec<(u64, u64)> = log
            .iter()
            .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{keys:?}");
    }
    assert!(plain.iter().all(|r| r[5].is_empty()));
    assert!(mixed.iter().all(|r| r[5].parse::<f32>().unwrap() > 0.0));
}

#[test]
fn worker_count_does_not_change_the_losses() {
    let dir = TempDir::new().unwrap();
    let (_, one) = train_mlp(dir.path(), "one", &["--workers", "1"]);
    let (_, two) = train_mlp(dir.path(), "two", &["--workers", "2"]);
    let loss = |log: &Vec<Vec<String>>| log.last().unwrap()[2].parse::<f64>().unwrap();
    let (a, b) = (loss(&one), loss(&two));
    assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()), "{a} vs {b}");
}

#[test]
fn eval_reproduces_the_last_validation_error() {
    let dir = TempDir::new().unwrap();
    let (model, log) = train_mlp(dir.path(), "m", &[]);
    let run = nanonnl(dir.path(), &["eval", model.to_str().unwrap()], &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let error = run
        .stdout
        .split_whitespace()
        .next()
        .unwrap()
        .strip_prefix("error=")
        .unwrap();
    assert_eq!(error, log.last().unwrap()[4]);
}

#[test]
fn eval_rejects_mismatched_data() {
    let dir = TempDir::new().unwrap();
    let (model, _) = train_mlp(dir.path(), "m", &[]);
    let m = model.to_str().unwrap();
    let run = nanonnl(
        dir.path(),
        &["eval", m, "--data", "synthetic-images:classes=2,samples=10"],
        &[],
    );
    assert_eq!(run.code, 3, "{}", run.stderr);
    let run = nanonnl(
        dir.path(),
        &[
            "eval",
            m,
            "--data",
            "synthetic-gaussians:classes=5,samples=10,features=2",
        ],
        &[],
    );
    assert_eq!(run.code, 3, "{}", run.stderr);
}

#[test]
fn untrained_ten_class_model_is_at_chance() {
    let dir = TempDir::new().unwrap();
    let registry = ParameterRegistry::new(9);
    registry.make_current();
    let x = Variable::new(&[4, 6], false);
    let y = models::mlp(&x, 16, 10).unwrap();
    let path = dir.path().join("fresh.nnp");
    nnp::save_nnp(
        &nnp::export_model("main", &[("x", &x)], &[("y", &y)], &registry).unwrap(),
        &path,
    )
    .unwrap();
    // balanced labels drawn independently of the features, so any fixed classifier sits at 90%
    let mut rng = nanonnl::tensor::Rng::new(10);
    let mut csv = String::new();
    for i in 0..2000 {
        let row: Vec<String> = (0..6).map(|_| format!("{:.4}", rng.normal())).collect();
        csv.push_str(&format!("{},{}\n", i % 10, row.join(",")));
    }
    std::fs::write(dir.path().join("noise.csv"), csv).unwrap();
    let data = "csv:path=noise.csv,classes=10,shape=6";
    let run = nanonnl(dir.path(), &["eval", "fresh.nnp", "--data", data], &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let error: f64 = run.stdout.split_whitespace().next().unwrap()[6..].parse().unwrap();
    assert!((0.85..=0.95).contains(&error), "error {error}");
}

#[test]
fn convert_is_idempotent_and_notes_fixes() {
    let dir = TempDir::new().unwrap();
    let mut model = lenet_model(2);
    nnp::save_nnp(&model, dir.path().join("a.nnp")).unwrap();
    let run = nanonnl(dir.path(), &["convert", "a.nnp", "b.nnp", "--normalize"], &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(
        std::fs::read(dir.path().join("a.nnp")).unwrap(),
        std::fs::read(dir.path().join("b.nnp")).unwrap()
    );

    model.executors.clear();
    let text = nnp::write_network_text(&model);
    assert!(!text.contains("executor"));
    write_raw_nnp(&dir.path().join("noexec.nnp"), &text);
    let run = nanonnl(dir.path(), &["convert", "noexec.nnp", "fixed.nnp"], &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stderr.contains("added executor"), "{}", run.stderr);
    assert!(!nnp::load_nnp(dir.path().join("fixed.nnp"))
        .unwrap()
        .executors
        .is_empty());
}

#[test]
fn convert_refuses_cycles() {
    let dir = TempDir::new().unwrap();
    let text = "\
config global default_context=static:float:host
network main
variable a buffer 2x3
variable b buffer 2x3
function f ReLU inputs=a outputs=b
function g ReLU inputs=b outputs=a
";
    write_raw_nnp(&dir.path().join("cyclic.nnp"), text);
    let run = nanonnl(dir.path(), &["convert", "cyclic.nnp", "out.nnp"], &[]);
    assert_eq!(run.code, 5, "{}", run.stderr);
    assert!(!dir.path().join("out.nnp").exists());
}

#[test]
fn query_exit_codes() {
    let dir = TempDir::new().unwrap();
    nnp::save_nnp(&lenet_model(1), dir.path().join("lenet.nnp")).unwrap();
    let run = nanonnl(dir.path(), &["query", "lenet.nnp"], &[]);
    assert_eq!((run.code, run.stdout.as_str()), (0, ""));

    std::fs::write(
        dir.path().join("kinds.txt"),
        "Affine\nReLU\nMaxPooling\nSoftmaxCrossEntropy\n",
    )
    .unwrap();
    let run = nanonnl(dir.path(), &["query", "lenet.nnp", "--supported", "kinds.txt"], &[]);
    assert_eq!(run.code, 1);
    assert_eq!(run.stdout.lines().count(), 2, "{}", run.stdout);

    std::fs::write(dir.path().join("junk.nnp"), b"not a zip").unwrap();
    assert_eq!(nanonnl(dir.path(), &["query", "junk.nnp"], &[]).code, 2);
    assert_eq!(nanonnl(dir.path(), &["query", "missing.nnp"], &[]).code, 2);
}

#[test]
fn dump_reports_counts_without_touching_the_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("lenet.nnp");
    nnp::save_nnp(&lenet_model(1), &path).unwrap();
    let before = std::fs::read(&path).unwrap();
    let run = nanonnl(dir.path(), &["dump", "lenet.nnp"], &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let conv = |o: usize, c: usize, k: usize, h: usize| o * c * k * k * h * h;
    let macs = conv(16, 1, 5, 24) + conv(16, 16, 5, 8) + 256 * 50 + 50 * 10;
    assert!(
        run.stdout.contains("parameters 8 arrays 20192 values"),
        "{}",
        run.stdout
    );
    assert!(run.stdout.contains(&format!("multiply-adds {macs}")), "{}", run.stdout);

    let text = "config global default_context=static:float:host\nnetwork main\nvariable x buffer 2x3\nvariable y buffer 2x3\nfunction r ReLU inputs=x outputs=y\n";
    write_raw_nnp(&dir.path().join("empty.nnp"), text);
    let run = nanonnl(dir.path(), &["dump", "empty.nnp"], &[]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("parameters 0 arrays 0 values"), "{}", run.stdout);
}

#[test]
fn seed_precedence() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let train = |out: &str, args: &[&str], env: &[(&str, &str)]| {
        let mut all = vec!["train", "--epochs", "1", "--out", out];
        all.extend_from_slice(args);
        let run = nanonnl(d, &all, env);
        assert_eq!(run.code, 0, "{}", run.stderr);
        std::fs::read(d.join(out)).unwrap()
    };
    let env3 = train("env3.nnp", &[], &[("NANONNL_SEED", "3")]);
    let flag3 = train("flag3.nnp", &["--seed", "3"], &[]);
    let both = train("both.nnp", &["--seed", "3"], &[("NANONNL_SEED", "4")]);
    let default = train("default.nnp", &[], &[]);
    assert_eq!(env3, flag3);
    assert_eq!(both, flag3);
    assert_ne!(default, flag3);
    std::fs::write(d.join("seed.cfg"), "seed=3\n").unwrap();
    let config = train("cfg.nnp", &["--config", "seed.cfg"], &[("NANONNL_SEED", "4")]);
    assert_eq!(config, flag3);
    assert_eq!(
        nanonnl(d, &["train", "--epochs", "1"], &[("NANONNL_SEED", "abc")]).code,
        2
    );
}

#[test]
fn train_error_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "epochs=0\n").unwrap();
    assert_eq!(nanonnl(d, &["train", "--config", "bad.cfg"], &[]).code, 2);
    std::fs::write(d.join("odd.cfg"), "colour=red\n").unwrap();
    assert_eq!(nanonnl(d, &["train", "--config", "odd.cfg"], &[]).code, 2);
    assert_eq!(nanonnl(d, &["train", "--precision", "f64"], &[]).code, 2);
    assert_eq!(
        nanonnl(d, &["train", "--data", "csv:path=nowhere.csv,classes=2,shape=2"], &[]).code,
        3
    );
    assert_eq!(nanonnl(d, &["train", "--config", "absent.cfg"], &[]).code, 2);
    std::fs::write(d.join("huge.cfg"), "lr=1e38\n").unwrap();
    let run = nanonnl(d, &["train", "--epochs", "4", "--config", "huge.cfg"], &[]);
    assert_eq!(run.code, 4, "{}", run.stderr);
}
