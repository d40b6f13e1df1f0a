//! End-to-end checks of the `ergodic` binary: pipeline wiring, exit codes,
//! overwrite protection, and bit-level reproducibility of every subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ergodic"))
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        r#"
[system]
kind = "lorenz96"
dim = 8
dt = 0.05
spinup_steps = 10

[environments]
count = 10
range = [10.0, 18.0]
seed = 7

[noise]
r = 0.2

[dataset]
path = "{data}"
t_len = 60

[model]
width = 8
blocks = 2
modes = 4

[training]
objective = "rmse"
epochs = 3
batch = 3
window_k = 5
eval_interval = 2
val_windows = 4
seed = 11

[loss]
subsample_cap = 40
max_iterations = 200
tolerance = 1e-3

[encoder]
path = "{encoder}"
epochs = 3
batch = 4
crop_k = 5
embed_dim = 6
channels = [3, 4, 5]
eval_interval = 2

[evaluation]
horizon = 50
rmse_windows = 4

[output]
dir = "{out}"
"#,
        data = dir.join("data").display(),
        encoder = dir.join("encoder").display(),
        out = dir.join("run").display(),
    );
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn ergodic");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn generate_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    run_ok(bin().args(["generate", "--config"]).arg(&config));
    let first = dir_bytes(&tmp.path().join("data"));
    run_ok(bin().args(["generate", "--force", "--config"]).arg(&config));
    let second = dir_bytes(&tmp.path().join("data"));
    assert_eq!(first, second);
}

#[test]
fn invalid_range_rejected_before_any_io() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("range = [10.0, 18.0]", "range = [18.0, 10.0]");
    fs::write(&config, text).unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "config errors exit with 2");
    assert!(!tmp.path().join("data").exists(), "no dataset dir created");
}

#[test]
fn full_pipeline_runs_and_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    run_ok(bin().args(["generate", "--config"]).arg(&config));
    run_ok(bin().args(["train-encoder", "--config"]).arg(&config));
    run_ok(bin().args(["train", "--config"]).arg(&config));

    let run_dir = tmp.path().join("run");
    for name in ["config.toml", "log.csv", "summary.json"] {
        assert!(run_dir.join(name).exists(), "{name} missing");
    }
    let log_a = fs::read(run_dir.join("log.csv")).unwrap();
    let params_a = fs::read(run_dir.join("checkpoint_best/params.bin")).unwrap();

    // Re-running without --force must refuse to clobber the run directory.
    let refused = bin()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(refused.status.code(), Some(2));

    run_ok(bin().args(["train", "--force", "--config"]).arg(&config));
    assert_eq!(log_a, fs::read(run_dir.join("log.csv")).unwrap());
    assert_eq!(
        params_a,
        fs::read(run_dir.join("checkpoint_best/params.bin")).unwrap()
    );

    // One-row-per-epoch log with a header.
    let log_text = String::from_utf8(log_a).unwrap();
    assert_eq!(log_text.lines().count(), 1 + 3);
    assert!(log_text.starts_with("epoch,train_loss,val_rmse"));
}

#[test]
fn eval_supports_checkpoint_ground_truth_and_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    run_ok(bin().args(["generate", "--config"]).arg(&config));
    run_ok(bin().args(["train", "--config"]).arg(&config));

    let report = tmp.path().join("eval.csv");
    run_ok(
        bin()
            .args(["eval", "--config"])
            .arg(&config)
            .arg("--checkpoint")
            .arg(tmp.path().join("run/checkpoint_best"))
            .arg("--out")
            .arg(&report),
    );
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("env_id,metric,value"));
    assert!(text.contains("-1,histogram_error"));
    assert!(report.with_extension("histograms.csv").exists());

    // Ground truth scores (near) zero everywhere; determinism across reruns.
    let gt = tmp.path().join("gt.csv");
    run_ok(
        bin()
            .args(["eval", "--ground-truth", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&gt),
    );
    let gt_text = fs::read_to_string(&gt).unwrap();
    for line in gt_text.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(value.abs() < 1e-6, "ground truth metric nonzero: {line}");
    }
    run_ok(
        bin()
            .args(["eval", "--ground-truth", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join("gt2.csv")),
    );
    assert_eq!(
        fs::read(&gt).unwrap(),
        fs::read(tmp.path().join("gt2.csv")).unwrap()
    );

    // Zero model: rMSE exactly 1.
    let zero = tmp.path().join("zero.csv");
    run_ok(
        bin()
            .args(["eval", "--zero", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&zero),
    );
    let zero_text = fs::read_to_string(&zero).unwrap();
    let rmse_line = zero_text
        .lines()
        .find(|l| l.starts_with("-1,rmse"))
        .unwrap();
    let rmse: f64 = rmse_line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((rmse - 1.0).abs() < 1e-12);
}

#[test]
fn sweep_and_select_lambda_apply_the_validation_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    run_ok(bin().args(["generate", "--config"]).arg(&config));
    run_ok(bin().args(["train-encoder", "--config"]).arg(&config));

    // Sweep needs the feature objective.
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("objective = \"rmse\"", "objective = \"feature_rmse\"");
    fs::write(&config, text).unwrap();

    let out = run_ok(
        bin()
            .args(["sweep", "--lambdas", "0.4", "--config"])
            .arg(&config),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lambda = 0"), "baseline run missing");
    let sweep_dir = tmp.path().join("run");
    assert!(sweep_dir.join("lambda_0").exists());
    assert!(sweep_dir.join("lambda_0.4").exists());

    let out = run_ok(bin().args(["select-lambda", "--sweep-dir"]).arg(&sweep_dir));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected lambda ="), "got: {stdout}");
}

#[test]
fn select_lambda_falls_back_when_nothing_is_feasible() {
    // Synthetic sweep summaries: every positive-lambda run breaks the bar.
    let tmp = tempfile::tempdir().unwrap();
    for (lambda, rmse, feat) in [(0.0, 0.10, None), (0.4, 0.50, Some(1.0)), (0.8, 0.40, Some(0.5))] {
        let dir = tmp.path().join(format!("lambda_{lambda}"));
        fs::create_dir_all(&dir).unwrap();
        let summary = serde_json::json!({
            "objective": "feature_rmse",
            "alpha": 0.0,
            "lambda": lambda,
            "seed": 1,
            "best_epoch": 0,
            "final_train_loss": 0.0,
            "final_val_rmse": rmse,
            "final_val_struct": feat,
            "unconverged_batches": 0,
        });
        fs::write(dir.join("summary.json"), summary.to_string()).unwrap();
    }
    let out = bin()
        .args(["select-lambda", "--sweep-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected lambda = 0"), "got: {stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn select_lambda_picks_lowest_feature_loss_under_the_bar() {
    // Feature loss dips until 0.8 then plateaus; rMSE stays under 110%.
    let tmp = tempfile::tempdir().unwrap();
    let rows = [
        (0.0, 0.100, None),
        (0.2, 0.102, Some(0.90)),
        (0.4, 0.104, Some(0.70)),
        (0.6, 0.105, Some(0.55)),
        (0.8, 0.107, Some(0.40)),
        (1.0, 0.109, Some(0.41)),
        (1.2, 0.125, Some(0.39)), // over the 0.110 bar
    ];
    for (lambda, rmse, feat) in rows {
        let dir = tmp.path().join(format!("lambda_{lambda}"));
        fs::create_dir_all(&dir).unwrap();
        let summary = serde_json::json!({
            "objective": "feature_rmse",
            "alpha": 0.0,
            "lambda": lambda,
            "seed": 1,
            "best_epoch": 0,
            "final_train_loss": 0.0,
            "final_val_rmse": rmse,
            "final_val_struct": feat,
            "unconverged_batches": 0,
        });
        fs::write(dir.join("summary.json"), summary.to_string()).unwrap();
    }
    let out = run_ok(bin().args(["select-lambda", "--sweep-dir"]).arg(tmp.path()));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected lambda = 0.8"), "got: {stdout}");
}

#[test]
fn robustness_emits_csv_rows_per_scale_and_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_path = tmp.path().join("rob.csv");
    run_ok(
        bin()
            .args(["robustness", "--r-grid", "0.0,0.1", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_path),
    );
    let text = fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("r,variant,metric,value"));
    // 2 scales x 2 variants x 3 metrics.
    assert_eq!(text.lines().count(), 1 + 12);
}
