//! Pipeline orchestration behind the `ergodic` binary: dataset generation,
//! encoder and emulator training, evaluation, sweeps, and the noise
//! robustness study, all driven by one declarative TOML config.

pub mod config;
pub mod train;

pub use config::{ExperimentConfig, ObjectiveKind};
pub use train::{train_emulator, TrainOutcome};

use crate::datastore::Dataset;
use crate::dynsys::{derive_seed, sample_environments};
use crate::emulator::EmulatorModel;
use crate::encoder::{train_encoder, EncoderTrainConfig, TemperatureSchedule};
use crate::error::{Error, Result};
use crate::losses::StatSpec;
use crate::metrics::{
    evaluate_model, noise_robustness_sweep, write_robustness_csv, EvalConfig, EvalModel,
    EvalReport, Histogram,
};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Refuse to reuse a non-empty directory unless forced; run outputs are
/// append-only otherwise.
pub fn claim_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} already has contents; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Generate the dataset described by the config and persist it.
pub fn cmd_generate(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    cfg.validate()?;
    let spec = cfg.system.spec();
    let range = (cfg.environments.range[0], cfg.environments.range[1]);
    let envs = sample_environments(cfg.environments.count, range, cfg.environments.seed)?;
    claim_output_dir(&cfg.dataset.path, force)?;
    let dataset = Dataset::generate(
        &spec,
        &envs,
        cfg.dataset.t_len,
        cfg.noise.r,
        range,
        cfg.environments.seed,
    )?;
    dataset.save(&cfg.dataset.path)?;
    println!(
        "generated {} environments of {} ({} frames x {} dims each), r = {}, seed = {} -> {}",
        dataset.len(),
        spec.kind,
        cfg.dataset.t_len + 1,
        spec.dim,
        cfg.noise.r,
        cfg.environments.seed,
        cfg.dataset.path.display()
    );
    Ok(())
}

/// Train the contrastive encoder and store its checkpoint plus log.
pub fn cmd_train_encoder(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    cfg.validate()?;
    let section = cfg
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [encoder] section".into()))?;
    let dataset = Dataset::load(&cfg.dataset.path)?;
    let mut train_cfg = EncoderTrainConfig::for_dataset(&dataset, section.epochs, section.seed);
    train_cfg.batch = section.batch;
    if section.crop_k > 0 {
        train_cfg.crop_k = section.crop_k;
    }
    train_cfg.embed_dim = section.embed_dim;
    train_cfg.channels = section.channels.clone();
    train_cfg.learning_rate = section.learning_rate;
    train_cfg.weight_decay = section.weight_decay;
    train_cfg.eval_interval = section.eval_interval;
    let schedule = TemperatureSchedule::standard(section.epochs);

    claim_output_dir(&section.path, force)?;
    let (model, log) = train_encoder(&dataset, &schedule, &train_cfg)?;
    model.save(&section.path)?;
    let mut file = fs::File::create(section.path.join("log.csv"))?;
    writeln!(file, "epoch,tau,loss,top1")?;
    for row in &log {
        writeln!(
            file,
            "{},{},{},{}",
            row.epoch,
            row.tau,
            row.loss,
            row.top1.map(|v| v.to_string()).unwrap_or_default()
        )?;
    }
    let last_top1 = log.iter().rev().find_map(|r| r.top1);
    println!(
        "trained encoder for {} epochs (crop K = {}), final top-1 {:.3} -> {}",
        section.epochs,
        train_cfg.crop_k,
        last_top1.unwrap_or(f64::NAN),
        section.path.display()
    );
    Ok(())
}

/// Summary of a finished training run, written alongside the checkpoints.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub objective: String,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub final_val_rmse: f64,
    pub final_val_struct: Option<f64>,
    pub unconverged_batches: usize,
}

/// Train the emulator with the configured objective; writes the config
/// snapshot, per-epoch log, best and final checkpoints, and a summary.
pub fn cmd_train(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.dataset.path)?;
    let out = cfg.output.dir.clone();
    claim_output_dir(&out, force)?;
    cfg.save(&out.join("config.toml"))?;

    let outcome = train_emulator(&dataset, cfg)?;
    outcome.best.save(&out.join("checkpoint_best"))?;
    outcome.fin.save(&out.join("checkpoint_final"))?;
    let mut log_file = fs::File::create(out.join("log.csv"))?;
    train::write_train_log(&outcome.log, &mut log_file)?;

    let last = outcome.log.last().expect("training ran at least one epoch");
    let summary = RunSummary {
        objective: cfg.training.objective.to_string(),
        alpha: cfg.loss.alpha,
        lambda: cfg.loss.lambda,
        seed: cfg.training.seed,
        best_epoch: outcome.best_epoch,
        final_train_loss: last.train_loss,
        final_val_rmse: last.val_rmse.unwrap_or(f64::NAN),
        final_val_struct: last.val_struct,
        unconverged_batches: outcome.unconverged_batches,
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    println!(
        "trained {} for {} epochs (best at {}), final val rMSE {:.4} -> {}",
        summary.objective,
        cfg.training.epochs,
        summary.best_epoch,
        summary.final_val_rmse,
        out.display()
    );
    if summary.unconverged_batches > 0 {
        eprintln!(
            "warning: {} batches hit the Sinkhorn iteration cap",
            summary.unconverged_batches
        );
    }
    Ok(out)
}

/// Which stepper the `eval` subcommand rolls out.
pub enum EvalTarget {
    Checkpoint(PathBuf),
    GroundTruth,
    Zero,
}

/// Long-horizon evaluation over the test split: metric CSV plus the binned
/// statistics histograms for external plotting.
pub fn cmd_eval(cfg: &ExperimentConfig, target: &EvalTarget, out_path: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.dataset.path)?;
    let spec = dataset.spec;
    let loaded;
    let model = match target {
        EvalTarget::Checkpoint(path) => {
            loaded = EmulatorModel::load(path)?;
            EvalModel::Emulator(&loaded)
        }
        EvalTarget::GroundTruth => EvalModel::GroundTruth(spec),
        EvalTarget::Zero => EvalModel::Zero,
    };
    let eval_cfg = EvalConfig {
        horizon: cfg.evaluation.horizon_for(spec.kind).min(dataset.t_len),
        rmse_horizon: cfg.evaluation.rmse_horizon,
        rmse_windows: cfg.evaluation.rmse_windows,
        stat_spec: StatSpec::for_system(&spec),
    };
    let report = evaluate_model(&model, &dataset, &eval_cfg)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(out_path)?;
    report.write_csv(&mut file)?;

    write_histogram_export(&model, &dataset, &eval_cfg, out_path)?;
    for metric in ["histogram_error", "energy_spectrum_error", "rmse"] {
        println!(
            "{metric}: {:.6}",
            report.aggregate(metric).unwrap_or(f64::NAN)
        );
    }
    println!("report -> {}", out_path.display());
    Ok(report)
}

/// Binned reference-vs-model statistic histograms per test environment.
fn write_histogram_export(
    model: &EvalModel<'_>,
    dataset: &Dataset,
    cfg: &EvalConfig,
    report_path: &Path,
) -> Result<()> {
    let path = report_path.with_extension("histograms.csv");
    let mut file = fs::File::create(&path)?;
    writeln!(file, "env_id,channel,bin_lo,bin_hi,reference,model")?;
    for idx in dataset.indices_of(crate::datastore::Split::Test) {
        let traj = dataset.get(idx);
        let clean = traj.clean();
        let d = clean.cols();
        let reference = crate::tensor::Tensor::from_vec(
            &[cfg.horizon + 1, d],
            clean.data()[..(cfg.horizon + 1) * d].to_vec(),
        );
        let (frames, _) = model.rollout_collect(clean.row(0), traj.env.phi, cfg.horizon)?;
        let ref_stats = crate::losses::summary_stats_tensor(&reference, &cfg.stat_spec)?;
        let roll_stats = crate::losses::summary_stats_tensor(&frames, &cfg.stat_spec)?;
        let ref_hist = Histogram::from_reference(&ref_stats)?;
        let model_hist = ref_hist.rebin(&roll_stats)?;
        for (c, (lo, width)) in ref_hist.edges.iter().enumerate() {
            for b in 0..ref_hist.bins {
                writeln!(
                    file,
                    "{},{},{},{},{},{}",
                    traj.env.env_id,
                    c,
                    lo + b as f64 * width,
                    lo + (b + 1) as f64 * width,
                    ref_hist.frequencies[c][b],
                    model_hist.frequencies[c][b],
                )?;
            }
        }
    }
    Ok(())
}

/// One training run per lambda value (a `lambda = 0` baseline is always
/// included), each in its own run directory under the sweep root.
pub fn cmd_sweep(cfg: &ExperimentConfig, lambdas: &[f64], force: bool) -> Result<Vec<PathBuf>> {
    if cfg.training.objective != ObjectiveKind::FeatureRmse {
        return Err(Error::Config(
            "sweep varies lambda and needs the feature_rmse objective".into(),
        ));
    }
    let root = cfg.output.dir.clone();
    claim_output_dir(&root, force)?;
    let mut values: Vec<f64> = lambdas.to_vec();
    if !values.iter().any(|&l| l == 0.0) {
        values.insert(0, 0.0);
    }
    let mut dirs = Vec::with_capacity(values.len());
    for &lambda in &values {
        let mut run_cfg = cfg.clone();
        run_cfg.loss.lambda = lambda;
        run_cfg.output.dir = root.join(format!("lambda_{lambda}"));
        println!("sweep: training lambda = {lambda}");
        dirs.push(cmd_train(&run_cfg, force)?);
    }
    Ok(dirs)
}

/// Outcome of the lambda selection rule.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// False when no run stayed under the rMSE bar and the baseline was
    /// returned instead.
    pub feasible: bool,
}

/// Choose the sweep run with the lowest validation feature loss among those
/// whose validation rMSE stays within 110% of the `lambda = 0` baseline.
pub fn cmd_select_lambda(sweep_dir: &Path) -> Result<LambdaChoice> {
    let mut runs = Vec::new();
    for entry in fs::read_dir(sweep_dir)? {
        let path = entry?.path();
        let summary_path = path.join("summary.json");
        if summary_path.exists() {
            let summary: RunSummary = serde_json::from_slice(&fs::read(&summary_path)?)?;
            runs.push(summary);
        }
    }
    if runs.is_empty() {
        return Err(Error::Config(format!(
            "no run summaries under {}",
            sweep_dir.display()
        )));
    }
    runs.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    let baseline = runs
        .iter()
        .find(|r| r.lambda == 0.0)
        .ok_or_else(|| Error::Config("sweep has no lambda = 0 baseline run".into()))?;
    let bar = 1.10 * baseline.final_val_rmse;
    let feasible: Vec<&RunSummary> = runs
        .iter()
        .filter(|r| r.lambda > 0.0 && r.final_val_rmse <= bar && r.final_val_struct.is_some())
        .collect();
    let choice = feasible
        .iter()
        .min_by(|a, b| {
            a.final_val_struct
                .unwrap()
                .partial_cmp(&b.final_val_struct.unwrap())
                .unwrap()
        })
        .map(|r| LambdaChoice {
            lambda: r.lambda,
            feasible: true,
        })
        .unwrap_or(LambdaChoice {
            lambda: 0.0,
            feasible: false,
        });
    if choice.feasible {
        println!(
            "selected lambda = {} (validation rMSE bar {:.4})",
            choice.lambda, bar
        );
    } else {
        eprintln!("warning: every run exceeded the rMSE bar; falling back to lambda = 0");
        println!("selected lambda = 0");
    }
    Ok(choice)
}

/// The noise-robustness study: ground-truth reruns under perturbed initial
/// conditions and measurement noise, written as CSV.
pub fn cmd_robustness(
    cfg: &ExperimentConfig,
    r_grid: &[f64],
    out_path: &Path,
) -> Result<()> {
    cfg.validate()?;
    let spec = cfg.system.spec();
    let phi = 0.5 * (cfg.environments.range[0] + cfg.environments.range[1]);
    let horizon = cfg.evaluation.horizon_for(spec.kind);
    let rows = noise_robustness_sweep(
        &spec,
        phi,
        r_grid,
        horizon,
        derive_seed(cfg.environments.seed, 0xf16),
    )?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(out_path)?;
    write_robustness_csv(&rows, &mut file)?;
    println!(
        "robustness sweep over {} noise scales at phi = {phi} -> {}",
        r_grid.len(),
        out_path.display()
    );
    Ok(())
}
