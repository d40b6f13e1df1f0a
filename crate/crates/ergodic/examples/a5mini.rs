// mini ordering probe: 20 envs, 100 epochs, all three objectives, then eval
use ergodic::cli::config::*;
use ergodic::cli::train::train_emulator;
use ergodic::datastore::Dataset;
use ergodic::dynsys::{sample_environments, SystemSpec};
use ergodic::encoder::{train_encoder, EncoderTrainConfig, TemperatureSchedule};
use ergodic::losses::StatSpec;
use ergodic::metrics::{evaluate_model, EvalConfig, EvalModel};

fn base_toml(objective: &str, epochs: usize, window_k: usize) -> String {
    format!(r#"
[system]
kind = "lorenz96"
dim = 40
dt = 0.1

[environments]
count = 20
range = [10.0, 18.0]
seed = 7

[noise]
r = 0.3

[dataset]
path = "/tmp/unused"
t_len = 2000

[model]
width = 64
blocks = 4
modes = 16

[training]
objective = "{objective}"
epochs = {epochs}
batch = 6
window_k = {window_k}
eval_interval = 25
val_windows = 12
seed = 1

[loss]
alpha = 0.01
gamma = 0.02
lambda = 0.8
subsample_cap = 160
max_iterations = 600
tolerance = 1e-3

[encoder]
path = "/tmp/a5mini-encoder"

[evaluation]
horizon = 1500

[output]
dir = "/tmp/unused-out"
"#)
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let spec = SystemSpec::lorenz96(40, 0.1, 50);
    let envs = sample_environments(20, (10.0, 18.0), 7).unwrap();
    let ds = Dataset::generate(&spec, &envs, 2000, 0.3, (10.0, 18.0), 7).unwrap();

    let mut enc_cfg = EncoderTrainConfig::for_dataset(&ds, 200, 5);
    enc_cfg.crop_k = 99;
    let (encoder, _) = train_encoder(&ds, &TemperatureSchedule::standard(200), &enc_cfg).unwrap();
    encoder.save(std::path::Path::new("/tmp/a5mini-encoder")).unwrap();
    println!("encoder done");

    let eval_cfg = EvalConfig {
        horizon: 1500,
        rmse_horizon: 1,
        rmse_windows: 16,
        stat_spec: StatSpec { kind: ergodic::dynsys::SystemKind::Lorenz96, dt: 0.1, domain_length: 0.0 },
    };
    for (obj, k) in [("rmse", 19), ("sinkhorn_rmse", 19), ("feature_rmse", 99)] {
        let cfg: ExperimentConfig = toml::from_str(&base_toml(obj, epochs, k)).unwrap();
        let t = std::time::Instant::now();
        let outcome = train_emulator(&ds, &cfg).unwrap();
        let report = evaluate_model(&EvalModel::Emulator(&outcome.best), &ds, &eval_cfg).unwrap();
        println!(
            "{obj}: hist {:.4} spec {:.3} rmse {:.4}  ({:.0}s, best epoch {})",
            report.aggregate("histogram_error").unwrap(),
            report.aggregate("energy_spectrum_error").unwrap(),
            report.aggregate("rmse").unwrap(),
            t.elapsed().as_secs_f64(),
            outcome.best_epoch,
        );
    }
}
