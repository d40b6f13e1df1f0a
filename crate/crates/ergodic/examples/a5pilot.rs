// pilot: does desk-scale training learn, and how fast per epoch?
use ergodic::cli::{config::*, train::train_emulator};
use ergodic::datastore::Dataset;
use ergodic::dynsys::{sample_environments, SystemSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let objective = args.get(1).map(|s| s.as_str()).unwrap_or("rmse");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let alpha: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let spec = SystemSpec::lorenz96(40, 0.1, 50);
    let envs = sample_environments(200, (10.0, 18.0), 7).unwrap();
    let t0 = std::time::Instant::now();
    let ds = Dataset::generate(&spec, &envs, 2000, 0.3, (10.0, 18.0), 7).unwrap();
    println!("dataset: {:.1}s", t0.elapsed().as_secs_f64());

    let toml_text = format!(r#"
[system]
kind = "lorenz96"
dim = 40
dt = 0.1

[environments]
count = 200
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
window_k = 19
eval_interval = 10
val_windows = 12
seed = 1

[loss]
alpha = {alpha}
gamma = 0.02
subsample_cap = 160
max_iterations = 600
tolerance = 1e-3

[evaluation]
horizon = 1500

[output]
dir = "/tmp/unused-out"
"#);
    let cfg: ExperimentConfig = toml::from_str(&toml_text).unwrap();
    let t1 = std::time::Instant::now();
    let outcome = train_emulator(&ds, &cfg).unwrap();
    let dt = t1.elapsed().as_secs_f64();
    for row in outcome.log.iter().filter(|r| r.val_rmse.is_some()) {
        println!("epoch {} train {:.4} val_rmse {:.4} val_struct {:?}", row.epoch, row.train_loss, row.val_rmse.unwrap(), row.val_struct);
    }
    println!("{objective}: {epochs} epochs in {dt:.1}s ({:.2} s/epoch), unconverged {}", dt / epochs as f64, outcome.unconverged_batches);
    // long-rollout evaluation of best and final checkpoints
    use ergodic::metrics::{evaluate_model, EvalConfig, EvalModel};
    use ergodic::losses::StatSpec;
    let eval_cfg = EvalConfig { horizon: 1500, rmse_horizon: 1, rmse_windows: 16,
        stat_spec: StatSpec { kind: ergodic::dynsys::SystemKind::Lorenz96, dt: 0.1, domain_length: 0.0 } };
    for (tag, model) in [("best", &outcome.best), ("final", &outcome.fin)] {
        let report = evaluate_model(&EvalModel::Emulator(model), &ds, &eval_cfg).unwrap();
        println!("EVAL {objective} alpha={alpha} {tag}: hist {:.4} spec {:.3} rmse {:.4}",
            report.aggregate("histogram_error").unwrap(),
            report.aggregate("energy_spectrum_error").unwrap(),
            report.aggregate("rmse").unwrap());
    }
    let _ = &outcome.fin;
    // rollout amplitude trace on one test env
    let test_idx = ds.indices_of(ergodic::datastore::Split::Test)[0];
    let traj = ds.get(test_idx);
    let clean = traj.clean();
    let (frames, div) = EvalModel::Emulator(&outcome.best).rollout_collect(clean.row(0), traj.env.phi, 1500).unwrap();
    let mut maxes = Vec::new();
    for f in (0..frames.rows()).step_by(150) {
        maxes.push(format!("{:.1}", frames.row(f).iter().fold(0.0f64, |a, v| a.max(v.abs()))));
    }
    println!("rollout max|u| every 150 steps: {} (diverged: {div:?})", maxes.join(" "));
}
// (eval appended by pilot driver)
