// pilot: feature-objective arm with encoder training
use ergodic::cli::{config::*, train::train_emulator};
use ergodic::datastore::Dataset;
use ergodic::dynsys::{sample_environments, SystemSpec};
use ergodic::encoder::{train_encoder, EncoderTrainConfig, TemperatureSchedule};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let spec = SystemSpec::lorenz96(40, 0.1, 50);
    let envs = sample_environments(20, (10.0, 18.0), 7).unwrap();
    let ds = Dataset::generate(&spec, &envs, 2000, 0.3, (10.0, 18.0), 7).unwrap();

    let t0 = std::time::Instant::now();
    let mut enc_cfg = EncoderTrainConfig::for_dataset(&ds, 200, 5);
    enc_cfg.crop_k = 99;
    enc_cfg.batch = 8;
    let (encoder, log) = train_encoder(&ds, &TemperatureSchedule::standard(200), &enc_cfg).unwrap();
    let top1 = log.iter().rev().find_map(|r| r.top1).unwrap();
    println!("encoder: {:.1}s, top1 {:.3}", t0.elapsed().as_secs_f64(), top1);
    encoder.save(std::path::Path::new("/tmp/a5pilot-encoder")).unwrap();

    let toml_text = format!(r#"
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
objective = "feature_rmse"
epochs = {epochs}
batch = 6
window_k = 99
eval_interval = 10
val_windows = 12
seed = 1

[loss]
lambda = 0.8

[encoder]
path = "/tmp/a5pilot-encoder"

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
        println!("epoch {} train {:.4} val_rmse {:.4} val_feat {:?}", row.epoch, row.train_loss, row.val_rmse.unwrap(), row.val_struct);
    }
    println!("feature: {epochs} epochs in {dt:.1}s ({:.2} s/epoch)", dt / epochs as f64);
}
