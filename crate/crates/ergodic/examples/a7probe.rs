// A7 probe v2: push trained all-20 top1 above 0.8
use ergodic::datastore::Dataset;
use ergodic::dynsys::{EnvironmentParam, SystemSpec};
use ergodic::encoder::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let crop: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let spec = SystemSpec::lorenz96(40, 0.1, 50);
    let centers = [10.0, 14.0, 18.0];
    let envs: Vec<EnvironmentParam> = (0..20u32).map(|i| EnvironmentParam {
        phi: centers[(i % 3) as usize] + ((i as f64 * 0.7369).sin()) * 1.9,
        env_id: i,
    }).collect();
    let ds = Dataset::generate(&spec, &envs, 6000, 0.0, (8.0, 20.0), 42).unwrap();
    let mut cfg = EncoderTrainConfig::for_dataset(&ds, epochs, 3);
    cfg.crop_k = crop;
    cfg.batch = batch;
    cfg.eval_interval = 100;
    cfg.embed_dim = 48;
    let t0 = std::time::Instant::now();
    let tau_const = args.get(4).map(|s| s == "const").unwrap_or(false);
    let schedule = if tau_const {
        TemperatureSchedule { tau_start: 0.3, tau_end: 0.3, warmup_epochs: epochs, total_epochs: epochs }
    } else {
        TemperatureSchedule::standard(epochs)
    };
    let (model, _) = train_encoder(&ds, &schedule, &cfg).unwrap();
    let pool: Vec<usize> = (0..20).collect();
    let mut total = 0.0;
    for b in 0..10u64 {
        let (q, c) = build_eval_pairs(&ds, &pool, crop, 500 + b);
        total += top1_accuracy(&model, &q, &c).unwrap();
    }
    println!("crop={crop} epochs={epochs} batch={batch}: all-20 top1 {:.3} ({:.0}s)", total / 10.0, t0.elapsed().as_secs_f64());
}
