// A4 oracle probe: L96 r=0.1, 1500 steps
use ergodic::dynsys::{SystemSpec, initial_condition, simulate, add_noise};
use ergodic::losses::{StatSpec, summary_stats_tensor};
use ergodic::metrics::{histogram_error};
use ergodic::losses::rmse_value;

fn main() {
    let spec = SystemSpec::lorenz96(40, 0.1, 50);
    for phi in [10.0, 14.0, 18.0] {
        for seed in [3u64, 5, 9] {
            let u_init = initial_condition(&spec, seed);
            let spun = simulate(&spec, phi, &u_init, 50).unwrap();
            let u0: Vec<f64> = spun.row(spun.rows()-1).to_vec();
            let reference = simulate(&spec, phi, &u0, 1500).unwrap();
            let sigma = reference.std();
            // perturb
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed+1000);
            let r = 0.1;
            let pert_ic: Vec<f64> = u0.iter().map(|v| v + r*sigma*rng.sample::<f64,_>(rand_distr::StandardNormal)).collect();
            let pert = simulate(&spec, phi, &pert_ic, 1500).unwrap();
            let ss = StatSpec { kind: ergodic::dynsys::SystemKind::Lorenz96, dt: 0.1, domain_length: 0.0 };
            let ref_stats = summary_stats_tensor(&reference, &ss).unwrap();
            let pert_stats = summary_stats_tensor(&pert, &ss).unwrap();
            let rmse = rmse_value(&reference, &pert).unwrap();
            let hist = histogram_error(&ref_stats, &pert_stats).unwrap();
            // saturation: independent run
            let other_ic = initial_condition(&spec, seed+77);
            let other = simulate(&spec, phi, &{ let s2 = simulate(&spec, phi, &other_ic, 50).unwrap(); s2.row(50).to_vec() }, 1500).unwrap();
            let sat = rmse_value(&reference, &other).unwrap();
            println!("phi={phi} seed={seed}: rmse={rmse:.3} hist={hist:.4} sat_rmse={sat:.3}");
        }
    }
}
