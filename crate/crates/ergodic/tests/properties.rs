//! Property tests for the spec-level invariants that hold across the input
//! space rather than at hand-picked points.

use ergodic::datastore::Dataset;
use ergodic::dynsys::{sample_environments, SystemSpec};
use ergodic::losses::{sinkhorn_divergence, SinkhornConfig};
use ergodic::metrics::histogram_error;
use ergodic::tensor::Tensor;
use proptest::prelude::*;

fn finite_samples(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |mut data| {
        // Break exact ties: duplicated sample rows are measure-zero for the
        // continuous statistics this loss consumes, and they degenerate the
        // transport dual.
        for (i, v) in data.iter_mut().enumerate() {
            *v += (i as f64 + 1.0) * 1.3e-3;
        }
        Tensor::from_vec(&[rows, cols], data)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn histogram_error_stays_in_total_variation_range(
        a in finite_samples(40, 2),
        b in finite_samples(40, 2),
    ) {
        let err = histogram_error(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&err), "error {err}");
        prop_assert!(histogram_error(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn sinkhorn_divergence_is_symmetric_and_nonnegative(
        a in finite_samples(5, 2),
        b in finite_samples(5, 2),
    ) {
        // Scale the regularization to the data so arbitrary sample ranges
        // converge. Duplicate sample rows make the dual degenerate and the
        // marginal residual tails off sublinearly; the divergence value is
        // still second order in that residual, so symmetry holds tightly on
        // converged instances and to solver precision otherwise.
        let gamma = 0.05 * ergodic::losses::median_cost(&a, &b).unwrap().max(1.0);
        let cfg = SinkhornConfig {
            gamma,
            max_iterations: 50_000,
            tolerance: 1e-10,
            alpha: 1.0,
        };
        let (xy, rep) = sinkhorn_divergence(&a, &b, &cfg).unwrap();
        let (yx, _) = sinkhorn_divergence(&b, &a, &cfg).unwrap();
        let scale = xy.abs().max(yx.abs()).max(1.0);
        let tol = if rep.converged { 1e-8 } else { 1e-5 };
        prop_assert!((xy - yx).abs() / scale < tol, "{xy} vs {yx}");
        prop_assert!(xy >= -1e-6, "negative divergence {xy}");
    }

    #[test]
    fn sampled_windows_always_fit_their_trajectory(
        k in 1usize..20,
        batch in 1usize..12,
        seed in 0u64..500,
    ) {
        let spec = SystemSpec::lorenz96(6, 0.05, 2);
        let envs = sample_environments(3, (10.0, 12.0), 5).unwrap();
        let ds = Dataset::generate(&spec, &envs, 20, 0.1, (10.0, 12.0), 5).unwrap();
        if k <= ds.t_len {
            for w in ds.sample_windows(k, batch, seed, None).unwrap() {
                prop_assert!(w.start + w.k <= ds.t_len);
                let frames = ds.window_frames(&w);
                prop_assert_eq!(frames.shape(), &[k + 1, 6]);
            }
        } else {
            prop_assert!(ds.sample_windows(k, batch, seed, None).is_err());
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_exact(
        n_envs in 1usize..4,
        t_len in 4usize..16,
        r in prop_oneof![Just(0.0), 0.05f64..0.4],
        seed in 0u64..100,
    ) {
        let spec = SystemSpec::lorenz96(5, 0.05, 2);
        let envs = sample_environments(n_envs, (10.0, 14.0), seed).unwrap();
        let ds = Dataset::generate(&spec, &envs, t_len, r, (10.0, 14.0), seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        for (x, y) in loaded.trajectories().iter().zip(ds.trajectories()) {
            prop_assert_eq!(x, y);
        }
    }
}
