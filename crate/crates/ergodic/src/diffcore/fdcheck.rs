//! Central finite-difference gradient verification.
//!
//! This oracle only ever calls the forward pass, so it stays independent of
//! the backward implementation it is used to check.

use super::{DiffArray, Tape};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum relative error between analytic gradients and central finite
/// differences over `probes` randomly chosen coordinates.
///
/// The step is `1e-6` scaled by the coordinate magnitude. A central
/// difference of an objective of magnitude `|f|` carries roundoff noise of
/// roughly `|f| * eps / h`, so coordinates whose gradients sit below
/// `(1 + |f|) * 1e-5` cannot be certified at that resolution and are
/// skipped; at least a quarter of the probes must be informative or the
/// check panics.
pub fn max_rel_error<F>(f: F, inputs: &[Tensor], probes: usize, seed: u64) -> f64
where
    F: Fn(&Tape, &[DiffArray]) -> DiffArray,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<DiffArray> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        f(&tape, &vars).item()
    };

    // Analytic gradients in one reverse pass.
    let tape = Tape::new();
    let vars: Vec<DiffArray> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars);
    let f0 = out.item();
    let grads = tape.backward(&out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(&v.shape()))
        })
        .collect();

    let floor = (1.0 + f0.abs()) * 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut informative = 0;
    for _ in 0..probes {
        let which = rng.random_range(0..inputs.len());
        let coord = rng.random_range(0..inputs[which].len());
        let x = inputs[which].data()[coord];
        let h = 1e-6 * (1.0 + x.abs());

        let mut plus = inputs.to_vec();
        plus[which].data_mut()[coord] = x + h;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[coord] = x - h;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);

        let a = analytic[which].data()[coord];
        let denom = a.abs().max(numeric.abs());
        if denom < floor {
            continue;
        }
        informative += 1;
        max_err = max_err.max((a - numeric).abs() / denom);
    }
    assert!(
        informative * 4 >= probes,
        "finite-difference check under-determined: {informative}/{probes} informative probes"
    );
    max_err
}
