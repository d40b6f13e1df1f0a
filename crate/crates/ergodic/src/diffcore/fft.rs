//! Thin wrappers over rustfft for the real-signal transforms used by the
//! spectral pieces of the crate.
//!
//! Convention: the forward transform is unnormalized, the inverse carries the
//! `1/d` factor. Real signals of even length `d` are represented in half
//! spectra of `K = d/2 + 1` complex modes.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unnormalized forward DFT.
pub fn dft(input: &[Complex64]) -> Vec<Complex64> {
    let mut buf = input.to_vec();
    plan(input.len(), false).process(&mut buf);
    buf
}

/// Unnormalized inverse DFT (no `1/d`).
pub fn idft_unnorm(input: &[Complex64]) -> Vec<Complex64> {
    let mut buf = input.to_vec();
    plan(input.len(), true).process(&mut buf);
    buf
}

/// Half spectrum (length `d/2 + 1`) of a real signal, unnormalized.
pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let d = x.len();
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let full = dft(&buf);
    full[..d / 2 + 1].to_vec()
}

/// Inverse of [`rfft`] for even `d`: extends the half spectrum by conjugate
/// symmetry and applies the normalized inverse transform.
pub fn irfft(spec: &[Complex64], d: usize) -> Vec<f64> {
    assert_eq!(spec.len(), d / 2 + 1, "half-spectrum length mismatch");
    assert_eq!(d % 2, 0, "irfft requires even length");
    let mut full = vec![Complex64::new(0.0, 0.0); d];
    full[..spec.len()].copy_from_slice(spec);
    for k in 1..d / 2 {
        full[d - k] = spec[k].conj();
    }
    let out = idft_unnorm(&full);
    out.iter().map(|c| c.re / d as f64).collect()
}

/// Angular wavenumber of half-spectrum mode `m` on a periodic domain of
/// length `domain_len`.
pub fn wavenumber(m: usize, domain_len: f64) -> f64 {
    2.0 * std::f64::consts::PI * m as f64 / domain_len
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn irfft_inverts_rfft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) as f64 * 0.37).sin()).collect();
        let back = irfft(&rfft(&x), 16);
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_under_unnormalized_forward() {
        let d = 32;
        let x: Vec<f64> = (0..d).map(|i| ((i as f64) * 0.91).cos() + 0.2).collect();
        let spec = rfft(&x);
        let mut spectral = spec[0].norm_sqr() + spec[d / 2].norm_sqr();
        for m in spec.iter().take(d / 2).skip(1) {
            spectral += 2.0 * m.norm_sqr();
        }
        let direct: f64 = x.iter().map(|v| v * v).sum();
        assert!((direct - spectral / d as f64).abs() < 1e-10);
    }
}
