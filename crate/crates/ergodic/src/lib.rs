//! Surrogate emulators of chaotic dynamics trained to preserve invariant
//! statistics.
//!
//! Forecasting a chaotic system past its Lyapunov horizon is hopeless, but the
//! long-run statistics of its attractor are stable and worth matching. This
//! crate trains Fourier-spectral neural operators on noisy multi-environment
//! trajectory data with three objectives: plain relative-MSE, relative-MSE
//! plus a debiased Sinkhorn divergence over physics-chosen summary statistics,
//! and relative-MSE plus a contrastive feature loss built from a
//! self-supervised sequence encoder. It ships the two reference systems
//! (Lorenz-96 and Kuramoto-Sivashinsky), dataset generation and persistence,
//! a minimal reverse-mode autodiff core, and the full evaluation suite
//! (statistics histogram error, energy-spectrum error, rollout rMSE, noise
//! robustness sweeps).
//!
//! The `ergodic` binary drives the whole pipeline; see the guide under
//! `book/` for worked examples.

pub mod cli;
pub mod datastore;
pub mod diffcore;
pub mod dynsys;
pub mod emulator;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
