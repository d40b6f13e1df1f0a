//! Evaluation metrics: statistics histogram error, energy-spectrum error,
//! rollout rMSE, the noise-robustness sweep, and the Gaussian-blur baseline.

use crate::datastore::{Dataset, Split};
use crate::diffcore::fft;
use crate::dynsys::{derive_seed, SystemSpec};
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::losses::{rmse_value, summary_stats_tensor, StatSpec};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;

/// Per-channel normalized histogram with shared edges.
#[derive(Debug, Clone)]
pub struct Histogram {
    /// One `(lo, width)` pair per channel.
    pub edges: Vec<(f64, f64)>,
    /// `[channels][bins]` normalized frequencies, each channel summing to 1.
    pub frequencies: Vec<Vec<f64>>,
    pub bins: usize,
}

impl Histogram {
    /// Square-root rule binning with edges spanning the sample range.
    pub fn from_reference(samples: &Tensor) -> Result<Histogram> {
        if samples.is_empty() || samples.rows() == 0 {
            return Err(Error::Config("histogram needs at least one sample".into()));
        }
        let (n, k) = (samples.rows(), samples.cols());
        let bins = (n as f64).sqrt().ceil() as usize;
        let mut edges = Vec::with_capacity(k);
        for c in 0..k {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                lo = lo.min(samples.at2(i, c));
                hi = hi.max(samples.at2(i, c));
            }
            let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
            edges.push((lo, width));
        }
        let mut hist = Histogram {
            edges,
            frequencies: vec![vec![0.0; bins]; k],
            bins,
        };
        hist.accumulate(samples);
        Ok(hist)
    }

    /// Histogram of `samples` over this histogram's edges (out-of-range
    /// values clip into the boundary bins).
    pub fn rebin(&self, samples: &Tensor) -> Result<Histogram> {
        if samples.rows() == 0 || samples.cols() != self.edges.len() {
            return Err(Error::Shape {
                op: "histogram rebin".into(),
                expected: format!("[>0, {}]", self.edges.len()),
                got: format!("{:?}", samples.shape()),
            });
        }
        let mut out = Histogram {
            edges: self.edges.clone(),
            frequencies: vec![vec![0.0; self.bins]; self.edges.len()],
            bins: self.bins,
        };
        out.accumulate(samples);
        Ok(out)
    }

    fn accumulate(&mut self, samples: &Tensor) {
        let n = samples.rows();
        let weight = 1.0 / n as f64;
        for (c, (lo, width)) in self.edges.iter().enumerate() {
            for i in 0..n {
                let v = samples.at2(i, c);
                let bin = (((v - lo) / width).floor() as i64).clamp(0, self.bins as i64 - 1);
                self.frequencies[c][bin as usize] += weight;
            }
        }
    }
}

/// L1 distance between normalized frequency vectors, averaged over channels.
/// Edges and bin count come from the reference samples; candidate mass
/// outside the reference range clips into the boundary bins.
pub fn histogram_error(reference: &Tensor, candidate: &Tensor) -> Result<f64> {
    let ref_hist = Histogram::from_reference(reference)?;
    let cand_hist = ref_hist.rebin(candidate)?;
    let k = ref_hist.frequencies.len();
    let mut total = 0.0;
    for c in 0..k {
        total += ref_hist.frequencies[c]
            .iter()
            .zip(&cand_hist.frequencies[c])
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    }
    Ok(total / k as f64)
}

/// Time-averaged per-mode energies `E_k = mean_t |FFT(u_t)_k|^2` over the
/// half spectrum, under the unnormalized forward transform.
pub fn energy_spectrum(states: &Tensor) -> Vec<f64> {
    let (t, d) = (states.rows(), states.cols());
    let mut energy = vec![0.0; d / 2 + 1];
    for f in 0..t {
        let spec = fft::rfft(states.row(f));
        for (k, c) in spec.iter().enumerate() {
            energy[k] += c.norm_sqr();
        }
    }
    for e in energy.iter_mut() {
        *e /= t as f64;
    }
    energy
}

/// L1 distance between time-averaged energy spectra.
pub fn energy_spectrum_error(reference: &Tensor, candidate: &Tensor) -> Result<f64> {
    if reference.cols() != candidate.cols() {
        return Err(Error::Shape {
            op: "energy_spectrum_error".into(),
            expected: format!("[_, {}]", reference.cols()),
            got: format!("{:?}", candidate.shape()),
        });
    }
    let a = energy_spectrum(reference);
    let b = energy_spectrum(candidate);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum())
}

/// What steps the evaluation rollouts: a trained emulator or the reference
/// integrator itself (the "perfect model" baseline).
pub enum EvalModel<'a> {
    Emulator(&'a EmulatorModel),
    GroundTruth(SystemSpec),
    /// Emits the zero state; the degenerate baseline.
    Zero,
}

impl EvalModel<'_> {
    /// Roll `steps` transitions from `u0`, stopping early at the first
    /// non-finite state. Returns the recorded frames (always at least the
    /// initial one) and the step index where divergence hit, if any.
    pub fn rollout_collect(
        &self,
        u0: &[f64],
        phi: f64,
        steps: usize,
    ) -> Result<(Tensor, Option<usize>)> {
        let d = u0.len();
        let mut frames = Vec::with_capacity(steps + 1);
        frames.extend_from_slice(u0);
        let mut diverged = None;
        match self {
            EvalModel::Zero => {
                for _ in 0..steps {
                    frames.extend(std::iter::repeat_n(0.0, d));
                }
            }
            EvalModel::Emulator(model) => {
                let mut u = u0.to_vec();
                for s in 0..steps {
                    u = model.step_plain(&u, phi)?;
                    if !u.iter().all(|v| v.is_finite()) {
                        diverged = Some(s + 1);
                        break;
                    }
                    frames.extend_from_slice(&u);
                }
            }
            EvalModel::GroundTruth(spec) => {
                let states = crate::dynsys::simulate(spec, phi, u0, steps)?;
                return Ok((states, None));
            }
        }
        let rows = frames.len() / d;
        Ok((Tensor::from_vec(&[rows, d], frames), diverged))
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Long-horizon rollout length for the distributional metrics.
    pub horizon: usize,
    /// Short rollout length for the rMSE column.
    pub rmse_horizon: usize,
    /// Evenly spaced rMSE start points per trajectory.
    pub rmse_windows: usize,
    pub stat_spec: StatSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// -1 tags the aggregate over environments.
    pub env_id: i64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn value(&self, env_id: i64, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.env_id == env_id && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn aggregate(&self, metric: &str) -> Option<f64> {
        self.value(-1, metric)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "env_id,metric,value")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.env_id, r.metric, r.value)?;
        }
        Ok(())
    }
}

struct EnvScores {
    env_id: i64,
    histogram: f64,
    spectrum: f64,
    rmse: f64,
}

/// Penalty metrics for rollouts that diverge almost immediately: maximal
/// histogram error (total variation bound) and the full reference energy.
fn divergence_penalty(reference: &Tensor) -> (f64, f64) {
    (2.0, energy_spectrum(reference).iter().sum())
}

/// Full metric suite over the test split: long-horizon rollout per
/// environment from the clean initial state, compared against the clean
/// trajectory.
pub fn evaluate_model(
    model: &EvalModel<'_>,
    dataset: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let pool = dataset.indices_of(Split::Test);
    if pool.is_empty() {
        return Err(Error::Config("dataset has no test environments".into()));
    }
    if cfg.horizon > dataset.t_len {
        return Err(Error::Config(format!(
            "evaluation horizon {} exceeds trajectory length {}",
            cfg.horizon, dataset.t_len
        )));
    }
    let scores: Vec<EnvScores> = pool
        .par_iter()
        .map(|&idx| -> Result<EnvScores> {
            let traj = dataset.get(idx);
            let clean = traj.clean();
            let phi = traj.env.phi;
            let (frames, diverged) = model.rollout_collect(clean.row(0), phi, cfg.horizon)?;
            // Reference over the same span so a perfect model scores zero.
            let d = clean.cols();
            let reference = Tensor::from_vec(
                &[cfg.horizon + 1, d],
                clean.data()[..(cfg.horizon + 1) * d].to_vec(),
            );

            let (histogram, spectrum) = if diverged.is_some_and(|s| s * 10 < cfg.horizon) {
                divergence_penalty(&reference)
            } else {
                let ref_stats = summary_stats_tensor(&reference, &cfg.stat_spec)?;
                let roll_stats = summary_stats_tensor(&frames, &cfg.stat_spec)?;
                (
                    histogram_error(&ref_stats, &roll_stats)?,
                    energy_spectrum_error(&reference, &frames)?,
                )
            };

            // Short-horizon rMSE from evenly spaced clean starts.
            let h = cfg.rmse_horizon;
            let last_start = dataset.t_len - h;
            let count = cfg.rmse_windows.min(last_start + 1).max(1);
            let mut total = 0.0;
            for w in 0..count {
                let start = w * last_start / count.max(1);
                let (pred, _) = model.rollout_collect(clean.row(start), phi, h)?;
                let mut target = Tensor::zeros(&[h, clean.cols()]);
                let mut got = Tensor::zeros(&[h, clean.cols()]);
                for o in 1..=h {
                    target.row_mut(o - 1).copy_from_slice(clean.row(start + o));
                    let row = if o < pred.rows() {
                        pred.row(o).to_vec()
                    } else {
                        vec![f64::INFINITY; clean.cols()]
                    };
                    got.row_mut(o - 1).copy_from_slice(&row);
                }
                let r = rmse_value(&target, &got)?;
                total += if r.is_finite() { r } else { 1.0 };
            }
            Ok(EnvScores {
                env_id: i64::from(traj.env.env_id),
                histogram,
                spectrum,
                rmse: total / count as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = EvalReport::default();
    for s in &scores {
        report.rows.push(EvalRow {
            env_id: s.env_id,
            metric: "histogram_error".into(),
            value: s.histogram,
        });
        report.rows.push(EvalRow {
            env_id: s.env_id,
            metric: "energy_spectrum_error".into(),
            value: s.spectrum,
        });
        report.rows.push(EvalRow {
            env_id: s.env_id,
            metric: "rmse".into(),
            value: s.rmse,
        });
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&EnvScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let hist_mean = mean(|s| s.histogram);
    let spec_mean = mean(|s| s.spectrum);
    let rmse_mean = mean(|s| s.rmse);
    let spec_std = (scores
        .iter()
        .map(|s| (s.spectrum - spec_mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    for (metric, value) in [
        ("histogram_error", hist_mean),
        ("energy_spectrum_error", spec_mean),
        ("energy_spectrum_error_std", spec_std),
        ("rmse", rmse_mean),
    ] {
        report.rows.push(EvalRow {
            env_id: -1,
            metric: metric.into(),
            value,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub r: f64,
    /// `ic` perturbs the initial condition; `ic_meas` adds measurement noise
    /// on top of the perturbed run.
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_robustness_csv(rows: &[RobustnessRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "r,variant,metric,value")?;
    for row in rows {
        writeln!(out, "{},{},{},{}", row.r, row.variant, row.metric, row.value)?;
    }
    Ok(())
}

/// How ground-truth error metrics respond to noise: for each scale in
/// `r_grid`, re-simulate from a perturbed initial condition (optionally adding
/// measurement noise) and compare against the unperturbed run.
pub fn noise_robustness_sweep(
    spec: &SystemSpec,
    phi: f64,
    r_grid: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if r_grid.windows(2).any(|w| w[0] > w[1]) || r_grid.first().copied() != Some(0.0) {
        return Err(Error::Config(
            "robustness grid must be sorted ascending and start at 0".into(),
        ));
    }
    let stat_spec = StatSpec::for_system(spec);
    // Reference trajectory from a spun-up state.
    let u_init = crate::dynsys::initial_condition(spec, derive_seed(seed, 0));
    let spun = crate::dynsys::simulate(spec, phi, &u_init, spec.spinup_steps)?;
    let u0: Vec<f64> = spun.row(spun.rows() - 1).to_vec();
    let reference = crate::dynsys::simulate(spec, phi, &u0, horizon)?;
    let sigma = reference.std();
    let ref_stats = summary_stats_tensor(&reference, &stat_spec)?;

    let mut rows = Vec::new();
    for (gi, &r) in r_grid.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + gi as u64));
        let perturbed_ic: Vec<f64> = u0
            .iter()
            .map(|v| v + r * sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let perturbed = crate::dynsys::simulate(spec, phi, &perturbed_ic, horizon)?;
        let with_meas = crate::dynsys::add_noise(&perturbed, r, derive_seed(seed, 1000 + gi as u64));
        for (variant, states) in [("ic", &perturbed), ("ic_meas", &with_meas)] {
            let stats = summary_stats_tensor(states, &stat_spec)?;
            rows.push(RobustnessRow {
                r,
                variant: variant.into(),
                metric: "rmse".into(),
                value: rmse_value(&reference, states)?,
            });
            rows.push(RobustnessRow {
                r,
                variant: variant.into(),
                metric: "histogram_error".into(),
                value: histogram_error(&ref_stats, &stats)?,
            });
            rows.push(RobustnessRow {
                r,
                variant: variant.into(),
                metric: "energy_spectrum_error".into(),
                value: energy_spectrum_error(&reference, states)?,
            });
        }
    }
    Ok(rows)
}

/// Per-frame 1-D Gaussian convolution along the spatial axis with periodic
/// wrap; `std` is in grid units and `std = 0` is the identity.
pub fn gaussian_blur(states: &Tensor, std: f64) -> Result<Tensor> {
    if std < 0.0 {
        return Err(Error::Config(format!("blur std must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(states.clone());
    }
    let (t, d) = (states.rows(), states.cols());
    let radius = (4.0 * std).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i as f64) * (i as f64) / (2.0 * std * std)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let mut out = Tensor::zeros(&[t, d]);
    for f in 0..t {
        let row = states.row(f);
        for j in 0..d {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let offset = ki as i64 - radius;
                let src = (j as i64 + offset).rem_euclid(d as i64) as usize;
                acc += k * row[src];
            }
            out.set2(f, j, acc);
        }
    }
    Ok(out)
}
