//! Summary statistics, the three training losses, and the combined
//! objectives used to fit the emulator.

pub mod sinkhorn;

pub use sinkhorn::{
    median_cost, sinkhorn_divergence, sinkhorn_divergence_node, SinkhornConfig, SinkhornReport,
};

use crate::datastore::{Dataset, Split};
use crate::diffcore::fft::wavenumber;
use crate::diffcore::{ops, DiffArray, Tape};
use crate::dynsys::{derive_seed, SystemKind, SystemSpec};
use crate::emulator::{BoundEmulator, RolloutPlan};
use crate::encoder::{BoundEncoder, EncoderModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Which per-sample statistics proxy the invariant measure. Both systems use
/// three channels: a temporal derivative plus two physics terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StatSpec {
    pub kind: SystemKind,
    pub dt: f64,
    /// Periodic domain length for spectral derivatives (KS only).
    pub domain_length: f64,
}

pub const STAT_CHANNELS: usize = 3;

impl StatSpec {
    pub fn for_system(spec: &SystemSpec) -> Self {
        StatSpec {
            kind: spec.kind,
            dt: spec.dt,
            domain_length: spec.domain_length,
        }
    }
}

/// Per-sample statistic vectors from a `[K+1, d]` window: one row per
/// (time, space) site, `K * d` rows of [`STAT_CHANNELS`] values.
///
/// Lorenz-96 channels: forward-difference du/dt, the advection term
/// `(u_{i+1} - u_{i-2}) u_{i-1}`, and the state itself. KS channels:
/// forward-difference du/dt plus the first and second spectral space
/// derivatives. Differentiable with respect to the window.
pub fn summary_stats(window: &DiffArray, spec: &StatSpec) -> Result<DiffArray> {
    let shape = window.shape();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "summary_stats".into(),
            expected: "[K+1, d]".into(),
            got: format!("{shape:?}"),
        });
    }
    let frames = shape[0];
    let d = shape[1];
    if frames < 2 {
        return Err(Error::Config(
            "summary statistics need at least two frames for the temporal difference".into(),
        ));
    }
    let k = frames - 1;
    let cur = ops::slice_axis0(window, 0, k)?;
    let next = ops::slice_axis0(window, 1, k)?;
    let dudt = ops::scale(&ops::sub(&next, &cur)?, 1.0 / spec.dt);
    let flat = |x: &DiffArray| ops::reshape(x, &[k * d]);

    let (second, third) = match spec.kind {
        SystemKind::Lorenz96 => {
            let advection = ops::mul(
                &ops::sub(&ops::roll_axis1(&cur, 1)?, &ops::roll_axis1(&cur, -2)?)?,
                &ops::roll_axis1(&cur, -1)?,
            )?;
            (advection, cur)
        }
        SystemKind::KuramotoSivashinsky => {
            let half = d / 2 + 1;
            let ik: Vec<Complex64> = (0..half)
                .map(|m| Complex64::new(0.0, wavenumber(m, spec.domain_length)))
                .collect();
            let minus_k2: Vec<Complex64> = (0..half)
                .map(|m| {
                    let k = wavenumber(m, spec.domain_length);
                    Complex64::new(-k * k, 0.0)
                })
                .collect();
            let dudx = ops::fourier_multiplier(&cur, &ik)?;
            let d2udx2 = ops::fourier_multiplier(&cur, &minus_k2)?;
            (dudx, d2udx2)
        }
    };
    ops::stack_cols(&[flat(&dudt)?, flat(&second)?, flat(&third)?])
}

/// Statistics of a plain window (no gradient tracking).
pub fn summary_stats_tensor(window: &Tensor, spec: &StatSpec) -> Result<Tensor> {
    let tape = Tape::new();
    let node = tape.constant(window.clone());
    Ok(summary_stats(&node, spec)?.value())
}

/// Per-channel affine standardization of statistic samples, fitted once on
/// training data so the Sinkhorn cost is scale-free.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub enabled: bool,
}

impl StatStandardizer {
    pub fn identity() -> Self {
        StatStandardizer {
            mean: vec![0.0; STAT_CHANNELS],
            std: vec![1.0; STAT_CHANNELS],
            enabled: false,
        }
    }

    /// Channel means/stds over the statistics of sampled training windows.
    pub fn fit(
        dataset: &Dataset,
        spec: &StatSpec,
        window_k: usize,
        sample_windows: usize,
        seed: u64,
    ) -> Result<Self> {
        let windows =
            dataset.sample_windows(window_k, sample_windows, seed, Some(Split::Train))?;
        let mut sums = vec![0.0; STAT_CHANNELS];
        let mut sq = vec![0.0; STAT_CHANNELS];
        let mut count = 0usize;
        for w in &windows {
            let stats = summary_stats_tensor(&dataset.window_frames(&w), spec)?;
            for i in 0..stats.rows() {
                for c in 0..STAT_CHANNELS {
                    let v = stats.at2(i, c);
                    sums[c] += v;
                    sq[c] += v * v;
                }
            }
            count += stats.rows();
        }
        let mean: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count as f64 - m * m).max(0.0)).sqrt().max(1e-12))
            .collect();
        Ok(StatStandardizer {
            mean,
            std,
            enabled: true,
        })
    }

    pub fn apply_node(&self, samples: &DiffArray) -> Result<DiffArray> {
        if !self.enabled {
            return Ok(samples.clone());
        }
        let scale: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self.mean.iter().zip(&self.std).map(|(m, s)| -m / s).collect();
        ops::affine_cols(samples, &scale, &shift)
    }

    pub fn apply(&self, samples: &Tensor) -> Tensor {
        if !self.enabled {
            return samples.clone();
        }
        let mut out = samples.clone();
        let k = samples.cols();
        for i in 0..samples.rows() {
            for c in 0..k {
                let v = (out.at2(i, c) - self.mean[c]) / self.std[c];
                out.set2(i, c, v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureLossConfig {
    pub lambda: f64,
}

impl FeatureLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "feature loss lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Relative squared L2 error of a prediction against a fixed target window,
/// averaged over frames.
pub fn rmse_loss(target: &Tensor, prediction: &DiffArray) -> Result<DiffArray> {
    ops::rel_sq_err(prediction, target)
}

/// Same computation on plain tensors, through the identical code path.
pub fn rmse_value(target: &Tensor, prediction: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let node = tape.constant(prediction.clone());
    Ok(rmse_loss(target, &node)?.item())
}

/// Mean cosine distance between the channel-normalized feature maps of two
/// windows, summed over every encoder scale (conv blocks plus embedding).
/// `encoder` is bound frozen: its parameters receive no gradient.
pub fn feature_loss(
    target: &Tensor,
    prediction: &DiffArray,
    encoder: &EncoderModel,
) -> Result<DiffArray> {
    let bound = encoder.bind_frozen(prediction.tape());
    feature_loss_with(&bound, target, prediction)
}

/// Feature loss against an explicitly bound encoder (shared across windows).
pub fn feature_loss_with(
    bound: &BoundEncoder<'_>,
    target: &Tensor,
    prediction: &DiffArray,
) -> Result<DiffArray> {
    let tape = prediction.tape();
    let target_node = tape.constant(target.clone());
    let (t_maps, t_emb) = bound.features_node(&target_node)?;
    let (p_maps, p_emb) = bound.features_node(prediction)?;
    let mut total: Option<DiffArray> = None;
    for (t, p) in t_maps.iter().zip(&p_maps) {
        let dist = cosine_feature_distance(t, p)?;
        total = Some(match total {
            Some(acc) => ops::add(&acc, &dist)?,
            None => dist,
        });
    }
    let emb_dist = ops::add_scalar(&ops::neg(&ops::dot(&t_emb, &p_emb)?), 1.0);
    Ok(match total {
        Some(acc) => ops::add(&acc, &emb_dist)?,
        None => emb_dist,
    })
}

/// Plain-value feature loss for validation logging.
pub fn feature_loss_value(
    target: &Tensor,
    prediction: &Tensor,
    encoder: &EncoderModel,
) -> Result<f64> {
    let tape = Tape::new();
    let node = tape.constant(prediction.clone());
    Ok(feature_loss(target, &node, encoder)?.item())
}

/// Mean over positions of `1 - cos` between two channel-normalized maps of
/// equal shape `[C, ...]`.
pub fn cosine_feature_distance(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let shape = a.shape();
    let c = shape[0];
    let s: usize = shape[1..].iter().product::<usize>().max(1);
    let am = ops::reshape(a, &[c, s])?;
    let bm = ops::reshape(b, &[c, s])?;
    let sims = ops::sum_axis0(&ops::mul(&am, &bm)?)?;
    Ok(ops::add_scalar(&ops::neg(&ops::mean_all(&sims)), 1.0))
}

/// Everything a combined loss evaluation needs besides the model.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub plan: RolloutPlan,
    pub stat_spec: StatSpec,
    pub standardizer: StatStandardizer,
    pub sinkhorn: SinkhornConfig,
    pub feature: FeatureLossConfig,
    /// Statistics are uniformly subsampled to at most this many rows per side
    /// before the quadratic-cost Sinkhorn solve.
    pub subsample_cap: usize,
}

/// The rMSE term of the combined losses: teacher-reset rollout at `h_rmse`,
/// relative error on the predicted frames only.
pub fn rmse_term(bound: &BoundEmulator<'_>, window: &Tensor, phi: f64, h_rmse: usize) -> Result<DiffArray> {
    let pred = bound.rollout_concat(window, phi, h_rmse)?;
    rmse_of_predicted_frames(&pred, window, h_rmse)
}

fn rmse_of_predicted_frames(
    pred: &DiffArray,
    window: &Tensor,
    h: usize,
) -> Result<DiffArray> {
    let frames = window.rows();
    let idx: Vec<usize> = (0..frames).filter(|i| i % (h + 1) != 0).collect();
    let pred_rows = ops::gather_axis0(pred, &idx)?;
    let mut target = Tensor::zeros(&[idx.len(), window.cols()]);
    for (row, &i) in idx.iter().enumerate() {
        target.row_mut(row).copy_from_slice(window.row(i));
    }
    rmse_loss(&target, &pred_rows)
}

fn subsample_node(x: &DiffArray, cap: usize, seed: u64) -> Result<DiffArray> {
    let rows = x.shape()[0];
    if rows <= cap {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = index_sample(&mut rng, rows, cap).into_iter().collect();
    idx.sort_unstable();
    ops::gather_axis0(x, &idx)
}

fn subsample_tensor(x: &Tensor, cap: usize, seed: u64) -> Tensor {
    let rows = x.rows();
    if rows <= cap {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = index_sample(&mut rng, rows, cap).into_iter().collect();
    idx.sort_unstable();
    let k = x.cols();
    let mut out = Tensor::zeros(&[cap, k]);
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).copy_from_slice(x.row(i));
    }
    out
}

/// Standardized, subsampled statistic samples for the transport loss: the
/// data window's as a plain tensor and the rollout's as a node.
pub fn subsampled_stats(
    window: &Tensor,
    rollout: &DiffArray,
    ctx: &LossContext,
    seed: u64,
) -> Result<(Tensor, DiffArray)> {
    let pred_stats = summary_stats(rollout, &ctx.stat_spec)?;
    let pred_std = ctx.standardizer.apply_node(&pred_stats)?;
    let pred_sub = subsample_node(&pred_std, ctx.subsample_cap, derive_seed(seed, 1))?;

    let data_stats = summary_stats_tensor(window, &ctx.stat_spec)?;
    let data_std = ctx.standardizer.apply(&data_stats);
    let data_sub = subsample_tensor(&data_std, ctx.subsample_cap, derive_seed(seed, 2));
    Ok((data_sub, pred_sub))
}

/// Sinkhorn + rMSE objective for one window. With `alpha == 0` the Sinkhorn
/// machinery is skipped entirely so training degenerates bit-for-bit to the
/// plain rMSE objective.
pub fn combined_loss_sinkhorn_window(
    bound: &BoundEmulator<'_>,
    window: &Tensor,
    phi: f64,
    ctx: &LossContext,
    seed: u64,
) -> Result<(DiffArray, SinkhornReport)> {
    ctx.plan.validate()?;
    if ctx.sinkhorn.alpha == 0.0 {
        return Ok((
            rmse_term(bound, window, phi, ctx.plan.h_rmse)?,
            SinkhornReport {
                converged: true,
                ..SinkhornReport::default()
            },
        ));
    }
    let rollout = bound.rollout_concat(window, phi, ctx.plan.h)?;
    // The rMSE rollout coincides with the structural one when the plan uses
    // a single horizon.
    let rmse = if ctx.plan.h_rmse == ctx.plan.h {
        rmse_of_predicted_frames(&rollout, window, ctx.plan.h_rmse)?
    } else {
        rmse_term(bound, window, phi, ctx.plan.h_rmse)?
    };
    let (data_sub, pred_sub) = subsampled_stats(window, &rollout, ctx, seed)?;
    let (div, report) = sinkhorn_divergence_node(&data_sub, &pred_sub, &ctx.sinkhorn)?;
    let loss = ops::add(&ops::scale(&div, ctx.sinkhorn.alpha), &rmse)?;
    Ok((loss, report))
}

/// Feature + rMSE objective for one window; the encoder stays frozen.
pub fn combined_loss_feature_window(
    bound: &BoundEmulator<'_>,
    encoder: &BoundEncoder<'_>,
    window: &Tensor,
    phi: f64,
    ctx: &LossContext,
) -> Result<DiffArray> {
    ctx.plan.validate()?;
    ctx.feature.validate()?;
    if ctx.feature.lambda == 0.0 {
        return rmse_term(bound, window, phi, ctx.plan.h_rmse);
    }
    let rollout = bound.rollout_concat(window, phi, ctx.plan.h)?;
    let rmse = if ctx.plan.h_rmse == ctx.plan.h {
        rmse_of_predicted_frames(&rollout, window, ctx.plan.h_rmse)?
    } else {
        rmse_term(bound, window, phi, ctx.plan.h_rmse)?
    };
    let floss = feature_loss_with(encoder, window, &rollout)?;
    ops::add(&ops::scale(&floss, ctx.feature.lambda), &rmse)
}

/// Batch mean of the Sinkhorn + rMSE objective (values only, no gradients).
pub fn combined_loss_sinkhorn(
    model: &crate::emulator::EmulatorModel,
    items: &[(Tensor, f64)],
    ctx: &LossContext,
    seed: u64,
) -> Result<(f64, bool)> {
    let mut total = 0.0;
    let mut converged = true;
    for (i, (window, phi)) in items.iter().enumerate() {
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let (loss, report) =
            combined_loss_sinkhorn_window(&bound, window, *phi, ctx, derive_seed(seed, i as u64))?;
        total += loss.item();
        converged &= report.converged;
    }
    Ok((total / items.len().max(1) as f64, converged))
}

/// Batch mean of the feature + rMSE objective (values only, no gradients).
pub fn combined_loss_feature(
    model: &crate::emulator::EmulatorModel,
    encoder: &EncoderModel,
    items: &[(Tensor, f64)],
    ctx: &LossContext,
) -> Result<f64> {
    let mut total = 0.0;
    for (window, phi) in items {
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let enc = encoder.bind_frozen(&tape);
        let loss = combined_loss_feature_window(&bound, &enc, window, *phi, ctx)?;
        total += loss.item();
    }
    Ok(total / items.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::fdcheck;
    use crate::emulator::{Activation, EmulatorHyper, EmulatorModel, Normalization};
    use crate::encoder::EncoderHyper;
    use rand::{Rng, SeedableRng};

    fn randw(rows: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[rows, d],
            (0..rows * d)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        )
    }

    fn l96_stats() -> StatSpec {
        StatSpec {
            kind: SystemKind::Lorenz96,
            dt: 0.1,
            domain_length: 0.0,
        }
    }

    #[test]
    fn constant_window_stats_are_fixed_point_values() {
        let f = 8.0;
        let window = Tensor::full(&[5, 8], f);
        let stats = summary_stats_tensor(&window, &l96_stats()).unwrap();
        assert_eq!(stats.shape(), &[32, 3]);
        for i in 0..stats.rows() {
            assert_eq!(stats.at2(i, 0), 0.0, "du/dt");
            assert_eq!(stats.at2(i, 1), 0.0, "advection");
            assert_eq!(stats.at2(i, 2), f, "state");
        }
    }

    #[test]
    fn advection_channel_matches_rhs_oracle() {
        // lorenz96_rhs = advection - u + F, so advection = rhs + u - F.
        let d = 12;
        let window = randw(3, d, 5);
        let stats = summary_stats_tensor(&window, &l96_stats()).unwrap();
        for t in 0..2 {
            let u = window.row(t);
            let rhs = crate::dynsys::lorenz96::lorenz96_rhs(u, 7.5).unwrap();
            for i in 0..d {
                let expect = rhs[i] + u[i] - 7.5;
                let got = stats.at2(t * d + i, 1);
                assert!((got - expect).abs() < 1e-12, "t={t} i={i}");
            }
        }
    }

    #[test]
    fn ks_spatial_derivative_is_spectrally_exact() {
        let d = 32;
        let domain = 50.0;
        let spec = StatSpec {
            kind: SystemKind::KuramotoSivashinsky,
            dt: 0.25,
            domain_length: domain,
        };
        let k1 = wavenumber(1, domain);
        let mut window = Tensor::zeros(&[2, d]);
        for j in 0..d {
            let x = domain * j as f64 / d as f64;
            let v = (k1 * x).sin();
            window.set2(0, j, v);
            window.set2(1, j, v);
        }
        let stats = summary_stats_tensor(&window, &spec).unwrap();
        for j in 0..d {
            let x = domain * j as f64 / d as f64;
            let expect_dx = k1 * (k1 * x).cos();
            let expect_dxx = -k1 * k1 * (k1 * x).sin();
            assert!((stats.at2(j, 1) - expect_dx).abs() < 1e-8, "du/dx at {j}");
            assert!((stats.at2(j, 2) - expect_dxx).abs() < 1e-8, "d2u/dx2 at {j}");
        }
    }

    #[test]
    fn stats_gradient_matches_finite_differences() {
        let spec = l96_stats();
        let inputs = vec![randw(4, 8, 7)];
        let f = move |_: &Tape, xs: &[DiffArray]| {
            let stats = summary_stats(&xs[0], &spec).unwrap();
            ops::mean_all(&ops::square(&stats))
        };
        let err = fdcheck::max_rel_error(f, &inputs, 30, 9);
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn rmse_matches_scalar_loop_oracle() {
        let target = randw(5, 7, 11);
        let pred = randw(5, 7, 13);
        let mut expect = 0.0;
        for i in 0..5 {
            let num: f64 = (0..7)
                .map(|j| (pred.at2(i, j) - target.at2(i, j)).powi(2))
                .sum();
            let den: f64 = (0..7).map(|j| target.at2(i, j).powi(2)).sum();
            expect += num / den;
        }
        expect /= 5.0;
        let got = rmse_value(&target, &pred).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert_eq!(rmse_value(&target, &target).unwrap(), 0.0);
        assert!((rmse_value(&target, &Tensor::zeros(&[5, 7])).unwrap() - 1.0).abs() < 1e-12);
    }

    fn tiny_encoder(window_len: usize, dim: usize) -> EncoderModel {
        EncoderModel::new(
            EncoderHyper {
                window_len,
                dim,
                channels: vec![2, 3, 4],
                embed_dim: 4,
                input_mean: 0.0,
                input_std: 1.0,
            },
            31,
        )
        .unwrap()
    }

    #[test]
    fn feature_loss_of_identical_windows_is_zero() {
        let enc = tiny_encoder(6, 8);
        let w = randw(6, 8, 17);
        let tape = Tape::new();
        let pred = tape.constant(w.clone());
        let loss = feature_loss(&w, &pred, &enc).unwrap();
        assert!(loss.item().abs() < 1e-10, "loss {}", loss.item());
    }

    #[test]
    fn orthogonal_features_score_one_per_scale() {
        // Formula check on hand-built maps: unit vectors orthogonal at every
        // position give distance exactly 1.
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(&[2, 3], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]));
        let b = tape.constant(Tensor::from_vec(&[2, 3], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let dist = cosine_feature_distance(&a, &b).unwrap();
        assert!((dist.item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_loss_matches_per_layer_oracle() {
        let enc = tiny_encoder(6, 8);
        let wa = randw(6, 8, 19);
        let wb = randw(6, 8, 23);
        let tape = Tape::new();
        let pred = tape.constant(wb.clone());
        let got = feature_loss(&wa, &pred, &enc).unwrap().item();

        // Oracle: features() returns normalized maps; accumulate mean cosine
        // distance per scale with plain loops.
        let fa = enc.features(&wa).unwrap();
        let fb = enc.features(&wb).unwrap();
        let mut expect = 0.0;
        for (a, b) in fa.iter().zip(&fb) {
            let c = a.shape()[0];
            let s: usize = a.shape()[1..].iter().product::<usize>().max(1);
            let mut mean_sim = 0.0;
            for p in 0..s {
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += a.data()[ch * s + p] * b.data()[ch * s + p];
                }
                mean_sim += dot;
            }
            expect += 1.0 - mean_sim / s as f64;
        }
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn frozen_encoder_receives_no_gradient() {
        let enc = tiny_encoder(6, 8);
        let w = randw(6, 8, 29);
        let tape = Tape::new();
        let bound = enc.bind_frozen(&tape);
        let pred = tape.param(randw(6, 8, 37));
        let loss = feature_loss_with(&bound, &w, &pred).unwrap();
        let grads = tape.backward(&loss);
        for handle in &bound.handles {
            assert!(grads.wrt(handle).is_none(), "encoder parameter got a gradient");
        }
        assert!(grads.wrt(&pred).is_some(), "prediction must receive gradient");
    }

    #[test]
    fn feature_loss_gradient_wrt_prediction_matches_finite_differences() {
        let enc = tiny_encoder(5, 6);
        let target = randw(5, 6, 41);
        let inputs = vec![randw(5, 6, 43)];
        let f = move |_: &Tape, xs: &[DiffArray]| feature_loss(&target, &xs[0], &enc).unwrap();
        let err = fdcheck::max_rel_error(f, &inputs, 30, 47);
        assert!(err < 1e-5, "max rel err {err}");
    }

    fn micro_emulator(dim: usize, seed: u64) -> EmulatorModel {
        let mut m = EmulatorModel::new(
            EmulatorHyper {
                dim,
                width: 5,
                blocks: 2,
                modes: 3,
                activation: Activation::Gelu,
                normalization: Normalization::default(),
            },
            seed,
        )
        .unwrap();
        // Give the projection head signal so losses are nontrivial.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for (name, t) in m.params.iter_mut() {
            if name.starts_with("project") {
                for v in t.data_mut() {
                    *v = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.3;
                }
            }
        }
        m
    }

    fn l96_ctx(alpha: f64, lambda: f64) -> LossContext {
        LossContext {
            plan: RolloutPlan { k: 3, h: 1, h_rmse: 1 },
            stat_spec: l96_stats(),
            standardizer: StatStandardizer::identity(),
            sinkhorn: SinkhornConfig {
                gamma: 0.5,
                max_iterations: 5000,
                tolerance: 1e-9,
                alpha,
            },
            feature: FeatureLossConfig { lambda },
            subsample_cap: 64,
        }
    }

    #[test]
    fn alpha_zero_equals_bare_rmse_term() {
        let model = micro_emulator(8, 51);
        let window = randw(4, 8, 53);
        let ctx = l96_ctx(0.0, 0.0);
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let (loss, report) =
            combined_loss_sinkhorn_window(&bound, &window, 12.0, &ctx, 1).unwrap();
        assert!(report.converged);
        let tape2 = Tape::new();
        let bound2 = model.bind_frozen(&tape2);
        let bare = rmse_term(&bound2, &window, 12.0, 1).unwrap();
        assert_eq!(loss.item(), bare.item());
    }

    #[test]
    fn combined_sinkhorn_is_compositional() {
        let model = micro_emulator(8, 57);
        let window = randw(4, 8, 59);
        let ctx = l96_ctx(0.7, 0.0);
        let seed = 3;

        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let (combined, _) =
            combined_loss_sinkhorn_window(&bound, &window, 11.0, &ctx, seed).unwrap();

        // Separate evaluation of the two terms.
        let tape2 = Tape::new();
        let bound2 = model.bind_frozen(&tape2);
        let rmse = rmse_term(&bound2, &window, 11.0, ctx.plan.h_rmse).unwrap().item();
        let rollout = bound2.rollout_concat(&window, 11.0, ctx.plan.h).unwrap();
        let pred_stats = summary_stats(&rollout, &ctx.stat_spec).unwrap();
        let pred_sub = subsample_node(&pred_stats, ctx.subsample_cap, derive_seed(seed, 1)).unwrap();
        let data_stats = summary_stats_tensor(&window, &ctx.stat_spec).unwrap();
        let data_sub = subsample_tensor(&data_stats, ctx.subsample_cap, derive_seed(seed, 2));
        let (div, _) = sinkhorn_divergence(&data_sub, &pred_sub.value(), &ctx.sinkhorn).unwrap();

        let expect = ctx.sinkhorn.alpha * div + rmse;
        assert!(
            (combined.item() - expect).abs() < 1e-10,
            "{} vs {expect}",
            combined.item()
        );
    }

    #[test]
    fn perfect_model_scores_zero_on_both_objectives() {
        // Identity emulator on a constant window: predictions equal targets.
        let mut model = EmulatorModel::new(
            EmulatorHyper {
                dim: 8,
                width: 5,
                blocks: 2,
                modes: 3,
                activation: Activation::Identity,
                normalization: Normalization::default(),
            },
            61,
        )
        .unwrap();
        for (name, t) in model.params.iter_mut() {
            *t = Tensor::zeros(t.shape());
            if name == "lift.weight" {
                t.set2(0, 0, 1.0);
            } else if name.ends_with("bypass.weight") {
                for i in 0..t.rows() {
                    t.set2(i, i, 1.0);
                }
            } else if name == "project.weight" {
                t.set2(0, 0, 1.0);
            }
        }
        let window = Tensor::full(&[4, 8], 3.0);
        let ctx = l96_ctx(1.0, 0.8);
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let (loss, _) = combined_loss_sinkhorn_window(&bound, &window, 12.0, &ctx, 5).unwrap();
        assert!(loss.item().abs() < 1e-8, "sinkhorn objective {}", loss.item());

        let enc = tiny_encoder(4, 8);
        let tape2 = Tape::new();
        let bound2 = model.bind_frozen(&tape2);
        let enc_bound = enc.bind_frozen(&tape2);
        let floss =
            combined_loss_feature_window(&bound2, &enc_bound, &window, 12.0, &ctx).unwrap();
        assert!(floss.item().abs() < 1e-8, "feature objective {}", floss.item());
    }

    #[test]
    fn lambda_zero_equals_bare_rmse_term() {
        let model = micro_emulator(8, 63);
        let enc = tiny_encoder(4, 8);
        let window = randw(4, 8, 67);
        let ctx = l96_ctx(0.0, 0.0);
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let enc_bound = enc.bind_frozen(&tape);
        let loss = combined_loss_feature_window(&bound, &enc_bound, &window, 9.0, &ctx).unwrap();
        let tape2 = Tape::new();
        let bound2 = model.bind_frozen(&tape2);
        let bare = rmse_term(&bound2, &window, 9.0, 1).unwrap();
        assert_eq!(loss.item(), bare.item());
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let spec = crate::dynsys::SystemSpec::lorenz96(8, 0.1, 5);
        let envs = crate::dynsys::sample_environments(3, (10.0, 14.0), 71).unwrap();
        let ds = Dataset::generate(&spec, &envs, 60, 0.1, (10.0, 14.0), 71).unwrap();
        let st = StatStandardizer::fit(&ds, &l96_stats(), 10, 20, 3).unwrap();
        assert!(st.enabled);
        // Standardizing a fresh window sample should land near zero mean and
        // unit scale per channel.
        let w = ds.sample_windows(10, 30, 9, Some(Split::Train)).unwrap();
        let mut all = Vec::new();
        for win in &w {
            let stats = summary_stats_tensor(&ds.window_frames(&win), &l96_stats()).unwrap();
            all.push(st.apply(&stats));
        }
        for c in 0..STAT_CHANNELS {
            let vals: Vec<f64> = all.iter().flat_map(|t| (0..t.rows()).map(move |i| t.at2(i, c))).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 0.3, "channel {c} mean {m}");
            assert!((sd - 1.0).abs() < 0.3, "channel {c} std {sd}");
        }
    }
}
