//! Emulator training driver shared by the `train` and `sweep` subcommands.

use super::config::{ExperimentConfig, ObjectiveKind};
use crate::datastore::{Dataset, Split};
use crate::diffcore::optim::AdamW;
use crate::diffcore::Tape;
use crate::dynsys::derive_seed;
use crate::emulator::{Activation, EmulatorHyper, EmulatorModel, Normalization, RolloutPlan};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss_feature_window, combined_loss_sinkhorn_window, rmse_term, sinkhorn_divergence,
    subsampled_stats, FeatureLossConfig, LossContext, SinkhornConfig, StatSpec, StatStandardizer,
};
use crate::tensor::Tensor;
use rayon::prelude::*;

const STREAM_MODEL: u64 = 0x10;
const STREAM_STANDARDIZER: u64 = 0x20;
const STREAM_BATCH: u64 = 0x30;
const STREAM_VAL: u64 = 0x40;

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
    /// Validation value of the structural term (Sinkhorn divergence or
    /// feature loss); absent for the plain rMSE objective.
    pub val_struct: Option<f64>,
    pub val_objective: Option<f64>,
}

pub struct TrainOutcome {
    pub best: EmulatorModel,
    pub fin: EmulatorModel,
    pub best_epoch: usize,
    pub log: Vec<TrainLogRow>,
    /// Batches whose Sinkhorn solves hit the iteration cap.
    pub unconverged_batches: usize,
}

/// Input standardization for the emulator from the training split.
pub fn fit_normalization(dataset: &Dataset) -> Normalization {
    let train = dataset.indices_of(Split::Train);
    let pool = if train.is_empty() {
        (0..dataset.len()).collect()
    } else {
        train
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for &i in &pool {
        acc += dataset.get(i).states.sum();
        count += dataset.get(i).states.len();
    }
    let mean = acc / count.max(1) as f64;
    let mut var = 0.0;
    for &i in &pool {
        var += dataset
            .get(i)
            .states
            .data()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>();
    }
    let std = (var / count.max(1) as f64).sqrt().max(1e-12);
    let (lo, hi) = dataset.env_range;
    Normalization {
        state_mean: mean,
        state_std: std,
        phi_mid: 0.5 * (lo + hi),
        phi_half_range: (0.5 * (hi - lo)).max(1e-12),
    }
}

pub fn build_context(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<LossContext> {
    let stat_spec = StatSpec::for_system(&dataset.spec);
    let standardizer = if cfg.training.objective == ObjectiveKind::SinkhornRmse
        && cfg.loss.standardize
        && cfg.loss.alpha > 0.0
    {
        StatStandardizer::fit(
            dataset,
            &stat_spec,
            cfg.training.window_k,
            32,
            derive_seed(cfg.training.seed, STREAM_STANDARDIZER),
        )?
    } else {
        StatStandardizer::identity()
    };
    Ok(LossContext {
        plan: RolloutPlan {
            k: cfg.training.window_k,
            h: cfg.training.h,
            h_rmse: cfg.training.h_rmse,
        },
        stat_spec,
        standardizer,
        sinkhorn: SinkhornConfig {
            gamma: cfg.loss.gamma,
            max_iterations: cfg.loss.max_iterations,
            tolerance: cfg.loss.tolerance,
            alpha: cfg.loss.alpha,
        },
        feature: FeatureLossConfig {
            lambda: cfg.loss.lambda,
        },
        subsample_cap: cfg.loss.subsample_cap,
    })
}

struct ItemResult {
    loss: f64,
    grads: Vec<Tensor>,
    unconverged: bool,
}

fn eval_item(
    model: &EmulatorModel,
    encoder: Option<&EncoderModel>,
    objective: ObjectiveKind,
    ctx: &LossContext,
    window: &Tensor,
    phi: f64,
    seed: u64,
) -> Result<ItemResult> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (loss, unconverged) = match objective {
        ObjectiveKind::Rmse => (rmse_term(&bound, window, phi, ctx.plan.h_rmse)?, false),
        ObjectiveKind::SinkhornRmse => {
            let (loss, report) = combined_loss_sinkhorn_window(&bound, window, phi, ctx, seed)?;
            (loss, !report.converged)
        }
        ObjectiveKind::FeatureRmse => {
            let enc = encoder
                .ok_or_else(|| Error::Config("feature objective without an encoder".into()))?
                .bind_frozen(&tape);
            (
                combined_loss_feature_window(&bound, &enc, window, phi, ctx)?,
                false,
            )
        }
    };
    let value = loss.item();
    let grads_all = tape.backward(&loss);
    let grads = bound
        .handles
        .iter()
        .zip(&model.params)
        .map(|(h, (name, _))| {
            grads_all
                .wrt(h)
                .cloned()
                .ok_or_else(|| Error::MissingGradient(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ItemResult {
        loss: value,
        grads,
        unconverged,
    })
}

/// Validation metrics on held-out windows with a frozen model.
fn validate(
    model: &EmulatorModel,
    encoder: Option<&EncoderModel>,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    ctx: &LossContext,
    epoch: usize,
) -> Result<(f64, Option<f64>)> {
    let split = if dataset.indices_of(Split::Val).is_empty() {
        Split::Train
    } else {
        Split::Val
    };
    let seed = derive_seed(cfg.training.seed, STREAM_VAL + epoch as u64);
    let windows = dataset.sample_windows(
        cfg.training.window_k,
        cfg.training.val_windows,
        seed,
        Some(split),
    )?;
    let mut rmse_total = 0.0;
    let mut struct_total = 0.0;
    for (i, w) in windows.iter().enumerate() {
        let frames = dataset.window_frames(w);
        let phi = dataset.get(w.traj_idx).env.phi;
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        rmse_total += rmse_term(&bound, &frames, phi, ctx.plan.h_rmse)?.item();
        match cfg.training.objective {
            ObjectiveKind::Rmse => {}
            ObjectiveKind::SinkhornRmse => {
                let rollout = bound.rollout_concat(&frames, phi, ctx.plan.h)?;
                let item_seed = derive_seed(seed, i as u64);
                let (data_sub, pred_sub) = subsampled_stats(&frames, &rollout, ctx, item_seed)?;
                let (value, _) = sinkhorn_divergence(&data_sub, &pred_sub.value(), &ctx.sinkhorn)?;
                struct_total += value;
            }
            ObjectiveKind::FeatureRmse => {
                let enc = encoder
                    .ok_or_else(|| Error::Config("feature objective without an encoder".into()))?
                    .bind_frozen(&tape);
                let rollout = bound.rollout_concat(&frames, phi, ctx.plan.h)?;
                struct_total +=
                    crate::losses::feature_loss_with(&enc, &frames, &rollout)?.item();
            }
        }
    }
    let n = windows.len() as f64;
    let val_rmse = rmse_total / n;
    let val_struct = match cfg.training.objective {
        ObjectiveKind::Rmse => None,
        _ => Some(struct_total / n),
    };
    Ok((val_rmse, val_struct))
}

pub fn train_emulator(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let encoder = match (&cfg.training.objective, &cfg.encoder) {
        (ObjectiveKind::FeatureRmse, Some(section)) => {
            let enc = EncoderModel::load(&section.path)?;
            if cfg.training.window_k + 1 < enc.hyper.window_len {
                return Err(Error::Config(format!(
                    "training windows of {} frames cannot feed an encoder trained on {} frames; \
                     raise training.window_k to at least {}",
                    cfg.training.window_k + 1,
                    enc.hyper.window_len,
                    enc.hyper.window_len - 1
                )));
            }
            Some(enc)
        }
        _ => None,
    };
    let ctx = build_context(cfg, dataset)?;
    let hyper = EmulatorHyper {
        dim: dataset.spec.dim,
        width: cfg.model.width,
        blocks: cfg.model.blocks,
        modes: cfg.model.modes_for(dataset.spec.kind),
        activation: Activation::Gelu,
        normalization: fit_normalization(dataset),
    };
    let mut model = EmulatorModel::new(hyper, derive_seed(cfg.training.seed, STREAM_MODEL))?;
    let mut optimizer = AdamW::new(cfg.training.learning_rate, cfg.training.weight_decay);

    let mut log = Vec::with_capacity(cfg.training.epochs);
    let mut best: Option<(f64, usize, EmulatorModel)> = None;
    let mut unconverged_batches = 0usize;

    for epoch in 0..cfg.training.epochs {
        let mut epoch_loss = 0.0;
        for batch_idx in 0..cfg.training.batches_per_epoch {
            let batch_seed = derive_seed(
                cfg.training.seed,
                STREAM_BATCH + (epoch * cfg.training.batches_per_epoch + batch_idx) as u64,
            );
            let windows = dataset.sample_windows(
                cfg.training.window_k,
                cfg.training.batch,
                batch_seed,
                Some(Split::Train),
            )?;
            let items: Vec<(Tensor, f64, u64)> = windows
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    (
                        dataset.window_frames(w),
                        dataset.get(w.traj_idx).env.phi,
                        derive_seed(batch_seed, i as u64),
                    )
                })
                .collect();
            let results: Vec<ItemResult> = items
                .par_iter()
                .map(|(frames, phi, seed)| {
                    eval_item(
                        &model,
                        encoder.as_ref(),
                        cfg.training.objective,
                        &ctx,
                        frames,
                        *phi,
                        *seed,
                    )
                })
                .collect::<Result<Vec<_>>>()?;

            let scale = 1.0 / results.len() as f64;
            let mut mean_loss = 0.0;
            let mut mean_grads: Vec<Tensor> =
                model.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
            let mut any_unconverged = false;
            for item in &results {
                mean_loss += item.loss;
                any_unconverged |= item.unconverged;
                for (acc, g) in mean_grads.iter_mut().zip(&item.grads) {
                    acc.add_assign(g);
                }
            }
            mean_loss *= scale;
            for g in mean_grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if any_unconverged {
                unconverged_batches += 1;
            }
            optimizer.step(&mut model.params, &mean_grads)?;
            epoch_loss += mean_loss;
        }
        epoch_loss /= cfg.training.batches_per_epoch as f64;
        if !model.all_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }

        let evaluate_now =
            (epoch + 1) % cfg.training.eval_interval == 0 || epoch + 1 == cfg.training.epochs;
        let (mut val_rmse, mut val_struct, mut val_objective) = (None, None, None);
        if evaluate_now {
            let (rmse, structural) =
                validate(&model, encoder.as_ref(), dataset, cfg, &ctx, epoch)?;
            let weight = match cfg.training.objective {
                ObjectiveKind::Rmse => 0.0,
                ObjectiveKind::SinkhornRmse => cfg.loss.alpha,
                ObjectiveKind::FeatureRmse => cfg.loss.lambda,
            };
            let objective = rmse + weight * structural.unwrap_or(0.0);
            if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
                best = Some((objective, epoch, model.clone()));
            }
            val_rmse = Some(rmse);
            val_struct = structural;
            val_objective = Some(objective);
        }
        log.push(TrainLogRow {
            epoch,
            train_loss: epoch_loss,
            val_rmse,
            val_struct,
            val_objective,
        });
    }

    let (best_obj, best_epoch, best_model) = best.ok_or_else(|| {
        Error::Config("training produced no validation point to select a checkpoint".into())
    })?;
    let _ = best_obj;
    Ok(TrainOutcome {
        best: best_model,
        fin: model,
        best_epoch,
        log,
        unconverged_batches,
    })
}

pub fn write_train_log(log: &[TrainLogRow], out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_rmse,val_struct,val_objective")?;
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.epoch,
            row.train_loss,
            fmt(&row.val_rmse),
            fmt(&row.val_struct),
            fmt(&row.val_objective)
        )?;
    }
    Ok(())
}
