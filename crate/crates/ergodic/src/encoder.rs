//! Self-supervised sequence encoder: a small strided CNN over `[time, space]`
//! windows trained with the InfoNCE objective so that windows from the same
//! trajectory embed close together. Its per-layer feature maps feed the
//! feature loss used for emulator training.

use crate::datastore::{Dataset, Split};
use crate::diffcore::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diffcore::optim::AdamW;
use crate::diffcore::{ops, DiffArray, Tape};
use crate::dynsys::derive_seed;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderHyper {
    /// Frames per input window (K+1); longer windows are cropped to this.
    pub window_len: usize,
    /// Spatial dimension d of each frame.
    pub dim: usize,
    /// Output channels per strided conv block; the depth is the feature-loss
    /// scale count and must be at least 3.
    pub channels: Vec<usize>,
    pub embed_dim: usize,
    /// Input standardization fitted on the training split.
    pub input_mean: f64,
    pub input_std: f64,
}

impl EncoderHyper {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 3 {
            return Err(Error::Config(format!(
                "encoder needs at least 3 conv blocks for multi-scale features, got {}",
                self.channels.len()
            )));
        }
        if self.window_len == 0 || self.dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.input_std <= 0.0 {
            return Err(Error::Config("encoder input std must be positive".into()));
        }
        Ok(())
    }

    /// Number of feature scales: conv blocks plus the embedding.
    pub fn feature_count(&self) -> usize {
        self.channels.len() + 1
    }
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub hyper: EncoderHyper,
    pub params: Vec<(String, Tensor)>,
}

pub struct BoundEncoder<'m> {
    model: &'m EncoderModel,
    pub handles: Vec<DiffArray>,
    tape: Tape,
}

/// Contrastive temperature: a low warm-up value that sharpens hard negatives,
/// stepping up at the warm-up boundary to promote grouping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl TemperatureSchedule {
    /// The defaults: 0.3 for the first half of training, 0.7 after.
    pub fn standard(total_epochs: usize) -> Self {
        TemperatureSchedule {
            tau_start: 0.3,
            tau_end: 0.7,
            warmup_epochs: total_epochs / 2,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_start > 0.0 && self.tau_start <= self.tau_end) {
            return Err(Error::Config(format!(
                "temperature schedule needs 0 < tau_start <= tau_end, got {} and {}",
                self.tau_start, self.tau_end
            )));
        }
        Ok(())
    }

    pub fn tau_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            self.tau_start
        } else {
            self.tau_end
        }
    }
}

impl EncoderModel {
    pub fn new(hyper: EncoderHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut randn = |shape: &[usize], std: f64| -> Tensor {
            let n: usize = shape.iter().product();
            Tensor::from_vec(
                shape,
                (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                    .collect(),
            )
        };
        let mut params = Vec::new();
        let mut c_in = 1;
        for (b, &c_out) in hyper.channels.iter().enumerate() {
            let fan_in = (c_in * 9) as f64;
            params.push((
                format!("block{b}.weight"),
                randn(&[c_out, c_in, 3, 3], (2.0 / fan_in).sqrt()),
            ));
            params.push((format!("block{b}.bias"), Tensor::zeros(&[c_out])));
            c_in = c_out;
        }
        params.push((
            "head.weight".into(),
            randn(&[hyper.embed_dim, c_in], (1.0 / c_in as f64).sqrt()),
        ));
        params.push(("head.bias".into(), Tensor::zeros(&[hyper.embed_dim])));
        Ok(EncoderModel { hyper, params })
    }

    pub fn bind(&self, tape: &Tape) -> BoundEncoder<'_> {
        BoundEncoder {
            model: self,
            handles: self.params.iter().map(|(_, t)| tape.param(t.clone())).collect(),
            tape: tape.clone(),
        }
    }

    pub fn bind_frozen(&self, tape: &Tape) -> BoundEncoder<'_> {
        BoundEncoder {
            model: self,
            handles: self
                .params
                .iter()
                .map(|(_, t)| tape.constant(t.clone()))
                .collect(),
            tape: tape.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, "encoder", &self.hyper, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(dir)?;
        if ckpt.kind != "encoder" {
            return Err(Error::Config(format!(
                "checkpoint at {} holds a {} model, not an encoder",
                dir.display(),
                ckpt.kind
            )));
        }
        let hyper: EncoderHyper = serde_json::from_value(ckpt.hyper)?;
        hyper.validate()?;
        Ok(EncoderModel {
            hyper,
            params: ckpt.params,
        })
    }

    /// Per-layer feature maps plus the final embedding for a plain window,
    /// all channel-normalized (unit L2 over channels at every position).
    pub fn features(&self, window: &Tensor) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let node = tape.constant(window.clone());
        let (maps, embedding) = bound.features_node(&node)?;
        let mut out: Vec<Tensor> = maps.iter().map(DiffArray::value).collect();
        out.push(embedding.value());
        Ok(out)
    }

    /// Embedding of a plain window.
    pub fn embed(&self, window: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let node = tape.constant(window.clone());
        Ok(bound.embed_node(&node)?.value())
    }
}

impl BoundEncoder<'_> {
    fn param(&self, name: &str) -> &DiffArray {
        let idx = self
            .model
            .params
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.handles[idx]
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn hyper(&self) -> &EncoderHyper {
        &self.model.hyper
    }

    /// Crop to the trained window length and standardize.
    fn prepare(&self, window: &DiffArray) -> Result<DiffArray> {
        let hyper = &self.model.hyper;
        let shape = window.shape();
        if shape.len() != 2 || shape[1] != hyper.dim {
            return Err(Error::Shape {
                op: "encoder input".into(),
                expected: format!("[>= {}, {}]", hyper.window_len, hyper.dim),
                got: format!("{shape:?}"),
            });
        }
        if shape[0] < hyper.window_len {
            return Err(Error::Config(format!(
                "encoder window needs at least {} frames, got {}",
                hyper.window_len, shape[0]
            )));
        }
        let cropped = if shape[0] > hyper.window_len {
            ops::slice_axis0(window, 0, hyper.window_len)?
        } else {
            window.clone()
        };
        let std = ops::scale(
            &ops::add_scalar(&cropped, -hyper.input_mean),
            1.0 / hyper.input_std,
        );
        ops::reshape(&std, &[1, hyper.window_len, hyper.dim])
    }

    /// Channel-normalized feature maps (one per conv block) and the
    /// L2-normalized embedding.
    pub fn features_node(&self, window: &DiffArray) -> Result<(Vec<DiffArray>, DiffArray)> {
        let mut h = self.prepare(window)?;
        let mut maps = Vec::with_capacity(self.model.hyper.channels.len());
        for b in 0..self.model.hyper.channels.len() {
            let conv = ops::conv2d(
                &h,
                self.param(&format!("block{b}.weight")),
                self.param(&format!("block{b}.bias")),
                2,
                1,
            )?;
            h = ops::gelu(&conv);
            maps.push(ops::normalize_axis0(&h)?);
        }
        let shape = h.shape();
        let (c, s) = (shape[0], shape[1] * shape[2]);
        let pooled = ops::mean_axis1(&ops::reshape(&h, &[c, s])?)?;
        let logits = ops::bias_add_rows(
            &ops::matmul(self.param("head.weight"), &ops::reshape(&pooled, &[c, 1])?)?,
            self.param("head.bias"),
        )?;
        let embedding = ops::normalize_rows(&ops::reshape(
            &logits,
            &[self.model.hyper.embed_dim],
        )?)?;
        Ok((maps, embedding))
    }

    pub fn embed_node(&self, window: &DiffArray) -> Result<DiffArray> {
        Ok(self.features_node(window)?.1)
    }
}

/// InfoNCE over batched embeddings: alignment of each anchor with its own
/// positive against the mean similarity to the other pairs' positives.
pub fn infonce_loss(anchors: &DiffArray, positives: &DiffArray, tau: f64) -> Result<DiffArray> {
    let (a, p) = (anchors.shape(), positives.shape());
    if a != p || a.len() != 2 {
        return Err(Error::Shape {
            op: "infonce_loss".into(),
            expected: format!("{a:?}"),
            got: format!("{p:?}"),
        });
    }
    let sim = ops::matmul(anchors, &ops::transpose2d(positives)?)?;
    ops::infonce_from_sim(&sim, tau)
}

/// Fraction of queries whose nearest candidate embedding (inner product)
/// shares the query's index; ties break toward the lower index.
pub fn top1_accuracy(
    encoder: &EncoderModel,
    queries: &[Tensor],
    candidates: &[Tensor],
) -> Result<f64> {
    if queries.len() != candidates.len() || queries.is_empty() {
        return Err(Error::Config(format!(
            "top-1 needs equally many queries and candidates, got {} and {}",
            queries.len(),
            candidates.len()
        )));
    }
    let q_emb: Vec<Tensor> = queries
        .iter()
        .map(|w| encoder.embed(w))
        .collect::<Result<_>>()?;
    let c_emb: Vec<Tensor> = candidates
        .iter()
        .map(|w| encoder.embed(w))
        .collect::<Result<_>>()?;
    let mut hits = 0;
    for (n, q) in q_emb.iter().enumerate() {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (j, c) in c_emb.iter().enumerate() {
            let score: f64 = q.data().iter().zip(c.data()).map(|(x, y)| x * y).sum();
            if score > best_score {
                best_score = score;
                best = j;
            }
        }
        if best == n {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Crop length K; windows span K+1 frames.
    pub crop_k: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub eval_interval: usize,
    pub seed: u64,
    pub channels: Vec<usize>,
    pub embed_dim: usize,
}

impl EncoderTrainConfig {
    /// Crop length defaulting to 5% of the trajectory length.
    pub fn for_dataset(dataset: &Dataset, epochs: usize, seed: u64) -> Self {
        EncoderTrainConfig {
            epochs,
            batch: 8,
            crop_k: ((dataset.t_len as f64) * 0.05).ceil() as usize,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            eval_interval: 50,
            seed,
            channels: vec![8, 16, 32],
            embed_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLogRow {
    pub epoch: usize,
    pub tau: f64,
    pub loss: f64,
    pub top1: Option<f64>,
}

/// One query and one candidate window per evaluation environment, index
/// aligned for [`top1_accuracy`].
pub fn build_eval_pairs(
    dataset: &Dataset,
    pool: &[usize],
    crop_k: usize,
    seed: u64,
) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = dataset.t_len - crop_k + 1;
    let mut queries = Vec::with_capacity(pool.len());
    let mut candidates = Vec::with_capacity(pool.len());
    for &idx in pool {
        let q = crate::datastore::Window {
            traj_idx: idx,
            env_id: dataset.get(idx).env.env_id,
            start: rng.random_range(0..starts),
            k: crop_k,
        };
        let c = crate::datastore::Window {
            start: rng.random_range(0..starts),
            ..q
        };
        queries.push(dataset.window_frames(&q));
        candidates.push(dataset.window_frames(&c));
    }
    (queries, candidates)
}

/// Train the encoder on contrastive batches from the training split. Returns
/// the model and a per-epoch log with periodic Top-1 accuracy on the
/// validation environments (training environments when no validation split
/// exists).
pub fn train_encoder(
    dataset: &Dataset,
    schedule: &TemperatureSchedule,
    cfg: &EncoderTrainConfig,
) -> Result<(EncoderModel, Vec<EncoderLogRow>)> {
    schedule.validate()?;
    let train_pool = dataset.indices_of(Split::Train);
    if train_pool.len() < 2 {
        return Err(Error::Config(format!(
            "contrastive training needs at least 2 training environments, have {}",
            train_pool.len()
        )));
    }
    let batch = cfg.batch.min(train_pool.len());
    let eval_pool = {
        let val = dataset.indices_of(Split::Val);
        if val.len() >= 2 {
            val
        } else {
            train_pool.clone()
        }
    };

    // Input standardization from the training split observations.
    let (mut acc, mut count) = (0.0, 0usize);
    for &i in &train_pool {
        acc += dataset.get(i).states.sum();
        count += dataset.get(i).states.len();
    }
    let mean = acc / count as f64;
    let mut var = 0.0;
    for &i in &train_pool {
        var += dataset
            .get(i)
            .states
            .data()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>();
    }
    let std = (var / count as f64).sqrt().max(1e-12);

    let hyper = EncoderHyper {
        window_len: cfg.crop_k + 1,
        dim: dataset.spec.dim,
        channels: cfg.channels.clone(),
        embed_dim: cfg.embed_dim,
        input_mean: mean,
        input_std: std,
    };
    let mut model = EncoderModel::new(hyper, derive_seed(cfg.seed, 0))?;
    let mut optimizer = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let tau = schedule.tau_at(epoch);
        let pairs = dataset.sample_contrastive_batch(
            cfg.crop_k,
            batch,
            derive_seed(cfg.seed, 1 + epoch as u64),
            Some(Split::Train),
        )?;
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let mut anchor_rows = Vec::with_capacity(pairs.len());
        let mut positive_rows = Vec::with_capacity(pairs.len());
        for (a, p) in &pairs {
            let aw = tape.constant(dataset.window_frames(a));
            let pw = tape.constant(dataset.window_frames(p));
            anchor_rows.push(ops::reshape(
                &bound.embed_node(&aw)?,
                &[1, model.hyper.embed_dim],
            )?);
            positive_rows.push(ops::reshape(
                &bound.embed_node(&pw)?,
                &[1, model.hyper.embed_dim],
            )?);
        }
        let anchors = ops::concat_axis0(&anchor_rows)?;
        let positives = ops::concat_axis0(&positive_rows)?;
        let loss = infonce_loss(&anchors, &positives, tau)?;
        let loss_value = loss.item();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let grads = tape.backward(&loss);
        let grad_tensors: Vec<Tensor> = bound
            .handles
            .iter()
            .zip(&model.params)
            .map(|(h, (name, _))| {
                grads
                    .wrt(h)
                    .cloned()
                    .ok_or_else(|| Error::MissingGradient(name.clone()))
            })
            .collect::<Result<_>>()?;
        optimizer.step(&mut model.params, &grad_tensors)?;

        let top1 = if (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs {
            let (q, c) = build_eval_pairs(
                dataset,
                &eval_pool,
                cfg.crop_k,
                derive_seed(cfg.seed, 0x7091 + epoch as u64),
            );
            Some(top1_accuracy(&model, &q, &c)?)
        } else {
            None
        };
        log.push(EncoderLogRow {
            epoch,
            tau,
            loss: loss_value,
            top1,
        });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::fdcheck;

    fn tiny_hyper() -> EncoderHyper {
        EncoderHyper {
            window_len: 9,
            dim: 8,
            channels: vec![4, 6, 8],
            embed_dim: 5,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }

    fn random_window(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[rows, dim],
            (0..rows * dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    #[test]
    fn embedding_is_unit_norm() {
        let model = EncoderModel::new(tiny_hyper(), 1).unwrap();
        let emb = model.embed(&random_window(9, 8, 2)).unwrap();
        assert!((emb.sq_norm().sqrt() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn features_are_channel_normalized_and_counted() {
        let model = EncoderModel::new(tiny_hyper(), 3).unwrap();
        let feats = model.features(&random_window(9, 8, 4)).unwrap();
        assert_eq!(feats.len(), model.hyper.feature_count());
        for f in &feats[..3] {
            let c = f.shape()[0];
            let s: usize = f.shape()[1..].iter().product();
            for p in 0..s {
                let norm: f64 = (0..c).map(|ch| f.data()[ch * s + p].powi(2)).sum();
                assert!((norm.sqrt() - 1.0).abs() < 1e-8, "position {p}");
            }
        }
    }

    #[test]
    fn identical_windows_embed_identically() {
        let model = EncoderModel::new(tiny_hyper(), 5).unwrap();
        let w = random_window(9, 8, 6);
        assert_eq!(model.features(&w).unwrap(), model.features(&w).unwrap());
    }

    #[test]
    fn short_window_is_rejected_and_long_window_cropped() {
        let model = EncoderModel::new(tiny_hyper(), 7).unwrap();
        assert!(model.embed(&random_window(8, 8, 8)).is_err());
        let long = random_window(14, 8, 9);
        let cropped = Tensor::from_vec(&[9, 8], long.data()[..72].to_vec());
        assert_eq!(
            model.embed(&long).unwrap(),
            model.embed(&cropped).unwrap()
        );
    }

    #[test]
    fn infonce_two_orthogonal_pairs_hits_closed_form() {
        // Self-similarity 1, cross-similarity 0, tau 0.5: loss = -2.
        let tape = Tape::new();
        let a = tape.param(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let p = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let loss = infonce_loss(&a, &p, 0.5).unwrap();
        assert!((loss.item() - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn infonce_identical_embeddings_is_zero() {
        let tape = Tape::new();
        let row = vec![0.6, 0.8];
        let all = Tensor::from_vec(&[3, 2], [row.clone(), row.clone(), row].concat());
        let a = tape.param(all.clone());
        let p = tape.constant(all);
        let loss = infonce_loss(&a, &p, 0.7).unwrap();
        assert!(loss.item().abs() < 1e-12);
    }

    #[test]
    fn infonce_gradient_through_encoder_matches_finite_differences() {
        let model = EncoderModel::new(
            EncoderHyper {
                window_len: 5,
                dim: 6,
                channels: vec![2, 3, 4],
                embed_dim: 4,
                input_mean: 0.0,
                input_std: 1.0,
            },
            11,
        )
        .unwrap();
        let wa = random_window(5, 6, 12);
        let wb = random_window(5, 6, 13);
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
        let hyper = model.hyper.clone();
        let inputs: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
        let f = move |tape: &Tape, xs: &[DiffArray]| {
            let m = EncoderModel {
                hyper: hyper.clone(),
                params: names
                    .iter()
                    .cloned()
                    .zip(xs.iter().map(|x| x.value()))
                    .collect(),
            };
            let bound = BoundEncoder {
                model: &m,
                handles: xs.to_vec(),
                tape: tape.clone(),
            };
            let a = bound.embed_node(&tape.constant(wa.clone())).unwrap();
            let p = bound.embed_node(&tape.constant(wb.clone())).unwrap();
            let anchors = ops::reshape(&a, &[1, 4]).unwrap();
            let positives = ops::reshape(&p, &[1, 4]).unwrap();
            // Single pair: alignment term only, still exercises the full net.
            infonce_loss(&anchors, &positives, 0.5).unwrap()
        };
        let err = fdcheck::max_rel_error(f, &inputs, 30, 14);
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn temperature_schedule_steps_at_warmup_boundary() {
        let s = TemperatureSchedule::standard(2000);
        assert_eq!(s.tau_at(0), 0.3);
        assert_eq!(s.tau_at(999), 0.3);
        assert_eq!(s.tau_at(1000), 0.7);
        assert_eq!(s.tau_at(1999), 0.7);
        assert!(TemperatureSchedule {
            tau_start: 0.0,
            ..s
        }
        .validate()
        .is_err());
    }

    struct OneHot {
        n: usize,
    }

    impl OneHot {
        fn windows(&self) -> (Vec<Tensor>, Vec<Tensor>) {
            // Encoder-independent check data is built by the caller; here we
            // just need distinct inputs per environment.
            let q: Vec<Tensor> = (0..self.n).map(|i| {
                let mut t = Tensor::zeros(&[9, 8]);
                t.data_mut()[i % 72] = 1.0;
                t
            })
            .collect();
            (q.clone(), q)
        }
    }

    #[test]
    fn top1_is_perfect_when_candidates_equal_queries() {
        let model = EncoderModel::new(tiny_hyper(), 21).unwrap();
        let (q, c) = OneHot { n: 5 }.windows();
        // Identical windows embed identically, so every query matches itself;
        // distinct inputs keep other candidates strictly farther almost surely.
        let acc = top1_accuracy(&model, &q, &c).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn top1_tie_break_prefers_lowest_index() {
        // All candidates identical: every query scores every candidate the
        // same, so the scan keeps index 0. Enumerating N <= 5 by hand: only
        // query 0 is counted correct, accuracy exactly 1/N.
        let model = EncoderModel::new(tiny_hyper(), 23).unwrap();
        for n in 2..=5 {
            let w = random_window(9, 8, 100 + n as u64);
            let candidates = vec![w.clone(); n];
            let queries: Vec<Tensor> = (0..n).map(|i| random_window(9, 8, 200 + i as u64)).collect();
            let acc = top1_accuracy(&model, &queries, &candidates).unwrap();
            assert!((acc - 1.0 / n as f64).abs() < 1e-12, "n={n}: acc {acc}");
        }
    }

    #[test]
    fn top1_single_pair_is_degenerate_one() {
        let model = EncoderModel::new(tiny_hyper(), 25).unwrap();
        let w = random_window(9, 8, 300);
        assert_eq!(top1_accuracy(&model, &[w.clone()], &[w]).unwrap(), 1.0);
    }

    #[test]
    fn single_environment_training_is_rejected() {
        let spec = crate::dynsys::SystemSpec::lorenz96(8, 0.05, 2);
        let envs = crate::dynsys::sample_environments(1, (10.0, 18.0), 1).unwrap();
        let ds = Dataset::generate(&spec, &envs, 40, 0.0, (10.0, 18.0), 1).unwrap();
        let cfg = EncoderTrainConfig::for_dataset(&ds, 2, 1);
        let sched = TemperatureSchedule::standard(2);
        assert!(train_encoder(&ds, &sched, &cfg).is_err());
    }
}
