//! Dataset persistence, training windows, and contrastive pair sampling.
//!
//! On disk a dataset is a directory holding `meta.json` plus one raw
//! little-endian f64 file per trajectory (`traj_<env_id>.f64`, row-major
//! `[time, space]`), with `clean_<env_id>.f64` alongside when the noise-free
//! record was kept. Round trips are bit-exact.

use crate::dynsys::{derive_seed, EnvironmentParam, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::tensor::{from_le_bytes, to_le_bytes, Tensor};
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryMeta {
    env_id: u32,
    phi: f64,
    seed: u64,
    split: Split,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    tool_version: String,
    system: SystemSpec,
    t_len: usize,
    noise_r: f64,
    env_range: [f64; 2],
    dataset_seed: u64,
    dtype: String,
    endianness: String,
    has_clean: bool,
    trajectories: Vec<TrajectoryMeta>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub t_len: usize,
    pub noise_r: f64,
    pub env_range: (f64, f64),
    pub dataset_seed: u64,
    trajectories: Vec<Trajectory>,
    splits: Vec<Split>,
}

/// A `[K+1, dim]` view into one trajectory, identified by indices rather than
/// borrowed data so it stays `Copy` and thread-friendly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub traj_idx: usize,
    pub env_id: u32,
    pub start: usize,
    /// K: the window covers frames `start ..= start + k`.
    pub k: usize,
}

impl Dataset {
    pub fn new(
        spec: SystemSpec,
        t_len: usize,
        noise_r: f64,
        env_range: (f64, f64),
        dataset_seed: u64,
        trajectories: Vec<Trajectory>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let ds = Dataset {
            spec,
            t_len,
            noise_r,
            env_range,
            dataset_seed,
            trajectories,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Generate every environment's trajectory (in parallel) and assign
    /// 80/10/10 train/val/test tags by environment.
    pub fn generate(
        spec: &SystemSpec,
        envs: &[EnvironmentParam],
        t_len: usize,
        noise_r: f64,
        env_range: (f64, f64),
        dataset_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let trajectories: Vec<Trajectory> = envs
            .par_iter()
            .map(|env| {
                crate::dynsys::generate_trajectory(
                    spec,
                    *env,
                    t_len,
                    noise_r,
                    derive_seed(dataset_seed, u64::from(env.env_id)),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let splits = assign_splits(envs.len(), dataset_seed);
        Dataset::new(
            *spec,
            t_len,
            noise_r,
            env_range,
            dataset_seed,
            trajectories,
            splits,
        )
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let expect = [self.t_len + 1, self.spec.dim];
        for traj in &self.trajectories {
            if traj.states.shape() != expect {
                return Err(Error::Shape {
                    op: format!("dataset trajectory {}", traj.env.env_id),
                    expected: format!("{expect:?}"),
                    got: format!("{:?}", traj.states.shape()),
                });
            }
            if !seen.insert(traj.env.env_id) {
                return Err(Error::Config(format!(
                    "duplicate env_id {} in dataset",
                    traj.env.env_id
                )));
            }
        }
        if self.splits.len() != self.trajectories.len() {
            return Err(Error::Config("split tags out of sync with trajectories".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn get(&self, idx: usize) -> &Trajectory {
        &self.trajectories[idx]
    }

    pub fn split_of(&self, idx: usize) -> Split {
        self.splits[idx]
    }

    /// Trajectory indices carrying the given split tag.
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Noisy frames of a window as an owned `[K+1, dim]` tensor.
    pub fn window_frames(&self, w: &Window) -> Tensor {
        frames_of(&self.trajectories[w.traj_idx].states, w)
    }

    /// Clean frames of a window (observations when no clean record exists).
    pub fn window_clean_frames(&self, w: &Window) -> Tensor {
        frames_of(self.trajectories[w.traj_idx].clean(), w)
    }

    /// Uniform windows over `(trajectory, start index)`, deterministic in the
    /// seed. Restricted to `split` when given.
    pub fn sample_windows(
        &self,
        k: usize,
        batch: usize,
        seed: u64,
        split: Option<Split>,
    ) -> Result<Vec<Window>> {
        let pool = self.sampling_pool(split)?;
        if k > self.t_len {
            return Err(Error::Config(format!(
                "window length K={k} exceeds trajectory length T={}",
                self.t_len
            )));
        }
        let starts = self.t_len - k + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..batch)
            .map(|_| {
                let traj_idx = pool[rng.random_range(0..pool.len())];
                Window {
                    traj_idx,
                    env_id: self.trajectories[traj_idx].env.env_id,
                    start: rng.random_range(0..starts),
                    k,
                }
            })
            .collect())
    }

    /// Positive pairs for contrastive training: each pair is two
    /// independently started windows of one trajectory, with at most one pair
    /// per environment so every other pair in the batch is a valid negative.
    pub fn sample_contrastive_batch(
        &self,
        k: usize,
        batch: usize,
        seed: u64,
        split: Option<Split>,
    ) -> Result<Vec<(Window, Window)>> {
        let pool = self.sampling_pool(split)?;
        if k > self.t_len {
            return Err(Error::Config(format!(
                "window length K={k} exceeds trajectory length T={}",
                self.t_len
            )));
        }
        if batch > pool.len() {
            return Err(Error::Config(format!(
                "contrastive batch of {batch} needs as many distinct environments, have {}",
                pool.len()
            )));
        }
        let starts = self.t_len - k + 1;
        if starts < 2 {
            return Err(Error::Config(
                "contrastive sampling needs at least two distinct start indices".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = index_sample(&mut rng, pool.len(), batch);
        Ok(chosen
            .iter()
            .map(|j| {
                let traj_idx = pool[j];
                let env_id = self.trajectories[traj_idx].env.env_id;
                let a = Window {
                    traj_idx,
                    env_id,
                    start: rng.random_range(0..starts),
                    k,
                };
                let b = Window {
                    traj_idx,
                    env_id,
                    start: rng.random_range(0..starts),
                    k,
                };
                (a, b)
            })
            .collect())
    }

    fn sampling_pool(&self, split: Option<Split>) -> Result<Vec<usize>> {
        let pool = match split {
            Some(s) => self.indices_of(s),
            None => (0..self.len()).collect(),
        };
        if pool.is_empty() {
            return Err(Error::Config(match split {
                Some(s) => format!("no trajectories in split {s:?}"),
                None => "dataset is empty".into(),
            }));
        }
        Ok(pool)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let has_clean = self.trajectories.iter().any(|t| t.clean_states.is_some());
        let meta = DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            system: self.spec,
            t_len: self.t_len,
            noise_r: self.noise_r,
            env_range: [self.env_range.0, self.env_range.1],
            dataset_seed: self.dataset_seed,
            dtype: "f64".into(),
            endianness: "little".into(),
            has_clean,
            trajectories: self
                .trajectories
                .iter()
                .zip(&self.splits)
                .map(|(t, s)| TrajectoryMeta {
                    env_id: t.env.env_id,
                    phi: t.env.phi,
                    seed: t.seed,
                    split: *s,
                    shape: [t.states.rows(), t.states.cols()],
                })
                .collect(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        for t in &self.trajectories {
            fs::write(
                dir.join(format!("traj_{}.f64", t.env.env_id)),
                to_le_bytes(t.states.data()),
            )?;
            if let Some(clean) = &t.clean_states {
                fs::write(
                    dir.join(format!("clean_{}.f64", t.env.env_id)),
                    to_le_bytes(clean.data()),
                )?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: meta.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let expect = [meta.t_len + 1, meta.system.dim];
        let mut trajectories = Vec::with_capacity(meta.trajectories.len());
        let mut splits = Vec::with_capacity(meta.trajectories.len());
        for tm in &meta.trajectories {
            if tm.shape != expect {
                return Err(Error::DataShape {
                    path: format!("traj_{}.f64", tm.env_id),
                    expected: expect.iter().product(),
                    got: tm.shape.iter().product(),
                });
            }
            let states = read_states(dir, &format!("traj_{}.f64", tm.env_id), expect)?;
            let clean_states = if meta.has_clean {
                Some(read_states(dir, &format!("clean_{}.f64", tm.env_id), expect)?)
            } else {
                None
            };
            trajectories.push(Trajectory {
                env: EnvironmentParam {
                    phi: tm.phi,
                    env_id: tm.env_id,
                },
                states,
                clean_states,
                noise_scale: meta.noise_r,
                seed: tm.seed,
            });
            splits.push(tm.split);
        }
        Dataset::new(
            meta.system,
            meta.t_len,
            meta.noise_r,
            (meta.env_range[0], meta.env_range[1]),
            meta.dataset_seed,
            trajectories,
            splits,
        )
    }
}

fn frames_of(states: &Tensor, w: &Window) -> Tensor {
    let d = states.cols();
    assert!(
        w.start + w.k < states.rows(),
        "window [{}, {}] out of bounds for T={}",
        w.start,
        w.start + w.k,
        states.rows() - 1
    );
    Tensor::from_vec(
        &[w.k + 1, d],
        states.data()[w.start * d..(w.start + w.k + 1) * d].to_vec(),
    )
}

fn read_states(dir: &Path, name: &str, expect: [usize; 2]) -> Result<Tensor> {
    let path = dir.join(name);
    let bytes = fs::read(&path)?;
    let want = expect[0] * expect[1] * 8;
    if bytes.len() != want {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected: want,
            found: bytes.len(),
        });
    }
    Ok(Tensor::from_vec(&expect, from_le_bytes(&bytes)))
}

/// By-environment split tags: a seeded shuffle of the indices, first 80%
/// train, next 10% validation, rest test.
fn assign_splits(n: usize, dataset_seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(dataset_seed, 0x51d));
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let mut splits = vec![Split::Train; n];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{sample_environments, SystemSpec};

    fn small_dataset(n_envs: usize, t_len: usize, r: f64, seed: u64) -> Dataset {
        let spec = SystemSpec::lorenz96(8, 0.05, 5);
        let envs = sample_environments(n_envs, (10.0, 18.0), seed).unwrap();
        Dataset::generate(&spec, &envs, t_len, r, (10.0, 18.0), seed).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let ds = small_dataset(4, 30, 0.2, 3);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        ds.save(&a).unwrap();
        let loaded = Dataset::load(&a).unwrap();
        assert_eq!(loaded.len(), ds.len());
        for (x, y) in loaded.trajectories().iter().zip(ds.trajectories()) {
            assert_eq!(x, y);
        }
        // Re-saving the loaded dataset must reproduce every byte.
        loaded.save(&b).unwrap();
        let mut names: Vec<String> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.len() > 1);
        for name in names {
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let spec = SystemSpec::lorenz96(8, 0.05, 5);
        let ds = Dataset::new(spec, 30, 0.0, (10.0, 18.0), 0, vec![], vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn edited_meta_shape_is_rejected() {
        let ds = small_dataset(2, 20, 0.0, 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join("meta.json")).unwrap();
        let tampered = meta.replacen("21,", "22,", 1);
        assert_ne!(meta, tampered, "test fixture failed to edit the shape");
        fs::write(dir.path().join("meta.json"), tampered).unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::DataShape { .. })
        ));
    }

    #[test]
    fn truncated_trajectory_file_is_rejected() {
        let ds = small_dataset(2, 20, 0.0, 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let path = dir.path().join("traj_0.f64");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn version_bump_is_rejected() {
        let ds = small_dataset(1, 10, 0.0, 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join("meta.json")).unwrap();
        fs::write(
            dir.path().join("meta.json"),
            meta.replace("\"format_version\": 1", "\"format_version\": 2"),
        )
        .unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::FormatVersion { found: 2, .. })
        ));
    }

    #[test]
    fn windows_are_uniform_and_in_bounds() {
        let ds = small_dataset(3, 12, 0.0, 9);
        let k = 3;
        // K = T forces start 0.
        for w in ds.sample_windows(12, 20, 1, None).unwrap() {
            assert_eq!(w.start, 0);
        }
        assert!(ds.sample_windows(13, 1, 1, None).is_err());
        assert_eq!(
            ds.sample_windows(k, 8, 4, None).unwrap(),
            ds.sample_windows(k, 8, 4, None).unwrap()
        );

        // Chi-square-style sanity: T - K + 1 = 10 start positions.
        let draws = 100_000;
        let starts = 10;
        let mut counts = vec![0usize; starts];
        for w in ds.sample_windows(k, draws, 77, None).unwrap() {
            assert!(w.start + w.k <= ds.t_len);
            counts[w.start] += 1;
        }
        let p = 1.0 / starts as f64;
        let se = (p * (1.0 - p) * draws as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - draws as f64 * p).abs();
            assert!(dev < 3.0 * se, "start {i}: count {c} deviates {dev:.1}");
        }
    }

    #[test]
    fn contrastive_pairs_share_environment() {
        let ds = small_dataset(5, 20, 0.1, 13);
        let pairs = ds.sample_contrastive_batch(4, 5, 21, None).unwrap();
        assert_eq!(pairs.len(), 5);
        let mut seen = std::collections::HashSet::new();
        for (a, b) in &pairs {
            assert_eq!(a.env_id, b.env_id);
            assert!(seen.insert(a.env_id), "duplicate environment in batch");
        }
        assert!(ds.sample_contrastive_batch(4, 6, 21, None).is_err());
        let single = ds.sample_contrastive_batch(4, 1, 3, None).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn contrastive_start_overlap_matches_enumeration() {
        let t_len = 12;
        let k = 4;
        let ds = small_dataset(2, t_len, 0.0, 31);
        // Oracle: I, J iid uniform on {0..S-1}; windows share a frame iff
        // |I - J| <= K.
        let s = t_len - k + 1;
        let mut favorable = 0;
        for i in 0..s {
            for j in 0..s {
                if i.abs_diff(j) <= k {
                    favorable += 1;
                }
            }
        }
        let expect = favorable as f64 / (s * s) as f64;

        let draws = 40_000u64;
        let mut overlap = 0;
        for trial in 0..draws {
            let pairs = ds.sample_contrastive_batch(k, 1, 1000 + trial, None).unwrap();
            let (a, b) = pairs[0];
            if a.start.abs_diff(b.start) <= k {
                overlap += 1;
            }
        }
        let freq = overlap as f64 / draws as f64;
        let se = (expect * (1.0 - expect) / draws as f64).sqrt();
        assert!(
            (freq - expect).abs() < 3.0 * se,
            "overlap {freq:.4} vs analytic {expect:.4}"
        );
    }

    #[test]
    fn splits_partition_by_environment() {
        let ds = small_dataset(20, 10, 0.0, 41);
        let train = ds.indices_of(Split::Train).len();
        let val = ds.indices_of(Split::Val).len();
        let test = ds.indices_of(Split::Test).len();
        assert_eq!(train + val + test, 20);
        assert_eq!(train, 16);
        assert_eq!(val, 2);
        assert_eq!(test, 2);
    }
}
