//! The two reference chaotic systems, their integrators, environment
//! sampling, and the measurement-noise model behind every dataset.

pub mod ks;
pub mod lorenz96;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

/// Deterministic sub-seed derivation (splitmix64 over seed + stream).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Lorenz96,
    KuramotoSivashinsky,
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemKind::Lorenz96 => write!(f, "lorenz96"),
            SystemKind::KuramotoSivashinsky => write!(f, "kuramoto_sivashinsky"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// Component count (Lorenz-96) or spatial grid size (KS).
    pub dim: usize,
    /// Periodic domain length; only meaningful for KS.
    pub domain_length: f64,
    /// Recording interval between stored frames.
    pub dt: f64,
    /// Integration substeps per recorded frame. A single step of `dt` is
    /// unstable on the more energetic attractors (L96 beyond F ~ 12, KS on
    /// fine grids), so the integrators take `substeps` steps of
    /// `dt / substeps` between recordings.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub spinup_steps: usize,
}

fn default_substeps() -> usize {
    5
}

impl SystemSpec {
    pub fn lorenz96(dim: usize, dt: f64, spinup_steps: usize) -> Self {
        SystemSpec {
            kind: SystemKind::Lorenz96,
            dim,
            domain_length: 0.0,
            dt,
            substeps: default_substeps(),
            spinup_steps,
        }
    }

    pub fn kuramoto_sivashinsky(
        dim: usize,
        domain_length: f64,
        dt: f64,
        spinup_steps: usize,
    ) -> Self {
        SystemSpec {
            kind: SystemKind::KuramotoSivashinsky,
            dim,
            domain_length,
            dt,
            substeps: default_substeps(),
            spinup_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        match self.kind {
            SystemKind::Lorenz96 => {
                if self.dim < 4 {
                    return Err(Error::Config(format!(
                        "lorenz96 needs dimension >= 4 for its cyclic stencil, got {}",
                        self.dim
                    )));
                }
            }
            SystemKind::KuramotoSivashinsky => {
                if !self.dim.is_power_of_two() {
                    return Err(Error::Config(format!(
                        "kuramoto_sivashinsky grid size must be a power of two, got {}",
                        self.dim
                    )));
                }
                if self.domain_length <= 0.0 {
                    return Err(Error::Config(format!(
                        "domain length must be positive, got {}",
                        self.domain_length
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentParam {
    /// Forcing F for Lorenz-96, viscosity coefficient for KS.
    pub phi: f64,
    pub env_id: u32,
}

/// One environment's recorded time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub env: EnvironmentParam,
    /// Observed (noisy) states, `[T+1, dim]`.
    pub states: Tensor,
    /// Noise-free states when retained at generation time.
    pub clean_states: Option<Tensor>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Trajectory {
    /// Post-spinup length T (states hold T+1 frames).
    pub fn t_len(&self) -> usize {
        self.states.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    /// Noise-free states, falling back to the observations when the clean
    /// record was not kept.
    pub fn clean(&self) -> &Tensor {
        self.clean_states.as_ref().unwrap_or(&self.states)
    }
}

/// Environment parameters drawn i.i.d. uniform from `[lo, hi)`.
pub fn sample_environments(count: usize, range: (f64, f64), seed: u64) -> Result<Vec<EnvironmentParam>> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::Config(format!(
            "environment range must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..count)
        .map(|i| EnvironmentParam {
            phi: dist.sample(&mut rng),
            env_id: i as u32,
        })
        .collect())
}

/// Add measurement noise `N(0, (r * sigma)^2)` where `sigma` is the scalar
/// standard deviation over every entry of this trajectory's clean states.
pub fn add_noise(states: &Tensor, r: f64, seed: u64) -> Tensor {
    if r == 0.0 {
        return states.clone();
    }
    let sigma = states.std();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = states.clone();
    for v in out.data_mut() {
        let eta: f64 = rng.sample(StandardNormal);
        *v += r * sigma * eta;
    }
    out
}

/// Integrate `steps` steps from `u0`, returning `[steps+1, dim]` including the
/// initial state. Divergence is reported with the offending step index.
pub fn simulate(spec: &SystemSpec, phi: f64, u0: &[f64], steps: usize) -> Result<Tensor> {
    spec.validate()?;
    if u0.len() != spec.dim {
        return Err(Error::Shape {
            op: "simulate".into(),
            expected: format!("[{}]", spec.dim),
            got: format!("[{}]", u0.len()),
        });
    }
    let d = spec.dim;
    let dt_inner = spec.dt / spec.substeps as f64;
    let mut out = Tensor::zeros(&[steps + 1, d]);
    match spec.kind {
        SystemKind::Lorenz96 => {
            let mut u = u0.to_vec();
            out.row_mut(0).copy_from_slice(&u);
            for s in 0..steps {
                for _ in 0..spec.substeps {
                    u = lorenz96::rk4_step(&u, phi, dt_inner)?;
                }
                if !u.iter().all(|v| v.is_finite()) {
                    return Err(Error::IntegrationDiverged {
                        step: s + 1,
                        env_id: None,
                    });
                }
                out.row_mut(s + 1).copy_from_slice(&u);
            }
        }
        SystemKind::KuramotoSivashinsky => {
            let stepper = ks::KsIntegrator::new(d, spec.domain_length, phi, dt_inner);
            let mut uhat = crate::diffcore::fft::rfft(u0);
            out.row_mut(0).copy_from_slice(u0);
            for s in 0..steps {
                for _ in 0..spec.substeps {
                    uhat = stepper.step(&uhat);
                }
                let u = crate::diffcore::fft::irfft(&uhat, d);
                if !u.iter().all(|v| v.is_finite()) {
                    return Err(Error::IntegrationDiverged {
                        step: s + 1,
                        env_id: None,
                    });
                }
                out.row_mut(s + 1).copy_from_slice(&u);
            }
        }
    }
    Ok(out)
}

/// Seeded initial condition for a system: standard normal entries for
/// Lorenz-96, uniform `[-pi, pi]` grid values for KS.
pub fn initial_condition(spec: &SystemSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec.kind {
        SystemKind::Lorenz96 => (0..spec.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
        SystemKind::KuramotoSivashinsky => {
            let dist = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI).unwrap();
            (0..spec.dim).map(|_| dist.sample(&mut rng)).collect()
        }
    }
}

/// Generate one environment's trajectory: integrate from a seeded random
/// initial condition, drop the spin-up states, keep `t_len + 1` clean frames
/// and their noisy observation.
pub fn generate_trajectory(
    spec: &SystemSpec,
    env: EnvironmentParam,
    t_len: usize,
    r: f64,
    seed: u64,
) -> Result<Trajectory> {
    if t_len < 1 {
        return Err(Error::Config("trajectory length must be at least 1".into()));
    }
    if r < 0.0 {
        return Err(Error::Config(format!("noise scale must be >= 0, got {r}")));
    }
    let u0 = initial_condition(spec, derive_seed(seed, 0));
    let total = spec.spinup_steps + t_len;
    let all = simulate(spec, env.phi, &u0, total).map_err(|e| match e {
        Error::IntegrationDiverged { step, .. } => Error::IntegrationDiverged {
            step,
            env_id: Some(env.env_id),
        },
        other => other,
    })?;
    let d = spec.dim;
    let clean = Tensor::from_vec(
        &[t_len + 1, d],
        all.data()[spec.spinup_steps * d..].to_vec(),
    );
    let noisy = add_noise(&clean, r, derive_seed(seed, 1));
    Ok(Trajectory {
        env,
        states: noisy,
        clean_states: Some(clean),
        noise_scale: r,
        seed,
    })
}
