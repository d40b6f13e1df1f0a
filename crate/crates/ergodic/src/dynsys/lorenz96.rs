//! Lorenz-96 right-hand side and its classical RK4 stepper.

use crate::error::{Error, Result};

/// `du_i/dt = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + F` with cyclic indices.
pub fn lorenz96_rhs(u: &[f64], forcing: f64) -> Result<Vec<f64>> {
    let d = u.len();
    if d < 4 {
        return Err(Error::Config(format!(
            "lorenz96 needs dimension >= 4 for its cyclic stencil, got {d}"
        )));
    }
    let mut out = vec![0.0; d];
    for i in 0..d {
        let ip1 = (i + 1) % d;
        let im1 = (i + d - 1) % d;
        let im2 = (i + d - 2) % d;
        out[i] = (u[ip1] - u[im2]) * u[im1] - u[i] + forcing;
    }
    Ok(out)
}

/// One classical four-stage Runge-Kutta step.
pub fn rk4_step(u: &[f64], forcing: f64, dt: f64) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let d = u.len();
    let k1 = lorenz96_rhs(u, forcing)?;
    let mut stage = vec![0.0; d];
    for i in 0..d {
        stage[i] = u[i] + 0.5 * dt * k1[i];
    }
    let k2 = lorenz96_rhs(&stage, forcing)?;
    for i in 0..d {
        stage[i] = u[i] + 0.5 * dt * k2[i];
    }
    let k3 = lorenz96_rhs(&stage, forcing)?;
    for i in 0..d {
        stage[i] = u[i] + dt * k3[i];
    }
    let k4 = lorenz96_rhs(&stage, forcing)?;
    let mut out = vec![0.0; d];
    for i in 0..d {
        out[i] = u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_state_is_a_fixed_point() {
        for &f in &[0.0, 8.0, -3.5] {
            let u = vec![f; 12];
            let rhs = lorenz96_rhs(&u, f).unwrap();
            assert!(rhs.iter().all(|&v| v == 0.0));
            let next = rk4_step(&u, f, 0.1).unwrap();
            assert_eq!(next, u);
        }
    }

    #[test]
    fn unit_state_zero_forcing() {
        let rhs = lorenz96_rhs(&[1.0; 5], 0.0).unwrap();
        assert_eq!(rhs, vec![-1.0; 5]);
    }

    #[test]
    fn rhs_matches_scalar_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let d = 40;
        let f = 10.0;
        let u: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let rhs = lorenz96_rhs(&u, f).unwrap();
        for i in 0..d {
            let expect =
                (u[(i + 1) % d] - u[(i + d - 2) % d]) * u[(i + d - 1) % d] - u[i] + f;
            assert_eq!(rhs[i], expect, "component {i}");
        }
    }

    #[test]
    fn dimension_below_four_rejected() {
        assert!(lorenz96_rhs(&[1.0, 2.0, 3.0], 8.0).is_err());
    }

    #[test]
    fn rk4_self_convergence_is_fourth_order() {
        // Global error against a fine reference should shrink ~16x per halving.
        let d = 40;
        let f = 8.0;
        let mut u0 = vec![f; d];
        u0[0] += 0.01;
        let horizon = 0.4;
        let run = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            let mut u = u0.clone();
            for _ in 0..steps {
                u = rk4_step(&u, f, dt).unwrap();
            }
            u
        };
        let reference = run(0.05 / 16.0);
        let err = |u: &[f64]| {
            u.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let ratio = err(&run(0.05)) / err(&run(0.025));
        assert!(
            (12.0..=20.0).contains(&ratio),
            "convergence ratio {ratio} outside [12, 20]"
        );
    }

    #[test]
    fn long_run_stays_bounded() {
        let d = 40;
        let f = 8.0;
        // Same 100-time-unit horizon at dt and dt/2.
        for &(dt, steps) in &[(0.1, 1000), (0.05, 2000)] {
            let mut u = vec![f; d];
            u[0] += 0.01;
            let mut max_abs: f64 = 0.0;
            for _ in 0..steps {
                u = rk4_step(&u, f, dt).unwrap();
                max_abs = max_abs.max(u.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
            assert!(max_abs < 20.0, "dt={dt}: |u| reached {max_abs}");
        }
    }
}
