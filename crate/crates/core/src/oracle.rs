//! Closed-form references for the Maxwellian case and the finite-N
//! self-convergence table.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::integrator::simulate;
use crate::transport::w2_subsampled;
use crate::{KacError, Result, Vec3};

/// Largest pooled sample passed to the exact transport solver per draw.
const TABLE_SUBSAMPLE: usize = 2048;
const TABLE_DRAWS: usize = 8;

/// Rotation-invariant description of a one-particle law by its second and
/// fourth moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicState {
    pub m2: f64,
    pub m4: f64,
    pub mean: Vec3,
}

impl IsotropicState {
    pub fn of(samples: &[Vec3]) -> Result<Self> {
        if samples.is_empty() {
            return Err(KacError::Domain("no samples".into()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<Vec3>() / n;
        let m2 = samples.iter().map(|v| v.norm_squared()).sum::<f64>() / n;
        let m4 = samples.iter().map(|v| v.norm_squared().powi(2)).sum::<f64>() / n;
        Ok(IsotropicState { m2, m4, mean })
    }

    /// `m4` of the Maxwellian with the same `m2`.
    pub fn equilibrium_m4(&self) -> f64 {
        5.0 / 3.0 * self.m2 * self.m2
    }
}

/// Fourth moment at time `t` for Maxwellian molecules.
///
/// With `γ = 0` the fourth moment obeys the closed equation
/// `m4' = −8 m4 + (40/3) m2²`, so it relaxes exponentially at rate 8 towards
/// `(5/3) m2²`. Jensen's inequality forces `m4 ≥ m2²/3`.
pub fn maxwellian_m4_trajectory(m2: f64, m4_0: f64, t: f64) -> Result<f64> {
    if !(m2.is_finite() && m2 >= 0.0 && m4_0.is_finite() && t.is_finite() && t >= 0.0) {
        return Err(KacError::Domain(format!("need finite m2 >= 0, m4 and t >= 0; got {m2}, {m4_0}, {t}")));
    }
    let floor = m2 * m2 / 3.0;
    if m4_0 < floor * (1.0 - 1e-12) {
        return Err(KacError::Domain(format!(
            "m4 = {m4_0} is below the Jensen floor m2^2/3 = {floor}"
        )));
    }
    let eq = 5.0 / 3.0 * m2 * m2;
    Ok(eq + (m4_0 - eq) * (-8.0 * t).exp())
}

/// Decay rate of `m4 − m4*` in the Maxwellian case.
pub const MAXWELLIAN_M4_RATE: f64 = 8.0;

/// `E|v|^p` of the centred Maxwellian with `E|v|² = energy`, for even `p`:
/// `energy^{p/2} (p+1)!! / 3^{p/2}`.
pub fn equilibrium_moments(energy: f64, p: u32) -> Result<f64> {
    if p % 2 == 1 {
        return Err(KacError::Domain(format!("closed form only for even p, got {p}")));
    }
    if !(energy.is_finite() && energy >= 0.0) {
        return Err(KacError::Domain(format!("energy must be finite and >= 0, got {energy}")));
    }
    let double_factorial: f64 = (1..=p + 1).step_by(2).map(f64::from).product();
    let half = i32::try_from(p / 2).map_err(|_| KacError::Overflow(format!("p = {p}")))?;
    Ok((energy / 3.0).powi(half) * double_factorial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_small: usize,
    pub n_large: usize,
    pub t: f64,
    pub w2: f64,
    pub stderr: f64,
}

/// `W2` between the pooled one-particle laws of consecutive entries of
/// `n_list` at `t_probe`. Each size is simulated with `config_base`
/// otherwise unchanged.
pub fn self_convergence_table(config_base: &SimConfig, n_list: &[usize], t_probe: f64) -> Result<Vec<ConvergenceRow>> {
    if n_list.len() < 2 {
        return Err(KacError::Domain("need at least two particle counts".into()));
    }
    if n_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(KacError::Domain(format!("particle counts must be non-decreasing: {n_list:?}")));
    }
    if !(t_probe.is_finite() && t_probe > 0.0) {
        return Err(KacError::Domain(format!("probe time must be positive, got {t_probe}")));
    }
    let mut pools = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let pool = if k > 0 && n_list[k - 1] == n {
            pools.last().map(|(_, p): &(usize, Vec<Vec3>)| p.clone()).unwrap_or_default()
        } else {
            let cfg = SimConfig {
                n_particles: n,
                horizon_time: t_probe,
                snapshot_stride: 0,
                ..config_base.clone()
            };
            let out = simulate(&cfg)?;
            out.logs.iter().flat_map(|l| l.final_state.velocities.iter().copied()).collect()
        };
        pools.push((n, pool));
    }
    convergence_rows(&pools, t_probe, config_base.seed)
}

/// Table rows for consecutive entries of already simulated `(N, pooled
/// particles)` pairs.
pub fn convergence_rows(pools: &[(usize, Vec<Vec3>)], t_probe: f64, seed: u64) -> Result<Vec<ConvergenceRow>> {
    pools
        .windows(2)
        .map(|w| {
            let (small, large) = (&w[0].1, &w[1].1);
            let cap = TABLE_SUBSAMPLE.min(small.len()).min(large.len());
            let est = w2_subsampled(small, large, cap, TABLE_DRAWS, seed)?;
            Ok(ConvergenceRow {
                n_small: w[0].0,
                n_large: w[1].0,
                t: t_probe,
                w2: est.value,
                stderr: est.stderr,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m4_relaxation() {
        assert_eq!(maxwellian_m4_trajectory(3.0, 15.0, 0.0).unwrap(), 15.0);
        assert!((maxwellian_m4_trajectory(3.0, 15.0, 2.0).unwrap() - 15.0).abs() < 1e-12);
        let far = maxwellian_m4_trajectory(3.0, 9.0, 50.0).unwrap();
        assert!((far - 15.0).abs() < 1e-12);
        let mid = maxwellian_m4_trajectory(0.6, 3.0 / 7.0, 0.1).unwrap();
        assert!(mid.is_finite());
        assert!(maxwellian_m4_trajectory(3.0, 2.9, 0.0).is_err());
        assert!(maxwellian_m4_trajectory(3.0, 3.0, 0.0).is_ok());
    }

    #[test]
    fn maxwellian_moments() {
        assert!((equilibrium_moments(3.0, 2).unwrap() - 3.0).abs() < 1e-14);
        assert!((equilibrium_moments(3.0, 4).unwrap() - 15.0).abs() < 1e-12);
        assert!((equilibrium_moments(3.0, 6).unwrap() - 105.0).abs() < 1e-11);
        assert_eq!(equilibrium_moments(1.0, 0).unwrap(), 1.0);
        assert!(equilibrium_moments(3.0, 3).is_err());
    }

    #[test]
    fn gaussian_samples_match_closed_form() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(5);
        let s: Vec<Vec3> = (0..200_000)
            .map(|_| Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let st = IsotropicState::of(&s).unwrap();
        assert!((st.m2 - 3.0).abs() < 0.03);
        assert!((st.m4 - equilibrium_moments(st.m2, 4).unwrap()).abs() / st.m4 < 0.02);
        assert!((st.m4 - st.equilibrium_m4()).abs() / st.m4 < 0.02);
    }

    #[test]
    fn identical_sizes_give_zero_distance() {
        let cfg = SimConfig {
            gamma: 0.0,
            n_particles: 32,
            replicas: 2,
            dt_time: 0.01,
            ..SimConfig::default()
        };
        let rows = self_convergence_table(&cfg, &[32, 32], 0.05).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].w2, 0.0);
        assert!(self_convergence_table(&cfg, &[64, 32], 0.05).is_err());
        assert!(self_convergence_table(&cfg, &[32], 0.05).is_err());
    }
}
