//! Synchronous coupling of two Kac systems.
//!
//! Both families are sampled per replica, paired by an optimal assignment of
//! their initial points, relabelled so that particle `i` of one family is
//! paired with particle `i` of the other, and then advanced with the same
//! pair increments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::ensemble::{sample_initial_replica, Ensemble, InitialSpec};
use crate::integrator::step_coupled;
use crate::noise::NoiseKey;
use crate::stats::{mean_stderr, Estimate};
use crate::transport::{solve_assignment, EXACT_CAP};
use crate::{KacError, Result, Vec3};

pub use crate::transport::optimal_pairing;

/// Two ensembles advanced in lockstep under shared noise.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub a: Ensemble,
    /// Family `b` relabelled by `pairing`, so index `i` here is paired with
    /// index `i` of `a`.
    pub b: Ensemble,
    /// `pairing[i]` is the original index in `b` of the partner of `a[i]`.
    pub pairing: Vec<usize>,
    pub shared_seed: u64,
}

impl CoupledPair {
    pub fn new(a: Ensemble, b: Ensemble, shared_seed: u64) -> Result<Self> {
        if a.len() != b.len() {
            return Err(KacError::Domain(format!("family sizes differ: {} vs {}", a.len(), b.len())));
        }
        if a.gamma != b.gamma {
            return Err(KacError::Domain("families must share gamma".into()));
        }
        let pairing = optimal_pairing(&a.velocities, &b.velocities)?;
        let b = b.permuted(&pairing);
        Ok(CoupledPair { a, b, pairing, shared_seed })
    }

    /// `Σ_{i<m} |V^i − Ṽ^i|²` averaged over the disjoint `m`-tuples.
    pub fn tuple_distance(&self, m: usize) -> f64 {
        let tuples = self.a.len() / m;
        let total: f64 = self.a.velocities[..tuples * m]
            .iter()
            .zip(&self.b.velocities)
            .map(|(x, y)| (x - y).norm_squared())
            .sum();
        total / tuples as f64
    }

    pub fn max_separation(&self) -> f64 {
        self.a
            .velocities
            .iter()
            .zip(&self.b.velocities)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub times: Vec<f64>,
    pub m_list: Vec<usize>,
    /// `u_mean[t][k]` is the replica mean of `u_{m_list[k]}` at `times[t]`.
    pub u_mean: Vec<Vec<f64>>,
    pub u_stderr: Vec<Vec<f64>>,
    /// Mean squared distance of one initial pair.
    pub u0: f64,
    /// Exact transport distance between the two final clouds, as
    /// `√(mean_r W2_r²)`; absent above the exact-solver cap.
    pub final_w2: Option<Estimate>,
    pub replicas: usize,
}

struct ReplicaTrace {
    u: Vec<Vec<f64>>,
    times: Vec<f64>,
    u0: f64,
    final_w2_sq: Option<f64>,
}

fn run_coupled_replica(
    config: &SimConfig,
    spec_a: &InitialSpec,
    spec_b: &InitialSpec,
    m_list: &[usize],
    replica: u64,
) -> Result<ReplicaTrace> {
    let n = config.n_particles;
    let a = sample_initial_replica(spec_a, n, config.seed, replica)?.with_gamma(config.gamma)?;
    let b = sample_initial_replica(spec_b, n, config.seed, replica)?.with_gamma(config.gamma)?;
    let mut pair = CoupledPair::new(a, b, config.seed)?;
    let u0 = pair.tuple_distance(1);
    let opts = config.step_options();
    let end = config.n_steps();
    let record = |p: &CoupledPair| m_list.iter().map(|&m| p.tuple_distance(m)).collect::<Vec<_>>();
    let mut u = vec![record(&pair)];
    let mut times = vec![pair.a.time];
    while pair.a.lineage.step < end {
        let key = NoiseKey::new(config.seed, replica, pair.a.lineage.step);
        step_coupled(&mut pair.a, &mut pair.b, &opts, key)?;
        let k = pair.a.lineage.step;
        if k % config.log_stride == 0 || k == end {
            u.push(record(&pair));
            times.push(pair.a.time);
        }
    }
    let final_w2_sq = (n <= EXACT_CAP).then(|| {
        let (x, y) = (&pair.a.velocities, &pair.b.velocities);
        let perm = solve_assignment(n, |i, j| (x[i] - y[j]).norm_squared());
        perm.iter().enumerate().map(|(i, &j)| (x[i] - y[j]).norm_squared()).sum::<f64>() / n as f64
    });
    Ok(ReplicaTrace { u, times, u0, final_w2_sq })
}

/// Evolves the two families of `spec_a` and `spec_b` under shared noise and
/// records `u_m` for every `m` in `m_list`.
pub fn coupled_simulate(
    config: &SimConfig,
    spec_a: &InitialSpec,
    spec_b: &InitialSpec,
    m_list: &[usize],
) -> Result<CouplingReport> {
    config.validate()?;
    spec_a.validate()?;
    spec_b.validate()?;
    if m_list.is_empty() || m_list.iter().any(|&m| m < 1 || m > config.n_particles) {
        return Err(KacError::Domain(format!(
            "m_list entries must lie in 1..={}",
            config.n_particles
        )));
    }
    let traces = (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| run_coupled_replica(config, spec_a, spec_b, m_list, r))
        .collect::<Result<Vec<_>>>()?;
    let times = traces[0].times.clone();
    let mut u_mean = Vec::with_capacity(times.len());
    let mut u_stderr = Vec::with_capacity(times.len());
    for t in 0..times.len() {
        let mut means = Vec::with_capacity(m_list.len());
        let mut errs = Vec::with_capacity(m_list.len());
        for k in 0..m_list.len() {
            let xs: Vec<f64> = traces.iter().map(|tr| tr.u[t][k]).collect();
            let e = mean_stderr(&xs)?;
            means.push(e.value);
            errs.push(if xs.len() > 1 { e.stderr } else { 0.0 });
        }
        u_mean.push(means);
        u_stderr.push(errs);
    }
    let u0 = traces.iter().map(|t| t.u0).sum::<f64>() / traces.len() as f64;
    let final_w2 = match traces.iter().map(|t| t.final_w2_sq).collect::<Option<Vec<f64>>>() {
        Some(sq) => {
            let e = mean_stderr(&sq)?;
            let w = e.value.max(0.0).sqrt();
            let se = if sq.len() < 2 { 0.0 } else if w > 0.0 { e.stderr / (2.0 * w) } else { e.stderr.sqrt() };
            Some(Estimate::new(w, se))
        }
        None => None,
    };
    Ok(CouplingReport {
        times,
        m_list: m_list.to_vec(),
        u_mean,
        u_stderr,
        u0,
        final_w2,
        replicas: traces.len(),
    })
}

/// `u_m` at logged time `t`.
pub fn u_statistic(report: &CouplingReport, m: usize, t: f64) -> Result<f64> {
    u_estimate(report, m, t).map(|e| e.value)
}

/// `u_m` at logged time `t` with its standard error.
pub fn u_estimate(report: &CouplingReport, m: usize, t: f64) -> Result<Estimate> {
    let k = report
        .m_list
        .iter()
        .position(|&x| x == m)
        .ok_or_else(|| KacError::Domain(format!("m = {m} was not tracked; tracked: {:?}", report.m_list)))?;
    let tol = 1e-9 * t.abs().max(1.0);
    let i = report
        .times
        .iter()
        .position(|&x| (x - t).abs() <= tol)
        .ok_or_else(|| KacError::Domain(format!("t = {t} is not a logged time")))?;
    Ok(Estimate::new(report.u_mean[i][k], report.u_stderr[i][k]))
}

/// Relabels `b` by `pairing`.
pub fn apply_pairing(b: &[Vec3], pairing: &[usize]) -> Vec<Vec3> {
    pairing.iter().map(|&j| b[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig {
            gamma: 0.5,
            n_particles: 48,
            horizon_time: 0.1,
            replicas: 3,
            log_stride: 2,
            ..SimConfig::default()
        }
    }

    #[test]
    fn identical_families_stay_on_the_diagonal() {
        let c = cfg();
        let spec = InitialSpec::uniform_ball(1.0);
        let r = coupled_simulate(&c, &spec, &spec, &[1, 2, 3]).unwrap();
        assert!(r.u_mean.iter().flatten().all(|&u| u == 0.0));
        assert_eq!(u_statistic(&r, 2, 0.1).unwrap(), 0.0);
        assert_eq!(r.final_w2.unwrap().value, 0.0);
    }

    #[test]
    fn shifted_ball_starts_at_shift_squared() {
        let c = cfg();
        let delta = 0.1;
        let a = InitialSpec::uniform_ball(1.0);
        let b = a.clone().shifted(Vec3::new(delta, 0.0, 0.0));
        let r = coupled_simulate(&c, &a, &b, &[1, 2, 3]).unwrap();
        assert!((r.u0 - delta * delta).abs() < 1e-12);
        for (k, m) in [1usize, 2, 3].iter().enumerate() {
            assert!((r.u_mean[0][k] - *m as f64 * delta * delta).abs() < 1e-12);
        }
        for row in &r.u_mean {
            assert!(row.windows(2).all(|w| w[1] >= w[0]));
            assert!(row.iter().all(|&u| u >= 0.0));
        }
        assert!(u_statistic(&r, 4, 0.0).is_err());
        assert!(u_statistic(&r, 1, 0.033).is_err());
    }

    #[test]
    fn pairing_relabels_partner_family() {
        let spec = InitialSpec::uniform_ball(1.0);
        let a = sample_initial_replica(&spec, 10, 1, 0).unwrap();
        let mut b = a.clone();
        b.velocities.reverse();
        let pair = CoupledPair::new(a.clone(), b, 1).unwrap();
        assert_eq!(pair.pairing, (0..10).rev().collect::<Vec<_>>());
        assert_eq!(pair.b.velocities, a.velocities);
        assert_eq!(pair.max_separation(), 0.0);
    }
}
