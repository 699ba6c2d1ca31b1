//! Euler–Maruyama discretisation of the conservative Kac particle system
//!
//! ```text
//! dV^i = (2/N) Σ_{j≠i} B(V^i − V^j) dt + √(2/N) Σ_{j≠i} σ(V^i − V^j) dZ^{ij},
//! Z^{ji} = −Z^{ij}.
//! ```
//!
//! Each unordered pair is visited once and its increment is added to `i` and
//! subtracted from `j`, so total momentum is conserved up to rounding. Rows
//! are grouped into fixed blocks with private accumulators that are reduced
//! in block order, which makes the result independent of the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::ensemble::{conserved_of, sample_initial_replica, Conserved, Ensemble, SeedLineage};
use crate::kernels::PowerLaw;
use crate::noise::NoiseKey;
use crate::observables::{moment_report, MomentReport};
use crate::{KacError, Result, Vec3};

const ROW_BLOCK: usize = 32;
/// Deepest recursive halving before a step is reported as rejected.
const MAX_SPLIT_LEVEL: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub dt: f64,
    pub energy_projection: bool,
    /// Largest admissible drift displacement `(2dt/N)|Σ_j B|` of one particle.
    pub dt_adaptive_cap: f64,
    pub scheme: Scheme,
    /// With noise off only the drift is integrated.
    pub noise: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            dt: 0.01,
            energy_projection: false,
            dt_adaptive_cap: 0.5,
            scheme: Scheme::EulerMaruyama,
            noise: true,
        }
    }
}

impl StepOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(KacError::Config {
                key: "dt_time".into(),
                allowed: format!("must be > 0, got {}", self.dt),
            });
        }
        if !(self.dt_adaptive_cap > 0.0) {
            return Err(KacError::Config {
                key: "dt_adaptive_cap_velocity".into(),
                allowed: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

/// Unscaled pair sums `Σ_j B(v_i − v_j)` and `Σ_j σ(v_i − v_j) ξ^{ij}`.
struct PairSums {
    drift: Vec<Vec3>,
    noise: Vec<Vec3>,
}

fn block_sums(vs: &[Vec3], start: usize, end: usize, law: PowerLaw, key: Option<&NoiseKey>) -> PairSums {
    let n = vs.len();
    let mut drift = vec![Vec3::zeros(); n - start];
    let mut noise = vec![Vec3::zeros(); if key.is_some() { n - start } else { 0 }];
    for i in start..end {
        let vi = vs[i];
        let li = i - start;
        let mut stream = key.map(|k| k.row_stream(i));
        let mut di = Vec3::zeros();
        let mut si = Vec3::zeros();
        for j in i + 1..n {
            let z = vi - vs[j];
            let r2 = z.norm_squared();
            let lj = j - start;
            match stream.as_mut() {
                Some(stream) => {
                    let xi = stream.next_triple();
                    if r2 == 0.0 {
                        continue;
                    }
                    let r = r2.sqrt();
                    let b = z * (-2.0 * law.pow_gamma(r));
                    let s = (xi - z * (z.dot(&xi) / r2)) * law.pow_sigma(r);
                    di += b;
                    drift[lj] -= b;
                    si += s;
                    noise[lj] -= s;
                }
                None => {
                    if r2 == 0.0 {
                        continue;
                    }
                    let b = z * (-2.0 * law.pow_gamma(r2.sqrt()));
                    di += b;
                    drift[lj] -= b;
                }
            }
        }
        drift[li] += di;
        if key.is_some() {
            noise[li] += si;
        }
    }
    PairSums { drift, noise }
}

fn pair_sums(vs: &[Vec3], law: PowerLaw, key: Option<&NoiseKey>) -> PairSums {
    let n = vs.len();
    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let blocks: Vec<(usize, PairSums)> = starts
        .par_iter()
        .map(|&s| (s, block_sums(vs, s, (s + ROW_BLOCK).min(n), law, key)))
        .collect();
    let mut total = PairSums {
        drift: vec![Vec3::zeros(); n],
        noise: vec![Vec3::zeros(); if key.is_some() { n } else { 0 }],
    };
    for (s, b) in blocks {
        for (acc, d) in total.drift[s..].iter_mut().zip(&b.drift) {
            *acc += d;
        }
        if !b.noise.is_empty() {
            for (acc, d) in total.noise[s..].iter_mut().zip(&b.noise) {
                *acc += d;
            }
        }
    }
    total
}

fn max_drift_displacement(sums: &PairSums, dt: f64) -> f64 {
    let scale = 2.0 * dt / sums.drift.len() as f64;
    sums.drift
        .iter()
        .map(|d| d.norm() * scale)
        .fold(0.0, |m: f64, x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x) })
}

fn apply(vs: &mut [Vec3], sums: &PairSums, dt: f64) {
    let n = vs.len() as f64;
    let cd = 2.0 * dt / n;
    let cn = (2.0 * dt / n).sqrt();
    if sums.noise.is_empty() {
        for (v, d) in vs.iter_mut().zip(&sums.drift) {
            *v += d * cd;
        }
    } else {
        for ((v, d), s) in vs.iter_mut().zip(&sums.drift).zip(&sums.noise) {
            *v += d * cd + s * cn;
        }
    }
}

fn check_finite(vs: &[Vec3], step: u64) -> Result<()> {
    if vs.iter().all(|v| v.iter().all(|c| c.is_finite())) {
        Ok(())
    } else {
        Err(KacError::NonFinite { step })
    }
}

/// Advances every state in `states` by `dt` with the same noise key, halving
/// all of them together whenever any one exceeds the drift cap.
#[allow(clippy::too_many_arguments)]
fn advance_group(
    states: &mut [&mut [Vec3]],
    law: PowerLaw,
    opts: &StepOptions,
    base: NoiseKey,
    dt: f64,
    level: u32,
    index: u64,
    splits: &mut u64,
) -> Result<()> {
    let key = if level == 0 { base } else { base.refined(level, index) };
    let noise_key = opts.noise.then_some(&key);
    let sums: Vec<PairSums> = states.iter().map(|s| pair_sums(s, law, noise_key)).collect();
    let mut worst: f64 = 0.0;
    for s in &sums {
        let d = max_drift_displacement(s, dt);
        if d.is_nan() {
            return Err(KacError::NonFinite { step: base.step });
        }
        worst = worst.max(d);
    }
    if worst > opts.dt_adaptive_cap {
        if level >= MAX_SPLIT_LEVEL {
            return Err(KacError::StepRejected {
                step: base.step,
                displacement: worst,
                cap: opts.dt_adaptive_cap,
            });
        }
        *splits += 1;
        advance_group(states, law, opts, base, dt / 2.0, level + 1, 2 * index, splits)?;
        return advance_group(states, law, opts, base, dt / 2.0, level + 1, 2 * index + 1, splits);
    }
    for (state, s) in states.iter_mut().zip(&sums) {
        apply(state, s, dt);
        check_finite(state, base.step)?;
    }
    Ok(())
}

/// Rescales fluctuations so that momentum and energy hit their targets.
///
/// With `c` the current mean velocity and `v̄ = target_p/N`, every velocity
/// becomes `v̄ + λ(v − c)` with `λ = √((target_e − N|v̄|²)/Σ|v − c|²)`. When the
/// current momentum already equals `target_p` this is the familiar
/// `v̄ + λ(v − v̄)`.
pub fn project_conservation(e: &Ensemble, target_p: Vec3, target_e: f64) -> Result<Ensemble> {
    let mut out = e.clone();
    project_in_place(&mut out.velocities, target_p, target_e)?;
    Ok(out)
}

pub(crate) fn project_in_place(vs: &mut [Vec3], target_p: Vec3, target_e: f64) -> Result<()> {
    let n = vs.len() as f64;
    let vbar = target_p / n;
    let centroid = vs.iter().fold(Vec3::zeros(), |a, v| a + v) / n;
    let spread: f64 = vs.iter().map(|v| (v - centroid).norm_squared()).sum();
    let thermal = target_e - n * vbar.norm_squared();
    if !(spread > 0.0) {
        return Err(KacError::Domain(
            "projection impossible: all velocities are equal".into(),
        ));
    }
    if !(thermal > 0.0) {
        return Err(KacError::Domain(format!(
            "projection impossible: target energy {target_e} does not exceed N|v̄|² = {}",
            n * vbar.norm_squared()
        )));
    }
    let lambda = (thermal / spread).sqrt();
    for v in vs.iter_mut() {
        *v = vbar + (*v - centroid) * lambda;
    }
    Ok(())
}

fn finish_step(vs: &mut [Vec3], before: Conserved, opts: &StepOptions) -> Result<()> {
    if opts.energy_projection {
        project_in_place(vs, before.momentum, before.energy)?;
    }
    Ok(())
}

/// One Euler–Maruyama step of size `opts.dt` keyed by `key`.
///
/// A drift displacement above `opts.dt_adaptive_cap` returns
/// [`KacError::StepRejected`]; [`step_adaptive`] handles that by halving.
pub fn step(e: &Ensemble, opts: &StepOptions, key: NoiseKey) -> Result<Ensemble> {
    opts.validate()?;
    let law = PowerLaw::new(e.gamma)?;
    let mut vs = e.velocities.clone();
    let before = conserved_of(&vs);
    let sums = pair_sums(&vs, law, opts.noise.then_some(&key));
    let worst = max_drift_displacement(&sums, opts.dt);
    if worst.is_nan() {
        return Err(KacError::NonFinite { step: key.step });
    }
    if worst > opts.dt_adaptive_cap {
        return Err(KacError::StepRejected {
            step: key.step,
            displacement: worst,
            cap: opts.dt_adaptive_cap,
        });
    }
    apply(&mut vs, &sums, opts.dt);
    check_finite(&vs, key.step)?;
    finish_step(&mut vs, before, opts)?;
    Ok(advanced(e, vs, key.step, opts.dt))
}

/// Like [`step`], but a rejected step is split into halves recursively, each
/// half drawing noise from its own refined key. Returns the new ensemble and
/// the number of splits taken.
pub fn step_adaptive(e: &Ensemble, opts: &StepOptions, key: NoiseKey) -> Result<(Ensemble, u64)> {
    opts.validate()?;
    let law = PowerLaw::new(e.gamma)?;
    let mut vs = e.velocities.clone();
    let before = conserved_of(&vs);
    let mut splits = 0;
    advance_group(&mut [&mut vs], law, opts, key, opts.dt, 0, 0, &mut splits)?;
    finish_step(&mut vs, before, opts)?;
    Ok((advanced(e, vs, key.step, opts.dt), splits))
}

/// Advances two equally sized systems under identical noise; particle `i` of
/// `a` and particle `i` of `b` share every pair increment.
pub(crate) fn step_coupled(
    a: &mut Ensemble,
    b: &mut Ensemble,
    opts: &StepOptions,
    key: NoiseKey,
) -> Result<u64> {
    let law = PowerLaw::new(a.gamma)?;
    let before_a = conserved_of(&a.velocities);
    let before_b = conserved_of(&b.velocities);
    let mut splits = 0;
    advance_group(
        &mut [&mut a.velocities, &mut b.velocities],
        law,
        opts,
        key,
        opts.dt,
        0,
        0,
        &mut splits,
    )?;
    finish_step(&mut a.velocities, before_a, opts)?;
    finish_step(&mut b.velocities, before_b, opts)?;
    for e in [a, b] {
        e.lineage.step = key.step + 1;
        e.time = (key.step + 1) as f64 * opts.dt;
    }
    Ok(splits)
}

fn advanced(e: &Ensemble, velocities: Vec<Vec3>, step: u64, dt: f64) -> Ensemble {
    Ensemble {
        velocities,
        gamma: e.gamma,
        time: (step + 1) as f64 * dt,
        lineage: SeedLineage {
            step: step + 1,
            ..e.lineage
        },
    }
}

/// Per-replica record of a run.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub replica: u64,
    pub times: Vec<f64>,
    pub conserved_series: Vec<Conserved>,
    pub snapshots: Vec<Ensemble>,
    pub final_state: Ensemble,
    /// Number of step halvings forced by the drift cap.
    pub splits: u64,
    pub config: SimConfig,
    pub code_version: String,
}

/// All replica logs of a run plus moments pooled over replicas at the horizon.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub logs: Vec<TrajectoryLog>,
    pub moments: MomentReport,
}

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Runs one replica from `start` until step `end_step`.
///
/// The step index of `start.lineage` keys the noise, so a run resumed from a
/// stored ensemble continues exactly where the original would have gone.
pub fn run_replica(config: &SimConfig, start: Ensemble, end_step: u64) -> Result<TrajectoryLog> {
    let opts = config.step_options();
    opts.validate()?;
    let mut e = start;
    let mut times = vec![e.time];
    let mut conserved_series = vec![e.conserved()];
    let mut snapshots = Vec::new();
    if config.snapshot_stride > 0 {
        snapshots.push(e.clone());
    }
    let mut splits = 0;
    while e.lineage.step < end_step {
        let key = NoiseKey::new(config.seed, e.lineage.replica, e.lineage.step);
        let (next, s) = step_adaptive(&e, &opts, key)?;
        splits += s;
        e = next;
        let k = e.lineage.step;
        let last = k == end_step;
        if k % config.log_stride == 0 || last {
            times.push(e.time);
            conserved_series.push(e.conserved());
        }
        if config.snapshot_stride > 0 && (k % config.snapshot_stride == 0 || last) {
            snapshots.push(e.clone());
        }
    }
    if splits > 0 {
        log::warn!(
            "replica {}: {splits} step halvings forced by the drift cap",
            e.lineage.replica
        );
    }
    Ok(TrajectoryLog {
        replica: e.lineage.replica,
        times,
        conserved_series,
        snapshots,
        final_state: e,
        splits,
        config: config.clone(),
        code_version: CODE_VERSION.to_string(),
    })
}

/// Initial ensemble of `replica` as configured.
pub fn initial_ensemble(config: &SimConfig, replica: u64) -> Result<Ensemble> {
    sample_initial_replica(&config.initial_spec(), config.n_particles, config.seed, replica)?
        .with_gamma(config.gamma)
}

/// Runs all replicas of `config` from their sampled initial data.
pub fn simulate(config: &SimConfig) -> Result<SimulationOutput> {
    config.validate()?;
    let n_steps = config.n_steps();
    let logs = (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(config, initial_ensemble(config, r)?, n_steps))
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<&Ensemble> = logs.iter().map(|l| &l.final_state).collect();
    let moments = moment_report(&finals, &config.moment_orders)?;
    Ok(SimulationOutput { logs, moments })
}

/// Straightforward per-particle evaluation of one step with an arbitrary
/// antisymmetric pair noise `noise(i, j)` (variance `dt`). Quadratic memory
/// free, cubic cost if `noise` is; used to cross-check the blocked kernel.
pub fn reference_step(vs: &[Vec3], gamma: f64, dt: f64, noise: impl Fn(usize, usize) -> Vec3) -> Result<Vec<Vec3>> {
    let law = PowerLaw::new(gamma)?;
    let n = vs.len();
    let nf = n as f64;
    Ok((0..n)
        .map(|i| {
            let mut drift = Vec3::zeros();
            let mut diff = Vec3::zeros();
            for j in (0..n).filter(|&j| j != i) {
                let z = vs[i] - vs[j];
                drift += crate::kernels::drift_kernel(&z, law);
                diff += crate::kernels::sigma_apply(&z, &noise(i, j), law);
            }
            vs[i] + drift * (2.0 * dt / nf) + diff * (2.0 / nf).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::InitialSpec;
    use proptest::prelude::*;

    fn ens(vs: Vec<Vec3>, gamma: f64) -> Ensemble {
        Ensemble::new(vs, gamma, SeedLineage { seed: 3, replica: 0, step: 0 }).unwrap()
    }

    fn ball(n: usize, gamma: f64, seed: u64) -> Ensemble {
        sample_initial_replica(&InitialSpec::uniform_ball(1.0), n, seed, 0)
            .unwrap()
            .with_gamma(gamma)
            .unwrap()
    }

    #[test]
    fn deterministic_drift_over_several_blocks() {
        let e = ball(100, 0.5, 4);
        let opts = StepOptions { noise: false, ..StepOptions::default() };
        let a = step(&e, &opts, NoiseKey::new(1, 0, 0)).unwrap();
        let b = step(&e, &opts, NoiseKey::new(2, 5, 0)).unwrap();
        assert_eq!(a.velocities, b.velocities);
        let expect = reference_step(&e.velocities, 0.5, opts.dt, |_, _| Vec3::zeros()).unwrap();
        for (x, y) in a.velocities.iter().zip(&expect) {
            assert!((x - y).norm() < 1e-13);
        }
        // pure drift dissipates energy
        assert!(a.conserved().energy < e.conserved().energy);
    }

    #[test]
    fn two_particle_drift() {
        let e = ens(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], 1.0);
        let opts = StepOptions { noise: false, ..StepOptions::default() };
        let out = step(&e, &opts, NoiseKey::new(0, 0, 0)).unwrap();
        assert!((out.velocities[0] - Vec3::new(0.92, 0.0, 0.0)).norm() < 1e-14);
        assert!((out.velocities[1] - Vec3::new(-0.92, 0.0, 0.0)).norm() < 1e-14);
        assert_eq!(out.lineage.step, 1);
        assert!((out.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn aligned_pair_noise_is_blind_to_relative_direction() {
        let e = ens(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], 1.0);
        let out = step(&e, &StepOptions::default(), NoiseKey::new(9, 0, 4)).unwrap();
        assert!((out.velocities[0].x - 0.92).abs() < 1e-14);
        assert!(out.velocities[0].yz().norm() > 0.0);
    }

    #[test]
    fn momentum_is_conserved() {
        for gamma in [0.0, 0.3, 0.5, 1.0] {
            let e = ball(97, gamma, 5);
            let p0 = e.conserved().momentum;
            let scale: f64 = e.velocities.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            let out = step(&e, &StepOptions::default(), NoiseKey::new(1, 0, 0)).unwrap();
            assert!((out.conserved().momentum - p0).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn blocked_kernel_matches_reference() {
        let e = ball(70, 0.5, 8);
        let dt = 0.01;
        let key = NoiseKey::new(4, 0, 2);
        let out = step(&e, &StepOptions { dt, ..StepOptions::default() }, key).unwrap();
        let reference = reference_step(&e.velocities, 0.5, dt, |i, j| key.pair_increment(i, j, dt)).unwrap();
        for (a, b) in out.velocities.iter().zip(&reference) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn permutation_commutes_with_reference_step() {
        let e = ball(12, 1.0, 2);
        let perm: Vec<usize> = vec![5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6];
        let key = NoiseKey::new(6, 0, 0);
        let dt = 0.02;
        let plain = reference_step(&e.velocities, 1.0, dt, |i, j| key.pair_increment(i, j, dt)).unwrap();
        let moved = e.permuted(&perm);
        let permuted = reference_step(&moved.velocities, 1.0, dt, |i, j| {
            key.pair_increment(perm[i], perm[j], dt)
        })
        .unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert!((permuted[k] - plain[p]).norm() < 1e-13);
        }
    }

    #[test]
    fn projection_examples() {
        let e = ens(vec![Vec3::new(2.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)], 0.0);
        let out = project_conservation(&e, Vec3::zeros(), 2.0).unwrap();
        assert!((out.velocities[0] - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((out.velocities[1] - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        let same = project_conservation(&e, Vec3::zeros(), 8.0).unwrap();
        assert_eq!(same.velocities, e.velocities);
        let flat = ens(vec![Vec3::new(1.0, 1.0, 1.0); 3], 0.0);
        assert!(matches!(
            project_conservation(&flat, Vec3::new(3.0, 3.0, 3.0), 10.0),
            Err(KacError::Domain(_))
        ));
        assert!(project_conservation(&e, Vec3::new(4.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn projected_steps_keep_energy() {
        let mut e = ball(64, 0.5, 1);
        let c0 = e.conserved();
        let opts = StepOptions { energy_projection: true, ..StepOptions::default() };
        for k in 0..50 {
            e = step(&e, &opts, NoiseKey::new(2, 0, k)).unwrap();
            let c = e.conserved();
            assert!((c.energy - c0.energy).abs() <= 1e-12 * c0.energy);
            assert!((c.momentum - c0.momentum).norm() <= 1e-12 * c0.energy.sqrt());
        }
    }

    #[test]
    fn oversized_drift_is_rejected_then_split() {
        let e = ens(vec![Vec3::new(10.0, 0.0, 0.0), Vec3::new(-10.0, 0.0, 0.0)], 1.0);
        let opts = StepOptions { dt: 0.01, noise: false, ..StepOptions::default() };
        match step(&e, &opts, NoiseKey::new(0, 0, 7)) {
            Err(KacError::StepRejected { step, displacement, .. }) => {
                assert_eq!(step, 7);
                assert!((displacement - 8.0).abs() < 1e-12);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        let (out, splits) = step_adaptive(&e, &opts, NoiseKey::new(0, 0, 7)).unwrap();
        assert!(splits >= 4);
        assert!(out.velocities[0].x < 10.0 && out.velocities[0].x > 0.0);
        assert!((out.velocities[0] + out.velocities[1]).norm() < 1e-12);
    }

    #[test]
    fn non_finite_state_faults() {
        let mut e = ens(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], 0.5);
        e.velocities[0].x = f64::NAN;
        e.lineage.step = 3;
        assert!(matches!(
            step_adaptive(&e, &StepOptions::default(), NoiseKey::new(0, 0, 3)),
            Err(KacError::NonFinite { step: 3 })
        ));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let e = ball(150, 0.5, 3);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| step(&e, &StepOptions::default(), NoiseKey::new(1, 2, 3)).unwrap())
        };
        assert_eq!(run(1).velocities, run(4).velocities);
    }

    #[test]
    fn resumed_replica_matches_uninterrupted() {
        let cfg = SimConfig {
            n_particles: 40,
            horizon_time: 0.1,
            energy_projection: true,
            ..SimConfig::default()
        };
        let whole = run_replica(&cfg, initial_ensemble(&cfg, 0).unwrap(), 10).unwrap();
        let half = run_replica(&cfg, initial_ensemble(&cfg, 0).unwrap(), 4).unwrap();
        let rest = run_replica(&cfg, half.final_state, 10).unwrap();
        assert_eq!(whole.final_state, rest.final_state);
        assert_eq!(whole.times.len(), 11);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn momentum_conserved_any_state(
            pts in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 2..40),
            gamma in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let vs: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
            let e = ens(vs, gamma);
            let p0 = e.conserved().momentum;
            let scale = e.conserved().energy.sqrt().max(1e-300);
            let opts = StepOptions { dt: 1e-3, dt_adaptive_cap: 1e9, ..StepOptions::default() };
            let out = step(&e, &opts, NoiseKey::new(seed, 0, 0)).unwrap();
            prop_assert!((out.conserved().momentum - p0).norm() <= 1e-12 * scale);
        }
    }
}
