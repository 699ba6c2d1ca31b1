//! Estimators over replica ensembles.
//!
//! Samples arrive grouped by replica (`&[&[Vec3]]`, one slice per replica).
//! Particles are exchangeable, so one-particle statistics pool every particle
//! of every replica; standard errors come from a jackknife over replicas,
//! which accounts for the weak correlations inside a replica. With a single
//! replica the jackknife runs over contiguous particle blocks instead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::ensemble::Ensemble;
use crate::kernels::{eval_with, PowerLaw};
use crate::knn::KdTree;
use crate::noise::{domain, keyed_rng};
use crate::stats::{jackknife_ratio, jackknife_stderr, mean_stderr, ols, Estimate};
use crate::{KacError, Mat3, Result, Vec3};

const SINGLE_GROUP_BLOCKS: usize = 16;

fn check_groups(groups: &[&[Vec3]]) -> Result<usize> {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if n == 0 {
        return Err(KacError::Domain("no samples".into()));
    }
    Ok(n)
}

fn jackknife_groups<'a>(groups: &[&'a [Vec3]]) -> Vec<&'a [Vec3]> {
    let nonempty: Vec<&[Vec3]> = groups.iter().copied().filter(|g| !g.is_empty()).collect();
    if nonempty.len() >= 2 {
        return nonempty;
    }
    let g = nonempty[0];
    let size = g.len().div_ceil(SINGLE_GROUP_BLOCKS).max(1);
    g.chunks(size).collect()
}

/// Pooled mean of `f(v)` with jackknife-over-groups standard error.
pub fn pooled_mean(groups: &[&[Vec3]], f: impl Fn(&Vec3) -> f64 + Sync) -> Result<Estimate> {
    check_groups(groups)?;
    let jg = jackknife_groups(groups);
    let sums: Vec<f64> = jg.iter().map(|g| g.iter().map(&f).sum()).collect();
    let counts: Vec<f64> = jg.iter().map(|g| g.len() as f64).collect();
    jackknife_ratio(&sums, &counts)
}

/// `E|v|^p` over the pooled samples.
pub fn polynomial_moment(groups: &[&[Vec3]], p: f64) -> Result<Estimate> {
    if !(p >= 2.0) {
        return Err(KacError::Domain(format!("moment order must be >= 2, got {p}")));
    }
    if check_groups(groups)? < 2 {
        return Err(KacError::Domain("a moment estimate needs at least 2 samples".into()));
    }
    pooled_mean(groups, |v| {
        let r2 = v.norm_squared();
        if p == 2.0 {
            r2
        } else if p.fract() == 0.0 && (p as i32) % 2 == 0 {
            r2.powi(p as i32 / 2)
        } else {
            r2.powf(p / 2.0)
        }
    })
}

/// Exponential weight `exp(ξ|v|^β)` with `β = 4/(2+γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentSpec {
    pub xi: f64,
    pub beta_exponent: f64,
}

impl ExpMomentSpec {
    pub fn new(xi: f64, gamma: f64) -> Result<Self> {
        crate::kernels::check_gamma(gamma)?;
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(KacError::Domain(format!("xi must be > 0, got {xi}")));
        }
        Ok(ExpMomentSpec {
            xi,
            beta_exponent: 4.0 / (2.0 + gamma),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Natural log of the estimate; meaningful even when `value` overflows.
    pub log_value: f64,
    pub log_stderr: f64,
    /// The top 1% of samples carry more than half of the estimate.
    pub tail_dominated: bool,
    pub overflow: bool,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn exponential_moment(groups: &[&[Vec3]], spec: &ExpMomentSpec) -> Result<ExpMomentEstimate> {
    if !(spec.xi > 0.0) {
        return Err(KacError::Domain(format!("xi must be > 0, got {}", spec.xi)));
    }
    let n = check_groups(groups)?;
    let jg = jackknife_groups(groups);
    let exponent = |v: &Vec3| spec.xi * v.norm().powf(spec.beta_exponent);
    let group_exps: Vec<Vec<f64>> = jg.iter().map(|g| g.iter().map(exponent).collect()).collect();
    let mut all: Vec<f64> = group_exps.iter().flatten().copied().collect();
    let log_total = log_sum_exp(all.iter().copied());
    let log_value = log_total - (n as f64).ln();

    // leave-one-group-out in log space
    let group_log_sums: Vec<f64> = group_exps.iter().map(|g| log_sum_exp(g.iter().copied())).collect();
    let counts: Vec<f64> = group_exps.iter().map(|g| g.len() as f64).collect();
    let loo_logs: Vec<f64> = group_log_sums
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| (n as f64) - c > 0.0)
        .map(|(&ls, &c)| {
            // log(exp(L) − exp(ls)) = L + log(1 − exp(ls − L))
            let rest = log_total + (-(ls - log_total).exp()).ln_1p();
            rest - ((n as f64) - c).ln()
        })
        .collect();
    let log_stderr = jackknife_stderr(&loo_logs);
    let value = log_value.exp();
    let overflow = !value.is_finite();
    let stderr = if overflow {
        f64::INFINITY
    } else {
        let loo: Vec<f64> = loo_logs.iter().map(|l| l.exp()).collect();
        jackknife_stderr(&loo)
    };

    all.sort_by(|a, b| b.total_cmp(a));
    let top = n.div_ceil(100);
    let log_top = log_sum_exp(all[..top].iter().copied());
    let tail_dominated = log_top - log_total > 0.5f64.ln();
    if overflow {
        log::warn!("exponential moment overflows f64; log estimate {log_value:.3}");
    }
    Ok(ExpMomentEstimate {
        value,
        stderr,
        log_value,
        log_stderr,
        tail_dominated,
        overflow,
    })
}

/// Kozachenko–Leonenko differential entropy in nats,
/// `ψ(n) − ψ(k) + ln(4π/3) + (3/n) Σ ln ε_i` with `ε_i` the distance to the
/// `k`-th nearest neighbour.
pub fn knn_entropy(samples: &[Vec3], neighbor_k: usize) -> Result<f64> {
    let n = samples.len();
    if neighbor_k < 1 || n <= neighbor_k {
        return Err(KacError::Domain(format!(
            "entropy estimate needs samples > neighbor_k >= 1, got {n} samples and k = {neighbor_k}"
        )));
    }
    if let Some(k) = samples.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(KacError::Input(format!("sample {k} is not finite")));
    }
    let jittered;
    let points = match duplicates(samples) {
        dups if dups.is_empty() => samples,
        dups => {
            log::warn!("{} duplicate samples jittered by 1e-12 before entropy estimation", dups.len());
            let mut rng = keyed_rng(&[domain::JITTER, n as u64]);
            let mut copy = samples.to_vec();
            for k in dups {
                let d: Vec3 = Vec3::from_fn(|_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
                let scale = 1e-12 * copy[k].norm().max(1.0);
                copy[k] += d.normalize() * scale;
            }
            jittered = copy;
            &jittered
        }
    };
    let tree = KdTree::new(points);
    let logs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| tree.knn_sq_excluding(i, neighbor_k)[neighbor_k - 1].ln() * 0.5)
        .collect();
    let nf = n as f64;
    let unit_ball = (4.0 * std::f64::consts::PI / 3.0).ln();
    Ok(digamma(nf) - digamma(neighbor_k as f64) + unit_ball + 3.0 / nf * logs.iter().sum::<f64>())
}

/// Indices of samples equal to an earlier sample.
fn duplicates(samples: &[Vec3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let key = |k: usize| [samples[k].x, samples[k].y, samples[k].z];
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka[0].total_cmp(&kb[0]).then(ka[1].total_cmp(&kb[1])).then(ka[2].total_cmp(&kb[2])).then(a.cmp(&b))
    });
    idx.windows(2)
        .filter(|w| samples[w[0]] == samples[w[1]])
        .map(|w| w[1])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChaosStatistic {
    SpeedSq,
    ComponentX,
}

impl ChaosStatistic {
    pub fn eval(&self, v: &Vec3) -> f64 {
        match self {
            ChaosStatistic::SpeedSq => v.norm_squared(),
            ChaosStatistic::ComponentX => v.x,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "speed_sq" => Ok(ChaosStatistic::SpeedSq),
            "component_x" => Ok(ChaosStatistic::ComponentX),
            other => Err(KacError::Config {
                key: "chaos_statistic".into(),
                allowed: format!("speed_sq or component_x, got {other:?}"),
            }),
        }
    }
}

/// `Cov(φ(V¹), φ(V²))` estimated across replicas.
///
/// Uses `mean_r U_r − mean_{r≠r'} φ̄_r φ̄_{r'}`, where `U_r` averages
/// `φ(v_i)φ(v_j)` over ordered pairs `i ≠ j` of replica `r` and `φ̄_r` is the
/// replica mean. Both terms are unbiased, so is the difference.
pub fn chaos_covariance(replicas: &[&[Vec3]], statistic: ChaosStatistic) -> Result<Estimate> {
    let r = replicas.len();
    if r < 8 {
        return Err(KacError::Domain(format!("chaos covariance needs >= 8 replicas, got {r}")));
    }
    let mut u = Vec::with_capacity(r);
    let mut means = Vec::with_capacity(r);
    for rep in replicas {
        if rep.len() < 2 {
            return Err(KacError::Domain("every replica needs >= 2 particles".into()));
        }
        let n = rep.len() as f64;
        let (s, q) = rep.iter().fold((0.0, 0.0), |(s, q), v| {
            let f = statistic.eval(v);
            (s + f, q + f * f)
        });
        u.push((s * s - q) / (n * (n - 1.0)));
        means.push(s / n);
    }
    let estimate = |skip: Option<usize>| {
        let keep = |k: &usize| Some(*k) != skip;
        let cnt = (0..r).filter(keep).count() as f64;
        let mean_u = (0..r).filter(keep).map(|k| u[k]).sum::<f64>() / cnt;
        let sm: f64 = (0..r).filter(keep).map(|k| means[k]).sum();
        let sm2: f64 = (0..r).filter(keep).map(|k| means[k] * means[k]).sum();
        mean_u - (sm * sm - sm2) / (cnt * (cnt - 1.0))
    };
    let loo: Vec<f64> = (0..r).map(|k| estimate(Some(k))).collect();
    Ok(Estimate::new(estimate(None), jackknife_stderr(&loo)))
}

/// Smooth test functions `φ(v_1, …, v_m)` with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Constant(f64),
    /// `Π_a exp(−|v_a − c_a|²/w²)`, one centre per argument.
    GaussianBump { centers: Vec<Vec3>, width: f64 },
    /// `Σ_a |v_a|²`.
    TotalEnergy,
}

impl TestFunction {
    /// Number of arguments the function insists on, if any.
    pub fn arity(&self) -> Option<usize> {
        match self {
            TestFunction::GaussianBump { centers, .. } => Some(centers.len()),
            _ => None,
        }
    }

    pub fn value(&self, v: &[Vec3]) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::GaussianBump { centers, width } => {
                let w2 = width * width;
                v.iter()
                    .zip(centers)
                    .map(|(x, c)| (-(x - c).norm_squared() / w2).exp())
                    .product()
            }
            TestFunction::TotalEnergy => v.iter().map(|x| x.norm_squared()).sum(),
        }
    }

    /// Gradient with respect to argument `a`.
    pub fn gradient(&self, v: &[Vec3], a: usize) -> Vec3 {
        match self {
            TestFunction::Constant(_) => Vec3::zeros(),
            TestFunction::GaussianBump { centers, width } => {
                (v[a] - centers[a]) * (-2.0 / (width * width) * self.value(v))
            }
            TestFunction::TotalEnergy => v[a] * 2.0,
        }
    }

    /// Hessian block `∂²φ/∂v_a∂v_b`.
    pub fn hessian(&self, v: &[Vec3], a: usize, b: usize) -> Mat3 {
        match self {
            TestFunction::Constant(_) => Mat3::zeros(),
            TestFunction::GaussianBump { centers, width } => {
                let w2 = width * width;
                let phi = self.value(v);
                let ua = (v[a] - centers[a]) * (-2.0 / w2);
                let ub = (v[b] - centers[b]) * (-2.0 / w2);
                let mut h = ua * ub.transpose() * phi;
                if a == b {
                    h -= Mat3::identity() * (2.0 / w2 * phi);
                }
                h
            }
            TestFunction::TotalEnergy => {
                if a == b {
                    Mat3::identity() * 2.0
                } else {
                    Mat3::zeros()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Finite-N hierarchy with pair terms inside the tuple and the `(N−m)/N`
    /// factor on the coupling to the next marginal.
    FiniteN,
    /// Limiting hierarchy: no intra-tuple terms, coupling factor 1.
    HierarchyLimit,
}

fn frobenius(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// Generator of the particle system applied to `φ(v_{idx})`, averaged over the
/// particles outside the tuple for the coupling term.
fn tuple_generator(vs: &[Vec3], idx: &[usize], phi: &TestFunction, law: PowerLaw, mode: ResidualMode) -> f64 {
    let n = vs.len();
    let m = idx.len();
    let args: Vec<Vec3> = idx.iter().map(|&k| vs[k]).collect();
    let grads: Vec<Vec3> = (0..m).map(|a| phi.gradient(&args, a)).collect();
    let diag: Vec<Mat3> = (0..m).map(|a| phi.hessian(&args, a, a)).collect();
    let mut intra = 0.0;
    if mode == ResidualMode::FiniteN {
        for a in 0..m {
            for b in (0..m).filter(|&b| b != a) {
                let k = eval_with(&(args[a] - args[b]), law);
                let hab = phi.hessian(&args, a, b);
                intra += frobenius(&k.a_matrix, &(diag[a] - hab)) + k.b_vector.dot(&(grads[a] - grads[b]));
            }
        }
        intra /= n as f64;
    }
    let mut external = 0.0;
    let mut count = 0usize;
    for j in (0..n).filter(|j| !idx.contains(j)) {
        count += 1;
        for a in 0..m {
            let z = args[a] - vs[j];
            let r2 = z.norm_squared();
            if r2 == 0.0 {
                continue;
            }
            let r = r2.sqrt();
            let rg = law.pow_gamma(r);
            // A:H = |z|^{γ+2}(tr H − zᵀHz/|z|²)
            let a_h = r2 * rg * (diag[a].trace() - z.dot(&(diag[a] * z)) / r2);
            external += a_h + 2.0 * (z * (-2.0 * rg)).dot(&grads[a]);
        }
    }
    if count > 0 {
        external /= count as f64;
    }
    let factor = match mode {
        ResidualMode::FiniteN => (n - m) as f64 / n as f64,
        ResidualMode::HierarchyLimit => 1.0,
    };
    intra + factor * external
}

/// Replica-level mean of `φ` and of its generator over disjoint consecutive
/// `m`-tuples.
fn tuple_averages(e: &Ensemble, m: usize, phi: &TestFunction, law: PowerLaw, mode: ResidualMode) -> Result<(f64, f64)> {
    let tuples = e.len() / m;
    let mut val = 0.0;
    let mut generator = 0.0;
    for t in 0..tuples {
        let idx: Vec<usize> = (t * m..(t + 1) * m).collect();
        let args: Vec<Vec3> = idx.iter().map(|&k| e.velocities[k]).collect();
        let v = phi.value(&args);
        let g = tuple_generator(&e.velocities, &idx, phi, law, mode);
        if !v.is_finite() || !g.is_finite() {
            return Err(KacError::Input(format!(
                "test function evaluation is not finite at {:?} (t = {})",
                args.iter().map(|a| [a.x, a.y, a.z]).collect::<Vec<_>>(),
                e.time
            )));
        }
        val += v;
        generator += g;
    }
    Ok((val / tuples as f64, generator / tuples as f64))
}

/// Monte-Carlo residual `E φ(T) − E φ(0) − ∫₀ᵀ E[Lφ] dt` of the weak hierarchy
/// for the first `m` particles.
///
/// `trajectories[r]` holds the stored ensembles of replica `r` in time order;
/// all replicas must share the same times. The time integral is the trapezoid
/// rule over stored times up to `horizon`.
pub fn bbgky_residual(
    trajectories: &[Vec<Ensemble>],
    m: usize,
    test_fn: &TestFunction,
    horizon: f64,
    mode: ResidualMode,
) -> Result<Estimate> {
    let first = trajectories
        .first()
        .and_then(|t| t.first())
        .ok_or_else(|| KacError::Domain("no trajectories".into()))?;
    let n = first.len();
    if m == 0 || m > n {
        return Err(KacError::Domain(format!("tuple size must lie in 1..={n}, got {m}")));
    }
    if let Some(a) = test_fn.arity() {
        if a != m {
            return Err(KacError::Domain(format!("test function takes {a} arguments, tuple size is {m}")));
        }
    }
    if let TestFunction::GaussianBump { width, .. } = test_fn {
        if !(*width > 0.0) {
            return Err(KacError::Domain("bump width must be > 0".into()));
        }
    }
    let law = PowerLaw::new(first.gamma)?;
    let times: Vec<f64> = trajectories[0]
        .iter()
        .map(|e| e.time)
        .filter(|&t| t <= horizon * (1.0 + 1e-12))
        .collect();
    if times.len() < 2 {
        return Err(KacError::Domain("need at least two stored times within the horizon".into()));
    }
    let per_replica: Vec<f64> = trajectories
        .par_iter()
        .map(|traj| {
            if traj.len() < times.len() || traj.iter().zip(&times).any(|(e, t)| e.time != *t) {
                return Err(KacError::Domain("replicas were stored at different times".into()));
            }
            let mut values = Vec::with_capacity(times.len());
            let mut gens = Vec::with_capacity(times.len());
            for e in &traj[..times.len()] {
                let (v, g) = tuple_averages(e, m, test_fn, law, mode)?;
                values.push(v);
                gens.push(g);
            }
            let integral: f64 = times
                .windows(2)
                .zip(gens.windows(2))
                .map(|(t, g)| 0.5 * (t[1] - t[0]) * (g[0] + g[1]))
                .sum();
            Ok(values[values.len() - 1] - values[0] - integral)
        })
        .collect::<Result<_>>()?;
    if per_replica.len() == 1 {
        return Ok(Estimate::new(per_replica[0], f64::INFINITY));
    }
    mean_stderr(&per_replica)
}

/// Least-squares slope of `ln(m_p^{1/p})` against `ln p`.
pub fn moment_growth_exponent(p_values: &[f64], moments: &[f64]) -> Result<f64> {
    if p_values.len() != moments.len() || p_values.len() < 4 {
        return Err(KacError::Domain("growth exponent needs >= 4 (p, moment) pairs".into()));
    }
    if let Some(k) = moments.iter().position(|&m| !(m > 0.0)) {
        return Err(KacError::Domain(format!("moment {k} is not positive: {}", moments[k])));
    }
    let x: Vec<f64> = p_values.iter().map(|p| p.ln()).collect();
    let y: Vec<f64> = p_values.iter().zip(moments).map(|(p, m)| m.ln() / p).collect();
    Ok(ols(&x, &y)?.slope)
}

/// What to estimate at each time of a [`MomentReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub gamma: f64,
    pub p_values: Vec<f64>,
    pub xi_values: Vec<f64>,
    pub entropy_neighbors: Option<usize>,
    pub chaos: Option<ChaosStatistic>,
}

/// Time series of pooled one-particle statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `moment_mean[t][p]`.
    pub moment_mean: Vec<Vec<f64>>,
    pub moment_stderr: Vec<Vec<f64>>,
    pub xi_values: Vec<f64>,
    /// `exp_moment[t][ξ]`.
    pub exp_moment: Vec<Vec<ExpMomentEstimate>>,
    pub entropy: Vec<Option<f64>>,
    pub chaos_cov: Vec<Option<Estimate>>,
}

impl MomentReport {
    /// Builds the report from `frames[t]`, the replica ensembles at `times[t]`.
    pub fn build(times: &[f64], frames: &[Vec<&[Vec3]>], settings: &ReportSettings) -> Result<Self> {
        if times.len() != frames.len() {
            return Err(KacError::Domain("one frame per time is required".into()));
        }
        let specs: Vec<ExpMomentSpec> = settings
            .xi_values
            .iter()
            .map(|&xi| ExpMomentSpec::new(xi, settings.gamma))
            .collect::<Result<_>>()?;
        let mut report = MomentReport {
            times: times.to_vec(),
            p_values: settings.p_values.clone(),
            moment_mean: Vec::new(),
            moment_stderr: Vec::new(),
            xi_values: settings.xi_values.clone(),
            exp_moment: Vec::new(),
            entropy: Vec::new(),
            chaos_cov: Vec::new(),
        };
        for frame in frames {
            let moments: Vec<Estimate> = settings
                .p_values
                .iter()
                .map(|&p| polynomial_moment(frame, p))
                .collect::<Result<_>>()?;
            report.moment_mean.push(moments.iter().map(|e| e.value).collect());
            report.moment_stderr.push(moments.iter().map(|e| e.stderr).collect());
            report
                .exp_moment
                .push(specs.iter().map(|s| exponential_moment(frame, s)).collect::<Result<_>>()?);
            report.entropy.push(match settings.entropy_neighbors {
                Some(k) => {
                    let pooled: Vec<Vec3> = frame.iter().flat_map(|g| g.iter().copied()).collect();
                    Some(knn_entropy(&pooled, k)?)
                }
                None => None,
            });
            report.chaos_cov.push(match settings.chaos {
                Some(stat) if frame.len() >= 8 => Some(chaos_covariance(frame, stat)?),
                _ => None,
            });
        }
        Ok(report)
    }

    /// Series of one moment order over time.
    pub fn series(&self, p: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let k = self.p_values.iter().position(|&q| q == p)?;
        Some((
            self.moment_mean.iter().map(|row| row[k]).collect(),
            self.moment_stderr.iter().map(|row| row[k]).collect(),
        ))
    }
}

/// Polynomial moments pooled over the given replica ensembles at one time.
pub fn moment_report(ensembles: &[&Ensemble], p_values: &[f64]) -> Result<MomentReport> {
    let first = ensembles
        .first()
        .ok_or_else(|| KacError::Domain("no ensembles".into()))?;
    let frame: Vec<&[Vec3]> = ensembles.iter().map(|e| e.velocities.as_slice()).collect();
    MomentReport::build(
        &[first.time],
        &[frame],
        &ReportSettings {
            gamma: first.gamma,
            p_values: p_values.to_vec(),
            xi_values: Vec::new(),
            entropy_neighbors: None,
            chaos: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_initial_replica, InitialSpec, SeedLineage};
    use rand_distr::{Distribution, StandardNormal};

    fn ball_groups(n: usize, reps: u64) -> Vec<Vec<Vec3>> {
        (0..reps)
            .map(|r| {
                sample_initial_replica(&InitialSpec::uniform_ball(1.0), n, 7, r)
                    .unwrap()
                    .velocities
            })
            .collect()
    }

    fn slices(g: &[Vec<Vec3>]) -> Vec<&[Vec3]> {
        g.iter().map(|v| v.as_slice()).collect()
    }

    #[test]
    fn zero_samples_give_trivial_moments() {
        let z = vec![Vec3::zeros(); 10];
        assert_eq!(polynomial_moment(&[&z], 4.0).unwrap().value, 0.0);
        let e = exponential_moment(&[&z], &ExpMomentSpec::new(0.3, 0.5).unwrap()).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(polynomial_moment(&[], 4.0).is_err());
    }

    #[test]
    fn ball_fourth_moment_is_three_sevenths() {
        let g = ball_groups(2000, 10);
        let est = polynomial_moment(&slices(&g), 4.0).unwrap();
        assert!(est.within(3.0 / 7.0, 3.0), "{est:?}");
    }

    #[test]
    fn exponential_moment_properties() {
        let g = ball_groups(500, 4);
        let s = slices(&g);
        let e = exponential_moment(&s, &ExpMomentSpec::new(1.5, 0.5).unwrap()).unwrap();
        assert!(e.value <= 1.5f64.exp());
        let tiny = exponential_moment(&s, &ExpMomentSpec::new(1e-8, 0.5).unwrap()).unwrap();
        assert!((tiny.value - 1.0).abs() < 1e-6);
        assert!(!tiny.tail_dominated);
    }

    #[test]
    fn exponential_overflow_reports_log_value() {
        let big = vec![Vec3::new(40.0, 0.0, 0.0); 4];
        let e = exponential_moment(&[&big], &ExpMomentSpec::new(1.0, 0.0).unwrap()).unwrap();
        assert!(e.overflow);
        assert!((e.log_value - 1600.0).abs() < 1e-9);
    }

    #[test]
    fn tail_flag_fires_on_outlier() {
        let mut v = vec![Vec3::zeros(); 200];
        v[0] = Vec3::new(3.0, 0.0, 0.0);
        let e = exponential_moment(&[&v], &ExpMomentSpec::new(1.0, 0.0).unwrap()).unwrap();
        assert!(e.tail_dominated);
    }

    #[test]
    fn entropy_of_gaussian_and_ball() {
        let mut rng = keyed_rng(&[99]);
        let gauss: Vec<Vec3> = (0..100_000)
            .map(|_| Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let h = knn_entropy(&gauss, 4).unwrap();
        let exact = 1.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h - exact).abs() < 0.05, "{h} vs {exact}");
        let scaled: Vec<Vec3> = gauss.iter().map(|v| v * 2.0).collect();
        let h2 = knn_entropy(&scaled, 4).unwrap();
        assert!((h2 - h - 3.0 * 2f64.ln()).abs() < 0.05);
        let ball = sample_initial_replica(&InitialSpec::uniform_ball(1.0), 100_000, 3, 0).unwrap();
        let hb = knn_entropy(&ball.velocities, 4).unwrap();
        assert!((hb - (4.0 * std::f64::consts::PI / 3.0).ln()).abs() < 0.05, "{hb}");
    }

    #[test]
    fn entropy_survives_duplicates() {
        let mut pts = ball_groups(300, 1).pop().unwrap();
        pts[5] = pts[6];
        assert!(knn_entropy(&pts, 4).unwrap().is_finite());
        assert!(knn_entropy(&pts[..3], 4).is_err());
    }

    #[test]
    fn chaos_covariance_vanishes_for_iid_and_not_for_pairs() {
        let g = ball_groups(64, 200);
        let c = chaos_covariance(&slices(&g), ChaosStatistic::SpeedSq).unwrap();
        assert!(c.value.abs() <= 3.0 * c.stderr, "{c:?}");
        // momentum-free pairs: v² = −v¹ so the x components are perfectly anticorrelated
        let pairs: Vec<Vec<Vec3>> = ball_groups(2, 200).iter().map(|g| vec![g[0], -g[0]]).collect();
        let c = chaos_covariance(&slices(&pairs), ChaosStatistic::ComponentX).unwrap();
        assert!(c.value < -0.1, "{c:?}");
        assert!(chaos_covariance(&slices(&g[..5]), ChaosStatistic::SpeedSq).is_err());
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let f = TestFunction::GaussianBump {
            centers: vec![Vec3::new(0.1, -0.2, 0.3), Vec3::new(-0.4, 0.0, 0.2)],
            width: 0.7,
        };
        let v = [Vec3::new(0.3, 0.1, -0.2), Vec3::new(0.0, 0.5, 0.4)];
        let h = 1e-5;
        for a in 0..2 {
            for c in 0..3 {
                let mut plus = v;
                let mut minus = v;
                plus[a][c] += h;
                minus[a][c] -= h;
                let fd = (f.value(&plus) - f.value(&minus)) / (2.0 * h);
                assert!((fd - f.gradient(&v, a)[c]).abs() < 1e-8);
                for b in 0..2 {
                    let fd2 = (f.gradient(&plus, b) - f.gradient(&minus, b)) / (2.0 * h);
                    let col = f.hessian(&v, b, a).column(c).into_owned();
                    assert!((fd2 - col).norm() < 1e-7);
                }
            }
        }
    }

    fn trajectory(reps: u64, n: usize) -> Vec<Vec<Ensemble>> {
        use crate::integrator::{step, StepOptions};
        use crate::noise::NoiseKey;
        (0..reps)
            .map(|r| {
                let mut e = sample_initial_replica(&InitialSpec::uniform_ball(1.0), n, 2, r)
                    .unwrap()
                    .with_gamma(0.5)
                    .unwrap();
                e.lineage = SeedLineage { seed: 2, replica: r, step: 0 };
                let opts = StepOptions { energy_projection: true, ..StepOptions::default() };
                let mut out = vec![e.clone()];
                for k in 0..5 {
                    e = step(&e, &opts, NoiseKey::new(2, r, k)).unwrap();
                    out.push(e.clone());
                }
                out
            })
            .collect()
    }

    #[test]
    fn constant_and_energy_residuals_vanish() {
        let traj = trajectory(3, 24);
        for mode in [ResidualMode::FiniteN, ResidualMode::HierarchyLimit] {
            let r = bbgky_residual(&traj, 2, &TestFunction::Constant(3.0), 0.05, mode).unwrap();
            assert_eq!(r.value, 0.0);
        }
        let r = bbgky_residual(&traj, 24, &TestFunction::TotalEnergy, 0.05, ResidualMode::FiniteN).unwrap();
        assert!(r.value.abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn residual_input_errors() {
        let traj = trajectory(1, 8);
        let bump = TestFunction::GaussianBump { centers: vec![Vec3::zeros()], width: 0.5 };
        assert!(bbgky_residual(&traj, 2, &bump, 0.05, ResidualMode::FiniteN).is_err());
        assert!(bbgky_residual(&traj, 9, &TestFunction::TotalEnergy, 0.05, ResidualMode::FiniteN).is_err());
    }

    #[test]
    fn growth_exponent_of_synthetic_families() {
        let ps = [4.0, 6.0, 8.0, 10.0, 12.0];
        let s = 0.37;
        let m: Vec<f64> = ps.iter().map(|p: &f64| p.powf(s * p)).collect();
        assert!((moment_growth_exponent(&ps, &m).unwrap() - s).abs() < 1e-12);
        let sat: Vec<f64> = ps.iter().map(|p: &f64| (1.3 * p.powf(0.75)).powf(*p)).collect();
        assert!((moment_growth_exponent(&ps, &sat).unwrap() - 0.75).abs() < 1e-12);
        assert!(moment_growth_exponent(&ps, &[1.0, 2.0, 0.0, 1.0, 1.0]).is_err());
    }
}
