//! Analytical machinery behind the moment and stability estimates: the
//! moment differential inequality and its comparison bound, the polynomial
//! and exponential moment scales, the F/G weight ladders of the hierarchy
//! recursion, and the resulting distance bounds.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::ode::{integrate, quad, OdeOptions};
use crate::{KacError, Result};

/// Physical origin of a [`MomentOdeParams`] instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentOrigin {
    pub p: f64,
    pub gamma: f64,
    pub r0: f64,
}

/// Coefficients of `h' = −a h^{1+α} + b h + c h^{1−β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentOdeParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub origin: Option<MomentOrigin>,
}

impl MomentOdeParams {
    pub fn new(a: f64, b: f64, c: f64, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("c", c), ("alpha", alpha), ("beta", beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(KacError::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(MomentOdeParams { a, b, c, alpha, beta, origin: None })
    }

    /// The instance satisfied by `h_t = E|V¹_t|^p`:
    /// `a = p`, `b = 2p r0^γ`, `c = 2 r0² p^{2+γ/2}`, `α = γ/(p−2)`,
    /// `β = (2−γ)/(p−2)`.
    pub fn for_moment(p: f64, gamma: f64, r0: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(KacError::Domain(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if !(p > 4.0 - gamma) {
            return Err(KacError::Domain(format!("p must exceed 4 − γ = {}, got {p}", 4.0 - gamma)));
        }
        if !(r0 > 0.0) {
            return Err(KacError::Domain(format!("r0 must be > 0, got {r0}")));
        }
        let mut params = Self::new(
            p,
            2.0 * p * r0.powf(gamma),
            2.0 * r0 * r0 * p.powf(2.0 + gamma / 2.0),
            gamma / (p - 2.0),
            (2.0 - gamma) / (p - 2.0),
        )?;
        params.origin = Some(MomentOrigin { p, gamma, r0 });
        Ok(params)
    }

    pub fn rhs(&self, h: f64) -> f64 {
        let h = h.max(0.0);
        let mut v = -self.a * h.powf(1.0 + self.alpha) + self.b * h;
        if self.c != 0.0 {
            v += self.c * h.powf(1.0 - self.beta);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentOdeTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub blow_up_time: Option<f64>,
}

/// Integrates the equality version of the moment inequality from `h(0) = h0`.
pub fn moment_ode_solve(params: &MomentOdeParams, h0: f64, t_grid: &[f64]) -> Result<MomentOdeTrajectory> {
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(KacError::Domain(format!("h0 must be > 0, got {h0}")));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(KacError::Domain("t_grid must be increasing and non-negative".into()));
    }
    let opts = OdeOptions { rtol: 1e-8, atol: 1e-14, ..OdeOptions::default() };
    let sol = integrate(|_, y, dy| dy[0] = params.rhs(y[0]), 0.0, &[h0], t_grid, &opts)?;
    Ok(MomentOdeTrajectory {
        times: t_grid.to_vec(),
        values: sol.states.iter().map(|s| s[0]).collect(),
        blow_up_time: sol.blow_up_time,
    })
}

/// Natural log of the comparison bound
/// `(2/(aαt))^{1/α} + (4b/a)^{1/α} + (4c/a)^{1/(α+β)}`.
pub fn moment_ode_bound_log(params: &MomentOdeParams, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(KacError::Domain(format!("the comparison bound needs t > 0, got {t}")));
    }
    let MomentOdeParams { a, b, c, alpha, beta, .. } = *params;
    if !(a > 0.0 && alpha > 0.0) {
        return Ok(f64::INFINITY);
    }
    let mut logs = vec![((2.0 / (a * alpha * t)).ln()) / alpha];
    if b > 0.0 {
        logs.push((4.0 * b / a).ln() / alpha);
    }
    if c > 0.0 {
        logs.push((4.0 * c / a).ln() / (alpha + beta));
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
}

pub fn moment_ode_bound(params: &MomentOdeParams, t: f64) -> Result<f64> {
    Ok(moment_ode_bound_log(params, t)?.exp())
}

/// Boundary `p^{−γ(2+γ)/4}` between the small-time and large-time regimes.
pub fn regime_split_time(p: f64, gamma: f64) -> Result<f64> {
    if !(p >= 4.0) {
        return Err(KacError::Domain(format!("p must be >= 4, got {p}")));
    }
    crate::kernels::check_gamma(gamma)?;
    Ok(p.powf(-gamma * (2.0 + gamma) / 4.0))
}

/// `ln(C^p p^{(2+γ)(p−2)/4})`.
pub fn polynomial_moment_bound_log(p: f64, gamma: f64, c_const: f64) -> Result<f64> {
    if !(p >= 4.0) {
        return Err(KacError::Domain(format!("p must be >= 4, got {p}")));
    }
    crate::kernels::check_gamma(gamma)?;
    if !(c_const >= 0.0) {
        return Err(KacError::Domain(format!("C must be >= 0, got {c_const}")));
    }
    Ok(p * c_const.ln() + (2.0 + gamma) * (p - 2.0) / 4.0 * p.ln())
}

/// Uniform polynomial moment scale `C^p p^{(2+γ)(p−2)/4}`.
pub fn polynomial_moment_bound(p: f64, gamma: f64, c_const: f64) -> Result<f64> {
    Ok(polynomial_moment_bound_log(p, gamma, c_const)?.exp())
}

/// Smallest `C` with `m_p ≤ C^p p^{(2+γ)(p−2)/4}` for every supplied pair.
pub fn fit_moment_constant(p_values: &[f64], moments: &[f64], gamma: f64) -> Result<f64> {
    if p_values.is_empty() || p_values.len() != moments.len() {
        return Err(KacError::Domain("need matching, non-empty p and moment lists".into()));
    }
    let mut c: f64 = 0.0;
    for (&p, &m) in p_values.iter().zip(moments) {
        if !(m > 0.0) {
            return Err(KacError::Domain(format!("moment at p = {p} is not positive")));
        }
        let shape = polynomial_moment_bound_log(p, gamma, 1.0)?;
        c = c.max(((m.ln() - shape) / p).exp());
    }
    Ok(c)
}

/// Radius `ξ* = (2+γ)/(4e C^{4/(2+γ)})` of the exponential-moment series.
pub fn exp_series_threshold(c_const: f64, gamma: f64) -> Result<f64> {
    crate::kernels::check_gamma(gamma)?;
    if !(c_const > 0.0) {
        return Err(KacError::Domain(format!("C must be > 0, got {c_const}")));
    }
    Ok((2.0 + gamma) / (4.0 * std::f64::consts::E * c_const.powf(4.0 / (2.0 + gamma))))
}

/// Moments `C^p p^{(2+γ)(p−2)/4}` at `p = 4k/(2+γ)`, `k = 0..=n_max`, with the
/// `k = 0` entry equal to 1. Returned as natural logs.
pub fn saturating_series_moments_log(c_const: f64, gamma: f64, n_max: usize) -> Vec<f64> {
    (0..=n_max)
        .map(|k| {
            if k == 0 {
                return 0.0;
            }
            let p = 4.0 * k as f64 / (2.0 + gamma);
            p * c_const.ln() + (2.0 + gamma) * (p - 2.0) / 4.0 * p.ln()
        })
        .collect()
}

/// Partial sums `S_n = Σ_{k≤n} ξ^k/k! · m_k` given `ln m_k` for
/// `m_k = E|v|^{4k/(2+γ)}`. Sums that exceed f64 are reported as `∞`.
pub fn exp_series_partial_sums(xi: f64, log_moments: &[f64]) -> Result<Vec<f64>> {
    if !(xi > 0.0) {
        return Err(KacError::Domain(format!("xi must be > 0, got {xi}")));
    }
    let mut sum = 0.0;
    Ok(log_moments
        .iter()
        .enumerate()
        .map(|(k, lm)| {
            let kf = k as f64;
            let log_term = kf * xi.ln() - ln_gamma(kf + 1.0) + lm;
            sum += log_term.exp();
            sum
        })
        .collect())
}

/// Which ladder of hierarchy weights to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ladder {
    F,
    G,
}

fn ladder(kind: Ladder, m: usize, l: usize, a: f64, t: f64) -> Result<f64> {
    if m < 1 || l < m {
        return Err(KacError::Domain(format!("need 1 <= m <= l, got m = {m}, l = {l}")));
    }
    if !(a > 0.0) || !(t >= 0.0) {
        return Err(KacError::Domain(format!("need a > 0 and t >= 0, got a = {a}, t = {t}")));
    }
    if t == 0.0 {
        return Ok(match kind {
            Ladder::G if m == l => 1.0,
            _ => 0.0,
        });
    }
    // state index i ↔ level k = m + i; F runs over m..=l with F_{l+1} ≡ 1,
    // G over m..=l−1 with G_l = e^{−alt}
    let top = match kind {
        Ladder::F => l,
        Ladder::G => {
            if m == l {
                return Ok((-a * l as f64 * t).exp());
            }
            l - 1
        }
    };
    let dim = top - m + 1;
    let opts = OdeOptions { rtol: 1e-12, atol: 1e-16, ..OdeOptions::default() };
    let sol = integrate(
        |s, y, dy| {
            for i in 0..dim {
                let k = (m + i) as f64;
                let next = if i + 1 < dim {
                    y[i + 1]
                } else {
                    match kind {
                        Ladder::F => 1.0,
                        Ladder::G => (-a * l as f64 * s).exp(),
                    }
                };
                dy[i] = a * k * (next - y[i]);
            }
        },
        0.0,
        &vec![0.0; dim],
        &[t],
        &opts,
    )?;
    Ok(sol.states[0][0])
}

/// `F_m^ℓ(t)` and `G_m^ℓ(t)` from the linear ladders
/// `F_k' = ak(F_{k+1} − F_k)` (`F_{ℓ+1} ≡ 1`, `F_k(0) = 0`) and
/// `G_k' = ak(G_{k+1} − G_k)` (`G_ℓ = e^{−aℓt}`, `G_k(0) = 0` for `k < ℓ`).
pub fn hierarchy_weights(m: usize, l: usize, a: f64, t: f64) -> Result<(f64, f64)> {
    Ok((ladder(Ladder::F, m, l, a, t)?, ladder(Ladder::G, m, l, a, t)?))
}

/// `Σ_{ℓ=m}^{L} F_m^ℓ(t)` and `Σ_{ℓ=m}^{L} ℓ G_m^ℓ(t)`.
pub fn hierarchy_weight_sums(m: usize, l_max: usize, a: f64, t: f64) -> Result<(f64, f64)> {
    let mut f = 0.0;
    let mut g = 0.0;
    for l in m..=l_max {
        let (fl, gl) = hierarchy_weights(m, l, a, t)?;
        f += fl;
        g += l as f64 * gl;
    }
    Ok((f, g))
}

/// Right-hand sides of the three combinatorial weight estimates at `(m, n,
/// a, t)`: `exp(−2n(e^{−at} − m/n)₊²)`, `m(e^{at} − 1)` and `m a e^{at}`.
pub fn weight_bounds(m: usize, n: usize, a: f64, t: f64) -> (f64, f64, f64) {
    let (mf, nf) = (m as f64, n as f64);
    let gap = ((-a * t).exp() - mf / nf).max(0.0);
    ((-2.0 * nf * gap * gap).exp(), mf * ((a * t).exp() - 1.0), mf * a * (a * t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    pub a_cutoff: f64,
    pub m: usize,
    pub n: usize,
    pub horizon: f64,
    pub u0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
    pub eta: f64,
    pub gamma: f64,
}

impl HierarchyParams {
    /// Defaults for the unspecified constants: `C1 = C2 = C4 = 1`, `η = 0.1`.
    pub fn new(a_cutoff: f64, m: usize, n: usize, horizon: f64, u0: f64, gamma: f64) -> Self {
        HierarchyParams {
            a_cutoff,
            m,
            n,
            horizon,
            u0,
            c1: 1.0,
            c2: 1.0,
            c4: 1.0,
            eta: 0.1,
            gamma,
        }
    }

    fn cutoff_exponent(&self) -> Result<f64> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(KacError::Domain(format!(
                "the cut-off exponent 4/(γ²+2γ) needs γ in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(4.0 / (self.gamma * self.gamma + 2.0 * self.gamma))
    }
}

/// `u0·m·a·e^{2aT} + C2·T·e^{2aT}·m/(a·e^{C1·a^{4/(γ²+2γ)}}) + C4·e^{5aT}/n`,
/// valid for `n ≥ 2m e^{aT}`.
pub fn u_recursion_bound(params: &HierarchyParams) -> Result<f64> {
    let HierarchyParams { a_cutoff: a, m, n, horizon: t, u0, c1, c2, c4, .. } = *params;
    if !(a > 0.0) || !(t >= 0.0) || !(u0 >= 0.0) || m < 1 || m > n {
        return Err(KacError::Domain(format!(
            "need a > 0, T >= 0, u0 >= 0 and 1 <= m <= n; got a = {a}, T = {t}, u0 = {u0}, m = {m}, n = {n}"
        )));
    }
    for (name, v) in [("c1", c1), ("c2", c2), ("c4", c4)] {
        if !(v > 0.0) {
            return Err(KacError::Domain(format!("{name} must be > 0, got {v}")));
        }
    }
    let need = 2.0 * m as f64 * (a * t).exp();
    if (n as f64) < need {
        return Err(KacError::Domain(format!(
            "validity region violated: n >= 2m·e^(aT) requires n >= {need:.3}, got n = {n}"
        )));
    }
    let exponent = params.cutoff_exponent()?;
    let mf = m as f64;
    let e2 = (2.0 * a * t).exp();
    let damping = (c1 * a.powf(exponent)).exp();
    Ok(u0 * mf * a * e2 + c2 * t * e2 * mf / (a * damping) + c4 * (5.0 * a * t).exp() / n as f64)
}

/// Stability bound `C √(m(1+T)) (√u0)^{1−η}` on `W2(f_m(T), f̃_m(T))`.
pub fn stability_rhs(m: usize, horizon: f64, u0: f64, eta: f64, c_const: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(KacError::Domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    if !(u0 >= 0.0) || !(horizon >= 0.0) || m < 1 {
        return Err(KacError::Domain(format!(
            "need u0 >= 0, T >= 0, m >= 1; got u0 = {u0}, T = {horizon}, m = {m}"
        )));
    }
    Ok(c_const * (m as f64 * (1.0 + horizon)).sqrt() * u0.sqrt().powf(1.0 - eta))
}

/// Cut-off `a = ((1/C1)·ln(1 + 1/u0))^{(γ²+2γ)/4}` balancing the two terms of
/// the recursion bound.
pub fn stability_cutoff(u0: f64, c1: f64, gamma: f64) -> Result<f64> {
    if !(u0 >= 0.0) || !(c1 > 0.0) {
        return Err(KacError::Domain(format!("need u0 >= 0 and C1 > 0, got {u0}, {c1}")));
    }
    crate::kernels::check_gamma(gamma)?;
    Ok(((1.0 / u0).ln_1p() / c1).powf((gamma * gamma + 2.0 * gamma) / 4.0))
}

/// Right-hand side of the one-level Gronwall recursion,
/// `e^{−a(m−1)t} u_m(0) + ∫₀ᵗ e^{−a(m−1)(t−s)} (C2 m t / e^{C1 a^{4/(γ²+2γ)}} + a m u_{m+1}(s)) ds`.
#[allow(clippy::too_many_arguments)]
pub fn gronwall_step(
    a: f64,
    m: usize,
    t: f64,
    u_m0: f64,
    c1: f64,
    c2: f64,
    gamma: f64,
    u_next: impl Fn(f64) -> f64,
) -> Result<f64> {
    if !(a > 0.0) || !(t >= 0.0) || m < 1 {
        return Err(KacError::Domain(format!("need a > 0, t >= 0, m >= 1; got {a}, {t}, {m}")));
    }
    let exponent = HierarchyParams { gamma, ..HierarchyParams::new(a, m, m, t, 0.0, gamma) }.cutoff_exponent()?;
    let mf = m as f64;
    let rate = a * (mf - 1.0);
    let source = c2 * mf * t / (c1 * a.powf(exponent)).exp();
    let mut bad = None;
    let integral = quad(
        |s| {
            let u = u_next(s);
            if !u.is_finite() || u < 0.0 {
                bad = Some((s, u));
            }
            (-rate * (t - s)).exp() * (source + a * mf * u)
        },
        0.0,
        t,
        1e-13,
    );
    if let Some((s, u)) = bad {
        return Err(KacError::Input(format!("u_(m+1)({s}) = {u} is not a finite non-negative value")));
    }
    Ok((-rate * t).exp() * u_m0 + integral)
}
