//! Adaptive Dormand–Prince 5(4) integration and Gauss–Legendre quadrature.

use crate::{KacError, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Any component beyond this magnitude counts as blow-up, as does a step
    /// size collapsing below `1e-13·max(|t|, 1)`.
    pub blow_up: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-8,
            atol: 1e-12,
            max_steps: 5_000_000,
            blow_up: 1e300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    /// State at each requested time; `∞` entries after a blow-up.
    pub states: Vec<Vec<f64>>,
    pub blow_up_time: Option<f64>,
}

/// Relative step size below which integration is considered stalled.
const STALL: f64 = 1e-13;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine(y: &[f64], h: f64, terms: &[(f64, &[f64])], out: &mut [f64]) {
    for i in 0..y.len() {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] = y[i] + h * s;
    }
}

/// Integrates `y' = f(t, y)` from `(t0, y0)` and reports the state at each
/// time of `grid` (non-decreasing, all `≥ t0`).
pub fn integrate(
    mut f: impl FnMut(f64, &[f64], &mut [f64]),
    t0: f64,
    y0: &[f64],
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<OdeSolution> {
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|&g| g < t0) {
        return Err(KacError::Domain("output times must be non-decreasing and >= t0".into()));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut states = Vec::with_capacity(grid.len());
    let mut blow_up_time = None;
    f(t, &y, &mut k[0]);
    let span = grid.last().map_or(0.0, |g| g - t0);
    let mut h = if span > 0.0 { span * 1e-3 } else { 1e-3 };
    let mut steps = 0usize;
    for &target in grid {
        if blow_up_time.is_some() {
            states.push(vec![f64::INFINITY; n]);
            continue;
        }
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(KacError::Domain(format!("ODE step budget exhausted at t = {t}")));
            }
            let last = h >= target - t;
            let hs = if last { target - t } else { h };
            let (k0, rest) = k.split_first_mut().unwrap();
            let [k1, k2, k3, k4, k5, k6] = rest else { unreachable!() };
            combine(&y, hs, &[(A21, &k0[..])], &mut tmp);
            f(t + C2 * hs, &tmp, k1);
            combine(&y, hs, &[(A31, &k0[..]), (A32, &k1[..])], &mut tmp);
            f(t + C3 * hs, &tmp, k2);
            combine(&y, hs, &[(A41, &k0[..]), (A42, &k1[..]), (A43, &k2[..])], &mut tmp);
            f(t + C4 * hs, &tmp, k3);
            combine(&y, hs, &[(A51, &k0[..]), (A52, &k1[..]), (A53, &k2[..]), (A54, &k3[..])], &mut tmp);
            f(t + C5 * hs, &tmp, k4);
            combine(&y, hs, &[(A61, &k0[..]), (A62, &k1[..]), (A63, &k2[..]), (A64, &k3[..]), (A65, &k4[..])], &mut tmp);
            f(t + hs, &tmp, k5);
            combine(&y, hs, &[(B1, &k0[..]), (B3, &k2[..]), (B4, &k3[..]), (B5, &k4[..]), (B6, &k5[..])], &mut y5);
            f(t + hs, &y5, k6);
            let mut err = 0.0;
            for i in 0..n {
                let e = hs * (E1 * k0[i] + E3 * k2[i] + E4 * k3[i] + E5 * k4[i] + E6 * k5[i] + E7 * k6[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            if err.is_nan() || !y5.iter().all(|v| v.is_finite()) {
                if y.iter().any(|v| v.abs() > opts.blow_up) {
                    blow_up_time = Some(t);
                    break;
                }
                h = hs * 0.2;
                if h < STALL * t.abs().max(1.0) {
                    blow_up_time = Some(t);
                    break;
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { target } else { t + hs };
                y.copy_from_slice(&y5);
                k.swap(0, 6);
                if y.iter().any(|v| v.abs() > opts.blow_up) {
                    blow_up_time = Some(t);
                    break;
                }
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            let proposal = hs * factor;
            // a shortened final step should not shrink the working step size
            h = if last && err <= 1.0 { h.max(proposal) } else { proposal };
            // a step this small can no longer advance t: the solution is singular here
            if h < STALL * t.abs().max(1.0) {
                blow_up_time = Some(t);
                break;
            }
        }
        states.push(if blow_up_time.is_some() { vec![f64::INFINITY; n] } else { y.clone() });
    }
    Ok(OdeSolution {
        times: grid.to_vec(),
        states,
        blow_up_time,
    })
}

/// 10-point Gauss–Legendre nodes and weights on [−1, 1].
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

fn gl_panel(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
        s += w * (f(c - r * x) + f(c + r * x));
    }
    s * r
}

/// Adaptive 10-point Gauss–Legendre quadrature of `f` over `[a, b]`.
pub fn quad(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = gl_panel(f, a, m);
        let right = gl_panel(f, m, b);
        let both = left + right;
        if depth == 0 || (both - whole).abs() <= tol * both.abs().max(1.0) {
            return both;
        }
        rec(f, a, m, left, tol, depth - 1) + rec(f, m, b, right, tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let whole = gl_panel(&mut f, a, b);
    rec(&mut f, a, b, whole, tol, 30)
}
