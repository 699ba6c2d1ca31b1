//! Landau pair kernels for hard potentials.
//!
//! For a relative velocity `z` and interaction exponent `γ ∈ [0, 1]`:
//!
//! ```text
//! Π(z) = Id − z⊗z / |z|²
//! A(z) = |z|^{γ+2} Π(z)
//! B(z) = −2 z |z|^γ
//! σ(z) = |z|^{1+γ/2} Π(z)          (σσᵀ = A)
//! ```
//!
//! All kernels are defined to be zero at `z = 0`, which is the continuous
//! extension of `A`, `B` and `σ`.

use crate::{KacError, Mat3, Result, Vec3};

/// Kernel values for one relative velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKernelValue {
    pub a_matrix: Mat3,
    pub b_vector: Vec3,
    pub sigma_matrix: Mat3,
}

impl PairKernelValue {
    fn zero() -> Self {
        PairKernelValue {
            a_matrix: Mat3::zeros(),
            b_vector: Vec3::zeros(),
            sigma_matrix: Mat3::zeros(),
        }
    }
}

/// Power-law evaluator with fast paths for the exponents used most often.
///
/// `γ = 0`, `½` and `1` reduce to square roots, which keeps the O(N²) pair
/// loops free of `powf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerLaw {
    Maxwellian,
    Half,
    One,
    General(f64),
}

impl PowerLaw {
    pub fn new(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(if gamma == 0.0 {
            PowerLaw::Maxwellian
        } else if gamma == 0.5 {
            PowerLaw::Half
        } else if gamma == 1.0 {
            PowerLaw::One
        } else {
            PowerLaw::General(gamma)
        })
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            PowerLaw::Maxwellian => 0.0,
            PowerLaw::Half => 0.5,
            PowerLaw::One => 1.0,
            PowerLaw::General(g) => g,
        }
    }

    /// `r^γ`
    #[inline(always)]
    pub fn pow_gamma(&self, r: f64) -> f64 {
        match *self {
            PowerLaw::Maxwellian => 1.0,
            PowerLaw::Half => r.sqrt(),
            PowerLaw::One => r,
            PowerLaw::General(g) => r.powf(g),
        }
    }

    /// `r^{1+γ/2}`
    #[inline(always)]
    pub fn pow_sigma(&self, r: f64) -> f64 {
        match *self {
            PowerLaw::Maxwellian => r,
            PowerLaw::Half => r * r.sqrt().sqrt(),
            PowerLaw::One => r * r.sqrt(),
            PowerLaw::General(g) => r * r.powf(0.5 * g),
        }
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(KacError::Domain(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    Ok(())
}

fn check_finite(z: &Vec3) -> Result<()> {
    if z.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(KacError::Input(format!("non-finite vector {z:?}")))
    }
}

/// Orthogonal projector onto the plane normal to `z`; zero at `z = 0`.
pub fn projector(z: &Vec3) -> Mat3 {
    let r2 = z.norm_squared();
    if r2 == 0.0 {
        return Mat3::zeros();
    }
    Mat3::identity() - z * z.transpose() / r2
}

/// Evaluates `A(z)`, `B(z)` and `σ(z)`.
pub fn eval_pair_kernels(z: &Vec3, gamma: f64) -> Result<PairKernelValue> {
    check_finite(z)?;
    let law = PowerLaw::new(gamma)?;
    Ok(eval_with(z, law))
}

pub(crate) fn eval_with(z: &Vec3, law: PowerLaw) -> PairKernelValue {
    let r2 = z.norm_squared();
    if r2 == 0.0 {
        return PairKernelValue::zero();
    }
    let r = r2.sqrt();
    let pi = projector(z);
    let rg = law.pow_gamma(r);
    PairKernelValue {
        a_matrix: pi * (r2 * rg),
        b_vector: z * (-2.0 * rg),
        sigma_matrix: pi * law.pow_sigma(r),
    }
}

/// `B(z) = −2 z |z|^γ` without building the matrices.
#[inline(always)]
pub(crate) fn drift_kernel(z: &Vec3, law: PowerLaw) -> Vec3 {
    let r = z.norm();
    z * (-2.0 * law.pow_gamma(r))
}

/// `σ(z)·w` computed as `|z|^{1+γ/2}(w − z (z·w)/|z|²)`.
#[inline(always)]
pub(crate) fn sigma_apply(z: &Vec3, w: &Vec3, law: PowerLaw) -> Vec3 {
    let r2 = z.norm_squared();
    if r2 == 0.0 {
        return Vec3::zeros();
    }
    let proj = w - z * (z.dot(w) / r2);
    proj * law.pow_sigma(r2.sqrt())
}

/// Scaled evaluation of the sharpened Povzner inequality.
///
/// Both sides are homogeneous of degree `p + γ` in `(x, y)`, so they are
/// evaluated at `(x, y)/M` with `M = max(x, y)`; the true values are the
/// scaled ones times `M^{p+γ}` (`exp(log_scale)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PovznerSides {
    pub lhs_scaled: f64,
    pub rhs_scaled: f64,
    /// `(p + γ) ln M`; `−∞` when `x = y = 0`.
    pub log_scale: f64,
}

impl PovznerSides {
    pub fn gap_scaled(&self) -> f64 {
        self.rhs_scaled - self.lhs_scaled
    }

    /// Whether `RHS − LHS ≥ −tol·(1 + |RHS|)` holds in true units.
    pub fn holds_within(&self, tol: f64) -> bool {
        if self.log_scale == f64::NEG_INFINITY {
            return true;
        }
        // Divide the "1 +" term by the scale instead of multiplying the rest.
        let unit = (-self.log_scale).exp();
        self.gap_scaled() >= -tol * (unit + self.rhs_scaled.abs())
    }
}

fn check_povzner_domain(x: f64, y: f64, p: f64, gamma: f64) -> Result<()> {
    if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) {
        return Err(KacError::Domain(format!(
            "Povzner arguments must be finite and non-negative, got x={x}, y={y}"
        )));
    }
    if !(p.is_finite() && p >= 4.0) {
        return Err(KacError::Domain(format!("Povzner order p must be >= 4, got {p}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(KacError::Domain(format!(
            "Povzner exponent gamma must lie in (0, 1], got {gamma}"
        )));
    }
    Ok(())
}

pub fn povzner_sides(x: f64, y: f64, p: f64, gamma: f64) -> Result<PovznerSides> {
    check_povzner_domain(x, y, p, gamma)?;
    let m = x.max(y);
    if m == 0.0 {
        return Ok(PovznerSides {
            lhs_scaled: 0.0,
            rhs_scaled: 0.0,
            log_scale: f64::NEG_INFINITY,
        });
    }
    let (xs, ys) = (x / m, y / m);
    let g = gamma;
    let diff_g = (xs - ys).abs().powf(g);
    let lhs = (-xs.powf(p) - ys.powf(p)
        + 0.5 * p * xs.powf(p - 2.0) * ys * ys
        + 0.5 * p * ys.powf(p - 2.0) * xs * xs)
        * diff_g;
    let rhs = -0.5 * xs.powf(p + g) - 0.5 * ys.powf(p + g)
        + xs.powf(p) * ys.powf(g)
        + ys.powf(p) * xs.powf(g)
        + p.powf(1.0 + 0.5 * g)
            * (xs.powf(p - 2.0 + g) * ys * ys + ys.powf(p - 2.0 + g) * xs * xs);
    Ok(PovznerSides {
        lhs_scaled: lhs,
        rhs_scaled: rhs,
        log_scale: (p + g) * m.ln(),
    })
}

/// `RHS − LHS` of the sharpened Povzner inequality in true units.
///
/// Returns [`KacError::Overflow`] when the unscaled value is not representable;
/// use [`povzner_sides`] to compare in scaled form instead.
pub fn povzner_gap(x: f64, y: f64, p: f64, gamma: f64) -> Result<f64> {
    let sides = povzner_sides(x, y, p, gamma)?;
    if sides.log_scale == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let gap = sides.gap_scaled();
    if gap == 0.0 {
        return Ok(0.0);
    }
    let log_mag = gap.abs().ln() + sides.log_scale;
    if log_mag >= f64::MAX.ln() {
        return Err(KacError::Overflow(format!(
            "Povzner gap at x={x}, y={y}, p={p} has magnitude e^{log_mag:.1}; shrink the range"
        )));
    }
    Ok(gap.signum() * log_mag.exp())
}

/// Moduli ratios `|B(x)−B(y)| / (|x−y|(|x|^γ+|y|^γ))` and
/// `‖σ(x)−σ(y)‖_F / (|x−y|(|x|^{γ/2}+|y|^{γ/2}))`; `(0, 0)` when `x = y`.
pub fn kernel_modulus_ratio(x: &Vec3, y: &Vec3, gamma: f64) -> Result<(f64, f64)> {
    check_finite(x)?;
    check_finite(y)?;
    let law = PowerLaw::new(gamma)?;
    let d = (x - y).norm();
    if d == 0.0 {
        return Ok((0.0, 0.0));
    }
    let kx = eval_with(x, law);
    let ky = eval_with(y, law);
    let (nx, ny) = (x.norm(), y.norm());
    let denom_b = d * (law.pow_gamma(nx) + law.pow_gamma(ny));
    let denom_s = d * (nx.powf(0.5 * gamma) + ny.powf(0.5 * gamma));
    let ratio_b = (kx.b_vector - ky.b_vector).norm() / denom_b;
    let ratio_s = (kx.sigma_matrix - ky.sigma_matrix).norm() / denom_s;
    Ok((ratio_b, ratio_s))
}
