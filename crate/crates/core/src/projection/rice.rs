//! Rice fading: identical OU components with a common mean level `θ`.
//!
//! With `I0 = Q0` both components share the Gaussian law `N(m(s), σ²(s))`,
//! and the projected drift needs `E[I(s) | R(s) = r]`. The exact value comes
//! from integrating the conditional density of `I` on the circle of radius
//! `sqrt(r)`; the affine predictor replaces it with a linear regression on `r`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou_channel::{classify_fading, ou_moments, FadingClass, OuParams};
use crate::quadrature::{integrate, QuadOptions};
use crate::special_functions::{i0e, i_neg_half_e};

use super::{EnvelopeModel, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RiceMode {
    Exact,
    #[default]
    Affine,
}

/// Absolute tolerance of the exact conditional-expectation quadrature.
pub const RICE_EXACT_ABS_TOL: f64 = 1e-8;

/// Density of `I(s)` given `I² + Q² = r`, for components `N(m, sigv)`.
///
/// Zero outside `|x| < sqrt(r)`.
pub fn rice_cond_pdf(m: f64, sigv: f64, r: f64, x: f64) -> Result<f64> {
    if !(sigv > 0.0) || !sigv.is_finite() {
        return Err(Error::domain("rice_cond_pdf", format!("sigv must be > 0, got {sigv}")));
    }
    if !(r > x * x) {
        return Ok(0.0);
    }
    Ok(cond_pdf_unchecked(m, sigv, r, x))
}

fn cond_pdf_unchecked(m: f64, sigv: f64, r: f64, x: f64) -> f64 {
    let y = (r - x * x).sqrt();
    let am = m.abs();
    if am == 0.0 {
        return 1.0 / (PI * y);
    }
    let z = am * y / sigv;
    let kappa = am * (2.0 * r).sqrt() / sigv;
    // exp(xm/σ²) (y/|m|)^{-1/2} I_{-1/2}(z) / (sqrt(2π) σ I_0(κ)), in logs with scaled Bessels.
    let log_num = x * m / sigv - 0.5 * (y / am).ln() + z + i_neg_half_e(z).ln();
    let log_den = 0.5 * (2.0 * PI * sigv).ln() + kappa + i0e(kappa).ln();
    (log_num - log_den).exp()
}

/// `E[I(s) | R(s) = r]` for components `N(m, sigv)`.
pub fn rice_cond_exp(m: f64, sigv: f64, r: f64, mode: RiceMode) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::domain("rice_cond_exp", format!("r must be finite and >= 0, got {r}")));
    }
    if !(sigv >= 0.0) || !sigv.is_finite() {
        return Err(Error::domain("rice_cond_exp", format!("sigv must be >= 0, got {sigv}")));
    }
    if m == 0.0 || r == 0.0 {
        return Ok(0.0);
    }
    if sigv == 0.0 {
        // Deterministic start: the small-variance limits of both predictors.
        return Ok(match mode {
            RiceMode::Exact => m.signum() * (0.5 * r).sqrt(),
            RiceMode::Affine => m * (r - 2.0 * m * m) / (4.0 * m * m) + m,
        });
    }
    match mode {
        RiceMode::Affine => Ok(affine_unchecked(m, sigv, r)),
        RiceMode::Exact => exact_by_quadrature(m, sigv, r),
    }
}

#[inline]
fn affine_unchecked(m: f64, sigv: f64, r: f64) -> f64 {
    m * sigv * (r - 2.0 * (sigv + m * m)) / (4.0 * m * m * sigv + 2.0 * sigv * sigv) + m
}

fn exact_by_quadrature(m: f64, sigv: f64, r: f64) -> Result<f64> {
    let sr = r.sqrt();
    // x = sqrt(r) sin u removes the inverse-square-root endpoint singularities.
    let integrand = |u: f64| {
        let (su, cu) = u.sin_cos();
        let x = sr * su;
        if !(r > x * x) {
            return 0.0;
        }
        x * cond_pdf_unchecked(m, sigv, r, x) * sr * cu
    };
    let out = integrate(
        integrand,
        -0.5 * PI,
        0.5 * PI,
        QuadOptions::abs(RICE_EXACT_ABS_TOL),
    )
    .map_err(|e| {
        Error::numerical(format!(
            "rice_cond_exp(m={m}, sigv={sigv}, r={r}) quadrature failed: {e}"
        ))
    })?;
    Ok(out.value)
}

/// Checks the symmetric-component preconditions of the Rice projection.
pub fn rice_precondition(p: &OuParams) -> Result<()> {
    let mut v = p.violations();
    if p.k1 != p.k2 {
        v.push(format!("rice projection needs k1 = k2, got {} and {}", p.k1, p.k2));
    }
    if p.beta1 != p.beta2 {
        v.push(format!(
            "rice projection needs beta1 = beta2, got {} and {}",
            p.beta1, p.beta2
        ));
    }
    if p.theta1 != p.theta2 {
        v.push(format!(
            "rice projection needs theta1 = theta2, got {} and {}",
            p.theta1, p.theta2
        ));
    }
    if p.i0 != p.q0 {
        v.push(format!(
            "rice projection needs i0 = q0 (identically distributed components), got {} and {}",
            p.i0, p.q0
        ));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::config(v.join("; ")))
    }
}

/// Projected Rice drift and diffusion at `(s, r)`.
pub fn rice_coeffs(p: &OuParams, s: f64, r: f64, mode: RiceMode) -> Result<(f64, f64)> {
    rice_precondition(p)?;
    if !(s >= 0.0) || !(r >= 0.0) {
        return Err(Error::domain("rice_coeffs", format!("need s >= 0 and r >= 0, got s={s}, r={r}")));
    }
    rice_coeffs_unchecked(p, s, r, mode)
}

fn rice_coeffs_unchecked(p: &OuParams, s: f64, r: f64, mode: RiceMode) -> Result<(f64, f64)> {
    let (k, theta, beta) = (p.k1, p.theta1, p.beta1);
    let (m, sigv) = ou_moments(k, theta, beta, p.i0, s);
    let e = if theta == 0.0 {
        0.0
    } else if sigv > 0.0 && mode == RiceMode::Affine && m != 0.0 && r > 0.0 {
        affine_unchecked(m, sigv, r)
    } else {
        rice_cond_exp(m, sigv, r, mode)?
    };
    let drift = 4.0 * k * theta * e - 2.0 * k * r + 2.0 * beta * beta;
    let diffusion = 2.0 * beta * r.sqrt();
    Ok((drift, diffusion))
}

/// Projected Rice square envelope.
#[derive(Debug, Clone, Copy)]
pub struct RiceModel {
    pub params: OuParams,
    pub mode: RiceMode,
}

impl RiceModel {
    pub fn new(params: OuParams, mode: RiceMode) -> Result<Self> {
        rice_precondition(&params)?;
        Ok(Self { params, mode })
    }
}

impl EnvelopeModel for RiceModel {
    fn name(&self) -> &'static str {
        match self.mode {
            RiceMode::Affine => "rice-affine",
            RiceMode::Exact => "rice-exact",
        }
    }

    fn class(&self) -> FadingClass {
        classify_fading(&self.params)
    }

    fn params(&self) -> ModelParams {
        ModelParams::Ou(self.params)
    }

    fn initial_r(&self) -> f64 {
        self.params.r0()
    }

    fn coeffs(&self, s: f64, r: f64) -> Result<(f64, f64)> {
        rice_coeffs_unchecked(&self.params, s, r, self.mode)
    }

    fn rice_mode(&self) -> Option<RiceMode> {
        Some(self.mode)
    }
}
