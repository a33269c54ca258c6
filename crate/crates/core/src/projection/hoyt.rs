//! Hoyt (Nakagami-q) fading: zero-mean components with unequal dynamics.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ou_channel::{classify_fading, ou_moments, FadingClass, OuParams};
use crate::special_functions::{i0e, ratio_i1_i0};

use super::{EnvelopeModel, ModelParams};

fn bessel_argument(s1v: f64, s2v: f64, r: f64) -> f64 {
    0.25 * r * (1.0 / s2v - 1.0 / s1v)
}

/// `(E[I² | R = r], E[Q² | R = r])` for zero-mean components with variances `s1v`, `s2v`.
pub fn hoyt_cond_exps(s1v: f64, s2v: f64, r: f64) -> Result<(f64, f64)> {
    if !(s1v > 0.0 && s2v > 0.0) || !s1v.is_finite() || !s2v.is_finite() {
        return Err(Error::domain(
            "hoyt_cond_exps",
            format!("variances must be finite and > 0, got {s1v}, {s2v}"),
        ));
    }
    if !(r >= 0.0) {
        return Err(Error::domain("hoyt_cond_exps", format!("r must be >= 0, got {r}")));
    }
    Ok(cond_exps_unchecked(s1v, s2v, r))
}

#[inline]
fn cond_exps_unchecked(s1v: f64, s2v: f64, r: f64) -> (f64, f64) {
    let rho = ratio_i1_i0(bessel_argument(s1v, s2v, r));
    (0.5 * r * (1.0 + rho), 0.5 * r * (1.0 - rho))
}

/// Density of `I²(s)` given `R(s) = r`. Zero outside `(0, r)`.
pub fn hoyt_cond_pdf(s1v: f64, s2v: f64, r: f64, x: f64) -> Result<f64> {
    if !(s1v > 0.0 && s2v > 0.0) {
        return Err(Error::domain(
            "hoyt_cond_pdf",
            format!("variances must be > 0, got {s1v}, {s2v}"),
        ));
    }
    if !(x > 0.0 && x < r) {
        return Ok(0.0);
    }
    let a = bessel_argument(s1v, s2v, r);
    // The exponent collapses to 2a(x - r/2)/r - |a|, which is <= 0 on (0, r).
    let log_pdf = 2.0 * a * (x - 0.5 * r) / r
        - a.abs()
        - i0e(a.abs()).ln()
        - PI.ln()
        - 0.5 * (x * (r - x)).ln();
    Ok(log_pdf.exp())
}

/// Checks the zero-mean, zero-start preconditions of the Hoyt projection.
pub fn hoyt_precondition(p: &OuParams) -> Result<()> {
    let mut v = p.violations();
    if p.theta1 != 0.0 || p.theta2 != 0.0 {
        v.push(format!(
            "hoyt projection needs theta1 = theta2 = 0, got {} and {}",
            p.theta1, p.theta2
        ));
    }
    if p.i0 != 0.0 || p.q0 != 0.0 {
        v.push(format!(
            "hoyt projection needs i0 = q0 = 0, got {} and {}",
            p.i0, p.q0
        ));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::config(v.join("; ")))
    }
}

/// Projected Hoyt drift and diffusion at `(s, r)`.
pub fn hoyt_coeffs(p: &OuParams, s: f64, r: f64) -> Result<(f64, f64)> {
    hoyt_precondition(p)?;
    if !(s >= 0.0) || !(r >= 0.0) {
        return Err(Error::domain("hoyt_coeffs", format!("need s >= 0 and r >= 0, got s={s}, r={r}")));
    }
    Ok(hoyt_coeffs_unchecked(p, s, r))
}

fn hoyt_coeffs_unchecked(p: &OuParams, s: f64, r: f64) -> (f64, f64) {
    let b1 = p.beta1 * p.beta1;
    let b2 = p.beta2 * p.beta2;
    if r == 0.0 {
        return (b1 + b2, 0.0);
    }
    let (e_i2, e_q2) = if s > 0.0 {
        let (_, s1v) = ou_moments(p.k1, 0.0, p.beta1, 0.0, s);
        let (_, s2v) = ou_moments(p.k2, 0.0, p.beta2, 0.0, s);
        cond_exps_unchecked(s1v, s2v, r)
    } else {
        // σ_i²(s) ~ β_i² s as s -> 0: the Bessel argument diverges unless β1 = β2.
        let rho = if b1 == b2 { 0.0 } else if b1 > b2 { 1.0 } else { -1.0 };
        (0.5 * r * (1.0 + rho), 0.5 * r * (1.0 - rho))
    };
    let drift = -2.0 * p.k1 * e_i2 - 2.0 * p.k2 * e_q2 + b1 + b2;
    let diffusion = (4.0 * b1 * e_i2 + 4.0 * b2 * e_q2).sqrt();
    (drift, diffusion)
}

/// Projected Hoyt square envelope.
#[derive(Debug, Clone, Copy)]
pub struct HoytModel {
    pub params: OuParams,
}

impl HoytModel {
    pub fn new(params: OuParams) -> Result<Self> {
        hoyt_precondition(&params)?;
        Ok(Self { params })
    }
}

impl EnvelopeModel for HoytModel {
    fn name(&self) -> &'static str {
        "hoyt"
    }

    fn class(&self) -> FadingClass {
        classify_fading(&self.params)
    }

    fn params(&self) -> ModelParams {
        ModelParams::Ou(self.params)
    }

    fn initial_r(&self) -> f64 {
        0.0
    }

    #[inline]
    fn coeffs(&self, s: f64, r: f64) -> Result<(f64, f64)> {
        Ok(hoyt_coeffs_unchecked(&self.params, s, r))
    }
}
