use crate::error::{Error, Result};
use crate::ou_channel::{classify_fading, FadingClass, OuParams, RayleighParams};

use super::{EnvelopeModel, ModelParams};

/// Projected Rayleigh square envelope: `dR = B(σ² - R) ds + σ sqrt(2BR) dW`.
#[derive(Debug, Clone, Copy)]
pub struct RayleighModel {
    pub params: RayleighParams,
}

impl RayleighModel {
    pub fn new(params: RayleighParams) -> Result<Self> {
        let v = params.violations();
        if !v.is_empty() {
            return Err(Error::config(v.join("; ")));
        }
        Ok(Self { params })
    }

    pub fn from_ou(p: &OuParams) -> Result<Self> {
        p.validate()?;
        match p.as_rayleigh() {
            Some(r) => Self::new(r),
            None => Err(Error::config(format!(
                "rayleigh projection needs theta1 = theta2 = 0, k1 = k2, beta1 = beta2; got class {}",
                classify_fading(p).name()
            ))),
        }
    }
}

/// Drift and diffusion of the projected Rayleigh model. Independent of `s`.
pub fn rayleigh_coeffs(b: f64, sigma: f64, _s: f64, r: f64) -> Result<(f64, f64)> {
    if !(r >= 0.0) {
        return Err(Error::domain("rayleigh_coeffs", format!("r must be >= 0, got {r}")));
    }
    Ok(rayleigh_unchecked(b, sigma, r))
}

#[inline]
pub(crate) fn rayleigh_unchecked(b: f64, sigma: f64, r: f64) -> (f64, f64) {
    (b * (sigma * sigma - r), sigma * (2.0 * b * r).sqrt())
}

/// Stationary law of the projected Rayleigh model: Exponential with mean `σ²`.
/// Zero for negative `y`.
pub fn rayleigh_stationary_pdf(sigma: f64, y: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    (-y / s2).exp() / s2
}

impl EnvelopeModel for RayleighModel {
    fn name(&self) -> &'static str {
        "rayleigh"
    }

    fn class(&self) -> FadingClass {
        classify_fading(&self.params.to_ou())
    }

    fn params(&self) -> ModelParams {
        ModelParams::Rayleigh(self.params)
    }

    fn initial_r(&self) -> f64 {
        self.params.r0()
    }

    #[inline]
    fn coeffs(&self, _s: f64, r: f64) -> Result<(f64, f64)> {
        Ok(rayleigh_unchecked(self.params.b, self.params.sigma, r))
    }

    fn rayleigh(&self) -> Option<RayleighParams> {
        Some(self.params)
    }
}
