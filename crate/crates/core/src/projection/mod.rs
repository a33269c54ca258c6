//! Markovian projection of the I/Q model onto the square envelope.
//!
//! Each fading class yields a one-dimensional SDE `dR̄ = ā(s, R̄) ds + b̄(s, R̄) dW`
//! whose marginals match those of `I² + Q²`. Every projected model implements
//! [`EnvelopeModel`]; a [`ModelRegistry`] maps names to constructors so the
//! model can be picked from configuration at runtime.

mod hoyt;
mod rayleigh;
mod rice;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou_channel::{classify_fading, FadingClass, OuParams, RayleighParams};

pub use hoyt::{hoyt_cond_exps, hoyt_cond_pdf, hoyt_coeffs, hoyt_precondition, HoytModel};
pub use rayleigh::{rayleigh_coeffs, rayleigh_stationary_pdf, RayleighModel};
pub use rice::{
    rice_cond_exp, rice_cond_pdf, rice_coeffs, rice_precondition, RiceMode, RiceModel,
    RICE_EXACT_ABS_TOL,
};

/// Parameters a projected model was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParams {
    Rayleigh(RayleighParams),
    Ou(OuParams),
}

/// Drift/diffusion pair of a one-dimensional square-envelope SDE.
///
/// `coeffs` is only ever called with `r >= 0`; the integrator clamps first.
pub trait EnvelopeModel: Send + Sync {
    /// Registry name of this model.
    fn name(&self) -> &'static str;

    fn class(&self) -> FadingClass;

    fn params(&self) -> ModelParams;

    /// `R̄(0) = I0² + Q0²`.
    fn initial_r(&self) -> f64;

    /// `(ā(s, r), b̄(s, r))`.
    fn coeffs(&self, s: f64, r: f64) -> Result<(f64, f64)>;

    /// Rayleigh parameters, for models that admit the optimal-control change of measure.
    fn rayleigh(&self) -> Option<RayleighParams> {
        None
    }

    fn rice_mode(&self) -> Option<RiceMode> {
        None
    }
}

/// Shareable handle to a projected model.
#[derive(Clone)]
pub struct ProjectedModel {
    inner: Arc<dyn EnvelopeModel>,
}

impl fmt::Debug for ProjectedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProjectedModel")
            .field("name", &self.inner.name())
            .field("params", &self.inner.params())
            .finish()
    }
}

impl<M: EnvelopeModel + 'static> From<M> for ProjectedModel {
    fn from(m: M) -> Self {
        Self { inner: Arc::new(m) }
    }
}

impl ProjectedModel {
    pub fn new(model: Arc<dyn EnvelopeModel>) -> Self {
        Self { inner: model }
    }

    pub fn rayleigh(params: RayleighParams) -> Result<Self> {
        Ok(RayleighModel::new(params)?.into())
    }

    /// Picks the projection matching the class of `p`.
    pub fn for_params(p: &OuParams, rice_mode: RiceMode) -> Result<Self> {
        p.validate()?;
        match classify_fading(p) {
            FadingClass::Rayleigh { .. } => Ok(RayleighModel::from_ou(p)?.into()),
            FadingClass::Rice { .. } => Ok(RiceModel::new(*p, rice_mode)?.into()),
            FadingClass::Hoyt { .. } => Ok(HoytModel::new(*p)?.into()),
            FadingClass::Beckmann => Err(Error::config(
                "no projected SDE is available for the Beckmann class",
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        self.inner.name()
    }

    pub fn class(&self) -> FadingClass {
        self.inner.class()
    }

    pub fn params(&self) -> ModelParams {
        self.inner.params()
    }

    pub fn initial_r(&self) -> f64 {
        self.inner.initial_r()
    }

    pub fn rayleigh_params(&self) -> Option<RayleighParams> {
        self.inner.rayleigh()
    }

    pub fn rice_mode(&self) -> Option<RiceMode> {
        self.inner.rice_mode()
    }

    #[inline]
    pub fn coeffs(&self, s: f64, r: f64) -> Result<(f64, f64)> {
        self.inner.coeffs(s, r)
    }

    pub fn drift(&self, s: f64, r: f64) -> Result<f64> {
        Ok(self.coeffs(s, r)?.0)
    }

    pub fn diffusion(&self, s: f64, r: f64) -> Result<f64> {
        Ok(self.coeffs(s, r)?.1)
    }
}

pub type ModelFactory = fn(&OuParams) -> Result<ProjectedModel>;

/// Name -> constructor table for projected models.
pub struct ModelRegistry {
    entries: BTreeMap<&'static str, ModelFactory>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding `rayleigh`, `rice-affine`, `rice-exact` and `hoyt`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("rayleigh", |p| Ok(RayleighModel::from_ou(p)?.into()));
        r.register("rice-affine", |p| Ok(RiceModel::new(*p, RiceMode::Affine)?.into()));
        r.register("rice-exact", |p| Ok(RiceModel::new(*p, RiceMode::Exact)?.into()));
        r.register("hoyt", |p| Ok(HoytModel::new(*p)?.into()));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: ModelFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, name: &str, p: &OuParams) -> Result<ProjectedModel> {
        match self.entries.get(name) {
            Some(f) => f(p),
            None => Err(Error::config(format!(
                "unknown model '{name}'; known models: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
