//! Fade-duration statistics for Ornstein–Uhlenbeck fading channels.
//!
//! The I/Q components of the received signal follow independent OU processes.
//! The crate projects the square envelope onto one-dimensional SDEs, estimates
//! the distribution of the total time spent below a threshold by Monte Carlo,
//! and estimates its far tail by importance sampling driven by a control read
//! off a Crank–Nicolson solution of the backward equation.

pub mod error;
pub mod experiment;
pub mod importance;
pub mod kbe;
pub mod mc;
pub mod ou_channel;
pub mod projection;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod special_functions;
pub mod validation;

pub use error::{Error, Result};
pub use ou_channel::{classify_fading, Component, FadingClass, OuParams, RayleighParams};
pub use projection::{EnvelopeModel, ModelRegistry, ProjectedModel, RiceMode};
pub use rng::RngStream;
pub use sde::{FadePath, FadeSample, TimeGrid};
