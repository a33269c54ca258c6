//! Two-dimensional in-phase/quadrature Ornstein–Uhlenbeck channel model.
//!
//! ```text
//! dI = k1 (θ1 - I) ds + β1 dW_I
//! dQ = k2 (θ2 - Q) ds + β2 dW_Q
//! ```
//!
//! with independent Wiener processes. The square envelope is `R = I² + Q²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the I/Q Ornstein–Uhlenbeck model plus the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub k1: f64,
    pub k2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub i0: f64,
    pub q0: f64,
}

/// Rayleigh reparameterization: `k = B/2`, `β = sqrt(B/2) σ`, zero mean levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighParams {
    #[serde(rename = "B")]
    pub b: f64,
    pub sigma: f64,
    pub i0: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    I,
    Q,
}

/// Asymptotic envelope law of an [`OuParams`] set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum FadingClass {
    Rayleigh { scale: f64 },
    Rice { nu: f64, scale: f64 },
    Hoyt { q: f64, mean_square: f64 },
    Beckmann,
}

impl FadingClass {
    pub fn name(&self) -> &'static str {
        match self {
            FadingClass::Rayleigh { .. } => "rayleigh",
            FadingClass::Rice { .. } => "rice",
            FadingClass::Hoyt { .. } => "hoyt",
            FadingClass::Beckmann => "beckmann",
        }
    }
}

impl OuParams {
    /// Collects every violated invariant instead of stopping at the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        let finite = [
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("i0", self.i0),
            ("q0", self.q0),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                out.push(format!("{name} must be finite, got {v}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }

    /// Square envelope at time zero.
    pub fn r0(&self) -> f64 {
        self.i0 * self.i0 + self.q0 * self.q0
    }

    /// `(k, θ, β, x0)` of one component.
    pub fn component(&self, c: Component) -> (f64, f64, f64, f64) {
        match c {
            Component::I => (self.k1, self.theta1, self.beta1, self.i0),
            Component::Q => (self.k2, self.theta2, self.beta2, self.q0),
        }
    }

    /// Inverse of [`RayleighParams::to_ou`]; `None` unless the class is Rayleigh.
    pub fn as_rayleigh(&self) -> Option<RayleighParams> {
        match classify_fading(self) {
            FadingClass::Rayleigh { .. } => Some(RayleighParams {
                b: 2.0 * self.k1,
                sigma: self.beta1 / self.k1.sqrt(),
                i0: self.i0,
                q0: self.q0,
            }),
            _ => None,
        }
    }
}

impl RayleighParams {
    pub fn to_ou(&self) -> OuParams {
        let k = 0.5 * self.b;
        let beta = std::f64::consts::FRAC_1_SQRT_2 * self.b.sqrt() * self.sigma;
        OuParams {
            k1: k,
            k2: k,
            theta1: 0.0,
            theta2: 0.0,
            beta1: beta,
            beta2: beta,
            i0: self.i0,
            q0: self.q0,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.b.is_finite() && self.b > 0.0) {
            out.push(format!("B must be finite and > 0, got {}", self.b));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            out.push(format!("sigma must be finite and > 0, got {}", self.sigma));
        }
        if !self.i0.is_finite() || !self.q0.is_finite() {
            out.push("initial levels i0, q0 must be finite".into());
        }
        out
    }

    pub fn r0(&self) -> f64 {
        self.i0 * self.i0 + self.q0 * self.q0
    }
}

/// Classifies the asymptotic envelope law. Comparisons are exact on the stored values.
pub fn classify_fading(p: &OuParams) -> FadingClass {
    let same_dynamics = p.k1 == p.k2 && p.beta1 == p.beta2;
    let zero_mean = p.theta1 == 0.0 && p.theta2 == 0.0;
    if same_dynamics && zero_mean {
        FadingClass::Rayleigh {
            scale: p.beta1 / (2.0 * p.k1).sqrt(),
        }
    } else if same_dynamics {
        FadingClass::Rice {
            nu: p.theta1.hypot(p.theta2),
            scale: p.beta1 / (2.0 * p.k1).sqrt(),
        }
    } else if zero_mean {
        FadingClass::Hoyt {
            q: (p.beta2 / p.beta1) * (p.k1 / p.k2).sqrt(),
            mean_square: p.beta1 * p.beta1 / (2.0 * p.k1) + p.beta2 * p.beta2 / (2.0 * p.k2),
        }
    } else {
        FadingClass::Beckmann
    }
}

fn check_time(func: &'static str, name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::domain(func, format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// Gaussian mean and variance of one component at time `s`.
pub fn transient_moments(p: &OuParams, s: f64, component: Component) -> Result<(f64, f64)> {
    check_time("transient_moments", "s", s)?;
    let (k, theta, beta, x0) = p.component(component);
    Ok(ou_moments(k, theta, beta, x0, s))
}

pub(crate) fn ou_moments(k: f64, theta: f64, beta: f64, x0: f64, s: f64) -> (f64, f64) {
    let decay = (-k * s).exp();
    let mean = x0 * decay + theta * (1.0 - decay);
    let var = beta * beta / (2.0 * k) * -(-2.0 * k * s).exp_m1();
    (mean, var)
}

/// `Cov(X(s), X(s + ds))` of one component.
pub fn iq_autocovariance(p: &OuParams, s: f64, ds: f64, component: Component) -> Result<f64> {
    check_time("iq_autocovariance", "s", s)?;
    check_time("iq_autocovariance", "ds", ds)?;
    let (k, _, beta, _) = p.component(component);
    Ok(beta * beta / (2.0 * k) * (-k * ds).exp() * -(-2.0 * k * s).exp_m1())
}

/// `Cov(R̄(t), R̄(t + dt))` of the projected Rayleigh square envelope started at `r0`.
/// With `dt = 0` this is the variance of `R̄(t)`.
pub fn rbar_autocovariance(p: &RayleighParams, t: f64, dt: f64, r0: f64) -> Result<f64> {
    check_time("rbar_autocovariance", "t", t)?;
    check_time("rbar_autocovariance", "dt", dt)?;
    check_time("rbar_autocovariance", "r0", r0)?;
    let s2 = p.sigma * p.sigma;
    let e1 = (-p.b * t).exp();
    let e2 = (-2.0 * p.b * t).exp();
    Ok(s2 * (-p.b * dt).exp() * (2.0 * (r0 - s2) * (e1 - e2) + s2 * (1.0 - e2)))
}

/// `E[R̄(t)]` of the projected Rayleigh square envelope started at `r0`.
pub fn rbar_mean(p: &RayleighParams, t: f64, r0: f64) -> Result<f64> {
    check_time("rbar_mean", "t", t)?;
    let e1 = (-p.b * t).exp();
    Ok(e1 * r0 + p.sigma * p.sigma * (1.0 - e1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(k: f64, theta: f64, beta: f64) -> OuParams {
        OuParams {
            k1: k,
            k2: k,
            theta1: theta,
            theta2: theta,
            beta1: beta,
            beta2: beta,
            i0: 0.0,
            q0: 0.0,
        }
    }

    #[test]
    fn classification_examples() {
        match classify_fading(&sym(1.0, 0.0, 1.0)) {
            FadingClass::Rayleigh { scale } => {
                assert!((scale - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15)
            }
            other => panic!("{other:?}"),
        }
        match classify_fading(&sym(1.0, 1.0, 1.0)) {
            FadingClass::Rice { nu, scale } => {
                assert!((nu - 2f64.sqrt()).abs() < 1e-15);
                assert!((scale - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        let hoyt = OuParams {
            k1: 0.1,
            k2: 0.5,
            ..sym(1.0, 0.0, 1.0)
        };
        match classify_fading(&hoyt) {
            FadingClass::Hoyt { q, mean_square } => {
                assert!((q - 0.2f64.sqrt()).abs() < 1e-15);
                assert!((mean_square - (5.0 + 1.0)).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let beck = OuParams {
            k1: 0.1,
            theta1: 1.0,
            ..sym(1.0, 0.0, 1.0)
        };
        assert_eq!(classify_fading(&beck), FadingClass::Beckmann);
    }

    #[test]
    fn moments_examples() {
        let p = OuParams {
            theta1: 1.0,
            ..sym(1.0, 1.0, 1.0)
        };
        assert_eq!(transient_moments(&p, 0.0, Component::I).unwrap(), (0.0, 0.0));
        let (m, v) = transient_moments(&p, 2f64.ln(), Component::I).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((v - 0.375).abs() < 1e-15);
        let (m, v) = transient_moments(&p, 1e3, Component::I).unwrap();
        assert!((m - 1.0).abs() < 1e-15 && (v - 0.5).abs() < 1e-15);
        assert!(transient_moments(&p, -1.0, Component::Q).is_err());
    }

    #[test]
    fn autocovariance_examples() {
        let p = sym(1.0, 0.0, 1.0);
        let c = iq_autocovariance(&p, 10.0, 1.0, Component::I).unwrap();
        let expected = 0.5 * (-1.0f64).exp() * (1.0 - (-20.0f64).exp());
        assert!((c - expected).abs() < 1e-15);
        let (_, v) = transient_moments(&p, 0.7, Component::I).unwrap();
        assert_eq!(iq_autocovariance(&p, 0.7, 0.0, Component::I).unwrap(), v);
        assert!(iq_autocovariance(&p, 1.0, -0.1, Component::I).is_err());
    }

    #[test]
    fn rbar_autocovariance_examples() {
        let p = RayleighParams {
            b: 1.3,
            sigma: 0.8,
            i0: 1.0,
            q0: 1.0,
        };
        let s4 = p.sigma.powi(4);
        assert_eq!(rbar_autocovariance(&p, 0.0, 0.5, 2.0).unwrap(), 0.0);
        let far = rbar_autocovariance(&p, 1e3, 0.5, 2.0).unwrap();
        assert!((far - s4 * (-p.b * 0.5).exp()).abs() < 1e-14);
        let t = 0.9;
        let at_sigma = rbar_autocovariance(&p, t, 0.3, p.sigma * p.sigma).unwrap();
        let expected = s4 * (1.0 - (-2.0 * p.b * t).exp()) * (-p.b * 0.3).exp();
        assert!((at_sigma - expected).abs() < 1e-15);
    }

    #[test]
    fn rayleigh_round_trip() {
        let r = RayleighParams {
            b: 1.0,
            sigma: 1.0,
            i0: 1.0,
            q0: 1.0,
        };
        let ou = r.to_ou();
        assert_eq!(ou.k1, 0.5);
        let back = ou.as_rayleigh().unwrap();
        assert!((back.b - 1.0).abs() < 1e-15 && (back.sigma - 1.0).abs() < 1e-15);
        match classify_fading(&ou) {
            FadingClass::Rayleigh { scale } => {
                assert!((scale - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn violations_are_collected() {
        let p = OuParams {
            k1: -1.0,
            beta2: 0.0,
            ..sym(1.0, 0.0, 1.0)
        };
        assert_eq!(p.violations().len(), 2);
    }
}
