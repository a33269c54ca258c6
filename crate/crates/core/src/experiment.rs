//! Experiment configuration: one JSON document per run.
//!
//! Every field except `model.class` has a default. [`validate_config`]
//! reports all problems at once, each with the line it was found on.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::kbe::{KbeGridConfig, KbeScheme, DEFAULT_XB_OVER_SIGMA2};
use crate::mc::linspace;
use crate::ou_channel::{OuParams, RayleighParams};
use crate::projection::{ProjectedModel, RiceMode};
use crate::sde::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum ModelSpec {
    Rayleigh {
        #[serde(rename = "B")]
        b: f64,
        sigma: f64,
        #[serde(rename = "I0")]
        i0: f64,
        #[serde(rename = "Q0")]
        q0: f64,
    },
    Rice {
        k: f64,
        theta: f64,
        beta: f64,
        #[serde(rename = "I0")]
        i0: f64,
        #[serde(rename = "Q0")]
        q0: f64,
        drift: RiceMode,
    },
    Hoyt {
        k1: f64,
        k2: f64,
        beta1: f64,
        beta2: f64,
        #[serde(rename = "I0")]
        i0: f64,
        #[serde(rename = "Q0")]
        q0: f64,
    },
}

impl ModelSpec {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Rayleigh { .. } => "rayleigh",
            Self::Rice { .. } => "rice",
            Self::Hoyt { .. } => "hoyt",
        }
    }

    pub fn ou_params(&self) -> OuParams {
        match *self {
            Self::Rayleigh { b, sigma, i0, q0 } => RayleighParams { b, sigma, i0, q0 }.to_ou(),
            Self::Rice {
                k, theta, beta, i0, q0, ..
            } => OuParams {
                k1: k,
                k2: k,
                theta1: theta,
                theta2: theta,
                beta1: beta,
                beta2: beta,
                i0,
                q0,
            },
            Self::Hoyt {
                k1,
                k2,
                beta1,
                beta2,
                i0,
                q0,
            } => OuParams {
                k1,
                k2,
                theta1: 0.0,
                theta2: 0.0,
                beta1,
                beta2,
                i0,
                q0,
            },
        }
    }

    pub fn rayleigh(&self) -> Option<RayleighParams> {
        match *self {
            Self::Rayleigh { b, sigma, i0, q0 } => Some(RayleighParams { b, sigma, i0, q0 }),
            _ => None,
        }
    }

    pub fn projected(&self) -> crate::Result<ProjectedModel> {
        match *self {
            Self::Rayleigh { .. } => ProjectedModel::rayleigh(self.rayleigh().expect("rayleigh")),
            Self::Rice { drift, .. } => ProjectedModel::for_params(&self.ou_params(), drift),
            Self::Hoyt { .. } => ProjectedModel::for_params(&self.ou_params(), RiceMode::default()),
        }
    }

    pub fn r0(&self) -> f64 {
        self.ou_params().r0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Mc,
    Is,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mc => "mc",
            Self::Is => "is",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WSpec {
    Single(f64),
    List(Vec<f64>),
    Linspace { min: f64, max: f64, count: usize },
}

impl WSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Single(w) => vec![*w],
            Self::List(v) => v.clone(),
            Self::Linspace { min, max, count } => linspace(*min, *max, *count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbeOptions {
    #[serde(default = "default_grid_n")]
    pub nt: usize,
    #[serde(default = "default_grid_n")]
    pub nx: usize,
    /// Defaults to `12σ²`.
    #[serde(default)]
    pub xb: Option<f64>,
    #[serde(default)]
    pub scheme: KbeScheme,
    /// Solved grid to load instead of solving.
    #[serde(default)]
    pub grid_file: Option<String>,
}

fn default_grid_n() -> usize {
    400
}

impl Default for KbeOptions {
    fn default() -> Self {
        Self {
            nt: default_grid_n(),
            nx: default_grid_n(),
            xb: None,
            scheme: KbeScheme::default(),
            grid_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    pub gamma: f64,
    pub estimator: EstimatorKind,
    #[serde(rename = "M")]
    pub m: u64,
    /// Defaults to 200 points on `[0, T]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<WSpec>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub kbe: KbeOptions,
    /// Histogram bins.
    pub bins: usize,
    /// Paths written by `simulate`.
    pub paths: usize,
    /// Run the I/Q system alongside the projected one where both apply.
    pub compare_iq: bool,
}

impl ExperimentConfig {
    /// Defaults for a model class; `None` for unknown classes.
    pub fn defaults(class: &str) -> Option<Self> {
        let model = match class {
            "rayleigh" => ModelSpec::Rayleigh {
                b: 1.0,
                sigma: 1.0,
                i0: 1.0,
                q0: 1.0,
            },
            "rice" => ModelSpec::Rice {
                k: 1.0,
                theta: 1.0,
                beta: 1.0,
                i0: 0.0,
                q0: 0.0,
                drift: RiceMode::Affine,
            },
            "hoyt" => ModelSpec::Hoyt {
                k1: 0.1,
                k2: 0.5,
                beta1: 1.0,
                beta2: 1.0,
                i0: 0.0,
                q0: 0.0,
            },
            _ => return None,
        };
        Some(Self {
            model,
            t_final: 4.0,
            steps: 100,
            gamma: 0.5,
            estimator: EstimatorKind::Mc,
            m: 1_000_000,
            w: None,
            seed: 1,
            out: None,
            kbe: KbeOptions::default(),
            bins: 50,
            paths: 50,
            compare_iq: true,
        })
    }

    pub fn grid(&self) -> crate::Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.steps)
    }

    pub fn w_values(&self) -> Vec<f64> {
        match &self.w {
            Some(w) => w.values(),
            None => crate::mc::default_w_grid(self.t_final),
        }
    }

    /// KBE grid for a Rayleigh model; `None` otherwise.
    pub fn kbe_config(&self) -> Option<KbeGridConfig> {
        let p = self.model.rayleigh()?;
        let mut c = KbeGridConfig::new(self.t_final, self.kbe.nt, self.kbe.nx, p.b, p.sigma, self.gamma);
        c.xb = self.kbe.xb.unwrap_or(DEFAULT_XB_OVER_SIGMA2 * p.sigma * p.sigma);
        c.scheme = self.kbe.scheme;
        Some(c)
    }

    /// All constraint violations of an already-built config, by field path.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut v = Vec::new();
        let mut need = |ok: bool, field: &str, msg: String| {
            if !ok {
                v.push((field.to_string(), msg));
            }
        };
        let pos = |x: f64| x.is_finite() && x > 0.0;
        match self.model {
            ModelSpec::Rayleigh { b, sigma, i0, q0 } => {
                need(pos(b), "model.B", format!("must be > 0, got {b}"));
                need(pos(sigma), "model.sigma", format!("must be > 0, got {sigma}"));
                need(i0.is_finite(), "model.I0", format!("must be finite, got {i0}"));
                need(q0.is_finite(), "model.Q0", format!("must be finite, got {q0}"));
            }
            ModelSpec::Rice {
                k, theta, beta, i0, q0, ..
            } => {
                need(pos(k), "model.k", format!("must be > 0, got {k}"));
                need(
                    theta.is_finite() && theta != 0.0,
                    "model.theta",
                    format!("must be finite and nonzero, got {theta}"),
                );
                need(pos(beta), "model.beta", format!("must be > 0, got {beta}"));
                need(
                    i0 == q0,
                    "model.Q0",
                    format!("the Rice projection needs identically distributed components, so I0 = Q0; got I0={i0}, Q0={q0}"),
                );
            }
            ModelSpec::Hoyt {
                k1,
                k2,
                beta1,
                beta2,
                i0,
                q0,
            } => {
                need(pos(k1), "model.k1", format!("must be > 0, got {k1}"));
                need(pos(k2), "model.k2", format!("must be > 0, got {k2}"));
                need(pos(beta1), "model.beta1", format!("must be > 0, got {beta1}"));
                need(pos(beta2), "model.beta2", format!("must be > 0, got {beta2}"));
                need(
                    i0 == 0.0 && q0 == 0.0,
                    "model.I0",
                    format!("the Hoyt projection needs zero-mean components started at 0; got I0={i0}, Q0={q0}"),
                );
            }
        }
        need(pos(self.t_final), "T", format!("must be > 0, got {}", self.t_final));
        need(self.steps >= 1, "N", "must be >= 1".to_string());
        need(
            self.steps <= u32::MAX as usize,
            "N",
            format!("must be <= {}", u32::MAX),
        );
        need(
            self.gamma.is_finite() && self.gamma >= 0.0,
            "gamma",
            format!("must be >= 0, got {}", self.gamma),
        );
        need(self.m >= 1, "M", "must be >= 1".to_string());
        if self.estimator == EstimatorKind::Is {
            need(
                self.model.rayleigh().is_some(),
                "estimator",
                format!(
                    "importance sampling uses the optimal control, which is only derived for the Rayleigh model (got \"{}\")",
                    self.model.class()
                ),
            );
            need(self.m >= 2, "M", "importance sampling needs M >= 2".to_string());
        }
        match &self.w {
            Some(WSpec::List(l)) if l.is_empty() => need(false, "w", "list is empty".to_string()),
            Some(WSpec::Linspace { min, max, count }) => {
                need(*count >= 1, "w.count", "must be >= 1".to_string());
                need(min <= max, "w", format!("min {min} exceeds max {max}"));
            }
            _ => {}
        }
        if let Some(w) = &self.w {
            need(
                w.values().iter().all(|x| x.is_finite()),
                "w",
                "values must be finite".to_string(),
            );
        }
        need(self.kbe.nt >= 2, "kbe.nt", format!("must be >= 2, got {}", self.kbe.nt));
        need(self.kbe.nx >= 2, "kbe.nx", format!("must be >= 2, got {}", self.kbe.nx));
        if let Some(xb) = self.kbe.xb {
            need(
                xb.is_finite() && xb > self.gamma * self.gamma,
                "kbe.xb",
                format!("must exceed gamma^2 = {}, got {xb}", self.gamma * self.gamma),
            );
        }
        need(self.bins >= 1, "bins", "must be >= 1".to_string());
        v
    }
}

/// One problem found by [`validate_config`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// 1-based line in the JSON text, when known.
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Line of the first `"key"` at or after byte `from`.
fn line_of(raw: &str, key: &str, from: usize) -> Option<(usize, usize)> {
    let pat = format!("\"{key}\"");
    let at = raw.get(from..)?.find(&pat)? + from;
    Some((raw[..at].matches('\n').count() + 1, at))
}

const TOP_KEYS: &[&str] = &[
    "model", "T", "N", "gamma", "estimator", "M", "w", "seed", "out", "kbe", "bins", "paths", "compare_iq",
];

fn model_keys(class: &str) -> &'static [&'static str] {
    match class {
        "rayleigh" => &["class", "B", "sigma", "I0", "Q0"],
        "rice" => &["class", "k", "theta", "beta", "I0", "Q0", "drift"],
        "hoyt" => &["class", "k1", "k2", "beta1", "beta2", "I0", "Q0"],
        _ => &["class"],
    }
}

struct Collector<'a> {
    raw: &'a str,
    issues: Vec<ConfigIssue>,
}

impl Collector<'_> {
    fn push(&mut self, field: &str, message: String) {
        let (key, from) = match field.split_once('.') {
            Some((parent, child)) => {
                let start = line_of(self.raw, parent, 0).map(|(_, at)| at).unwrap_or(0);
                (child, start)
            }
            None => (field, 0),
        };
        let line = line_of(self.raw, key, from).map(|(l, _)| l);
        self.issues.push(ConfigIssue {
            line,
            field: field.to_string(),
            message,
        });
    }

    fn take<T: DeserializeOwned>(&mut self, obj: &Map<String, Value>, key: &str, path: &str, slot: &mut T) {
        if let Some(v) = obj.get(key) {
            match T::deserialize(v) {
                Ok(x) => *slot = x,
                Err(e) => self.push(path, format!("invalid value {v}: {e}")),
            }
        }
    }

    fn unknown(&mut self, obj: &Map<String, Value>, known: &[&str], prefix: &str) {
        for k in obj.keys() {
            if !known.contains(&k.as_str()) {
                let field = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                self.push(&field, format!("unknown key (known: {})", known.join(", ")));
            }
        }
    }
}

/// Parses and checks a config, returning every problem found.
pub fn validate_config(raw: &str) -> std::result::Result<ExperimentConfig, Vec<ConfigIssue>> {
    let value: Value = serde_json::from_str(raw).map_err(|e| {
        vec![ConfigIssue {
            line: Some(e.line()),
            field: "<document>".into(),
            message: format!("invalid JSON: {e}"),
        }]
    })?;
    let mut c = Collector {
        raw,
        issues: Vec::new(),
    };
    let Some(top) = value.as_object() else {
        c.push("<document>", "top level must be a JSON object".into());
        return Err(c.issues);
    };
    c.unknown(top, TOP_KEYS, "");
    let class = match top.get("model").and_then(|m| m.get("class")) {
        Some(Value::String(s)) => s.clone(),
        Some(v) => {
            c.push("model.class", format!("must be a string, got {v}"));
            return Err(c.issues);
        }
        None => {
            c.push("model", "model.class is required (rayleigh, rice or hoyt)".into());
            return Err(c.issues);
        }
    };
    let Some(mut cfg) = ExperimentConfig::defaults(&class) else {
        c.push("model.class", format!("unknown class \"{class}\" (known: rayleigh, rice, hoyt)"));
        return Err(c.issues);
    };
    let model = top["model"].as_object().expect("model has a class so it is an object");
    c.unknown(model, model_keys(&class), "model");
    match &mut cfg.model {
        ModelSpec::Rayleigh { b, sigma, i0, q0 } => {
            c.take(model, "B", "model.B", b);
            c.take(model, "sigma", "model.sigma", sigma);
            c.take(model, "I0", "model.I0", i0);
            c.take(model, "Q0", "model.Q0", q0);
        }
        ModelSpec::Rice {
            k,
            theta,
            beta,
            i0,
            q0,
            drift,
        } => {
            c.take(model, "k", "model.k", k);
            c.take(model, "theta", "model.theta", theta);
            c.take(model, "beta", "model.beta", beta);
            c.take(model, "I0", "model.I0", i0);
            c.take(model, "Q0", "model.Q0", q0);
            c.take(model, "drift", "model.drift", drift);
        }
        ModelSpec::Hoyt {
            k1,
            k2,
            beta1,
            beta2,
            i0,
            q0,
        } => {
            c.take(model, "k1", "model.k1", k1);
            c.take(model, "k2", "model.k2", k2);
            c.take(model, "beta1", "model.beta1", beta1);
            c.take(model, "beta2", "model.beta2", beta2);
            c.take(model, "I0", "model.I0", i0);
            c.take(model, "Q0", "model.Q0", q0);
        }
    }
    c.take(top, "T", "T", &mut cfg.t_final);
    c.take(top, "N", "N", &mut cfg.steps);
    c.take(top, "gamma", "gamma", &mut cfg.gamma);
    c.take(top, "estimator", "estimator", &mut cfg.estimator);
    c.take(top, "M", "M", &mut cfg.m);
    c.take(top, "seed", "seed", &mut cfg.seed);
    c.take(top, "out", "out", &mut cfg.out);
    c.take(top, "bins", "bins", &mut cfg.bins);
    c.take(top, "paths", "paths", &mut cfg.paths);
    c.take(top, "compare_iq", "compare_iq", &mut cfg.compare_iq);
    if let Some(w) = top.get("w") {
        match WSpec::deserialize(w) {
            Ok(ws) => cfg.w = Some(ws),
            Err(_) => c.push(
                "w",
                format!("invalid value {w}: expected a number, a list of numbers, or {{\"min\", \"max\", \"count\"}}"),
            ),
        }
    }
    c.take(top, "kbe", "kbe", &mut cfg.kbe);
    for (field, msg) in cfg.violations() {
        c.push(&field, msg);
    }
    if c.issues.is_empty() {
        Ok(cfg)
    } else {
        Err(c.issues)
    }
}
