//! Euler–Maruyama integration of the envelope/fade-time systems.
//!
//! Three systems share the same explicit scheme on a uniform grid:
//!
//! * the I/Q system with `dZ = 1{I² + Q² < γ²} ds`,
//! * the projected system `(R̄, Z̄)` with `dZ̄ = 1{R̄ < γ²} ds`,
//! * the controlled projected system, which tilts the drift by `b̄ ζ` and
//!   accumulates the log-likelihood of the change of measure.
//!
//! The fade indicator uses the state at the left end of each step. The fade
//! time is held as an integer step count; `Z = min(count · dt, T)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou_channel::OuParams;
use crate::projection::ProjectedModel;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::config(format!("T must be finite and > 0, got {t_final}")));
        }
        if steps == 0 || steps > u32::MAX as usize {
            return Err(Error::config(format!("N must be in 1..=2^32-1, got {steps}")));
        }
        Ok(Self {
            t_final,
            steps,
            dt: t_final / steps as f64,
        })
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Fade time of `count` steps, capped at `T`.
    #[inline]
    pub fn fade_time(&self, count: u32) -> f64 {
        (count as f64 * self.dt).min(self.t_final)
    }
}

/// `min(count · dt, T) > w`, decided exactly on the represented values.
///
/// Rounding the product first would turn e.g. `75 · 0.04` into `3.0` and drop
/// a path whose fade time strictly exceeds `w = 3`. The cap keeps `Z <= T`.
#[inline]
pub fn fade_time_exceeds(count: u32, grid: &TimeGrid, w: f64) -> bool {
    if w >= grid.t_final {
        return false;
    }
    let (c, dt) = (count as f64, grid.dt);
    let p = c * dt;
    if p != w {
        return p > w;
    }
    c.mul_add(dt, -p) > 0.0
}

/// Final state of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadeSample {
    pub r_final: f64,
    pub fade_steps: u32,
    pub log_likelihood: f64,
}

impl FadeSample {
    pub fn fade_time(&self, grid: &TimeGrid) -> f64 {
        grid.fade_time(self.fade_steps)
    }
}

/// Recorded trajectory of `(R, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadePath {
    pub grid: TimeGrid,
    pub r_values: Vec<f64>,
    pub z_values: Vec<f64>,
    /// Fade time in steps; `z_values[n] = grid.fade_time(fade_steps[n])`.
    pub fade_steps: Vec<u32>,
    pub log_likelihood: f64,
}

impl FadePath {
    fn with_capacity(grid: TimeGrid) -> Self {
        Self {
            grid,
            r_values: Vec::with_capacity(grid.steps + 1),
            z_values: Vec::with_capacity(grid.steps + 1),
            fade_steps: Vec::with_capacity(grid.steps + 1),
            log_likelihood: 0.0,
        }
    }

    pub fn final_fade_time(&self) -> f64 {
        *self.z_values.last().expect("path has at least one point")
    }

    /// CSV with columns `t,r,z`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,r,z")?;
        for (n, (r, z)) in self.r_values.iter().zip(&self.z_values).enumerate() {
            writeln!(out, "{:?},{:?},{:?}", self.grid.time(n), r, z)?;
        }
        Ok(())
    }
}

/// Drift tilt `ζ(t, x, z)` applied by the controlled scheme.
pub trait Control: Sync {
    fn zeta(&self, t: f64, x: f64, z: f64) -> f64;
}

/// `ζ ≡ c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantControl(pub f64);

impl Control for ConstantControl {
    fn zeta(&self, _t: f64, _x: f64, _z: f64) -> f64 {
        self.0
    }
}

pub(crate) trait Observer {
    fn record(&mut self, r: f64, fade_steps: u32, grid: &TimeGrid);
}

pub(crate) struct NoRecord;

impl Observer for NoRecord {
    #[inline]
    fn record(&mut self, _r: f64, _fade_steps: u32, _grid: &TimeGrid) {}
}

impl Observer for FadePath {
    fn record(&mut self, r: f64, fade_steps: u32, grid: &TimeGrid) {
        self.r_values.push(r);
        self.fade_steps.push(fade_steps);
        self.z_values.push(grid.fade_time(fade_steps));
    }
}

pub(crate) fn run_iq<O: Observer>(
    p: &OuParams,
    gamma: f64,
    grid: &TimeGrid,
    rng: RngStream,
    obs: &mut O,
) -> FadeSample {
    let mut normals = rng.normals();
    let dt = grid.dt;
    let sdt = dt.sqrt();
    let g2 = gamma * gamma;
    let (mut i, mut q) = (p.i0, p.q0);
    let mut count = 0u32;
    obs.record(i * i + q * q, 0, grid);
    for _ in 0..grid.steps {
        if i * i + q * q < g2 {
            count += 1;
        }
        let e_i = normals.next_normal();
        let e_q = normals.next_normal();
        i += p.k1 * (p.theta1 - i) * dt + p.beta1 * sdt * e_i;
        q += p.k2 * (p.theta2 - q) * dt + p.beta2 * sdt * e_q;
        obs.record(i * i + q * q, count, grid);
    }
    FadeSample {
        r_final: i * i + q * q,
        fade_steps: count,
        log_likelihood: 0.0,
    }
}

pub(crate) fn run_projected<O: Observer>(
    model: &ProjectedModel,
    control: Option<&dyn Control>,
    r0: f64,
    gamma: f64,
    grid: &TimeGrid,
    rng: RngStream,
    obs: &mut O,
) -> Result<FadeSample> {
    if !(r0 >= 0.0) || !r0.is_finite() {
        return Err(Error::domain("simulate_projected_fade", format!("r0 must be >= 0, got {r0}")));
    }
    let mut normals = rng.normals();
    let dt = grid.dt;
    let sdt = dt.sqrt();
    let g2 = gamma * gamma;
    let mut r = r0;
    let mut count = 0u32;
    let mut log_l = 0.0;
    obs.record(r, 0, grid);
    for n in 0..grid.steps {
        let t = grid.time(n);
        let rp = r.max(0.0);
        let (a, b) = model.coeffs(t, rp)?;
        let eps = normals.next_normal();
        let mut drift = a;
        if let Some(ctrl) = control {
            let z = grid.fade_time(count);
            let zeta = ctrl.zeta(t, rp, z);
            if !zeta.is_finite() {
                return Err(Error::numerical(format!(
                    "control returned {zeta} at step {n} (t={t}, x={rp}, z={z})"
                )));
            }
            drift += b * zeta;
            log_l += -0.5 * dt * zeta * zeta - sdt * eps * zeta;
        }
        if r < g2 {
            count += 1;
        }
        r = (r + drift * dt + b * sdt * eps).max(0.0);
        obs.record(r, count, grid);
    }
    Ok(FadeSample {
        r_final: r,
        fade_steps: count,
        log_likelihood: log_l,
    })
}

/// Euler–Maruyama path of the I/Q system with its fade time.
pub fn simulate_iq_fade(p: &OuParams, gamma: f64, grid: &TimeGrid, rng: RngStream) -> FadePath {
    let mut path = FadePath::with_capacity(*grid);
    run_iq(p, gamma, grid, rng, &mut path);
    path
}

/// Euler–Maruyama path of the projected system (full truncation, floored at 0).
pub fn simulate_projected_fade(
    model: &ProjectedModel,
    r0: f64,
    gamma: f64,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<FadePath> {
    let mut path = FadePath::with_capacity(*grid);
    run_projected(model, None, r0, gamma, grid, rng, &mut path)?;
    Ok(path)
}

/// Controlled projected path; `log_likelihood` holds `Σ -½ dt ζ² - sqrt(dt) ε ζ`.
pub fn simulate_controlled_fade(
    model: &ProjectedModel,
    control: &dyn Control,
    r0: f64,
    gamma: f64,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<FadePath> {
    let mut path = FadePath::with_capacity(*grid);
    let s = run_projected(model, Some(control), r0, gamma, grid, rng, &mut path)?;
    path.log_likelihood = s.log_likelihood;
    Ok(path)
}
