//! Plain Monte Carlo for the fade-duration CCDF.
//!
//! Paths are generated in fixed-size chunks; chunk `c` always covers the same
//! sample indices and sample `k` always uses stream `k`, so every estimate is
//! the same for any number of worker threads.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ou_channel::OuParams;
use crate::projection::ProjectedModel;
use crate::rng::RngStream;
use crate::sde::{fade_time_exceeds, run_iq, run_projected, Control, FadeSample, NoRecord, TimeGrid};

/// 95% two-sided normal quantile.
pub const DEFAULT_CONFIDENCE: f64 = 1.96;
/// Points in the default `w` grid on `[0, T]`.
pub const DEFAULT_W_POINTS: usize = 200;
/// Samples per work unit.
pub const CHUNK: u64 = 4096;

/// Source of independent fade-duration samples indexed by sample number.
pub trait FadeSampler: Sync {
    fn grid(&self) -> &TimeGrid;

    fn seed(&self) -> u64;

    /// Sample number `index`, drawn from stream `(seed, index)`.
    fn sample(&self, index: u64) -> Result<FadeSample>;
}

/// Euler–Maruyama on the I/Q system.
#[derive(Debug, Clone)]
pub struct IqSampler {
    pub params: OuParams,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl FadeSampler for IqSampler {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn sample(&self, index: u64) -> Result<FadeSample> {
        Ok(run_iq(
            &self.params,
            self.gamma,
            &self.grid,
            RngStream::new(self.seed, index),
            &mut NoRecord,
        ))
    }
}

/// Euler–Maruyama on a projected envelope model.
#[derive(Debug, Clone)]
pub struct ProjectedSampler {
    pub model: ProjectedModel,
    pub r0: f64,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl FadeSampler for ProjectedSampler {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn sample(&self, index: u64) -> Result<FadeSample> {
        run_projected(
            &self.model,
            None,
            self.r0,
            self.gamma,
            &self.grid,
            RngStream::new(self.seed, index),
            &mut NoRecord,
        )
    }
}

/// Projected model under a drift tilt; samples carry their log-likelihood.
#[derive(Clone)]
pub struct ControlledSampler {
    pub model: ProjectedModel,
    pub control: Arc<dyn Control + Send>,
    pub r0: f64,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl FadeSampler for ControlledSampler {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn sample(&self, index: u64) -> Result<FadeSample> {
        run_projected(
            &self.model,
            Some(self.control.as_ref()),
            self.r0,
            self.gamma,
            &self.grid,
            RngStream::new(self.seed, index),
            &mut NoRecord,
        )
    }
}

/// Applies `f` to consecutive index ranges of length [`CHUNK`] covering `0..m`
/// and returns the results in index order.
pub fn map_chunks<T, F>(m: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<u64>) -> Result<T> + Sync,
{
    let chunks = m.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(m)))
        .collect()
}

/// All `m` samples in index order.
pub fn collect_samples(sampler: &dyn FadeSampler, m: u64) -> Result<Vec<FadeSample>> {
    let parts = map_chunks(m, |r| r.map(|k| sampler.sample(k)).collect::<Result<Vec<_>>>())?;
    Ok(parts.into_iter().flatten().collect())
}

/// Number of paths by fade-step count, `hist[c] = #{k : count_k = c}`.
pub fn fade_count_histogram(sampler: &dyn FadeSampler, m: u64) -> Result<Vec<u64>> {
    let n = sampler.grid().steps;
    let parts = map_chunks(m, |r| {
        let mut h = vec![0u64; n + 1];
        for k in r {
            h[sampler.sample(k)?.fade_steps as usize] += 1;
        }
        Ok(h)
    })?;
    let mut hist = vec![0u64; n + 1];
    for p in parts {
        for (a, b) in hist.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(hist)
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// The default 200-point `w` grid on `[0, T]`.
pub fn default_w_grid(t_final: f64) -> Vec<f64> {
    linspace(0.0, t_final, DEFAULT_W_POINTS)
}

/// `C · sqrt(var) / (sqrt(M) · p)`; `+inf` when `p = 0`.
pub fn relative_error(p: f64, var: f64, m: u64, c: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("relative_error", "M must be >= 1"));
    }
    if !(0.0..=1.0).contains(&p) || !(var >= 0.0) {
        return Err(Error::domain(
            "relative_error",
            format!("need p in [0, 1] and var >= 0, got p={p}, var={var}"),
        ));
    }
    if p == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(c * var.sqrt() / ((m as f64).sqrt() * p))
}

/// Runs needed for relative error `target`: `(C / target)² · var / p²`.
pub fn samples_needed(p: f64, var: f64, c: f64, target: f64) -> f64 {
    if p == 0.0 {
        return f64::INFINITY;
    }
    (c / target).powi(2) * var / (p * p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcdfEstimate {
    pub grid: TimeGrid,
    pub w_grid: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// Single-sample variance `p̂(1 - p̂)`.
    pub sample_variance: Vec<f64>,
    pub rel_error: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub m_samples: u64,
    pub confidence: f64,
    /// `P(Z(T) = 0)`.
    pub jump_at_zero: f64,
    /// Paths per fade-step count.
    pub count_histogram: Vec<u64>,
}

impl CcdfEstimate {
    /// Builds the estimate from a fade-count histogram.
    pub fn from_histogram(grid: TimeGrid, hist: Vec<u64>, w_grid: &[f64], c: f64) -> Result<Self> {
        if w_grid.is_empty() {
            return Err(Error::config("w grid is empty"));
        }
        let m: u64 = hist.iter().sum();
        if m == 0 {
            return Err(Error::config("M must be >= 1"));
        }
        let mf = m as f64;
        let mut p_hat = Vec::with_capacity(w_grid.len());
        let mut var = Vec::with_capacity(w_grid.len());
        let mut rel = Vec::with_capacity(w_grid.len());
        let mut half = Vec::with_capacity(w_grid.len());
        for &w in w_grid {
            let above: u64 = hist
                .iter()
                .enumerate()
                .filter(|&(cnt, _)| fade_time_exceeds(cnt as u32, &grid, w))
                .map(|(_, &h)| h)
                .sum();
            let p = above as f64 / mf;
            let v = p * (1.0 - p);
            p_hat.push(p);
            var.push(v);
            rel.push(relative_error(p, v, m, c)?);
            half.push(c * (v / mf).sqrt());
        }
        Ok(Self {
            grid,
            w_grid: w_grid.to_vec(),
            p_hat,
            sample_variance: var,
            rel_error: rel,
            ci_halfwidth: half,
            m_samples: m,
            confidence: c,
            jump_at_zero: hist[0] as f64 / mf,
            count_histogram: hist,
        })
    }

    pub fn ci_low(&self, k: usize) -> f64 {
        (self.p_hat[k] - self.ci_halfwidth[k]).max(0.0)
    }

    pub fn ci_high(&self, k: usize) -> f64 {
        (self.p_hat[k] + self.ci_halfwidth[k]).min(1.0)
    }

    /// Standard error of `p̂` at grid point `k`.
    pub fn std_error(&self, k: usize) -> f64 {
        (self.sample_variance[k] / self.m_samples as f64).sqrt()
    }

    /// CSV with columns `w,p_hat,variance,rel_error,ci_low,ci_high`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "w,p_hat,variance,rel_error,ci_low,ci_high")?;
        for k in 0..self.w_grid.len() {
            writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                self.w_grid[k],
                self.p_hat[k],
                self.sample_variance[k],
                self.rel_error[k],
                self.ci_low(k),
                self.ci_high(k)
            )?;
        }
        Ok(())
    }
}

/// `P(Z(T) > w)` on `w_grid` from `m` independent paths.
pub fn mc_ccdf(sampler: &dyn FadeSampler, w_grid: &[f64], m: u64, c: f64) -> Result<CcdfEstimate> {
    if w_grid.is_empty() {
        return Err(Error::config("w grid is empty"));
    }
    if m == 0 {
        return Err(Error::config("M must be >= 1"));
    }
    let hist = fade_count_histogram(sampler, m)?;
    CcdfEstimate::from_histogram(*sampler.grid(), hist, w_grid, c)
}

/// Equal-width histogram over `[min, max]` of the samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn edges(&self, b: usize) -> (f64, f64) {
        let w = self.bin_width();
        let hi = if b + 1 == self.counts.len() {
            self.hi
        } else {
            self.lo + (b + 1) as f64 * w
        };
        (self.lo + b as f64 * w, hi)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV with columns `bin_low,bin_high,count,density`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_low,bin_high,count,density")?;
        let n = self.total() as f64;
        let w = self.bin_width();
        for (b, &c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.edges(b);
            let density = if w > 0.0 { c as f64 / (n * w) } else { f64::NAN };
            writeln!(out, "{lo:?},{hi:?},{c},{density:?}")?;
        }
        Ok(())
    }
}

pub fn fade_histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::config("histogram of an empty sample"));
    }
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("histogram samples must be finite"));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    histogram_in_range(samples, lo, hi, bins)
}

/// Histogram on `[lo, hi]`; samples outside are counted in the end bins.
pub fn histogram_in_range(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::config(format!("histogram range [{lo}, {hi}] is invalid")));
    }
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for &x in samples {
        let b = if width > 0.0 {
            (((x - lo) / width).max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(Histogram { lo, hi, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou_channel::RayleighParams;

    fn table1_sampler(seed: u64) -> ProjectedSampler {
        let p = RayleighParams {
            b: 1.0,
            sigma: 1.0,
            i0: 1.0,
            q0: 1.0,
        };
        ProjectedSampler {
            model: ProjectedModel::rayleigh(p).unwrap(),
            r0: p.r0(),
            gamma: 0.5,
            grid: TimeGrid::new(4.0, 100).unwrap(),
            seed,
        }
    }

    #[test]
    fn relative_error_hand_values() {
        let e = relative_error(0.5, 0.25, 1_000_000, 1.96).unwrap();
        assert!((e - 0.00196).abs() < 1e-15);
        assert_eq!(relative_error(1.0, 0.0, 10, 1.96).unwrap(), 0.0);
        assert_eq!(relative_error(0.0, 0.0, 10, 1.96).unwrap(), f64::INFINITY);
        assert!(relative_error(0.5, 0.25, 0, 1.96).is_err());
    }

    #[test]
    fn ccdf_edges_and_monotone() {
        let s = table1_sampler(3);
        let est = mc_ccdf(&s, &[-0.1, 0.0, 1.0, 2.0, 4.0], 2000, DEFAULT_CONFIDENCE).unwrap();
        assert_eq!(est.p_hat[0], 1.0);
        assert_eq!(est.p_hat[4], 0.0);
        assert!(est.p_hat.windows(2).all(|w| w[0] >= w[1]));
        assert!((est.p_hat[1] - (1.0 - est.jump_at_zero)).abs() < 1e-15);
        assert!(est.jump_at_zero > 0.0);
        assert!(mc_ccdf(&s, &[], 10, 1.96).is_err());
    }

    #[test]
    fn chunking_is_order_stable() {
        let s = table1_sampler(11);
        let a = collect_samples(&s, CHUNK + 17).unwrap();
        assert_eq!(a.len() as u64, CHUNK + 17);
        assert_eq!(a[4100], s.sample(4100).unwrap());
        let h = fade_count_histogram(&s, CHUNK + 17).unwrap();
        assert_eq!(h.iter().sum::<u64>(), CHUNK + 17);
    }

    #[test]
    fn histogram_basics() {
        let h = fade_histogram(&[2.0; 7], 5).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 7);
        let xs: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 10_007) as f64).collect();
        let h = fade_histogram(&xs, 13).unwrap();
        assert_eq!(h.total(), 10_000);
        assert!(fade_histogram(&[], 3).is_err());
        assert!(fade_histogram(&[1.0], 0).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let g = default_w_grid(4.0);
        assert_eq!(g.len(), 200);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[199], 4.0);
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn csv_header() {
        let s = table1_sampler(1);
        let est = mc_ccdf(&s, &[0.5, 1.0], 100, 1.96).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let t = String::from_utf8(buf).unwrap();
        assert!(t.starts_with("w,p_hat,variance,rel_error,ci_low,ci_high\n"));
        assert_eq!(t.lines().count(), 3);
    }
}
