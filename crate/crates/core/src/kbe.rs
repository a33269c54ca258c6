//! Backward-equation solver for the Rayleigh fade-duration tail.
//!
//! `ṽ(t, x, z̃) = P(Z̄(T) > w | R̄(t) = x, w - Z̄(t) = z̃)` does not depend on `w`,
//! so one solve serves every threshold through `v(t, x, z) = ṽ(t, x, w - z)`.
//!
//! The grid is `t_n = nΔt`, `z̃_j = jΔt` (`Δt = T/(Nt+1)`) and `x_i = iΔx`
//! (`Δx = xb/(Nx+1)`). The x operator uses central differences with linearly
//! extrapolated boundary nodes. Nodes with `z̃_j >= T - t_n` are held at 0 and
//! the `z̃ = 0` row at 1 (0 on the terminal slice).
//!
//! Three schemes are available (see [`KbeScheme`]):
//!
//! * `central-cn`: central differences in z̃ too, Crank–Nicolson in time. Only
//!   the fade nodes `x_i < γ²` couple neighbouring z̃ blocks, so each step
//!   reduces to a small block system on those nodes (capacitance form) that is
//!   expanded back with tridiagonal solves in x. Oscillates behind the
//!   `z̃ = 0` front.
//! * `shift-cn` (default) and `shift-implicit`: because `Δz̃ = Δt`, transport
//!   in z̃ over one step is an exact one-cell shift on fade nodes; the x part
//!   is then a tridiagonal solve per z̃ row. `shift-cn` splits the x part into
//!   two Crank–Nicolson half steps around the shift (Strang splitting).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::Control;

/// Default `xb / σ²`.
pub const DEFAULT_XB_OVER_SIGMA2: f64 = 12.0;
pub const DEFAULT_V_FLOOR: f64 = 1e-12;
pub const DEFAULT_ZETA_CAP: f64 = 50.0;
/// Allowed pre-clamp excursion outside `[0, 1]`.
pub const OVERSHOOT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbeGridConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub nt: usize,
    pub nx: usize,
    pub xb: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub sigma: f64,
    pub gamma: f64,
    #[serde(default)]
    pub scheme: KbeScheme,
}

/// Discretization of the backward equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KbeScheme {
    /// Central differences in x and z̃, Crank–Nicolson in time.
    CentralCn,
    /// Exact z̃ shift on fade nodes, implicit Euler in x.
    ShiftImplicit,
    /// Exact z̃ shift on fade nodes, Strang-split with Crank–Nicolson in x.
    #[default]
    ShiftCn,
}

impl KbeGridConfig {
    /// Config with `xb = 12σ²`.
    pub fn new(t_final: f64, nt: usize, nx: usize, b: f64, sigma: f64, gamma: f64) -> Self {
        Self {
            t_final,
            nt,
            nx,
            xb: DEFAULT_XB_OVER_SIGMA2 * sigma * sigma,
            b,
            sigma,
            gamma,
            scheme: KbeScheme::default(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            v.push(format!("T must be finite and > 0, got {}", self.t_final));
        }
        if self.nt < 2 {
            v.push(format!("grid nt must be >= 2, got {}", self.nt));
        }
        if self.nx < 2 {
            v.push(format!("grid nx must be >= 2, got {}", self.nx));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            v.push(format!("B must be finite and > 0, got {}", self.b));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            v.push(format!("sigma must be finite and > 0, got {}", self.sigma));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            v.push(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.xb.is_finite() && self.xb > self.gamma * self.gamma) {
            v.push(format!(
                "xb must exceed gamma^2 = {}, got {}",
                self.gamma * self.gamma,
                self.xb
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }

    /// Shared time and z̃ spacing `T/(Nt+1)`.
    pub fn dt(&self) -> f64 {
        self.t_final / (self.nt + 1) as f64
    }

    pub fn dx(&self) -> f64 {
        self.xb / (self.nx + 1) as f64
    }

    /// `(Nt+2, Nx+2, Nt+2)`, the extents of `(n, i, j)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.nt + 2, self.nx + 2, self.nt + 2]
    }
}

/// Solved `ṽ` on every node, stored `(n, i, j)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionGrid {
    pub config: KbeGridConfig,
    values: Vec<f64>,
    /// Largest pre-clamp excursion outside `[0, 1]` over all sweeps.
    pub max_overshoot: f64,
}

impl ValueFunctionGrid {
    #[inline]
    fn index(&self, n: usize, i: usize, j: usize) -> usize {
        let [_, ni, nj] = self.config.shape();
        (n * ni + i) * nj + j
    }

    #[inline]
    pub fn node(&self, n: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(n, i, j)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest `|∂x ṽ|` at `x = xb` over all nodes, by a one-sided difference.
    pub fn boundary_gradient(&self) -> f64 {
        let [nn, ni, nj] = self.config.shape();
        let dx = self.config.dx();
        let mut g = 0.0f64;
        for n in 0..nn {
            for j in 0..nj {
                let d = (self.node(n, ni - 1, j) - self.node(n, ni - 2, j)) / dx;
                g = g.max(d.abs());
            }
        }
        g
    }

    /// Re-verifies the node invariants; returns every violation found.
    pub fn check_invariants(&self) -> Vec<String> {
        let c = &self.config;
        let [nn, ni, nj] = c.shape();
        let mut out = Vec::new();
        if self.values.len() != nn * ni * nj {
            out.push(format!("value count {} != {}", self.values.len(), nn * ni * nj));
            return out;
        }
        if let Some(p) = self.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            out.push(format!("value {} at flat index {p} outside [0, 1]", self.values[p]));
        }
        for n in 0..nn {
            let first_wedge = (c.nt + 1).saturating_sub(n);
            for i in 0..ni {
                let expect0 = if n < nn - 1 { 1.0 } else { 0.0 };
                if self.node(n, i, 0) != expect0 && first_wedge > 0 {
                    out.push(format!("z=0 node (n={n}, i={i}) is {}", self.node(n, i, 0)));
                }
                for j in first_wedge.max(1)..nj {
                    if self.node(n, i, j) != 0.0 {
                        out.push(format!("wedge node (n={n}, i={i}, j={j}) is {}", self.node(n, i, j)));
                        break;
                    }
                }
                for j in 1..nj {
                    if self.node(n, i, j) > self.node(n, i, j - 1) + OVERSHOOT_TOL {
                        out.push(format!("not nonincreasing in z at (n={n}, i={i}, j={j})"));
                        break;
                    }
                }
            }
        }
        if self.max_overshoot > OVERSHOOT_TOL {
            out.push(format!(
                "pre-clamp overshoot {} exceeds {OVERSHOOT_TOL}",
                self.max_overshoot
            ));
        }
        out
    }

    /// Writes `<stem>.json` (metadata) and `<stem>.bin` (little-endian f64).
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let json_path = stem.with_extension("json");
        let bin_path = stem.with_extension("bin");
        let meta = GridFileMeta {
            config: self.config,
            shape: self.config.shape(),
            order: "n,i,j".into(),
            dtype: "f64".into(),
            endianness: "little".into(),
            max_overshoot: self.max_overshoot,
            data_file: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), &meta)?;
        let mut w = BufWriter::new(File::create(&bin_path)?);
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok((json_path, bin_path))
    }

    /// Loads a grid written by [`save`](Self::save). With `check`, the node
    /// invariants are re-verified and any violation is an error.
    pub fn load(json_path: &Path, check: bool) -> Result<Self> {
        let meta: GridFileMeta = serde_json::from_reader(BufReader::new(
            File::open(json_path).map_err(|e| {
                Error::config(format!(
                    "cannot open grid file {}: {e}; run `kbe-solve` first",
                    json_path.display()
                ))
            })?,
        ))?;
        meta.config.validate()?;
        if meta.shape != meta.config.shape() || meta.endianness != "little" || meta.dtype != "f64" {
            return Err(Error::config(format!(
                "grid metadata {} is inconsistent (shape {:?}, {} {})",
                json_path.display(),
                meta.shape,
                meta.dtype,
                meta.endianness
            )));
        }
        let bin_path = json_path.with_file_name(&meta.data_file);
        let mut bytes = Vec::new();
        BufReader::new(File::open(&bin_path)?).read_to_end(&mut bytes)?;
        let expected: usize = meta.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(Error::config(format!(
                "{} holds {} bytes, expected {}",
                bin_path.display(),
                bytes.len(),
                expected * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let grid = Self {
            config: meta.config,
            values,
            max_overshoot: meta.max_overshoot,
        };
        if check {
            let v = grid.check_invariants();
            if !v.is_empty() {
                return Err(Error::numerical(format!(
                    "grid {} fails checks: {}",
                    json_path.display(),
                    v.join("; ")
                )));
            }
        }
        Ok(grid)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridFileMeta {
    config: KbeGridConfig,
    shape: [usize; 3],
    order: String,
    dtype: String,
    endianness: String,
    max_overshoot: f64,
    data_file: String,
}

/// Share of the cell `[x - dx/2, x + dx/2]` lying below `g2`.
fn fade_fraction(x: f64, dx: f64, g2: f64) -> f64 {
    ((g2 - (x - 0.5 * dx)) / dx).clamp(0.0, 1.0)
}

/// Thomas factorization of a fixed tridiagonal matrix.
struct Tridiag {
    sub: Vec<f64>,
    sup: Vec<f64>,
    /// Modified diagonal after elimination.
    piv: Vec<f64>,
}

impl Tridiag {
    fn factor(sub: Vec<f64>, diag: &[f64], sup: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        let mut piv = vec![0.0; n];
        piv[0] = diag[0];
        for k in 1..n {
            if piv[k - 1] == 0.0 || !piv[k - 1].is_finite() {
                return Err(Error::numerical(format!("singular tridiagonal pivot at row {}", k - 1)));
            }
            piv[k] = diag[k] - sub[k] * sup[k - 1] / piv[k - 1];
        }
        if piv[n - 1] == 0.0 || !piv[n - 1].is_finite() {
            return Err(Error::numerical(format!("singular tridiagonal pivot at row {}", n - 1)));
        }
        Ok(Self { sub, sup, piv })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        for k in 1..n {
            x[k] -= self.sub[k] / self.piv[k - 1] * x[k - 1];
        }
        x[n - 1] /= self.piv[n - 1];
        for k in (0..n - 1).rev() {
            x[k] = (x[k] - self.sup[k] * x[k + 1]) / self.piv[k];
        }
    }
}

/// Dense row-major inverse by Gauss–Jordan with partial pivoting.
fn invert(m: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; k * k];
    for d in 0..k {
        inv[d * k + d] = 1.0;
    }
    for col in 0..k {
        let p = (col..k).max_by(|&r, &s| a[r * k + col].abs().total_cmp(&a[s * k + col].abs()))?;
        if a[p * k + col] == 0.0 {
            return None;
        }
        if p != col {
            for c in 0..k {
                a.swap(p * k + c, col * k + c);
                inv.swap(p * k + c, col * k + c);
            }
        }
        let d = a[col * k + col];
        for c in 0..k {
            a[col * k + c] /= d;
            inv[col * k + c] /= d;
        }
        for r in 0..k {
            if r != col {
                let f = a[r * k + col];
                if f != 0.0 {
                    for c in 0..k {
                        a[r * k + c] -= f * a[col * k + c];
                        inv[r * k + c] -= f * inv[col * k + c];
                    }
                }
            }
        }
    }
    Some(inv)
}

fn matmul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for r in 0..k {
        for m in 0..k {
            let f = a[r * k + m];
            for c in 0..k {
                out[r * k + c] += f * b[m * k + c];
            }
        }
    }
    out
}

fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let k = x.len();
    for r in 0..k {
        out[r] = (0..k).map(|c| a[r * k + c] * x[c]).sum();
    }
}

/// Step operators shared by every time level (the Rayleigh coefficients are
/// time independent).
struct StepOperator {
    nx: usize,
    /// Rows of the x operator `A`: `(sub, diag, sup)` per interior node.
    a_sub: Vec<f64>,
    a_diag: Vec<f64>,
    a_sup: Vec<f64>,
    /// `γ_i = 1{x_i < γ²} / (2Δt)`.
    gam: Vec<f64>,
    /// Interior indices (0-based) of the fade nodes.
    fade: Vec<usize>,
    /// Factorization of `I + Δt/2 · A`.
    lhs: Tridiag,
    /// `(I + Δt/2 · A)^{-1} Pᵀ`, column-major by fade node.
    z_cols: Vec<Vec<f64>>,
    /// Capacitance coupling `c · S` with `S = P (I + Δt/2 · A)^{-1} Pᵀ`.
    cs: Vec<f64>,
    /// Block-Thomas factors for the reduced system, indexed by block row.
    m_inv: Vec<Vec<f64>>,
    fwd: Vec<Vec<f64>>,
    /// `h / (2Δt)`, the coupling of a fully fading node.
    c: f64,
    /// Fade fraction of each reduced node.
    wgt: Vec<f64>,
}

impl StepOperator {
    fn new(cfg: &KbeGridConfig) -> Result<Self> {
        Self::build(cfg, 0.5 * cfg.dt(), true)
    }

    /// `I + h·A` only; no z̃ coupling.
    fn new_x_only(cfg: &KbeGridConfig, h: f64) -> Result<Self> {
        Self::build(cfg, h, false)
    }

    fn build(cfg: &KbeGridConfig, h: f64, couple_z: bool) -> Result<Self> {
        let nx = cfg.nx;
        let dt = cfg.dt();
        let dx = cfg.dx();
        let g2 = cfg.gamma * cfg.gamma;
        let s2 = cfg.sigma * cfg.sigma;
        let mut a_sub = vec![0.0; nx];
        let mut a_diag = vec![0.0; nx];
        let mut a_sup = vec![0.0; nx];
        let mut gam = vec![0.0; nx];
        let mut fade = Vec::new();
        for k in 0..nx {
            let x = (k + 1) as f64 * dx;
            let a = cfg.b * (s2 - x);
            let b2 = 2.0 * s2 * cfg.b * x;
            let au = a / (2.0 * dx) + b2 / (2.0 * dx * dx);
            let al = a / (2.0 * dx) - b2 / (2.0 * dx * dx);
            let be = b2 / (dx * dx);
            if k == 0 {
                a_diag[k] = 2.0 * al + be;
                a_sup[k] = -(al + au);
            } else if k == nx - 1 {
                a_sub[k] = al + au;
                a_diag[k] = be - 2.0 * au;
            } else {
                a_sub[k] = al;
                a_diag[k] = be;
                a_sup[k] = -au;
            }
            let theta = fade_fraction(x, dx, g2);
            if theta > 0.0 {
                gam[k] = theta / (2.0 * dt);
                fade.push(k);
            }
        }
        let lhs = Tridiag::factor(
            a_sub.iter().map(|v| h * v).collect(),
            &a_diag.iter().map(|v| 1.0 + h * v).collect::<Vec<_>>(),
            a_sup.iter().map(|v| h * v).collect(),
        )?;
        let kf = if couple_z { fade.len() } else { 0 };
        let c = h / (2.0 * dt);
        let mut z_cols = Vec::with_capacity(kf);
        for &f in fade.iter().take(kf) {
            let mut e = vec![0.0; nx];
            e[f] = 1.0;
            lhs.solve_in_place(&mut e);
            z_cols.push(e);
        }
        // Reduced unknowns are the fade values; the coupling carries each
        // node's own weight 2Δt·γ_i.
        let wgt: Vec<f64> = fade.iter().map(|&f| 2.0 * dt * gam[f]).collect();
        let mut cs = vec![0.0; kf * kf];
        for r in 0..kf {
            for q in 0..kf {
                cs[r * kf + q] = c * z_cols[q][fade[r]] * wgt[q];
            }
        }
        // Reduced system u_j + cS u_{j+1} - cS u_{j-1} = b_j. Elimination runs
        // upward in j, so the factors for J blocks are a prefix of those for Nt.
        let mut m_inv: Vec<Vec<f64>> = Vec::with_capacity(cfg.nt);
        let mut fwd = Vec::with_capacity(cfg.nt);
        let mut ident = vec![0.0; kf * kf];
        for d in 0..kf {
            ident[d * kf + d] = 1.0;
        }
        for j in 0..if couple_z { cfg.nt } else { 0 } {
            let m = if j == 0 {
                ident.clone()
            } else {
                let f = matmul(&cs, &m_inv[j - 1], kf);
                let mut m = matmul(&f, &cs, kf);
                for (mv, iv) in m.iter_mut().zip(&ident) {
                    *mv += iv;
                }
                fwd.push(f);
                m
            };
            let inv = invert(&m, kf).ok_or_else(|| {
                Error::numerical(format!("singular reduced block at z-row {}", j + 1))
            })?;
            m_inv.push(inv);
        }
        Ok(Self {
            nx,
            a_sub,
            a_diag,
            a_sup,
            gam,
            fade,
            lhs,
            z_cols,
            cs,
            m_inv,
            fwd,
            c,
            wgt,
        })
    }

    #[inline]
    fn apply_a(&self, v: &[f64], k: usize) -> f64 {
        let mut s = self.a_diag[k] * v[k];
        if k > 0 {
            s += self.a_sub[k] * v[k - 1];
        }
        if k + 1 < self.nx {
            s += self.a_sup[k] * v[k + 1];
        }
        s
    }
}

/// Backward sweep from `t = T` to `t = 0` with the configured scheme.
pub fn solve_kbe(config: &KbeGridConfig) -> Result<ValueFunctionGrid> {
    config.validate()?;
    let [nn, ni, nj] = config.shape();
    let mut grid = ValueFunctionGrid {
        config: *config,
        values: vec![0.0; nn * ni * nj],
        max_overshoot: 0.0,
    };
    sweep(config, &mut grid)?;
    Ok(grid)
}

fn sweep<S: LevelStore>(config: &KbeGridConfig, store: &mut S) -> Result<()> {
    match config.scheme {
        KbeScheme::CentralCn => solve_central_cn(config, store),
        KbeScheme::ShiftImplicit => solve_shift(config, false, store),
        KbeScheme::ShiftCn => solve_shift(config, true, store),
    }
}

/// The `t = 0` slice of a solve, kept without the full `(n, i, j)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSlice {
    pub config: KbeGridConfig,
    values: Vec<f64>,
    pub max_overshoot: f64,
}

impl InitialSlice {
    /// `ṽ(0, x, w) = P(Z̄(T) > w | R̄(0) = x)`.
    pub fn ccdf(&self, x: f64, w: f64) -> Result<f64> {
        let c = &self.config;
        if !(x >= 0.0) || !w.is_finite() {
            return Err(Error::domain("InitialSlice::ccdf", format!("need x >= 0 and finite w, got x={x}, w={w}")));
        }
        if w < 0.0 {
            return Ok(1.0);
        }
        if w >= c.t_final {
            return Ok(0.0);
        }
        let nj = c.nt + 2;
        Ok(bilinear(c, |i, j| self.values[i * nj + j], x.min(c.xb), w))
    }
}

/// Backward sweep that keeps only the current level; memory `O(Nt·Nx)`
/// instead of `O(Nt²·Nx)`, for convergence checks on fine grids.
pub fn solve_kbe_initial_slice(config: &KbeGridConfig) -> Result<InitialSlice> {
    config.validate()?;
    let [_, ni, nj] = config.shape();
    let mut store = RollingLevel {
        nj,
        values: vec![0.0; ni * nj],
        max_overshoot: 0.0,
    };
    sweep(config, &mut store)?;
    Ok(InitialSlice {
        config: *config,
        values: store.values,
        max_overshoot: store.max_overshoot,
    })
}

/// Writes level `m` from the interior rows `rows[j]` (`j = 1..=active`),
/// adds the z̃ = 0 row, the extrapolated x boundaries and the zero wedge,
/// and clamps to `[0, 1]`. Overshoot is measured on the solved nodes.
fn store_level<S: LevelStore>(
    grid: &mut S,
    cfg: &KbeGridConfig,
    m: usize,
    active: usize,
    rows: &[Vec<f64>],
) -> Result<()> {
    let [_, ni, nj] = cfg.shape();
    let nx = cfg.nx;
    let mut overshoot = *grid.overshoot();
    for j in 0..nj {
        for i in 0..ni {
            let v = if j == 0 {
                1.0
            } else if j <= active {
                let r = &rows[j];
                match i {
                    0 => 2.0 * r[0] - r[1],
                    _ if i == ni - 1 => 2.0 * r[nx - 1] - r[nx - 2],
                    _ => {
                        overshoot = overshoot.max(r[i - 1] - 1.0).max(-r[i - 1]);
                        r[i - 1]
                    }
                }
            } else {
                0.0
            };
            if !v.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite value at step n={m}, i={i}, j={j}"
                )));
            }
            grid.put(m, i, j, v.clamp(0.0, 1.0));
        }
    }
    *grid.overshoot() = overshoot;
    Ok(())
}

/// Destination of the backward sweep, one level at a time.
trait LevelStore {
    fn put(&mut self, m: usize, i: usize, j: usize, v: f64);
    /// A node of the most recently stored level `n`.
    fn get(&self, n: usize, i: usize, j: usize) -> f64;
    fn overshoot(&mut self) -> &mut f64;
}

impl LevelStore for ValueFunctionGrid {
    #[inline]
    fn put(&mut self, m: usize, i: usize, j: usize, v: f64) {
        let idx = self.index(m, i, j);
        self.values[idx] = v;
    }

    #[inline]
    fn get(&self, n: usize, i: usize, j: usize) -> f64 {
        self.node(n, i, j)
    }

    fn overshoot(&mut self) -> &mut f64 {
        &mut self.max_overshoot
    }
}

/// Keeps only the latest level; ends holding `t = 0`.
struct RollingLevel {
    nj: usize,
    values: Vec<f64>,
    max_overshoot: f64,
}

impl LevelStore for RollingLevel {
    #[inline]
    fn put(&mut self, _m: usize, i: usize, j: usize, v: f64) {
        self.values[i * self.nj + j] = v;
    }

    #[inline]
    fn get(&self, _n: usize, i: usize, j: usize) -> f64 {
        self.values[i * self.nj + j]
    }

    fn overshoot(&mut self) -> &mut f64 {
        &mut self.max_overshoot
    }
}

/// Exact one-cell shift in z̃ on the fade nodes (`Δz̃ = Δt`, weighted by the
/// fade fraction of the cell) followed by one step in x, either implicit
/// Euler or trapezoidal. With implicit Euler `I + Δt·A` is an M-matrix with
/// unit row sums, so the step is monotone and stays in `[0, 1]`.
fn solve_shift<S: LevelStore>(config: &KbeGridConfig, trapezoidal: bool, grid: &mut S) -> Result<()> {
    // Trapezoidal: Strang splitting, half a Crank–Nicolson step in x on each
    // side of the shift. Otherwise: shift, then one implicit Euler step.
    let h = if trapezoidal { 0.25 * config.dt() } else { config.dt() };
    let op = StepOperator::new_x_only(config, h)?;
    let nn = config.nt + 2;
    let nt = config.nt;
    let nx = config.nx;
    let dt = config.dt();
    let mut half = vec![vec![0.0; nx]; nt + 2];
    let mut rows = vec![vec![0.0; nx]; nt + 2];
    let mut scratch = vec![0.0; nx];
    let cn_half = |row: &mut [f64], scratch: &mut [f64]| {
        scratch.copy_from_slice(row);
        for k in 0..nx {
            row[k] = scratch[k] - h * op.apply_a(scratch, k);
        }
        op.lhs.solve_in_place(row);
    };
    for n in (1..nn).rev() {
        let v0_n = if n < nt + 1 { 1.0 } else { 0.0 };
        let active_n = nt.saturating_sub(n);
        let active = nt + 1 - n;
        for j in 1..=active_n {
            for k in 0..nx {
                half[j][k] = grid.get(n, k + 1, j);
            }
            if trapezoidal {
                cn_half(&mut half[j], &mut scratch);
            }
        }
        for j in 1..=active {
            for k in 0..nx {
                let stay = if j <= active_n { half[j][k] } else { 0.0 };
                let theta = 2.0 * dt * op.gam[k];
                rows[j][k] = if theta > 0.0 {
                    let shifted = if j == 1 { v0_n } else { half[j - 1][k] };
                    theta * shifted + (1.0 - theta) * stay
                } else {
                    stay
                };
            }
            if trapezoidal {
                cn_half(&mut rows[j], &mut scratch);
            } else {
                op.lhs.solve_in_place(&mut rows[j]);
            }
        }
        store_level(grid, config, n - 1, active, &rows)?;
    }
    Ok(())
}

/// Crank–Nicolson sweep with central differences in x and z̃.
fn solve_central_cn<S: LevelStore>(config: &KbeGridConfig, grid: &mut S) -> Result<()> {
    let op = StepOperator::new(config)?;
    let nn = config.nt + 2;
    let nt = config.nt;
    let nx = config.nx;
    let h = 0.5 * config.dt();
    let kf = op.fade.len();

    // Terminal slice n = Nt+1 is identically 0 (including the z̃ = 0 corner).

    // Interior work arrays indexed [j][k] with j = 1..=Nt, k = 0..Nx-1.
    let mut cur = vec![vec![0.0; nx]; nt + 2];
    let mut rhs = vec![vec![0.0; nx]; nt + 2];
    let mut b = vec![vec![0.0; kf]; nt + 2];
    let mut y = vec![vec![0.0; kf]; nt + 2];
    let mut u = vec![vec![0.0; kf]; nt + 2];
    let mut tmp = vec![0.0; kf];

    for n in (1..nn).rev() {
        // Values at level n are in `cur`; the z̃ = 0 row at level n:
        let v0_n = if n < nt + 1 { 1.0 } else { 0.0 };
        // Unknown rows are j = 1..=Nt-m at level m; the rest is the zero wedge.
        let active_n = nt.saturating_sub(n);
        let active = nt + 1 - n;

        for j in 1..=active {
            let row = &mut rhs[j];
            if j <= active_n {
                let vj = &cur[j];
                for k in 0..nx {
                    let below = if j == 1 { v0_n } else { cur[j - 1][k] };
                    let above = if j < active_n { cur[j + 1][k] } else { 0.0 };
                    let g = op.apply_a(vj, k) + op.gam[k] * (above - below);
                    row[k] = vj[k] - h * g;
                }
            } else {
                row.iter_mut().for_each(|r| *r = 0.0);
            }
            if j == 1 {
                // v_{i0}^{n-1} = 1 enters through the -Γ block.
                for k in 0..nx {
                    row[k] += h * op.gam[k];
                }
            }
            op.lhs.solve_in_place(row);
            for (q, &f) in op.fade.iter().enumerate() {
                b[j][q] = row[f];
            }
        }

        if kf > 0 {
            for j in 1..=active {
                if j == 1 {
                    y[1].copy_from_slice(&b[1]);
                } else {
                    matvec(&op.fwd[j - 2], &y[j - 1], &mut tmp);
                    for q in 0..kf {
                        y[j][q] = b[j][q] + tmp[q];
                    }
                }
            }
            for j in (1..=active).rev() {
                let mut r = y[j].clone();
                if j < active {
                    matvec(&op.cs, &u[j + 1], &mut tmp);
                    for q in 0..kf {
                        r[q] -= tmp[q];
                    }
                }
                matvec(&op.m_inv[j - 1], &r, &mut u[j]);
            }
            for j in 1..=active {
                for q in 0..kf {
                    let up = if j < active { u[j + 1][q] } else { 0.0 };
                    let dn = if j > 1 { u[j - 1][q] } else { 0.0 };
                    let s = op.c * op.wgt[q] * (up - dn);
                    if s != 0.0 {
                        for (r, z) in rhs[j].iter_mut().zip(&op.z_cols[q]) {
                            *r -= s * z;
                        }
                    }
                }
            }
        }

        store_level(grid, config, n - 1, active, &rhs)?;
        let m = n - 1;
        for j in 1..=nt {
            for k in 0..nx {
                cur[j][k] = if j <= active { grid.get(m, k + 1, j) } else { 0.0 };
            }
        }
    }
    Ok(())
}

/// `ṽ` at an off-grid point of one time slice: bilinear in `(x, z̃)`.
fn slice_value(g: &ValueFunctionGrid, n: usize, x: f64, zt: f64) -> f64 {
    bilinear(&g.config, |i, j| g.node(n, i, j), x, zt)
}

#[inline]
fn bilinear(c: &KbeGridConfig, node: impl Fn(usize, usize) -> f64, x: f64, zt: f64) -> f64 {
    let (fi, wi) = cell(x / c.dx(), c.nx + 1);
    let (fj, wj) = cell(zt / c.dt(), c.nt + 1);
    let v00 = node(fi, fj);
    if wi == 0.0 && wj == 0.0 {
        return v00;
    }
    let v10 = if wi > 0.0 { node(fi + 1, fj) } else { 0.0 };
    let v01 = if wj > 0.0 { node(fi, fj + 1) } else { 0.0 };
    let v11 = if wi > 0.0 && wj > 0.0 { node(fi + 1, fj + 1) } else { 0.0 };
    let a = (1.0 - wi) * v00 + wi * v10;
    if wj == 0.0 {
        return a;
    }
    let b = (1.0 - wi) * v01 + wi * v11;
    (1.0 - wj) * a + wj * b
}

/// Cell index and fractional weight of `u` on `0..=last`, snapping to nodes.
#[inline]
fn cell(u: f64, last: usize) -> (usize, f64) {
    let r = u.round();
    if (u - r).abs() <= 1e-9 * u.abs().max(1.0) {
        return ((r as usize).min(last), 0.0);
    }
    let f = u.floor();
    let i = f as usize;
    if i >= last {
        return (last, 0.0);
    }
    (i, u - f)
}

/// `v(t, x, z) = ṽ(t, x, w - z)` for the threshold `w`.
pub fn value_at(g: &ValueFunctionGrid, t: f64, x: f64, z: f64, w: f64) -> Result<f64> {
    let c = &g.config;
    let eps = 1e-12 * c.t_final;
    if !(t >= 0.0 && t <= c.t_final) || !(x >= 0.0) || !(z >= 0.0 && z <= t + eps) || !w.is_finite() {
        return Err(Error::domain(
            "value_at",
            format!("need t in [0, T], x >= 0, z in [0, t]; got t={t}, x={x}, z={z}, w={w}"),
        ));
    }
    Ok(value_unchecked(g, t, x, z, w))
}

fn value_unchecked(g: &ValueFunctionGrid, t: f64, x: f64, z: f64, w: f64) -> f64 {
    let c = &g.config;
    let zt = w - z;
    if zt < 0.0 {
        return 1.0;
    }
    if zt >= c.t_final - t {
        return 0.0;
    }
    let x = x.min(c.xb);
    let (n0, wt) = cell(t / c.dt(), c.nt + 1);
    let v0 = slice_value(g, n0, x, zt);
    if wt == 0.0 {
        return v0;
    }
    let v1 = slice_value(g, n0 + 1, x, zt);
    (1.0 - wt) * v0 + wt * v1
}

/// Optimal-control policy for a fixed threshold `w`.
#[derive(Debug, Clone)]
pub struct ControlPolicy {
    pub grid: Arc<ValueFunctionGrid>,
    pub w: f64,
    pub v_floor: f64,
    pub zeta_cap: f64,
}

impl ControlPolicy {
    pub fn new(grid: Arc<ValueFunctionGrid>, w: f64) -> Self {
        Self {
            grid,
            w,
            v_floor: DEFAULT_V_FLOOR,
            zeta_cap: DEFAULT_ZETA_CAP,
        }
    }
}

/// `ζ*(t, x, z) = σ sqrt(2Bx) ∂x log max(v, v_floor)`, clamped to `±zeta_cap`.
pub fn control_at(p: &ControlPolicy, t: f64, x: f64, z: f64) -> Result<f64> {
    value_at(&p.grid, t, x, z, p.w)?;
    Ok(control_unchecked(p, t, x, z))
}

fn control_unchecked(p: &ControlPolicy, t: f64, x: f64, z: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let c = &p.grid.config;
    let h = c.dx();
    let lo = (x - h).max(0.0);
    let hi = (x + h).min(c.xb);
    if hi <= lo {
        return 0.0;
    }
    let vl = value_unchecked(&p.grid, t, lo, z, p.w).max(p.v_floor);
    let vh = value_unchecked(&p.grid, t, hi, z, p.w).max(p.v_floor);
    let d = (vh.ln() - vl.ln()) / (hi - lo);
    let zeta = c.sigma * (2.0 * c.b * x).sqrt() * d;
    zeta.clamp(-p.zeta_cap, p.zeta_cap)
}

impl Control for ControlPolicy {
    #[inline]
    fn zeta(&self, t: f64, x: f64, z: f64) -> f64 {
        control_unchecked(self, t, x, z)
    }
}
