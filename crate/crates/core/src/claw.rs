//! Scalar conservation laws `u_t + f(u)_x = 0` with polynomial flux:
//! a Godunov finite-volume solver, the flux-derived gauge
//! `Ψ(x) = Φ(x/2)·x`, polynomial degeneracy, and entropy bounds for the
//! set of solutions at time `T`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::log2_5e;
use crate::gauge::{gauge_check, Gauge, GaugeError, GaugeReport};
use crate::variation::{tv_psi_sequence, RealLine, StepFunction, VariationError};

/// Cells with `|u|` above this count as support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;
/// Largest accepted CFL number.
pub const MAX_CFL: f64 = 0.9;
/// Points per window in the inner minimax of the affine gap.
pub const GAP_SUBGRID: usize = 512;
/// Cap on samples fed to the `O(n²)` variation DP.
pub const TV_SAMPLE_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClawError {
    #[error("state {u} outside [-{m}, {m}]")]
    OutOfRange { u: f64, m: f64 },
    #[error("CFL number {0} outside (0, 0.9]")]
    UnstableConfig(f64),
    #[error("grid covers [{have_lo}, {have_hi}] but the solution may reach [-{need}, {need}]")]
    DomainTooSmall {
        need: f64,
        have_lo: f64,
        have_hi: f64,
    },
    #[error("flux gauge vanishes on the whole grid (flux affine on a full window)")]
    GaugeDegenerate,
    #[error("f'' vanishes identically; degeneracy is infinite")]
    InfiniteDegeneracy,
    #[error("unknown flux {0:?} (expected burgers, cubic, quartic or poly:<c0,c1,...>)")]
    UnknownFlux(String),
    #[error("supplied derivative disagrees with finite differences at u = {u}")]
    DerivativeMismatch { u: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Variation(#[from] VariationError),
}

pub type Result<T> = std::result::Result<T, ClawError>;

/// Real polynomial, coefficients in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn nth_derivative(&self, n: usize) -> Polynomial {
        (0..n).fold(self.clone(), |p, _| p.derivative())
    }

    /// Size of the terms at `x`, the yardstick for "numerically zero".
    fn scale(&self, x: f64) -> f64 {
        let ax = x.abs().max(1.0);
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * ax.powi(k as i32))
            .sum()
    }

    fn near_zero(&self, x: f64) -> bool {
        self.eval(x).abs() <= 1e-12 * self.scale(x)
    }

    /// Real roots in `[lo, hi]`, each listed once. Critical points (roots of
    /// the derivative, found recursively) split the range into monotone
    /// pieces; sign changes are bisected and critical points where the
    /// polynomial is numerically zero are multiple roots.
    pub fn roots_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self.degree() {
            None | Some(0) => return Vec::new(),
            Some(1) => {
                let r = -self.coeffs[0] / self.coeffs[1];
                return if (lo..=hi).contains(&r) {
                    vec![r]
                } else {
                    Vec::new()
                };
            }
            _ => {}
        }
        let mut marks = vec![lo];
        marks.extend(self.derivative().roots_in(lo, hi));
        marks.push(hi);
        let mut roots: Vec<f64> = Vec::new();
        for &c in &marks {
            if self.near_zero(c) {
                roots.push(c);
            }
        }
        for w in marks.windows(2) {
            let (mut a, mut b) = (w[0], w[1]);
            let (fa, fb) = (self.eval(a), self.eval(b));
            if self.near_zero(a) || self.near_zero(b) || fa.signum() == fb.signum() {
                continue;
            }
            let up = fa < 0.0;
            loop {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if (self.eval(mid) < 0.0) == up {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
        roots
    }
}

/// Flux `f` on the state range `[-M, M]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flux {
    pub name: String,
    pub poly: Polynomial,
    d1: Polynomial,
    d2: Polynomial,
    /// `M`.
    pub m: f64,
    /// Critical points of `f` in `[-M, M]`.
    critical: Vec<f64>,
    /// `f'_M = sup_{|v|≤M} |f'(v)|`.
    pub speed: f64,
}

impl Flux {
    pub fn new(name: impl Into<String>, poly: Polynomial, m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(ClawError::InvalidParameter(format!("M = {m}")));
        }
        let d1 = poly.derivative();
        let d2 = d1.derivative();
        let critical = d1.roots_in(-m, m);
        // |f'| peaks at an endpoint or where f'' = 0.
        let mut cands = vec![-m, m];
        cands.extend(d2.roots_in(-m, m));
        let speed = cands.iter().map(|&v| d1.eval(v).abs()).fold(0.0, f64::max);
        Ok(Flux {
            name: name.into(),
            poly,
            d1,
            d2,
            m,
            critical,
            speed,
        })
    }

    pub fn burgers(m: f64) -> Result<Self> {
        Flux::new("burgers", Polynomial::new(vec![0.0, 0.0, 0.5]), m)
    }

    pub fn cubic(m: f64) -> Result<Self> {
        Flux::new("cubic", Polynomial::new(vec![0.0, 0.0, 0.0, 1.0 / 3.0]), m)
    }

    pub fn quartic(m: f64) -> Result<Self> {
        Flux::new(
            "quartic",
            Polynomial::new(vec![0.0, 0.0, 0.0, 0.0, 0.25]),
            m,
        )
    }

    /// `burgers`, `cubic`, `quartic` or `poly:c0,c1,...` (ascending).
    pub fn parse(token: &str, m: f64) -> Result<Self> {
        match token {
            "burgers" => Flux::burgers(m),
            "cubic" => Flux::cubic(m),
            "quartic" => Flux::quartic(m),
            _ => {
                let body = token
                    .strip_prefix("poly:")
                    .ok_or_else(|| ClawError::UnknownFlux(token.into()))?;
                let coeffs = body
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| ClawError::UnknownFlux(token.into()))?;
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(ClawError::UnknownFlux(token.into()));
                }
                Flux::new(token, Polynomial::new(coeffs), m)
            }
        }
    }

    pub fn f(&self, u: f64) -> f64 {
        self.poly.eval(u)
    }

    pub fn df(&self, u: f64) -> f64 {
        self.d1.eval(u)
    }

    pub fn d2f(&self, u: f64) -> f64 {
        self.d2.eval(u)
    }

    /// Compares `f'` and `f''` with central differences on `samples` points
    /// of `[-M, M]` (relative tolerance 1e-6).
    pub fn check_derivatives(&self, samples: usize) -> Result<()> {
        let step = 1e-4 * self.m;
        for k in 0..=samples {
            let u = -self.m + 2.0 * self.m * k as f64 / samples as f64;
            let fd1 = (self.f(u + step) - self.f(u - step)) / (2.0 * step);
            let fd2 = (self.df(u + step) - self.df(u - step)) / (2.0 * step);
            let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-6 * scale.max(1.0);
            if !close(fd1, self.df(u), self.speed) || !close(fd2, self.d2f(u), self.d2.scale(u)) {
                return Err(ClawError::DerivativeMismatch { u });
            }
        }
        Ok(())
    }

    /// Whether `f'' ≠ 0` somewhere in each of `cells` equal subintervals of
    /// `[-M, M]` (probed at three interior points per cell).
    pub fn is_weakly_genuinely_nonlinear(&self, cells: usize) -> bool {
        let w = 2.0 * self.m / cells as f64;
        (0..cells).all(|c| {
            let a = -self.m + c as f64 * w;
            [0.25, 0.5, 0.75]
                .iter()
                .any(|t| !self.d2.near_zero(a + t * w))
        })
    }

    fn check_state(&self, u: f64) -> Result<()> {
        if !(u.abs() <= self.m * (1.0 + 1e-12)) {
            return Err(ClawError::OutOfRange { u, m: self.m });
        }
        Ok(())
    }
}

/// `min_{[ul, ur]} f` if `ul ≤ ur`, else `max_{[ur, ul]} f`.
pub fn godunov_flux(flux: &Flux, ul: f64, ur: f64) -> Result<f64> {
    flux.check_state(ul)?;
    flux.check_state(ur)?;
    Ok(godunov_unchecked(flux, ul, ur))
}

fn godunov_unchecked(flux: &Flux, ul: f64, ur: f64) -> f64 {
    if ul == ur {
        return flux.f(ul);
    }
    let (a, b) = if ul < ur { (ul, ur) } else { (ur, ul) };
    let inner = flux
        .critical
        .iter()
        .filter(|&&c| c > a && c < b)
        .map(|&c| flux.f(c));
    let mut vals = [flux.f(a), flux.f(b)].into_iter().chain(inner);
    let first = vals.next().unwrap();
    if ul < ur {
        vals.fold(first, f64::min)
    } else {
        vals.fold(first, f64::max)
    }
}

/// Cell averages on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellData {
    pub x_left: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl CellData {
    /// Zero data on a grid symmetric about 0 covering `[-half_width, half_width]`.
    pub fn zeros(half_width: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0 && half_width > 0.0 && dx.is_finite() && half_width.is_finite()) {
            return Err(ClawError::InvalidParameter(format!(
                "half width {half_width}, dx {dx}"
            )));
        }
        let n = (2.0 * half_width / dx).ceil() as usize;
        Ok(CellData {
            x_left: -(n as f64) * dx / 2.0,
            dx,
            values: vec![0.0; n],
        })
    }

    /// Grid wide enough for data supported in `[-L, L]` evolved to time `T`.
    pub fn padded(l: f64, t: f64, flux: &Flux, dx: f64) -> Result<Self> {
        CellData::zeros(l + t * flux.speed + 8.0 * dx, dx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x_right(&self) -> f64 {
        self.x_left + self.values.len() as f64 * self.dx
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_left + (i as f64 + 0.5) * self.dx
    }

    /// Replaces the values by cell averages of the step function equal to
    /// `values[k]` on `[breaks[k], breaks[k+1])` and 0 elsewhere.
    pub fn fill_step(&mut self, breaks: &[f64], values: &[f64]) -> Result<()> {
        if breaks.len() != values.len() + 1 || breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ClawError::InvalidParameter(
                "step data needs increasing breaks, one more than values".into(),
            ));
        }
        let (x0, dx) = (self.x_left, self.dx);
        for (i, cell) in self.values.iter_mut().enumerate() {
            let (a, b) = (x0 + i as f64 * dx, x0 + (i + 1) as f64 * dx);
            let mut acc = 0.0;
            for (k, &v) in values.iter().enumerate() {
                let overlap = b.min(breaks[k + 1]) - a.max(breaks[k]);
                if overlap > 0.0 {
                    acc += v * overlap;
                }
            }
            *cell = acc / dx;
        }
        Ok(())
    }

    /// Reads `x,u` rows (value `u_k` on `[x_k, x_{k+1})`; the last row only
    /// closes the range) and averages onto this grid.
    pub fn fill_csv(&mut self, text: &str) -> Result<()> {
        let mut xs = Vec::new();
        let mut us = Vec::new();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ClawError::InvalidParameter(e.to_string()))?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| {
                        ClawError::InvalidParameter(format!("bad initial-data row {:?}", rec))
                    })
            };
            xs.push(parse(0)?);
            us.push(parse(1)?);
        }
        if xs.len() < 2 {
            return Err(ClawError::InvalidParameter(
                "initial data needs at least two rows".into(),
            ));
        }
        us.pop();
        self.fill_step(&xs, &us)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }

    pub fn tv(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Smallest symmetric half-width containing every cell above the
    /// support threshold (0 for zero data).
    pub fn support_radius(&self) -> f64 {
        (0..self.len())
            .filter(|&i| self.values[i].abs() > SUPPORT_THRESHOLD)
            .map(|i| {
                let a = self.x_left + i as f64 * self.dx;
                a.abs().max((a + self.dx).abs())
            })
            .fold(0.0, f64::max)
    }

    /// The data restricted to `[lo, hi]` and shifted to start at 0.
    pub fn window(&self, lo: f64, hi: f64) -> Result<StepFunction<f64>> {
        if !(lo < hi) {
            return Err(ClawError::InvalidParameter(format!("window [{lo}, {hi}]")));
        }
        let mut breaks = vec![0.0];
        let mut values = Vec::new();
        for (i, &v) in self.values.iter().enumerate() {
            let a = (self.x_left + i as f64 * self.dx).max(lo);
            let b = (self.x_left + (i + 1) as f64 * self.dx).min(hi);
            if b > a {
                values.push(v);
                breaks.push(b - lo);
            }
        }
        if values.is_empty() {
            return Ok(StepFunction::constant(hi - lo, 0.0)?);
        }
        *breaks.last_mut().unwrap() = hi - lo;
        // Zero outside the grid.
        if self.x_left > lo {
            breaks.insert(1, self.x_left - lo);
            values.insert(0, 0.0);
        }
        if self.x_right() < hi {
            let n = breaks.len();
            breaks[n - 1] = self.x_right() - lo;
            breaks.push(hi - lo);
            values.push(0.0);
        }
        Ok(StepFunction::new(hi - lo, breaks, values)?)
    }

    /// `x,u` CSV at cell centers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,u\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.center(i), v);
        }
        out
    }
}

/// State at time `T` with the diagnostics gathered while stepping.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSolution {
    pub cells: CellData,
    pub time: f64,
    pub steps: usize,
    pub dt: f64,
    pub initial_mass: f64,
    pub initial_sup: f64,
    pub initial_tv: f64,
    /// Largest single-step increase of the cell total variation.
    pub max_tv_increase: f64,
}

impl GridSolution {
    pub fn mass(&self) -> f64 {
        self.cells.mass()
    }

    pub fn dx(&self) -> f64 {
        self.cells.dx
    }

    pub fn max_principle_holds(&self) -> bool {
        self.cells.sup() <= self.initial_sup * (1.0 + 1e-12)
    }

    /// `|mass(T) − mass(0)| ≤ 1e−10·(1 + |mass(0)|)`.
    pub fn mass_conserved(&self) -> bool {
        (self.mass() - self.initial_mass).abs() <= 1e-10 * (1.0 + self.initial_mass.abs())
    }

    /// No step increased the total variation beyond rounding.
    pub fn tv_diminishing(&self) -> bool {
        self.max_tv_increase <= 1e-12 * (1.0 + self.initial_tv)
    }
}

/// Explicit conservative Godunov scheme up to time `T` with
/// `Δt ≤ cfl·Δx/f'_M` (the last step shortened to land on `T`).
pub fn evolve(u0: &CellData, flux: &Flux, t_final: f64, cfl: f64) -> Result<GridSolution> {
    if !(cfl > 0.0 && cfl <= MAX_CFL) {
        return Err(ClawError::UnstableConfig(cfl));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(ClawError::InvalidParameter(format!("T = {t_final}")));
    }
    if u0.is_empty() {
        return Err(ClawError::InvalidParameter("empty grid".into()));
    }
    for &u in &u0.values {
        flux.check_state(u)?;
    }
    let dx = u0.dx;
    let reach = u0.support_radius() + t_final * flux.speed + 2.0 * dx;
    if u0.x_left > -reach || u0.x_right() < reach {
        return Err(ClawError::DomainTooSmall {
            need: reach,
            have_lo: u0.x_left,
            have_hi: u0.x_right(),
        });
    }
    let steps = if t_final == 0.0 {
        0
    } else if flux.speed == 0.0 {
        1
    } else {
        (t_final * flux.speed / (cfl * dx)).ceil().max(1.0) as usize
    };
    let dt = if steps == 0 {
        0.0
    } else {
        t_final / steps as f64
    };
    let lambda = dt / dx;
    let mut u = u0.values.clone();
    let n = u.len();
    let mut fluxes = vec![0.0; n + 1];
    let initial_tv = u0.tv();
    let mut tv_prev = initial_tv;
    let mut max_tv_increase = 0.0f64;
    for _ in 0..steps {
        // Outflow ghosts: copy the boundary cells.
        fluxes[0] = godunov_unchecked(flux, u[0], u[0]);
        fluxes[n] = godunov_unchecked(flux, u[n - 1], u[n - 1]);
        for i in 1..n {
            fluxes[i] = godunov_unchecked(flux, u[i - 1], u[i]);
        }
        for i in 0..n {
            u[i] -= lambda * (fluxes[i + 1] - fluxes[i]);
        }
        let tv: f64 = u.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        max_tv_increase = max_tv_increase.max(tv - tv_prev);
        tv_prev = tv;
    }
    Ok(GridSolution {
        cells: CellData {
            x_left: u0.x_left,
            dx,
            values: u,
        },
        time: t_final,
        steps,
        dt,
        initial_mass: u0.mass(),
        initial_sup: u0.sup(),
        initial_tv,
        max_tv_increase,
    })
}

/// `ℓ = L + T·f'_M`.
pub fn ell(l: f64, t: f64, flux: &Flux) -> f64 {
    l + t * flux.speed
}

/// Whether every cell above the threshold lies in `[−ℓ−2Δx, ℓ+2Δx]`.
pub fn support_check(sol: &GridSolution, l: f64, t: f64, flux: &Flux) -> bool {
    sol.cells.support_radius() <= ell(l, t, flux) + 2.0 * sol.dx() * (1.0 + 1e-12)
}

/// Best uniform affine approximation error of `f` on `[a, a+h]`, over a
/// `GAP_SUBGRID`-point subgrid. For a slope `s` the best intercept gives
/// error `(max(f − s·x) − min(f − s·x))/2`, which is convex in `s`.
fn window_gap(flux: &Flux, a: f64, h: f64) -> f64 {
    let mid = a + 0.5 * h;
    let pts: Vec<(f64, f64)> = (0..GAP_SUBGRID)
        .map(|k| {
            let x = a + h * k as f64 / (GAP_SUBGRID - 1) as f64;
            (x - mid, flux.f(x))
        })
        .collect();
    let spread = |s: f64| {
        let (lo, hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                let r = y - s * x;
                (lo.min(r), hi.max(r))
            });
        0.5 * (hi - lo)
    };
    let (mut lo, mut hi) =
        pts.windows(2)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
                let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                (lo.min(s), hi.max(s))
            });
    if hi - lo <= 0.0 {
        return spread(lo);
    }
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (spread(m1), spread(m2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = spread(m1);
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = spread(m2);
        }
    }
    f1.min(f2).min(spread(0.5 * (lo + hi)))
}

/// `𝔡(h) = min_{a ∈ [−M, M−h]} inf_{g affine} ‖f − g‖_{L∞[a,a+h]}`: a
/// 33-point search over `a`, then a golden-section refinement around the best
/// point. Inner errors use [`GAP_SUBGRID`] points per window.
pub fn affine_gap(flux: &Flux, h: f64) -> Result<f64> {
    let m = flux.m;
    if !(h > 0.0 && h <= 2.0 * m * (1.0 + 1e-12)) {
        return Err(ClawError::InvalidParameter(format!(
            "h = {h} outside (0, 2M]"
        )));
    }
    let h = h.min(2.0 * m);
    let span = (m - h) - (-m);
    if span <= 0.0 {
        return Ok(window_gap(flux, -m, h));
    }
    const COARSE: usize = 33;
    let a_at = |k: usize| -m + span * k as f64 / (COARSE - 1) as f64;
    let coarse: Vec<f64> = (0..COARSE).map(|k| window_gap(flux, a_at(k), h)).collect();
    let (best_k, mut best) =
        coarse.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc },
        );
    let step = span / (COARSE - 1) as f64;
    let (mut lo, mut hi) = (
        (a_at(best_k) - step).max(-m),
        (a_at(best_k) + step).min(m - h),
    );
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        let (f1, f2) = (window_gap(flux, m1, h), window_gap(flux, m2, h));
        best = best.min(f1).min(f2);
        if f1 <= f2 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(best)
}

/// Lower convex hull of points sorted by abscissa (monotone chain).
pub fn lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

fn hull_eval(hull: &[(f64, f64)], x: f64) -> f64 {
    let j = hull.partition_point(|p| p.0 < x);
    if j == 0 {
        return hull[0].1;
    }
    if j == hull.len() {
        return hull[hull.len() - 1].1;
    }
    let (a, b) = (hull[j - 1], hull[j]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Affine gap, its convex envelope and the derived gauge on an `h` grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxGauge {
    pub h: Vec<f64>,
    /// `𝔡(h)`.
    pub gap: Vec<f64>,
    /// `Φ(h)`, the lower convex envelope anchored at `Φ(0) = 0`.
    pub phi: Vec<f64>,
    /// Knots `x = 2h` and values `Ψ(x) = Φ(x/2)·x`, with `(0, 0)` first.
    pub psi_x: Vec<f64>,
    pub psi: Vec<f64>,
    pub subgrid: usize,
    pub certificate: GaugeReport,
}

impl FluxGauge {
    pub fn gauge(&self) -> Gauge {
        Gauge::tabulated(self.psi_x.clone(), self.psi.clone())
            .expect("knots validated at construction")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,gap,phi,x,psi\n");
        for k in 0..self.h.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.h[k],
                self.gap[k],
                self.phi[k],
                self.psi_x[k + 1],
                self.psi[k + 1]
            );
        }
        out
    }
}

/// `k·2M/n` for `k = 1..=n`.
pub fn default_h_grid(m: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| 2.0 * m * k as f64 / n as f64).collect()
}

/// Tabulates `𝔡`, takes its lower convex envelope `Φ` through `(0, 0)`,
/// sets `Ψ(x) = Φ(x/2)·x` and runs [`gauge_check`] on the knots.
pub fn flux_gauge(flux: &Flux, h_grid: &[f64]) -> Result<FluxGauge> {
    let ok = !h_grid.is_empty()
        && h_grid[0] > 0.0
        && h_grid.windows(2).all(|w| w[0] < w[1])
        && h_grid[h_grid.len() - 1] <= 2.0 * flux.m * (1.0 + 1e-12);
    if !ok {
        return Err(ClawError::InvalidParameter(
            "h grid must increase within (0, 2M]".into(),
        ));
    }
    let gap = h_grid
        .par_iter()
        .map(|&h| affine_gap(flux, h))
        .collect::<Result<Vec<f64>>>()?;
    let scale = flux.poly.scale(flux.m);
    if gap.iter().all(|&g| g <= 1e-14 * scale) {
        return Err(ClawError::GaugeDegenerate);
    }
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(h_grid.iter().copied().zip(gap.iter().copied()));
    let hull = lower_hull(&pts);
    let phi: Vec<f64> = h_grid.iter().map(|&h| hull_eval(&hull, h)).collect();
    let mut psi_x = vec![0.0];
    let mut psi = vec![0.0];
    for (&h, &p) in h_grid.iter().zip(&phi) {
        psi_x.push(2.0 * h);
        psi.push(p * 2.0 * h);
    }
    let gauge = Gauge::tabulated(psi_x.clone(), psi.clone())?;
    let certificate = gauge_check(&gauge, &psi_x)?;
    Ok(FluxGauge {
        h: h_grid.to_vec(),
        gap,
        phi,
        psi_x,
        psi,
        subgrid: GAP_SUBGRID,
        certificate,
    })
}

/// Inflection set and polynomial degeneracy of a flux on `[-M, M]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegeneracyReport {
    /// Points `w` with `f''(w) = 0` and their orders `p_w`.
    pub points: Vec<(f64, u32)>,
    /// `max p_w`, or `None` when `f''` has no zero (uniformly convex or concave).
    pub p_f: Option<u32>,
}

/// Roots of `f''` in `[-M, M]` and, at each, the least `p ≥ 2` with
/// `f^{(p+1)}(w) ≠ 0`.
pub fn degeneracy(flux: &Flux) -> Result<DegeneracyReport> {
    let d2 = flux.poly.nth_derivative(2);
    if d2.is_zero() {
        return Err(ClawError::InfiniteDegeneracy);
    }
    let mut points = Vec::new();
    for w in d2.roots_in(-flux.m, flux.m) {
        let order = (3..)
            .map(|j| (j, flux.poly.nth_derivative(j)))
            .take_while(|(_, p)| !p.is_zero())
            .find(|(_, p)| !p.near_zero(w))
            .map(|(j, _)| j as u32 - 1)
            .ok_or(ClawError::InfiniteDegeneracy)?;
        points.push((w, order));
    }
    let p_f = points.iter().map(|p| p.1).max();
    Ok(DegeneracyReport { points, p_f })
}

/// `3·log₂5 + log₂(5e)`.
pub fn euclidean_constant() -> f64 {
    3.0 * 5f64.log2() + log2_5e()
}

/// `log₂(16M(L + T·f'_M)/ε + 1) + 2[3log₂5 + log₂(5e)]·γ(1 + 1/T)/Ψ(ε/(4L + 4T·f'_M))`.
pub fn solution_entropy_bound(
    eps: f64,
    l: f64,
    m: f64,
    t: f64,
    speed: f64,
    gauge: &Gauge,
    gamma_lm: f64,
) -> f64 {
    let ell = l + t * speed;
    (16.0 * m * ell / eps + 1.0).log2()
        + 2.0 * euclidean_constant() * gamma_lm * (1.0 + 1.0 / t) / gauge.eval(eps / (4.0 * ell))
}

/// `Γ/ε^{p_f} + log₂(16(L + T·f'_M)M/ε + 1)` with
/// `Γ = 2^{2p_f+1}[3log₂5 + log₂(5e)]·γ̃·(L + T·f'_M)^{p_f}·(1 + 1/T)`.
pub fn degeneracy_entropy_bound(
    eps: f64,
    l: f64,
    m: f64,
    t: f64,
    speed: f64,
    p_f: u32,
    gamma_tilde: f64,
) -> f64 {
    let ell = l + t * speed;
    let p = p_f as f64;
    let big_gamma = 2f64.powf(2.0 * p + 1.0)
        * euclidean_constant()
        * gamma_tilde
        * ell.powf(p)
        * (1.0 + 1.0 / t);
    big_gamma / eps.powf(p) + (16.0 * ell * m / eps + 1.0).log2()
}

/// `2L'·Ψ⁻¹(V/4)` with `L' = 2ℓ` and `V = γ(1 + 1/T)`: the accuracy range
/// inherited from the variation-class bound.
pub fn solution_epsilon_cap(l: f64, t: f64, speed: f64, gauge: &Gauge, gamma_lm: f64) -> f64 {
    let ell = l + t * speed;
    4.0 * ell * gauge.inverse(gamma_lm * (1.0 + 1.0 / t) / 4.0)
}

/// `Ψ`-variation of cell data, thinned uniformly to at most
/// [`TV_SAMPLE_CAP`] samples.
pub fn cell_tv_psi(cells: &CellData, gauge: &Gauge) -> (f64, usize) {
    let stride = cells.len().div_ceil(TV_SAMPLE_CAP).max(1);
    let samples: Vec<f64> = cells.values.iter().step_by(stride).copied().collect();
    (tv_psi_sequence(&samples, &RealLine, gauge).value, stride)
}

/// Random step data: `pieces` equal cells of `[-L, L]` with values uniform
/// in `[-M, M]`.
pub fn random_initial_data(
    l: f64,
    m: f64,
    pieces: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let breaks = (0..=pieces)
        .map(|k| -l + 2.0 * l * k as f64 / pieces as f64)
        .collect();
    let values = (0..pieces).map(|_| rng.gen_range(-m..=m)).collect();
    (breaks, values)
}

/// Measured `TV^Ψ(u(T))` over a seeded ensemble of initial data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub tv_values: Vec<f64>,
    pub max_tv: f64,
    /// `max TV^Ψ(u(T)) / (1 + 1/T)`.
    pub gamma_lm: f64,
    pub stride: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationConfig {
    pub l: f64,
    pub t: f64,
    pub dx: f64,
    pub cfl: f64,
    pub samples: usize,
    pub pieces: usize,
    pub seed: u64,
}

pub fn calibrate(flux: &Flux, gauge: &Gauge, cfg: &CalibrationConfig) -> Result<Calibration> {
    if cfg.samples == 0 || cfg.pieces == 0 {
        return Err(ClawError::InvalidParameter(
            "calibration needs samples and pieces".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.samples)
        .map(|_| random_initial_data(cfg.l, flux.m, cfg.pieces, &mut rng))
        .collect();
    let results = data
        .par_iter()
        .map(|(b, v)| {
            let mut u0 = CellData::padded(cfg.l, cfg.t, flux, cfg.dx)?;
            u0.fill_step(b, v)?;
            let sol = evolve(&u0, flux, cfg.t, cfg.cfl)?;
            Ok(cell_tv_psi(&sol.cells, gauge))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let tv_values: Vec<f64> = results.iter().map(|r| r.0).collect();
    let max_tv = tv_values.iter().copied().fold(0.0, f64::max);
    let stride = results.iter().map(|r| r.1).max().unwrap_or(1);
    Ok(Calibration {
        gamma_lm: max_tv / (1.0 + 1.0 / cfg.t),
        tv_values,
        max_tv,
        stride,
        seed: cfg.seed,
    })
}
