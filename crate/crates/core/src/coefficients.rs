//! Coefficient fields `a^{ij}(x)`: construction, mollification, ball
//! averages and ellipticity checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{read_channels, write_channels, Grid, Point};

/// Relative slack when checking eigenvalues against declared bounds.
const BOUND_SLACK: f64 = 1e-12;

/// Symmetric 2x2 matrix stored as `(a11, a12, a22)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2::new(1.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Sym2 { a11, a12, a22 }
    }

    pub const fn scalar(c: f64) -> Self {
        Sym2::new(c, 0.0, c)
    }

    /// Builds from a full matrix, rejecting asymmetric input.
    pub fn from_rows(rows: [[f64; 2]; 2]) -> Result<Self> {
        let [[a11, a12], [a21, a22]] = rows;
        if (a12 - a21).abs() > 1e-14 * (1.0 + a12.abs().max(a21.abs())) {
            return Err(Error::arg("matrix", format!("not symmetric: a12 = {a12}, a21 = {a21}")));
        }
        Ok(Sym2::new(a11, a12, a22))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a11 + self.a22);
        let rad = (0.5 * (self.a11 - self.a22)).hypot(self.a12);
        (mean - rad, mean + rad)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.a11.abs().max(self.a12.abs()).max(self.a22.abs())
    }

    /// `nu^T A nu`.
    pub fn quadratic_form(&self, nu: Point) -> f64 {
        self.a11 * nu.x * nu.x + 2.0 * self.a12 * nu.x * nu.y + self.a22 * nu.y * nu.y
    }

    pub fn scaled(&self, s: f64) -> Sym2 {
        Sym2::new(self.a11 * s, self.a12 * s, self.a22 * s)
    }

    fn add_scaled(&mut self, other: &Sym2, w: f64) {
        self.a11 += w * other.a11;
        self.a12 += w * other.a12;
        self.a22 += w * other.a22;
    }
}

/// Scalar radial profile `f(r)`, used as `a^{ij}(x) = f(|x|) delta^{ij}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialProfile {
    Constant { value: f64 },
    /// `2` outside `omega`, `(5 + cos(pi s log|log r|)) / 2` inside.
    Oscillating { omega: f64, phase_speed: f64 },
    /// `low` on annuli `2^{-k-1} <= r < 2^{-k}` with `k` even, `high` for odd `k`.
    DyadicSteps { low: f64, high: f64 },
}

impl RadialProfile {
    /// Oscillating profile with inner cutoff `omega` and phase speed `s`.
    ///
    /// The branches must meet continuously, i.e. `s log|log omega|` must be an
    /// odd integer.
    pub fn counterexample(omega: f64, phase_speed: f64) -> Result<Self> {
        if !(omega > 0.0 && omega < (-1.0f64).exp()) {
            return Err(Error::arg("omega", format!("must lie in (0, 1/e), got {omega}")));
        }
        if !(phase_speed >= 1.0) || !phase_speed.is_finite() {
            return Err(Error::arg(
                "phase_speed",
                format!("must be at least 1, got {phase_speed}"),
            ));
        }
        let inner = 0.5 * (5.0 + (PI * phase_speed * log_abs_log(omega)).cos());
        if (inner - 2.0).abs() > 1e-12 {
            return Err(Error::arg(
                "omega",
                format!("junction is discontinuous: inner branch gives {inner} at omega"),
            ));
        }
        Ok(RadialProfile::Oscillating { omega, phase_speed })
    }

    /// Cutoff radius at which the phase `s log|log r|` equals the odd integer `m`.
    pub fn junction_radius(phase_speed: f64, m: u32) -> Result<f64> {
        if m % 2 == 0 || m == 0 {
            return Err(Error::arg("m", format!("junction phase must be odd, got {m}")));
        }
        Ok((-(m as f64 / phase_speed).exp()).exp())
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Constant { value } => value,
            RadialProfile::Oscillating { omega, phase_speed } => {
                if r >= omega {
                    2.0
                } else {
                    0.5 * (5.0 + (PI * phase_speed * log_abs_log(r)).cos())
                }
            }
            RadialProfile::DyadicSteps { low, high } => {
                if dyadic_level(r) % 2 == 0 {
                    low
                } else {
                    high
                }
            }
        }
    }

    /// `f'(r)`, or `None` where the profile is not differentiable.
    pub fn derivative(&self, r: f64) -> Option<f64> {
        match *self {
            RadialProfile::Constant { .. } => Some(0.0),
            RadialProfile::Oscillating { omega, phase_speed } => {
                if r >= omega {
                    Some(0.0)
                } else {
                    let s = phase_speed;
                    // d/dr log|log r| = 1 / (r log r) for 0 < r < 1
                    Some(-0.5 * PI * s * (PI * s * log_abs_log(r)).sin() / (r * r.ln()))
                }
            }
            RadialProfile::DyadicSteps { .. } => {
                let l = -r.log2();
                if (l - l.round()).abs() < 1e-12 {
                    None
                } else {
                    Some(0.0)
                }
            }
        }
    }

    /// Whether the profile is `C^1` on `(0, R]`.
    pub fn is_continuously_differentiable(&self) -> bool {
        !matches!(self, RadialProfile::DyadicSteps { low, high } if low != high)
    }

    /// Radii in `[r_min, r_max]` where the profile jumps.
    pub fn jump_radii(&self, r_min: f64, r_max: f64) -> Vec<f64> {
        match self {
            RadialProfile::DyadicSteps { low, high } if low != high => {
                let mut out = Vec::new();
                let mut k = (-r_max.log2()).ceil() as i32;
                loop {
                    let r = 2f64.powi(-k);
                    if r < r_min {
                        break;
                    }
                    if r <= r_max {
                        out.push(r);
                    }
                    k += 1;
                }
                out
            }
            _ => Vec::new(),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            RadialProfile::Constant { value } => (value, value),
            RadialProfile::Oscillating { .. } => (2.0, 3.0),
            RadialProfile::DyadicSteps { low, high } => (low.min(high), low.max(high)),
        }
    }

    /// Value of the constant innermost branch, if the profile has one.
    pub fn inner_constant(&self) -> Option<f64> {
        match *self {
            RadialProfile::Constant { value } => Some(value),
            _ => None,
        }
    }
}

fn log_abs_log(r: f64) -> f64 {
    r.ln().abs().ln()
}

fn dyadic_level(r: f64) -> i64 {
    (-r.log2()).floor() as i64
}

/// Per-cell symmetric matrices with declared ellipticity bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    grid: Grid,
    entries: Vec<Sym2>,
    lower: f64,
    upper: f64,
}

impl CoefficientField {
    /// Validates the entries against `[lower, upper]`.
    pub fn new(grid: Grid, entries: Vec<Sym2>, lower: f64, upper: f64) -> Result<Self> {
        if entries.len() != grid.len() {
            return Err(Error::arg("entries", "one matrix per cell required"));
        }
        if !(lower > 0.0) || lower > upper {
            return Err(Error::arg(
                "bounds",
                format!("need 0 < lower <= upper, got [{lower}, {upper}]"),
            ));
        }
        let report = ellipticity_of_entries(&entries)?;
        let slack = BOUND_SLACK * upper;
        if report.min_eigenvalue < lower - slack || report.max_eigenvalue > upper + slack {
            let value = if report.min_eigenvalue < lower - slack {
                report.min_eigenvalue
            } else {
                report.max_eigenvalue
            };
            return Err(Error::OutOfBounds { value, lower, upper });
        }
        Ok(CoefficientField {
            grid,
            entries,
            lower,
            upper,
        })
    }

    /// Bounds taken from the observed eigenvalues.
    pub fn from_entries(grid: Grid, entries: Vec<Sym2>) -> Result<Self> {
        let r = ellipticity_of_entries(&entries)?;
        CoefficientField::new(grid, entries, r.min_eigenvalue, r.max_eigenvalue)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entries(&self) -> &[Sym2] {
        &self.entries
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Sym2 {
        self.entries[idx]
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries
            .iter()
            .map(Sym2::max_abs_entry)
            .fold(0.0, f64::max)
    }

    /// Three-channel text persistence (`a11 a12 a22` per row).
    pub fn to_text(&self) -> String {
        let a11: Vec<f64> = self.entries.iter().map(|m| m.a11).collect();
        let a12: Vec<f64> = self.entries.iter().map(|m| m.a12).collect();
        let a22: Vec<f64> = self.entries.iter().map(|m| m.a22).collect();
        write_channels(&self.grid, &[&a11, &a12, &a22])
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (grid, ch) = read_channels(text)?;
        if ch.len() != 3 {
            return Err(Error::Format(format!("expected 3 channels, found {}", ch.len())));
        }
        let entries = (0..grid.len())
            .map(|k| Sym2::new(ch[0][k], ch[1][k], ch[2][k]))
            .collect();
        CoefficientField::from_entries(grid, entries)
    }
}

/// Every cell holds `a`; bounds are its eigenvalues.
pub fn constant_field(grid: Grid, a: Sym2) -> Result<CoefficientField> {
    let (lo, hi) = a.eigenvalues();
    if !(lo > 0.0) {
        return Err(Error::NotElliptic {
            cell: 0,
            eigenvalue: lo,
        });
    }
    CoefficientField::new(grid, vec![a; grid.len()], lo, hi)
}

/// `a^{ij}(x) = f(|x|) delta^{ij}` sampled at cell centers.
pub fn radial_scalar_field(grid: Grid, profile: &RadialProfile) -> Result<CoefficientField> {
    let (lo, hi) = profile.bounds();
    if !(lo > 0.0) {
        return Err(Error::OutOfBounds {
            value: lo,
            lower: f64::MIN_POSITIVE,
            upper: hi,
        });
    }
    let center_value = profile
        .inner_constant()
        .unwrap_or_else(|| profile.value(0.5 * grid.h()));
    let entries = (0..grid.len())
        .map(|k| {
            let r = grid.center_of(k).norm();
            let f = if r > 0.0 { profile.value(r) } else { center_value };
            Sym2::scalar(f)
        })
        .collect::<Vec<_>>();
    if let Some(bad) = entries.iter().find(|m| m.a11 < lo || m.a11 > hi) {
        return Err(Error::OutOfBounds {
            value: bad.a11,
            lower: lo,
            upper: hi,
        });
    }
    CoefficientField::new(grid, entries, lo, hi)
}

/// Normalized quartic bump `(1 - (d/eps)^2)^2` on the cells within `eps`.
pub(crate) fn bump_stencil(h: f64, eps: f64) -> Vec<(isize, isize, f64)> {
    let reach = (eps / h).floor() as isize;
    let mut out = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let d = h * (di as f64).hypot(dj as f64);
            if d < eps {
                let t = 1.0 - (d / eps).powi(2);
                out.push((di, dj, t * t));
            }
        }
    }
    out
}

/// Convolution with the quartic bump of radius `eps`; weights are
/// renormalized where the bump leaves the grid.
pub fn mollify(field: &CoefficientField, eps: f64) -> Result<CoefficientField> {
    let g = *field.grid();
    if !(eps >= g.h() * (1.0 - 1e-12)) {
        return Err(Error::arg("eps", format!("must be at least h = {}, got {eps}", g.h())));
    }
    let stencil = bump_stencil(g.h(), eps);
    let n = g.n_cells() as isize;
    let entries = (0..g.len())
        .map(|k| {
            let (i, j) = g.coords(k);
            let mut acc = Sym2::new(0.0, 0.0, 0.0);
            let mut total = 0.0;
            for &(di, dj, w) in &stencil {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if (0..n).contains(&ii) && (0..n).contains(&jj) {
                    acc.add_scaled(&field.entries[g.index(ii as usize, jj as usize)], w);
                    total += w;
                }
            }
            acc.scaled(1.0 / total)
        })
        .collect();
    // Convex combinations stay inside the original bounds; only rounding can leak.
    let entries = clamp_to_bounds(entries, field.lower, field.upper);
    CoefficientField::new(g, entries, field.lower, field.upper)
}

fn clamp_to_bounds(entries: Vec<Sym2>, lower: f64, upper: f64) -> Vec<Sym2> {
    entries
        .into_iter()
        .map(|m| {
            if m.a12 == 0.0 {
                Sym2::new(m.a11.clamp(lower, upper), 0.0, m.a22.clamp(lower, upper))
            } else {
                m
            }
        })
        .collect()
}

/// Entrywise mean of `a^{ij}` over `B_r(center)`.
pub fn averaged_matrix(field: &CoefficientField, center: Point, r: f64) -> Result<Sym2> {
    let h = field.grid().h();
    if r < 2.0 * h * (1.0 - 1e-12) {
        return Err(Error::arg("r", format!("must be at least 2h = {}, got {r}", 2.0 * h)));
    }
    let cells = field.grid().ball_indices(center, r);
    if cells.is_empty() {
        return Err(Error::arg("r", "ball contains no cells"));
    }
    let mut acc = Sym2::new(0.0, 0.0, 0.0);
    for &k in &cells {
        acc.add_scaled(&field.entries[k], 1.0);
    }
    Ok(acc.scaled(1.0 / cells.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Smallest and largest per-cell eigenvalues; errors on a non-positive one.
pub fn ellipticity_report(field: &CoefficientField) -> Result<EllipticityReport> {
    ellipticity_of_entries(&field.entries)
}

pub fn ellipticity_of_entries(entries: &[Sym2]) -> Result<EllipticityReport> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (cell, m) in entries.iter().enumerate() {
        let (a, b) = m.eigenvalues();
        if !(a > 0.0) {
            return Err(Error::NotElliptic {
                cell,
                eigenvalue: a,
            });
        }
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok(EllipticityReport {
        min_eigenvalue: lo,
        max_eigenvalue: hi,
    })
}
