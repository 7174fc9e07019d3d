//! Mean oscillation of fields over balls, the VMO modulus, and numerical
//! checks of the radial VMO criterion.

use serde::Serialize;

use crate::coefficients::RadialProfile;
use crate::error::{Error, Result};
use crate::grid::{Ball, Grid, Point, ScalarField};
use crate::report::CsvTable;

pub const MIN_BALL_CELLS: f64 = 4.0;
/// Sublattice stride for ball centers.
pub const CENTER_STRIDE: usize = 4;

/// Mean absolute deviation from the ball mean over the cells of `B_r(center)`.
pub fn mean_oscillation(field: &ScalarField, center: Point, r: f64) -> Option<f64> {
    let cells = field.grid().ball_indices(center, r);
    if cells.is_empty() {
        return None;
    }
    let v = field.values();
    let n = cells.len() as f64;
    // Shifting by the first value makes constant fields come out exactly 0.
    let v0 = v[cells[0]];
    let mean = v0 + cells.iter().map(|&k| v[k] - v0).sum::<f64>() / n;
    Some(cells.iter().map(|&k| (v[k] - mean).abs()).sum::<f64>() / n)
}

fn check_radii(grid: &Grid, radii: &[f64]) -> Result<()> {
    for &r in radii {
        if !(r >= MIN_BALL_CELLS * grid.h() * (1.0 - 1e-12)) {
            return Err(Error::arg("radii", format!("radius {r} is below 4h = {}", 4.0 * grid.h())));
        }
    }
    Ok(())
}

/// Largest mean oscillation over the sampled balls that fit in the grid.
/// This is a lower bound for the seminorm restricted to those balls.
pub fn bmo_seminorm(field: &ScalarField, centers: &[Point], radii: &[f64]) -> Result<f64> {
    let grid = field.grid();
    check_radii(grid, radii)?;
    let mut best = 0.0f64;
    for &r in radii {
        for &c in centers {
            if !grid.contains_ball(&Ball::new(c, r)) {
                continue;
            }
            if let Some(m) = mean_oscillation(field, c, r) {
                best = best.max(m);
            }
        }
    }
    Ok(best)
}

/// Cell centers on the stride-4 sublattice.
pub fn sublattice_centers(grid: &Grid) -> Vec<Point> {
    let n = grid.n_cells();
    let mut out = Vec::new();
    for j in (CENTER_STRIDE / 2..n).step_by(CENTER_STRIDE) {
        for i in (CENTER_STRIDE / 2..n).step_by(CENTER_STRIDE) {
            out.push(grid.cell_center(i, j));
        }
    }
    out
}

/// Sublattice centers plus every cell center within `8h` of a circle
/// `|x - origin| = rho` for the given radii.
pub fn radial_sampling_centers(grid: &Grid, origin: Point, circles: &[f64]) -> Vec<Point> {
    let mut out = sublattice_centers(grid);
    let band = 8.0 * grid.h();
    for k in 0..grid.len() {
        let p = grid.center_of(k);
        let d = p.dist(origin);
        if circles.iter().any(|&rho| (d - rho).abs() <= band) {
            out.push(p);
        }
    }
    out
}

/// Radii with their values; `eta_values` are either the VMO modulus or the
/// one-dimensional `psi` curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VmoCurve {
    pub radii: Vec<f64>,
    pub eta_values: Vec<f64>,
}

impl VmoCurve {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["r", "value"]);
        for (r, v) in self.radii.iter().zip(&self.eta_values) {
            t.push_floats(&[*r, *v]);
        }
        t.render()
    }

    /// Least-squares slope of `log value` against `log(1/r)`; negative when
    /// the values shrink with `r`. `None` if any value is not positive.
    pub fn decay_slope(&self) -> Option<f64> {
        let pts: Option<Vec<(f64, f64)>> = self
            .radii
            .iter()
            .zip(&self.eta_values)
            .map(|(&r, &v)| (v > 0.0).then(|| (-(r.ln()), v.ln())))
            .collect();
        log_slope(&pts?)
    }
}

fn log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `eta(r) = sup_{rho <= r} sup_centers osc(B_rho)`, with `rho` running over
/// the listed radii (strictly decreasing, each at least `4h`).
pub fn vmo_modulus(field: &ScalarField, radii: &[f64]) -> Result<VmoCurve> {
    vmo_modulus_with(field, radii, &sublattice_centers(field.grid()))
}

pub fn vmo_modulus_with(field: &ScalarField, radii: &[f64], centers: &[Point]) -> Result<VmoCurve> {
    let grid = field.grid();
    check_radii(grid, radii)?;
    if radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::arg("radii", "must be strictly decreasing"));
    }
    let per_radius: Vec<f64> = radii
        .iter()
        .map(|&r| bmo_seminorm(field, centers, &[r]))
        .collect::<Result<_>>()?;
    let mut eta = vec![0.0; radii.len()];
    let mut running = 0.0f64;
    for k in (0..radii.len()).rev() {
        running = running.max(per_radius[k]);
        eta[k] = running;
    }
    Ok(VmoCurve {
        radii: radii.to_vec(),
        eta_values: eta,
    })
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return None;
        }
        if delta.abs() <= 15.0 * tol {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
        )
    }
    // Start from a few panels so narrow features are not skipped.
    const PANELS: usize = 16;
    let width = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for p in 0..PANELS {
        let (lo, hi) = (a + width * p as f64, a + width * (p + 1) as f64);
        let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let s = width / 6.0 * (flo + 4.0 * fmid + fhi);
        total += step(f, lo, hi, flo, fmid, fhi, s, tol / PANELS as f64, 40)
            .ok_or_else(|| Error::arg("integrand", format!("quadrature failed on [{lo}, {hi}]")))?;
    }
    Ok(total)
}

/// Integrals over `(0, r)` are taken in `u = ln x` down to `x = r e^{-LOG_SPAN}`.
const LOG_SPAN: f64 = 40.0;

/// `int_0^r g(x) dx` computed as `int x g(x) du` with `x = e^u`.
fn integrate_to(g: &dyn Fn(f64) -> f64, r: f64, tol: f64) -> Result<f64> {
    integrate_pieces(g, r, tol, &[])
}

/// As [`integrate_to`], split at the radii in `breaks` where `g` may jump.
/// Piece endpoints are pulled in by a relative `1e-12` in `u` so that `g` is
/// never evaluated on a jump.
fn integrate_pieces(g: &dyn Fn(f64) -> f64, r: f64, tol: f64, breaks: &[f64]) -> Result<f64> {
    let hi = r.ln();
    let lo = hi - LOG_SPAN;
    let mut cuts: Vec<f64> = breaks.iter().map(|b| b.ln()).filter(|&u| u > lo && u < hi).collect();
    cuts.sort_by(f64::total_cmp);
    if cuts.is_empty() {
        return adaptive_simpson(&|u: f64| {
            let x = u.exp();
            x * g(x)
        }, lo, hi, tol);
    }
    let nudge = |u: f64| 1e-12 * u.abs().max(1.0);
    let mut edges = vec![lo];
    edges.extend(cuts);
    edges.push(hi);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0] + nudge(w[0]), w[1] - nudge(w[1]));
        if b <= a {
            continue;
        }
        let share = tol * (b - a) / LOG_SPAN;
        total += adaptive_simpson(&|u: f64| {
            let x = u.exp();
            x * g(x)
        }, a, b, share)?;
    }
    Ok(total)
}

/// `psi(r) = (1/r) int_0^r |f(x) - f_{(0,r)}|^2 dx` for a function on `(0, R]`.
pub fn psi_curve_fn(f: &dyn Fn(f64) -> f64, radii: &[f64]) -> Result<VmoCurve> {
    psi_with_jumps(f, radii, &|_| Vec::new())
}

pub fn psi_curve(profile: &RadialProfile, radii: &[f64]) -> Result<VmoCurve> {
    psi_with_jumps(&|x| profile.value(x), radii, &|r| profile.jump_radii(r * (-LOG_SPAN).exp(), r))
}

fn psi_with_jumps(f: &dyn Fn(f64) -> f64, radii: &[f64], jumps: &dyn Fn(f64) -> Vec<f64>) -> Result<VmoCurve> {
    let mut vals = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r > 0.0) {
            return Err(Error::arg("radii", "must be positive"));
        }
        let breaks = jumps(r);
        // Centered at f(r) so constant profiles give exactly zero.
        let fr = f(r);
        let mean = integrate_pieces(&|x| f(x) - fr, r, 1e-13 * r, &breaks)? / r;
        let dev = integrate_pieces(&|x| (f(x) - fr - mean).powi(2), r, 1e-14 * r, &breaks)? / r;
        vals.push(dev.max(0.0));
    }
    Ok(VmoCurve {
        radii: radii.to_vec(),
        eta_values: vals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConditionStatus {
    /// Identically zero at every sampled radius.
    Vanishes,
    /// The tail envelope decays with the given log-log slope.
    Decays { slope: f64 },
    Fails { reason: String },
    NotEvaluated { reason: String },
}

impl ConditionStatus {
    pub fn holds(&self) -> bool {
        matches!(self, ConditionStatus::Vanishes | ConditionStatus::Decays { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub name: &'static str,
    pub values: Vec<f64>,
    pub status: ConditionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BramantiReport {
    pub radii: Vec<f64>,
    pub differentiable: bool,
    /// `int_0^R f^2`.
    pub l2_integral: Option<f64>,
    pub conditions: Vec<ConditionReport>,
}

impl BramantiReport {
    pub fn all_hold(&self) -> bool {
        self.differentiable && self.conditions.iter().all(|c| c.status.holds())
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Samples per unit of `ln r` when forming tail envelopes.
const ENVELOPE_DENSITY: f64 = 64.0;

/// `S(r) = max |v(x)|` over `x` in `[floor, r]`, sampled densely in `ln x`.
fn tail_envelope(v: &dyn Fn(f64) -> Option<f64>, floor: f64, r: f64) -> Option<f64> {
    let span = (r / floor).ln().max(0.0);
    let n = (span * ENVELOPE_DENSITY).ceil() as usize + 1;
    let mut best = 0.0f64;
    for k in 0..=n {
        let x = floor * (span * k as f64 / n as f64).exp();
        best = best.max(v(x)?.abs());
    }
    Some(best)
}

fn trend(name: &'static str, values: Vec<f64>, envelope: Vec<f64>, radii: &[f64]) -> ConditionReport {
    let status = if values.iter().all(|&v| v == 0.0) && envelope.iter().all(|&v| v == 0.0) {
        ConditionStatus::Vanishes
    } else {
        let pts: Vec<(f64, f64)> = radii
            .iter()
            .zip(&envelope)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&r, &e)| (-(r.ln()), e.ln()))
            .collect();
        match log_slope(&pts) {
            Some(s) if s < 0.0 => ConditionStatus::Decays { slope: s },
            Some(s) => ConditionStatus::Fails {
                reason: format!("envelope does not decay (log-log slope {s:.3e})"),
            },
            None => ConditionStatus::Fails {
                reason: "too few positive samples to fit a trend".into(),
            },
        }
    };
    ConditionReport { name, values, status }
}

/// Evaluates the four hypotheses of the radial VMO criterion on `(0, R]`:
/// `f` in `L^2`, `x f^2 -> 0`, `x f' -> 0`, and
/// `(1/r) int_0^r x (f(r) - f(x)) f'(x) dx -> 0`, at the given radii
/// (strictly decreasing, inside `(0, R]`).
pub fn bramanti_check(profile: &RadialProfile, big_r: f64, radii: &[f64]) -> Result<BramantiReport> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::arg("radii", "must be nonempty and strictly decreasing"));
    }
    if !(radii[0] <= big_r && *radii.last().expect("nonempty") > 0.0) {
        return Err(Error::arg("radii", "must lie in (0, R]"));
    }
    let f = |x: f64| profile.value(x);
    let floor = radii.last().copied().expect("nonempty") * 1e-2;
    let jumps = profile.jump_radii(big_r * (-LOG_SPAN).exp(), big_r);
    let l2_integral = integrate_pieces(&|x| f(x) * f(x), big_r, 1e-10, &jumps).ok();
    let differentiable = profile.is_continuously_differentiable();

    let mut conditions = Vec::with_capacity(4);
    conditions.push(ConditionReport {
        name: "square_integrable",
        values: l2_integral.into_iter().collect(),
        status: match l2_integral {
            Some(v) if v.is_finite() => ConditionStatus::Vanishes,
            _ => ConditionStatus::Fails {
                reason: "quadrature of f^2 failed".into(),
            },
        },
    });
    // The first condition is a finiteness check, not a limit: mark it as holding
    // through `Vanishes` only when finite.
    let xf2 = |x: f64| Some(x * f(x) * f(x));
    conditions.push(trend(
        "x_f_squared",
        radii.iter().map(|&r| xf2(r).expect("total")).collect(),
        radii.iter().map(|&r| tail_envelope(&xf2, floor, r).expect("total")).collect(),
        radii,
    ));

    if !differentiable {
        let reason = "profile has jumps; f' is undefined there".to_string();
        for name in ["x_f_prime", "condition_four_integral"] {
            conditions.push(ConditionReport {
                name,
                values: Vec::new(),
                status: ConditionStatus::NotEvaluated { reason: reason.clone() },
            });
        }
        return Ok(BramantiReport {
            radii: radii.to_vec(),
            differentiable,
            l2_integral,
            conditions,
        });
    }

    let xfp = |x: f64| profile.derivative(x).map(|d| x * d);
    let values: Option<Vec<f64>> = radii.iter().map(|&r| xfp(r)).collect();
    let envelope: Option<Vec<f64>> = radii.iter().map(|&r| tail_envelope(&xfp, floor, r)).collect();
    conditions.push(match (values, envelope) {
        (Some(v), Some(e)) => trend("x_f_prime", v, e, radii),
        _ => ConditionReport {
            name: "x_f_prime",
            values: Vec::new(),
            status: ConditionStatus::Fails {
                reason: "derivative undefined at a sample".into(),
            },
        },
    });

    let cond4 = |r: f64| -> Result<f64> {
        let fr = f(r);
        let g = |x: f64| x * (fr - f(x)) * profile.derivative(x).unwrap_or(0.0);
        Ok(integrate_to(&g, r, 1e-8 * r.max(1e-300))? / r)
    };
    let c4: Result<Vec<f64>> = radii.iter().map(|&r| cond4(r)).collect();
    conditions.push(match c4 {
        Ok(values) => {
            // Envelope over a denser ladder of radii between the floor and r.
            let ladder: Vec<f64> = {
                let span = (radii[0] / floor).ln();
                let n = (span * 8.0).ceil() as usize;
                (0..=n).map(|k| floor * (span * k as f64 / n as f64).exp()).collect()
            };
            match ladder.iter().map(|&x| cond4(x)).collect::<Result<Vec<f64>>>() {
                Ok(dense) => {
                    let envelope = radii
                        .iter()
                        .map(|&r| {
                            ladder
                                .iter()
                                .zip(&dense)
                                .filter(|(&x, _)| x <= r * (1.0 + 1e-12))
                                .map(|(_, v)| v.abs())
                                .fold(0.0, f64::max)
                        })
                        .collect();
                    trend("condition_four_integral", values, envelope, radii)
                }
                Err(e) => ConditionReport {
                    name: "condition_four_integral",
                    values,
                    status: ConditionStatus::Fails { reason: e.to_string() },
                },
            }
        }
        Err(e) => ConditionReport {
            name: "condition_four_integral",
            values: Vec::new(),
            status: ConditionStatus::Fails { reason: e.to_string() },
        },
    });
    Ok(BramantiReport {
        radii: radii.to_vec(),
        differentiable,
        l2_integral,
        conditions,
    })
}

/// Radii `r0 q^k` for `k = 0..count`.
pub fn geometric_radii(r0: f64, q: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| r0 * q.powi(k as i32)).collect()
}
