//! Quadratic rescalings `w_r(x) = r^{-2} w(x0 + r x)`, half-space reference
//! profiles, and pinning the free boundary to a chosen cell.

use serde::Serialize;

use crate::coefficients::{averaged_matrix, CoefficientField, Sym2};
use crate::complementarity::{solve_obstacle_with, ObstacleSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, Point, ScalarField};
use crate::operator::StencilOperator;
use crate::report::{fmt_f64, CsvTable};

/// Source resolution needed for a rescaling, in source cells per unit radius.
pub const MIN_RESCALE_CELLS: f64 = 8.0;

/// `(1 / (2 nu^T A nu)) ((x.nu - beta)_+)^2`, which solves `A^{ij} D_{ij} q = chi_{q > 0}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceProfile {
    pub name: String,
    pub matrix: Sym2,
    pub normal: Point,
}

impl ReferenceProfile {
    pub fn new(name: impl Into<String>, matrix: Sym2, normal: Point) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::arg("normal", format!("must be a unit vector, |nu| = {}", normal.norm())));
        }
        if !(matrix.eigenvalues().0 > 0.0) {
            return Err(Error::arg("matrix", "not elliptic"));
        }
        Ok(ReferenceProfile {
            name: name.into(),
            matrix,
            normal,
        })
    }

    pub fn coefficient(&self) -> f64 {
        0.5 / self.matrix.quadratic_form(self.normal)
    }

    #[inline]
    pub fn value(&self, x: Point, beta: f64) -> f64 {
        let t = (x.dot(self.normal) - beta).max(0.0);
        self.coefficient() * t * t
    }
}

/// Half-space profile evaluated at cell centers.
pub fn halfspace_profile(a: Sym2, nu: Point, beta: f64, grid: Grid) -> Result<ScalarField> {
    let q = ReferenceProfile::new("profile", a, nu)?;
    Ok(ScalarField::from_fn(grid, |p| q.value(p, beta)))
}

/// `r^{-2} w(r x)` sampled at the centers of `out`.
pub fn rescale(field: &ScalarField, r: f64, out: &Grid) -> Result<ScalarField> {
    rescale_about(field, Point::ORIGIN, r, out)
}

/// `r^{-2} w(x0 + r x)` sampled at the centers of `out`.
pub fn rescale_about(field: &ScalarField, x0: Point, r: f64, out: &Grid) -> Result<ScalarField> {
    let src = field.grid();
    if !(r >= MIN_RESCALE_CELLS * src.h() * (1.0 - 1e-12)) {
        return Err(Error::arg(
            "r",
            format!("radius {r} is below {MIN_RESCALE_CELLS}h = {} of the source grid", MIN_RESCALE_CELLS * src.h()),
        ));
    }
    let half = 0.5 * (out.extent() - out.h());
    let c = out.center();
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let corner = Point::new(c.x + sx * half, c.y + sy * half);
        let p = Point::new(x0.x + r * corner.x, x0.y + r * corner.y);
        if !src.in_hull(p) {
            return Err(Error::arg("r", format!("rescaled window at radius {r} leaves the source grid")));
        }
    }
    let inv = 1.0 / (r * r);
    let mut vals = Vec::with_capacity(out.len());
    for k in 0..out.len() {
        let x = out.center_of(k);
        vals.push(inv * field.sample(Point::new(x0.x + r * x.x, x0.y + r * x.y))?);
    }
    Ok(ScalarField::from_values_unchecked(*out, vals))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileFit {
    pub name: String,
    pub beta: f64,
    pub distance: f64,
}

/// A comparison must keep at least this fraction of the window's cells.
pub const MIN_COMPARED_FRACTION: f64 = 0.25;

/// Max-norm distance on `B_window` to `q_beta`, skipping cells within
/// `collar` of the line `x.nu = beta`. Infinite when the collar leaves fewer
/// than a quarter of the window's cells to compare.
pub fn profile_distance(field: &ScalarField, q: &ReferenceProfile, beta: f64, window: f64, collar: f64) -> f64 {
    let grid = field.grid();
    let cells = grid.ball_indices(Point::ORIGIN, window);
    let mut compared = 0usize;
    let mut worst = 0.0f64;
    for &k in &cells {
        let x = grid.center_of(k);
        if (x.dot(q.normal) - beta).abs() >= collar {
            compared += 1;
            worst = worst.max((field.values()[k] - q.value(x, beta)).abs());
        }
    }
    if (compared as f64) < MIN_COMPARED_FRACTION * cells.len() as f64 {
        f64::INFINITY
    } else {
        worst
    }
}

/// Offset of the field's own free boundary along `nu`: the smallest `x.nu`
/// over positive cells of `B_window`. `None` if the field vanishes there.
pub fn free_boundary_offset(field: &ScalarField, nu: Point, window: f64) -> Option<f64> {
    let grid = field.grid();
    grid.ball_indices(Point::ORIGIN, window)
        .into_iter()
        .filter(|&k| field.values()[k] > 0.0)
        .map(|k| grid.center_of(k).dot(nu))
        .reduce(f64::min)
}

/// Matches a reference to the field: its offset is taken from the field's
/// free boundary, then refined by golden section within `slack` of it
/// (the interpolation blur of the rescaling), and the distance is reported
/// at the refined offset.
pub fn fit_reference(field: &ScalarField, q: &ReferenceProfile, window: f64, collar: f64, slack: f64) -> ProfileFit {
    let d = |b: f64| profile_distance(field, q, b, window, collar);
    let Some(b0) = free_boundary_offset(field, q.normal, window) else {
        return ProfileFit {
            name: q.name.clone(),
            beta: f64::NAN,
            distance: d(window),
        };
    };
    let (mut best_b, mut best_d) = (b0, d(b0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (b0 - slack, b0 + slack);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (d(x1), d(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = d(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = d(x2);
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f < best_d {
                best_b = x;
                best_d = f;
            }
        }
    }
    ProfileFit {
        name: q.name.clone(),
        beta: best_b,
        distance: best_d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlowupOptions {
    /// Cells per axis of the rescaled grid on `[-1, 1]^2`.
    pub out_cells: usize,
    /// Radius of the comparison window in rescaled units.
    pub window: f64,
    /// Collar half-width in output cells.
    pub collar_cells: f64,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        BlowupOptions {
            out_cells: 64,
            window: 0.5,
            collar_cells: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupRecord {
    pub r: f64,
    pub field: ScalarField,
    pub averaged: Sym2,
    pub fits: Vec<ProfileFit>,
    pub min_value: f64,
    /// Collar half-width used, in rescaled units.
    pub collar: f64,
}

impl BlowupRecord {
    pub fn fit(&self, name: &str) -> Option<&ProfileFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    /// Name of the closest reference.
    pub fn nearest(&self) -> Option<&ProfileFit> {
        self.fits
            .iter()
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
    }
}

/// One record per radius, rescaling about `center`. The collar is
/// `collar_cells` output cells plus one source cell seen at scale `r`.
pub fn blowup_sequence(
    w: &ScalarField,
    coeffs: &CoefficientField,
    center: Point,
    radii: &[f64],
    references: &[ReferenceProfile],
    opts: &BlowupOptions,
) -> Result<Vec<BlowupRecord>> {
    w.grid().same_as(coeffs.grid())?;
    let out = Grid::new(2.0, opts.out_cells, Point::ORIGIN)?;
    let mut records = Vec::with_capacity(radii.len());
    for &r in radii {
        let field = rescale_about(w, center, r, &out)?;
        let averaged = averaged_matrix(coeffs, center, r)?;
        let blur = w.grid().h() / r;
        let collar = opts.collar_cells * out.h() + blur;
        let cell = out.h().max(blur);
        let fits = references
            .iter()
            .map(|q| fit_reference(&field, q, opts.window, collar, cell))
            .collect();
        let min_value = field.min();
        records.push(BlowupRecord {
            r,
            field,
            averaged,
            fits,
            min_value,
            collar,
        });
    }
    Ok(records)
}

pub fn records_to_csv(records: &[BlowupRecord]) -> String {
    let names: Vec<String> = records
        .first()
        .map(|r| r.fits.iter().map(|f| f.name.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["r".to_string(), "a11".into(), "a12".into(), "a22".into(), "min_value".into()];
    for n in &names {
        header.push(format!("beta_{n}"));
        header.push(format!("distance_{n}"));
    }
    let mut t = CsvTable::new(&header);
    for rec in records {
        let mut row = vec![
            fmt_f64(rec.r),
            fmt_f64(rec.averaged.a11),
            fmt_f64(rec.averaged.a12),
            fmt_f64(rec.averaged.a22),
            fmt_f64(rec.min_value),
        ];
        for f in &rec.fits {
            row.push(fmt_f64(f.beta));
            row.push(fmt_f64(f.distance));
        }
        t.push_row(row);
    }
    t.render()
}

/// Offsets closer than this many cells reuse the previous policy.
const WARM_START_CELLS: f64 = 4.0;

/// The cell whose lower-left corner is the grid center.
pub fn pin_cell(grid: &Grid) -> usize {
    let m = grid.n_cells() / 2;
    grid.index(m, m)
}

#[derive(Debug, Clone)]
pub struct PinnedSolution {
    pub beta: f64,
    /// Final bracket: the pin cell is active at `.0` and in contact at `.1`.
    pub bracket: (f64, f64),
    pub solves: usize,
    pub solution: ObstacleSolution,
}

/// Bisection over the datum offset `beta` until the pin cell flips between
/// active and contact within a bracket of width `h^2`. `data(beta)` must make
/// the contact set grow with `beta`. Returns the contact-side solution, in
/// which the pin cell is a free-boundary cell.
pub fn pin_free_boundary(
    op: &StencilOperator,
    data: impl Fn(f64) -> ScalarField,
    bracket: (f64, f64),
    opts: &SolverOptions,
) -> Result<PinnedSolution> {
    let grid = *op.grid();
    let target = pin_cell(&grid);
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(Error::Pinning(format!("empty bracket [{lo}, {hi}]")));
    }
    let mut solves = 0;
    // Policy iteration moves the free boundary about one cell per policy, so
    // a previous solution is only a good start when beta moved a few cells.
    let near = WARM_START_CELLS * grid.h();
    let mut solve = |beta: f64, prev: Option<(f64, &ObstacleSolution)>| -> Result<ObstacleSolution> {
        solves += 1;
        let start = prev.filter(|(b, _)| (b - beta).abs() <= near).map(|(_, s)| &s.active);
        solve_obstacle_with(op, &data(beta), opts, start)
    };
    let at_lo = solve(lo, None)?;
    if !at_lo.active.contains(target) {
        return Err(Error::Pinning(format!(
            "pin cell is already in contact at beta = {lo}; lower the bracket"
        )));
    }
    let mut at_hi = solve(hi, None)?;
    if !at_hi.contact.contains(target) {
        return Err(Error::Pinning(format!(
            "pin cell is still active at beta = {hi}; raise the bracket"
        )));
    }
    let (mut last_beta, mut last) = (lo, at_lo);
    let tol = grid.h() * grid.h();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let s = solve(mid, Some((last_beta, &last)))?;
        last_beta = mid;
        if s.active.contains(target) {
            lo = mid;
            last = s;
        } else {
            hi = mid;
            last = s.clone();
            at_hi = s;
        }
    }
    if !at_hi.fb_cells.contains(target) {
        return Err(Error::Pinning(format!(
            "pin cell is in contact at beta = {hi} but has no active neighbor"
        )));
    }
    Ok(PinnedSolution {
        beta: hi,
        bracket: (lo, hi),
        solves,
        solution: at_hi,
    })
}
