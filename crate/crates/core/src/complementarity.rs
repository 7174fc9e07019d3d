//! Reference obstacle solver: the complementarity system
//! `min(1 - L w, w) = 0` on interior cells, `w = psi` on the Dirichlet
//! layer, solved by policy (Howard) iteration.
//!
//! On the positivity set `L w = 1`; on the contact set `w = 0` and
//! `L w <= 1`. Each policy fixes which branch holds at every interior cell,
//! and the resulting linear system is an M-matrix whenever the stencil is
//! monotone.

use std::collections::HashSet;

use serde::Serialize;

use crate::coefficients::{CoefficientField, Sym2};
use crate::error::{Error, Result};
use crate::grid::{CellSet, Grid, ScalarField};
use crate::dirichlet::solve_interior;
use crate::operator::{assemble, MonotonicityReport, StencilOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Bound on the final complementarity residual.
    pub tol: f64,
    pub max_policies: usize,
    /// Branch values closer than this are treated as tied; a tied cell keeps
    /// its current branch.
    pub tie: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_policies: 200,
            tie: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub policies: usize,
    pub residual: f64,
    pub h: f64,
    pub monotonicity: MonotonicityReport,
}

/// Discrete obstacle solution with its contact/positivity partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSolution {
    pub w: ScalarField,
    /// Interior cells where `L w = 1` holds (the positivity set).
    pub active: CellSet,
    /// Interior cells pinned to zero (the zero set).
    pub contact: CellSet,
    /// Contact cells with an edge neighbor in the active set.
    pub fb_cells: CellSet,
    pub diagnostics: SolverDiagnostics,
}

impl ObstacleSolution {
    pub fn grid(&self) -> &Grid {
        self.w.grid()
    }

    /// Diagnostics block as JSON.
    pub fn diagnostics_json(&self, coefficient_descriptor: &str) -> String {
        let value = serde_json::json!({
            "policies": self.diagnostics.policies,
            "residual": self.diagnostics.residual,
            "h": self.diagnostics.h,
            "monotonicity": self.diagnostics.monotonicity,
            "coefficients": coefficient_descriptor,
            "active_cells": self.active.count(),
            "contact_cells": self.contact.count(),
        });
        serde_json::to_string_pretty(&value).expect("diagnostics serialize")
    }
}

/// Solves the obstacle problem with default options and `tol`.
pub fn solve_obstacle(op: &StencilOperator, psi: &ScalarField, tol: f64) -> Result<ObstacleSolution> {
    let opts = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    solve_obstacle_with(op, psi, &opts, None)
}

/// Grids at least this fine get their starting policy from the solution on
/// the grid with half as many cells per axis.
const COARSE_START_MIN_CELLS: usize = 64;

/// Policy iteration starting from `initial_active`. With `None`, the start is
/// the contact set of the half-resolution problem when the grid is fine
/// enough, otherwise all interior cells.
pub fn solve_obstacle_with(
    op: &StencilOperator,
    psi: &ScalarField,
    opts: &SolverOptions,
    initial_active: Option<&CellSet>,
) -> Result<ObstacleSolution> {
    let grid = *op.grid();
    grid.same_as(psi.grid())?;
    if !(opts.tol > 0.0) {
        return Err(Error::arg("tol", "must be positive"));
    }
    if let Some(k) = (0..grid.len()).find(|&k| grid.is_boundary_index(k) && psi.values()[k] < 0.0) {
        return Err(Error::arg(
            "psi",
            format!("boundary data must be nonnegative; cell {k} has {}", psi.values()[k]),
        ));
    }
    let interior = CellSet::interior(grid);
    let mut active = match initial_active {
        Some(a) => {
            grid.same_as(a.grid())?;
            a.intersect(&interior)?
        }
        None => coarse_start(op, psi, opts).unwrap_or_else(|| interior.clone()),
    };

    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut best: Option<ObstacleSolution> = None;
    for policies in 1..=opts.max_policies {
        let w = solve_policy(op, psi, &active)?;
        let (next, changed) = improve_policy(op, &w, &active, opts.tie);
        let sol = finish(op, w, &active, policies);
        if !changed {
            if sol.diagnostics.residual <= opts.tol {
                return Ok(sol);
            }
            return Err(Error::PolicyNonConvergence {
                iterations: policies,
                residual: sol.diagnostics.residual,
                best: Box::new(sol),
            });
        }
        if best
            .as_ref()
            .map_or(true, |b| sol.diagnostics.residual < b.diagnostics.residual)
        {
            best = Some(sol);
        }
        if !seen.insert(active.mask().to_vec()) {
            break;
        }
        active = next;
    }
    let best = best.expect("at least one policy evaluated");
    Err(Error::PolicyNonConvergence {
        iterations: best.diagnostics.policies,
        residual: best.diagnostics.residual,
        best: Box::new(best),
    })
}

/// Active set of the half-resolution problem, prolonged cell by cell.
fn coarse_start(op: &StencilOperator, psi: &ScalarField, opts: &SolverOptions) -> Option<CellSet> {
    let fine = *op.grid();
    let n = fine.n_cells();
    if n < COARSE_START_MIN_CELLS || n % 2 != 0 {
        return None;
    }
    let coarse = Grid::new(fine.extent(), n / 2, fine.center()).ok()?;
    let block = |ci: usize, cj: usize| {
        [
            fine.index(2 * ci, 2 * cj),
            fine.index(2 * ci + 1, 2 * cj),
            fine.index(2 * ci, 2 * cj + 1),
            fine.index(2 * ci + 1, 2 * cj + 1),
        ]
    };
    let coeffs = op.coefficients();
    let mut entries = Vec::with_capacity(coarse.len());
    let mut data = Vec::with_capacity(coarse.len());
    for k in 0..coarse.len() {
        let (ci, cj) = coarse.coords(k);
        let cells = block(ci, cj);
        let m = cells.iter().fold(Sym2::new(0.0, 0.0, 0.0), |acc, &f| {
            let a = coeffs.at(f);
            Sym2::new(acc.a11 + a.a11, acc.a12 + a.a12, acc.a22 + a.a22)
        });
        entries.push(m.scaled(0.25));
        data.push(cells.iter().map(|&f| psi.values()[f].max(0.0)).sum::<f64>() * 0.25);
    }
    let coeffs = CoefficientField::from_entries(coarse, entries).ok()?;
    let coarse_op = assemble(&coarse, &coeffs).ok()?;
    let coarse_psi = ScalarField::from_values(coarse, data).ok()?;
    let sol = match solve_obstacle_with(&coarse_op, &coarse_psi, opts, None) {
        Ok(sol) => sol,
        Err(Error::PolicyNonConvergence { best, .. }) => *best,
        Err(_) => return None,
    };
    Some(CellSet::from_fn(fine, |k| {
        if fine.is_boundary_index(k) {
            return false;
        }
        let (i, j) = fine.coords(k);
        let ck = coarse.index(i / 2, j / 2);
        sol.active.contains(ck) || coarse.is_boundary_index(ck)
    }))
}

/// `L w = 1` on `active`, `w = 0` on the remaining interior cells,
/// `w = psi` on the Dirichlet layer.
fn solve_policy(op: &StencilOperator, psi: &ScalarField, active: &CellSet) -> Result<ScalarField> {
    let ones = vec![1.0; op.grid().len()];
    let w = solve_interior(op, psi.values(), Some(active), None, &ones)?;
    Ok(ScalarField::from_values_unchecked(*op.grid(), w))
}

/// Picks, cell by cell, the branch of `min(1 - Lw, w)` with the smaller value.
fn improve_policy(op: &StencilOperator, w: &ScalarField, active: &CellSet, tie: f64) -> (CellSet, bool) {
    let grid = *op.grid();
    let mut next = active.clone();
    let mut changed = false;
    for k in 0..grid.len() {
        if grid.is_boundary_index(k) {
            continue;
        }
        let pde = 1.0 - op.apply_at(w.values(), k);
        let obstacle = w.values()[k];
        let now_active = active.contains(k);
        let want_active = if now_active {
            obstacle >= pde - tie
        } else {
            pde < obstacle - tie
        };
        if want_active != now_active {
            next.set(k, want_active);
            changed = true;
        }
    }
    (next, changed)
}

fn finish(op: &StencilOperator, w: ScalarField, active: &CellSet, policies: usize) -> ObstacleSolution {
    let grid = *op.grid();
    let interior = CellSet::interior(grid);
    let contact = active.complement_in(&interior).expect("same grid");
    let fb_cells = free_boundary_cells(&contact, active);
    let residual = residual_of(op, &w);
    ObstacleSolution {
        w,
        active: active.clone(),
        contact,
        fb_cells,
        diagnostics: SolverDiagnostics {
            policies,
            residual,
            h: grid.h(),
            monotonicity: op.monotonicity_report(),
        },
    }
}

/// Contact cells with an edge neighbor in `active`.
pub fn free_boundary_cells(contact: &CellSet, active: &CellSet) -> CellSet {
    let grid = *contact.grid();
    let n = grid.n_cells();
    CellSet::from_fn(grid, |k| {
        if !contact.contains(k) {
            return false;
        }
        let (i, j) = grid.coords(k);
        let mut nbs = Vec::with_capacity(4);
        if i > 0 {
            nbs.push(grid.index(i - 1, j));
        }
        if i + 1 < n {
            nbs.push(grid.index(i + 1, j));
        }
        if j > 0 {
            nbs.push(grid.index(i, j - 1));
        }
        if j + 1 < n {
            nbs.push(grid.index(i, j + 1));
        }
        nbs.into_iter().any(|m| active.contains(m))
    })
}

fn residual_of(op: &StencilOperator, w: &ScalarField) -> f64 {
    let grid = op.grid();
    (0..grid.len())
        .filter(|&k| !grid.is_boundary_index(k))
        .map(|k| (1.0 - op.apply_at(w.values(), k)).min(w.values()[k]).abs())
        .fold(0.0, f64::max)
}

/// `max |min(1 - L w, w)|` over interior cells.
pub fn complementarity_residual(sol: &ObstacleSolution, op: &StencilOperator) -> Result<f64> {
    op.grid().same_as(sol.grid())?;
    Ok(residual_of(op, &sol.w))
}

/// Residual of an arbitrary field (e.g. an analytic profile sampled on the grid).
pub fn field_residual(w: &ScalarField, op: &StencilOperator) -> Result<f64> {
    op.grid().same_as(w.grid())?;
    Ok(residual_of(op, w))
}
