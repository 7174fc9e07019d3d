//! Nine-point discretization of `L w = a^{ij} D_{ij} w`.
//!
//! `D11` and `D22` are the standard three-point second differences. The mixed
//! term `2 a12 D12` uses the seven-point stencil oriented by the sign of
//! `a12`, which puts weight only on the two corners along the matching
//! diagonal:
//!
//! ```text
//! a12 >= 0:  2 a12 D12 w = a12/h^2 (w[+1,+1] + w[-1,-1] + 2w - w[E] - w[W] - w[N] - w[S])
//! a12 <  0:  2 a12 D12 w = |a12|/h^2 (w[+1,-1] + w[-1,+1] + 2w - w[E] - w[W] - w[N] - w[S])
//! ```
//!
//! Both are exact on quadratics, and every off-diagonal weight is nonnegative
//! as soon as `|a12| <= min(a11, a22)`.

use serde::Serialize;

use crate::coefficients::{CoefficientField, Sym2};
use crate::error::Result;
use crate::grid::{Grid, ScalarField};

/// Neighbor offsets in the order the weights are stored.
pub const OFFSETS: [(isize, isize); 9] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (0, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

pub const CENTER: usize = 4;

pub type Stencil = [f64; 9];

#[derive(Debug, Clone)]
pub struct StencilOperator {
    grid: Grid,
    coeffs: CoefficientField,
    weights: Vec<Stencil>,
    monotonicity: MonotonicityReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub interior_cells: usize,
    pub violations: usize,
    /// Most negative off-diagonal weight (or nonnegative center weight),
    /// in units of `1/h^2`. Zero when there are no violations.
    pub worst_violation: f64,
}

impl MonotonicityReport {
    pub fn is_monotone(&self) -> bool {
        self.violations == 0
    }
}

/// Stencil weights for one cell, scaled by `h^2`.
pub fn cell_stencil(a: Sym2) -> Stencil {
    let b = a.a12.abs();
    let mut w = [0.0; 9];
    w[CENTER] = -2.0 * (a.a11 + a.a22) + 2.0 * b;
    w[3] = a.a11 - b;
    w[5] = a.a11 - b;
    w[1] = a.a22 - b;
    w[7] = a.a22 - b;
    if a.a12 >= 0.0 {
        w[0] = b;
        w[8] = b;
    } else {
        w[2] = b;
        w[6] = b;
    }
    w
}

/// Builds the operator on the grid carried by `coeffs`.
pub fn assemble(grid: &Grid, coeffs: &CoefficientField) -> Result<StencilOperator> {
    grid.same_as(coeffs.grid())?;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let weights = (0..grid.len())
        .map(|k| {
            if grid.is_boundary_index(k) {
                [0.0; 9]
            } else {
                cell_stencil(coeffs.at(k)).map(|w| w * inv_h2)
            }
        })
        .collect::<Vec<_>>();
    let monotonicity = check_monotone(grid, &weights);
    Ok(StencilOperator {
        grid: *grid,
        coeffs: coeffs.clone(),
        weights,
        monotonicity,
    })
}

fn check_monotone(grid: &Grid, weights: &[Stencil]) -> MonotonicityReport {
    let h2 = grid.h() * grid.h();
    let mut interior_cells = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for (k, w) in weights.iter().enumerate() {
        if grid.is_boundary_index(k) {
            continue;
        }
        interior_cells += 1;
        let mut bad = false;
        for (m, &wm) in w.iter().enumerate() {
            let scaled = wm * h2;
            if m == CENTER {
                if scaled >= 0.0 {
                    bad = true;
                    worst = worst.max(scaled);
                }
            } else if scaled < 0.0 {
                bad = true;
                worst = worst.max(-scaled);
            }
        }
        if bad {
            violations += 1;
        }
    }
    MonotonicityReport {
        interior_cells,
        violations,
        worst_violation: worst,
    }
}

impl StencilOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coeffs
    }

    /// Weights of cell `idx` (all zero on the Dirichlet layer).
    #[inline]
    pub fn stencil(&self, idx: usize) -> &Stencil {
        &self.weights[idx]
    }

    pub fn monotonicity_report(&self) -> MonotonicityReport {
        self.monotonicity
    }

    /// Neighbor index of interior cell `(i, j)` at stencil slot `m`.
    #[inline]
    pub(crate) fn neighbor(&self, i: usize, j: usize, m: usize) -> usize {
        let (di, dj) = OFFSETS[m];
        self.grid.index(
            (i as isize + di) as usize,
            (j as isize + dj) as usize,
        )
    }

    /// `(L w)` at interior cell `idx`.
    #[inline]
    pub fn apply_at(&self, w: &[f64], idx: usize) -> f64 {
        if self.grid.is_boundary_index(idx) {
            return 0.0;
        }
        let (i, j) = self.grid.coords(idx);
        let st = &self.weights[idx];
        let mut acc = 0.0;
        for m in 0..9 {
            if st[m] != 0.0 {
                acc += st[m] * w[self.neighbor(i, j, m)];
            }
        }
        acc
    }

    /// `L w` on interior cells, zero on the Dirichlet layer.
    pub fn apply(&self, w: &ScalarField) -> Result<ScalarField> {
        self.grid.same_as(w.grid())?;
        let vals = (0..self.grid.len())
            .map(|k| self.apply_at(w.values(), k))
            .collect();
        Ok(ScalarField::from_values_unchecked(self.grid, vals))
    }
}

pub fn apply(op: &StencilOperator, w: &ScalarField) -> Result<ScalarField> {
    op.apply(w)
}

pub fn monotonicity_report(op: &StencilOperator) -> MonotonicityReport {
    op.monotonicity_report()
}
