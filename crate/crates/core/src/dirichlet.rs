//! Linear Dirichlet solves `(L - diag(c)) u = f` on the interior cells.

use crate::error::Result;
use crate::grid::{CellSet, ScalarField};
use crate::linalg::SparseSystem;
use crate::operator::{StencilOperator, CENTER};

/// Solves `(L - diag(shift)) u = rhs` on the cells of `active` (all interior
/// cells when `None`), `u = 0` on the remaining interior cells and
/// `u = boundary` on the Dirichlet layer.
pub(crate) fn solve_interior(
    op: &StencilOperator,
    boundary: &[f64],
    active: Option<&CellSet>,
    shift: Option<&[f64]>,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let grid = *op.grid();
    let h2 = grid.h() * grid.h();
    let n = grid.n_cells();
    let m = n - 2;
    let unknown = |i: usize, j: usize| (j - 1) * m + (i - 1);
    let is_active = |k: usize| active.map_or(true, |a| a.contains(k));
    let mut sys = SparseSystem::new(m * m);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = grid.index(i, j);
            let row = unknown(i, j);
            if !is_active(k) {
                sys.push(row, row, 1.0);
                continue;
            }
            let st = op.stencil(k);
            let mut b = h2 * rhs[k];
            for (slot, &wt) in st.iter().enumerate() {
                if wt == 0.0 && slot != CENTER {
                    continue;
                }
                let mut wt = wt * h2;
                if slot == CENTER {
                    if let Some(c) = shift {
                        wt -= h2 * c[k];
                    }
                }
                let nb = op.neighbor(i, j, slot);
                let (ni, nj) = grid.coords(nb);
                if grid.is_boundary(ni, nj) {
                    b -= wt * boundary[nb];
                } else {
                    sys.push(row, unknown(ni, nj), wt);
                }
            }
            sys.set_rhs(row, b);
        }
    }
    let x = sys.solve()?;
    let mut u = boundary.to_vec();
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = grid.index(i, j);
            u[k] = if is_active(k) { x[unknown(i, j)] } else { 0.0 };
        }
    }
    Ok(u)
}

/// `L u = rhs` in the interior, `u = psi` on the Dirichlet layer.
pub fn solve_dirichlet(op: &StencilOperator, psi: &ScalarField, rhs: &ScalarField) -> Result<ScalarField> {
    op.grid().same_as(psi.grid())?;
    op.grid().same_as(rhs.grid())?;
    let u = solve_interior(op, psi.values(), None, None, rhs.values())?;
    Ok(ScalarField::from_values_unchecked(*op.grid(), u))
}
