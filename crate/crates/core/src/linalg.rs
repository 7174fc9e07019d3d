//! Sparse direct solves for the interior systems built by the solvers.

use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::*;
use faer::{Mat, Par};

use crate::error::{Error, Result};

/// Relative residual every accepted solve must reach.
pub const SOLVE_RESIDUAL: f64 = 1e-10;

/// Square sparse system assembled row by row.
#[derive(Debug, Default)]
pub(crate) struct SparseSystem {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
    rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem {
            n,
            entries: Vec::with_capacity(9 * n),
            rhs: vec![0.0; n],
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push(Triplet::new(row, col, value));
    }

    #[inline]
    pub fn set_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] = value;
    }

    /// LU solve with partial pivoting; checks the relative residual.
    pub fn solve(&self) -> Result<Vec<f64>> {
        // Sequential kernels keep repeated runs bit-identical.
        faer::set_global_parallelism(Par::Seq);
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let lu = a
            .sp_lu()
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| self.rhs[i]);
        let x = lu.solve(&b);
        let x: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        let residual = self.relative_residual(&x);
        if !(residual <= SOLVE_RESIDUAL) {
            return Err(Error::LinearSolve(format!(
                "relative residual {residual:e} above {SOLVE_RESIDUAL:e}"
            )));
        }
        Ok(x)
    }

    fn relative_residual(&self, x: &[f64]) -> f64 {
        let mut r = self.rhs.iter().map(|b| -b).collect::<Vec<_>>();
        let mut row_abs = vec![0.0; self.n];
        for t in &self.entries {
            r[t.row] += t.val * x[t.col];
            row_abs[t.row] += t.val.abs();
        }
        let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a_max = row_abs.iter().copied().fold(0.0, f64::max);
        let b_max = self.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = a_max * x_max + b_max;
        let r_max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            r_max
        } else {
            r_max / scale
        }
    }
}
