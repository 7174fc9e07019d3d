//! Penalized approximation of the obstacle problem.
//!
//! The characteristic function `chi_{u > 0}` is replaced by a smooth ramp
//! `Phi_eps`, and `L u = t Phi_eps(u)` is solved by Newton's method while `t`
//! is continued from 0 to 1. Driving `eps` to zero (with mollified
//! coefficients and boundary data) recovers the obstacle solution.

use serde::Serialize;

use crate::coefficients::{mollify, CoefficientField};
use crate::complementarity::{solve_obstacle, ObstacleSolution};
use crate::dirichlet::solve_interior;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::operator::{assemble, StencilOperator};

/// Quintic smoothstep ramp from 0 (at `t <= 0`) to 1 (at `t >= eps`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltyRamp {
    eps: f64,
}

impl PenaltyRamp {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::arg("eps", format!("ramp width must be positive, got {eps}")));
        }
        Ok(PenaltyRamp { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = (t / self.eps).clamp(0.0, 1.0);
        s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let s = t / self.eps;
        if s <= 0.0 || s >= 1.0 {
            0.0
        } else {
            30.0 * s * s * (1.0 - s) * (1.0 - s) / self.eps
        }
    }
}

pub fn penalty_value(ramp: &PenaltyRamp, t: f64) -> f64 {
    ramp.value(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonOptions {
    pub t_steps: usize,
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            t_steps: 10,
            tol: 1e-9,
            max_iterations: 50,
            max_halvings: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemilinearSolution {
    pub u: ScalarField,
    /// `max |L u - Phi_eps(u)|` over interior cells at `t = 1`.
    pub residual: f64,
    /// Newton steps summed over all continuation stages.
    pub newton_iterations: usize,
}

fn residual(op: &StencilOperator, ramp: &PenaltyRamp, t: f64, u: &[f64], out: &mut [f64]) -> f64 {
    let grid = op.grid();
    let mut worst = 0.0f64;
    for (k, r) in out.iter_mut().enumerate() {
        *r = if grid.is_boundary_index(k) {
            0.0
        } else {
            op.apply_at(u, k) - t * ramp.value(u[k])
        };
        worst = worst.max(r.abs());
    }
    worst
}

/// Solves `L u = Phi_eps(u)` with `u = psi` on the Dirichlet layer by
/// continuation in `t` over `1/t_steps, 2/t_steps, ..., 1`.
pub fn solve_semilinear(
    op: &StencilOperator,
    psi: &ScalarField,
    ramp: &PenaltyRamp,
    opts: &NewtonOptions,
) -> Result<SemilinearSolution> {
    let grid = *op.grid();
    grid.same_as(psi.grid())?;
    if opts.t_steps == 0 {
        return Err(Error::arg("t_steps", "need at least one continuation step"));
    }
    if (0..grid.len()).any(|k| grid.is_boundary_index(k) && psi.values()[k] < 0.0) {
        return Err(Error::arg("psi", "boundary data must be nonnegative"));
    }
    let zeros = vec![0.0; grid.len()];
    // t = 0: the L-harmonic extension of the boundary data.
    let mut u = solve_interior(op, psi.values(), None, None, &zeros)?;
    let mut last_converged = u.clone();
    let mut f = vec![0.0; grid.len()];
    let mut trial_f = vec![0.0; grid.len()];
    let mut total = 0;

    for step in 1..=opts.t_steps {
        let t = step as f64 / opts.t_steps as f64;
        let mut norm = residual(op, ramp, t, &u, &mut f);
        let mut iterations = 0;
        while norm > opts.tol {
            if iterations == opts.max_iterations {
                return Err(divergence(grid, t, norm, last_converged));
            }
            iterations += 1;
            // (L - t Phi'(u)) delta = -F(u), delta = 0 on the boundary.
            let shift: Vec<f64> = u.iter().map(|&v| t * ramp.derivative(v)).collect();
            let minus_f: Vec<f64> = f.iter().map(|v| -v).collect();
            let delta = solve_interior(op, &zeros, None, Some(&shift), &minus_f)?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                let trial_norm = residual(op, ramp, t, &trial, &mut trial_f);
                if trial_norm < norm || trial_norm <= opts.tol {
                    u = trial;
                    norm = trial_norm;
                    std::mem::swap(&mut f, &mut trial_f);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(divergence(grid, t, norm, last_converged));
            }
        }
        total += iterations;
        last_converged.clone_from(&u);
    }
    let residual = residual(op, ramp, 1.0, &u, &mut f);
    Ok(SemilinearSolution {
        u: ScalarField::from_values_unchecked(grid, u),
        residual,
        newton_iterations: total,
    })
}

fn divergence(grid: Grid, t: f64, residual: f64, last: Vec<f64>) -> Error {
    Error::NewtonDivergence {
        t,
        residual,
        last_converged: Some(Box::new(ScalarField::from_values_unchecked(grid, last))),
    }
}

/// Boundary data averaged along the Dirichlet layer with the quartic bump.
pub fn mollify_boundary(psi: &ScalarField, eps: f64) -> Result<ScalarField> {
    let grid = *psi.grid();
    if !(eps >= grid.h() * (1.0 - 1e-12)) {
        return Err(Error::arg("eps", "boundary mollification radius below h"));
    }
    let ring: Vec<usize> = (0..grid.len()).filter(|&k| grid.is_boundary_index(k)).collect();
    let weight = |d: f64| {
        if d < eps {
            let t = 1.0 - (d / eps).powi(2);
            t * t
        } else {
            0.0
        }
    };
    let mut out = psi.values().to_vec();
    for &k in &ring {
        let p = grid.center_of(k);
        let (mut num, mut den) = (0.0, 0.0);
        for &m in &ring {
            let w = weight(p.dist(grid.center_of(m)));
            if w > 0.0 {
                num += w * psi.values()[m];
                den += w;
            }
        }
        out[k] = num / den;
    }
    Ok(ScalarField::from_values_unchecked(grid, out))
}

/// Coefficients and boundary data of one obstacle problem.
#[derive(Debug, Clone)]
pub struct ObstacleProblem {
    pub coeffs: CoefficientField,
    pub psi: ScalarField,
}

impl ObstacleProblem {
    pub fn new(coeffs: CoefficientField, psi: ScalarField) -> Result<Self> {
        coeffs.grid().same_as(psi.grid())?;
        Ok(ObstacleProblem { coeffs, psi })
    }

    pub fn grid(&self) -> &Grid {
        self.coeffs.grid()
    }

    pub fn operator(&self) -> Result<StencilOperator> {
        assemble(self.grid(), &self.coeffs)
    }

    pub fn solve(&self, tol: f64) -> Result<ObstacleSolution> {
        solve_obstacle(&self.operator()?, &self.psi, tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub eps: f64,
    pub residual: Option<f64>,
    pub distance_to_oracle: Option<f64>,
    pub newton_iterations: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PenalizedPath {
    pub oracle: ObstacleSolution,
    pub records: Vec<PathRecord>,
    pub fields: Vec<Option<ScalarField>>,
}

impl PenalizedPath {
    /// Distances never grow by more than `slack` (relative) from one eps to the next.
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        let d: Vec<f64> = self.records.iter().filter_map(|r| r.distance_to_oracle).collect();
        d.len() == self.records.len() && d.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack) + 1e-14)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,residual,distance_to_oracle,iterations\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::report::fmt_f64(r.eps),
                r.residual.map_or("nan".into(), crate::report::fmt_f64),
                r.distance_to_oracle.map_or("nan".into(), crate::report::fmt_f64),
                r.newton_iterations.map_or("nan".into(), |i| i.to_string()),
            ));
        }
        out
    }
}

/// Penalized solves along a decreasing list of ramp widths, each compared to
/// the complementarity solution of the unmollified problem.
pub fn penalized_path(
    problem: &ObstacleProblem,
    eps_list: &[f64],
    opts: &NewtonOptions,
) -> Result<PenalizedPath> {
    let grid = *problem.grid();
    let h = grid.h();
    if eps_list.is_empty() {
        return Err(Error::arg("eps_list", "empty"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::arg("eps_list", "must be strictly decreasing"));
    }
    let smallest = *eps_list.last().expect("nonempty");
    if smallest < h * h {
        return Err(Error::arg(
            "eps_list",
            format!("smallest eps {smallest} is below h^2 = {}", h * h),
        ));
    }
    let oracle = problem.solve(opts.tol)?;
    let mut records = Vec::with_capacity(eps_list.len());
    let mut fields = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let outcome = (|| -> Result<SemilinearSolution> {
            let radius = eps.max(h);
            let coeffs = mollify(&problem.coeffs, radius)?;
            let psi = mollify_boundary(&problem.psi, radius)?;
            let op = assemble(&grid, &coeffs)?;
            solve_semilinear(&op, &psi, &PenaltyRamp::new(eps)?, opts)
        })();
        match outcome {
            Ok(sol) => {
                let d = sol.u.max_abs_diff(&oracle.w)?;
                records.push(PathRecord {
                    eps,
                    residual: Some(sol.residual),
                    distance_to_oracle: Some(d),
                    newton_iterations: Some(sol.newton_iterations),
                    failure: None,
                });
                fields.push(Some(sol.u));
            }
            Err(e) => {
                records.push(PathRecord {
                    eps,
                    residual: None,
                    distance_to_oracle: None,
                    newton_iterations: None,
                    failure: Some(e.to_string()),
                });
                fields.push(None);
            }
        }
    }
    Ok(PenalizedPath {
        oracle,
        records,
        fields,
    })
}
