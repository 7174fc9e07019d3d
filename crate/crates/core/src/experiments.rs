//! End-to-end experiments driven by an [`ExperimentConfig`].
//!
//! Each run returns an [`ExperimentReport`] holding its pass/fail assertions and
//! the artifacts it produced as in-memory text. Nothing here touches the file
//! system or a clock, so identical configs give identical reports.

use serde::Serialize;

use crate::analysis::{
    classify, density_profile, dyadic_radii, fb_probe_points, nondegeneracy_report, symmetric_difference_measure,
    Verdict,
};
use crate::blowup::{
    blowup_sequence, pin_free_boundary, records_to_csv, BlowupOptions, BlowupRecord, PinnedSolution,
    ReferenceProfile, MIN_RESCALE_CELLS,
};
use crate::coefficients::{averaged_matrix, constant_field, radial_scalar_field, CoefficientField, RadialProfile, Sym2};
use crate::complementarity::{solve_obstacle_with, ObstacleSolution, SolverOptions};
use crate::config::{BoundarySpec, CoefficientSpec, ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::grid::{Ball, Grid, Point, ScalarField};
use crate::operator::assemble;
use crate::penalized::{penalized_path, NewtonOptions, ObstacleProblem};
use crate::report::{fmt_f64, CsvTable};
use crate::vmo::{
    bramanti_check, geometric_radii, psi_curve, radial_sampling_centers, vmo_modulus_with, MIN_BALL_CELLS,
};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Relative tolerance between the measured symmetric difference and the
/// strip area predicted from the one-dimensional offsets.
pub const OFFSET_PREDICTION_TOLERANCE: f64 = 0.2;

/// Smallest density radius used by the alternative experiment, in cells.
pub const ALTERNATIVE_MIN_RADIUS_CELLS: f64 = 16.0;

const MAX_FB_PROBES: usize = 24;
const MAX_INTERIOR_PROBES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    /// Pipeline that produced the report, e.g. `experiment` or `solve`.
    pub command: &'static str,
    pub experiment: ExperimentKind,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub assertions: Vec<Assertion>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

impl ExperimentReport {
    pub fn new(command: &'static str, config: &ExperimentConfig) -> Self {
        ExperimentReport {
            command,
            experiment: config.name(),
            version: VERSION,
            config: config.clone(),
            assertions: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn emit(&mut self, name: &str, contents: String) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents,
        });
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.contents.as_str())
    }

    /// Summary with the embedded config, version and assertions.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value["passed"] = serde_json::Value::Bool(self.passed());
        value["config_toml"] = serde_json::Value::String(self.config.to_toml());
        serde_json::to_string_pretty(&value).expect("report serializes")
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    match config.name() {
        ExperimentKind::Exact => run_exact(config),
        ExperimentKind::Stability => run_stability(config),
        ExperimentKind::Persistence => run_persistence(config),
        ExperimentKind::Alternative => run_alternative(config),
        ExperimentKind::Counterexample => run_counterexample(config),
        ExperimentKind::PenalizedPath => run_penalized_path(config),
    }
}

pub fn build_grid(config: &ExperimentConfig) -> Result<Grid> {
    let g = &config.grid;
    Grid::new(g.extent, g.n_cells, Point::new(g.center[0], g.center[1]))
}

pub fn build_coefficients(spec: &CoefficientSpec, grid: Grid) -> Result<CoefficientField> {
    if let Some(a) = spec.constant_matrix() {
        return constant_field(grid, a?);
    }
    let profile = spec.radial_profile().expect("every kind is constant or radial")?;
    radial_scalar_field(grid, &profile)
}

pub fn solver_options(config: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        tol: config.solver.tol,
        max_policies: config.solver.max_policies,
        ..SolverOptions::default()
    }
}

fn normal_of(n: [f64; 2]) -> Point {
    Point::new(n[0], n[1])
}

/// `q` for a half-space datum: `normal^T A normal` when the coefficients are
/// constant, 2 otherwise.
fn datum_q(coeffs: &CoefficientSpec, normal: Point) -> Result<f64> {
    match coeffs.constant_matrix() {
        Some(a) => Ok(a?.quadratic_form(normal)),
        None => Ok(2.0),
    }
}

/// Offset `beta` with `(1/(2q)) (1 - beta)^2 = level`.
pub fn level_offset(q: f64, level: f64) -> f64 {
    1.0 - (2.0 * q * level).sqrt()
}

/// Half-space profile `(1/(2q)) ((x . normal - beta)_+)^2`.
pub fn half_space_field(grid: Grid, q: f64, normal: Point, beta: f64) -> ScalarField {
    ScalarField::from_fn(grid, move |p| {
        let s = (p.dot(normal) - beta).max(0.0);
        s * s / (2.0 * q)
    })
}

/// Boundary datum for `spec` against the coefficients `coeffs`.
pub fn boundary_field(spec: &BoundarySpec, coeffs: &CoefficientSpec, grid: Grid) -> Result<ScalarField> {
    match *spec {
        BoundarySpec::HalfSpace { beta, normal, q } => {
            let nu = normal_of(normal);
            let q = match q {
                Some(q) => q,
                None => datum_q(coeffs, nu)?,
            };
            Ok(half_space_field(grid, q, nu, beta))
        }
        BoundarySpec::Level { level, normal } => {
            let nu = normal_of(normal);
            let q = datum_q(coeffs, nu)?;
            Ok(half_space_field(grid, q, nu, level_offset(q, level)))
        }
        BoundarySpec::Constant { value } => Ok(ScalarField::constant(grid, value)),
    }
}

fn solve(coeffs: &CoefficientField, psi: &ScalarField, opts: &SolverOptions) -> Result<ObstacleSolution> {
    let op = assemble(coeffs.grid(), coeffs)?;
    solve_obstacle_with(&op, psi, opts, None)
}

/// Exact half-space solution of the configured problem, if it has one.
fn exact_half_space(config: &ExperimentConfig) -> Result<(f64, Point, f64)> {
    let a = match config.coefficients.constant_matrix() {
        Some(a) => a?,
        None => {
            return Err(Error::Config {
                path: "coefficients.kind".into(),
                message: "the exact experiment needs constant coefficients".into(),
            })
        }
    };
    match config.boundary {
        BoundarySpec::HalfSpace { beta, normal, q } => {
            let nu = normal_of(normal);
            let qa = a.quadratic_form(nu);
            if let Some(q) = q {
                if (q - qa).abs() > 1e-12 * qa {
                    return Err(Error::Config {
                        path: "boundary.q".into(),
                        message: format!("must equal normal^T A normal = {qa} for an exact solution"),
                    });
                }
            }
            Ok((qa, nu, beta))
        }
        BoundarySpec::Level { level, normal } => {
            let nu = normal_of(normal);
            let qa = a.quadratic_form(nu);
            Ok((qa, nu, level_offset(qa, level)))
        }
        BoundarySpec::Constant { .. } => Err(Error::Config {
            path: "boundary.kind".into(),
            message: "the exact experiment needs a half-space datum".into(),
        }),
    }
}

/// Solves at `n` and `2n` and compares with the closed-form half-space solution.
pub fn run_exact(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("experiment", config);
    let (q, nu, beta) = exact_half_space(config)?;
    let opts = solver_options(config);
    let mut table = CsvTable::new(&["n_cells", "h", "sup_error", "residual", "policies"]);
    let mut errors = Vec::new();
    let mut coarse: Option<(Grid, ObstacleSolution)> = None;
    for level in 0..2 {
        let mut g = config.grid.clone();
        g.n_cells <<= level;
        let grid = Grid::new(g.extent, g.n_cells, Point::new(g.center[0], g.center[1]))?;
        let coeffs = build_coefficients(&config.coefficients, grid)?;
        let psi = boundary_field(&config.boundary, &config.coefficients, grid)?;
        let sol = solve(&coeffs, &psi, &opts)?;
        let exact = half_space_field(grid, q, nu, beta);
        let err = sol.w.max_abs_diff(&exact)?;
        table.push_row(vec![
            grid.n_cells().to_string(),
            fmt_f64(grid.h()),
            fmt_f64(err),
            fmt_f64(sol.diagnostics.residual),
            sol.diagnostics.policies.to_string(),
        ]);
        errors.push(err);
        if level == 0 {
            coarse = Some((grid, sol));
        }
    }
    let (grid, sol) = coarse.expect("level 0 ran");
    let h = grid.h();

    report.check(
        "sup_error_within_5h",
        errors[0] <= 5.0 * h,
        format!("||w - w*|| = {:e}, 5h = {:e}", errors[0], 5.0 * h),
    );

    // Contact cells may not sit above the plane and active cells may not sit
    // below it, each up to one cell.
    let mut worst: f64 = 0.0;
    for k in sol.contact.indices() {
        worst = worst.max(grid.center_of(k).dot(nu) - beta);
    }
    for k in sol.active.indices() {
        worst = worst.max(beta - grid.center_of(k).dot(nu));
    }
    report.check(
        "free_boundary_within_one_cell",
        worst <= h && !sol.fb_cells.is_empty(),
        format!("largest misplacement {:e}, h = {:e}, fb cells {}", worst, h, sol.fb_cells.count()),
    );

    let order = if errors[1] == 0.0 {
        f64::INFINITY
    } else {
        (errors[0] / errors[1]).log2()
    };
    report.check(
        "convergence_order_at_least_one",
        errors[0] == 0.0 || order >= 1.0,
        format!("observed order {order:.4}"),
    );

    report.emit("convergence.csv", table.render());
    report.emit("solution.field", sol.w.to_text());
    report.emit("contact.bitmap", sol.contact.to_bitmap());
    report.emit("diagnostics.json", sol.diagnostics_json(&config.coefficients.describe()));
    Ok(report)
}

pub fn run_penalized_path(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("experiment", config);
    let grid = build_grid(config)?;
    let h = grid.h();
    let coeffs = build_coefficients(&config.coefficients, grid)?;
    let psi = boundary_field(&config.boundary, &config.coefficients, grid)?;
    let problem = ObstacleProblem::new(coeffs, psi)?;
    let newton = NewtonOptions {
        tol: config.solver.tol,
        ..NewtonOptions::default()
    };
    let path = penalized_path(&problem, &config.analysis.eps_list, &newton)?;
    let slack = config.analysis.slack;
    report.check(
        "distance_nonincreasing",
        path.is_nonincreasing(slack),
        format!("relative slack {slack}"),
    );
    for rec in &path.records {
        let bound = 2.0 * rec.eps + 10.0 * h;
        let (ok, detail) = match (rec.distance_to_oracle, &rec.failure) {
            (Some(d), _) => (d <= bound, format!("distance {d:e}, bound {bound:e}")),
            (None, Some(f)) => (false, format!("solve failed: {f}")),
            (None, None) => (false, "no result".to_string()),
        };
        report.check(&format!("distance_within_bound_eps_{}", rec.eps), ok, detail);
    }
    report.emit("path.csv", path.to_csv());
    report.emit("oracle.field", path.oracle.w.to_text());
    Ok(report)
}

/// Area of `{s1 < x . normal - c . normal < s2}` inside a disc of radius `r`.
pub fn strip_area_in_disc(r: f64, s1: f64, s2: f64) -> f64 {
    let f = |s: f64| {
        let s = s.clamp(-r, r);
        s * (r * r - s * s).sqrt() + r * r * (s / r).asin()
    };
    (f(s2.max(s1)) - f(s1.min(s2))).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub delta: f64,
    pub area: Option<f64>,
    pub predicted_area: Option<f64>,
    pub sup_distance: Option<f64>,
    pub failure: Option<String>,
}

/// Solves with `(1 + delta) A` and with `A`, both under the datum built for
/// `(1 + delta) A`, and measures how far apart the two solutions are.
pub fn run_stability(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("experiment", config);
    let base = match config.coefficients.constant_matrix() {
        Some(a) => a?,
        None => {
            return Err(Error::Config {
                path: "coefficients.kind".into(),
                message: "the stability experiment perturbs a constant matrix".into(),
            })
        }
    };
    let grid = build_grid(config)?;
    let opts = solver_options(config);
    let window = Ball::new(grid.center(), 1.0f64.min(0.5 * grid.extent()));
    let window_cells = grid.ball_cells(window.center, window.radius);
    let base_coeffs = constant_field(grid, base)?;

    let mut rows = Vec::new();
    for &delta in &config.analysis.deltas {
        let perturbed = CoefficientSpec::Constant {
            matrix: [[base.a11 * (1.0 + delta), base.a12 * (1.0 + delta)], [
                base.a12 * (1.0 + delta),
                base.a22 * (1.0 + delta),
            ]],
        };
        let outcome = (|| -> Result<StabilityRow> {
            let coeffs = build_coefficients(&perturbed, grid)?;
            let psi = boundary_field(&config.boundary, &perturbed, grid)?;
            let w = solve(&coeffs, &psi, &opts)?;
            let u = solve(&base_coeffs, &psi, &opts)?;
            let area = symmetric_difference_measure(&u.contact, &w.contact, &window)?;
            let sup = u.w.max_abs_diff_on(&w.w, &window_cells)?;
            let predicted = match config.boundary {
                BoundarySpec::Level { level, normal } => {
                    let nu = normal_of(normal);
                    let c = window.center.dot(nu);
                    let bw = level_offset(Sym2::quadratic_form(&coeffs.at(0), nu), level);
                    let bu = level_offset(base.quadratic_form(nu), level);
                    Some(strip_area_in_disc(window.radius, bu - c, bw - c))
                }
                _ => None,
            };
            Ok(StabilityRow {
                delta,
                area: Some(area),
                predicted_area: predicted,
                sup_distance: Some(sup),
                failure: None,
            })
        })();
        rows.push(outcome.unwrap_or_else(|e| StabilityRow {
            delta,
            area: None,
            predicted_area: None,
            sup_distance: None,
            failure: Some(e.to_string()),
        }));
    }

    let slack = config.analysis.slack;
    let areas: Vec<Option<f64>> = rows.iter().map(|r| r.area).collect();
    let sups: Vec<Option<f64>> = rows.iter().map(|r| r.sup_distance).collect();
    report.check(
        "area_nonincreasing",
        nonincreasing(&areas, slack),
        format!("areas {:?}", areas),
    );
    report.check(
        "sup_distance_nonincreasing",
        nonincreasing(&sups, slack),
        format!("sup distances {:?}", sups),
    );
    for r in &rows {
        if let (Some(a), Some(p)) = (r.area, r.predicted_area) {
            let rel = if p > 0.0 { (a - p).abs() / p } else { a };
            report.check(
                &format!("area_matches_offset_prediction_delta_{}", r.delta),
                rel <= OFFSET_PREDICTION_TOLERANCE,
                format!("area {a:e}, predicted {p:e}, relative error {rel:.4}"),
            );
        }
        if let Some(f) = &r.failure {
            report.check(&format!("solve_delta_{}", r.delta), false, f.clone());
        }
    }

    let mut t = CsvTable::new(&["delta", "area", "predicted_area", "sup_distance", "failure"]);
    for r in &rows {
        t.push_row(vec![
            fmt_f64(r.delta),
            opt(r.area),
            opt(r.predicted_area),
            opt(r.sup_distance),
            r.failure.clone().unwrap_or_default().replace(',', ";"),
        ]);
    }
    report.emit("stability.csv", t.render());
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), fmt_f64)
}

fn nonincreasing(values: &[Option<f64>], slack: f64) -> bool {
    values.iter().all(Option::is_some)
        && values
            .windows(2)
            .all(|w| w[1].unwrap() <= w[0].unwrap() * (1.0 + slack) + 1e-14)
}

/// Fixed radial bump used by the persistence sweep: the oscillating profile
/// with phase speed 4, shifted to take values in `[0, 1]`.
pub fn persistence_bump() -> RadialProfile {
    let s = 4.0;
    let omega = RadialProfile::junction_radius(s, 1).expect("1 is odd");
    RadialProfile::counterexample(omega, s).expect("junction radius is continuous")
}

fn perturbed_field(base: Sym2, grid: Grid, center: Point, kappa: f64) -> Result<CoefficientField> {
    let bump = persistence_bump();
    let entries: Vec<Sym2> = (0..grid.len())
        .map(|k| {
            let r = grid.center_of(k).dist(center);
            let p = if r > 0.0 { bump.value(r) - 2.0 } else { 1.0 };
            base.scaled(1.0 + kappa * p)
        })
        .collect();
    CoefficientField::from_entries(grid, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VerdictCounts {
    pub regular: usize,
    pub singular: usize,
    pub undetermined: usize,
}

impl VerdictCounts {
    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Regular => self.regular += 1,
            Verdict::Singular => self.singular += 1,
            Verdict::Undetermined => self.undetermined += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.regular + self.singular + self.undetermined
    }
}

/// Evenly spaced subsequence of at most `max` items.
fn thin<T: Copy>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|i| items[i * items.len() / max]).collect()
}

fn probe_radii(config: &ExperimentConfig, grid: &Grid, min_cells: f64) -> Vec<f64> {
    if config.analysis.radii.is_empty() {
        dyadic_radii(config.analysis.r0, min_cells * grid.h())
    } else {
        config.analysis.radii.clone()
    }
}

/// FB probes whose largest ball fits in the grid and lies in `region`.
fn usable_fb_probes(sol: &ObstacleSolution, r_max: f64, region: &Ball) -> Vec<Point> {
    let grid = sol.grid();
    let h = grid.h();
    let probes: Vec<Point> = fb_probe_points(sol)
        .into_iter()
        .filter(|&p| region.contains(p) && grid.contains_ball(&Ball::new(p, r_max + h)))
        .collect();
    thin(&probes, MAX_FB_PROBES)
}

/// Perturbs a constant matrix by a radial bump centered on the free boundary
/// and classifies every probe in `B_{1/2}`.
pub fn run_persistence(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("experiment", config);
    let base = match config.coefficients.constant_matrix() {
        Some(a) => a?,
        None => {
            return Err(Error::Config {
                path: "coefficients.kind".into(),
                message: "the persistence experiment perturbs a constant matrix".into(),
            })
        }
    };
    let (beta, nu) = match config.boundary {
        BoundarySpec::HalfSpace { beta, normal, .. } => (beta, normal_of(normal)),
        BoundarySpec::Level { level, normal } => {
            let nu = normal_of(normal);
            (level_offset(base.quadratic_form(nu), level), nu)
        }
        BoundarySpec::Constant { .. } => {
            return Err(Error::Config {
                path: "boundary.kind".into(),
                message: "the persistence experiment needs a half-space datum".into(),
            })
        }
    };
    let grid = build_grid(config)?;
    let opts = solver_options(config);
    let a = &config.analysis;
    let radii = probe_radii(config, &grid, MIN_RESCALE_CELLS);
    let r_max = radii.first().copied().unwrap_or(a.r0);
    let region = Ball::new(grid.center(), 0.5);
    let shift = beta - grid.center().dot(nu);
    let bump_center = Point::new(grid.center().x + shift * nu.x, grid.center().y + shift * nu.y);
    let psi = boundary_field(&config.boundary, &config.coefficients, grid)?;

    let mut t = CsvTable::new(&["perturbation", "probes", "regular", "singular", "undetermined", "failure"]);
    let mut threshold: Option<f64> = None;
    let mut broken = false;
    let mut all_rows_regular = Vec::new();
    for &kappa in &a.perturbations {
        let outcome = (|| -> Result<VerdictCounts> {
            let coeffs = perturbed_field(base, grid, bump_center, kappa)?;
            let sol = solve(&coeffs, &psi, &opts)?;
            let mut counts = VerdictCounts::default();
            for p in usable_fb_probes(&sol, r_max, &region) {
                let prof = density_profile(&sol, p, &radii)?;
                counts.add(classify(&prof, a.eps, a.r0, a.tau)?.verdict);
            }
            Ok(counts)
        })();
        match outcome {
            Ok(c) => {
                let ok = c.total() > 0 && c.regular == c.total();
                all_rows_regular.push((kappa, ok));
                if ok && !broken {
                    threshold = Some(kappa);
                } else {
                    broken = true;
                }
                t.push_row(vec![
                    fmt_f64(kappa),
                    c.total().to_string(),
                    c.regular.to_string(),
                    c.singular.to_string(),
                    c.undetermined.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                broken = true;
                all_rows_regular.push((kappa, false));
                t.push_row(vec![
                    fmt_f64(kappa),
                    "0".into(),
                    "0".into(),
                    "0".into(),
                    "0".into(),
                    e.to_string().replace(',', ";"),
                ]);
            }
        }
    }
    report.notes.push(match threshold {
        Some(k) => format!("all probes regular up to perturbation {k}"),
        None => "no perturbation kept every probe regular".to_string(),
    });
    if let Some(&(k, ok)) = all_rows_regular.first() {
        report.check(
            "regular_at_smallest_perturbation",
            ok,
            format!("perturbation {k}"),
        );
    }
    report.emit("persistence.csv", t.render());
    Ok(report)
}

/// Density profiles at free-boundary, positivity and contact probes.
pub fn run_alternative(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let (_, sol) = solve_configured(config)?;
    let mut report = ExperimentReport::new("experiment", config);
    density_checks(config, &sol, &mut report)?;
    Ok(report)
}

/// Density profiles, verdicts and the intermediate-density check on a solved
/// problem, appended to `report`.
pub fn density_checks(config: &ExperimentConfig, sol: &ObstacleSolution, report: &mut ExperimentReport) -> Result<()> {
    let grid = *sol.grid();
    let h = grid.h();
    let a = &config.analysis;
    let radii = probe_radii(config, &grid, ALTERNATIVE_MIN_RADIUS_CELLS);
    let r_max = radii.first().copied().unwrap_or(a.r0);
    let everywhere = Ball::new(grid.center(), grid.extent());

    let fb = usable_fb_probes(&sol, r_max, &everywhere);
    let (omega, lambda) = interior_probes(&sol, r_max);
    if sol.contact.is_empty() {
        report.notes.push("no free boundary: the contact set is empty".to_string());
    }

    let mut densities = CsvTable::new(&["kind", "x", "y", "r", "g"]);
    let mut verdicts = CsvTable::new(&["kind", "x", "y", "verdict"]);
    let mut counts = VerdictCounts::default();
    let lo = 2.0 * a.eps;
    let hi = 0.5 - 2.0 * a.eps;
    let mut stuck = Vec::new();
    let mut fb_worst: f64 = 0.0;
    let mut omega_worst: f64 = 0.0;
    let mut lambda_worst: f64 = 0.0;
    for (kind, probes) in [("fb", &fb), ("positivity", &omega), ("contact", &lambda)] {
        for &p in probes.iter() {
            let prof = density_profile(&sol, p, &radii)?;
            for (r, g) in prof.radii.iter().zip(&prof.g_values) {
                densities.push_row(vec![kind.into(), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(*r), fmt_f64(*g)]);
            }
            let v = classify(&prof, a.eps, a.r0, a.tau)?;
            counts.add(v.verdict);
            verdicts.push_row(vec![kind.into(), fmt_f64(p.x), fmt_f64(p.y), format!("{:?}", v.verdict)]);
            let tail = &prof.g_values[prof.g_values.len().saturating_sub(3)..];
            if tail.len() == 3 && tail.iter().all(|&g| g >= lo && g <= hi) {
                stuck.push(p);
            }
            let dev = |target: f64| prof.g_values.iter().fold(0.0f64, |m, g| m.max((g - target).abs()));
            match kind {
                "fb" => fb_worst = fb_worst.max(dev(0.5)),
                "positivity" => omega_worst = omega_worst.max(dev(0.0)),
                _ => lambda_worst = lambda_worst.max(dev(1.0)),
            }
        }
    }

    report.check(
        "no_intermediate_density",
        stuck.is_empty(),
        format!("{} probes settle in [{lo}, {hi}]", stuck.len()),
    );
    if !fb.is_empty() {
        report.check(
            "fb_probes_near_half",
            fb_worst <= a.eps,
            format!("{} probes, largest |g - 1/2| = {fb_worst:.6}", fb.len()),
        );
    }
    if !omega.is_empty() {
        report.check(
            "positivity_probes_zero",
            omega_worst == 0.0,
            format!("{} probes, largest g = {omega_worst}", omega.len()),
        );
    }
    if !lambda.is_empty() {
        report.check(
            "contact_probes_one",
            lambda_worst == 0.0,
            format!("{} probes, smallest g = {}", lambda.len(), 1.0 - lambda_worst),
        );
    }
    report.notes.push(format!(
        "verdicts: {} regular, {} singular, {} undetermined (h = {h})",
        counts.regular, counts.singular, counts.undetermined
    ));
    report.emit("densities.csv", densities.render());
    report.emit("verdicts.csv", verdicts.render());
    report.emit("contact.bitmap", sol.contact.to_bitmap());
    Ok(())
}

/// Cell centers whose `r_max` ball (plus a cell) lies entirely in the
/// positivity set, respectively the contact set.
fn interior_probes(sol: &ObstacleSolution, r_max: f64) -> (Vec<Point>, Vec<Point>) {
    let grid = sol.grid();
    let n = grid.n_cells();
    let h = grid.h();
    let stride = (n / 16).max(1);
    let mut omega = Vec::new();
    let mut lambda = Vec::new();
    for j in (stride / 2..n).step_by(stride) {
        for i in (stride / 2..n).step_by(stride) {
            let p = grid.cell_center(i, j);
            let ball = Ball::new(p, r_max + h);
            if !grid.contains_ball(&ball) {
                continue;
            }
            let cells = grid.ball_indices(p, r_max + h);
            if cells.iter().all(|&k| sol.active.contains(k)) {
                omega.push(p);
            } else if cells.iter().all(|&k| sol.contact.contains(k)) {
                lambda.push(p);
            }
        }
    }
    (thin(&omega, MAX_INTERIOR_PROBES), thin(&lambda, MAX_INTERIOR_PROBES))
}

/// Coefficients and complementarity solution of the configured problem.
pub fn solve_configured(config: &ExperimentConfig) -> Result<(CoefficientField, ObstacleSolution)> {
    let grid = build_grid(config)?;
    let coeffs = build_coefficients(&config.coefficients, grid)?;
    let psi = boundary_field(&config.boundary, &config.coefficients, grid)?;
    let sol = solve(&coeffs, &psi, &solver_options(config))?;
    Ok((coeffs, sol))
}

/// Solves the configured problem and checks the solver's own guarantees.
pub fn run_solve(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (coeffs, sol) = solve_configured(config)?;
    let mut report = ExperimentReport::new("solve", config);
    let d = &sol.diagnostics;
    report.check(
        "residual_within_tol",
        d.residual <= config.solver.tol,
        format!("residual {:e}, tol {:e}", d.residual, config.solver.tol),
    );
    report.check(
        "monotone_stencil",
        d.monotonicity.is_monotone(),
        format!("{} cells with a negative off-center weight", d.monotonicity.violations),
    );
    report.emit("solution.field", sol.w.to_text());
    report.emit("contact.bitmap", sol.contact.to_bitmap());
    report.emit("coefficients.field", coeffs.to_text());
    report.emit("diagnostics.json", sol.diagnostics_json(&config.coefficients.describe()));
    Ok(report)
}

/// Solve, then densities, verdicts and nondegeneracy at free-boundary probes.
pub fn run_analyze(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (coeffs, sol) = solve_configured(config)?;
    let mut report = ExperimentReport::new("analyze", config);
    density_checks(config, &sol, &mut report)?;

    let grid = *sol.grid();
    let h = grid.h();
    let radii: Vec<f64> = probe_radii(config, &grid, MIN_RESCALE_CELLS);
    let r_max = radii.first().copied().unwrap_or(config.analysis.r0);
    let centers = usable_fb_probes(&sol, r_max, &Ball::new(grid.center(), grid.extent()));
    if centers.is_empty() || radii.is_empty() {
        report.notes.push("nondegeneracy skipped: no usable free-boundary probes".to_string());
    } else {
        let op = assemble(&grid, &coeffs)?;
        let nd = nondegeneracy_report(&sol, &op, &centers, &radii, 2.0 * h * h)?;
        let worst = nd.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        report.check(
            "nondegeneracy",
            nd.holds(),
            format!("constant {}, smallest margin {worst:e}, slack 2h^2", nd.constant),
        );
        report.emit("nondegeneracy.csv", nd.to_csv());
    }
    Ok(report)
}

/// VMO modulus of the coefficient field and, for radial profiles, the
/// one-dimensional `psi` curve and the radial criterion.
pub fn run_vmo(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let grid = build_grid(config)?;
    let h = grid.h();
    let coeffs = build_coefficients(&config.coefficients, grid)?;
    let field = ScalarField::from_values(grid, (0..grid.len()).map(|k| coeffs.at(k).a11).collect())?;
    let mut report = ExperimentReport::new("vmo", config);

    let radii = dyadic_radii(0.125 * grid.extent(), MIN_BALL_CELLS * h);
    let profile = config.coefficients.radial_profile().transpose()?;
    let jumps = profile
        .map(|p| p.jump_radii(MIN_BALL_CELLS * h, grid.extent()))
        .unwrap_or_default();
    let centers = radial_sampling_centers(&grid, grid.center(), &jumps);
    let eta = vmo_modulus_with(&field, &radii, &centers)?;
    report.emit("vmo.csv", eta.to_csv());

    match profile {
        None => {
            let top = eta.eta_values.iter().copied().fold(0.0, f64::max);
            report.check("constant_modulus_zero", top == 0.0, format!("largest eta {top:e}"));
        }
        Some(p) => {
            let big_r = 0.5;
            let radii_1d = geometric_radii(0.25, 0.5, 14);
            let psi = psi_curve(&p, &radii_1d)?;
            report.emit("psi.csv", psi.to_csv());
            let br = bramanti_check(&p, big_r, &radii_1d)?;
            report.emit(
                "bramanti.json",
                serde_json::to_string_pretty(&br).expect("report serializes"),
            );
            report.check(
                "bramanti_conditions_hold",
                br.all_hold(),
                br.conditions
                    .iter()
                    .map(|c| format!("{}: {:?}", c.name, c.status))
                    .collect::<Vec<_>>()
                    .join("; "),
            );
        }
    }
    Ok(report)
}

/// Pins the free boundary to the grid center and records blowups over the
/// full radius sweep against the `2I` and `3I` profiles.
pub fn run_blowup(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let grid = build_grid(config)?;
    let coeffs = build_coefficients(&config.coefficients, grid)?;
    let nu = Point::new(0.0, 1.0);
    let refs = [
        ReferenceProfile::new("two", Sym2::scalar(2.0), nu)?,
        ReferenceProfile::new("three", Sym2::scalar(3.0), nu)?,
    ];
    let radii = if config.analysis.radii.is_empty() {
        candidate_radii(&grid, 1.0)
    } else {
        config.analysis.radii.clone()
    };
    let run = pin_and_blow_up(&coeffs, config, &radii, &[], &refs)?;
    let mut report = ExperimentReport::new("blowup", config);
    let lowest = run.even.iter().map(|r| r.min_value).fold(f64::INFINITY, f64::min);
    report.check(
        "rescalings_nonnegative",
        lowest >= -config.solver.tol,
        format!("smallest rescaled value {lowest:e}"),
    );
    report.emit("pinning.csv", pinning_csv(&run.pinned));
    report.emit("blowup.csv", records_to_csv(&run.even));
    Ok(report)
}

/// One pinned problem and its blowups on the two radius subsequences.
#[derive(Debug, Clone)]
pub struct SplitRun {
    pub pinned: PinnedSolution,
    pub even: Vec<BlowupRecord>,
    pub odd: Vec<BlowupRecord>,
}

/// How the radius subsequences were picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RadiusSelection {
    /// Averaged coefficient within the configured band of 3 and of 2.
    Band,
    /// Neither band was reached; local maxima and minima of the averaged
    /// coefficient stand in for the even and odd phases.
    Extrema,
}

/// Candidate radii for blowups: geometric from the largest rescalable radius
/// down to `MIN_RESCALE_CELLS` cells.
pub fn candidate_radii(grid: &Grid, out_reach: f64) -> Vec<f64> {
    let r_max = 0.9 * (0.5 * grid.extent() - grid.h()) / out_reach;
    let r_min = MIN_RESCALE_CELLS * grid.h();
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= r_min {
        out.push(r);
        r *= 0.93;
    }
    out
}

/// Splits `radii` into even-phase and odd-phase subsequences by the scalar
/// average `tr(A_r)/2`.
pub fn select_radii(radii: &[f64], averages: &[f64], band: f64) -> (Vec<f64>, Vec<f64>, RadiusSelection) {
    let pick = |target: f64| -> Vec<f64> {
        radii
            .iter()
            .zip(averages)
            .filter(|(_, &a)| (a - target).abs() <= band)
            .map(|(&r, _)| r)
            .collect()
    };
    let (even, odd) = (pick(3.0), pick(2.0));
    if !even.is_empty() && !odd.is_empty() {
        return (even, odd, RadiusSelection::Band);
    }
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for k in 1..averages.len().saturating_sub(1) {
        let (a, b, c) = (averages[k - 1], averages[k], averages[k + 1]);
        if b > a && b >= c {
            even.push(radii[k]);
        } else if b < a && b <= c {
            odd.push(radii[k]);
        }
    }
    (even, odd, RadiusSelection::Extrema)
}

fn pin_and_blow_up(
    coeffs: &CoefficientField,
    config: &ExperimentConfig,
    even: &[f64],
    odd: &[f64],
    refs: &[ReferenceProfile],
) -> Result<SplitRun> {
    let grid = *coeffs.grid();
    let op = assemble(&grid, coeffs)?;
    let nu = Point::new(0.0, 1.0);
    let q = match config.boundary {
        BoundarySpec::HalfSpace { q: Some(q), .. } => q,
        _ => 2.0,
    };
    let bracket = config
        .analysis
        .beta_bracket
        .map(|[a, b]| (a, b))
        .unwrap_or((-0.3 * grid.extent(), 0.3 * grid.extent()));
    let pinned = pin_free_boundary(
        &op,
        |beta| half_space_field(grid, q, nu, beta),
        bracket,
        &solver_options(config),
    )?;
    let opts = BlowupOptions {
        out_cells: config.analysis.blowup_cells,
        window: config.analysis.window,
        collar_cells: config.analysis.collar_cells,
    };
    let center = grid.center();
    let even = blowup_sequence(&pinned.solution.w, coeffs, center, even, refs, &opts)?;
    let odd = blowup_sequence(&pinned.solution.w, coeffs, center, odd, refs, &opts)?;
    Ok(SplitRun { pinned, even, odd })
}

/// Smallest ratio `distance(mismatched) / distance(matched)` over a subsequence.
fn worst_ratio(records: &[BlowupRecord], matched: &str, mismatched: &str) -> f64 {
    records
        .iter()
        .map(|r| {
            let m = r.fit(matched).map_or(f64::INFINITY, |f| f.distance);
            let x = r.fit(mismatched).map_or(0.0, |f| f.distance);
            if m == 0.0 {
                if x > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            } else {
                x / m
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn split_holds(run: &SplitRun, margin: f64) -> (bool, f64, f64) {
    let even = worst_ratio(&run.even, "three", "two");
    let odd = worst_ratio(&run.odd, "two", "three");
    let ok = !run.even.is_empty() && !run.odd.is_empty() && even >= margin && odd >= margin;
    (ok, even, odd)
}

/// Pins the free boundary to the origin under oscillating coefficients and
/// compares blowups on the two phase subsequences with the `2I` and `3I`
/// half-space profiles.
pub fn run_counterexample(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("experiment", config);
    let profile = match config.coefficients.radial_profile() {
        Some(Ok(p @ RadialProfile::Oscillating { .. })) => p,
        Some(Err(e)) => return Err(e),
        _ => {
            return Err(Error::Config {
                path: "coefficients.kind".into(),
                message: "the counterexample experiment needs oscillating coefficients".into(),
            })
        }
    };
    let grid = build_grid(config)?;
    let coeffs = radial_scalar_field(grid, &profile)?;
    let a = &config.analysis;
    let nu = Point::new(0.0, 1.0);
    let refs = [
        ReferenceProfile::new("two", Sym2::scalar(2.0), nu)?,
        ReferenceProfile::new("three", Sym2::scalar(3.0), nu)?,
    ];

    let radii = if a.radii.is_empty() {
        candidate_radii(&grid, 1.0)
    } else {
        a.radii.clone()
    };
    let mut averages = Vec::with_capacity(radii.len());
    for &r in &radii {
        averages.push(averaged_matrix(&coeffs, grid.center(), r)?.trace() / 2.0);
    }
    let (even, odd, selection) = select_radii(&radii, &averages, a.phase_band);
    let mut t = CsvTable::new(&["r", "average", "phase"]);
    for (r, avg) in radii.iter().zip(&averages) {
        let phase = if even.contains(r) {
            "even"
        } else if odd.contains(r) {
            "odd"
        } else {
            ""
        };
        t.push_row(vec![fmt_f64(*r), fmt_f64(*avg), phase.into()]);
    }
    report.emit("radii.csv", t.render());
    if selection == RadiusSelection::Extrema {
        let lo = averages.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = averages.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.notes.push(format!(
            "averaged coefficient stays in [{lo:.4}, {hi:.4}], outside the {} band of 2 or 3; \
             using its local extrema instead",
            a.phase_band
        ));
    }

    let run = pin_and_blow_up(&coeffs, config, &even, &odd, &refs)?;
    report.emit("pinning.csv", pinning_csv(&run.pinned));
    report.emit("blowup_even.csv", records_to_csv(&run.even));
    report.emit("blowup_odd.csv", records_to_csv(&run.odd));
    report.emit("pinned.field", run.pinned.solution.w.to_text());

    let (_, even_ratio, odd_ratio) = split_holds(&run, a.margin);
    report.check(
        "even_phase_closer_to_three",
        !run.even.is_empty() && even_ratio >= a.margin,
        format!("{} radii, worst ratio {even_ratio:.4}, margin {}", run.even.len(), a.margin),
    );
    report.check(
        "odd_phase_closer_to_two",
        !run.odd.is_empty() && odd_ratio >= a.margin,
        format!("{} radii, worst ratio {odd_ratio:.4}, margin {}", run.odd.len(), a.margin),
    );

    if a.control_scale > 0.0 {
        let control = constant_field(grid, Sym2::scalar(a.control_scale))?;
        let ctl = pin_and_blow_up(&control, config, &even, &odd, &refs)?;
        let (split, e, o) = split_holds(&ctl, a.margin);
        report.check(
            "control_shows_no_split",
            !split,
            format!("control {}I: even ratio {e:.4}, odd ratio {o:.4}", a.control_scale),
        );
        report.emit("control_pinning.csv", pinning_csv(&ctl.pinned));
        report.emit("control_even.csv", records_to_csv(&ctl.even));
        report.emit("control_odd.csv", records_to_csv(&ctl.odd));
    }
    Ok(report)
}

fn pinning_csv(p: &PinnedSolution) -> String {
    let mut t = CsvTable::new(&["beta", "bracket_lo", "bracket_hi", "solves"]);
    t.push_row(vec![
        fmt_f64(p.beta),
        fmt_f64(p.bracket.0),
        fmt_f64(p.bracket.1),
        p.solves.to_string(),
    ]);
    t.render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn config(kind: ExperimentKind, n: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.grid.n_cells = n;
        c
    }

    #[test]
    fn strip_area_examples() {
        assert!((strip_area_in_disc(1.0, -1.0, 1.0) - PI).abs() < 1e-12);
        assert!((strip_area_in_disc(1.0, 0.0, 1.0) - PI / 2.0).abs() < 1e-12);
        // thin strip through the center: about 2 * width * r
        let a = strip_area_in_disc(1.0, -0.001, 0.001);
        assert!((a - 0.004).abs() < 1e-8);
        assert_eq!(strip_area_in_disc(1.0, 0.2, 0.1), strip_area_in_disc(1.0, 0.1, 0.2));
    }

    #[test]
    fn level_offset_hits_the_level() {
        for q in [1.0, 1.5, 2.0] {
            let b = level_offset(q, 0.845);
            assert!(((1.0 - b).powi(2) / (2.0 * q) - 0.845).abs() < 1e-12);
        }
        assert!((level_offset(1.0, 0.845) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_run_passes_at_small_size() {
        let r = run(&config(ExperimentKind::Exact, 32)).unwrap();
        assert!(r.passed(), "{:#?}", r.assertions);
        assert!(r.artifact("convergence.csv").unwrap().starts_with("n_cells,h,sup_error"));
    }

    #[test]
    fn exact_needs_constant_coefficients() {
        let mut c = config(ExperimentKind::Exact, 32);
        c.coefficients = CoefficientSpec::Counterexample {
            phase_speed: 4.0,
            omega: None,
        };
        assert!(matches!(run(&c), Err(Error::Config { .. })));
    }

    #[test]
    fn zero_perturbation_gives_identical_problems() {
        let mut c = config(ExperimentKind::Stability, 32);
        c.analysis.deltas = vec![0.0];
        c.boundary = BoundarySpec::Level {
            level: 0.845,
            normal: [0.0, 1.0],
        };
        let r = run(&c).unwrap();
        let csv = r.artifact("stability.csv").unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn persistence_rejects_non_elliptic_perturbations() {
        let mut c = config(ExperimentKind::Persistence, 64);
        c.analysis.perturbations = vec![0.0, -2.0];
        c.analysis.r0 = 0.25;
        let r = run(&c).unwrap();
        assert!(r.assertion("regular_at_smallest_perturbation").unwrap().passed);
        let csv = r.artifact("persistence.csv").unwrap();
        let last = csv.lines().last().unwrap();
        assert!(last.contains("elliptic"), "{last}");
    }

    #[test]
    fn alternative_on_half_space() {
        let r = run(&config(ExperimentKind::Alternative, 64)).unwrap();
        assert!(r.passed(), "{:#?}", r.assertions);
        assert!(r.assertion("fb_probes_near_half").is_some());
        assert!(r.assertion("positivity_probes_zero").is_some());
    }

    #[test]
    fn alternative_without_contact_set() {
        let mut c = config(ExperimentKind::Alternative, 32);
        c.boundary = BoundarySpec::Constant { value: 10.0 };
        let r = run(&c).unwrap();
        assert!(r.notes.iter().any(|n| n.contains("no free boundary")));
    }

    #[test]
    fn alternative_with_radial_data() {
        let mut c = config(ExperimentKind::Alternative, 64);
        c.boundary = BoundarySpec::Constant { value: 0.05 };
        c.analysis.r0 = 0.125;
        let r = run(&c).unwrap();
        assert!(r.assertion("no_intermediate_density").unwrap().passed, "{:#?}", r.assertions);
    }

    #[test]
    fn radius_selection_prefers_bands() {
        let radii = [0.4, 0.3, 0.2, 0.1];
        let (e, o, s) = select_radii(&radii, &[2.05, 2.5, 2.95, 2.5], 0.1);
        assert_eq!((e, o, s), (vec![0.2], vec![0.4], RadiusSelection::Band));
        let (e, o, s) = select_radii(&radii, &[2.5, 2.7, 2.3, 2.6], 0.1);
        assert_eq!((e, o, s), (vec![0.3], vec![0.2], RadiusSelection::Extrema));
    }

    #[test]
    fn reports_are_deterministic() {
        let c = config(ExperimentKind::Alternative, 32);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.artifacts, b.artifacts);
        assert_eq!(a.to_json(), b.to_json());
    }
}
