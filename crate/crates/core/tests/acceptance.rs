//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing every line so that a known failure does not hide the
//! others; set `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::time::Instant;

use obstacle_core::analysis::fb_probe_points;
use obstacle_core::blowup::pin_free_boundary;
use obstacle_core::coefficients::{constant_field, radial_scalar_field, RadialProfile, Sym2};
use obstacle_core::complementarity::{solve_obstacle_with, ObstacleSolution, SolverOptions};
use obstacle_core::config::{BoundarySpec, CoefficientSpec, ExperimentConfig, ExperimentKind};
use obstacle_core::experiments::{self, ExperimentReport};
use obstacle_core::grid::{Grid, Point, ScalarField};
use obstacle_core::operator::assemble;

type Outcome = Result<(bool, String), String>;

fn config(kind: ExperimentKind, n: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind);
    c.grid.n_cells = n;
    c
}

fn failed(report: &ExperimentReport) -> Vec<String> {
    report
        .assertions
        .iter()
        .filter(|a| !a.passed)
        .map(|a| format!("{} ({})", a.name, a.detail))
        .collect()
}

fn csv_column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let k = header.iter().position(|h| *h == name).expect("column exists");
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

/// `1/2 ((y - 0.3)_+)^2`, computed here rather than taken from the library.
fn manufactured(p: Point) -> f64 {
    0.5 * (p.y - 0.3).max(0.0).powi(2)
}

fn sup_on_ball(w: &ScalarField, c: Point, r: f64) -> f64 {
    let g = w.grid();
    let n = g.n_cells();
    let mut best = f64::NEG_INFINITY;
    for j in 0..n {
        for i in 0..n {
            let p = g.cell_center(i, j);
            if (p.x - c.x).hypot(p.y - c.y) <= r {
                best = best.max(w.at(i, j));
            }
        }
    }
    best
}

fn contact_density(sol: &ObstacleSolution, c: Point, r: f64) -> f64 {
    let g = sol.grid();
    let n = g.n_cells();
    let (mut inside, mut hit) = (0usize, 0usize);
    for j in 0..n {
        for i in 0..n {
            let p = g.cell_center(i, j);
            if (p.x - c.x).hypot(p.y - c.y) <= r {
                inside += 1;
                if sol.contact.contains(g.index(i, j)) {
                    hit += 1;
                }
            }
        }
    }
    hit as f64 / inside as f64
}

fn solve_identity(n: usize, shift: f64) -> Result<ObstacleSolution, String> {
    let grid = Grid::new(2.0, n, Point::ORIGIN).map_err(|e| e.to_string())?;
    let coeffs = constant_field(grid, Sym2::scalar(1.0)).map_err(|e| e.to_string())?;
    let op = assemble(&grid, &coeffs).map_err(|e| e.to_string())?;
    let psi = ScalarField::from_fn(grid, |p| manufactured(p) + shift);
    solve_obstacle_with(&op, &psi, &SolverOptions::default(), None).map_err(|e| e.to_string())
}

fn exact_solution() -> Outcome {
    let t = Instant::now();
    let report = experiments::run(&config(ExperimentKind::Exact, 128)).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    // independent check of the stored error against the closed form
    let sol = solve_identity(128, 0.0)?;
    let h = sol.grid().h();
    let err = sol
        .w
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - manufactured(sol.grid().center_of(k))).abs())
        .fold(0.0, f64::max);
    let order = report.assertion("convergence_order_at_least_one").map(|a| a.detail.clone());
    let bad = failed(&report);
    let ok = bad.is_empty() && err <= 5.0 * h && secs <= 30.0;
    Ok((
        ok,
        format!(
            "sup error {err:.3e} vs 5h {:.3e}, {}, {secs:.1}s{}",
            5.0 * h,
            order.unwrap_or_default(),
            if bad.is_empty() { String::new() } else { format!("; failed {bad:?}") }
        ),
    ))
}

fn penalized_path() -> Outcome {
    let report = experiments::run(&config(ExperimentKind::PenalizedPath, 128)).map_err(|e| e.to_string())?;
    let csv = report.artifact("path.csv").ok_or("no path.csv")?;
    let eps = csv_column(csv, "eps");
    let dist = csv_column(csv, "distance_to_oracle");
    let h = 2.0 / 128.0;
    let within = eps.iter().zip(&dist).all(|(e, d)| *d <= 2.0 * e + 10.0 * h);
    let monotone = dist.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let bad = failed(&report);
    Ok((
        within && monotone && bad.is_empty(),
        format!("distances {:?} for eps {:?}", dist.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>(), eps),
    ))
}

fn comparison() -> Outcome {
    // Anisotropic but diagonally dominant, so the stencil stays monotone.
    let grid = Grid::new(2.0, 128, Point::ORIGIN).map_err(|e| e.to_string())?;
    let a = Sym2::from_rows([[1.5, 0.3], [0.3, 1.0]]).map_err(|e| e.to_string())?;
    let coeffs = constant_field(grid, a).map_err(|e| e.to_string())?;
    let op = assemble(&grid, &coeffs).map_err(|e| e.to_string())?;
    let monotone = op.monotonicity_report().is_monotone();
    let q = a.quadratic_form(Point::new(0.0, 1.0));
    let psi = ScalarField::from_fn(grid, move |p| (p.y - 0.3).max(0.0).powi(2) / (2.0 * q));
    let shifted = psi.map(|v| v + 0.05);
    let opts = SolverOptions::default();
    let w1 = solve_obstacle_with(&op, &psi, &opts, None).map_err(|e| e.to_string())?;
    let w2 = solve_obstacle_with(&op, &shifted, &opts, None).map_err(|e| e.to_string())?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in w1.w.values().iter().zip(w2.w.values()) {
        lo = lo.min(b - a);
        hi = hi.max(b - a);
    }
    let ok = monotone && lo >= -1e-8 && hi <= 0.05 + 1e-8;
    Ok((ok, format!("w2 - w1 in [{lo:.3e}, {hi:.6e}], monotone stencil {monotone}")))
}

fn nondegeneracy() -> Outcome {
    let sol = solve_identity(128, 0.0)?;
    let grid = *sol.grid();
    let h = grid.h();
    let centers: Vec<Point> = fb_probe_points(&sol)
        .into_iter()
        .filter(|p| p.x.abs() <= 0.5 && p.y + 0.4 < 1.0)
        .collect();
    if centers.is_empty() {
        return Err("no free-boundary points".into());
    }
    let mut worst = f64::INFINITY;
    for &c in &centers {
        for r in [0.1, 0.2, 0.4] {
            worst = worst.min(sup_on_ball(&sol.w, c, r) - (r * r / 4.0 - 2.0 * h * h));
        }
    }
    Ok((worst >= 0.0, format!("{} centers, smallest sup - (r^2/4 - 2h^2) = {worst:.4e}", centers.len())))
}

fn pinned_growth(n: usize) -> Result<(f64, f64), String> {
    let grid = Grid::new(2.0, n, Point::ORIGIN).map_err(|e| e.to_string())?;
    let s = 4.0;
    let omega = RadialProfile::junction_radius(s, 1).map_err(|e| e.to_string())?;
    let profile = RadialProfile::counterexample(omega, s).map_err(|e| e.to_string())?;
    let coeffs = radial_scalar_field(grid, &profile).map_err(|e| e.to_string())?;
    let op = assemble(&grid, &coeffs).map_err(|e| e.to_string())?;
    let pinned = pin_free_boundary(
        &op,
        |b| ScalarField::from_fn(grid, move |p| 0.25 * (p.y - b).max(0.0).powi(2)),
        (-0.6, 0.6),
        &SolverOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let h = grid.h();
    let mut radii = Vec::new();
    let mut r = 0.5;
    while r >= 8.0 * h {
        radii.push(r);
        r *= 0.8;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &r in &radii {
        let sup = sup_on_ball(&pinned.solution.w, grid.center(), r);
        num += sup * r * r;
        den += r.powi(4);
    }
    Ok((num / den, pinned.beta))
}

fn parabolic_bound() -> Outcome {
    let (c1, b1) = pinned_growth(128)?;
    let (c2, b2) = pinned_growth(256)?;
    let change = (c2 - c1).abs() / c1;
    Ok((
        change <= 0.1,
        format!("fitted constant {c1:.5} -> {c2:.5} (change {:.2}%), pinned beta {b1:.5} / {b2:.5}", 100.0 * change),
    ))
}

fn density_alternative() -> Outcome {
    let n = 256;
    let report = experiments::run(&config(ExperimentKind::Alternative, n)).map_err(|e| e.to_string())?;
    let sol = solve_identity(n, 0.0)?;
    let h = sol.grid().h();
    let mut radii = Vec::new();
    let mut r = 0.25;
    while r >= 16.0 * h {
        radii.push(r);
        r *= 0.75;
    }
    let probes: Vec<Point> = fb_probe_points(&sol)
        .into_iter()
        .filter(|p| p.x.abs() <= 0.6)
        .step_by(8)
        .collect();
    let mut fb_worst: f64 = 0.0;
    for &p in &probes {
        for &r in &radii {
            fb_worst = fb_worst.max((contact_density(&sol, p, r) - 0.5).abs());
        }
    }
    let interior = [Point::new(0.0, 0.65), Point::new(-0.3, 0.7), Point::new(0.3, 0.62)];
    let omega_worst = interior
        .iter()
        .flat_map(|&p| radii.iter().map(move |&r| (p, r)))
        .filter(|(p, r)| p.y - r > 0.3 + h)
        .map(|(p, r)| contact_density(&sol, p, r))
        .fold(0.0, f64::max);
    let bad = failed(&report);
    let ok = bad.is_empty() && fb_worst <= 0.05 && omega_worst == 0.0 && report.assertion("no_intermediate_density").is_some();
    Ok((
        ok,
        format!(
            "{} fb probes, max |g - 1/2| = {fb_worst:.4}; interior max g = {omega_worst}{}",
            probes.len(),
            if bad.is_empty() { String::new() } else { format!("; failed {bad:?}") }
        ),
    ))
}

fn measure_stability() -> Outcome {
    let mut c = config(ExperimentKind::Stability, 256);
    // Top edge at y = 1 and side walls far from the comparison window.
    c.grid.extent = 4.0;
    c.grid.center = [0.0, -1.0];
    c.boundary = BoundarySpec::Level {
        level: 0.845,
        normal: [0.0, 1.0],
    };
    let report = experiments::run(&c).map_err(|e| e.to_string())?;
    let csv = report.artifact("stability.csv").ok_or("no stability.csv")?;
    let area = csv_column(csv, "area");
    let predicted = csv_column(csv, "predicted_area");
    let sup = csv_column(csv, "sup_distance");
    // oracle: strip between the two offsets inside the unit disc around (0, -1)
    let strip = |s1: f64, s2: f64| {
        let f = |s: f64| {
            let s = s.clamp(-1.0, 1.0);
            s * (1.0 - s * s).sqrt() + s.asin()
        };
        (f(s2.max(s1)) - f(s1.min(s2))).abs()
    };
    let offset = |a: f64| 1.0 - (2.0 * a * 0.845f64).sqrt();
    let mut rel_worst: f64 = 0.0;
    for (k, d) in [0.2, 0.1, 0.05].iter().enumerate() {
        let p = strip(offset(1.0) + 1.0, offset(1.0 + d) + 1.0);
        if (p - predicted[k]).abs() > 1e-9 * p {
            return Err(format!("predicted area {} disagrees with {p}", predicted[k]));
        }
        rel_worst = rel_worst.max((area[k] - p).abs() / p);
    }
    let strictly = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let ok = strictly(&area) && strictly(&sup) && rel_worst <= 0.2;
    Ok((
        ok,
        format!(
            "areas {:?}, sup distances {:?}, worst relative area error {:.2}%",
            area.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            sup.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            100.0 * rel_worst
        ),
    ))
}

fn blowup_nonuniqueness() -> Outcome {
    let t = Instant::now();
    let mut c = config(ExperimentKind::Counterexample, 512);
    c.grid.extent = 0.5;
    c.coefficients = CoefficientSpec::Counterexample {
        phase_speed: 4.0,
        omega: None,
    };
    c.analysis.control_scale = 2.5;
    let report = experiments::run(&c).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let detail = |name: &str| {
        report
            .assertion(name)
            .map(|a| format!("{name}: {} [{}]", if a.passed { "yes" } else { "no" }, a.detail))
            .unwrap_or_else(|| format!("{name}: missing"))
    };
    let ok = report.passed() && report.assertions.len() == 3 && secs <= 600.0;
    Ok((
        ok,
        format!(
            "{}; {}; {}; {secs:.0}s{}",
            detail("even_phase_closer_to_three"),
            detail("odd_phase_closer_to_two"),
            detail("control_shows_no_split"),
            report.notes.iter().map(|n| format!("; {n}")).collect::<String>()
        ),
    ))
}

fn vmo_tools() -> Outcome {
    let n = 256;
    let constant = experiments::run_vmo(&config(ExperimentKind::Exact, n)).map_err(|e| e.to_string())?;
    let eta0 = csv_column(constant.artifact("vmo.csv").ok_or("no vmo.csv")?, "value");
    let constant_ok = eta0.iter().all(|&e| e == 0.0);

    let mut osc = config(ExperimentKind::Exact, n);
    osc.coefficients = CoefficientSpec::Counterexample {
        phase_speed: 4.0,
        omega: None,
    };
    let osc = experiments::run_vmo(&osc).map_err(|e| e.to_string())?;
    let bramanti = osc.assertion("bramanti_conditions_hold").map(|a| a.passed).unwrap_or(false);
    let psi_csv = osc.artifact("psi.csv").ok_or("no psi.csv")?;
    let psi_r = csv_column(psi_csv, "r");
    let psi = csv_column(psi_csv, "value");
    let decades = (psi_r[0] / psi_r[psi_r.len() - 1]).log10();
    // least-squares slope of ln psi against ln r; positive means psi shrinks with r
    let pts: Vec<(f64, f64)> = psi_r.iter().zip(&psi).map(|(r, v)| (r.ln(), v.ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let psi_ok = decades >= 2.0 && slope > 0.0;

    let mut dy = config(ExperimentKind::Exact, n);
    dy.coefficients = CoefficientSpec::DyadicSteps { low: 1.0, high: 2.0 };
    let dy = experiments::run_vmo(&dy).map_err(|e| e.to_string())?;
    let eta_dy = csv_column(dy.artifact("vmo.csv").ok_or("no vmo.csv")?, "value");
    let eta_min = eta_dy.iter().copied().fold(f64::INFINITY, f64::min);
    let flagged = dy.assertion("bramanti_conditions_hold").map(|a| !a.passed).unwrap_or(false);

    let ok = constant_ok && bramanti && psi_ok && eta_min >= 0.2 && flagged;
    Ok((
        ok,
        format!(
            "constant eta max {:e}; oscillating: criterion {bramanti}, psi trend slope {slope:.4} over {decades:.1} decades; \
             dyadic: min eta {eta_min:.4}, hypothesis failure flagged {flagged}",
            eta0.iter().copied().fold(0.0, f64::max)
        ),
    ))
}

fn determinism() -> Outcome {
    let mut stab = config(ExperimentKind::Stability, 64);
    stab.boundary = BoundarySpec::Level {
        level: 0.845,
        normal: [0.0, 1.0],
    };
    let mut osc = config(ExperimentKind::Exact, 128);
    osc.coefficients = CoefficientSpec::Counterexample {
        phase_speed: 4.0,
        omega: None,
    };
    let runs: Vec<(&str, Box<dyn Fn() -> obstacle_core::Result<ExperimentReport>>)> = vec![
        ("alternative", Box::new(|| experiments::run(&config(ExperimentKind::Alternative, 64)))),
        ("stability", Box::new(move || experiments::run(&stab))),
        ("penalized-path", Box::new(|| experiments::run(&config(ExperimentKind::PenalizedPath, 32)))),
        ("vmo", Box::new(move || experiments::run_vmo(&osc))),
    ];
    let mut compared = 0;
    for (name, f) in &runs {
        let a = f().map_err(|e| format!("{name}: {e}"))?;
        let b = f().map_err(|e| format!("{name}: {e}"))?;
        for (x, y) in a.artifacts.iter().zip(&b.artifacts) {
            if !x.name.ends_with(".csv") {
                continue;
            }
            if x.name != y.name || x.contents.as_bytes() != y.contents.as_bytes() {
                return Ok((false, format!("{name}: {} differs", x.name)));
            }
            compared += 1;
        }
        if a.artifacts.len() != b.artifacts.len() || a.to_json() != b.to_json() {
            return Ok((false, format!("{name}: reports differ")));
        }
    }
    Ok((compared > 0, format!("{compared} CSV artifacts byte-identical across reruns")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact solution", exact_solution),
        ("penalized path", penalized_path),
        ("comparison", comparison),
        ("nondegeneracy", nondegeneracy),
        ("parabolic bound", parabolic_bound),
        ("density alternative", density_alternative),
        ("measure stability", measure_stability),
        ("blowup nonuniqueness", blowup_nonuniqueness),
        ("vmo tools", vmo_tools),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            k + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failures} failing");
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
