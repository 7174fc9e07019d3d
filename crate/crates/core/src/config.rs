//! Experiment configuration: TOML text with one table per concern.
//!
//! Unknown keys are rejected. Every range check reports the dotted path of the
//! offending field.

use serde::{Deserialize, Serialize};

use crate::coefficients::{RadialProfile, Sym2};
use crate::error::{Error, Result};
use crate::grid::MIN_CELLS;

/// Central defaults. Everything a config may omit is filled from here.
pub mod defaults {
    pub const EXTENT: f64 = 2.0;
    pub const N_CELLS: usize = 128;
    pub const SOLVER_TOL: f64 = 1e-9;
    pub const MAX_POLICIES: usize = 200;
    /// Classification threshold.
    pub const EPS: f64 = 0.05;
    pub const R0: f64 = 0.25;
    pub const TAU: f64 = 1.0;
    pub const EPS_LIST: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
    pub const DELTAS: [f64; 3] = [0.2, 0.1, 0.05];
    pub const PERTURBATIONS: [f64; 4] = [0.0, 0.05, 0.1, 0.2];
    /// Allowed relative increase when a sweep is expected to be non-increasing.
    pub const SWEEP_SLACK: f64 = 0.1;
    /// Collar excluded from blowup comparisons, in output cells.
    pub const COLLAR_CELLS: f64 = 4.0;
    pub const BLOWUP_CELLS: usize = 64;
    pub const BLOWUP_WINDOW: f64 = 0.5;
    pub const MARGIN: f64 = 2.0;
    /// Half-width of the band around 2 and 3 used to pick blowup radii.
    pub const PHASE_BAND: f64 = 0.1;
    pub const HALF_SPACE_BETA: f64 = 0.3;
    pub const STABILITY_LEVEL: f64 = 0.845;
    pub const OUTPUT_DIR: &str = "out";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Exact,
    Stability,
    Persistence,
    Alternative,
    Counterexample,
    PenalizedPath,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Exact => "exact",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Persistence => "persistence",
            ExperimentKind::Alternative => "alternative",
            ExperimentKind::Counterexample => "counterexample",
            ExperimentKind::PenalizedPath => "penalized-path",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: ExperimentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub extent: f64,
    pub n_cells: usize,
    pub center: [f64; 2],
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            extent: defaults::EXTENT,
            n_cells: defaults::N_CELLS,
            center: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        #[serde(default = "identity_rows")]
        matrix: [[f64; 2]; 2],
    },
    ScaledIdentity {
        scale: f64,
    },
    Counterexample {
        phase_speed: f64,
        /// Inner cutoff; defaults to the first junction radius for `phase_speed`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<f64>,
    },
    DyadicSteps {
        low: f64,
        high: f64,
    },
}

fn identity_rows() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant {
            matrix: identity_rows(),
        }
    }
}

impl CoefficientSpec {
    /// The constant matrix, when the coefficients do not vary in space.
    pub fn constant_matrix(&self) -> Option<Result<Sym2>> {
        match self {
            CoefficientSpec::Constant { matrix } => Some(Sym2::from_rows(*matrix)),
            CoefficientSpec::ScaledIdentity { scale } => Some(Ok(Sym2::scalar(*scale))),
            _ => None,
        }
    }

    /// Radial profile for the spatially varying kinds.
    pub fn radial_profile(&self) -> Option<Result<RadialProfile>> {
        match *self {
            CoefficientSpec::Counterexample { phase_speed, omega } => Some((|| {
                let omega = match omega {
                    Some(o) => o,
                    None => RadialProfile::junction_radius(phase_speed, 1)?,
                };
                RadialProfile::counterexample(omega, phase_speed)
            })()),
            CoefficientSpec::DyadicSteps { low, high } => Some(Ok(RadialProfile::DyadicSteps { low, high })),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CoefficientSpec::Constant { matrix } => format!(
                "constant [[{}, {}], [{}, {}]]",
                matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]
            ),
            CoefficientSpec::ScaledIdentity { scale } => format!("scaled_identity {scale}"),
            CoefficientSpec::Counterexample { phase_speed, omega } => match omega {
                Some(o) => format!("counterexample s={phase_speed} omega={o}"),
                None => format!("counterexample s={phase_speed}"),
            },
            CoefficientSpec::DyadicSteps { low, high } => format!("dyadic_steps {low}/{high}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// Trace of `(1/(2q)) ((x . normal - beta)_+)^2`. `q` defaults to
    /// `normal^T A normal` for constant coefficients and to 2 otherwise.
    HalfSpace {
        beta: f64,
        #[serde(default = "vertical")]
        normal: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
    },
    /// Half-space trace whose value on the line `x . normal = 1` equals
    /// `level`, i.e. offset `1 - sqrt(2 q level)`.
    Level {
        level: f64,
        #[serde(default = "vertical")]
        normal: [f64; 2],
    },
    Constant {
        value: f64,
    },
}

fn vertical() -> [f64; 2] {
    [0.0, 1.0]
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::HalfSpace {
            beta: defaults::HALF_SPACE_BETA,
            normal: vertical(),
            q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_policies: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: defaults::SOLVER_TOL,
            max_policies: defaults::MAX_POLICIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub eps: f64,
    pub r0: f64,
    pub tau: f64,
    pub eps_list: Vec<f64>,
    /// Explicit radii; empty means each experiment picks its own sweep.
    pub radii: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_bracket: Option<[f64; 2]>,
    pub deltas: Vec<f64>,
    pub perturbations: Vec<f64>,
    pub slack: f64,
    pub collar_cells: f64,
    pub blowup_cells: usize,
    pub window: f64,
    pub margin: f64,
    pub phase_band: f64,
    /// Scale of the constant-coefficient control run; 0 disables it.
    pub control_scale: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            eps: defaults::EPS,
            r0: defaults::R0,
            tau: defaults::TAU,
            eps_list: defaults::EPS_LIST.to_vec(),
            radii: Vec::new(),
            beta_bracket: None,
            deltas: defaults::DELTAS.to_vec(),
            perturbations: defaults::PERTURBATIONS.to_vec(),
            slack: defaults::SWEEP_SLACK,
            collar_cells: defaults::COLLAR_CELLS,
            blowup_cells: defaults::BLOWUP_CELLS,
            window: defaults::BLOWUP_WINDOW,
            margin: defaults::MARGIN,
            phase_band: defaults::PHASE_BAND,
            control_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: defaults::OUTPUT_DIR.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Defaults for everything except the experiment name.
    pub fn new(name: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: ExperimentSection { name },
            grid: GridSection::default(),
            coefficients: CoefficientSpec::default(),
            boundary: BoundarySpec::default(),
            solver: SolverSection::default(),
            analysis: AnalysisSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn name(&self) -> ExperimentKind {
        self.experiment.name
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        positive("grid.extent", g.extent)?;
        if g.n_cells < MIN_CELLS {
            return Err(cfg("grid.n_cells", format!("must be at least {MIN_CELLS}, got {}", g.n_cells)));
        }
        finite("grid.center", g.center[0])?;
        finite("grid.center", g.center[1])?;

        match &self.coefficients {
            CoefficientSpec::Constant { matrix } => {
                let m = matrix;
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(cfg("coefficients.matrix", "entries must be finite"));
                }
                if m[0][1] != m[1][0] {
                    return Err(cfg("coefficients.matrix", "matrix must be symmetric"));
                }
                let (lo, _) = Sym2::new(m[0][0], m[0][1], m[1][1]).eigenvalues();
                if !(lo > 0.0) {
                    return Err(cfg(
                        "coefficients.matrix",
                        format!("matrix must be positive definite (smallest eigenvalue {lo})"),
                    ));
                }
            }
            CoefficientSpec::ScaledIdentity { scale } => positive("coefficients.scale", *scale)?,
            CoefficientSpec::Counterexample { phase_speed, omega } => {
                if !(*phase_speed >= 1.0) || !phase_speed.is_finite() {
                    return Err(cfg(
                        "coefficients.phase_speed",
                        format!("must be a finite number >= 1, got {phase_speed}"),
                    ));
                }
                if let Some(o) = omega {
                    if !(*o > 0.0 && *o < (-1.0f64).exp()) {
                        return Err(cfg("coefficients.omega", format!("must lie in (0, 1/e), got {o}")));
                    }
                }
                if let Some(Err(e)) = self.coefficients.radial_profile() {
                    return Err(cfg("coefficients.omega", e.to_string()));
                }
            }
            CoefficientSpec::DyadicSteps { low, high } => {
                positive("coefficients.low", *low)?;
                positive("coefficients.high", *high)?;
            }
        }

        match &self.boundary {
            BoundarySpec::HalfSpace { beta, normal, q } => {
                finite("boundary.beta", *beta)?;
                unit_normal("boundary.normal", normal)?;
                if let Some(q) = q {
                    positive("boundary.q", *q)?;
                }
            }
            BoundarySpec::Level { level, normal } => {
                positive("boundary.level", *level)?;
                unit_normal("boundary.normal", normal)?;
            }
            BoundarySpec::Constant { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(cfg("boundary.value", format!("must be finite and nonnegative, got {value}")));
                }
            }
        }

        positive("solver.tol", self.solver.tol)?;
        if self.solver.max_policies == 0 {
            return Err(cfg("solver.max_policies", "must be positive"));
        }

        let a = &self.analysis;
        if !(a.eps > 0.0 && a.eps < 0.125) {
            return Err(cfg("analysis.eps", format!("must lie in (0, 0.125), got {}", a.eps)));
        }
        positive("analysis.r0", a.r0)?;
        if !(a.tau > 0.0 && a.tau <= 1.0) {
            return Err(cfg("analysis.tau", format!("must lie in (0, 1], got {}", a.tau)));
        }
        decreasing_positive("analysis.eps_list", &a.eps_list)?;
        decreasing_positive("analysis.radii", &a.radii)?;
        if let Some([lo, hi]) = a.beta_bracket {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(cfg("analysis.beta_bracket", format!("need lo < hi, got [{lo}, {hi}]")));
            }
        }
        for (i, &d) in a.deltas.iter().enumerate() {
            if !(d.is_finite() && d > -1.0) {
                return Err(cfg(&format!("analysis.deltas[{i}]"), format!("must exceed -1, got {d}")));
            }
        }
        for (i, &k) in a.perturbations.iter().enumerate() {
            if !k.is_finite() {
                return Err(cfg(&format!("analysis.perturbations[{i}]"), format!("must be finite, got {k}")));
            }
        }
        if !(a.slack >= 0.0 && a.slack.is_finite()) {
            return Err(cfg("analysis.slack", format!("must be nonnegative, got {}", a.slack)));
        }
        if !(a.collar_cells >= 0.0 && a.collar_cells.is_finite()) {
            return Err(cfg("analysis.collar_cells", format!("must be nonnegative, got {}", a.collar_cells)));
        }
        if a.blowup_cells < MIN_CELLS {
            return Err(cfg("analysis.blowup_cells", format!("must be at least {MIN_CELLS}")));
        }
        if !(a.window > 0.0 && a.window <= 1.0) {
            return Err(cfg("analysis.window", format!("must lie in (0, 1], got {}", a.window)));
        }
        positive("analysis.margin", a.margin)?;
        positive("analysis.phase_band", a.phase_band)?;
        if !(a.control_scale >= 0.0 && a.control_scale.is_finite()) {
            return Err(cfg(
                "analysis.control_scale",
                format!("must be nonnegative, got {}", a.control_scale),
            ));
        }
        if self.output.dir.is_empty() {
            return Err(cfg("output.dir", "must not be empty"));
        }
        Ok(())
    }
}

/// Parses and validates a config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| toml_error(text, "", &e))?;
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        toml_error(text, &path, e.inner())
    })?;
    config.validate()?;
    Ok(config)
}

fn toml_error(text: &str, path: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let path = match (path, line) {
        ("" | ".", Some(l)) => format!("line {l}"),
        ("" | ".", None) => "<root>".to_string(),
        (p, Some(l)) => format!("{p} (line {l})"),
        (p, None) => p.to_string(),
    };
    Error::Config {
        path,
        message: e.message().to_string(),
    }
}

fn cfg(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg(path, format!("must be positive, got {v}")))
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(cfg(path, format!("must be finite, got {v}")))
    }
}

fn unit_normal(path: &str, n: &[f64; 2]) -> Result<()> {
    let len = n[0].hypot(n[1]);
    if (len - 1.0).abs() <= 1e-9 {
        Ok(())
    } else {
        Err(cfg(path, format!("must have unit length, got {len}")))
    }
}

fn decreasing_positive(path: &str, v: &[f64]) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !(x > 0.0 && x.is_finite()) {
            return Err(cfg(&format!("{path}[{i}]"), format!("must be positive, got {x}")));
        }
        if i > 0 && !(x < v[i - 1]) {
            return Err(cfg(&format!("{path}[{i}]"), "list must be strictly decreasing"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config_err(text: &str) -> (String, String) {
        match parse_config(text) {
            Err(Error::Config { path, message }) => (path, message),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("[experiment]\nname = \"exact\"\n").unwrap();
        assert_eq!(c.name(), ExperimentKind::Exact);
        assert_eq!(c.grid.n_cells, 128);
        assert_eq!(c.solver.tol, 1e-9);
        assert_eq!(c.analysis.eps, 0.05);
        assert_eq!(c.analysis.collar_cells, 4.0);
        assert_eq!(c.coefficients, CoefficientSpec::default());
    }

    #[test]
    fn negative_eps_names_the_field() {
        let (path, _) = config_err("[experiment]\nname = \"alternative\"\n[analysis]\neps = -0.1\n");
        assert_eq!(path, "analysis.eps");
    }

    #[test]
    fn phase_speed_is_threaded_to_profile() {
        let c = parse_config(
            "[experiment]\nname = \"counterexample\"\n[coefficients]\nkind = \"counterexample\"\nphase_speed = 3\n",
        )
        .unwrap();
        match c.coefficients.radial_profile().unwrap().unwrap() {
            RadialProfile::Oscillating { phase_speed, omega } => {
                assert_eq!(phase_speed, 3.0);
                assert_eq!(omega, RadialProfile::junction_radius(3.0, 1).unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let (path, msg) = config_err("[experiment]\nname = \"exact\"\n[grid]\nncells = 64\n");
        assert!(path.starts_with("grid"), "{path}");
        assert!(msg.contains("ncells"), "{msg}");

        let (path, _) = config_err("[experiment]\nname = \"exact\"\n[coefficients]\nkind = \"scaled_identity\"\nscale = 2\nextra = 1\n");
        assert!(path.starts_with("coefficients"), "{path}");

        let (path, _) = config_err("[experiment]\nname = \"exact\"\n[bogus]\nx = 1\n");
        assert!(path.contains("line 3"), "{path}");
    }

    #[test]
    fn missing_required_fields() {
        let (_, msg) = config_err("[grid]\nn_cells = 64\n");
        assert!(msg.contains("experiment"), "{msg}");
        let (path, msg) = config_err("[experiment]\nname = \"exact\"\n[coefficients]\nkind = \"dyadic_steps\"\nlow = 1\n");
        assert!(path.starts_with("coefficients"), "{path}");
        assert!(msg.contains("high"), "{msg}");
    }

    #[test]
    fn range_errors() {
        let cases = [
            ("[grid]\nn_cells = 4\n", "grid.n_cells"),
            ("[grid]\nextent = 0\n", "grid.extent"),
            ("[coefficients]\nkind = \"constant\"\nmatrix = [[1, 2], [2, 1]]\n", "coefficients.matrix"),
            ("[coefficients]\nkind = \"counterexample\"\nphase_speed = 0.5\n", "coefficients.phase_speed"),
            ("[coefficients]\nkind = \"counterexample\"\nphase_speed = 1\nomega = 0.01\n", "coefficients.omega"),
            ("[boundary]\nkind = \"half_space\"\nbeta = 0.1\nnormal = [1, 1]\n", "boundary.normal"),
            ("[analysis]\neps_list = [0.1, 0.2]\n", "analysis.eps_list[1]"),
            ("[analysis]\ntau = 0\n", "analysis.tau"),
            ("[analysis]\nbeta_bracket = [0.2, -0.2]\n", "analysis.beta_bracket"),
            ("[solver]\ntol = 0\n", "solver.tol"),
        ];
        for (body, want) in cases {
            let text = format!("[experiment]\nname = \"exact\"\n{body}");
            let (path, _) = config_err(&text);
            assert_eq!(path, want, "{body}");
        }
    }

    #[test]
    fn malformed_toml_reports_a_line() {
        let (path, _) = config_err("[experiment]\nname = \"exact\"\n[grid\n");
        assert!(path.starts_with("line 3"), "{path}");
    }

    fn arb_coefficients() -> impl Strategy<Value = CoefficientSpec> {
        prop_oneof![
            (0.5f64..3.0, -0.4f64..0.4, 0.5f64..3.0)
                .prop_map(|(a, b, c)| CoefficientSpec::Constant { matrix: [[a, b], [b, c]] }),
            (0.5f64..4.0).prop_map(|scale| CoefficientSpec::ScaledIdentity { scale }),
            (1u32..6).prop_map(|s| CoefficientSpec::Counterexample {
                phase_speed: s as f64,
                omega: None
            }),
            (0.5f64..2.0, 2.0f64..4.0).prop_map(|(low, high)| CoefficientSpec::DyadicSteps { low, high }),
        ]
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            prop::sample::select(vec![
                ExperimentKind::Exact,
                ExperimentKind::Stability,
                ExperimentKind::Persistence,
                ExperimentKind::Alternative,
                ExperimentKind::Counterexample,
                ExperimentKind::PenalizedPath,
            ]),
            8usize..600,
            0.1f64..10.0,
            arb_coefficients(),
            -1.0f64..1.0,
            0.001f64..0.124,
            prop::option::of((-0.5f64..0.0, 0.01f64..0.5)),
        )
            .prop_map(|(name, n, extent, coefficients, beta, eps, bracket)| {
                let mut c = ExperimentConfig::new(name);
                c.grid.n_cells = n;
                c.grid.extent = extent;
                c.coefficients = coefficients;
                c.boundary = BoundarySpec::HalfSpace {
                    beta,
                    normal: [0.0, 1.0],
                    q: None,
                };
                c.analysis.eps = eps;
                c.analysis.beta_bracket = bracket.map(|(a, b)| [a, b]);
                c
            })
    }

    proptest! {
        #[test]
        fn serialize_round_trips(c in arb_config()) {
            let text = c.to_toml();
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
