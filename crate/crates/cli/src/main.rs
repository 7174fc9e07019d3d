//! `obstacle-lab`: run solves, analyses and experiments from TOML configs.
//!
//! Exit codes: 0 when every assertion passes, 1 when an assertion fails or a
//! run aborts, 2 for unusable input (missing or malformed config).

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use obstacle_core::config::{parse_config, ExperimentConfig};
use obstacle_core::experiments::{self, ExperimentReport};

use manifest::{AssertionEntry, FileEntry, Manifest, Stage};

#[derive(Parser)]
#[command(name = "obstacle-lab", version, about = "Obstacle-problem laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write the solution.
    Solve(Common),
    /// Solve, then densities, classification and nondegeneracy.
    Analyze(Common),
    /// Run the experiment named in the config.
    Experiment(Common),
    /// VMO modulus and radial criterion for the configured coefficients.
    Vmo(Common),
    /// Pin the free boundary and record blowups over a radius sweep.
    Blowup(Common),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pipeline {
    Solve,
    Analyze,
    Experiment,
    Vmo,
    Blowup,
}

impl Pipeline {
    fn name(self) -> &'static str {
        match self {
            Pipeline::Solve => "solve",
            Pipeline::Analyze => "analyze",
            Pipeline::Experiment => "experiment",
            Pipeline::Vmo => "vmo",
            Pipeline::Blowup => "blowup",
        }
    }

    fn run(self, config: &ExperimentConfig) -> obstacle_core::Result<ExperimentReport> {
        match self {
            Pipeline::Solve => experiments::run_solve(config),
            Pipeline::Analyze => experiments::run_analyze(config),
            Pipeline::Experiment => experiments::run(config),
            Pipeline::Vmo => experiments::run_vmo(config),
            Pipeline::Blowup => experiments::run_blowup(config),
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// Config file; repeat to run several independent cells.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Output directory; overrides `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Accepted for scripts; nothing in the pipeline draws random numbers.
    #[arg(long)]
    seedless: bool,
}

fn main() -> ExitCode {
    ExitCode::from(run_cli(std::env::args_os().collect()))
}

fn run_cli(argv: Vec<std::ffi::OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cmd, common) = match cli.command {
        Command::Solve(c) => (Pipeline::Solve, c),
        Command::Analyze(c) => (Pipeline::Analyze, c),
        Command::Experiment(c) => (Pipeline::Experiment, c),
        Command::Vmo(c) => (Pipeline::Vmo, c),
        Command::Blowup(c) => (Pipeline::Blowup, c),
    };
    let started = Instant::now();
    let mut cells = Vec::new();
    for path in &common.config {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return 2;
            }
        };
        match parse_config(&text) {
            Ok(c) => cells.push((path.clone(), c)),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return 2;
            }
        }
    }
    let parse_secs = started.elapsed().as_secs_f64();

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    let outcomes: Vec<(obstacle_core::Result<ExperimentReport>, f64)> = pool.install(|| {
        cells
            .par_iter()
            .map(|(_, config)| {
                let t = Instant::now();
                let r = cmd.run(config);
                (r, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    // All writes happen here, on one thread, in config order.
    let many = cells.len() > 1;
    let mut code = 0u8;
    for ((path, config), (outcome, run_secs)) in cells.iter().zip(outcomes) {
        let dir = output_dir(&common, config, path, many);
        let stages = vec![
            Stage::new("parse", parse_secs),
            Stage::new("run", run_secs),
        ];
        match write_cell(&dir, cmd, config, outcome, stages, common.seedless) {
            Ok(CellStatus::Passed) => println!("ok: {}", dir.display()),
            Ok(CellStatus::Failed(names)) => {
                eprintln!(
                    "assertion failed: {} (report: {})",
                    names.join(", "),
                    dir.join("report.json").display()
                );
                code = code.max(1);
            }
            Ok(CellStatus::Aborted(msg)) => {
                eprintln!("run failed: {msg} (diagnostics: {})", dir.join("diagnostics.txt").display());
                code = code.max(1);
            }
            Err(e) => {
                eprintln!("error: writing {}: {e}", dir.display());
                code = code.max(1);
            }
        }
    }
    code
}

fn output_dir(common: &Common, config: &ExperimentConfig, path: &Path, many: bool) -> PathBuf {
    let base = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    if many {
        let stem = path.file_stem().map(|s| s.to_owned()).unwrap_or_else(|| "cell".into());
        base.join(stem)
    } else {
        base
    }
}

enum CellStatus {
    Passed,
    Failed(Vec<String>),
    Aborted(String),
}

fn write_cell(
    dir: &Path,
    cmd: Pipeline,
    config: &ExperimentConfig,
    outcome: obstacle_core::Result<ExperimentReport>,
    mut stages: Vec<Stage>,
    seedless: bool,
) -> std::io::Result<CellStatus> {
    fs::create_dir_all(dir)?;
    let t = Instant::now();
    let mut files: Vec<(String, String)> = Vec::new();
    let (status, assertions) = match outcome {
        Ok(report) => {
            for a in &report.artifacts {
                files.push((a.name.clone(), a.contents.clone()));
            }
            files.push(("report.json".into(), report.to_json()));
            let failed: Vec<String> = report
                .assertions
                .iter()
                .filter(|a| !a.passed)
                .map(|a| a.name.clone())
                .collect();
            let status = if failed.is_empty() {
                CellStatus::Passed
            } else {
                CellStatus::Failed(failed)
            };
            (status, report.assertions.iter().map(|a| (a.name.clone(), a.passed)).collect())
        }
        Err(e) => {
            let text = format!("error: {e}\n\nconfig:\n{}", config.to_toml());
            files.push(("diagnostics.txt".into(), text));
            (CellStatus::Aborted(e.to_string()), Vec::new())
        }
    };
    let mut entries = Vec::with_capacity(files.len());
    for (name, contents) in &files {
        fs::write(dir.join(name), contents)?;
        entries.push(FileEntry::new(name, contents.as_bytes()));
    }
    stages.push(Stage::new("write", t.elapsed().as_secs_f64()));
    let manifest = Manifest {
        command: cmd.name().to_string(),
        version: experiments::VERSION.to_string(),
        config: config.to_toml(),
        seedless,
        files: entries,
        stages,
        assertions: assertions
            .into_iter()
            .map(|(name, passed)| AssertionEntry { name, passed })
            .collect(),
        passed: matches!(status, CellStatus::Passed),
    };
    fs::write(dir.join("manifest.json"), manifest.to_json())?;
    Ok(status)
}
