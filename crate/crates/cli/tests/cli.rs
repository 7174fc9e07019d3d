use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_obstacle-lab");

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn lab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SOLVE: &str = "[experiment]\nname = \"exact\"\n[grid]\nn_cells = 24\n";

#[test]
fn solve_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "solve.toml", SMALL_SOLVE);
    let out = tmp.path().join("out");
    let o = lab(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seedless"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["solution.field", "contact.bitmap", "report.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["passed"], true);
    assert_eq!(manifest["seedless"], true);
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["name"] == "solution.field"));
    assert!(files.iter().all(|f| f["sha256"].as_str().unwrap().len() == 64));
    assert!(manifest["config"].as_str().unwrap().contains("n_cells = 24"));
}

#[test]
fn missing_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.toml");
    let o = lab(&["solve", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn no_arguments_exits_with_two() {
    assert_eq!(lab(&["solve"]).status.code(), Some(2));
    assert_eq!(lab(&[]).status.code(), Some(2));
}

#[test]
fn malformed_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[experiment]\nname = \"alternative\"\n[analysis]\neps = -0.1\n");
    let o = lab(&["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("analysis.eps"), "{}", stderr(&o));

    let cfg = write(tmp.path(), "typo.toml", "[experiment]\nname = \"exact\"\n[grid]\nncells = 8\n");
    let o = lab(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.ncells"), "{}", stderr(&o));
}

#[test]
fn failed_pinning_writes_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "pin.toml",
        "[experiment]\nname = \"counterexample\"\n\
         [grid]\nn_cells = 32\n\
         [coefficients]\nkind = \"counterexample\"\nphase_speed = 4.0\n\
         [analysis]\nbeta_bracket = [0.5, 0.6]\n",
    );
    let out = tmp.path().join("out");
    let o = lab(&["blowup", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let diag = fs::read_to_string(out.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("beta_bracket = [0.5, 0.6]"), "{diag}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.toml", SMALL_SOLVE);
    let b = write(
        tmp.path(),
        "b.toml",
        "[experiment]\nname = \"alternative\"\n[grid]\nn_cells = 32\n",
    );
    let mut reports = Vec::new();
    for run in ["one", "two"] {
        let out = tmp.path().join(run);
        let o = lab(&[
            "analyze",
            "--config",
            a.to_str().unwrap(),
            "--config",
            b.to_str().unwrap(),
            "--threads",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        reports.push(out);
    }
    for cell in ["a", "b"] {
        let mut names: Vec<String> = fs::read_dir(reports[0].join(cell))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "manifest.json")
            .collect();
        names.sort();
        assert!(names.iter().any(|n| n == "densities.csv"), "{names:?}");
        for f in &names {
            let x = fs::read(reports[0].join(cell).join(f)).unwrap();
            let y = fs::read(reports[1].join(cell).join(f)).unwrap();
            assert_eq!(x, y, "{cell}/{f} differs between runs");
        }
    }
}
