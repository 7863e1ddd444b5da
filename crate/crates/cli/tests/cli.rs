use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn agfem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agfem"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn inspect_writes_classes_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("thick_cylinder.toml");
    let out = agfem(&["inspect", path(&cfg), "--output", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("inspect.vtu")).unwrap();
    assert!(text.contains("UnstructuredGrid"));
    assert!(text.contains("\"cell_class\"") && text.contains("\"aggregate_root\""));
}

#[test]
fn solve_elastic_patch_gives_one_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("elastic_patch.toml");
    let out = agfem(&["solve", path(&cfg), "--output", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rows = csv::Reader::from_path(dir.path().join("reports.csv")).unwrap();
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 1);
    assert_eq!(&records[0][2], "0");
    assert!(dir.path().join("1_0.vtu").exists());
}

#[test]
fn converge_errors_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("thick_cylinder.toml");
    let csv_path = dir.path().join("conv.csv");
    let out = agfem(&["converge", path(&cfg), "--levels", "5", "--csv", path(&csv_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][col("label")], "4x4");
    for name in ["err_s_rr", "err_s_tt", "err_energy"] {
        let v: Vec<f64> = rows.iter().map(|r| r[col(name)].parse().unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{name}: {v:?}");
    }
    assert_eq!(String::from_utf8(out.stdout).unwrap(), std::fs::read_to_string(&csv_path).unwrap());
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("thick_cylinder.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("theta_c = 0.05", "theta_c = 0.05\ntheta_q = 1")).unwrap();
    let out = agfem(&["solve", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("theta_q") && err.contains("line"), "{err}");
    let out = agfem(&["inspect", path(&dir.path().join("missing.toml"))]);
    assert_eq!(out.status.code(), Some(2));
    let patch = configs().join("elastic_patch.toml");
    let out = agfem(&["converge", path(&patch), "--levels", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("thick_cylinder.toml")).unwrap();
    let cfg = dir.path().join("hard.toml");
    let text = text.replace("steps = 11", "steps = 1") + "\n[solver.newton]\nmax_iters = 2\n";
    std::fs::write(&cfg, text).unwrap();
    let out = agfem(&["solve", path(&cfg), "--output", path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("load step 1"));
}
