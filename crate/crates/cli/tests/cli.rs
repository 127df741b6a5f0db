use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn qpat() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qpat"));
    c.env_remove("QPAT_OUT_DIR");
    c
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn missing_field_exits_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("forward")).unwrap().replace("nx = 32\n", "");
    let cfg = dir.path().join("broken.toml");
    fs::write(&cfg, text).unwrap();
    let out = qpat().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nx"), "{err}");
}

#[test]
fn missing_section_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = fs::read_to_string(bundled("heaviside")).unwrap();
    let cut = text.find("[properties]").unwrap();
    fs::write(&cfg, &text[..cut]).unwrap();
    let out = qpat().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[properties]"));
}

#[test]
fn unreadable_config_is_a_failure() {
    let out = qpat().args(["run", "--config", "/nonexistent/qpat.toml"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let st = qpat()
            .args(["run", "--config"])
            .arg(bundled("forward"))
            .arg("--out")
            .arg(d)
            .status()
            .unwrap();
        assert!(st.success());
    }
    let (fa, fb) = (csv_bytes(&a), csv_bytes(&b));
    assert!(fa.len() >= 6);
    assert_eq!(fa, fb);
    assert_eq!(fs::read(a.join("manifest.txt")).unwrap(), fs::read(b.join("manifest.txt")).unwrap());
}

#[test]
fn seed_flag_changes_noise_only() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let st = qpat()
            .args(["forward", "--seed", seed, "--config"])
            .arg(bundled("forward"))
            .arg("--out")
            .arg(d)
            .status()
            .unwrap();
        assert!(st.success());
    }
    assert_eq!(fs::read(a.join("energy_0.csv")).unwrap(), fs::read(b.join("energy_0.csv")).unwrap());
    assert_ne!(fs::read(a.join("data_0.csv")).unwrap(), fs::read(b.join("data_0.csv")).unwrap());
    let manifest = fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=2"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("env_out");
    let st = qpat()
        .env("QPAT_OUT_DIR", &target)
        .args(["run", "--threads", "2", "--config"])
        .arg(bundled("adjoint_identity"))
        .status()
        .unwrap();
    assert!(st.success());
    let metrics = fs::read_to_string(target.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\n"));
    assert!(metrics.contains("max_normalised_gap"));
}

#[test]
fn bundled_beer_lambert_table() {
    let dir = tempfile::tempdir().unwrap();
    let st = qpat()
        .args(["run", "--config"])
        .arg(bundled("beer_lambert"))
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    let table = fs::read_to_string(dir.path().join("beer_lambert.csv")).unwrap();
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let (coarse, fine) = (rows[0][2], rows[1][2]);
    assert!(fine <= 0.05, "{fine}");
    assert!(coarse / fine >= 1.7, "{coarse} / {fine}");
}

#[test]
fn info_summarises_config() {
    let out = qpat().args(["info", "--config"]).arg(bundled("gradcheck")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("gradcheck"));
    assert!(text.contains("16x16"));
    assert!(text.contains("sha256"));
}

#[test]
fn verb_checks_required_sections() {
    let out = qpat().args(["convergence", "--config"]).arg(bundled("forward")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tikhonov"));
}
