//! Acceptance suite: runs the bundled configs and prints one line per
//! criterion. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qpat_core::config::ExperimentConfig;
use qpat_core::experiment::{run_experiment, Outcome};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn run(name: &str, out: &Path) -> Result<Outcome, String> {
    let (cfg, text) = ExperimentConfig::load(&config_path(name)).map_err(|e| e.to_string())?;
    run_experiment(&cfg, &text, out).map_err(|e| e.to_string())
}

fn get(o: &Outcome, key: &str) -> Result<f64, String> {
    o.metric(key).ok_or_else(|| format!("metric `{key}` missing"))
}

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Result<Check, String> {
    Ok(Check { pass, detail })
}

fn beer_lambert(dir: &Path) -> Result<Check, String> {
    let o = run("beer_lambert", dir)?;
    let (e, ratio) = (get(&o, "error_128")?, get(&o, "error_ratio")?);
    check(e <= 0.05 && ratio >= 1.7, format!("error(128) = {e:.3e} <= 5e-2, ratio(64/128) = {ratio:.3} >= 1.7"))
}

fn adjoint_identity(dir: &Path) -> Result<Check, String> {
    let o = run("adjoint_identity", dir)?;
    let gap = get(&o, "max_normalised_gap")?;
    let n = get(&o, "trials")?;
    check(gap <= 1e-10 && n >= 20.0, format!("max gap = {gap:.3e} <= 1e-10 over {n} pairs"))
}

fn gradient(dir: &Path) -> Result<Check, String> {
    let o = run("gradcheck", dir)?;
    let (m, p, l) = (
        get(&o, "misfit_max_error")?,
        get(&o, "penalty_max_error")?,
        get(&o, "levelset_max_error")?,
    );
    check(
        m <= 1e-4 && p <= 1e-4 && l <= 1e-3,
        format!("misfit {m:.2e} <= 1e-4, penalty {p:.2e} <= 1e-4, level set {l:.2e} <= 1e-3"),
    )
}

fn scattering_bound(dir: &Path) -> Result<Check, String> {
    let o = run("scattering_bound", dir)?;
    let (v, r) = (get(&o, "violations")?, get(&o, "max_ratio")?);
    check(v == 0.0, format!("{v} violations, max ||Ku||/(mu_hi ||u||) = {r:.4}"))
}

fn source_iteration(dir: &Path) -> Result<Check, String> {
    let o = run("source_iteration", dir)?;
    let mono = get(&o, "monotone")? == 1.0;
    let conv = get(&o, "converged")? == 1.0;
    let lo = get(&o, "min_radiance")?;
    let rho = get(&o, "max_scattering_ratio")?;
    check(
        mono && conv && lo >= 0.0,
        format!("monotone = {mono}, converged to 1e-10 = {conv}, min u = {lo:.2e}, max ratio = {rho:.3}"),
    )
}

fn continuity(dir: &Path) -> Result<Check, String> {
    let o = run("continuity", dir)?;
    let spread = get(&o, "ratio_spread")?;
    check(spread < 0.5, format!("ratio spread = {spread:.3e} < 0.5"))
}

fn convergence(dir: &Path) -> Result<Check, String> {
    let o = run("convergence", dir)?;
    let slack = get(&o, "non_increasing_with_slack")? == 1.0;
    let zero = get(&o, "zero_noise_smallest")? == 1.0;
    let first = get(&o, "error_0")?;
    let last = get(&o, "error_5")?;
    check(
        slack && zero,
        format!("non-increasing within 10% = {slack}, zero noise smallest = {zero}, error {first:.4e} -> {last:.4e}"),
    )
}

fn levelset(dir: &Path) -> Result<Check, String> {
    let o = run("levelset", dir)?;
    let j = get(&o, "jaccard_mu_a")?;
    let it = get(&o, "iterations")?;
    let mono = get(&o, "monotone")? == 1.0;
    check(
        j >= 0.85 && it <= 500.0 && mono,
        format!("Jaccard = {j:.4} >= 0.85 after {it} iterations, monotone = {mono}"),
    )
}

fn heaviside(dir: &Path) -> Result<Check, String> {
    let o = run("heaviside", dir)?;
    let b = get(&o, "branch_values")? == 1.0;
    let c = get(&o, "convex_combination")? == 1.0;
    let s = get(&o, "l1_slope")?;
    check(
        b && c && (s - 1.0).abs() <= 0.2,
        format!("branches = {b}, convex = {c}, L1 slope = {s:.4} within 20% of 1"),
    )
}

fn kaczmarz(dir: &Path) -> Result<Check, String> {
    let o = run("kaczmarz_sweep", dir)?;
    let red = get(&o, "strictly_reduced")? == 1.0;
    let exact = get(&o, "single_source_bit_exact")? == 1.0;
    let (b, a) = (get(&o, "misfit_before")?, get(&o, "misfit_after")?);
    check(
        red && exact,
        format!("misfit {b:.4e} -> {a:.4e}, single source bit-exact = {exact}"),
    )
}

fn csv_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism(dir: &Path) -> Result<Check, String> {
    let mut files = 0;
    let mut identical = true;
    for name in ["forward", "gradcheck"] {
        let (a, b) = (dir.join(format!("{name}_a")), dir.join(format!("{name}_b")));
        run(name, &a)?;
        run(name, &b)?;
        let (fa, fb) = (csv_files(&a)?, csv_files(&b)?);
        files += fa.len();
        identical &= !fa.is_empty() && fa == fb;
    }
    check(identical, format!("{files} CSV files byte-identical = {identical}"))
}

type Criterion = fn(&Path) -> Result<Check, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, u64); 11] = [
        ("beer-lambert", beer_lambert, 60),
        ("adjoint-identity", adjoint_identity, 5),
        ("gradient", gradient, 120),
        ("scattering-bound", scattering_bound, 5),
        ("source-iteration", source_iteration, 60),
        ("continuity", continuity, 120),
        ("tikhonov-convergence", convergence, 900),
        ("levelset-recovery", levelset, 600),
        ("heaviside", heaviside, 5),
        ("kaczmarz-sweep", kaczmarz, 300),
        ("determinism", determinism, 60),
    ];
    let root = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for (n, (name, f, limit)) in criteria.iter().enumerate() {
        let dir = root.path().join(name);
        let start = Instant::now();
        let result = f(&dir);
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (pass, detail) = match result {
            Ok(c) => (c.pass && in_time, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "[{}] {:>2} {name}: {detail}; {:.1} s (limit {limit} s)",
            if pass { "PASS" } else { "FAIL" },
            n + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
