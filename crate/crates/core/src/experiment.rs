//! Experiment drivers: one per configuration kind. Each run writes its
//! artifacts (CSV fields with PGM previews, tables, logs), a `metrics.csv`
//! summary and a `manifest.txt` into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{require, ExperimentConfig, ExperimentKind, LevelSetSection, Scheme, TikhonovSection};
use crate::error::{Error, Result};
use crate::field::{AngularField, Field2};
use crate::forward::{add_noise, forward, forward_state};
use crate::grid::{Bounds, Grid2D, OpticalPair, PhaseSpace, Side};
use crate::io::{field_to_csv, field_to_pgm};
use crate::levelset::{
    eps_continuation, eval_geps, heaviside, heaviside_eps, heaviside_field, jaccard, levelset_gradient,
    project_peps, reconstruct_levelset, signed_distance_circle, LevelSetConfig, LevelSetState,
    MaterialConstants,
};
use crate::multi::kaczmarz_sweep;
use crate::phantom::{make_phantom, shape_mask};
use crate::sensitivity::{central_difference_table, fd_check, CoefficientDirection, DataFit};
use crate::tikhonov::{
    choose_alpha, convergence_study, penalty_gradient, penalty_value, projected_gradient_step, reconstruct,
    AlphaRule, TikhonovConfig,
};
use crate::transport::{
    apply_scattering, apply_transport, apply_transport_adjoint, solve_pure_absorber, solve_rte, AngularProfile,
    BoundarySource, PatchSpec,
};

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub metrics: Vec<(String, f64)>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k},{v:e}");
        }
        s
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    files: Vec<PathBuf>,
    metrics: Vec<(String, f64)>,
}

impl Run<'_> {
    fn text(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let p = self.out.join(name);
        fs::write(&p, body)?;
        self.files.push(p);
        Ok(())
    }

    fn field(&mut self, name: &str, f: &Field2, grid: &Grid2D) -> Result<()> {
        self.text(&format!("{name}.csv"), field_to_csv(f, grid)?)?;
        self.text(&format!("{name}.pgm"), field_to_pgm(f))
    }

    fn pair(&mut self, prefix: &str, p: &OpticalPair, grid: &Grid2D) -> Result<()> {
        self.field(&format!("{prefix}_mu_a"), &p.mu_a, grid)?;
        self.field(&format!("{prefix}_mu_s"), &p.mu_s, grid)
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.push((key.into(), v));
    }

    fn flag(&mut self, key: impl Into<String>, v: bool) {
        self.metric(key, if v { 1.0 } else { 0.0 });
    }
}

/// Lower-case hexadecimal SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the configured experiment into `out_dir`, which is created if needed.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut run = Run {
        cfg,
        out: out_dir.to_path_buf(),
        files: Vec::new(),
        metrics: Vec::new(),
    };
    use ExperimentKind as K;
    match cfg.kind() {
        K::Forward => run_forward(&mut run)?,
        K::Reconstruct => match cfg.experiment.scheme.expect("validated") {
            Scheme::H1 => run_h1(&mut run)?,
            Scheme::Levelset => run_levelset(&mut run)?,
            Scheme::Kaczmarz => run_kaczmarz(&mut run)?,
        },
        K::Convergence => run_convergence(&mut run)?,
        K::Gradcheck => run_gradcheck(&mut run)?,
        K::BeerLambert => run_beer_lambert(&mut run)?,
        K::EpsContinuation => run_eps_continuation(&mut run)?,
        K::KaczmarzSweep => run_kaczmarz_sweep(&mut run)?,
        K::AdjointIdentity => run_adjoint_identity(&mut run)?,
        K::ScatteringBound => run_scattering_bound(&mut run)?,
        K::SourceIteration => run_source_iteration(&mut run)?,
        K::Continuity => run_continuity(&mut run)?,
        K::Heaviside => run_heaviside(&mut run)?,
    }
    let mut outcome = Outcome {
        kind: cfg.kind(),
        out_dir: out_dir.to_path_buf(),
        metrics: std::mem::take(&mut run.metrics),
        files: Vec::new(),
    };
    run.text("metrics.csv", outcome.metrics_csv())?;
    let manifest = format!(
        "config_sha256={}\nkind={}\nseed={}\npackage={}\nversion={}\nsolver_tol={:e}\n",
        sha256_hex(config_text.as_bytes()),
        cfg.kind().name(),
        cfg.experiment.seed,
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        cfg.solver.tol,
    );
    run.text("manifest.txt", manifest)?;
    outcome.files = run.files;
    Ok(outcome)
}

struct Setup {
    space: PhaseSpace,
    bounds: Bounds,
    truth: OpticalPair,
    sources: Vec<BoundarySource>,
    exact: Vec<Field2>,
}

fn setup(run: &Run<'_>) -> Result<Setup> {
    let cfg = run.cfg;
    let space = cfg.space()?;
    let bounds = cfg.bounds()?;
    let truth = make_phantom(require(&cfg.phantom, "phantom", cfg.kind())?, &space.grid, bounds)?;
    let sources = cfg.boundary_sources(&space)?;
    let opts = cfg.solver_options();
    let exact = sources
        .iter()
        .map(|s| forward(&space, &truth, None, Some(s), opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Setup {
        space,
        bounds,
        truth,
        sources,
        exact,
    })
}

/// `sqrt(mean_m ‖E_m‖²_{L²})`
fn data_norm(data: &[Field2], h: f64) -> f64 {
    (data.iter().map(|e| e.l2_norm(h).powi(2)).sum::<f64>() / data.len() as f64).sqrt()
}

/// Absolute noise level and noisy data; source `m` uses seed `seed + m`.
fn noisy_data(run: &Run<'_>, s: &Setup) -> Result<(f64, Vec<Field2>)> {
    let h = s.space.grid.cell_measure();
    let level = run.cfg.noise.map(|n| n.level).unwrap_or(0.0);
    let delta = level * data_norm(&s.exact, h);
    let data = s
        .exact
        .iter()
        .enumerate()
        .map(|(m, e)| add_noise(e, delta, h, run.cfg.experiment.seed.wrapping_add(m as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok((delta, data))
}

fn tikhonov_config(t: &TikhonovSection, grid: &Grid2D, alpha: f64) -> TikhonovConfig {
    TikhonovConfig {
        max_outer: t.max_iter,
        grad_tol: t.grad_tol,
        memory: t.memory,
        ..TikhonovConfig::with_constant_priors(grid, alpha, t.prior_mu_a, t.prior_mu_s)
    }
}

fn errors(run: &mut Run<'_>, rec: &OpticalPair, truth: &OpticalPair, h: f64) {
    let ea = rec.mu_a.sub(&truth.mu_a).l2_norm(h);
    let es = rec.mu_s.sub(&truth.mu_s).l2_norm(h);
    run.metric("error_mu_a", ea);
    run.metric("error_mu_s", es);
    run.metric("error", (ea * ea + es * es).sqrt());
}

fn monotone(values: impl IntoIterator<Item = f64>) -> bool {
    let v: Vec<f64> = values.into_iter().collect();
    v.windows(2).all(|w| w[1] <= w[0])
}

fn run_forward(run: &mut Run<'_>) -> Result<()> {
    let s = setup(run)?;
    let grid = s.space.grid;
    let h = grid.cell_measure();
    run.pair("truth", &s.truth, &grid)?;
    let (delta, data) = noisy_data(run, &s)?;
    run.metric("delta", delta);
    for (m, src) in s.sources.iter().enumerate() {
        let st = forward_state(&s.space, &s.truth, None, Some(src), run.cfg.solver_options())?;
        run.field(&format!("fluence_{m}"), &st.fluence, &grid)?;
        run.field(&format!("energy_{m}"), &st.energy, &grid)?;
        run.field(&format!("data_{m}"), &data[m], &grid)?;
        run.metric(format!("energy_norm_{m}"), st.energy.l2_norm(h));
        run.metric(format!("iterations_{m}"), st.iterations as f64);
    }
    Ok(())
}

fn run_h1(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let (delta, data) = noisy_data(run, &s)?;
    let t = require(&cfg.tikhonov, "tikhonov", cfg.kind())?;
    let alpha = match t.alpha {
        Some(a) => a,
        None => {
            let rule = require(&cfg.alpha_rule, "alpha_rule", cfg.kind())?;
            choose_alpha(delta, 2.0, rule.c, rule.r)?
        }
    };
    let tcfg = tikhonov_config(t, &grid, alpha);
    let fit = DataFit::new(&s.space, &s.sources, &data, cfg.solver_options())?;
    let rep = reconstruct(&fit, &tcfg, s.bounds, None)?;
    run.pair("truth", &s.truth, &grid)?;
    run.pair("recon", &rep.pair, &grid)?;
    run.text("iterations.csv", rep.log_csv())?;
    run.metric("delta", delta);
    run.metric("alpha", alpha);
    errors(run, &rep.pair, &s.truth, grid.cell_measure());
    run.metric("functional", rep.final_value());
    run.metric("iterations", rep.iterations() as f64);
    run.flag("monotone", monotone(rep.history.iter().map(|h| h.value)));
    run.flag("converged", rep.termination == crate::lbfgs::Termination::Converged);
    Ok(())
}

fn run_kaczmarz(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let (delta, data) = noisy_data(run, &s)?;
    let t = require(&cfg.tikhonov, "tikhonov", cfg.kind())?;
    let k = require(&cfg.kaczmarz, "kaczmarz", cfg.kind())?;
    let alpha = match t.alpha {
        Some(a) => a,
        None => {
            let rule = require(&cfg.alpha_rule, "alpha_rule", cfg.kind())?;
            choose_alpha(delta, 2.0, rule.c, rule.r)?
        }
    };
    let tcfg = tikhonov_config(t, &grid, alpha);
    let fit = DataFit::new(&s.space, &s.sources, &data, cfg.solver_options())?;
    let mut pair = tcfg.priors(s.bounds).project();
    let mut log = String::from("sweep,misfit,functional\n");
    let objective = |p: &OpticalPair| -> Result<(f64, f64)> {
        let m = fit.value(p)?;
        Ok((m, m + alpha * penalty_value(p, &tcfg, &grid)))
    };
    let (m0, j0) = objective(&pair)?;
    let _ = writeln!(log, "0,{m0:e},{j0:e}");
    let mut values = vec![j0];
    for sweep in 1..=k.sweeps {
        pair = kaczmarz_sweep(&fit, &pair, &tcfg, k.initial_step)?.0;
        let (m, j) = objective(&pair)?;
        let _ = writeln!(log, "{sweep},{m:e},{j:e}");
        values.push(j);
    }
    run.pair("truth", &s.truth, &grid)?;
    run.pair("recon", &pair, &grid)?;
    run.text("sweeps.csv", log)?;
    run.metric("delta", delta);
    run.metric("alpha", alpha);
    errors(run, &pair, &s.truth, grid.cell_measure());
    run.metric("misfit_initial", m0);
    run.metric("functional_final", *values.last().expect("nonempty"));
    Ok(())
}

fn levelset_parts(ls: &LevelSetSection, grid: &Grid2D) -> (LevelSetState, LevelSetConfig) {
    let phi = signed_distance_circle(
        grid,
        ls.init_cx * grid.lx(),
        ls.init_cy * grid.ly(),
        ls.init_radius * grid.lx(),
    );
    let b = MaterialConstants {
        a1: ls.a1,
        a2: ls.a2,
        c1: ls.c1,
        c2: ls.c2,
    };
    let state = LevelSetState::new(phi.clone(), phi, b, ls.epsilon_cells * grid.hx());
    let lcfg = LevelSetConfig {
        alpha: ls.alpha,
        beta_tv: ls.beta_tv,
        max_iter: ls.max_iter,
        grad_tol: ls.grad_tol,
        memory: 10,
    };
    (state, lcfg)
}

/// Cell masks (+1 inside, −1 outside) of the first inclusion, or all −1.
fn truth_mask(cfg: &ExperimentConfig, grid: &Grid2D) -> Field2 {
    match cfg.phantom.as_ref().and_then(|p| p.inclusions.first()) {
        Some(inc) => shape_mask(&inc.shape, grid),
        None => Field2::constant(grid.nx(), grid.ny(), -1.0),
    }
}

fn run_levelset(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let (delta, data) = noisy_data(run, &s)?;
    let ls = require(&cfg.levelset, "levelset", cfg.kind())?;
    let (init, lcfg) = levelset_parts(ls, &grid);
    let fit = DataFit::new(&s.space, &s.sources, &data, cfg.solver_options())?;
    let rep = reconstruct_levelset(&fit, &init, &lcfg, s.bounds)?;
    let mask = truth_mask(cfg, &grid);
    run.pair("truth", &s.truth, &grid)?;
    run.pair("recon", &rep.pair, &grid)?;
    run.field("phi_a", &rep.state.phi_a, &grid)?;
    run.field("phi_s", &rep.state.phi_s, &grid)?;
    run.text("iterations.csv", rep.log_csv())?;
    run.metric("delta", delta);
    run.metric("epsilon", init.epsilon);
    run.metric("jaccard_initial", jaccard(&init.phi_a, &mask));
    run.metric("jaccard_mu_a", jaccard(&rep.state.phi_a, &mask));
    run.metric("jaccard_mu_s", jaccard(&rep.state.phi_s, &mask));
    run.metric("functional", rep.history.last().map(|h| h.value).unwrap_or(f64::NAN));
    run.metric("iterations", rep.iterations() as f64);
    run.flag("monotone", monotone(rep.history.iter().map(|h| h.value)));
    errors(run, &rep.pair, &s.truth, grid.cell_measure());
    Ok(())
}

fn run_eps_continuation(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let (_, data) = noisy_data(run, &s)?;
    let ls = require(&cfg.levelset, "levelset", cfg.kind())?;
    let (init, lcfg) = levelset_parts(ls, &grid);
    let eps: Vec<f64> = ls
        .eps_list_cells
        .as_ref()
        .expect("validated")
        .iter()
        .map(|e| e * grid.hx())
        .collect();
    let fit = DataFit::new(&s.space, &s.sources, &data, cfg.solver_options())?;
    let steps = eps_continuation(&fit, &init, &eps, &lcfg, s.bounds)?;
    let mask = truth_mask(cfg, &grid);
    let mut table = String::from("step,epsilon,iterations,functional,jaccard_mu_a,l1_gap\n");
    let mut gaps = Vec::new();
    let mut admissible = true;
    for (k, st) in steps.iter().enumerate() {
        let j = jaccard(&st.report.state.phi_a, &mask);
        let gap = st.l1_gap.unwrap_or(f64::NAN);
        let _ = writeln!(
            table,
            "{k},{:e},{},{:e},{:e},{gap:e}",
            st.epsilon,
            st.report.iterations(),
            st.report.history.last().map(|h| h.value).unwrap_or(f64::NAN),
            j
        );
        admissible &= st.report.pair.validate().is_ok();
        if let Some(g) = st.l1_gap {
            gaps.push(g);
            run.metric(format!("l1_gap_{k}"), g);
        }
        run.field(&format!("phi_a_step{k}"), &st.report.state.phi_a, &grid)?;
    }
    run.text("continuation.csv", table)?;
    run.flag("gaps_decreasing", gaps.windows(2).all(|w| w[1] < w[0]));
    run.flag("admissible", admissible);
    Ok(())
}

fn run_convergence(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let h = grid.cell_measure();
    let t = require(&cfg.tikhonov, "tikhonov", cfg.kind())?;
    let rule = require(&cfg.alpha_rule, "alpha_rule", cfg.kind())?;
    let levels = &require(&cfg.convergence, "convergence", cfg.kind())?.levels;
    let norm = data_norm(&s.exact, h);
    let deltas: Vec<f64> = levels.iter().map(|l| l * norm).collect();
    let tcfg = tikhonov_config(t, &grid, 1.0);
    let fit = DataFit::new(&s.space, &s.sources, &s.exact, cfg.solver_options())?;
    let table = convergence_study(
        &fit,
        &s.truth,
        &deltas,
        AlphaRule { c: rule.c, r: rule.r },
        &tcfg,
        cfg.experiment.seed,
    )?;
    run.pair("truth", &s.truth, &grid)?;
    run.text("convergence.csv", table.to_csv())?;
    run.metric("energy_norm", norm);
    let noisy = &table.rows[..table.rows.len() - 1];
    for (k, r) in table.rows.iter().enumerate() {
        run.metric(format!("error_{k}"), r.error);
    }
    let within_slack = noisy.windows(2).all(|w| w[1].error <= 1.1 * w[0].error);
    let zero = table.rows.last().expect("nonempty").error;
    let smallest = noisy.iter().all(|r| zero <= r.error);
    run.flag("non_increasing_with_slack", within_slack);
    run.flag("zero_noise_smallest", smallest);
    Ok(())
}

fn random_field(rng: &mut ChaCha8Rng, nx: usize, ny: usize, lo: f64, hi: f64) -> Field2 {
    let data = (0..nx * ny).map(|_| rng.random_range(lo..hi)).collect();
    Field2::from_vec(nx, ny, data).expect("sized")
}

fn random_angular(rng: &mut ChaCha8Rng, space: &PhaseSpace, lo: f64, hi: f64) -> AngularField {
    let (nx, ny, ns) = (space.grid.nx(), space.grid.ny(), space.ns());
    let data = (0..nx * ny * ns).map(|_| rng.random_range(lo..hi)).collect();
    AngularField::from_vec(nx, ny, ns, data).expect("sized")
}

fn run_gradcheck(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let h = grid.cell_measure();
    let gc = require(&cfg.gradcheck, "gradcheck", cfg.kind())?;
    let t = require(&cfg.tikhonov, "tikhonov", cfg.kind())?;
    let ls = require(&cfg.levelset, "levelset", cfg.kind())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    let (nx, ny) = (grid.nx(), grid.ny());
    let fit = DataFit::new(&s.space, &s.sources, &s.exact, cfg.solver_options())?;
    let tcfg = tikhonov_config(t, &grid, t.alpha.unwrap_or(1e-3));
    let base = tcfg.priors(s.bounds);
    let mut table = String::from("term,direction,step,finite_difference,adjoint,relative_error\n");
    let push = |table: &mut String, term: &str, d: usize, rows: &[crate::sensitivity::FdRow]| {
        for r in rows {
            let _ = writeln!(
                table,
                "{term},{d},{:e},{:e},{:e},{:e}",
                r.step, r.finite_difference, r.adjoint, r.relative_error
            );
        }
    };

    let (mut worst_misfit, mut worst_penalty, mut worst_levelset) = (0.0f64, 0.0f64, 0.0f64);
    let penalty_grad = penalty_gradient(&s.truth, &tcfg, &grid)?;
    for d in 0..gc.directions {
        let dir = CoefficientDirection {
            d_a: random_field(&mut rng, nx, ny, -1.0, 1.0).scale(0.5 * t.prior_mu_a),
            d_s: random_field(&mut rng, nx, ny, -1.0, 1.0).scale(0.5 * t.prior_mu_s),
        };
        let rep = fd_check(&fit, &base, &dir, &gc.steps)?;
        push(&mut table, "misfit", d, &rep.rows);
        worst_misfit = worst_misfit.max(rep.min_error);

        let adj = penalty_grad.pair_with(&dir, h);
        let rep = central_difference_table(adj, &gc.steps, |st| {
            Ok(tcfg.alpha * penalty_value(&s.truth.perturbed(st, &dir.d_a, &dir.d_s), &tcfg, &grid))
        })?;
        push(&mut table, "penalty", d, &rep.rows);
        worst_penalty = worst_penalty.max(rep.min_error);
    }

    let (init, lcfg) = levelset_parts(ls, &grid);
    let eps = init.epsilon;
    let r0 = ls.init_radius * grid.lx();
    let (cx, cy) = (ls.init_cx * grid.lx(), ls.init_cy * grid.ly());
    let state = LevelSetState {
        phi_a: signed_distance_circle(&grid, cx, cy, r0),
        phi_s: signed_distance_circle(&grid, cx + 0.05 * grid.lx(), cy, 1.2 * r0),
        phi_a0: signed_distance_circle(&grid, cx, cy, 0.8 * r0),
        phi_s0: signed_distance_circle(&grid, cx, cy - 0.05 * grid.ly(), r0),
        ..init
    };
    let margin = 0.2 * eps;
    let ramp = |phi: &Field2| phi.map(|v| if v > -eps + margin && v < -margin { 1.0 } else { 0.0 });
    let (mask_a, mask_s) = (ramp(&state.phi_a), ramp(&state.phi_s));
    run.metric("ramp_cells_phi_a", mask_a.sum());
    run.metric("ramp_cells_phi_s", mask_s.sum());
    let (ga, gs) = levelset_gradient(&fit, &state, &lcfg, s.bounds)?;
    let ls_steps: Vec<f64> = gc.steps.iter().map(|st| st * 10.0 * eps).collect();
    for d in 0..gc.directions {
        let da = random_field(&mut rng, nx, ny, -1.0, 1.0).mul(&mask_a);
        let ds = random_field(&mut rng, nx, ny, -1.0, 1.0).mul(&mask_s);
        let adj = ga.inner(&da, h) + gs.inner(&ds, h);
        let rep = central_difference_table(adj, &ls_steps, |st| {
            let trial = state.with_fields(state.phi_a.axpy(st, &da), state.phi_s.axpy(st, &ds));
            eval_geps(&fit, &trial, &lcfg, s.bounds)
        })?;
        push(&mut table, "levelset", d, &rep.rows);
        worst_levelset = worst_levelset.max(rep.min_error);
    }
    run.text("gradcheck.csv", table)?;
    run.metric("misfit_max_error", worst_misfit);
    run.metric("penalty_max_error", worst_penalty);
    run.metric("levelset_max_error", worst_levelset);
    Ok(())
}

fn run_beer_lambert(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let bl = require(&cfg.beer_lambert, "beer_lambert", cfg.kind())?;
    if bl.resolutions.len() < 2 {
        return Err(Error::Config("[beer_lambert] needs at least two resolutions".into()));
    }
    let mut table = String::from("n,h,max_relative_error\n");
    let mut errs = Vec::new();
    for &n in &bl.resolutions {
        let grid = Grid2D::new(n, n, cfg.grid.lx, cfg.grid.ly)?;
        let space = PhaseSpace::new(grid, cfg.quadrature.ns, 0.0)?;
        let src = BoundarySource::patch(
            &space,
            PatchSpec {
                side: Side::Left,
                center: bl.center,
                width: bl.width,
                intensity: 1.0,
                profile: AngularProfile::Collimated(bl.ordinate),
            },
        )?;
        let mu_a = Field2::constant(n, n, bl.mu_a);
        let u = solve_pure_absorber(&space, &mu_a, None, Some(&src))?;
        let (dx, dy) = space.quad.direction(bl.ordinate);
        let y0 = bl.center * grid.ly();
        let mut profile = String::from("i,j,x,numerical,exact\n");
        let mut worst = 0.0f64;
        for i in 0..n {
            let (x, _) = grid.center(i, 0);
            let y = y0 + dy / dx * x;
            if !(0.0..grid.ly()).contains(&y) {
                continue;
            }
            let j = ((y / grid.hy()).floor() as usize).min(n - 1);
            let exact = (-bl.mu_a * x / dx).exp();
            let num = u.get(i, j, bl.ordinate);
            worst = worst.max((num - exact).abs() / exact);
            let _ = writeln!(profile, "{i},{j},{x:e},{num:e},{exact:e}");
        }
        run.text(&format!("beam_{n}.csv"), profile)?;
        let _ = writeln!(table, "{n},{:e},{worst:e}", grid.hx());
        run.metric(format!("error_{n}"), worst);
        errs.push(worst);
    }
    run.text("beer_lambert.csv", table)?;
    let k = errs.len();
    run.metric("error_ratio", errs[k - 2] / errs[k - 1]);
    Ok(())
}

fn run_kaczmarz_sweep(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let (_, data) = noisy_data(run, &s)?;
    let t = require(&cfg.tikhonov, "tikhonov", cfg.kind())?;
    let k = require(&cfg.kaczmarz, "kaczmarz", cfg.kind())?;
    let tcfg = tikhonov_config(t, &grid, t.alpha.expect("validated"));
    let fit = DataFit::new(&s.space, &s.sources, &data, cfg.solver_options())?;
    let start = tcfg.priors(s.bounds).project();
    let before = fit.value(&start)?;
    let (after_pair, log) = kaczmarz_sweep(&fit, &start, &tcfg, k.initial_step)?;
    let after = fit.value(&after_pair)?;
    let mut table = String::from("source,accepted,value_before,value_after,step\n");
    let mut substeps_monotone = true;
    for l in &log {
        let _ = writeln!(
            table,
            "{},{},{:e},{:e},{:e}",
            l.source, l.step.accepted as u8, l.step.value_before, l.step.value_after, l.step.step
        );
        substeps_monotone &= l.step.value_after <= l.step.value_before;
    }
    run.text("substeps.csv", table)?;
    run.pair("sweep", &after_pair, &grid)?;
    run.metric("sources", s.sources.len() as f64);
    run.metric("misfit_before", before);
    run.metric("misfit_after", after);
    run.flag("strictly_reduced", after < before);
    run.flag("substeps_monotone", substeps_monotone);

    let single = fit.single(0);
    let (via_sweep, _) = kaczmarz_sweep(&single, &start, &tcfg, k.initial_step)?;
    let (via_step, _) = projected_gradient_step(&single, &start, &tcfg, k.initial_step)?;
    let same = via_sweep
        .mu_a
        .as_slice()
        .iter()
        .chain(via_sweep.mu_s.as_slice())
        .zip(via_step.mu_a.as_slice().iter().chain(via_step.mu_s.as_slice()))
        .all(|(a, b)| a.to_bits() == b.to_bits());
    run.flag("single_source_bit_exact", same);
    Ok(())
}

fn random_pair(rng: &mut ChaCha8Rng, grid: &Grid2D, bounds: Bounds) -> OpticalPair {
    let (nx, ny) = (grid.nx(), grid.ny());
    OpticalPair {
        mu_a: random_field(rng, nx, ny, bounds.lo, bounds.hi),
        mu_s: random_field(rng, nx, ny, bounds.lo, bounds.hi),
        bounds,
    }
}

fn run_adjoint_identity(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let space = cfg.space()?;
    let bounds = cfg.bounds()?;
    let trials = require(&cfg.properties, "properties", cfg.kind())?.trials;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    let m = space.element_measure();
    let mut table = String::from("trial,lhs,rhs,normalised_gap\n");
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let pair = random_pair(&mut rng, &space.grid, bounds);
        let u = random_angular(&mut rng, &space, -1.0, 1.0);
        let v = random_angular(&mut rng, &space, -1.0, 1.0);
        let lhs = m * apply_transport(&space, &u, &pair)?.dot_raw(&v);
        let rhs = m * u.dot_raw(&apply_transport_adjoint(&space, &v, &pair)?);
        let gap = (lhs - rhs).abs() / (u.lp_norm(2.0, m) * v.lp_norm(2.0, m));
        worst = worst.max(gap);
        let _ = writeln!(table, "{trial},{lhs:e},{rhs:e},{gap:e}");
    }
    run.text("adjoint_identity.csv", table)?;
    run.metric("trials", trials as f64);
    run.metric("max_normalised_gap", worst);
    Ok(())
}

fn run_scattering_bound(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let space = cfg.space()?;
    let bounds = cfg.bounds()?;
    let trials = require(&cfg.properties, "properties", cfg.kind())?.trials;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    let m = space.element_measure();
    let mut table = String::from("trial,p,norm_ku,bound\n");
    let (mut worst, mut violations) = (0.0f64, 0usize);
    for trial in 0..trials {
        let pair = random_pair(&mut rng, &space.grid, bounds);
        let (lo, hi) = if trial % 2 == 0 { (-1.0, 1.0) } else { (0.0, 1.0) };
        let u = random_angular(&mut rng, &space, lo, hi);
        let ku = apply_scattering(&space, &u, &pair)?;
        for p in [1.0, 2.0, f64::INFINITY] {
            let lhs = ku.lp_norm(p, m);
            let rhs = bounds.hi * u.lp_norm(p, m);
            worst = worst.max(lhs / rhs);
            violations += (lhs > rhs) as usize;
            let _ = writeln!(table, "{trial},{p},{lhs:e},{rhs:e}");
        }
    }
    run.text("scattering_bound.csv", table)?;
    run.metric("trials", trials as f64);
    run.metric("max_ratio", worst);
    run.metric("violations", violations as f64);
    Ok(())
}

fn run_source_iteration(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let space = cfg.space()?;
    let bounds = cfg.bounds()?;
    let props = require(&cfg.properties, "properties", cfg.kind())?;
    let rho_max = props.max_scattering_ratio.unwrap_or(0.9);
    let opts = cfg.solver_options();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    let (nx, ny) = (space.grid.nx(), space.grid.ny());
    let mut table = String::from("trial,max_scattering_ratio,iterations,final_relative_residual,min_radiance,monotone\n");
    let (mut all_monotone, mut all_converged) = (true, true);
    let (mut min_u, mut max_iter, mut max_rho) = (f64::INFINITY, 0usize, 0.0f64);
    for trial in 0..props.trials {
        let mu_a = random_field(&mut rng, nx, ny, 0.05, 0.5).map(|v| bounds.clamp(v));
        let rho = random_field(&mut rng, nx, ny, 0.0, rho_max);
        let mu_s = mu_a.zip_map(&rho, |a, r| bounds.clamp(a * r / (1.0 - r)));
        let pair = OpticalPair { mu_a, mu_s, bounds };
        let side = Side::ALL[rng.random_range(0..4)];
        let src = BoundarySource::patch(
            &space,
            PatchSpec {
                side,
                center: rng.random_range(0.3..0.7),
                width: 0.4,
                intensity: rng.random_range(0.5..2.0),
                profile: AngularProfile::Diffuse,
            },
        )?;
        let q = random_angular(&mut rng, &space, 0.0, 1.0);
        let q = if trial % 2 == 0 { Some(&q) } else { None };
        let rep = solve_rte(&space, &pair, q, Some(&src), opts)?;
        let mono = rep.residuals.windows(2).all(|w| w[1] < w[0]);
        let lo = rep.radiance.min();
        let ratio = pair.scattering_ratio();
        all_monotone &= mono;
        all_converged &= rep.relative_residual <= opts.tol;
        min_u = min_u.min(lo);
        max_iter = max_iter.max(rep.iterations());
        max_rho = max_rho.max(ratio);
        let _ = writeln!(
            table,
            "{trial},{ratio:e},{},{:e},{lo:e},{}",
            rep.iterations(),
            rep.relative_residual,
            mono as u8
        );
    }
    run.text("source_iteration.csv", table)?;
    run.flag("monotone", all_monotone);
    run.flag("converged", all_converged);
    run.metric("min_radiance", min_u);
    run.metric("max_iterations", max_iter as f64);
    run.metric("max_scattering_ratio", max_rho);
    Ok(())
}

fn run_continuity(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let s = setup(run)?;
    let grid = s.space.grid;
    let h = grid.cell_measure();
    let props = require(&cfg.properties, "properties", cfg.kind())?;
    let steps = props.steps.clone().unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4]);
    let spec = cfg.phantom.as_ref().expect("validated");
    let sigma = 0.15 * grid.lx();
    let (cx, cy) = (0.35 * grid.lx(), 0.6 * grid.ly());
    let bump = Field2::from_fn(&grid, |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp());
    let (da, ds) = (bump.scale(0.5 * spec.mu_a), bump.scale(0.5 * spec.mu_s));
    let dnorm = (da.l2_norm(h).powi(2) + ds.l2_norm(h).powi(2)).sqrt();
    let opts = cfg.solver_options();
    let mut table = String::from("t,response,ratio\n");
    let mut ratios = Vec::new();
    for &t in &steps {
        let p = s.truth.perturbed(t, &da, &ds);
        let mut sq = 0.0;
        for (src, e) in s.sources.iter().zip(&s.exact) {
            sq += forward(&s.space, &p, None, Some(src), opts)?.sub(e).l2_norm(h).powi(2);
        }
        let resp = sq.sqrt();
        let ratio = resp / (t * dnorm);
        ratios.push(ratio);
        let _ = writeln!(table, "{t:e},{resp:e},{ratio:e}");
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    run.text("continuity.csv", table)?;
    run.metric("ratio_min", lo);
    run.metric("ratio_max", hi);
    run.metric("ratio_spread", hi / lo - 1.0);
    Ok(())
}

fn run_heaviside(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let grid = cfg.grid()?;
    let bounds = cfg.bounds()?;
    let props = require(&cfg.properties, "properties", cfg.kind())?;
    let eps_list = props.epsilons.clone().unwrap_or_else(|| vec![0.08, 0.04, 0.02, 0.01]);
    let e = 0.37;
    let branches = heaviside_eps(0.0, e) == 1.0
        && heaviside_eps(-e, e) == 0.0
        && (heaviside_eps(-0.5 * e, e) - 0.5).abs() <= 1e-15;
    run.flag("branch_values", branches);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    let mut convex = true;
    let small = Grid2D::new(16, 16, grid.lx(), grid.ly())?;
    for _ in 0..props.trials {
        let mut draw = || rng.random_range(bounds.lo..=bounds.hi);
        let b = MaterialConstants {
            a1: draw(),
            a2: draw(),
            c1: draw(),
            c2: draw(),
        };
        let eps = rng.random_range(0.01..0.5);
        let pa = random_field(&mut rng, small.nx(), small.ny(), -1.0, 1.0);
        let ps = random_field(&mut rng, small.nx(), small.ny(), -1.0, 1.0);
        let st = LevelSetState::new(pa, ps, b, eps);
        let p = project_peps(&st, bounds)?;
        let within = |f: &Field2, x: f64, y: f64| f.min() >= x.min(y) && f.max() <= x.max(y);
        convex &= p.validate().is_ok() && within(&p.mu_a, b.a1, b.a2) && within(&p.mu_s, b.c1, b.c2);
    }
    run.flag("convex_combination", convex);

    let h = grid.cell_measure();
    let phi = signed_distance_circle(&grid, 0.5 * grid.lx(), 0.5 * grid.ly(), 0.3 * grid.lx());
    let sharp = phi.map(heaviside);
    let mut table = String::from("epsilon,l1_gap\n");
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &eps in &eps_list {
        let gap = heaviside_field(&phi, eps).sub(&sharp).l1_norm(h);
        let _ = writeln!(table, "{eps:e},{gap:e}");
        xs.push(eps.ln());
        ys.push(gap.ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    run.text("heaviside.csv", table)?;
    run.metric("l1_slope", sxy / sxx);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_sequences() {
        assert!(monotone([3.0, 2.0, 2.0, 1.0]));
        assert!(!monotone([3.0, 2.0, 2.5]));
        assert!(monotone(std::iter::empty()));
    }

    #[test]
    fn data_norm_is_root_mean_square() {
        let a = Field2::constant(2, 2, 1.0);
        let b = Field2::constant(2, 2, 3.0);
        let h = 0.25;
        let expected = ((1.0 + 9.0) / 2.0f64).sqrt();
        assert!((data_norm(&[a, b], h) - expected).abs() < 1e-15);
    }

    #[test]
    fn metrics_csv_layout() {
        let o = Outcome {
            kind: ExperimentKind::Heaviside,
            out_dir: PathBuf::new(),
            metrics: vec![("a".into(), 0.5), ("b".into(), 2.0)],
            files: Vec::new(),
        };
        assert_eq!(o.metrics_csv(), "metric,value\na,5e-1\nb,2e0\n");
        assert_eq!(o.metric("b"), Some(2.0));
        assert_eq!(o.metric("c"), None);
    }
}
