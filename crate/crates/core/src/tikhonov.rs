//! Tikhonov regularisation with an `H¹` penalty for smooth coefficients.

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::forward::{add_noise, forward};
use crate::grid::{Grid2D, OpticalPair};
use crate::lbfgs::{minimize_projected, IterationRecord, LbfgsOptions, Termination};
use crate::sensitivity::{DataFit, MisfitGradient};

/// Five-point Laplacian with reflected ghost cells (homogeneous Neumann).
pub fn neumann_laplacian(f: &Field2, grid: &Grid2D) -> Field2 {
    let (nx, ny) = (f.nx(), f.ny());
    let (ix2, iy2) = (1.0 / grid.hx().powi(2), 1.0 / grid.hy().powi(2));
    let mut out = Field2::zeros(nx, ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = f.get(i, j);
            let w = if i > 0 { f.get(i - 1, j) } else { c };
            let e = if i + 1 < nx { f.get(i + 1, j) } else { c };
            let s = if j > 0 { f.get(i, j - 1) } else { c };
            let n = if j + 1 < ny { f.get(i, j + 1) } else { c };
            out.set(i, j, (w - 2.0 * c + e) * ix2 + (s - 2.0 * c + n) * iy2);
        }
    }
    out
}

/// Discrete `‖f‖²_{H¹} = ‖f‖²_{L²} + ‖∇_h f‖²_{L²}`, forward differences,
/// no difference across the boundary.
pub fn h1_norm_sq(f: &Field2, grid: &Grid2D) -> f64 {
    let (nx, ny) = (f.nx(), f.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut grad = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let c = f.get(i, j);
            if i + 1 < nx {
                grad += ((f.get(i + 1, j) - c) / hx).powi(2);
            }
            if j + 1 < ny {
                grad += ((f.get(i, j + 1) - c) / hy).powi(2);
            }
        }
    }
    grid.cell_measure() * (f.dot_raw(f) + grad)
}

/// `L²` representer of `d/df ‖f‖²_{H¹}`, i.e. `2 (I − Δ_N) f`.
pub fn h1_norm_sq_gradient(f: &Field2, grid: &Grid2D) -> Field2 {
    f.sub(&neumann_laplacian(f, grid)).scale(2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovConfig {
    pub alpha: f64,
    /// Misfit exponent in `[1, 2]`; minimisation requires `p = 2`.
    pub p: f64,
    pub prior_a: Field2,
    pub prior_s: Field2,
    pub max_outer: usize,
    pub grad_tol: f64,
    pub memory: usize,
}

impl TikhonovConfig {
    /// Constant priors, `α`, and defaults for the rest.
    pub fn with_constant_priors(grid: &Grid2D, alpha: f64, prior_a: f64, prior_s: f64) -> Self {
        TikhonovConfig {
            alpha,
            p: 2.0,
            prior_a: Field2::constant(grid.nx(), grid.ny(), prior_a),
            prior_s: Field2::constant(grid.nx(), grid.ny(), prior_s),
            max_outer: 200,
            grad_tol: 1e-9,
            memory: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularisation weight must be positive, got {}",
                self.alpha
            )));
        }
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!(
                "misfit exponent must lie in [1, 2], got {}",
                self.p
            )));
        }
        if !self.prior_a.same_shape(&self.prior_s) {
            return Err(Error::shape("matching priors", "mismatched priors"));
        }
        Ok(())
    }

    pub fn priors(&self, bounds: crate::grid::Bounds) -> OpticalPair {
        OpticalPair {
            mu_a: self.prior_a.clone(),
            mu_s: self.prior_s.clone(),
            bounds,
        }
    }
}

/// `‖μa − μa0‖²_{H¹} + ‖μs − μs0‖²_{H¹}`
pub fn penalty_value(pair: &OpticalPair, cfg: &TikhonovConfig, grid: &Grid2D) -> f64 {
    h1_norm_sq(&pair.mu_a.sub(&cfg.prior_a), grid) + h1_norm_sq(&pair.mu_s.sub(&cfg.prior_s), grid)
}

/// `2α (I − Δ_N)(μ − μ0)` for both coefficients.
pub fn penalty_gradient(pair: &OpticalPair, cfg: &TikhonovConfig, grid: &Grid2D) -> Result<MisfitGradient> {
    pair.check_grid(grid)?;
    cfg.prior_a.check_shape(grid.nx(), grid.ny())?;
    Ok(MisfitGradient {
        g_a: h1_norm_sq_gradient(&pair.mu_a.sub(&cfg.prior_a), grid).scale(cfg.alpha),
        g_s: h1_norm_sq_gradient(&pair.mu_s.sub(&cfg.prior_s), grid).scale(cfg.alpha),
    })
}

/// `Σ_m (1/p) ‖F_m(μ) − E_m‖ᵖ_{Lᵖ}`
pub fn misfit_p(fit: &DataFit<'_>, pair: &OpticalPair, p: f64) -> Result<f64> {
    let mut total = 0.0;
    for (src, e) in fit.sources.iter().zip(fit.data) {
        let f = forward(fit.space, pair, fit.q, Some(src), fit.opts)?;
        total += f.sub(e).lp_norm(p, fit.cell_measure()).powf(p) / p;
    }
    Ok(total)
}

/// `J_α(μ) = (1/p)‖F(μ) − E‖ᵖ + α (‖μa − μa0‖²_{H¹} + ‖μs − μs0‖²_{H¹})`
pub fn eval_functional(fit: &DataFit<'_>, pair: &OpticalPair, cfg: &TikhonovConfig) -> Result<f64> {
    cfg.validate()?;
    pair.validate()?;
    Ok(misfit_p(fit, pair, cfg.p)? + cfg.alpha * penalty_value(pair, cfg, &fit.space.grid))
}

/// Value and total gradient of `J_α` for `p = 2`.
pub fn value_and_gradient(fit: &DataFit<'_>, pair: &OpticalPair, cfg: &TikhonovConfig) -> Result<(f64, MisfitGradient)> {
    let grid = &fit.space.grid;
    let (misfit, g) = fit.value_and_gradient(pair)?;
    let value = misfit + cfg.alpha * penalty_value(pair, cfg, grid);
    Ok((value, g.add(&penalty_gradient(pair, cfg, grid)?)))
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub history: Vec<IterationRecord>,
    pub pair: OpticalPair,
    pub termination: Termination,
}

impl ReconstructionReport {
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    pub fn final_value(&self) -> f64 {
        self.history.last().map(|h| h.value).unwrap_or(f64::NAN)
    }

    /// Line-delimited log: `iteration,J,grad_norm,step`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,J,grad_norm,step\n");
        for h in &self.history {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", h.iteration, h.value, h.grad_norm, h.step));
        }
        s
    }
}

pub(crate) fn concat(a: &Field2, b: &Field2) -> Vec<f64> {
    let mut v = a.as_slice().to_vec();
    v.extend_from_slice(b.as_slice());
    v
}

pub(crate) fn split(x: &[f64], nx: usize, ny: usize) -> (Field2, Field2) {
    let n = nx * ny;
    (
        Field2::from_vec(nx, ny, x[..n].to_vec()).expect("sized"),
        Field2::from_vec(nx, ny, x[n..].to_vec()).expect("sized"),
    )
}

/// Projected L-BFGS on `J_α` (p = 2) over the admissible box, starting from
/// `start` or, if `None`, from the priors.
pub fn reconstruct(
    fit: &DataFit<'_>,
    cfg: &TikhonovConfig,
    bounds: crate::grid::Bounds,
    start: Option<&OpticalPair>,
) -> Result<ReconstructionReport> {
    cfg.validate()?;
    if cfg.p != 2.0 {
        return Err(Error::InvalidParameter(format!(
            "minimisation is implemented for p = 2 only, got p = {}",
            cfg.p
        )));
    }
    let grid = fit.space.grid;
    let (nx, ny) = (grid.nx(), grid.ny());
    let x0 = match start {
        Some(p) => {
            p.check_grid(&grid)?;
            concat(&p.mu_a, &p.mu_s)
        }
        None => concat(&cfg.prior_a, &cfg.prior_s),
    };
    let lower = vec![bounds.lo; 2 * nx * ny];
    let upper = vec![bounds.hi; 2 * nx * ny];
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (mu_a, mu_s) = split(x, nx, ny);
        let pair = OpticalPair { mu_a, mu_s, bounds };
        let (v, g) = value_and_gradient(fit, &pair, cfg)?;
        Ok((v, concat(&g.g_a, &g.g_s)))
    };
    let rep = minimize_projected(
        objective,
        x0,
        &lower,
        &upper,
        LbfgsOptions {
            memory: cfg.memory,
            max_iter: cfg.max_outer,
            grad_tol: cfg.grad_tol,
            measure: grid.cell_measure(),
            ..Default::default()
        },
    )?;
    let (mu_a, mu_s) = split(&rep.x, nx, ny);
    Ok(ReconstructionReport {
        history: rep.history,
        pair: OpticalPair { mu_a, mu_s, bounds },
        termination: rep.termination,
    })
}

/// Outcome of a single projected-gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub value_before: f64,
    pub value_after: f64,
    pub step: f64,
    pub accepted: bool,
}

/// One projected steepest-descent step on `misfit + α · penalty` with
/// Armijo backtracking. The pair is returned unchanged when the gradient
/// vanishes or no trial step decreases the objective.
pub fn projected_gradient_step(
    fit: &DataFit<'_>,
    pair: &OpticalPair,
    cfg: &TikhonovConfig,
    initial_step: f64,
) -> Result<(OpticalPair, StepLog)> {
    let grid = fit.space.grid;
    let h = grid.cell_measure();
    let (f0, g) = value_and_gradient(fit, pair, cfg)?;
    let gmax = g.g_a.max_abs().max(g.g_s.max_abs());
    let unchanged = |f0| StepLog {
        value_before: f0,
        value_after: f0,
        step: 0.0,
        accepted: false,
    };
    if gmax == 0.0 {
        return Ok((pair.clone(), unchanged(f0)));
    }
    let xmax = pair.mu_a.max_abs().max(pair.mu_s.max_abs()).max(1.0);
    let mut t = initial_step * xmax / gmax;
    for _ in 0..40 {
        let trial = pair.perturbed(-t, &g.g_a, &g.g_s).project();
        let moved_a = trial.mu_a.sub(&pair.mu_a);
        let moved_s = trial.mu_s.sub(&pair.mu_s);
        let decrease = g.g_a.inner(&moved_a, h) + g.g_s.inner(&moved_s, h);
        if moved_a.max_abs() > 0.0 || moved_s.max_abs() > 0.0 {
            let f1 = fit.value(&trial)? + cfg.alpha * penalty_value(&trial, cfg, &grid);
            if f1 <= f0 + 1e-4 * decrease {
                return Ok((
                    trial,
                    StepLog {
                        value_before: f0,
                        value_after: f1,
                        step: t,
                        accepted: true,
                    },
                ));
            }
        }
        t *= 0.5;
    }
    Ok((pair.clone(), unchanged(f0)))
}

/// `α = c δʳ`; requires `0 < r < p` so that both `α → 0` and `δᵖ/α → 0`.
pub fn choose_alpha(delta: f64, p: f64, c: f64, r: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("noise level must be positive, got {delta}")));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha-rule constant must be positive, got {c}")));
    }
    if !(r > 0.0 && r < p) {
        return Err(Error::InvalidParameter(format!(
            "alpha-rule exponent must satisfy 0 < r < p, got r = {r}, p = {p}"
        )));
    }
    Ok(c * delta.powf(r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub alpha: f64,
    /// `‖(μa, μs) − (μa†, μs†)‖_{[L²]²}`
    pub error: f64,
    pub error_a: f64,
    pub error_s: f64,
    pub functional: f64,
    /// `δᵖ/p + α · penalty(μ†)`
    pub bound: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta,alpha,error,error_mu_a,error_mu_s,functional,bound,iterations\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                r.delta, r.alpha, r.error, r.error_a, r.error_s, r.functional, r.bound, r.iterations
            ));
        }
        s
    }
}

/// Parameters of the `α = c δʳ` rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRule {
    pub c: f64,
    pub r: f64,
}

/// Reconstructs from noisy data for every `δ` in `deltas` (absolute `L²`
/// levels, strictly decreasing) and finally from exact data. The exact-data
/// row reuses the smallest `α` of the sweep. All rows share one noise
/// direction, drawn from `seed` (offset per illumination).
pub fn convergence_study(
    fit_template: &DataFit<'_>,
    truth: &OpticalPair,
    deltas: &[f64],
    rule: AlphaRule,
    cfg: &TikhonovConfig,
    seed: u64,
) -> Result<ConvergenceTable> {
    if deltas.is_empty() || deltas.windows(2).any(|w| !(w[1] < w[0])) || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParameter(
            "noise levels must be positive and strictly decreasing".into(),
        ));
    }
    let space = fit_template.space;
    let grid = space.grid;
    let h = grid.cell_measure();
    let exact: Vec<Field2> = fit_template
        .sources
        .iter()
        .map(|s| forward(space, truth, fit_template.q, Some(s), fit_template.opts))
        .collect::<Result<_>>()?;

    let mut levels: Vec<(f64, f64)> = Vec::new();
    for &d in deltas {
        levels.push((d, choose_alpha(d, cfg.p, rule.c, rule.r)?));
    }
    let last_alpha = levels.last().expect("nonempty").1;
    levels.push((0.0, last_alpha));

    let mut rows = Vec::with_capacity(levels.len());
    for (delta, alpha) in levels {
        let data: Vec<Field2> = exact
            .iter()
            .enumerate()
            .map(|(m, e)| add_noise(e, delta, h, seed.wrapping_add(m as u64)))
            .collect::<Result<_>>()?;
        let fit = DataFit {
            data: &data,
            ..*fit_template
        };
        let run_cfg = TikhonovConfig { alpha, ..cfg.clone() };
        let rep = reconstruct(&fit, &run_cfg, truth.bounds, None)?;
        let ea = rep.pair.mu_a.sub(&truth.mu_a).l2_norm(h);
        let es = rep.pair.mu_s.sub(&truth.mu_s).l2_norm(h);
        let n_src = fit.sources.len() as f64;
        rows.push(ConvergenceRow {
            delta,
            alpha,
            error: (ea * ea + es * es).sqrt(),
            error_a: ea,
            error_s: es,
            functional: rep.final_value(),
            bound: n_src * delta.powf(cfg.p) / cfg.p + alpha * penalty_value(truth, &run_cfg, &grid),
            iterations: rep.iterations(),
        });
    }
    Ok(ConvergenceTable { rows })
}
