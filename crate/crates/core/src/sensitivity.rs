//! Linearised forward map and adjoint-state gradients of the data misfit.
//!
//! With `M(μ) u = b` the assembled transport system and `F = μa U`, the
//! misfit `J = ½‖E − F‖²` has
//!
//! ```text
//! dJ = −⟨U r, dμa⟩ + ⟨v, (dμa + dμs) u − dμs Θu⟩,   Mᵀ v = μa r,   r = E − F
//! ```
//!
//! which gives the two cellwise formulas in [`gradient_for_residual`].

use crate::error::{Error, Result};
use crate::field::{AngularField, EnergyMap, Field2, VolumeSource};
use crate::forward::{compute_fluence, forward_state, ForwardState};
use crate::grid::{OpticalPair, PhaseSpace};
use crate::transport::{solve_adjoint, solve_rte, BoundarySource, SolverOptions};

/// Perturbation `(Δμa, Δμs)`; any sign is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDirection {
    pub d_a: Field2,
    pub d_s: Field2,
}

impl CoefficientDirection {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        CoefficientDirection {
            d_a: Field2::zeros(nx, ny),
            d_s: Field2::zeros(nx, ny),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        CoefficientDirection {
            d_a: self.d_a.scale(s),
            d_s: self.d_s.scale(s),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.d_a.max_abs() == 0.0 && self.d_s.max_abs() == 0.0
    }

    /// `‖Δμa‖ + ‖Δμs‖` in `L²(Ω)`.
    pub fn l2_sum(&self, cell_measure: f64) -> f64 {
        self.d_a.l2_norm(cell_measure) + self.d_s.l2_norm(cell_measure)
    }
}

/// `L²(Ω)` representers of `∂J/∂μa` and `∂J/∂μs`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitGradient {
    pub g_a: Field2,
    pub g_s: Field2,
}

impl MisfitGradient {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        MisfitGradient {
            g_a: Field2::zeros(nx, ny),
            g_s: Field2::zeros(nx, ny),
        }
    }

    /// `⟨g, d⟩_{L²(Ω)}` summed over both coefficients.
    pub fn pair_with(&self, dir: &CoefficientDirection, cell_measure: f64) -> f64 {
        self.g_a.inner(&dir.d_a, cell_measure) + self.g_s.inner(&dir.d_s, cell_measure)
    }

    pub fn add(&self, other: &MisfitGradient) -> MisfitGradient {
        MisfitGradient {
            g_a: self.g_a.add(&other.g_a),
            g_s: self.g_s.add(&other.g_s),
        }
    }

    pub fn scale(&self, s: f64) -> MisfitGradient {
        MisfitGradient {
            g_a: self.g_a.scale(s),
            g_s: self.g_s.scale(s),
        }
    }

    pub fn l2_norm(&self, cell_measure: f64) -> f64 {
        (self.g_a.inner(&self.g_a, cell_measure) + self.g_s.inner(&self.g_s, cell_measure)).sqrt()
    }
}

/// `Θu`, the angularly redistributed radiance `Σ_l w_l Θ_{kl} u_l` per cell.
fn redistribute(space: &PhaseSpace, u: &AngularField, transpose: bool) -> AngularField {
    let ns = space.ns();
    let w = space.quad.weight();
    let mut out = AngularField::zeros(u.nx(), u.ny(), ns);
    for (o, uc) in out.as_mut_slice().chunks_mut(ns).zip(u.as_slice().chunks(ns)) {
        for (k, ok) in o.iter_mut().enumerate() {
            *ok = w * (0..ns)
                .map(|l| if transpose { space.phase.get(l, k) } else { space.phase.get(k, l) } * uc[l])
                .sum::<f64>();
        }
    }
    out
}

/// `F′(μ)[Δμ] = Δμa U + μa ∫ u′`, where `T u′ = −(Δμa + Δμs) u + Δμs Θu`
/// with zero inflow. `state` must be the forward solve at `pair`.
pub fn directional_derivative(
    space: &PhaseSpace,
    pair: &OpticalPair,
    state: &ForwardState,
    dir: &CoefficientDirection,
    opts: SolverOptions,
) -> Result<EnergyMap> {
    let (nx, ny, ns) = (space.grid.nx(), space.grid.ny(), space.ns());
    dir.d_a.check_shape(nx, ny)?;
    dir.d_s.check_shape(nx, ny)?;
    let u = &state.radiance;
    let theta_u = redistribute(space, u, false);
    let mut src = AngularField::zeros(nx, ny, ns);
    for (c, ((s, uc), tc)) in src
        .as_mut_slice()
        .chunks_mut(ns)
        .zip(u.as_slice().chunks(ns))
        .zip(theta_u.as_slice().chunks(ns))
        .enumerate()
    {
        let da = dir.d_a.as_slice()[c];
        let ds = dir.d_s.as_slice()[c];
        for k in 0..ns {
            s[k] = -(da + ds) * uc[k] + ds * tc[k];
        }
    }
    let du = solve_rte(space, pair, Some(&src), None, opts)?.radiance;
    let du_fluence = compute_fluence(&du, &space.quad)?;
    Ok(dir
        .d_a
        .mul(&state.fluence)
        .add(&pair.mu_a.mul(&du_fluence)))
}

/// Representer of `μ ↦ −⟨r, F(μ)⟩` at `pair`, i.e. `−F′(μ)* r`:
///
/// ```text
/// g_a = −U r + Σ_k w_k u_k v_k
/// g_s =  Σ_k w_k u_k v_k − Σ_k w_k v_k (Σ_l w_l Θ_{kl} u_l)
/// ```
/// with `v` the transposed solve driven by `μa r`.
pub fn gradient_for_residual(
    space: &PhaseSpace,
    pair: &OpticalPair,
    state: &ForwardState,
    residual: &Field2,
    opts: SolverOptions,
) -> Result<MisfitGradient> {
    let (nx, ny, ns) = (space.grid.nx(), space.grid.ny(), space.ns());
    residual.check_shape(nx, ny)?;
    if residual.max_abs() == 0.0 {
        return Ok(MisfitGradient::zeros(nx, ny));
    }
    let drive = pair.mu_a.mul(residual);
    let mut q_adj = AngularField::zeros(nx, ny, ns);
    for (qc, &d) in q_adj.as_mut_slice().chunks_mut(ns).zip(drive.as_slice()) {
        qc.fill(d);
    }
    let v = solve_adjoint(space, pair, &q_adj, opts)?.radiance;
    let u = &state.radiance;
    let theta_u = redistribute(space, u, false);
    let w = space.quad.weight();
    let mut uv = Vec::with_capacity(nx * ny);
    let mut v_theta_u = Vec::with_capacity(nx * ny);
    for ((uc, vc), tc) in u
        .as_slice()
        .chunks(ns)
        .zip(v.as_slice().chunks(ns))
        .zip(theta_u.as_slice().chunks(ns))
    {
        uv.push(w * uc.iter().zip(vc).map(|(a, b)| a * b).sum::<f64>());
        v_theta_u.push(w * vc.iter().zip(tc).map(|(a, b)| a * b).sum::<f64>());
    }
    let uv = Field2::from_vec(nx, ny, uv)?;
    let v_theta_u = Field2::from_vec(nx, ny, v_theta_u)?;
    Ok(MisfitGradient {
        g_a: uv.sub(&state.fluence.mul(residual)),
        g_s: uv.sub(&v_theta_u),
    })
}

/// Gradient of `J = ½‖E − F(μ)‖²` at the solved state; one adjoint solve,
/// the forward radiance in `state` is reused.
pub fn misfit_gradient(
    space: &PhaseSpace,
    pair: &OpticalPair,
    state: &ForwardState,
    e_data: &EnergyMap,
    opts: SolverOptions,
) -> Result<MisfitGradient> {
    e_data.check_shape(space.grid.nx(), space.grid.ny())?;
    let r = e_data.sub(&state.energy);
    gradient_for_residual(space, pair, state, &r, opts)
}

/// Least-squares misfit over a set of illuminations, each with its own data.
#[derive(Debug, Clone, Copy)]
pub struct DataFit<'a> {
    pub space: &'a PhaseSpace,
    pub sources: &'a [BoundarySource],
    pub data: &'a [EnergyMap],
    pub q: Option<&'a VolumeSource>,
    pub opts: SolverOptions,
}

impl<'a> DataFit<'a> {
    pub fn new(
        space: &'a PhaseSpace,
        sources: &'a [BoundarySource],
        data: &'a [EnergyMap],
        opts: SolverOptions,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidParameter("at least one illumination is required".into()));
        }
        if sources.len() != data.len() {
            return Err(Error::shape(
                format!("{} data maps", sources.len()),
                format!("{} data maps", data.len()),
            ));
        }
        for d in data {
            d.check_shape(space.grid.nx(), space.grid.ny())?;
        }
        Ok(DataFit {
            space,
            sources,
            data,
            q: None,
            opts,
        })
    }

    pub fn with_volume_source(mut self, q: &'a VolumeSource) -> Self {
        self.q = Some(q);
        self
    }

    pub fn cell_measure(&self) -> f64 {
        self.space.grid.cell_measure()
    }

    /// `Σ_m ½‖E_m − F_m(μ)‖²`
    pub fn value(&self, pair: &OpticalPair) -> Result<f64> {
        let mut total = 0.0;
        for (src, e) in self.sources.iter().zip(self.data) {
            let st = forward_state(self.space, pair, self.q, Some(src), self.opts)?;
            total += 0.5 * e.sub(&st.energy).l2_norm(self.cell_measure()).powi(2);
        }
        Ok(total)
    }

    pub fn value_and_gradient(&self, pair: &OpticalPair) -> Result<(f64, MisfitGradient)> {
        let mut total = 0.0;
        let mut grad = MisfitGradient::zeros(pair.nx(), pair.ny());
        for (src, e) in self.sources.iter().zip(self.data) {
            let st = forward_state(self.space, pair, self.q, Some(src), self.opts)?;
            total += 0.5 * e.sub(&st.energy).l2_norm(self.cell_measure()).powi(2);
            let g = misfit_gradient(self.space, pair, &st, e, self.opts)?;
            grad = grad.add(&g);
        }
        Ok((total, grad))
    }

    /// The same misfit restricted to one illumination.
    pub fn single(&self, m: usize) -> DataFit<'a> {
        DataFit {
            sources: std::slice::from_ref(&self.sources[m]),
            data: std::slice::from_ref(&self.data[m]),
            ..*self
        }
    }
}

/// One row of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdRow {
    pub step: f64,
    pub finite_difference: f64,
    pub adjoint: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub rows: Vec<FdRow>,
    pub min_error: f64,
}

impl FdReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,finite_difference,adjoint,relative_error\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e}\n",
                r.step, r.finite_difference, r.adjoint, r.relative_error
            ));
        }
        s
    }
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Generic central-difference check of `⟨∇f, d⟩` against
/// `(f(x + t d) − f(x − t d)) / 2t` for every step in `steps`.
pub fn central_difference_table(
    adjoint: f64,
    steps: &[f64],
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<FdReport> {
    let mut rows = Vec::with_capacity(steps.len());
    for &t in steps {
        let fd = (eval(t)? - eval(-t)?) / (2.0 * t);
        rows.push(FdRow {
            step: t,
            finite_difference: fd,
            adjoint,
            relative_error: relative_gap(fd, adjoint),
        });
    }
    let min_error = rows.iter().map(|r| r.relative_error).fold(f64::INFINITY, f64::min);
    Ok(FdReport { rows, min_error })
}

/// Compares the adjoint gradient of the misfit with central differences
/// along `dir`. A zero direction is reported as an exact match.
pub fn fd_check(fit: &DataFit<'_>, pair: &OpticalPair, dir: &CoefficientDirection, steps: &[f64]) -> Result<FdReport> {
    if dir.is_zero() {
        return Ok(FdReport {
            rows: steps
                .iter()
                .map(|&t| FdRow {
                    step: t,
                    finite_difference: 0.0,
                    adjoint: 0.0,
                    relative_error: 0.0,
                })
                .collect(),
            min_error: 0.0,
        });
    }
    for &t in steps {
        pair.perturbed(t, &dir.d_a, &dir.d_s).validate()?;
        pair.perturbed(-t, &dir.d_a, &dir.d_s).validate()?;
    }
    let (_, grad) = fit.value_and_gradient(pair)?;
    let adjoint = grad.pair_with(dir, fit.cell_measure());
    central_difference_table(adjoint, steps, |t| {
        fit.value(&pair.perturbed(t, &dir.d_a, &dir.d_s))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::forward;
    use crate::grid::{Bounds, Grid2D, Side};
    use crate::transport::{AngularProfile, PatchSpec};

    fn setup(g: f64) -> (PhaseSpace, OpticalPair, BoundarySource) {
        let sp = PhaseSpace::new(Grid2D::new(8, 8, 1.0, 1.0).unwrap(), 8, g).unwrap();
        let pair = OpticalPair {
            mu_a: Field2::from_fn(&sp.grid, |x, y| 0.2 + 0.1 * x + 0.05 * y),
            mu_s: Field2::from_fn(&sp.grid, |x, y| 1.0 + 0.5 * y - 0.2 * x),
            bounds: Bounds::new(0.01, 10.0).unwrap(),
        };
        let src = BoundarySource::patch(
            &sp,
            PatchSpec {
                side: Side::Left,
                center: 0.5,
                width: 0.6,
                intensity: 1.0,
                profile: AngularProfile::Diffuse,
            },
        )
        .unwrap();
        (sp, pair, src)
    }

    #[test]
    fn zero_direction_gives_zero_derivative() {
        let (sp, pair, src) = setup(0.0);
        let opts = SolverOptions::with_tol(1e-13);
        let st = forward_state(&sp, &pair, None, Some(&src), opts).unwrap();
        let d = directional_derivative(&sp, &pair, &st, &CoefficientDirection::zeros(8, 8), opts).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn derivative_is_linear() {
        let (sp, pair, src) = setup(0.4);
        let opts = SolverOptions::with_tol(1e-14);
        let st = forward_state(&sp, &pair, None, Some(&src), opts).unwrap();
        let dir = CoefficientDirection {
            d_a: Field2::from_fn(&sp.grid, |x, y| (3.0 * x).sin() * y),
            d_s: Field2::from_fn(&sp.grid, |x, y| (x - y).cos()),
        };
        let d1 = directional_derivative(&sp, &pair, &st, &dir, opts).unwrap();
        let d2 = directional_derivative(&sp, &pair, &st, &dir.scale(2.0), opts).unwrap();
        let scale = d1.max_abs();
        for (a, b) in d1.as_slice().iter().zip(d2.as_slice()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn exact_data_gives_zero_gradient() {
        let (sp, pair, src) = setup(0.2);
        let opts = SolverOptions::default();
        let e = forward(&sp, &pair, None, Some(&src), opts).unwrap();
        let st = forward_state(&sp, &pair, None, Some(&src), opts).unwrap();
        let g = misfit_gradient(&sp, &pair, &st, &e, opts).unwrap();
        assert_eq!(g.g_a.max_abs(), 0.0);
        assert_eq!(g.g_s.max_abs(), 0.0);
    }

    #[test]
    fn isotropic_scattering_correction_simplifies() {
        // For g = 0, Θ ≡ 1/2π, so Σ_k w v_k (Θu)_k = U · (Σ_k w v_k) / 2π.
        let (sp, pair, src) = setup(0.0);
        let opts = SolverOptions::with_tol(1e-13);
        let st = forward_state(&sp, &pair, None, Some(&src), opts).unwrap();
        let e = st.energy.scale(1.1);
        let g = misfit_gradient(&sp, &pair, &st, &e, opts).unwrap();

        let r = e.sub(&st.energy);
        let drive = pair.mu_a.mul(&r);
        let mut q = AngularField::zeros(8, 8, 8);
        for (qc, &d) in q.as_mut_slice().chunks_mut(8).zip(drive.as_slice()) {
            qc.fill(d);
        }
        let v = solve_adjoint(&sp, &pair, &q, opts).unwrap().radiance;
        let w = sp.quad.weight();
        for j in 0..8 {
            for i in 0..8 {
                let uc = st.radiance.cell(i, j);
                let vc = v.cell(i, j);
                let uv: f64 = w * uc.iter().zip(vc).map(|(a, b)| a * b).sum::<f64>();
                let vint: f64 = w * vc.iter().sum::<f64>();
                let expect = uv - st.fluence.get(i, j) * vint / (2.0 * std::f64::consts::PI);
                assert!((g.g_s.get(i, j) - expect).abs() <= 1e-12 * expect.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn zero_direction_fd_check_is_exact() {
        let (sp, pair, src) = setup(0.0);
        let e = Field2::constant(8, 8, 0.1);
        let srcs = [src];
        let data = [e];
        let fit = DataFit::new(&sp, &srcs, &data, SolverOptions::default()).unwrap();
        let rep = fd_check(&fit, &pair, &CoefficientDirection::zeros(8, 8), &[1e-3, 1e-4]).unwrap();
        assert_eq!(rep.min_error, 0.0);
    }

    #[test]
    fn fd_check_rejects_inadmissible_steps() {
        let (sp, pair, src) = setup(0.0);
        let e = Field2::constant(8, 8, 0.1);
        let srcs = [src];
        let data = [e];
        let fit = DataFit::new(&sp, &srcs, &data, SolverOptions::default()).unwrap();
        let dir = CoefficientDirection {
            d_a: Field2::constant(8, 8, 1.0),
            d_s: Field2::zeros(8, 8),
        };
        assert!(matches!(
            fd_check(&fit, &pair, &dir, &[1.0]),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn data_fit_validates_lengths() {
        let (sp, _, src) = setup(0.0);
        let srcs = [src];
        assert!(DataFit::new(&sp, &srcs, &[], SolverOptions::default()).is_err());
        assert!(DataFit::new(&sp, &[], &[], SolverOptions::default()).is_err());
    }
}
