//! Discrete-ordinates transport: upwind ("step") streaming, scattering,
//! source iteration, and the exact transpose of the assembled system.
//!
//! For ordinate `s_k = (cx, cy)` and cell `c` the discrete equation is
//!
//! ```text
//! (ax + ay + μa_c + μs_c) u_c − ax u_up_x − ay u_up_y − (K u)_c = q_c
//! ax = |cx| / hx,   ay = |cy| / hy
//! ```
//!
//! where `up_x`, `up_y` are the upstream neighbours. Upstream values outside
//! the domain are taken from the boundary source (zero off the source
//! patch). The transpose couples each cell to its *downstream* neighbours,
//! which is again a sweep, run in the reversed direction with zero data.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{AngularField, Radiance, VolumeSource};
use crate::grid::{Grid2D, OpticalPair, PhaseSpace, Side};

/// Inflow data `u0(face, k)` on the four sides of the domain.
///
/// Values are stored per side as `face * ns + k`; entries for ordinates
/// leaving the domain through that side are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySource {
    nx: usize,
    ny: usize,
    ns: usize,
    sides: [Vec<f64>; 4],
}

/// Angular profile of a boundary patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngularProfile {
    /// Same intensity on every inflow ordinate.
    Diffuse,
    /// A single (inflow) ordinate.
    Collimated(usize),
}

/// A source patch on one side, positioned in fractions of the side length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub side: Side,
    pub center: f64,
    pub width: f64,
    pub intensity: f64,
    pub profile: AngularProfile,
}

fn inflow(side: Side, dir: (f64, f64)) -> bool {
    let (nx, ny) = side.normal();
    dir.0 * nx + dir.1 * ny < 0.0
}

impl BoundarySource {
    pub fn zeros(grid: &Grid2D, ns: usize) -> Self {
        let sides = Side::ALL.map(|s| vec![0.0; grid.faces_on(s) * ns]);
        BoundarySource {
            nx: grid.nx(),
            ny: grid.ny(),
            ns,
            sides,
        }
    }

    /// Rasterises a patch: faces whose centres lie within `width / 2` of
    /// `center` (both as fractions of the side) carry `intensity`.
    pub fn patch(space: &PhaseSpace, spec: PatchSpec) -> Result<Self> {
        let PatchSpec {
            side,
            center,
            width,
            intensity,
            profile,
        } = spec;
        if !(width > 0.0) || center - 0.5 * width <= 0.0 || center + 0.5 * width >= 1.0 {
            return Err(Error::InvalidSource(format!(
                "patch [{}, {}] on the {} side must lie strictly inside (0, 1)",
                center - 0.5 * width,
                center + 0.5 * width,
                side.name()
            )));
        }
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidSource(format!(
                "intensity must be finite and nonnegative, got {intensity}"
            )));
        }
        let grid = &space.grid;
        let ns = space.ns();
        let mut src = BoundarySource::zeros(grid, ns);
        let nf = grid.faces_on(side);
        let mut any = false;
        for f in 0..nf {
            let t = (f as f64 + 0.5) / nf as f64;
            if (t - center).abs() > 0.5 * width {
                continue;
            }
            any = true;
            match profile {
                AngularProfile::Diffuse => {
                    for k in 0..ns {
                        if inflow(side, space.quad.direction(k)) {
                            src.sides[side.index()][f * ns + k] = intensity;
                        }
                    }
                }
                AngularProfile::Collimated(k) => {
                    src.set(space, side, f, k, intensity)?;
                }
            }
        }
        if !any {
            return Err(Error::InvalidSource(format!(
                "patch of width {width} covers no face on the {} side",
                side.name()
            )));
        }
        Ok(src)
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn get(&self, side: Side, face: usize, k: usize) -> f64 {
        self.sides[side.index()][face * self.ns + k]
    }

    /// Sets one inflow value; rejects ordinates that leave through `side`.
    pub fn set(&mut self, space: &PhaseSpace, side: Side, face: usize, k: usize, value: f64) -> Result<()> {
        if !inflow(side, space.quad.direction(k)) {
            return Err(Error::InvalidSource(format!(
                "ordinate {k} is not incoming on the {} side",
                side.name()
            )));
        }
        if face >= space.grid.faces_on(side) {
            return Err(Error::InvalidSource(format!(
                "face {face} out of range on the {} side",
                side.name()
            )));
        }
        self.sides[side.index()][face * self.ns + k] = value;
        Ok(())
    }

    pub fn side_values(&self, side: Side) -> &[f64] {
        &self.sides[side.index()]
    }

    pub fn check(&self, space: &PhaseSpace) -> Result<()> {
        if self.nx != space.grid.nx() || self.ny != space.grid.ny() || self.ns != space.ns() {
            return Err(Error::shape(
                format!("{}x{}x{} boundary source", space.grid.nx(), space.grid.ny(), space.ns()),
                format!("{}x{}x{} boundary source", self.nx, self.ny, self.ns),
            ));
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> BoundarySource {
        BoundarySource {
            sides: self.sides.clone().map(|v| v.into_iter().map(|x| s * x).collect()),
            ..*self
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.sides
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.sides.iter().flatten().all(|&v| v >= 0.0)
    }

    /// `L¹(Γ₋)` norm with the flux weight `|s·η|`.
    pub fn l1_norm(&self, space: &PhaseSpace) -> f64 {
        let w = space.quad.weight();
        let mut total = 0.0;
        for side in Side::ALL {
            let (nx, ny) = side.normal();
            let len = space.grid.face_length(side);
            for f in 0..space.grid.faces_on(side) {
                for k in 0..self.ns {
                    let (cx, cy) = space.quad.direction(k);
                    total += len * w * (cx * nx + cy * ny).abs() * self.get(side, f, k).abs();
                }
            }
        }
        total
    }
}

/// Stopping rule for source iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target.
    pub tol: f64,
    /// `None` selects `10 · ns · max(nx, ny)`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Default::default()
        }
    }

    fn iteration_cap(&self, space: &PhaseSpace) -> usize {
        self.max_iter
            .unwrap_or(10 * space.ns() * space.grid.nx().max(space.grid.ny()))
    }
}

/// Result of a source-iteration solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub radiance: Radiance,
    /// Absolute residual after every iteration, measured as
    /// `max |K u^m − K u^{m−1}| / (μa + μs)`; this norm contracts strictly
    /// for admissible coefficients.
    pub residuals: Vec<f64>,
    pub relative_residual: f64,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }
}

#[derive(Clone, Copy)]
struct Stencil {
    ax: f64,
    ay: f64,
    /// +1 when the sweep runs towards increasing index.
    sx: isize,
    sy: isize,
}

fn stencil(space: &PhaseSpace, k: usize, reversed: bool) -> Stencil {
    let (cx, cy) = space.quad.direction(k);
    let flip = if reversed { -1 } else { 1 };
    Stencil {
        ax: cx.abs() / space.grid.hx(),
        ay: cy.abs() / space.grid.hy(),
        sx: flip * if cx > 0.0 { 1 } else { -1 },
        sy: flip * if cy > 0.0 { 1 } else { -1 },
    }
}

fn sigma_t(pair: &OpticalPair) -> Vec<f64> {
    pair.mu_a
        .as_slice()
        .iter()
        .zip(pair.mu_s.as_slice())
        .map(|(a, s)| a + s)
        .collect()
}

/// Upstream ghost value for a sweep in direction `st` at cell `(i, j)`.
fn ghost_x(u0: Option<&BoundarySource>, st: Stencil, j: usize, k: usize) -> f64 {
    match u0 {
        Some(b) => b.get(if st.sx > 0 { Side::Left } else { Side::Right }, j, k),
        None => 0.0,
    }
}

fn ghost_y(u0: Option<&BoundarySource>, st: Stencil, i: usize, k: usize) -> f64 {
    match u0 {
        Some(b) => b.get(if st.sy > 0 { Side::Bottom } else { Side::Top }, i, k),
        None => 0.0,
    }
}

/// Solves one ordinate's upwind system in a single pass. `src` is the full
/// interleaved right-hand side; the result is an `nx * ny` buffer.
fn sweep_one(
    grid: &Grid2D,
    st: Stencil,
    sig: &[f64],
    src: &[f64],
    ns: usize,
    k: usize,
    u0: Option<&BoundarySource>,
) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = vec![0.0; nx * ny];
    for jj in 0..ny {
        let j = if st.sy > 0 { jj } else { ny - 1 - jj };
        for ii in 0..nx {
            let i = if st.sx > 0 { ii } else { nx - 1 - ii };
            let c = j * nx + i;
            let up_x = if ii == 0 {
                ghost_x(u0, st, j, k)
            } else {
                out[(c as isize - st.sx) as usize]
            };
            let up_y = if jj == 0 {
                ghost_y(u0, st, i, k)
            } else {
                out[(c as isize - st.sy * nx as isize) as usize]
            };
            out[c] = (src[c * ns + k] + st.ax * up_x + st.ay * up_y) / (st.ax + st.ay + sig[c]);
        }
    }
    out
}

fn sweep_all(
    space: &PhaseSpace,
    sig: &[f64],
    src: &[f64],
    u0: Option<&BoundarySource>,
    reversed: bool,
) -> Vec<f64> {
    let ns = space.ns();
    let per_ordinate: Vec<Vec<f64>> = (0..ns)
        .into_par_iter()
        .map(|k| sweep_one(&space.grid, stencil(space, k, reversed), sig, src, ns, k, u0))
        .collect();
    let cells = space.grid.cells();
    let mut out = vec![0.0; cells * ns];
    for (k, buf) in per_ordinate.iter().enumerate() {
        for c in 0..cells {
            out[c * ns + k] = buf[c];
        }
    }
    out
}

fn check_radiance(space: &PhaseSpace, u: &AngularField) -> Result<()> {
    u.check_shape(space.grid.nx(), space.grid.ny(), space.ns())
}

/// Streaming plus total attenuation, `(s·∇ + μa + μs) u`, with upstream
/// ghost values taken from `u0` (zero when `None`).
pub fn apply_streaming_absorption(
    space: &PhaseSpace,
    u: &Radiance,
    pair: &OpticalPair,
    u0: Option<&BoundarySource>,
) -> Result<Radiance> {
    check_radiance(space, u)?;
    pair.check_grid(&space.grid)?;
    if let Some(b) = u0 {
        b.check(space)?;
    }
    let (nx, ny, ns) = (space.grid.nx(), space.grid.ny(), space.ns());
    let sig = sigma_t(pair);
    let mut out = AngularField::zeros(nx, ny, ns);
    for k in 0..ns {
        let st = stencil(space, k, false);
        for j in 0..ny {
            for i in 0..nx {
                let up_x = match (i as isize - st.sx) as usize {
                    ui if ui < nx => u.get(ui, j, k),
                    _ => ghost_x(u0, st, j, k),
                };
                let up_y = match (j as isize - st.sy) as usize {
                    uj if uj < ny => u.get(i, uj, k),
                    _ => ghost_y(u0, st, i, k),
                };
                let c = j * nx + i;
                let v = (st.ax + st.ay + sig[c]) * u.get(i, j, k) - st.ax * up_x - st.ay * up_y;
                out.set(i, j, k, v);
            }
        }
    }
    Ok(out)
}

/// Exact transpose of [`apply_streaming_absorption`] with zero inflow data.
pub fn apply_streaming_absorption_transpose(
    space: &PhaseSpace,
    v: &Radiance,
    pair: &OpticalPair,
) -> Result<Radiance> {
    check_radiance(space, v)?;
    pair.check_grid(&space.grid)?;
    let (nx, ny, ns) = (space.grid.nx(), space.grid.ny(), space.ns());
    let sig = sigma_t(pair);
    let mut out = AngularField::zeros(nx, ny, ns);
    for k in 0..ns {
        let st = stencil(space, k, false);
        for j in 0..ny {
            for i in 0..nx {
                let dn_x = match (i as isize + st.sx) as usize {
                    di if di < nx => v.get(di, j, k),
                    _ => 0.0,
                };
                let dn_y = match (j as isize + st.sy) as usize {
                    dj if dj < ny => v.get(i, dj, k),
                    _ => 0.0,
                };
                let c = j * nx + i;
                let val = (st.ax + st.ay + sig[c]) * v.get(i, j, k) - st.ax * dn_x - st.ay * dn_y;
                out.set(i, j, k, val);
            }
        }
    }
    Ok(out)
}

fn scatter_into(space: &PhaseSpace, u: &[f64], mu_s: &[f64], out: &mut [f64], transpose: bool) {
    let ns = space.ns();
    let w = space.quad.weight();
    let phase = &space.phase;
    out.par_chunks_mut(ns)
        .zip(u.par_chunks(ns))
        .zip(mu_s.par_iter())
        .for_each(|((o, uc), &ms)| {
            for (k, ok) in o.iter_mut().enumerate() {
                let mut acc = 0.0;
                if transpose {
                    for (l, ul) in uc.iter().enumerate() {
                        acc += phase.get(l, k) * ul;
                    }
                } else {
                    for (th, ul) in phase.row(k).iter().zip(uc) {
                        acc += th * ul;
                    }
                }
                *ok = ms * w * acc;
            }
        });
}

/// `(K u)(c, k) = μs(c) Σ_l w_l Θ_{kl} u(c, l)`
pub fn apply_scattering(space: &PhaseSpace, u: &Radiance, pair: &OpticalPair) -> Result<Radiance> {
    check_radiance(space, u)?;
    pair.check_grid(&space.grid)?;
    let mut out = AngularField::zeros(u.nx(), u.ny(), u.ns());
    scatter_into(space, u.as_slice(), pair.mu_s.as_slice(), out.as_mut_slice(), false);
    Ok(out)
}

/// Transpose of [`apply_scattering`]; equal to it for symmetric kernels.
pub fn apply_scattering_transpose(space: &PhaseSpace, v: &Radiance, pair: &OpticalPair) -> Result<Radiance> {
    check_radiance(space, v)?;
    pair.check_grid(&space.grid)?;
    let mut out = AngularField::zeros(v.nx(), v.ny(), v.ns());
    scatter_into(space, v.as_slice(), pair.mu_s.as_slice(), out.as_mut_slice(), true);
    Ok(out)
}

/// The full discrete transport operator `T u = (s·∇ + μa + μs) u − K u`
/// with absorbing (zero) inflow.
pub fn apply_transport(space: &PhaseSpace, u: &Radiance, pair: &OpticalPair) -> Result<Radiance> {
    let mut out = apply_streaming_absorption(space, u, pair, None)?;
    let k = apply_scattering(space, u, pair)?;
    for (o, s) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
        *o -= s;
    }
    Ok(out)
}

/// Matrix transpose of [`apply_transport`].
pub fn apply_transport_adjoint(space: &PhaseSpace, v: &Radiance, pair: &OpticalPair) -> Result<Radiance> {
    let mut out = apply_streaming_absorption_transpose(space, v, pair)?;
    let k = apply_scattering_transpose(space, v, pair)?;
    for (o, s) in out.as_mut_slice().iter_mut().zip(k.as_slice()) {
        *o -= s;
    }
    Ok(out)
}

fn source_iteration(
    space: &PhaseSpace,
    pair: &OpticalPair,
    q: Option<&VolumeSource>,
    u0: Option<&BoundarySource>,
    opts: SolverOptions,
    transpose: bool,
) -> Result<SolveReport> {
    pair.check_grid(&space.grid)?;
    pair.validate()?;
    if let Some(q) = q {
        check_radiance(space, q)?;
    }
    if let Some(b) = u0 {
        b.check(space)?;
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "solver tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let n = space.grid.cells() * space.ns();
    let sig = sigma_t(pair);
    let ns = space.ns();
    let cap = opts.iteration_cap(space);

    let mut scat = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut residuals = Vec::new();
    loop {
        match q {
            Some(q) => {
                for ((r, a), b) in rhs.iter_mut().zip(q.as_slice()).zip(&scat) {
                    *r = a + b;
                }
            }
            None => rhs.copy_from_slice(&scat),
        }
        let u = sweep_all(space, &sig, &rhs, u0, transpose);
        let mut next = vec![0.0; n];
        scatter_into(space, &u, pair.mu_s.as_slice(), &mut next, transpose);

        let mut abs = 0.0f64;
        for (c, (a, b)) in next.chunks(ns).zip(scat.chunks(ns)).enumerate() {
            for (x, y) in a.iter().zip(b) {
                abs = abs.max((x - y).abs() / sig[c]);
            }
        }
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rel = if abs == 0.0 { 0.0 } else { abs / scale.max(f64::MIN_POSITIVE) };
        residuals.push(abs);
        scat = next;

        if rel <= opts.tol {
            let radiance = AngularField::from_vec(space.grid.nx(), space.grid.ny(), ns, u)?;
            return Ok(SolveReport {
                radiance,
                residuals,
                relative_residual: rel,
            });
        }
        if residuals.len() >= cap || !rel.is_finite() {
            return Err(Error::NotConverged {
                iterations: residuals.len(),
                residual: rel,
            });
        }
    }
}

/// Solves `T u = q` with inflow data `u0` by source iteration; each step is
/// one exact upwind sweep per ordinate.
pub fn solve_rte(
    space: &PhaseSpace,
    pair: &OpticalPair,
    q: Option<&VolumeSource>,
    u0: Option<&BoundarySource>,
    opts: SolverOptions,
) -> Result<SolveReport> {
    source_iteration(space, pair, q, u0, opts, false)
}

/// Solves `Tᵀ v = q_adj` with zero data on the outflow boundary, i.e. the
/// exact transpose of the system behind [`solve_rte`].
pub fn solve_adjoint(
    space: &PhaseSpace,
    pair: &OpticalPair,
    q_adj: &VolumeSource,
    opts: SolverOptions,
) -> Result<SolveReport> {
    source_iteration(space, pair, Some(q_adj), None, opts, true)
}

/// Non-scattering transport `(s·∇ + μa) u = q` with inflow `u0`: a single
/// sweep per ordinate, no admissibility box on `μa` beyond positivity.
pub fn solve_pure_absorber(
    space: &PhaseSpace,
    mu_a: &crate::field::Field2,
    q: Option<&VolumeSource>,
    u0: Option<&BoundarySource>,
) -> Result<Radiance> {
    mu_a.check_shape(space.grid.nx(), space.grid.ny())?;
    if let Some((idx, v)) = mu_a
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::InvalidParameter(format!(
            "absorption must be positive, got {v} at cell ({}, {})",
            idx % space.grid.nx(),
            idx / space.grid.nx()
        )));
    }
    if let Some(b) = u0 {
        b.check(space)?;
    }
    let n = space.grid.cells() * space.ns();
    let rhs = match q {
        Some(q) => {
            check_radiance(space, q)?;
            q.as_slice().to_vec()
        }
        None => vec![0.0; n],
    };
    let u = sweep_all(space, mu_a.as_slice(), &rhs, u0, false);
    AngularField::from_vec(space.grid.nx(), space.grid.ny(), space.ns(), u)
}
