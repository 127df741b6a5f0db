//! Spatial grid, discrete ordinates, scattering kernel and the admissible
//! coefficient set.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::field::Field2;

/// Uniform cell-centred grid on the rectangle `[0, lx] × [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be at least 2, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "side lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Grid2D { nx, ny, lx, ly })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_measure(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// Number of boundary faces on `side`.
    pub fn faces_on(&self, side: Side) -> usize {
        match side {
            Side::Left | Side::Right => self.ny,
            Side::Bottom | Side::Top => self.nx,
        }
    }

    pub fn face_length(&self, side: Side) -> f64 {
        match side {
            Side::Left | Side::Right => self.hy(),
            Side::Bottom | Side::Top => self.hx(),
        }
    }

    pub fn side_length(&self, side: Side) -> f64 {
        match side {
            Side::Left | Side::Right => self.ly,
            Side::Bottom | Side::Top => self.lx,
        }
    }
}

/// One side of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
            Side::Bottom => 2,
            Side::Top => 3,
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Side::Left => (-1.0, 0.0),
            Side::Right => (1.0, 0.0),
            Side::Bottom => (0.0, -1.0),
            Side::Top => (0.0, 1.0),
        }
    }

    pub fn mirrored_x(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            s => s,
        }
    }

    pub fn parse(name: &str) -> Option<Side> {
        match name {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "bottom" => Some(Side::Bottom),
            "top" => Some(Side::Top),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

/// Equiangular ordinates `θ_k = 2π(k + ½)/ns` with uniform weights `2π/ns`.
///
/// The half offset keeps every direction off the grid axes, so no ordinate
/// is tangential to a cell face.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularQuadrature {
    angles: Vec<f64>,
    dirs: Vec<(f64, f64)>,
    weight: f64,
}

impl AngularQuadrature {
    pub fn new(ns: usize) -> Result<Self> {
        if ns < 4 || !ns.is_multiple_of(2) {
            return Err(Error::InvalidQuadrature(format!(
                "ordinate count must be even and at least 4, got {ns}"
            )));
        }
        let angles: Vec<f64> = (0..ns)
            .map(|k| 2.0 * PI * (k as f64 + 0.5) / ns as f64)
            .collect();
        let dirs = angles.iter().map(|t| (t.cos(), t.sin())).collect();
        Ok(AngularQuadrature {
            angles,
            dirs,
            weight: 2.0 * PI / ns as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angle(&self, k: usize) -> f64 {
        self.angles[k]
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn direction(&self, k: usize) -> (f64, f64) {
        self.dirs[k]
    }

    /// Every weight is the same.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Index of the ordinate pointing opposite to `k`.
    pub fn opposite(&self, k: usize) -> usize {
        (k + self.len() / 2) % self.len()
    }

    /// Ordinate with the largest component along `(dx, dy)`; ties go to the
    /// lower index.
    pub fn closest_to(&self, dx: f64, dy: f64) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (k, &(cx, cy)) in self.dirs.iter().enumerate() {
            let d = cx * dx + cy * dy;
            if d > best_dot + 1e-14 {
                best = k;
                best_dot = d;
            }
        }
        best
    }

    /// `Σ_k w_k f(θ_k)`
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.angles.iter().map(|&t| self.weight * f(t)).sum()
    }
}

/// Two-dimensional Henyey–Greenstein density on the unit circle.
pub fn henyey_greenstein_2d(g: f64, delta_theta: f64) -> f64 {
    (1.0 - g * g) / (2.0 * PI * (1.0 + g * g - 2.0 * g * delta_theta.cos()))
}

/// Quadrature-normalised scattering kernel. Entry `(k, l)` is the density of
/// scattering from ordinate `l` into ordinate `k`; every column integrates to
/// one under the quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix {
    ns: usize,
    g: f64,
    entries: Vec<f64>,
}

impl PhaseMatrix {
    pub fn henyey_greenstein(g: f64, quad: &AngularQuadrature) -> Result<Self> {
        if !(g.abs() < 1.0) {
            return Err(Error::InvalidAnisotropy(g));
        }
        let ns = quad.len();
        let mut entries = vec![0.0; ns * ns];
        for k in 0..ns {
            for l in 0..ns {
                entries[k * ns + l] = henyey_greenstein_2d(g, quad.angle(k) - quad.angle(l));
            }
        }
        for l in 0..ns {
            let col: f64 = (0..ns).map(|k| quad.weight() * entries[k * ns + l]).sum();
            for k in 0..ns {
                entries[k * ns + l] /= col;
            }
        }
        Ok(PhaseMatrix { ns, g, entries })
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn anisotropy(&self) -> f64 {
        self.g
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.ns + l]
    }

    /// Row `k`, i.e. the weights `Θ_{k·}`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.entries[k * self.ns..(k + 1) * self.ns]
    }
}

/// The discrete phase space `Ω × S¹` together with the scattering kernel.
#[derive(Debug, Clone)]
pub struct PhaseSpace {
    pub grid: Grid2D,
    pub quad: AngularQuadrature,
    pub phase: PhaseMatrix,
}

impl PhaseSpace {
    pub fn new(grid: Grid2D, ns: usize, g: f64) -> Result<Self> {
        let quad = AngularQuadrature::new(ns)?;
        let phase = PhaseMatrix::henyey_greenstein(g, &quad)?;
        Ok(PhaseSpace { grid, quad, phase })
    }

    pub fn ns(&self) -> usize {
        self.quad.len()
    }

    /// Measure of one (cell, ordinate) element of the phase space.
    pub fn element_measure(&self) -> f64 {
        self.grid.cell_measure() * self.quad.weight()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Absorption,
    Scattering,
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Absorption => f.write_str("mu_a"),
            Coefficient::Scattering => f.write_str("mu_s"),
        }
    }
}

/// First cell found outside the admissible box.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityViolation {
    pub coefficient: Coefficient,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for AdmissibilityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}, {}) = {} outside [{}, {}]",
            self.coefficient, self.i, self.j, self.value, self.lo, self.hi
        )
    }
}

/// Box bounds `[lo, hi]` shared by both coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coefficient bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    /// Largest scattering ratio `μs / (μa + μs)` an admissible pair can reach.
    pub fn max_scattering_ratio(&self) -> f64 {
        self.hi / (self.hi + self.lo)
    }
}

/// Absorption and scattering fields with their admissible box.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalPair {
    pub mu_a: Field2,
    pub mu_s: Field2,
    pub bounds: Bounds,
}

impl OpticalPair {
    pub fn new(mu_a: Field2, mu_s: Field2, bounds: Bounds) -> Result<Self> {
        if !mu_a.same_shape(&mu_s) {
            return Err(Error::shape(
                format!("{}x{} mu_s", mu_a.nx(), mu_a.ny()),
                format!("{}x{} mu_s", mu_s.nx(), mu_s.ny()),
            ));
        }
        Ok(OpticalPair { mu_a, mu_s, bounds })
    }

    pub fn constant(grid: &Grid2D, mu_a: f64, mu_s: f64, bounds: Bounds) -> Self {
        OpticalPair {
            mu_a: Field2::constant(grid.nx(), grid.ny(), mu_a),
            mu_s: Field2::constant(grid.nx(), grid.ny(), mu_s),
            bounds,
        }
    }

    pub fn nx(&self) -> usize {
        self.mu_a.nx()
    }

    pub fn ny(&self) -> usize {
        self.mu_a.ny()
    }

    pub fn check_grid(&self, grid: &Grid2D) -> Result<()> {
        self.mu_a.check_shape(grid.nx(), grid.ny())?;
        self.mu_s.check_shape(grid.nx(), grid.ny())
    }

    /// Membership in the admissible set; reports the first offending cell,
    /// scanning `mu_a` before `mu_s`.
    pub fn validate(&self) -> Result<()> {
        if !self.mu_a.same_shape(&self.mu_s) {
            return Err(Error::shape(
                format!("{}x{}", self.mu_a.nx(), self.mu_a.ny()),
                format!("{}x{}", self.mu_s.nx(), self.mu_s.ny()),
            ));
        }
        for (coefficient, field) in [
            (Coefficient::Absorption, &self.mu_a),
            (Coefficient::Scattering, &self.mu_s),
        ] {
            for (idx, &value) in field.as_slice().iter().enumerate() {
                if !self.bounds.contains(value) {
                    return Err(Error::Inadmissible(AdmissibilityViolation {
                        coefficient,
                        i: idx % field.nx(),
                        j: idx / field.nx(),
                        value,
                        lo: self.bounds.lo,
                        hi: self.bounds.hi,
                    }));
                }
            }
        }
        Ok(())
    }

    /// Cellwise clamp onto the admissible box.
    pub fn project(&self) -> OpticalPair {
        let b = self.bounds;
        OpticalPair {
            mu_a: self.mu_a.map(|v| b.clamp(v)),
            mu_s: self.mu_s.map(|v| b.clamp(v)),
            bounds: b,
        }
    }

    /// `self + t * (da, ds)` without projection.
    pub fn perturbed(&self, t: f64, da: &Field2, ds: &Field2) -> OpticalPair {
        OpticalPair {
            mu_a: self.mu_a.axpy(t, da),
            mu_s: self.mu_s.axpy(t, ds),
            bounds: self.bounds,
        }
    }

    /// Largest cellwise `μs / (μa + μs)`.
    pub fn scattering_ratio(&self) -> f64 {
        self.mu_a
            .as_slice()
            .iter()
            .zip(self.mu_s.as_slice())
            .map(|(a, s)| s / (a + s))
            .fold(0.0, f64::max)
    }
}

/// Free-function form of [`OpticalPair::validate`].
pub fn validate_admissible(pair: &OpticalPair) -> Result<()> {
    pair.validate()
}
