//! Storage for per-cell and per-cell-per-ordinate fields.
//!
//! Cells are stored row-major: cell `(i, j)` lives at `j * nx + i`, so a
//! row of constant `y` is contiguous. Angular fields append the ordinate as
//! the fastest index: `(i, j, k)` lives at `(j * nx + i) * ns + k`.

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Scalar field with one value per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

/// Absorbed energy per unit volume, one value per cell.
pub type EnergyMap = Field2;
/// Angular integral of the radiance, one value per cell.
pub type FluenceMap = Field2;

impl Field2 {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::constant(nx, ny, 0.0)
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Field2 {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::shape(nx * ny, data.len()));
        }
        Ok(Field2 { nx, ny, data })
    }

    /// Evaluates `f(x, y)` at every cell centre of `grid`.
    pub fn from_fn(grid: &Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.cells());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.center(i, j);
                data.push(f(x, y));
            }
        }
        Field2 {
            nx: grid.nx(),
            ny: grid.ny(),
            data,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[j * self.nx + i] = value;
    }

    pub fn same_shape(&self, other: &Field2) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn check_shape(&self, nx: usize, ny: usize) -> Result<()> {
        if self.nx != nx || self.ny != ny {
            return Err(Error::shape(
                format!("{nx}x{ny} field"),
                format!("{}x{} field", self.nx, self.ny),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2 {
        Field2 {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cellwise combination of two equally shaped fields.
    pub fn zip_map(&self, other: &Field2, f: impl Fn(f64, f64) -> f64) -> Field2 {
        assert!(self.same_shape(other), "zip_map on mismatched fields");
        Field2 {
            nx: self.nx,
            ny: self.ny,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Field2) -> Field2 {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field2) -> Field2 {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field2) -> Field2 {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Field2 {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Field2) -> Field2 {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^p(Ω)` norm with cell measure `cell_measure`.
    pub fn lp_norm(&self, p: f64, cell_measure: f64) -> f64 {
        if p.is_infinite() {
            return self.max_abs();
        }
        let s: f64 = self.data.iter().map(|v| v.abs().powf(p)).sum();
        (cell_measure * s).powf(1.0 / p)
    }

    pub fn l2_norm(&self, cell_measure: f64) -> f64 {
        (cell_measure * self.dot_raw(self)).sqrt()
    }

    pub fn l1_norm(&self, cell_measure: f64) -> f64 {
        cell_measure * self.data.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Unweighted sum of products.
    pub fn dot_raw(&self, other: &Field2) -> f64 {
        assert!(self.same_shape(other), "dot on mismatched fields");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `L^2(Ω)` inner product with cell measure.
    pub fn inner(&self, other: &Field2, cell_measure: f64) -> f64 {
        cell_measure * self.dot_raw(other)
    }
}

/// Field with one value per cell and ordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularField {
    nx: usize,
    ny: usize,
    ns: usize,
    data: Vec<f64>,
}

/// Discrete radiance `u(x, s)`.
pub type Radiance = AngularField;
/// Interior source density `q(x, s)`.
pub type VolumeSource = AngularField;

impl AngularField {
    pub fn zeros(nx: usize, ny: usize, ns: usize) -> Self {
        AngularField {
            nx,
            ny,
            ns,
            data: vec![0.0; nx * ny * ns],
        }
    }

    pub fn constant(nx: usize, ny: usize, ns: usize, value: f64) -> Self {
        AngularField {
            nx,
            ny,
            ns,
            data: vec![value; nx * ny * ns],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, ns: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny * ns {
            return Err(Error::shape(nx * ny * ns, data.len()));
        }
        Ok(AngularField { nx, ny, ns, data })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(j * self.nx + i) * self.ns + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[(j * self.nx + i) * self.ns + k] = value;
    }

    /// All ordinate values of cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let c = (j * self.nx + i) * self.ns;
        &self.data[c..c + self.ns]
    }

    pub fn same_shape(&self, other: &AngularField) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.ns == other.ns
    }

    pub fn check_shape(&self, nx: usize, ny: usize, ns: usize) -> Result<()> {
        if self.nx != nx || self.ny != ny || self.ns != ns {
            return Err(Error::shape(
                format!("{nx}x{ny}x{ns} angular field"),
                format!("{}x{}x{} angular field", self.nx, self.ny, self.ns),
            ));
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> AngularField {
        AngularField {
            data: self.data.iter().map(|v| s * v).collect(),
            ..self.clone()
        }
    }

    pub fn sub(&self, other: &AngularField) -> AngularField {
        assert!(self.same_shape(other), "sub on mismatched angular fields");
        AngularField {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..self.clone()
        }
    }

    pub fn add_assign(&mut self, other: &AngularField) {
        assert!(self.same_shape(other), "add on mismatched angular fields");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Unweighted sum of products.
    pub fn dot_raw(&self, other: &AngularField) -> f64 {
        assert!(self.same_shape(other), "dot on mismatched angular fields");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Discrete `L^p(D)` norm for `D = Ω × S¹`; `measure` is the (uniform)
    /// product of cell area and ordinate weight.
    pub fn lp_norm(&self, p: f64, measure: f64) -> f64 {
        if p.is_infinite() {
            return self.max_abs();
        }
        let s: f64 = self.data.iter().map(|v| v.abs().powf(p)).sum();
        (measure * s).powf(1.0 / p)
    }
}
