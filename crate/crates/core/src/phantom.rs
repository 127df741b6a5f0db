//! Synthetic coefficient phantoms.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::grid::{Bounds, Grid2D, OpticalPair};

/// Geometry in fractions of the domain: centres and corners scale with
/// `(lx, ly)`, a disk radius with `lx`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: Shape,
    pub mu_a: f64,
    pub mu_s: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub mu_a: f64,
    pub mu_s: f64,
    #[serde(default, rename = "inclusion")]
    pub inclusions: Vec<Inclusion>,
    /// Gaussian bumps of this standard deviation (fraction of `lx`) centred
    /// on each inclusion instead of sharp inclusions.
    #[serde(default)]
    pub smooth_width: Option<f64>,
}

impl PhantomSpec {
    pub fn homogeneous(mu_a: f64, mu_s: f64) -> Self {
        PhantomSpec {
            mu_a,
            mu_s,
            inclusions: Vec::new(),
            smooth_width: None,
        }
    }

    pub fn validate(&self, grid: &Grid2D, bounds: Bounds) -> Result<()> {
        let check = |what: &str, v: f64| {
            if bounds.contains(v) {
                Ok(())
            } else {
                Err(Error::InvalidPhantom(format!(
                    "{what} = {v} outside [{}, {}]",
                    bounds.lo, bounds.hi
                )))
            }
        };
        check("background mu_a", self.mu_a)?;
        check("background mu_s", self.mu_s)?;
        if let Some(w) = self.smooth_width {
            if !(w > 0.0) {
                return Err(Error::InvalidPhantom(format!("smooth width must be positive, got {w}")));
            }
        }
        for (n, inc) in self.inclusions.iter().enumerate() {
            check(&format!("inclusion {n} mu_a"), inc.mu_a)?;
            check(&format!("inclusion {n} mu_s"), inc.mu_s)?;
            let inside = match inc.shape {
                Shape::Disk { cx, cy, r } => {
                    let ry = r * grid.lx() / grid.ly();
                    r > 0.0 && cx - r >= 0.0 && cx + r <= 1.0 && cy - ry >= 0.0 && cy + ry <= 1.0
                }
                Shape::Rectangle { x0, y0, x1, y1 } => {
                    0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0
                }
            };
            if !inside {
                return Err(Error::InvalidPhantom(format!(
                    "inclusion {n} geometry {:?} is not inside the domain",
                    inc.shape
                )));
            }
        }
        Ok(())
    }
}

impl Shape {
    fn contains(&self, grid: &Grid2D, x: f64, y: f64) -> bool {
        let (lx, ly) = (grid.lx(), grid.ly());
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx * lx).powi(2) + (y - cy * ly).powi(2) <= (r * lx).powi(2),
            Shape::Rectangle { x0, y0, x1, y1 } => {
                x >= x0 * lx && x <= x1 * lx && y >= y0 * ly && y <= y1 * ly
            }
        }
    }

    fn centre(&self, grid: &Grid2D) -> (f64, f64) {
        let (lx, ly) = (grid.lx(), grid.ly());
        match *self {
            Shape::Disk { cx, cy, .. } => (cx * lx, cy * ly),
            Shape::Rectangle { x0, y0, x1, y1 } => (0.5 * (x0 + x1) * lx, 0.5 * (y0 + y1) * ly),
        }
    }
}

/// Evaluates the phantom at cell centres. Sharp inclusions are rasterised by
/// centre membership, later inclusions drawn over earlier ones; in smooth
/// mode the bumps add up and the sum must stay admissible.
pub fn make_phantom(spec: &PhantomSpec, grid: &Grid2D, bounds: Bounds) -> Result<OpticalPair> {
    spec.validate(grid, bounds)?;
    let (mut mu_a, mut mu_s) = (
        Field2::constant(grid.nx(), grid.ny(), spec.mu_a),
        Field2::constant(grid.nx(), grid.ny(), spec.mu_s),
    );
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.center(i, j);
            let (mut a, mut s) = (spec.mu_a, spec.mu_s);
            for inc in &spec.inclusions {
                match spec.smooth_width {
                    None => {
                        if inc.shape.contains(grid, x, y) {
                            a = inc.mu_a;
                            s = inc.mu_s;
                        }
                    }
                    Some(w) => {
                        let (cx, cy) = inc.shape.centre(grid);
                        let sigma = w * grid.lx();
                        let bump = (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
                        a += (inc.mu_a - spec.mu_a) * bump;
                        s += (inc.mu_s - spec.mu_s) * bump;
                    }
                }
            }
            mu_a.set(i, j, a);
            mu_s.set(i, j, s);
        }
    }
    let pair = OpticalPair { mu_a, mu_s, bounds };
    pair.validate()?;
    Ok(pair)
}

/// Indicator of one shape at cell centres (1 inside, −1 outside).
pub fn shape_mask(shape: &Shape, grid: &Grid2D) -> Field2 {
    Field2::from_fn(grid, |x, y| if shape.contains(grid, x, y) { 1.0 } else { -1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bounds() -> Bounds {
        Bounds::new(0.01, 10.0).unwrap()
    }

    #[test]
    fn background_only() {
        let g = Grid2D::new(8, 6, 1.0, 1.0).unwrap();
        let p = make_phantom(&PhantomSpec::homogeneous(0.1, 2.0), &g, bounds()).unwrap();
        assert!(p.mu_a.as_slice().iter().all(|&v| v == 0.1));
        assert!(p.mu_s.as_slice().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn disk_area_count() {
        let g = Grid2D::new(64, 64, 1.0, 1.0).unwrap();
        let spec = PhantomSpec {
            inclusions: vec![Inclusion {
                shape: Shape::Disk { cx: 0.5, cy: 0.5, r: 0.25 },
                mu_a: 0.3,
                mu_s: 2.0,
            }],
            ..PhantomSpec::homogeneous(0.1, 1.0)
        };
        let p = make_phantom(&spec, &g, bounds()).unwrap();
        let count = p.mu_a.as_slice().iter().filter(|&&v| v == 0.3).count() as f64;
        let r_cells = 0.25 * 64.0;
        let expected = PI * r_cells * r_cells;
        let perimeter_cells = 2.0 * PI * r_cells;
        assert!((count - expected).abs() <= perimeter_cells, "count={count}");
    }

    #[test]
    fn smooth_mode_is_admissible() {
        let g = Grid2D::new(16, 16, 1.0, 1.0).unwrap();
        let spec = PhantomSpec {
            inclusions: vec![Inclusion {
                shape: Shape::Disk { cx: 0.4, cy: 0.6, r: 0.2 },
                mu_a: 0.2,
                mu_s: 1.5,
            }],
            smooth_width: Some(0.1),
            ..PhantomSpec::homogeneous(0.1, 1.0)
        };
        let p = make_phantom(&spec, &g, bounds()).unwrap();
        assert!(p.validate().is_ok());
        assert!(p.mu_a.max() <= 0.2 && p.mu_a.min() >= 0.1);
    }

    #[test]
    fn rejections() {
        let g = Grid2D::new(8, 8, 1.0, 1.0).unwrap();
        assert!(make_phantom(&PhantomSpec::homogeneous(20.0, 1.0), &g, bounds()).is_err());
        let outside = PhantomSpec {
            inclusions: vec![Inclusion {
                shape: Shape::Disk { cx: 0.9, cy: 0.5, r: 0.2 },
                mu_a: 0.2,
                mu_s: 1.0,
            }],
            ..PhantomSpec::homogeneous(0.1, 1.0)
        };
        assert!(make_phantom(&outside, &g, bounds()).is_err());
        let rect = PhantomSpec {
            inclusions: vec![Inclusion {
                shape: Shape::Rectangle { x0: 0.5, y0: 0.2, x1: 0.4, y1: 0.6 },
                mu_a: 0.2,
                mu_s: 1.0,
            }],
            ..PhantomSpec::homogeneous(0.1, 1.0)
        };
        assert!(make_phantom(&rect, &g, bounds()).is_err());
    }
}
