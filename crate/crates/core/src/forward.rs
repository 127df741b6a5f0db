//! Fluence, absorbed energy and data perturbation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{EnergyMap, Field2, FluenceMap, Radiance, VolumeSource};
use crate::grid::{AngularQuadrature, OpticalPair, PhaseSpace};
use crate::transport::{solve_rte, BoundarySource, SolveReport, SolverOptions};

/// `U(c) = Σ_k w_k u(c, k)`
pub fn compute_fluence(u: &Radiance, quad: &AngularQuadrature) -> Result<FluenceMap> {
    if u.ns() != quad.len() {
        return Err(Error::shape(
            format!("{} ordinates", quad.len()),
            format!("{} ordinates", u.ns()),
        ));
    }
    let w = quad.weight();
    let data = u
        .as_slice()
        .chunks(u.ns())
        .map(|c| w * c.iter().sum::<f64>())
        .collect();
    Field2::from_vec(u.nx(), u.ny(), data)
}

/// A forward evaluation with the radiance kept for derivative computations.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub radiance: Radiance,
    pub fluence: FluenceMap,
    pub energy: EnergyMap,
    pub iterations: usize,
}

/// Solves the transport problem and forms `E = μa · U`.
pub fn forward_state(
    space: &PhaseSpace,
    pair: &OpticalPair,
    q: Option<&VolumeSource>,
    u0: Option<&BoundarySource>,
    opts: SolverOptions,
) -> Result<ForwardState> {
    let SolveReport {
        radiance,
        residuals,
        ..
    } = solve_rte(space, pair, q, u0, opts)?;
    let fluence = compute_fluence(&radiance, &space.quad)?;
    let energy = pair.mu_a.mul(&fluence);
    Ok(ForwardState {
        radiance,
        fluence,
        energy,
        iterations: residuals.len(),
    })
}

/// The forward map `F(μa, μs) = μa · U(μa, μs)`.
pub fn forward(
    space: &PhaseSpace,
    pair: &OpticalPair,
    q: Option<&VolumeSource>,
    u0: Option<&BoundarySource>,
    opts: SolverOptions,
) -> Result<EnergyMap> {
    forward_state(space, pair, q, u0, opts).map(|s| s.energy)
}

/// `E = p0 / Π`, cellwise.
pub fn energy_from_pressure(p0: &Field2, gruneisen: &Field2) -> Result<EnergyMap> {
    gruneisen.check_shape(p0.nx(), p0.ny())?;
    if let Some((idx, v)) = gruneisen
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
    {
        return Err(Error::InvalidParameter(format!(
            "Grueneisen parameter must be positive, got {v} at cell ({}, {})",
            idx % p0.nx(),
            idx / p0.nx()
        )));
    }
    Ok(p0.zip_map(gruneisen, |p, g| p / g))
}

/// `E + δ η / ‖η‖_{L²}` for a seeded standard-normal field `η`; the
/// perturbation has discrete `L²(Ω)` norm exactly `delta` up to rounding.
pub fn add_noise(e: &EnergyMap, delta: f64, cell_measure: f64, seed: u64) -> Result<EnergyMap> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    if delta == 0.0 {
        return Ok(e.clone());
    }
    let eta = noise_direction(e.nx(), e.ny(), cell_measure, seed);
    Ok(e.axpy(delta, &eta))
}

/// Seeded standard-normal field scaled to unit `L²(Ω)` norm.
pub fn noise_direction(nx: usize, ny: usize, cell_measure: f64, seed: u64) -> Field2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..nx * ny).map(|_| StandardNormal.sample(&mut rng)).collect();
    let eta = Field2::from_vec(nx, ny, data).expect("sized by construction");
    let norm = eta.l2_norm(cell_measure);
    eta.scale(1.0 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AngularField;
    use crate::grid::{Bounds, Grid2D};
    use crate::transport::{AngularProfile, PatchSpec};
    use crate::grid::Side;
    use std::f64::consts::PI;

    fn space() -> PhaseSpace {
        PhaseSpace::new(Grid2D::new(8, 8, 1.0, 1.0).unwrap(), 8, 0.0).unwrap()
    }

    #[test]
    fn fluence_basic() {
        let sp = space();
        let zero = compute_fluence(&AngularField::zeros(8, 8, 8), &sp.quad).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let c = compute_fluence(&AngularField::constant(8, 8, 8, 1.5), &sp.quad).unwrap();
        for v in c.as_slice() {
            assert!((v - 2.0 * PI * 1.5).abs() < 1e-12);
        }
        let mut one = AngularField::zeros(8, 8, 8);
        one.set(3, 4, 5, 2.0);
        let u = compute_fluence(&one, &sp.quad).unwrap();
        assert!((u.get(3, 4) - 2.0 * PI / 8.0 * 2.0).abs() < 1e-14);
        assert!(compute_fluence(&AngularField::zeros(8, 8, 4), &sp.quad).is_err());
    }

    #[test]
    fn forward_is_linear_in_the_source() {
        let sp = space();
        let pair = OpticalPair::constant(&sp.grid, 0.2, 1.5, Bounds::new(0.01, 10.0).unwrap());
        let b = BoundarySource::patch(
            &sp,
            PatchSpec {
                side: Side::Bottom,
                center: 0.5,
                width: 0.5,
                intensity: 1.0,
                profile: AngularProfile::Diffuse,
            },
        )
        .unwrap();
        let opts = SolverOptions::with_tol(1e-14);
        let e1 = forward(&sp, &pair, None, Some(&b), opts).unwrap();
        let e2 = forward(&sp, &pair, None, Some(&b.scale(2.0)), opts).unwrap();
        for (a, b) in e1.as_slice().iter().zip(e2.as_slice()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        assert!(e1.min() >= 0.0);
        let zero = forward(&sp, &pair, None, None, opts).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn pressure_to_energy() {
        let p0 = Field2::constant(4, 4, 2.0);
        let pi = Field2::constant(4, 4, 4.0);
        let e = energy_from_pressure(&p0, &pi).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.5));
        let e = energy_from_pressure(&p0, &Field2::constant(4, 4, 1.0)).unwrap();
        assert_eq!(e, p0);
        let e = energy_from_pressure(&Field2::zeros(4, 4), &pi).unwrap();
        assert_eq!(e.max_abs(), 0.0);
        let mut bad = pi.clone();
        bad.set(1, 2, 0.0);
        assert!(energy_from_pressure(&p0, &bad).is_err());
    }

    #[test]
    fn noise_is_exactly_calibrated() {
        let e = Field2::from_vec(5, 3, (0..15).map(|v| v as f64).collect()).unwrap();
        let h = 0.04;
        assert_eq!(add_noise(&e, 0.0, h, 1).unwrap(), e);
        for delta in [1e-3, 0.5, 7.0] {
            let n = add_noise(&e, delta, h, 42).unwrap();
            let gap = n.sub(&e).l2_norm(h);
            assert!((gap - delta).abs() < 1e-12 * delta.max(1.0));
        }
        assert_eq!(add_noise(&e, 0.3, h, 9).unwrap(), add_noise(&e, 0.3, h, 9).unwrap());
        assert_ne!(add_noise(&e, 0.3, h, 9).unwrap(), add_noise(&e, 0.3, h, 10).unwrap());
        assert!(add_noise(&e, -1.0, h, 9).is_err());
    }
}
