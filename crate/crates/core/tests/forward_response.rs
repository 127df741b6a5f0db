use std::f64::consts::PI;

use qpat_core::field::Field2;
use qpat_core::forward::forward;
use qpat_core::grid::{Bounds, Grid2D, OpticalPair, PhaseSpace, Side};
use qpat_core::transport::{AngularProfile, BoundarySource, PatchSpec, SolverOptions};

fn setup(n: usize) -> (PhaseSpace, OpticalPair, Vec<BoundarySource>) {
    let grid = Grid2D::new(n, n, 1.0, 1.0).unwrap();
    let space = PhaseSpace::new(grid, 16, 0.5).unwrap();
    let pair = OpticalPair::constant(&grid, 0.1, 1.0, Bounds::new(0.01, 10.0).unwrap());
    let sources = [Side::Left, Side::Bottom]
        .into_iter()
        .map(|side| {
            BoundarySource::patch(
                &space,
                PatchSpec {
                    side,
                    center: 0.5,
                    width: 0.8,
                    intensity: 1.0,
                    profile: AngularProfile::Diffuse,
                },
            )
            .unwrap()
        })
        .collect();
    (space, pair, sources)
}

fn response(space: &PhaseSpace, base: &OpticalPair, p: &OpticalPair, sources: &[BoundarySource]) -> f64 {
    let h = space.grid.cell_measure();
    let opts = SolverOptions::with_tol(1e-13);
    sources
        .iter()
        .map(|s| {
            let e0 = forward(space, base, None, Some(s), opts).unwrap();
            let e1 = forward(space, p, None, Some(s), opts).unwrap();
            e1.sub(&e0).l2_norm(h).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn piecewise_constant_perturbations_have_bounded_l1_ratio() {
    let (space, base, sources) = setup(24);
    let grid = space.grid;
    let h = grid.cell_measure();
    let chi = Field2::from_fn(&grid, |x, y| {
        if (x - 0.4).powi(2) + (y - 0.6).powi(2) <= 0.2f64.powi(2) {
            1.0
        } else {
            0.0
        }
    });
    let (da, ds) = (chi.scale(0.2), chi.scale(1.5));
    let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&t| {
            let p = base.perturbed(t, &da, &ds);
            let mut distinct = p.mu_a.as_slice().to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            assert_eq!(distinct.len(), 2);
            response(&space, &base, &p, &sources) / (t * (da.l1_norm(h) + ds.l1_norm(h)))
        })
        .collect();
    let hi = ratios.iter().copied().fold(f64::MIN, f64::max);
    let lo = ratios.iter().copied().fold(f64::MAX, f64::min);
    assert!(hi / lo - 1.0 < 0.5, "{ratios:?}");
}

#[test]
fn scattering_perturbations_are_smoothed_by_frequency() {
    let (space, base, sources) = setup(32);
    let grid = space.grid;
    let h = grid.cell_measure();
    let t = 1e-3;
    let zero = Field2::zeros(grid.nx(), grid.ny());
    let mut prev = f64::INFINITY;
    for k in [1.0, 2.0, 4.0, 8.0] {
        let d = Field2::from_fn(&grid, |x, y| (2.0 * PI * k * x).cos() * (2.0 * PI * k * y).cos());
        let d = d.scale(1.0 / d.l2_norm(h));
        let r = response(&space, &base, &base.perturbed(t, &zero, &d), &sources) / t;
        assert!(r < prev, "k = {k}: {r} >= {prev}");
        prev = r;
    }
}
