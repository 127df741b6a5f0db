//! Several illuminations: summed misfit and cyclic Kaczmarz updates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{EnergyMap, VolumeSource};
use crate::forward::forward;
use crate::grid::{OpticalPair, PhaseSpace};
use crate::sensitivity::DataFit;
use crate::tikhonov::{misfit_p, projected_gradient_step, StepLog, TikhonovConfig};
use crate::transport::{BoundarySource, SolverOptions};

/// A nonempty list of boundary sources.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationSet {
    sources: Vec<BoundarySource>,
}

impl IlluminationSet {
    pub fn new(space: &PhaseSpace, sources: Vec<BoundarySource>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidSource("an illumination set needs at least one source".into()));
        }
        for s in &sources {
            s.check(space)?;
        }
        Ok(IlluminationSet { sources })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[BoundarySource] {
        &self.sources
    }
}

/// One forward solve per source, run concurrently.
pub fn forward_multi(
    space: &PhaseSpace,
    pair: &OpticalPair,
    ills: &IlluminationSet,
    q: Option<&VolumeSource>,
    opts: SolverOptions,
) -> Result<Vec<EnergyMap>> {
    pair.validate()?;
    ills.sources
        .par_iter()
        .map(|s| forward(space, pair, q, Some(s), opts))
        .collect()
}

/// `Σ_m (1/p) ‖E_m − F_m(μ)‖ᵖ_{Lᵖ}`
pub fn eval_multi_misfit(
    space: &PhaseSpace,
    pair: &OpticalPair,
    ills: &IlluminationSet,
    data: &[EnergyMap],
    p: f64,
    opts: SolverOptions,
) -> Result<f64> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("misfit exponent must lie in [1, 2], got {p}")));
    }
    let fit = DataFit::new(space, ills.sources(), data, opts)?;
    misfit_p(&fit, pair, p)
}

/// Log entry for one Kaczmarz substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepLog {
    pub source: usize,
    pub step: StepLog,
}

/// One cyclic pass over the sources. Substep `m` is a projected gradient
/// step on `½‖E_m − F_m‖² + (α/N) · penalty`, so a full sweep applies the
/// penalty gradient once in total.
pub fn kaczmarz_sweep(
    fit: &DataFit<'_>,
    pair: &OpticalPair,
    cfg: &TikhonovConfig,
    initial_step: f64,
) -> Result<(OpticalPair, Vec<SubstepLog>)> {
    pair.validate()?;
    let n = fit.sources.len();
    let sub_cfg = TikhonovConfig {
        alpha: cfg.alpha / n as f64,
        ..cfg.clone()
    };
    let mut current = pair.clone();
    let mut log = Vec::with_capacity(n);
    for m in 0..n {
        let (next, step) = projected_gradient_step(&fit.single(m), &current, &sub_cfg, initial_step)?;
        current = next;
        log.push(SubstepLog { source: m, step });
    }
    Ok((current, log))
}
