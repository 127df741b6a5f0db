//! TOML experiment configuration.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{Bounds, Grid2D, PhaseSpace, Side};
use crate::phantom::PhantomSpec;
use crate::transport::{AngularProfile, BoundarySource, PatchSpec, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Forward,
    Reconstruct,
    Convergence,
    Gradcheck,
    BeerLambert,
    EpsContinuation,
    KaczmarzSweep,
    AdjointIdentity,
    ScatteringBound,
    SourceIteration,
    Continuity,
    Heaviside,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Forward => "forward",
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Gradcheck => "gradcheck",
            ExperimentKind::BeerLambert => "beer_lambert",
            ExperimentKind::EpsContinuation => "eps_continuation",
            ExperimentKind::KaczmarzSweep => "kaczmarz_sweep",
            ExperimentKind::AdjointIdentity => "adjoint_identity",
            ExperimentKind::ScatteringBound => "scattering_bound",
            ExperimentKind::SourceIteration => "source_iteration",
            ExperimentKind::Continuity => "continuity",
            ExperimentKind::Heaviside => "heaviside",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    H1,
    Levelset,
    Kaczmarz,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub scheme: Option<Scheme>,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    pub ns: usize,
    #[serde(default)]
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub mu_lo: f64,
    pub mu_hi: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub side: String,
    pub center: f64,
    pub width: f64,
    #[serde(default = "one")]
    pub intensity: f64,
    /// Collimated along this ordinate; diffuse when absent.
    #[serde(default)]
    pub ordinate: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// `δ` as a fraction of `‖E‖_{L²}`.
    pub level: f64,
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: default_tol(),
            max_iter: None,
        }
    }
}

fn default_max_iter() -> usize {
    200
}

fn default_grad_tol() -> f64 {
    1e-9
}

fn default_memory() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TikhonovSection {
    /// Fixed weight; when absent the `[alpha_rule]` section decides.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub prior_mu_a: f64,
    pub prior_mu_s: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_memory")]
    pub memory: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaRuleSection {
    pub c: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    /// Noise levels as fractions of `‖E‖_{L²}`, strictly decreasing.
    pub levels: Vec<f64>,
}

fn default_levelset_iter() -> usize {
    500
}

fn default_beta_tv() -> f64 {
    crate::levelset::BETA_TV
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetSection {
    pub alpha: f64,
    /// Ramp width in units of `hx`.
    pub epsilon_cells: f64,
    /// Radius of the initial circle as a fraction of `lx`.
    pub init_radius: f64,
    #[serde(default = "half")]
    pub init_cx: f64,
    #[serde(default = "half")]
    pub init_cy: f64,
    pub a1: f64,
    pub a2: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default = "default_levelset_iter")]
    pub max_iter: usize,
    #[serde(default = "default_beta_tv")]
    pub beta_tv: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Continuation widths in units of `hx`, strictly decreasing.
    #[serde(default)]
    pub eps_list_cells: Option<Vec<f64>>,
}

fn default_initial_step() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KaczmarzSection {
    pub sweeps: usize,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
}

fn default_directions() -> usize {
    5
}

fn default_steps() -> Vec<f64> {
    vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_steps")]
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeerLambertSection {
    /// Cell counts per side, coarse to fine.
    pub resolutions: Vec<usize>,
    pub mu_a: f64,
    pub center: f64,
    pub width: f64,
    pub ordinate: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertiesSection {
    pub trials: usize,
    /// Perturbation sizes for the continuity study.
    #[serde(default)]
    pub steps: Option<Vec<f64>>,
    /// Largest scattering ratio `μs / (μa + μs)` drawn.
    #[serde(default)]
    pub max_scattering_ratio: Option<f64>,
    /// Smoothing widths for the Heaviside study.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub quadrature: QuadratureSection,
    pub bounds: BoundsSection,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default, rename = "source")]
    pub sources: Vec<SourceSection>,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub tikhonov: Option<TikhonovSection>,
    #[serde(default)]
    pub alpha_rule: Option<AlphaRuleSection>,
    #[serde(default)]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default)]
    pub levelset: Option<LevelSetSection>,
    #[serde(default)]
    pub kaczmarz: Option<KaczmarzSection>,
    #[serde(default)]
    pub gradcheck: Option<GradcheckSection>,
    #[serde(default)]
    pub beer_lambert: Option<BeerLambertSection>,
    #[serde(default)]
    pub properties: Option<PropertiesSection>,
}

/// Borrows an optional section or reports it as missing for `kind`.
pub fn require<'a, T>(section: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "missing section [{name}], required by experiment kind `{}`",
            kind.name()
        ))
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind
    }

    /// Checks that every section the experiment kind reads is present.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind as K;
        let kind = self.kind();
        let needs_phantom = !matches!(
            kind,
            K::BeerLambert | K::AdjointIdentity | K::ScatteringBound | K::SourceIteration | K::Heaviside
        );
        if needs_phantom {
            require(&self.phantom, "phantom", kind)?;
            if self.sources.is_empty() {
                return Err(Error::Config(format!(
                    "missing [[source]] entries, required by experiment kind `{}`",
                    kind.name()
                )));
            }
        }
        match kind {
            K::Reconstruct => {
                let scheme = self.experiment.scheme.ok_or_else(|| {
                    Error::Config("missing field `scheme` in [experiment], required by kind `reconstruct`".into())
                })?;
                match scheme {
                    Scheme::H1 | Scheme::Kaczmarz => {
                        let t = require(&self.tikhonov, "tikhonov", kind)?;
                        if t.alpha.is_none() && self.alpha_rule.is_none() {
                            return Err(Error::Config(
                                "missing field `alpha` in [tikhonov] (or an [alpha_rule] section)".into(),
                            ));
                        }
                        if t.alpha.is_none() && self.noise.is_none() {
                            return Err(Error::Config(
                                "an [alpha_rule] needs a [noise] section to fix delta".into(),
                            ));
                        }
                        if scheme == Scheme::Kaczmarz {
                            require(&self.kaczmarz, "kaczmarz", kind)?;
                        }
                    }
                    Scheme::Levelset => {
                        require(&self.levelset, "levelset", kind)?;
                    }
                }
            }
            K::Convergence => {
                require(&self.tikhonov, "tikhonov", kind)?;
                require(&self.alpha_rule, "alpha_rule", kind)?;
                require(&self.convergence, "convergence", kind)?;
            }
            K::Gradcheck => {
                require(&self.gradcheck, "gradcheck", kind)?;
                require(&self.tikhonov, "tikhonov", kind)?;
                require(&self.levelset, "levelset", kind)?;
            }
            K::BeerLambert => {
                require(&self.beer_lambert, "beer_lambert", kind)?;
            }
            K::EpsContinuation => {
                let ls = require(&self.levelset, "levelset", kind)?;
                if ls.eps_list_cells.is_none() {
                    return Err(Error::Config(
                        "missing field `eps_list_cells` in [levelset], required by kind `eps_continuation`".into(),
                    ));
                }
            }
            K::KaczmarzSweep => {
                require(&self.tikhonov, "tikhonov", kind)?;
                require(&self.kaczmarz, "kaczmarz", kind)?;
                if self.tikhonov.map(|t| t.alpha.is_none()).unwrap_or(true) {
                    return Err(Error::Config("missing field `alpha` in [tikhonov]".into()));
                }
            }
            K::AdjointIdentity | K::ScatteringBound | K::SourceIteration | K::Continuity | K::Heaviside => {
                require(&self.properties, "properties", kind)?;
            }
            K::Forward => {}
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn space(&self) -> Result<PhaseSpace> {
        PhaseSpace::new(self.grid()?, self.quadrature.ns, self.quadrature.g)
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.bounds.mu_lo, self.bounds.mu_hi)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
        }
    }

    pub fn boundary_sources(&self, space: &PhaseSpace) -> Result<Vec<BoundarySource>> {
        self.sources.iter().map(|s| s.build(space)).collect()
    }
}

impl SourceSection {
    pub fn build(&self, space: &PhaseSpace) -> Result<BoundarySource> {
        let side = Side::parse(&self.side).ok_or_else(|| {
            Error::Config(format!(
                "unknown side `{}` in [[source]] (expected left, right, bottom or top)",
                self.side
            ))
        })?;
        let profile = match self.ordinate {
            Some(k) => AngularProfile::Collimated(k),
            None => AngularProfile::Diffuse,
        };
        BoundarySource::patch(
            space,
            PatchSpec {
                side,
                center: self.center,
                width: self.width,
                intensity: self.intensity,
                profile,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[experiment]
kind = "forward"
seed = 3

[grid]
nx = 8
ny = 8
lx = 1.0
ly = 1.0

[quadrature]
ns = 8
g = 0.5

[bounds]
mu_lo = 0.01
mu_hi = 5.0

[phantom]
mu_a = 0.1
mu_s = 1.0

[[phantom.inclusion]]
shape = "disk"
cx = 0.5
cy = 0.5
r = 0.2
mu_a = 0.3
mu_s = 2.0

[[source]]
side = "left"
center = 0.5
width = 0.5
"#;

    #[test]
    fn parses_base() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.kind(), ExperimentKind::Forward);
        assert_eq!(c.sources.len(), 1);
        assert_eq!(c.sources[0].intensity, 1.0);
        let p = c.phantom.as_ref().unwrap();
        assert_eq!(p.inclusions.len(), 1);
        assert_eq!(c.solver.tol, 1e-10);
        let sp = c.space().unwrap();
        assert_eq!(c.boundary_sources(&sp).unwrap().len(), 1);
    }

    #[test]
    fn missing_field_is_named() {
        let text = BASE.replace("nx = 8\n", "");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("nx"), "{err}");
        let text = BASE.replace("kind = \"forward\"", "kind = \"reconstruct\"\nscheme = \"h1\"");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("tikhonov"), "{err}");
        let text = BASE.replace("seed = 3\n", "seed = 3\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn bad_side_is_reported() {
        let text = BASE.replace("side = \"left\"", "side = \"front\"");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let sp = c.space().unwrap();
        assert!(c.boundary_sources(&sp).unwrap_err().to_string().contains("front"));
    }
}
