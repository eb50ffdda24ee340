//! JSON run configuration.

use std::f64::consts::PI;

use fermi1d::grid::{ConvolutionKernel, GeneralKernel};
use fermi1d::nalgebra::DMatrix;
use fermi1d::{BoundaryCondition, Delta, Density, ExternalPotential, Grid, GridFunction, Interaction};
use serde::Deserialize;

use crate::CliError;

fn default_n() -> usize {
    400
}

fn default_k() -> usize {
    10
}

fn default_particles() -> usize {
    2
}

fn default_bc() -> BoundaryCondition {
    BoundaryCondition::Neumann
}

fn default_mixing() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of grid cells.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Spectral basis size.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub interaction: InteractionSpec,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_mixing")]
    pub mixing: f64,
    #[serde(default)]
    pub seed: u64,
    /// Run non-local problems whose particle number violates the parity rule.
    #[serde(default)]
    pub allow_parity_violation: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub grad_tol: Option<f64>,
    pub scf_tol: Option<f64>,
    pub max_iters: Option<usize>,
}

/// Inversion search space: `"smooth"` (default, `K − 1` directions),
/// `"full"`, or an explicit dimension.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(untagged)]
pub enum SearchSpec {
    #[default]
    #[serde(skip)]
    Smooth,
    Dim(usize),
    Named(SearchName),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchName {
    Smooth,
    Full,
}

impl SearchSpec {
    pub fn dim(&self, k: usize) -> Option<usize> {
        match self {
            SearchSpec::Smooth | SearchSpec::Named(SearchName::Smooth) => Some(k.saturating_sub(1).max(1)),
            SearchSpec::Named(SearchName::Full) => None,
            SearchSpec::Dim(d) => Some(*d),
        }
    }
}

/// One analytic or tabulated term of a regular potential.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Constant { value: f64 },
    /// `amplitude·cos(2πkx)`.
    Cos { k: u32, amplitude: f64 },
    /// `amplitude·sin(2πkx)`.
    Sin { k: u32, amplitude: f64 },
    /// `amplitude·cos(kπx)`.
    CosHalf { k: u32, amplitude: f64 },
    Nodal { values: Vec<f64> },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    #[serde(default)]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub deltas: Vec<Delta>,
    #[serde(default)]
    pub constant: f64,
}

impl PotentialSpec {
    pub fn regular(&self, grid: Grid, what: &str) -> Result<GridFunction, CliError> {
        let mut values = vec![0.0; grid.n_nodes()];
        for (i, term) in self.terms.iter().enumerate() {
            match term {
                Term::Nodal { values: v } => {
                    if v.len() != grid.n_nodes() {
                        return Err(CliError::Config(format!(
                            "{what}.terms[{i}]: {} nodal values, grid has {} nodes",
                            v.len(),
                            grid.n_nodes()
                        )));
                    }
                    values.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
                t => {
                    for (a, x) in values.iter_mut().zip(grid.nodes()) {
                        *a += match *t {
                            Term::Constant { value } => value,
                            Term::Cos { k, amplitude } => amplitude * (2.0 * PI * k as f64 * x).cos(),
                            Term::Sin { k, amplitude } => amplitude * (2.0 * PI * k as f64 * x).sin(),
                            Term::CosHalf { k, amplitude } => amplitude * (PI * k as f64 * x).cos(),
                            Term::Nodal { .. } => unreachable!(),
                        };
                    }
                }
            }
        }
        Ok(GridFunction::new(grid, values)?)
    }

    pub fn build(&self, grid: Grid, what: &str) -> Result<ExternalPotential, CliError> {
        for (i, d) in self.deltas.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.position) {
                return Err(CliError::Config(format!(
                    "{what}.deltas[{i}].position = {} lies outside [0, 1]",
                    d.position
                )));
            }
        }
        ExternalPotential::new(self.regular(grid, what)?, self.deltas.clone(), self.constant)
            .map_err(|e| CliError::Config(format!("{what}: {e}")))
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionSpec {
    #[default]
    Zero,
    /// `strength·cos(2πk(x − y))`.
    Cosine { k: u32, strength: f64 },
    Constant { value: f64 },
    /// Samples of `w(s)` on a uniform grid of `[−1, 1]`.
    Convolution { samples: Vec<f64> },
    General { values: Vec<Vec<f64>> },
}

impl InteractionSpec {
    pub fn build(&self, grid: Grid, what: &str) -> Result<Interaction, CliError> {
        let wrap = |e: fermi1d::Error| CliError::Config(format!("{what}: {e}"));
        Ok(match self {
            InteractionSpec::Zero => Interaction::Zero,
            InteractionSpec::Cosine { k, strength } => Interaction::cosine(&grid, *k, *strength).map_err(wrap)?,
            InteractionSpec::Constant { value } => Interaction::constant(grid, *value).map_err(wrap)?,
            InteractionSpec::Convolution { samples } => {
                Interaction::Convolution(ConvolutionKernel::new(samples.clone()).map_err(wrap)?)
            }
            InteractionSpec::General { values } => {
                let n = grid.n_nodes();
                if values.len() != n || values.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config(format!("{what}: kernel must be {n}×{n}")));
                }
                let m = DMatrix::from_fn(n, n, |a, b| values[a][b]);
                Interaction::General(GeneralKernel::new(grid, m).map_err(wrap)?)
            }
        })
    }
}

/// Target density for `invert`, `fll` and `density-to-slater`.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Ground-state density of a forward solve on the same discretization.
    GroundState {
        potential: PotentialSpec,
        #[serde(default)]
        interaction: Option<InteractionSpec>,
    },
    /// Nonnegative profile rescaled to integrate to `N`.
    Profile { terms: Vec<Term> },
    Nodal { values: Vec<f64> },
    Uniform,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check(self.n >= 2, || format!("n = {} must be at least 2", self.n))?;
        check(self.k >= 1 && self.k <= 63, || format!("k = {} must lie in 1..=63", self.k))?;
        check(self.particles >= 1, || "particles must be positive".into())?;
        check(self.particles <= self.k, || {
            format!("particles = {} exceeds basis size k = {}", self.particles, self.k)
        })?;
        check(self.k <= self.bc.dimension(&Grid::new(self.n).expect("n checked")), || {
            format!("k = {} exceeds the grid dimension", self.k)
        })?;
        check(self.mixing > 0.0 && self.mixing <= 1.0, || {
            format!("mixing = {} must lie in (0, 1]", self.mixing)
        })?;
        if let Some(t) = self.tolerances.grad_tol {
            check(t > 0.0, || "tolerances.grad_tol must be positive".into())?;
        }
        if let Some(t) = self.tolerances.scf_tol {
            check(t > 0.0, || "tolerances.scf_tol must be positive".into())?;
        }
        let grid = self.grid();
        self.potential.build(grid, "potential")?;
        self.interaction.build(grid, "interaction")?;
        if let Some(TargetSpec::GroundState { potential, interaction }) = &self.target {
            potential.build(grid, "target.potential")?;
            if let Some(w) = interaction {
                w.build(grid, "target.interaction")?;
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.n).expect("validated grid size")
    }

    /// `N` odd for periodic, even for anti-periodic, anything for Neumann.
    pub fn parity_ok(&self) -> bool {
        self.bc.parity_ok(self.particles)
    }

    /// Errors on a parity violation unless overridden, in which case a
    /// warning is returned.
    pub fn enforce_parity(&self) -> Result<Option<String>, CliError> {
        if self.parity_ok() {
            return Ok(None);
        }
        let msg = format!(
            "{} particles under {} conditions violate the parity rule; uniqueness and representability guarantees do not apply",
            self.particles, self.bc
        );
        if self.allow_parity_violation {
            Ok(Some(msg))
        } else {
            Err(CliError::Config(format!("{msg} (set allow_parity_violation to override)")))
        }
    }

    pub fn target_density(&self, basis: &fermi1d::many_body::SpectralBasis) -> Result<Density, CliError> {
        let grid = self.grid();
        let n = self.particles;
        match &self.target {
            None => Err(CliError::Config("this command needs a `target`".into())),
            Some(TargetSpec::GroundState { potential, interaction }) => {
                let v = potential.build(grid, "target.potential")?;
                let w = interaction.as_ref().unwrap_or(&self.interaction).build(grid, "target.interaction")?;
                let p = fermi1d::many_body::assemble_hn(&v, &w, basis, n)?;
                Ok(fermi1d::many_body::density(&fermi1d::many_body::ground_state(&p)?.psi))
            }
            Some(TargetSpec::Profile { terms }) => {
                let spec = PotentialSpec {
                    terms: terms.clone(),
                    ..Default::default()
                };
                let profile = spec.regular(grid, "target")?;
                if let Some(i) = profile.values().iter().position(|v| *v < 0.0) {
                    return Err(CliError::Config(format!("target profile is negative at node {i}")));
                }
                Density::normalized(profile, n).map_err(|e| CliError::Config(format!("target: {e}")))
            }
            Some(TargetSpec::Nodal { values }) => {
                let f = GridFunction::new(grid, values.clone()).map_err(|e| CliError::Config(format!("target: {e}")))?;
                Density::new(f, n).map_err(|e| CliError::Config(format!("target: {e}")))
            }
            Some(TargetSpec::Uniform) => Ok(Density::uniform(grid, n)?),
        }
    }
}
