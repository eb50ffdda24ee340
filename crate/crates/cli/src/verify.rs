//! Built-in verification scenarios.
//!
//! Each scenario uses the grid size `n` and the `seed` of the run
//! configuration; basis sizes and instance families are fixed per scenario.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use fermi1d::grid::GeneralKernel;
use fermi1d::inversion::{hk_uniqueness_check, invert, InversionProblem};
use fermi1d::many_body::{
    assemble_hn, build_basis, density, ground_state, pair_density, KOperator, ManyBodySystem, Rearrangement,
    SpectralBasis, WaveFunction,
};
use fermi1d::nalgebra::DVector;
use fermi1d::representability::classify_density;
use fermi1d::single_particle::{assemble_h, degeneracy_profile, eigensolve_lowest};
use fermi1d::{
    grid::inner, BoundaryCondition, Density, ExternalPotential, Grid, GridFunction, Interaction, POSITIVITY_THRESHOLD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{sqrt2_cos, CliError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Prop24,
    Prop27,
    Monotonicity,
    Degeneracy,
    HkNeumann,
    HkPeriodic,
    Rearrangement,
    Necessity,
    KOperator,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Prop24,
        Scenario::Prop27,
        Scenario::Monotonicity,
        Scenario::Degeneracy,
        Scenario::HkNeumann,
        Scenario::HkPeriodic,
        Scenario::Rearrangement,
        Scenario::Necessity,
        Scenario::KOperator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Prop24 => "prop-2.4",
            Scenario::Prop27 => "prop-2.7",
            Scenario::Monotonicity => "monotonicity",
            Scenario::Degeneracy => "degeneracy",
            Scenario::HkNeumann => "hk-neumann",
            Scenario::HkPeriodic => "hk-periodic",
            Scenario::Rearrangement => "rearrangement",
            Scenario::Necessity => "necessity",
            Scenario::KOperator => "k-operator",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(Scenario::name).collect()
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            CliError::Config(format!("unknown scenario `{s}`; available: {}", Self::names().join(", ")))
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            pass: measured <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            pass: measured >= tolerance,
        }
    }

    pub fn above(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            pass: measured > tolerance,
        }
    }

    /// Boolean property; `measured` is 1 or 0.
    pub fn holds(name: impl Into<String>, value: bool) -> Self {
        Self {
            name: name.into(),
            measured: if value { 1.0 } else { 0.0 },
            tolerance: 0.0,
            pass: value,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Report {
    fn new(scenario: Scenario, checks: Vec<Check>) -> Self {
        Self {
            scenario: scenario.name().into(),
            pass: !checks.is_empty() && checks.iter().all(|c| c.pass),
            checks,
        }
    }
}

pub fn run(scenario: Scenario, cfg: &RunConfig) -> Result<Report, CliError> {
    let grid = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9 * (scenario as u64 + 1)));
    let checks = match scenario {
        Scenario::Prop24 => prop_2_4(grid)?,
        Scenario::Prop27 => prop_2_7(grid)?,
        Scenario::Monotonicity => monotonicity(grid, &mut rng)?,
        Scenario::Degeneracy => degeneracy(grid, &mut rng)?,
        Scenario::HkNeumann => hk(grid, BoundaryCondition::Neumann, &mut rng)?,
        Scenario::HkPeriodic => hk(grid, BoundaryCondition::Periodic, &mut rng)?,
        Scenario::Rearrangement => rearrangement(grid, &mut rng)?,
        Scenario::Necessity => necessity(grid, &mut rng)?,
        Scenario::KOperator => k_operator(grid, &mut rng)?,
    };
    Ok(Report::new(scenario, checks))
}

/// `Σ aₖ·cos(kπx)` for Neumann, `Σ aₖ·cos(2πkx) + bₖ·sin(2πkx)` otherwise.
pub fn random_smooth(grid: Grid, bc: BoundaryCondition, degree: u32, amp: f64, rng: &mut impl Rng) -> GridFunction {
    let mut v = GridFunction::zeros(grid);
    for k in 1..=degree {
        let k = k as f64;
        let (a, b): (f64, f64) = (rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp));
        let term = if bc.is_local() {
            GridFunction::from_fn(grid, |x| a * (k * PI * x).cos())
        } else {
            GridFunction::from_fn(grid, |x| a * (2.0 * k * PI * x).cos() + b * (2.0 * k * PI * x).sin())
        };
        v = v.axpby(1.0, &term, 1.0).expect("same grid");
    }
    v
}

fn forward(v: &ExternalPotential, w: &Interaction, basis: &SpectralBasis, n: usize) -> Result<Density, CliError> {
    Ok(density(&ground_state(&assemble_hn(v, w, basis, n)?)?.psi))
}

fn cos_squared(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| sqrt2_cos(x).powi(2))
}

fn prop_2_4(grid: Grid) -> Result<Vec<Check>, CliError> {
    let rho = Density::new(cos_squared(grid), 1)?;
    let report = classify_density(&rho, BoundaryCondition::AntiPeriodic);
    let half = rho.rho().eval(0.5)?;
    Ok(vec![
        Check::holds("finite_kinetic_energy_class", report.in_rn),
        Check::at_most("density_at_half", half, POSITIVITY_THRESHOLD),
        Check::holds("fails_positive_class", !report.in_dn && !report.in_dn_plus),
    ])
}

/// Anti-periodic `N = 1` with `α·δ_{1/2}`: `√2·cos(πx)` vanishes at the
/// delta, so it stays an eigenfunction with energy `π²` for every `α`.
/// At `α = 0` the ground level is two-fold and the check projects
/// `√2·cos(πx)` onto it.
fn prop_2_7(grid: Grid) -> Result<Vec<Check>, CliError> {
    let basis = build_basis(BoundaryCondition::AntiPeriodic, grid, 10)?;
    let system = ManyBodySystem::new(basis, Interaction::Zero, 1)?;
    let target = GridFunction::from_fn(grid, sqrt2_cos);
    let overlaps: Vec<f64> = system
        .slater_index()
        .iter()
        .map(|modes| inner(&system.basis().mode(modes[0]), &target).expect("same grid"))
        .collect();
    let overlaps = DVector::from_vec(overlaps);
    let expected = cos_squared(grid);
    let mut checks = Vec::new();
    for alpha in [0.0, 1.0, 10.0] {
        let v = ExternalPotential::zero(grid).with_delta(0.5, alpha)?;
        let spectrum = system.problem(&v)?.spectrum();
        let energy = spectrum.eigenvalues[0];
        let mut c = DVector::zeros(system.dimension());
        for j in 0..spectrum.ground_multiplicity() {
            let u = spectrum.eigenvectors.column(j);
            c += u * u.dot(&overlaps);
        }
        let c = c.normalize();
        let rho = density(&WaveFunction::new(Arc::clone(&system), c)?);
        let err = rho.rho().axpby(1.0, &expected, -1.0)?.sup_norm();
        checks.push(Check::at_most(format!("energy_rel_error[alpha={alpha}]"), (energy - PI * PI).abs() / (PI * PI), 1e-3));
        checks.push(Check::at_most(format!("density_sup_error[alpha={alpha}]"), err, 1e-3));
    }
    Ok(checks)
}

fn gaussian_bump(grid: Grid, rng: &mut impl Rng) -> GridFunction {
    let (a, c, s): (f64, f64, f64) = (rng.gen_range(0.1..2.0), rng.gen_range(0.0..1.0), rng.gen_range(0.02..0.2));
    GridFunction::from_fn(grid, |x| a * (-0.5 * ((x - c) / s).powi(2)).exp())
}

fn monotonicity(grid: Grid, rng: &mut impl Rng) -> Result<Vec<Check>, CliError> {
    let neumann = build_basis(BoundaryCondition::Neumann, grid, 8)?;
    let periodic = build_basis(BoundaryCondition::Periodic, grid, 7)?;
    let w = Interaction::cosine(&grid, 1, 0.5)?;
    let mut checks = Vec::new();
    for i in 0..20 {
        let (basis, bc, n) = if i % 2 == 0 {
            (&neumann, BoundaryCondition::Neumann, 2)
        } else {
            (&periodic, BoundaryCondition::Periodic, 3)
        };
        let v = ExternalPotential::from_regular(random_smooth(grid, bc, 2, 2.0, rng));
        let bumped = v.add_regular(&gaussian_bump(grid, rng), 1.0)?;
        let before = ground_state(&assemble_hn(&v, &w, basis, n)?)?.energy;
        let after = ground_state(&assemble_hn(&bumped, &w, basis, n)?)?.energy;
        checks.push(Check::at_least(format!("increase[{i}]"), after - before, 1e-9));
    }
    Ok(checks)
}

fn random_delta(v: ExternalPotential, rng: &mut impl Rng) -> Result<ExternalPotential, CliError> {
    let (x, a): (f64, f64) = (rng.gen_range(0.05..0.95), rng.gen_range(0.5..5.0));
    Ok(v.with_delta(x, a)?)
}

fn degeneracy(grid: Grid, rng: &mut impl Rng) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    for i in 0..10 {
        let bc = if i % 2 == 0 {
            BoundaryCondition::Periodic
        } else {
            BoundaryCondition::AntiPeriodic
        };
        let mut v = ExternalPotential::from_regular(random_smooth(grid, bc, 3, 5.0, rng));
        if rng.gen_bool(0.5) {
            v = random_delta(v, rng)?;
        }
        let sol = eigensolve_lowest(&assemble_h(&v, bc)?, 12)?;
        let largest = degeneracy_profile(&sol, 1e-6).into_iter().max().unwrap_or(0);
        checks.push(Check::at_most(format!("largest_cluster[{i},{bc}]"), largest as f64, 2.0));
    }
    Ok(checks)
}

fn hk(grid: Grid, bc: BoundaryCondition, rng: &mut impl Rng) -> Result<Vec<Check>, CliError> {
    let (k, n, degree) = match bc {
        BoundaryCondition::Neumann => (10, 2, 3),
        _ => (9, 3, 2),
    };
    let basis = build_basis(bc, grid, k)?;
    let w = Interaction::cosine(&grid, 1, 0.5)?;
    let mut checks = Vec::new();
    for i in 0..2 {
        let truth = random_smooth(grid, bc, degree, 2.0, rng);
        let target = forward(&ExternalPotential::from_regular(truth.clone()), &w, &basis, n)?;
        let prob = InversionProblem::new(target, w.clone(), bc, basis.clone())?;
        let seeds = [
            GridFunction::zeros(grid),
            random_smooth(grid, bc, degree + 1, 4.0, rng),
            random_smooth(grid, bc, degree + 1, 4.0, rng),
        ];
        let spread = hk_uniqueness_check(&prob, &seeds)?;
        let r = invert(&prob, None)?;
        let err = r.v.regular().zero_mean().axpby(1.0, &truth.zero_mean(), -1.0)?.sup_norm();
        checks.push(Check::at_most(format!("seed_deviation[{i}]"), spread, 1e-3));
        checks.push(Check::at_most(format!("truth_deviation[{i}]"), err, 1e-3));
    }
    Ok(checks)
}

fn rearrangement(grid: Grid, rng: &mut impl Rng) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    for i in 0..5 {
        let (bc, k, n) = if i % 2 == 0 {
            (BoundaryCondition::Periodic, 7, 3)
        } else {
            (BoundaryCondition::AntiPeriodic, 6, 2)
        };
        let basis = build_basis(bc, grid, k)?;
        let (a, b): (f64, f64) = (rng.gen_range(0.2..1.0), rng.gen_range(-0.5..0.5));
        let w = Interaction::General(GeneralKernel::from_fn(grid, |x, y| {
            a * (2.0 * PI * (x - y)).cos() + b * x * y
        })?);
        let v = random_delta(ExternalPotential::from_regular(random_smooth(grid, bc, 2, 3.0, rng)), rng)?;
        let shift = rng.gen_range(1..grid.n_cells());
        let r = Rearrangement::new(bc, grid.node(shift))?;
        let vt = r.pull_back_potential(&v)?;
        let wt = r.pull_back_interaction(&w, &grid)?;
        let before = assemble_hn(&v, &w, &basis, n)?.spectrum().eigenvalues;
        let after = assemble_hn(&vt, &wt, &basis, n)?.spectrum().eigenvalues;
        let dev = before.iter().zip(&after).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most(format!("spectrum_deviation[{i},{bc}]"), dev, 1e-8));
    }
    Ok(checks)
}

fn necessity(grid: Grid, rng: &mut impl Rng) -> Result<Vec<Check>, CliError> {
    let bc = BoundaryCondition::Neumann;
    let basis = build_basis(bc, grid, 10)?;
    let mut margin = f64::INFINITY;
    let mut integral_err = 0.0f64;
    let mut failures = 0;
    for i in 0..25 {
        let n = 2 + i % 2;
        let mut v = ExternalPotential::from_regular(random_smooth(grid, bc, 3, 4.0, rng));
        if rng.gen_bool(0.5) {
            v = random_delta(v, rng)?;
        }
        let w = if rng.gen_bool(0.5) {
            Interaction::cosine(&grid, 1, rng.gen_range(0.25..1.0))?
        } else {
            Interaction::Zero
        };
        let rho = forward(&v, &w, &basis, n)?;
        let report = classify_density(&rho, bc);
        margin = margin.min(report.min_value / n as f64);
        integral_err = integral_err.max((report.integral - n as f64).abs() / n as f64);
        failures += usize::from(!report.in_dn);
    }
    Ok(vec![
        Check::above("min_density_over_n", margin, POSITIVITY_THRESHOLD),
        Check::at_most("integral_error_over_n", integral_err, 1e-8),
        Check::at_most("classification_failures", failures as f64, 0.0),
    ])
}

fn k_operator(grid: Grid, rng: &mut impl Rng) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();

    let plane = build_basis(BoundaryCondition::Periodic, grid, 3)?;
    let system = ManyBodySystem::new(plane, Interaction::Zero, 3)?;
    let psi = WaveFunction::determinant(system, &[0, 1, 2])?;
    let one = KOperator::new(&psi)?.apply(&GridFunction::constant(grid, 1.0))?;
    let err = one.axpby(1.0, &GridFunction::constant(grid, 2.0), -1.0)?.sup_norm();
    checks.push(Check::at_most("uniform_k1_error", err, 1e-6));

    for (i, (bc, k, n)) in [
        (BoundaryCondition::Neumann, 8, 2),
        (BoundaryCondition::Periodic, 7, 3),
        (BoundaryCondition::AntiPeriodic, 6, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let basis = build_basis(bc, grid, k)?;
        let w = Interaction::cosine(&grid, 1, rng.gen_range(0.25..1.0))?;
        let v = ExternalPotential::from_regular(random_smooth(grid, bc, 2, 2.0, rng));
        let gs = ground_state(&assemble_hn(&v, &w, &basis, n)?)?;
        let rho = density(&gs.psi);
        let marginal = pair_density(&gs.psi)?.marginal();
        let dev = marginal.axpby(1.0, rho.rho(), -(n as f64 - 1.0))?.sup_norm();
        checks.push(Check::at_most(format!("marginal_error[{i},{bc}]"), dev, 1e-8));

        // H(v + c) shares the ground state of H(v); pair both against K.
        let c = rng.gen_range(-3.0..3.0);
        let shifted = v.clone().with_constant(v.constant() + c);
        let gs2 = ground_state(&assemble_hn(&shifted, &w, &basis, n)?)?;
        let overlap = gs.psi.coeffs().dot(gs2.psi.coeffs()).abs();
        checks.push(Check::at_most(format!("shared_state_defect[{i},{bc}]"), 1.0 - overlap, 1e-10));
        let kop = KOperator::new(&gs.psi)?;
        let diff = v.combine(1.0, &shifted, -1.0)?;
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let f = random_smooth(grid, BoundaryCondition::Neumann, 4, 1.0, rng).axpby(1.0, &GridFunction::constant(grid, 0.5), 1.0)?;
            let lhs = diff.pair(&f.axpby(1.0, &kop.apply(&f)?, 1.0)?)?;
            let rhs = (gs.energy - gs2.energy) * fermi1d::integrate(&f);
            worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
        }
        checks.push(Check::at_most(format!("shared_state_identity[{i},{bc}]"), worst, 1e-8));
    }
    Ok(checks)
}
