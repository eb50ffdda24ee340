//! Command implementations behind the `fermi1d` binary.
//!
//! Every command takes a validated [`RunConfig`] and returns an [`Output`]:
//! a JSON document, an optional `(x, value…)` CSV table, warnings for
//! stderr, and whether the numerics converged.

pub mod config;
pub mod verify;

use std::f64::consts::PI;

use fermi1d::inversion::{invert, InversionProblem};
use fermi1d::kohn_sham::{ks_scf, Functionals, ScfOptions};
use fermi1d::many_body::{assemble_hn, build_basis, density, pair_density, SpectralBasis};
use fermi1d::representability::{classify_density, kinetic_bound_check, orbital_gram, slater_from_density};
use fermi1d::{Density, GridFunction};
use serde_json::{json, Value};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fermi1d::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for invalid input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        use fermi1d::Error as E;
        match self {
            CliError::Core(E::InversionFailed(_) | E::Eigensolver(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Output {
    pub json: Value,
    pub csv: Option<String>,
    pub warnings: Vec<String>,
    /// `false` maps to exit code 2.
    pub success: bool,
}

impl Output {
    fn new(json: Value, csv: Option<String>, success: bool) -> Self {
        Self {
            json,
            csv,
            warnings: Vec::new(),
            success,
        }
    }
}

/// CSV with an `x` column followed by one column per named series.
pub fn csv_table(x: &[f64], columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("x");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, xi) in x.iter().enumerate() {
        out.push_str(&format!("{xi:.12}"));
        for (_, col) in columns {
            out.push_str(&format!(",{:.12e}", col[i]));
        }
        out.push('\n');
    }
    out
}

fn basis(cfg: &RunConfig) -> Result<SpectralBasis, CliError> {
    Ok(build_basis(cfg.bc, cfg.grid(), cfg.k)?)
}

fn header(cfg: &RunConfig, command: &str) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("n".into(), json!(cfg.n));
    m.insert("k".into(), json!(cfg.k));
    m.insert("particles".into(), json!(cfg.particles));
    m.insert("bc".into(), json!(cfg.bc));
    m
}

/// Forward many-body solve.
pub fn cmd_solve(cfg: &RunConfig) -> Result<Output, CliError> {
    let grid = cfg.grid();
    let v = cfg.potential.build(grid, "potential")?;
    let w = cfg.interaction.build(grid, "interaction")?;
    let b = basis(cfg)?;
    let problem = assemble_hn(&v, &w, &b, cfg.particles)?;
    let spectrum = problem.spectrum();
    let multiplicity = spectrum.ground_multiplicity();
    let gs = spectrum.ground_state();
    let rho = if multiplicity > 1 {
        spectrum.ground_density()
    } else {
        density(&gs.psi)
    };
    let diagonal = match pair_density(&gs.psi) {
        Ok(p) => Some(p.diagonal().into_values()),
        Err(fermi1d::Error::PairDensityUndefined) => None,
        Err(e) => return Err(e.into()),
    };
    let mut warnings = Vec::new();
    if !cfg.parity_ok() {
        warnings.push(format!(
            "{} particles under {} conditions: the ground state may be degenerate",
            cfg.particles, cfg.bc
        ));
    }
    if multiplicity > 1 {
        warnings.push(format!(
            "ground level is {multiplicity}-fold; density is the eigenspace average, pair density is for the first state"
        ));
    }
    let x = grid.nodes();
    let mut m = header(cfg, "solve");
    m.insert("energy".into(), json!(gs.energy));
    m.insert("gap".into(), json!(if gs.gap.is_finite() { Some(gs.gap) } else { None }));
    m.insert("ground_multiplicity".into(), json!(multiplicity));
    m.insert("lowest_levels".into(), json!(&spectrum.eigenvalues[..spectrum.eigenvalues.len().min(8)]));
    m.insert("x".into(), json!(x));
    m.insert("density".into(), json!(rho.rho().values()));
    m.insert("pair_density_diagonal".into(), json!(diagonal));
    let mut cols: Vec<(&str, &[f64])> = vec![("density", rho.rho().values())];
    if let Some(d) = &diagonal {
        cols.push(("pair_density_diagonal", d));
    }
    let csv = csv_table(&x, &cols);
    let mut out = Output::new(Value::Object(m), Some(csv), true);
    out.warnings = warnings;
    Ok(out)
}

fn inversion_problem(cfg: &RunConfig, b: SpectralBasis, target: Density) -> Result<InversionProblem, CliError> {
    let w = cfg.interaction.build(cfg.grid(), "interaction")?;
    let mut prob = InversionProblem::with_search_dim(target, w, cfg.bc, b, cfg.search.dim(cfg.k))?;
    if let Some(t) = cfg.tolerances.grad_tol {
        prob.grad_tol = t;
    }
    if let Some(m) = cfg.tolerances.max_iters {
        prob.max_iters = m;
    }
    Ok(prob)
}

/// Density-to-potential inversion of `target`.
pub fn cmd_invert(cfg: &RunConfig) -> Result<Output, CliError> {
    let warning = cfg.enforce_parity()?;
    let b = basis(cfg)?;
    let target = cfg.target_density(&b)?;
    let prob = inversion_problem(cfg, b, target.clone())?;
    let r = invert(&prob, None)?;
    let x = cfg.grid().nodes();
    let v = r.v.regular().zero_mean();
    let mut m = header(cfg, "invert");
    m.insert("converged".into(), json!(r.converged));
    m.insert("final_residual".into(), json!(r.final_residual()));
    m.insert("x".into(), json!(x));
    m.insert("target_density".into(), json!(target.rho().values()));
    m.insert("potential_zero_mean".into(), json!(v.values()));
    m.insert("result".into(), serde_json::to_value(&r).expect("serializable"));
    let csv = csv_table(&x, &[("potential", v.values()), ("target_density", target.rho().values())]);
    let mut out = Output::new(Value::Object(m), Some(csv), r.converged);
    out.warnings.extend(warning);
    Ok(out)
}

fn functionals(cfg: &RunConfig, b: SpectralBasis) -> Result<Functionals, CliError> {
    let w = cfg.interaction.build(cfg.grid(), "interaction")?;
    let mut f = Functionals::new(b, w, cfg.particles, cfg.search.dim(cfg.k))?;
    if let Some(t) = cfg.tolerances.grad_tol {
        f.grad_tol = t;
    }
    if let Some(m) = cfg.tolerances.max_iters {
        f.max_iters = m;
    }
    Ok(f)
}

/// `F_LL`, `T_KS`, `E_H`, `E_xc` and the potentials at `target`.
pub fn cmd_fll(cfg: &RunConfig) -> Result<Output, CliError> {
    let warning = cfg.enforce_parity()?;
    let b = basis(cfg)?;
    let target = cfg.target_density(&b)?;
    let f = functionals(cfg, b)?;
    let value = f.evaluate(&target)?;
    let v_xc = value.v_xc(&target, f.interaction())?;
    let x = cfg.grid().nodes();
    let v_int = value.v_int.regular().zero_mean();
    let v_ks = value.v_ks.regular().zero_mean();
    let mut m = header(cfg, "fll");
    m.insert("f_ll".into(), json!(value.f_ll));
    m.insert("t_ks".into(), json!(value.t_ks));
    m.insert("e_h".into(), json!(value.e_h));
    m.insert("e_xc".into(), json!(value.e_xc));
    m.insert("x".into(), json!(x));
    m.insert("v_xc".into(), json!(v_xc.values()));
    m.insert("value".into(), serde_json::to_value(&value).expect("serializable"));
    let csv = csv_table(&x, &[("v_int", v_int.values()), ("v_ks", v_ks.values()), ("v_xc", v_xc.values())]);
    let mut out = Output::new(Value::Object(m), Some(csv), true);
    out.warnings.extend(warning);
    Ok(out)
}

/// Exact-xc Kohn–Sham self-consistency for the configured `potential`.
pub fn cmd_ks_scf(cfg: &RunConfig) -> Result<Output, CliError> {
    let warning = cfg.enforce_parity()?;
    let grid = cfg.grid();
    let v = cfg.potential.build(grid, "potential")?;
    let f = functionals(cfg, basis(cfg)?)?;
    let mut opts = ScfOptions {
        mixing: cfg.mixing,
        ..ScfOptions::default()
    };
    if let Some(t) = cfg.tolerances.scf_tol {
        opts.tol = t;
    }
    if let Some(m) = cfg.tolerances.max_iters {
        opts.max_iters = m;
    }
    let r = ks_scf(&v, &f, opts)?;
    let x = grid.nodes();
    let mut m = header(cfg, "ks-scf");
    m.insert("converged".into(), json!(r.converged));
    m.insert("iterations".into(), json!(r.scf_residuals.len()));
    m.insert("aufbau_ok".into(), json!(r.aufbau_ok()));
    m.insert("total_energy".into(), json!(r.total_energy));
    m.insert("x".into(), json!(x));
    m.insert("density".into(), json!(r.density.rho().values()));
    m.insert("result".into(), serde_json::to_value(&r).expect("serializable"));
    let csv = csv_table(
        &x,
        &[("density", r.density.rho().values()), ("v_h", r.v_h.values()), ("v_xc", r.v_xc.values())],
    );
    let mut out = Output::new(Value::Object(m), Some(csv), r.converged);
    out.warnings.extend(warning);
    if !r.aufbau_ok() {
        out.warnings.push("Fermi level is degenerate; aufbau is indeterminate".into());
    }
    Ok(out)
}

/// Classification of `target` and its Slater-determinant construction.
pub fn cmd_density_to_slater(cfg: &RunConfig) -> Result<Output, CliError> {
    let b = basis(cfg)?;
    let target = cfg.target_density(&b)?;
    let report = classify_density(&target, cfg.bc);
    if !report.in_rn {
        return Err(CliError::Config(format!(
            "target is not in the finite-kinetic-energy class (min {:e}, integral {})",
            report.min_value, report.integral
        )));
    }
    let orbitals = slater_from_density(&target, cfg.bc)?;
    let gram = orbital_gram(&target, cfg.bc);
    let gram_defect = gram
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, z)| (z - if i == j { 1.0 } else { 0.0 }).norm()))
        .fold(0.0f64, f64::max);
    let bound = kinetic_bound_check(&target, cfg.bc)?;
    let grid = cfg.grid();
    let mut built = vec![0.0; grid.n_nodes()];
    for phi in &orbitals {
        for (a, z) in built.iter_mut().zip(phi.values()) {
            *a += z.norm_sqr();
        }
    }
    let built = GridFunction::new(grid, built)?;
    let rel_l1 = fermi1d::integrate(&built.axpby(1.0, target.rho(), -1.0)?.map(|v: f64| v.abs()))
        / cfg.particles as f64;
    let x = grid.nodes();
    let mut m = header(cfg, "density-to-slater");
    m.insert("report".into(), serde_json::to_value(&report).expect("serializable"));
    m.insert("gram_defect".into(), json!(gram_defect));
    m.insert("density_rel_l1".into(), json!(rel_l1));
    m.insert("kinetic".into(), serde_json::to_value(bound).expect("serializable"));
    m.insert("kinetic_ratio".into(), json!(bound.ratio()));
    m.insert("x".into(), json!(x));
    m.insert(
        "orbitals".into(),
        json!(orbitals
            .iter()
            .map(|phi| json!({
                "re": phi.values().iter().map(|z| z.re).collect::<Vec<_>>(),
                "im": phi.values().iter().map(|z| z.im).collect::<Vec<_>>(),
            }))
            .collect::<Vec<_>>()),
    );
    let csv = csv_table(&x, &[("target", target.rho().values()), ("slater_density", built.values())]);
    let mut out = Output::new(Value::Object(m), Some(csv), true);
    if !report.admissible(cfg.bc) {
        out.warnings.push(format!(
            "target is not strictly positive (min {:e}); it cannot be a ground-state density under {}",
            report.min_value, cfg.bc
        ));
    }
    Ok(out)
}

/// `√2·cos(πx)` normalized eigenfunction used by the anti-periodic example.
pub(crate) fn sqrt2_cos(x: f64) -> f64 {
    2f64.sqrt() * (PI * x).cos()
}
