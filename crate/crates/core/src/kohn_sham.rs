//! Exact density functionals and the exact-xc Kohn–Sham loop.
//!
//! `F_LL` and `T_KS` are evaluated as dual values of an inversion with the
//! interacting and the non-interacting model on the same spectral basis;
//! `v_xc = v_KS − v_H − v_int`. Kohn–Sham orbitals solve the one-body
//! Galerkin problem in that basis, which is the `N = 1` case of the
//! many-body model.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::grid::{
    integrate, l2_norm, pair_external, BoundaryCondition, Density, ExternalPotential, GridFunction, Interaction,
    TwoPointFunction,
};
use crate::inversion::{invert, InversionProblem, InversionResult, SearchSpace};
use crate::many_body::{ManyBodySystem, SpectralBasis};
use crate::representability::classify_density;
use crate::single_particle::sorted_symmetric_eigen;
use crate::{Error, Result, GAP_TOL};

/// Inversion tolerance used inside the functionals.
pub const XC_GRAD_TOL: f64 = 1e-8;

/// Interacting and non-interacting models sharing one basis and search space.
#[derive(Clone, Debug)]
pub struct Functionals {
    interacting: Arc<ManyBodySystem>,
    free: Arc<ManyBodySystem>,
    space: SearchSpace,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Functionals {
    pub fn new(basis: SpectralBasis, w: Interaction, n_particles: usize, search_dim: Option<usize>) -> Result<Self> {
        let space = SearchSpace::new(&basis, search_dim)?;
        let free = ManyBodySystem::new(basis.clone(), Interaction::Zero, n_particles)?;
        let interacting = if w.is_zero() {
            Arc::clone(&free)
        } else {
            ManyBodySystem::new(basis, w, n_particles)?
        };
        Ok(Self {
            interacting,
            free,
            space,
            grad_tol: XC_GRAD_TOL,
            max_iters: 200,
        })
    }

    /// Default search space of `K − 1` smooth directions.
    pub fn with_default_space(basis: SpectralBasis, w: Interaction, n_particles: usize) -> Result<Self> {
        let d = basis.size().saturating_sub(1).max(1);
        Self::new(basis, w, n_particles, Some(d))
    }

    pub fn basis(&self) -> &SpectralBasis {
        self.free.basis()
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.free.bc()
    }

    pub fn interaction(&self) -> &Interaction {
        self.interacting.interaction()
    }

    pub fn n_particles(&self) -> usize {
        self.free.n_particles()
    }

    fn check(&self, rho: &Density) -> Result<()> {
        if rho.particle_count() != self.n_particles() {
            return Err(Error::InvalidInput(format!(
                "density has {} particles, functionals built for {}",
                rho.particle_count(),
                self.n_particles()
            )));
        }
        let report = classify_density(rho, self.bc());
        if !report.admissible(self.bc()) {
            return Err(Error::NotRepresentable(format!(
                "density fails the {} class (min {:e})",
                self.bc(),
                report.min_value
            )));
        }
        Ok(())
    }

    fn dual(&self, rho: &Density, system: &Arc<ManyBodySystem>) -> Result<InversionResult> {
        self.check(rho)?;
        let mut prob = InversionProblem::from_parts(rho.clone(), Arc::clone(system), self.space.clone());
        prob.grad_tol = self.grad_tol;
        prob.max_iters = self.max_iters;
        let r = invert(&prob, None)?;
        if !r.converged {
            return Err(Error::InversionFailed(format!(
                "residual {:e} after {} iterations",
                r.final_residual(),
                r.iterations
            )));
        }
        Ok(r)
    }

    /// `F_LL(ρ; w) = λ₁(v_int, w) − v_int(ρ)` with `v_int` the inverted potential.
    pub fn f_ll(&self, rho: &Density) -> Result<(f64, InversionResult)> {
        let r = self.dual(rho, &self.interacting)?;
        Ok((r.dual_value, r))
    }

    /// `T_KS(ρ) = F_LL(ρ; 0)`.
    pub fn t_ks(&self, rho: &Density) -> Result<(f64, InversionResult)> {
        let r = self.dual(rho, &self.free)?;
        Ok((r.dual_value, r))
    }

    /// All four functionals at `rho`; the two inversions run concurrently.
    pub fn evaluate(&self, rho: &Density) -> Result<FunctionalValue> {
        let w = self.interaction();
        if w.is_zero() {
            let (t, r) = self.t_ks(rho)?;
            return Ok(FunctionalValue {
                f_ll: t,
                t_ks: t,
                e_h: 0.0,
                e_xc: 0.0,
                v_int: r.v.clone(),
                v_ks: r.v.clone(),
                interacting: r.clone(),
                non_interacting: r,
            });
        }
        let (fi, ks) = rayon::join(|| self.f_ll(rho), || self.t_ks(rho));
        let ((f, ri), (t, rk)) = (fi?, ks?);
        let eh = e_h(rho, w)?;
        Ok(FunctionalValue {
            f_ll: f,
            t_ks: t,
            e_h: eh,
            e_xc: f - t - eh,
            v_int: ri.v.clone(),
            v_ks: rk.v.clone(),
            interacting: ri,
            non_interacting: rk,
        })
    }

    /// `v_xc = v_KS − v_H − v_int`, zero mean.
    pub fn v_xc(&self, rho: &Density) -> Result<GridFunction> {
        self.evaluate(rho)?.v_xc(rho, self.interaction())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionalValue {
    pub f_ll: f64,
    pub t_ks: f64,
    pub e_h: f64,
    pub e_xc: f64,
    pub v_int: ExternalPotential,
    pub v_ks: ExternalPotential,
    pub interacting: InversionResult,
    pub non_interacting: InversionResult,
}

impl FunctionalValue {
    pub fn v_xc(&self, rho: &Density, w: &Interaction) -> Result<GridFunction> {
        if w.is_zero() {
            return Ok(GridFunction::zeros(*rho.grid()));
        }
        let vh = v_h(rho, w)?;
        Ok(self
            .v_ks
            .regular()
            .axpby(1.0, &vh, -1.0)?
            .axpby(1.0, self.v_int.regular(), -1.0)?
            .zero_mean())
    }
}

/// `E_H(ρ; w) = w(ρ ⊗ ρ)`.
pub fn e_h(rho: &Density, w: &Interaction) -> Result<f64> {
    if w.is_zero() {
        return Ok(0.0);
    }
    w.pair(&TwoPointFunction::tensor(rho.rho(), rho.rho())?)
}

/// `v_H(x) = ∫ [w(x,y) + w(y,x)] ρ(y) dy`.
pub fn v_h(rho: &Density, w: &Interaction) -> Result<GridFunction> {
    let grid = *rho.grid();
    if w.is_zero() {
        return Ok(GridFunction::zeros(grid));
    }
    let k = w.kernel_matrix(&grid)?;
    let sym = &k + k.transpose();
    let weights = grid.weights();
    let wr = nalgebra::DVector::from_iterator(
        weights.len(),
        rho.rho().values().iter().zip(&weights).map(|(r, wb)| r * wb),
    );
    GridFunction::new(grid, (sym * wr).iter().copied().collect())
}

/// Occupied orbitals of a one-body potential in the spectral basis.
#[derive(Clone, Debug)]
pub struct OrbitalSolution {
    /// All `K` orbital energies, ascending.
    pub eigenvalues: Vec<f64>,
    pub orbitals: Vec<GridFunction>,
    pub density: Density,
}

/// Fills the `n` lowest orbitals of `−Δ + v` restricted to the basis.
pub fn occupy_lowest(basis: &SpectralBasis, v: &ExternalPotential, n: usize) -> Result<OrbitalSolution> {
    if n == 0 || n > basis.size() {
        return Err(Error::InvalidInput(format!("cannot occupy {n} of {} orbitals", basis.size())));
    }
    let t = basis.one_body_matrix(v)?;
    let (eigenvalues, mut vecs) = sorted_symmetric_eigen(t);
    crate::single_particle::fix_signs(&mut vecs);
    let occ = vecs.columns(0, n).into_owned();
    let orbitals = (0..n).map(|j| basis.combine(&occ.column(j).into_owned())).collect();
    let gamma: DMatrix<f64> = &occ * occ.transpose();
    let rho = basis.quadratic_density(&gamma).map(|x: f64| x.max(0.0));
    Ok(OrbitalSolution {
        eigenvalues,
        orbitals,
        density: Density::normalized(rho, n)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Aufbau {
    /// Strict gap between the highest occupied and lowest unoccupied orbital.
    Ok,
    /// Fermi level degenerate within [`GAP_TOL`].
    Indeterminate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScfOptions {
    pub mixing: f64,
    pub max_iters: usize,
    /// Tolerance on the L² density residual.
    pub tol: f64,
}

impl Default for ScfOptions {
    fn default() -> Self {
        Self {
            mixing: 0.5,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScfStep {
    pub iteration: usize,
    pub residual: f64,
    /// `F_LL(ρ_k) + v(ρ_k)`.
    pub energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KsResult {
    pub orbitals: Vec<GridFunction>,
    pub orbital_eigenvalues: Vec<f64>,
    pub density: Density,
    pub v_xc: GridFunction,
    pub v_h: GridFunction,
    pub scf_residuals: Vec<f64>,
    pub trace: Vec<ScfStep>,
    pub converged: bool,
    pub aufbau: Aufbau,
    /// `T_KS + E_H + E_xc + v(ρ)` at the final density.
    pub total_energy: f64,
}

impl KsResult {
    pub fn aufbau_ok(&self) -> bool {
        self.aufbau == Aufbau::Ok
    }

    /// `iteration,residual,energy` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,residual,energy\n");
        for s in &self.trace {
            out.push_str(&format!("{},{:.12e},{:.12}\n", s.iteration, s.residual, s.energy));
        }
        out
    }
}

/// Exact-xc Kohn–Sham self-consistency with linear density mixing, started
/// from the non-interacting density of `v`.
pub fn ks_scf(v: &ExternalPotential, functionals: &Functionals, opts: ScfOptions) -> Result<KsResult> {
    if !(opts.mixing > 0.0 && opts.mixing <= 1.0) {
        return Err(Error::InvalidInput(format!("mixing {} must lie in (0, 1]", opts.mixing)));
    }
    let basis = functionals.basis();
    let n = functionals.n_particles();
    let w = functionals.interaction().clone();
    let mut rho = occupy_lowest(basis, v, n)?.density;
    let mut residuals = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;

    let mut last = None;
    for k in 0..opts.max_iters.max(1) {
        let (vh, vxc, energy) = if w.is_zero() {
            let grid = *rho.grid();
            (GridFunction::zeros(grid), GridFunction::zeros(grid), f64::NAN)
        } else {
            let fv = functionals.evaluate(&rho).map_err(|e| {
                Error::InversionFailed(format!(
                    "SCF iteration {k} (residuals so far {residuals:?}, density min {:e}): {e}",
                    rho.rho().min_value()
                ))
            })?;
            let vh = v_h(&rho, &w)?;
            let vxc = fv.v_xc(&rho, &w)?;
            (vh, vxc, fv.f_ll + pair_external(v, rho.rho())?)
        };
        let v_eff = v.add_regular(&vh, 1.0)?.add_regular(&vxc, 1.0)?;
        let out = occupy_lowest(basis, &v_eff, n)?;
        let residual = l2_norm(&out.density.rho().axpby(1.0, rho.rho(), -1.0)?);
        residuals.push(residual);
        trace.push(ScfStep {
            iteration: k,
            residual,
            energy,
        });
        if residual <= opts.tol {
            converged = true;
            rho = out.density.clone();
            last = Some((out, vh, vxc));
            break;
        }
        rho = rho.mix(&out.density, opts.mixing)?;
        last = Some((out, vh, vxc));
    }
    let (out, vh, vxc) = last.expect("at least one iteration");

    let total_energy = if w.is_zero() {
        let (t, _) = functionals.t_ks(&rho)?;
        t + pair_external(v, rho.rho())?
    } else {
        let fv = functionals.evaluate(&rho)?;
        fv.t_ks + fv.e_h + fv.e_xc + pair_external(v, rho.rho())?
    };
    let aufbau = match out.eigenvalues.get(n) {
        Some(&next) if next - out.eigenvalues[n - 1] < GAP_TOL * next.abs().max(1.0) => Aufbau::Indeterminate,
        _ => Aufbau::Ok,
    };
    Ok(KsResult {
        orbitals: out.orbitals,
        orbital_eigenvalues: out.eigenvalues,
        density: rho,
        v_xc: vxc,
        v_h: vh,
        scf_residuals: residuals,
        trace,
        converged,
        aufbau,
        total_energy,
    })
}

/// `∫ f g`, a convenience for Gateaux checks.
pub fn pairing(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    Ok(integrate(&f.conj_mul(g)?))
}
