//! Density-to-potential inversion by maximizing the concave dual
//! `D(v) = λ₁(v, w) − v(ρ_target)`.
//!
//! In the Galerkin model a nodal potential enters only through the matrix
//! `Σ_a w_a v_a φ_i(x_a) φ_j(x_a)`, so the natural unknowns live in the
//! zero-mean span of mode products. The search space keeps the smoothest
//! `d` directions of that span (by Dirichlet energy), which makes the dual
//! strictly concave for generic targets; `d = None` keeps the whole span.
//!
//! The ascent uses the exact Hessian of `λ₁` from second-order perturbation
//! theory, `∂²λ₁ = −2 Σ_{n>0} ⟨n|Q_m|0⟩⟨n|Q_m′|0⟩ / (E_n − E_0)`, inverted on its
//! numerical range, with Armijo backtracking.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{integrate, l2_norm, BoundaryCondition, Density, ExternalPotential, Grid, GridFunction, Interaction};
use crate::many_body::{ManyBodySystem, SpectralBasis, Spectrum};
use crate::representability::classify_density;
use crate::single_particle::{clusters, sorted_symmetric_eigen};
use crate::{Error, Result, GAP_TOL};

/// Trapezoid-orthonormal, zero-mean potential directions.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    grid: Grid,
    directions: DMatrix<f64>,
    energies: Vec<f64>,
    complete: bool,
}

impl SearchSpace {
    /// The `d` smoothest zero-mean directions in the span of mode products,
    /// extended to complete any degenerate cluster; `None` keeps them all.
    pub fn new(basis: &SpectralBasis, d: Option<usize>) -> Result<Self> {
        let grid = *basis.grid();
        let k = basis.size();
        let n = grid.n_nodes();
        let w = grid.weights();
        let phi = basis.mode_matrix();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
        let mut p = DMatrix::from_fn(n, pairs.len(), |a, c| phi[(a, pairs[c].0)] * phi[(a, pairs[c].1)]);
        for mut col in p.column_iter_mut() {
            let mean: f64 = col.iter().zip(&w).map(|(v, wa)| v * wa).sum();
            col.add_scalar_mut(-mean);
        }
        let gram = weighted_gram(&p, &w);
        let (vals, vecs) = sorted_symmetric_eigen(gram);
        let top = vals.last().copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-10 * top).collect();
        if keep.is_empty() {
            return Err(Error::InvalidInput("basis has no zero-mean potential directions".into()));
        }
        let mut q = DMatrix::zeros(n, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            q.set_column(c, &(&p * vecs.column(i) / vals[i].sqrt()));
        }
        // sort by Dirichlet energy within the span
        let stiff = dirichlet_gram(&q, grid.h());
        let (energies, rot) = sorted_symmetric_eigen(stiff);
        let mut directions = &q * rot;
        // one more Gram–Schmidt pass in the trapezoid inner product
        for c in 0..directions.ncols() {
            for prev in 0..c {
                let proj: f64 = (0..n).map(|a| w[a] * directions[(a, c)] * directions[(a, prev)]).sum();
                let col = directions.column(prev).into_owned();
                directions.column_mut(c).axpy(-proj, &col, 1.0);
            }
            let norm: f64 = (0..n).map(|a| w[a] * directions[(a, c)].powi(2)).sum::<f64>().sqrt();
            directions.column_mut(c).scale_mut(1.0 / norm);
        }
        crate::single_particle::fix_signs(&mut directions);

        let total = directions.ncols();
        let dim = match d {
            None => total,
            Some(0) => return Err(Error::InvalidInput("search dimension must be positive".into())),
            Some(d) => {
                let d = d.min(total);
                clusters(&energies, 1e-6)
                    .into_iter()
                    .find(|r| r.contains(&(d - 1)))
                    .map_or(d, |r| r.end)
            }
        };
        Ok(Self {
            grid,
            directions: directions.columns(0, dim).into_owned(),
            energies: energies[..dim].to_vec(),
            complete: dim == total,
        })
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    /// Whether every zero-mean product direction is kept.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Dirichlet energies `‖q_m′‖²` of the directions, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn direction(&self, m: usize) -> GridFunction {
        GridFunction::new(self.grid, self.directions.column(m).iter().copied().collect())
            .expect("direction length matches grid")
    }

    /// Coefficients `∫ q_m f`; constants map to zero.
    pub fn project(&self, f: &GridFunction) -> DVector<f64> {
        let w = self.grid.weights();
        let wf = DVector::from_iterator(w.len(), f.values().iter().zip(&w).map(|(v, wa)| v * wa));
        self.directions.transpose() * wf
    }

    pub fn expand(&self, c: &DVector<f64>) -> GridFunction {
        GridFunction::new(self.grid, (&self.directions * c).iter().copied().collect())
            .expect("direction length matches grid")
    }
}

fn weighted_gram(p: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = p.clone();
    for (mut row, &wa) in scaled.row_iter_mut().zip(w) {
        row *= wa;
    }
    let g = p.transpose() * scaled;
    (&g + g.transpose()) * 0.5
}

fn dirichlet_gram(q: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let diff = DMatrix::from_fn(n - 1, q.ncols(), |a, c| q[(a + 1, c)] - q[(a, c)]);
    let g = diff.transpose() * diff / h;
    (&g + g.transpose()) * 0.5
}

/// Target density, interaction and discretization of one inversion.
#[derive(Clone, Debug)]
pub struct InversionProblem {
    target: Density,
    system: Arc<ManyBodySystem>,
    space: SearchSpace,
    pub max_iters: usize,
    /// Tolerance on the L² norm of the projected density residual.
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl InversionProblem {
    pub const DEFAULT_GRAD_TOL: f64 = 1e-7;

    /// Checks the target against the class of ground-state densities for `bc`
    /// and uses the default search space of `K − 1` directions.
    pub fn new(target: Density, w: Interaction, bc: BoundaryCondition, basis: SpectralBasis) -> Result<Self> {
        let d = basis.size().saturating_sub(1).max(1);
        Self::with_search_dim(target, w, bc, basis, Some(d))
    }

    pub fn with_search_dim(
        target: Density,
        w: Interaction,
        bc: BoundaryCondition,
        basis: SpectralBasis,
        d: Option<usize>,
    ) -> Result<Self> {
        if basis.bc() != bc {
            return Err(Error::InvalidInput(format!(
                "basis built for {} but problem uses {bc}",
                basis.bc()
            )));
        }
        if basis.grid() != target.grid() {
            return Err(Error::GridMismatch {
                left: basis.grid().n_cells(),
                right: target.grid().n_cells(),
            });
        }
        let report = classify_density(&target, bc);
        if !report.admissible(bc) {
            return Err(Error::NotRepresentable(format!(
                "target fails the {bc} density class (min {:e}, integral {}, endpoint match {})",
                report.min_value, report.integral, report.endpoint_match
            )));
        }
        let space = SearchSpace::new(&basis, d)?;
        let system = ManyBodySystem::new(basis, w, target.particle_count())?;
        Ok(Self::from_parts(target, system, space))
    }

    /// Reuses an assembled system; the target is not re-classified.
    pub fn from_parts(target: Density, system: Arc<ManyBodySystem>, space: SearchSpace) -> Self {
        Self {
            target,
            system,
            space,
            max_iters: 200,
            grad_tol: Self::DEFAULT_GRAD_TOL,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }

    pub fn target(&self) -> &Density {
        &self.target
    }

    pub fn system(&self) -> &Arc<ManyBodySystem> {
        &self.system
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.system.bc()
    }

    fn forward(&self, v: &GridFunction) -> Result<Spectrum> {
        Ok(self.system.problem(&ExternalPotential::from_regular(v.clone()))?.spectrum())
    }

    fn evaluate(&self, c: &DVector<f64>) -> Result<Evaluation> {
        let v = self.space.expand(c);
        let spectrum = self.forward(&v)?;
        let lambda1 = spectrum.eigenvalues[0];
        let density = spectrum.ground_density();
        let value = lambda1 - integrate(&v.conj_mul(self.target.rho())?);
        let diff = density.rho().axpby(1.0, self.target.rho(), -1.0)?;
        let gradient = self.space.project(&diff);
        let full_residual = l2_norm(&diff);
        Ok(Evaluation {
            residual: if self.space.complete { full_residual.max(gradient.norm()) } else { gradient.norm() },
            value,
            lambda1,
            gradient,
            full_residual,
            spectrum,
        })
    }

    /// `∂²λ₁/∂c_m∂c_m′`, or `None` when the ground state is degenerate.
    fn hessian(&self, spectrum: &Spectrum) -> Option<DMatrix<f64>> {
        let e = &spectrum.eigenvalues;
        if e.len() < 2 {
            return Some(DMatrix::zeros(self.space.dim(), self.space.dim()));
        }
        if e[1] - e[0] < GAP_TOL {
            return None;
        }
        let c0 = spectrum.eigenvectors.column(0).into_owned();
        let basis = self.system.basis();
        let w = self.space.grid.weights();
        let dim = self.space.dim();
        let columns: Vec<DVector<f64>> = (0..dim)
            .into_par_iter()
            .map(|m| {
                let q = self.space.directions.column(m);
                let d: Vec<f64> = q.iter().zip(&w).map(|(v, wa)| v * wa).collect();
                let o = basis.weighted_gram(&d);
                spectrum.eigenvectors.transpose() * self.system.apply_one_body(&o, &c0)
            })
            .collect();
        let mut b = DMatrix::zeros(e.len() - 1, dim);
        for (m, col) in columns.iter().enumerate() {
            for n in 1..e.len() {
                b[(n - 1, m)] = col[n] / (e[n] - e[0]).sqrt();
            }
        }
        Some(b.transpose() * b * -2.0)
    }
}

impl Evaluation {
    fn spectral_scale(&self) -> f64 {
        let e = &self.spectrum.eigenvalues;
        e[0].abs().max(e[e.len() - 1].abs())
    }
}

struct Evaluation {
    /// Convergence measure: the projected residual, or the full one when the
    /// search space is complete.
    residual: f64,
    value: f64,
    lambda1: f64,
    gradient: DVector<f64>,
    full_residual: f64,
    spectrum: Spectrum,
}

#[derive(Clone, Debug, Serialize)]
pub struct InversionResult {
    /// Zero-mean regular potential; no deltas, constant 0.
    pub v: ExternalPotential,
    pub lambda1: f64,
    /// Final dual value `λ₁(v) − v(ρ_target)`.
    pub dual_value: f64,
    /// L² norms of the density residual projected on the search space
    /// (unprojected when the space is complete).
    pub residual_history: Vec<f64>,
    pub dual_history: Vec<f64>,
    /// L² norm of the unprojected residual `ρ_v − ρ_target`.
    pub full_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub search_dim: usize,
}

impl InversionResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `iteration,residual,dual` rows.
    pub fn residual_csv(&self) -> String {
        let mut out = String::from("iteration,residual,dual\n");
        for (i, (r, d)) in self.residual_history.iter().zip(&self.dual_history).enumerate() {
            out.push_str(&format!("{i},{r:.12e},{d:.12}\n"));
        }
        out
    }
}

/// `λ₁(v, w) − v(ρ_target)` and the zero-mean supergradient `ρ_v − ρ_target`.
pub fn dual_objective(v: &GridFunction, prob: &InversionProblem) -> Result<(f64, GridFunction)> {
    let spectrum = prob.forward(v)?;
    let value = spectrum.eigenvalues[0] - integrate(&v.conj_mul(prob.target.rho())?);
    let diff = spectrum.ground_density().rho().axpby(1.0, prob.target.rho(), -1.0)?;
    Ok((value, diff.zero_mean()))
}

/// Largest Levenberg-Marquardt damping, relative to the top curvature,
/// before falling back to the supergradient.
const MAX_DAMPING: f64 = 1e4;

/// Maximizes the dual from `v0` (projected on the search space; zero if absent).
pub fn invert(prob: &InversionProblem, v0: Option<&GridFunction>) -> Result<InversionResult> {
    let mut c = match v0 {
        Some(v) => {
            if v.grid() != &prob.space.grid {
                return Err(Error::GridMismatch {
                    left: v.grid().n_cells(),
                    right: prob.space.grid.n_cells(),
                });
            }
            prob.space.project(&v.zero_mean())
        }
        None => DVector::zeros(prob.space.dim()),
    };
    let mut cur = prob.evaluate(&c)?;
    let mut residual_history = vec![cur.residual];
    let mut dual_history = vec![cur.value];
    let mut iterations = 0;
    let mut converged = cur.residual <= prob.grad_tol;

    // Levenberg-Marquardt damping relative to the largest curvature; zero
    // means the plain Newton step
    let mut damping = 0.0f64;
    while !converged && iterations < prob.max_iters {
        let g = &cur.gradient;
        let slack = 64.0 * f64::EPSILON * (1.0 + cur.spectral_scale());
        // near the optimum the dual gain drops below the eigenvalue rounding
        // (relative to ‖H‖); accept a step that keeps the dual within that
        // rounding and halves the residual
        let acceptable = |next: &Evaluation, t: f64, slope: f64| {
            next.value >= cur.value + prob.armijo * t * slope
                || (next.value >= cur.value - slack && next.residual <= 0.5 * cur.residual)
        };

        let mut accepted = None;
        if let Some(hess) = prob.hessian(&cur.spectrum) {
            let (vals, vecs) = sorted_symmetric_eigen(-hess);
            let top = vals.iter().cloned().fold(0.0, f64::max).max(1e-300);
            while damping <= MAX_DAMPING {
                let mut step = DVector::zeros(g.len());
                for (i, &mu) in vals.iter().enumerate() {
                    let d = mu.max(0.0) + damping * top;
                    if d > 1e-12 * top {
                        let u = vecs.column(i);
                        step.axpy(u.dot(g) / d, &u, 1.0);
                    }
                }
                let slope = step.dot(g);
                if slope > 0.0 {
                    let trial = &c + &step;
                    let next = prob.evaluate(&trial)?;
                    if acceptable(&next, 1.0, slope) {
                        accepted = Some((trial, next));
                        damping = if damping < 1e-9 { 0.0 } else { damping / 10.0 };
                        break;
                    }
                }
                damping = (damping * 10.0).max(1e-8);
            }
            if accepted.is_none() {
                damping = 1e-8;
            }
        }
        if accepted.is_none() {
            let slope = g.dot(g);
            let mut t = 1.0;
            for _ in 0..prob.max_backtracks {
                let trial = &c + g * t;
                let next = prob.evaluate(&trial)?;
                if acceptable(&next, t, slope) {
                    accepted = Some((trial, next));
                    break;
                }
                t *= 0.5;
            }
        }
        let Some((trial, next)) = accepted else {
            break;
        };
        c = trial;
        cur = next;
        iterations += 1;
        residual_history.push(cur.residual);
        dual_history.push(cur.value);
        converged = cur.residual <= prob.grad_tol;
    }

    Ok(InversionResult {
        v: ExternalPotential::from_regular(prob.space.expand(&c)),
        lambda1: cur.lambda1,
        dual_value: cur.value,
        residual_history,
        dual_history,
        full_residual: cur.full_residual,
        iterations,
        converged,
        search_dim: prob.space.dim(),
    })
}

/// Inverts from every seed and returns the largest pairwise sup-norm
/// deviation between the recovered zero-mean potentials.
pub fn hk_uniqueness_check(prob: &InversionProblem, seeds: &[GridFunction]) -> Result<f64> {
    if seeds.len() < 2 {
        return Err(Error::InvalidInput("uniqueness check needs at least two seeds".into()));
    }
    let results: Vec<Result<InversionResult>> = seeds.par_iter().map(|s| invert(prob, Some(s))).collect();
    let mut potentials = Vec::with_capacity(seeds.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) if r.converged => potentials.push(r.v.regular().zero_mean()),
            Ok(r) => failures.push(format!("seed {i}: residual {:e} after {} iterations", r.final_residual(), r.iterations)),
            Err(e) => failures.push(format!("seed {i}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::InversionFailed(failures.join("; ")));
    }
    let mut worst = 0.0f64;
    for i in 0..potentials.len() {
        for j in i + 1..potentials.len() {
            worst = worst.max(potentials[i].axpby(1.0, &potentials[j], -1.0)?.sup_norm());
        }
    }
    Ok(worst)
}
