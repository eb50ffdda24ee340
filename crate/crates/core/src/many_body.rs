//! Galerkin model of `H_N(v, w)` on antisymmetric wave functions.
//!
//! The one-particle space is spanned by the `K` lowest free modes of the
//! chosen realization, normalized in the trapezoid inner product; the
//! `N`-particle space is spanned by all `C(K, N)` Slater determinants built
//! from them. Matrix elements follow the Slater–Condon rules with
//!
//! - one-body `t_ij = ⟨φ_i′, φ_j′⟩ + v(φ_i φ_j)`,
//! - two-body `V_ijkl = w((φ_i φ_j) ⊗ (φ_k φ_l))`, entering the Hamiltonian as
//!   `Σ V_ijkl a†_i a†_k a_l a_j` (the interaction sums over ordered pairs
//!   `i ≠ j`, so `∫∫ρ⁽²⁾ = N(N−1)`).
//!
//! Densities and pair densities are nodal collocations of the reduced
//! density matrices, which makes `∫ρ = N` and `∫ρ⁽²⁾(x,·) = (N−1)ρ(x)` exact.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::grid::{
    BoundaryCondition, Delta, Density, ExternalPotential, Grid, GridFunction, Interaction, Scalar,
    TwoPointFunction,
};
use crate::single_particle::{assemble_h, eigensolve_lowest, fix_signs, sorted_symmetric_eigen};
use crate::{Error, Result, GAP_TOL, POSITIVITY_THRESHOLD};

/// The `K` lowest free modes under a boundary condition.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    grid: Grid,
    bc: BoundaryCondition,
    /// Nodal values, one column per mode.
    modes: DMatrix<f64>,
    kinetic: DMatrix<f64>,
}

impl SpectralBasis {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn size(&self) -> usize {
        self.modes.ncols()
    }

    pub fn mode(&self, i: usize) -> GridFunction {
        GridFunction::new(self.grid, self.modes.column(i).iter().copied().collect())
            .expect("mode length matches grid")
    }

    pub fn modes(&self) -> Vec<GridFunction> {
        (0..self.size()).map(|i| self.mode(i)).collect()
    }

    /// Nodal matrix with one column per mode.
    pub fn mode_matrix(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// `⟨φ_i′, φ_j′⟩`.
    pub fn kinetic(&self) -> &DMatrix<f64> {
        &self.kinetic
    }

    /// One-body matrix `t_ij = ⟨φ_i′, φ_j′⟩ + v(φ_i φ_j)`.
    pub fn one_body_matrix(&self, v: &ExternalPotential) -> Result<DMatrix<f64>> {
        let mut t = self.kinetic.clone();
        t += self.potential_matrix(v)?;
        Ok(t)
    }

    /// `v(φ_i φ_j)`.
    pub fn potential_matrix(&self, v: &ExternalPotential) -> Result<DMatrix<f64>> {
        if v.grid() != &self.grid {
            return Err(Error::GridMismatch {
                left: v.grid().n_cells(),
                right: self.grid.n_cells(),
            });
        }
        let w = self.grid.weights();
        let c = v.constant();
        let diag: Vec<f64> = v
            .regular()
            .values()
            .iter()
            .zip(&w)
            .map(|(&va, &wa)| (va + c) * wa)
            .collect();
        let mut t = self.weighted_gram(&diag);
        for d in v.deltas() {
            let (a, wl, wr) = self.grid.locate(d.position)?;
            let k = self.size();
            for i in 0..k {
                for j in 0..k {
                    let mut val = wl * self.modes[(a, i)] * self.modes[(a, j)];
                    if wr != 0.0 {
                        val += wr * self.modes[(a + 1, i)] * self.modes[(a + 1, j)];
                    }
                    t[(i, j)] += d.weight * val;
                }
            }
        }
        Ok(t)
    }

    /// `Φᵀ diag(d) Φ`.
    pub(crate) fn weighted_gram(&self, d: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.modes.clone();
        for (mut row, &da) in scaled.row_iter_mut().zip(d) {
            row *= da;
        }
        let mut g = self.modes.transpose() * scaled;
        g = (&g + g.transpose()) * 0.5;
        g
    }

    /// Nodal function `Σ_i c_i φ_i`.
    pub fn combine(&self, coeffs: &DVector<f64>) -> GridFunction {
        GridFunction::new(self.grid, (&self.modes * coeffs).iter().copied().collect())
            .expect("mode length matches grid")
    }

    /// Nodal values of `Σ_ij m_ij φ_i φ_j`.
    pub fn quadratic_density(&self, m: &DMatrix<f64>) -> GridFunction {
        let pm = &self.modes * m;
        let values = (0..self.grid.n_nodes())
            .map(|a| pm.row(a).dot(&self.modes.row(a)))
            .collect();
        GridFunction::new(self.grid, values).expect("node count matches grid")
    }
}

/// Builds the `k` lowest free modes, orthonormal in the trapezoid inner product.
pub fn build_basis(bc: BoundaryCondition, grid: Grid, k: usize) -> Result<SpectralBasis> {
    if k == 0 {
        return Err(Error::InvalidInput("basis size must be positive".into()));
    }
    if k > 63 {
        return Err(Error::InvalidInput(format!("basis size {k} exceeds 63 modes")));
    }
    let op = assemble_h(&ExternalPotential::zero(grid), bc)?;
    if k > op.dimension() {
        return Err(Error::InvalidInput(format!(
            "basis size {k} exceeds the {} grid degrees of freedom",
            op.dimension()
        )));
    }
    let sol = eigensolve_lowest(&op, k)?;
    let n = grid.n_nodes();
    let mut modes = DMatrix::from_fn(n, k, |a, i| sol.eigenvectors[i].values()[a]);

    // Löwdin orthonormalization in the trapezoid inner product; the free
    // modes are already orthogonal there up to rounding.
    let w = grid.weights();
    let mut scaled = modes.clone();
    for (mut row, &wa) in scaled.row_iter_mut().zip(&w) {
        row *= wa;
    }
    let gram = modes.transpose() * scaled;
    let (vals, vecs) = sorted_symmetric_eigen((&gram + gram.transpose()) * 0.5);
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(k, vals.iter().map(|v| 1.0 / v.sqrt())));
    modes = &modes * (&vecs * inv_sqrt * vecs.transpose());
    fix_signs(&mut modes);

    let h = grid.h();
    let mut kinetic = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut s = 0.0;
            for a in 0..grid.n_cells() {
                s += (modes[(a + 1, i)] - modes[(a, i)]) * (modes[(a + 1, j)] - modes[(a, j)]);
            }
            kinetic[(i, j)] = s / h;
            kinetic[(j, i)] = s / h;
        }
    }
    Ok(SpectralBasis {
        grid,
        bc,
        modes,
        kinetic,
    })
}

fn occupied(det: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |i| det & (1u64 << i) != 0)
}

/// `(−1)^{#occupied orbitals below i}`.
fn parity_below(det: u64, i: usize) -> f64 {
    if (det & ((1u64 << i) - 1)).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn annihilate(det: u64, i: usize) -> Option<(u64, f64)> {
    (det & (1u64 << i) != 0).then(|| (det & !(1u64 << i), parity_below(det, i)))
}

fn create(det: u64, i: usize) -> Option<(u64, f64)> {
    (det & (1u64 << i) == 0).then(|| (det | (1u64 << i), parity_below(det, i)))
}

/// `a†_i a_j |det⟩`.
fn hop(det: u64, i: usize, j: usize) -> Option<(u64, f64)> {
    let (d1, s1) = annihilate(det, j)?;
    let (d2, s2) = create(d1, i)?;
    Some((d2, s1 * s2))
}

/// `a†_i a†_k a_l a_j |det⟩`.
fn double_hop(det: u64, i: usize, k: usize, l: usize, j: usize) -> Option<(u64, f64)> {
    let (d1, s1) = annihilate(det, j)?;
    let (d2, s2) = annihilate(d1, l)?;
    let (d3, s3) = create(d2, k)?;
    let (d4, s4) = create(d3, i)?;
    Some((d4, s1 * s2 * s3 * s4))
}

/// All `N`-subsets of `0..K` as bitmasks in lexicographic order.
fn combinations(k: usize, n: usize) -> Vec<u64> {
    fn rec(start: usize, k: usize, left: usize, acc: u64, out: &mut Vec<u64>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..=(k - left) {
            rec(i + 1, k, left - 1, acc | (1u64 << i), out);
        }
    }
    let mut out = Vec::new();
    rec(0, k, n, 0, &mut out);
    out
}

#[derive(Clone, Copy, Debug)]
struct Hop {
    from: usize,
    to: usize,
    create: usize,
    annihilate: usize,
    sign: f64,
}

/// Basis-, interaction- and particle-number-dependent part of the model.
#[derive(Debug)]
pub struct ManyBodySystem {
    basis: SpectralBasis,
    n_particles: usize,
    interaction: Interaction,
    determinants: Vec<u64>,
    hops: Vec<Hop>,
    /// `V_ijkl` flattened as `((i·K + j)·K + k)·K + l`.
    two_body: Option<Vec<f64>>,
    interaction_matrix: DMatrix<f64>,
}

impl ManyBodySystem {
    pub fn new(basis: SpectralBasis, w: Interaction, n_particles: usize) -> Result<Arc<Self>> {
        let k = basis.size();
        if n_particles == 0 {
            return Err(Error::InvalidInput("particle count must be positive".into()));
        }
        if n_particles > k {
            return Err(Error::InvalidInput(format!(
                "{n_particles} particles do not fit into {k} modes"
            )));
        }
        let determinants = combinations(k, n_particles);
        let index: HashMap<u64, usize> = determinants.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let mut hops = Vec::new();
        for (from, &det) in determinants.iter().enumerate() {
            for j in occupied(det) {
                for i in 0..k {
                    if let Some((target, sign)) = hop(det, i, j) {
                        hops.push(Hop {
                            from,
                            to: index[&target],
                            create: i,
                            annihilate: j,
                            sign,
                        });
                    }
                }
            }
        }
        let two_body = if w.is_zero() || n_particles < 2 {
            None
        } else {
            Some(two_body_integrals(&basis, &w)?)
        };
        let dim = determinants.len();
        let interaction_matrix = match &two_body {
            None => DMatrix::zeros(dim, dim),
            Some(v) => slater_condon_interaction(&determinants, k, v),
        };
        Ok(Arc::new(Self {
            basis,
            n_particles,
            interaction: w,
            determinants,
            hops,
            two_body,
            interaction_matrix,
        }))
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.basis.bc()
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn interaction(&self) -> &Interaction {
        &self.interaction
    }

    pub fn dimension(&self) -> usize {
        self.determinants.len()
    }

    /// Occupied mode indices of each determinant, in basis order.
    pub fn slater_index(&self) -> Vec<Vec<usize>> {
        self.determinants.iter().map(|&d| occupied(d).collect()).collect()
    }

    /// `V_ijkl = w((φ_i φ_j) ⊗ (φ_k φ_l))`, or `None` when `w = 0` or `N = 1`.
    pub fn two_body_integral(&self, i: usize, j: usize, k: usize, l: usize) -> Option<f64> {
        let kk = self.basis.size();
        self.two_body.as_ref().map(|v| v[((i * kk + j) * kk + k) * kk + l])
    }

    pub fn interaction_matrix(&self) -> &DMatrix<f64> {
        &self.interaction_matrix
    }

    /// Matrix of `Σ o_ij a†_i a_j` in the determinant basis.
    pub fn one_body_operator(&self, o: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dimension();
        let mut h = DMatrix::zeros(d, d);
        for hp in &self.hops {
            h[(hp.to, hp.from)] += hp.sign * o[(hp.create, hp.annihilate)];
        }
        h
    }

    /// `(Σ o_ij a†_i a_j) c`.
    pub fn apply_one_body(&self, o: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dimension());
        for hp in &self.hops {
            out[hp.to] += hp.sign * o[(hp.create, hp.annihilate)] * c[hp.from];
        }
        out
    }

    /// One-particle reduced density matrix `Γ_ij = ⟨a†_i a_j⟩`.
    pub fn one_rdm(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let k = self.basis.size();
        let mut g = DMatrix::zeros(k, k);
        for hp in &self.hops {
            g[(hp.create, hp.annihilate)] += hp.sign * c[hp.to] * c[hp.from];
        }
        g
    }

    /// Transition matrix `⟨b| a†_i a_j |a⟩`.
    pub fn transition_rdm(&self, bra: &DVector<f64>, ket: &DVector<f64>) -> DMatrix<f64> {
        let k = self.basis.size();
        let mut g = DMatrix::zeros(k, k);
        for hp in &self.hops {
            g[(hp.create, hp.annihilate)] += hp.sign * bra[hp.to] * ket[hp.from];
        }
        g
    }

    /// Two-particle reduced density matrix `⟨a†_i a†_k a_l a_j⟩` arranged as
    /// a `K² × K²` matrix indexed by `(i·K + j, k·K + l)`.
    pub fn two_rdm(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let k = self.basis.size();
        let index: HashMap<u64, usize> =
            self.determinants.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let mut r = DMatrix::zeros(k * k, k * k);
        for (from, &det) in self.determinants.iter().enumerate() {
            if c[from] == 0.0 {
                continue;
            }
            let occ: Vec<usize> = occupied(det).collect();
            for &j in &occ {
                for &l in &occ {
                    if l == j {
                        continue;
                    }
                    for i in 0..k {
                        for kk in 0..k {
                            if let Some((target, sign)) = double_hop(det, i, kk, l, j) {
                                let val = sign * c[index[&target]] * c[from];
                                r[(i * k + j, kk * k + l)] += val;
                            }
                        }
                    }
                }
            }
        }
        r
    }

    /// Builds `H_N(v, w)` for this basis, interaction and particle number.
    pub fn problem(self: &Arc<Self>, v: &ExternalPotential) -> Result<ManyBodyProblem> {
        let t = self.basis.one_body_matrix(v)?;
        let mut h = self.one_body_operator(&t);
        h += &self.interaction_matrix;
        h = (&h + h.transpose()) * 0.5;
        Ok(ManyBodyProblem {
            system: Arc::clone(self),
            one_body: t,
            hamiltonian: h,
        })
    }
}

fn two_body_integrals(basis: &SpectralBasis, w: &Interaction) -> Result<Vec<f64>> {
    let grid = basis.grid();
    let kernel = w.kernel_matrix(grid)?;
    let k = basis.size();
    let weights = grid.weights();
    let n = grid.n_nodes();
    let phi = basis.mode_matrix();
    // weighted pair products, one row per (i, j)
    let p = DMatrix::from_fn(k * k, n, |ij, a| {
        let (i, j) = (ij / k, ij % k);
        weights[a] * phi[(a, i)] * phi[(a, j)]
    });
    let v = &p * kernel * p.transpose();
    let mut out = vec![0.0; k * k * k * k];
    for ij in 0..k * k {
        for kl in 0..k * k {
            out[ij * k * k + kl] = 0.5 * (v[(ij, kl)] + v[(kl, ij)]);
        }
    }
    Ok(out)
}

/// Interaction block by the Slater–Condon rules.
fn slater_condon_interaction(dets: &[u64], k: usize, v: &[f64]) -> DMatrix<f64> {
    let at = |i: usize, j: usize, kk: usize, l: usize| v[((i * k + j) * k + kk) * k + l];
    let d = dets.len();
    let mut h = DMatrix::zeros(d, d);
    for (b, &bra) in dets.iter().enumerate() {
        for (c, &ket) in dets.iter().enumerate().skip(b) {
            let diff = bra ^ ket;
            let val = match diff.count_ones() {
                0 => {
                    let occ: Vec<usize> = occupied(bra).collect();
                    let mut s = 0.0;
                    for (x, &i) in occ.iter().enumerate() {
                        for &kk in &occ[x + 1..] {
                            s += 2.0 * (at(i, i, kk, kk) - at(i, kk, kk, i));
                        }
                    }
                    s
                }
                2 => {
                    let m = (bra & diff).trailing_zeros() as usize;
                    let p = (ket & diff).trailing_zeros() as usize;
                    let (_, sign) = hop(ket, m, p).expect("single excitation");
                    let mut s = 0.0;
                    for kk in occupied(bra & ket) {
                        s += at(m, p, kk, kk) - at(m, kk, kk, p);
                    }
                    2.0 * sign * s
                }
                4 => {
                    let mut bo = occupied(bra & diff);
                    let (m, n) = (bo.next().unwrap(), bo.next().unwrap());
                    let mut ko = occupied(ket & diff);
                    let (p, q) = (ko.next().unwrap(), ko.next().unwrap());
                    let (_, sign) = double_hop(ket, m, n, q, p).expect("double excitation");
                    2.0 * sign * (at(m, p, n, q) - at(m, q, n, p))
                }
                _ => 0.0,
            };
            h[(b, c)] = val;
            h[(c, b)] = val;
        }
    }
    h
}

/// `H_N(v, w)` in the determinant basis.
#[derive(Clone, Debug)]
pub struct ManyBodyProblem {
    system: Arc<ManyBodySystem>,
    one_body: DMatrix<f64>,
    hamiltonian: DMatrix<f64>,
}

/// Assembles `H_N(v, w)` on `basis`.
pub fn assemble_hn(
    v: &ExternalPotential,
    w: &Interaction,
    basis: &SpectralBasis,
    n_particles: usize,
) -> Result<ManyBodyProblem> {
    ManyBodySystem::new(basis.clone(), w.clone(), n_particles)?.problem(v)
}

impl ManyBodyProblem {
    pub fn system(&self) -> &Arc<ManyBodySystem> {
        &self.system
    }

    pub fn hamiltonian(&self) -> &DMatrix<f64> {
        &self.hamiltonian
    }

    pub fn one_body(&self) -> &DMatrix<f64> {
        &self.one_body
    }

    pub fn dimension(&self) -> usize {
        self.hamiltonian.nrows()
    }

    /// Full spectrum, ascending.
    pub fn spectrum(&self) -> Spectrum {
        let (eigenvalues, mut eigenvectors) = sorted_symmetric_eigen(self.hamiltonian.clone());
        fix_signs(&mut eigenvectors);
        Spectrum {
            system: Arc::clone(&self.system),
            eigenvalues,
            eigenvectors,
        }
    }
}

/// All eigenpairs of a [`ManyBodyProblem`].
#[derive(Clone, Debug)]
pub struct Spectrum {
    system: Arc<ManyBodySystem>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn state(&self, i: usize) -> WaveFunction {
        WaveFunction {
            system: Arc::clone(&self.system),
            coeffs: self.eigenvectors.column(i).into_owned(),
        }
    }

    /// Number of states within [`GAP_TOL`] of the lowest eigenvalue.
    pub fn ground_multiplicity(&self) -> usize {
        let e0 = self.eigenvalues[0];
        self.eigenvalues
            .iter()
            .take_while(|&&e| e - e0 < GAP_TOL * e0.abs().max(1.0))
            .count()
    }

    pub fn ground_state(&self) -> GroundState {
        let energy = self.eigenvalues[0];
        let gap = self.eigenvalues.get(1).map_or(f64::INFINITY, |e| e - energy);
        GroundState {
            energy,
            gap,
            psi: self.state(0),
        }
    }

    /// Density averaged over the degenerate ground eigenspace.
    pub fn ground_density(&self) -> Density {
        let m = self.ground_multiplicity();
        let mut gamma = DMatrix::zeros(self.system.basis.size(), self.system.basis.size());
        for i in 0..m {
            gamma += self.system.one_rdm(&self.eigenvectors.column(i).into_owned());
        }
        gamma /= m as f64;
        density_from_rdm(&self.system, &gamma)
    }
}

/// Normalized coefficients over the determinant basis.
#[derive(Clone, Debug)]
pub struct WaveFunction {
    system: Arc<ManyBodySystem>,
    coeffs: DVector<f64>,
}

impl WaveFunction {
    pub fn new(system: Arc<ManyBodySystem>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != system.dimension() {
            return Err(Error::InvalidInput("coefficient vector has wrong length".into()));
        }
        if (coeffs.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "wave function norm {} is not 1",
                coeffs.norm()
            )));
        }
        Ok(Self { system, coeffs })
    }

    /// Single determinant occupying the given modes.
    pub fn determinant(system: Arc<ManyBodySystem>, modes: &[usize]) -> Result<Self> {
        let det = modes.iter().fold(0u64, |acc, &i| acc | (1u64 << i));
        let pos = system
            .determinants
            .iter()
            .position(|&d| d == det)
            .ok_or_else(|| Error::InvalidInput(format!("modes {modes:?} are not a basis determinant")))?;
        let mut coeffs = DVector::zeros(system.dimension());
        coeffs[pos] = 1.0;
        Ok(Self { system, coeffs })
    }

    pub fn system(&self) -> &Arc<ManyBodySystem> {
        &self.system
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn n_particles(&self) -> usize {
        self.system.n_particles
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub gap: f64,
    pub psi: WaveFunction,
}

/// Lowest eigenpair of `H_N` together with its gap.
pub fn ground_state(p: &ManyBodyProblem) -> Result<GroundState> {
    let spectrum = p.spectrum();
    let gs = spectrum.ground_state();
    let c = &gs.psi.coeffs;
    let r = (&p.hamiltonian * c - c * gs.energy).norm();
    if r > 1e-9 * (1.0 + gs.energy.abs()) {
        return Err(Error::Eigensolver(format!("ground-state residual {r:e}")));
    }
    Ok(gs)
}

fn density_from_rdm(system: &ManyBodySystem, gamma: &DMatrix<f64>) -> Density {
    let rho = system.basis.quadratic_density(gamma).map(|v: f64| v.max(0.0));
    Density::normalized(rho, system.n_particles).expect("nonzero density of a normalized state")
}

/// `ρ(x) = Σ_ij Γ_ij φ_i(x) φ_j(x)`.
pub fn density(psi: &WaveFunction) -> Density {
    density_from_rdm(&psi.system, &psi.system.one_rdm(&psi.coeffs))
}

/// `ρ⁽²⁾(x, y) = Σ ⟨a†_i a†_k a_l a_j⟩ φ_i(x) φ_j(x) φ_k(y) φ_l(y)`.
pub fn pair_density(psi: &WaveFunction) -> Result<TwoPointFunction> {
    let system = &psi.system;
    if system.n_particles < 2 {
        return Err(Error::PairDensityUndefined);
    }
    let k = system.basis.size();
    let phi = system.basis.mode_matrix();
    let n = system.grid().n_nodes();
    let r = system.two_rdm(&psi.coeffs);
    let p = DMatrix::from_fn(k * k, n, |ij, a| phi[(a, ij / k)] * phi[(a, ij % k)]);
    let mut values = p.transpose() * r * &p;
    values = (&values + values.transpose()) * 0.5;
    TwoPointFunction::new(*system.grid(), values)
}

/// `(Kf)(x) = ∫ ρ⁽²⁾(x, y) f(y) / ρ(y) dy` for a fixed wave function.
#[derive(Clone, Debug)]
pub struct KOperator {
    density: Density,
    pair: TwoPointFunction,
}

impl KOperator {
    pub fn new(psi: &WaveFunction) -> Result<Self> {
        let density = density(psi);
        let threshold = POSITIVITY_THRESHOLD * psi.n_particles() as f64;
        if let Some((node, &min)) = density
            .rho()
            .values()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
        {
            if min <= threshold {
                return Err(Error::VanishingDensity { node, min });
            }
        }
        let pair = pair_density(psi)?;
        Ok(Self { density, pair })
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn pair_density(&self) -> &TwoPointFunction {
        &self.pair
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        let grid = *self.density.grid();
        if f.grid() != &grid {
            return Err(Error::GridMismatch {
                left: f.grid().n_cells(),
                right: grid.n_cells(),
            });
        }
        let w = grid.weights();
        let g: Vec<f64> = f
            .values()
            .iter()
            .zip(self.density.rho().values())
            .zip(&w)
            .map(|((&fv, &r), &wb)| wb * fv / r)
            .collect();
        let n = grid.n_nodes();
        let values = (0..n)
            .map(|a| (0..n).map(|b| self.pair.at(a, b) * g[b]).sum())
            .collect();
        GridFunction::new(grid, values)
    }
}

/// Applies `K` built from `psi` to `f`.
pub fn apply_k(f: &GridFunction, psi: &WaveFunction) -> Result<GridFunction> {
    KOperator::new(psi)?.apply(f)
}

/// The rearrangement `G±` with shift `x_*`.
///
/// On functions, `(G f)(x) = (±1)^{m(x)} f([x + x_*])` with `m(x) = 1` when
/// `x + x_* ≥ 1`. Potentials and interactions transform by the adjoint of
/// `G₊`, i.e. translation by `x_*`, for either sign: `(G₊* v)(x) = v([x − x_*])`
/// and a point mass at `x_j` moves to `[x_j + x_*]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rearrangement {
    sign: f64,
    x_star: f64,
}

impl Rearrangement {
    pub fn new(bc: BoundaryCondition, x_star: f64) -> Result<Self> {
        let sign = bc.wrap_sign().ok_or_else(|| {
            Error::InvalidInput("rearrangement needs periodic or anti-periodic conditions".into())
        })?;
        if !(x_star > 0.0 && x_star < 1.0) {
            return Err(Error::InvalidInput(format!("x_* = {x_star} must lie in (0, 1)")));
        }
        Ok(Self { sign, x_star })
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    /// Shift in cells when `x_*` lies on the grid.
    fn grid_shift(&self, grid: &Grid) -> Option<usize> {
        let s = self.x_star * grid.n_cells() as f64;
        let r = s.round();
        ((s - r).abs() < 1e-9).then_some(r as usize % grid.n_cells())
    }

    /// `(G f)(x) = (±1)^{m(x)} f([x + x_*])`.
    pub fn apply<T: Scalar>(&self, f: &GridFunction<T>) -> Result<GridFunction<T>> {
        let grid = *f.grid();
        let n = grid.n_cells();
        let values = match self.grid_shift(&grid) {
            Some(s) => (0..=n)
                .map(|a| {
                    let b = a + s;
                    if b >= n && !(a == n && s == 0) {
                        f.values()[b - n] * self.sign
                    } else {
                        f.values()[b]
                    }
                })
                .collect(),
            None => grid
                .nodes()
                .into_iter()
                .map(|x| {
                    let y = x + self.x_star;
                    if y >= 1.0 {
                        Ok(f.eval(y - 1.0)? * self.sign)
                    } else {
                        f.eval(y)
                    }
                })
                .collect::<Result<Vec<T>>>()?,
        };
        GridFunction::new(grid, values)
    }

    /// `G₊* v`: the regular part is translated periodically (endpoint values
    /// averaged), point masses move to `[x_j + x_*]`, the constant is kept.
    pub fn pull_back_potential(&self, v: &ExternalPotential) -> Result<ExternalPotential> {
        let grid = *v.grid();
        let n = grid.n_cells();
        let vals = v.regular().values();
        let periodic: Vec<f64> = (0..n)
            .map(|a| if a == 0 { 0.5 * (vals[0] + vals[n]) } else { vals[a] })
            .collect();
        let regular = match self.grid_shift(&grid) {
            Some(s) => {
                let mut out: Vec<f64> = (0..n).map(|a| periodic[(a + n - s) % n]).collect();
                out.push(out[0]);
                out
            }
            None => {
                let mut p = periodic.clone();
                p.push(periodic[0]);
                let pf = GridFunction::new(grid, p)?;
                grid.nodes()
                    .into_iter()
                    .map(|x| {
                        let y = x - self.x_star;
                        pf.eval(if y < 0.0 { y + 1.0 } else { y })
                    })
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        let deltas = v
            .deltas()
            .iter()
            .map(|d| {
                let y = d.position + self.x_star;
                Delta {
                    position: if y >= 1.0 { y - 1.0 } else { y },
                    weight: d.weight,
                }
            })
            .collect();
        ExternalPotential::new(GridFunction::new(grid, regular)?, deltas, v.constant())
    }

    /// `G₊* w`, returned as a nodal kernel; `x_*` must lie on the grid.
    pub fn pull_back_interaction(&self, w: &Interaction, grid: &Grid) -> Result<Interaction> {
        if w.is_zero() {
            return Ok(Interaction::Zero);
        }
        let s = self.grid_shift(grid).ok_or_else(|| {
            Error::InvalidInput("interaction rearrangement needs x_* on the grid".into())
        })?;
        let k = w.kernel_matrix(grid)?;
        let n = grid.n_cells();
        let copies = |a: usize| -> Vec<(usize, f64)> {
            if a == 0 {
                vec![(0, 0.5), (n, 0.5)]
            } else {
                vec![(a, 1.0)]
            }
        };
        let periodic = DMatrix::from_fn(n, n, |a, b| {
            let mut s = 0.0;
            for (ac, wa) in copies(a) {
                for (bc, wb) in copies(b) {
                    s += wa * wb * k[(ac, bc)];
                }
            }
            s
        });
        let m = DMatrix::from_fn(n + 1, n + 1, |a, b| {
            periodic[(((a % n) + n - s) % n, ((b % n) + n - s) % n)]
        });
        Ok(Interaction::General(crate::grid::GeneralKernel::new(*grid, m)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, l2_norm, h1_norm_sq};
    use crate::single_particle::{assemble_h, eigensolve_lowest};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    /// Interaction block by applying every `a†_i a†_k a_l a_j` term.
    fn brute_force_interaction(system: &ManyBodySystem) -> DMatrix<f64> {
        let k = system.basis.size();
        let d = system.dimension();
        let index: HashMap<u64, usize> =
            system.determinants.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let mut h = DMatrix::zeros(d, d);
        for (from, &det) in system.determinants.iter().enumerate() {
            for i in 0..k {
                for j in 0..k {
                    for kk in 0..k {
                        for l in 0..k {
                            if let Some((t, s)) = double_hop(det, i, kk, l, j) {
                                h[(index[&t], from)] += s * system.two_body_integral(i, j, kk, l).unwrap();
                            }
                        }
                    }
                }
            }
        }
        h
    }

    #[test]
    fn neumann_modes_are_cosines() {
        let b = build_basis(BoundaryCondition::Neumann, grid(400), 2).unwrap();
        let g = grid(400);
        let one = GridFunction::constant(g, 1.0);
        let c = GridFunction::from_fn(g, |x| 2f64.sqrt() * (PI * x).cos());
        for (m, target) in b.modes().iter().zip([one, c]) {
            let s = integrate(&m.conj_mul(&target).unwrap()).signum();
            let diff = m.axpby(1.0, &target, -s).unwrap();
            assert!(diff.sup_norm() < 1e-3);
        }
    }

    #[test]
    fn periodic_modes_span_first_shell() {
        let g = grid(200);
        let b = build_basis(BoundaryCondition::Periodic, g, 3).unwrap();
        let c = GridFunction::from_fn(g, |x| 2f64.sqrt() * (2.0 * PI * x).cos());
        let s = GridFunction::from_fn(g, |x| 2f64.sqrt() * (2.0 * PI * x).sin());
        for f in [c, s] {
            let proj: f64 = (1..3).map(|i| integrate(&b.mode(i).conj_mul(&f).unwrap()).powi(2)).sum();
            assert!((proj - 1.0).abs() < 1e-9);
        }
        assert!(build_basis(BoundaryCondition::Periodic, g, 0).is_err());
    }

    #[test]
    fn modes_are_trapezoid_orthonormal() {
        for bc in [BoundaryCondition::Neumann, BoundaryCondition::Periodic, BoundaryCondition::AntiPeriodic] {
            let b = build_basis(bc, grid(120), 9).unwrap();
            for i in 0..9 {
                for j in 0..9 {
                    let ip = integrate(&b.mode(i).conj_mul(&b.mode(j)).unwrap());
                    assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn two_mode_neumann_energy() {
        let g = grid(400);
        let b = build_basis(BoundaryCondition::Neumann, g, 2).unwrap();
        let p = assemble_hn(&ExternalPotential::zero(g), &Interaction::Zero, &b, 2).unwrap();
        assert_eq!(p.dimension(), 1);
        let gs = ground_state(&p).unwrap();
        assert!((gs.energy - PI * PI).abs() < 1e-3);
    }

    #[test]
    fn slater_condon_matches_operator_application() {
        let g = grid(60);
        let w = Interaction::General(
            crate::grid::GeneralKernel::from_fn(g, |x, y| (-(x - y).powi(2) * 4.0).exp() + 0.3 * x * y).unwrap(),
        );
        for (bc, k, n) in [
            (BoundaryCondition::Neumann, 6, 2),
            (BoundaryCondition::Periodic, 6, 3),
            (BoundaryCondition::AntiPeriodic, 5, 3),
        ] {
            let system = ManyBodySystem::new(build_basis(bc, g, k).unwrap(), w.clone(), n).unwrap();
            let brute = brute_force_interaction(&system);
            let diff = (&brute - system.interaction_matrix()).amax();
            assert!(diff < 1e-12, "{bc}: {diff}");
        }
    }

    #[test]
    fn noninteracting_spectrum_is_sum_of_orbital_energies() {
        let g = grid(80);
        let b = build_basis(BoundaryCondition::Neumann, g, 4).unwrap();
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| 3.0 * (2.0 * PI * x).cos()))
            .with_delta(0.3, 1.5)
            .unwrap();
        let p = assemble_hn(&v, &Interaction::Zero, &b, 2).unwrap();
        let spec = p.spectrum();
        let orbital = sorted_symmetric_eigen(p.one_body().clone()).0;
        let mut sums = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                sums.push(orbital[i] + orbital[j]);
            }
        }
        sums.sort_by(f64::total_cmp);
        for (a, b) in spec.eigenvalues.iter().zip(&sums) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_kernel_shifts_by_pair_count() {
        let g = grid(60);
        let b = build_basis(BoundaryCondition::Neumann, g, 5).unwrap();
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| x * x));
        let free = assemble_hn(&v, &Interaction::Zero, &b, 2).unwrap();
        let lam = 0.7;
        let shifted = assemble_hn(&v, &Interaction::constant(g, lam).unwrap(), &b, 2).unwrap();
        let diff = shifted.hamiltonian() - free.hamiltonian();
        for i in 0..diff.nrows() {
            for j in 0..diff.ncols() {
                let target = if i == j { 2.0 * lam } else { 0.0 };
                assert!((diff[(i, j)] - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn free_ground_states() {
        let g = grid(400);
        let b = build_basis(BoundaryCondition::Neumann, g, 6).unwrap();
        let gs = ground_state(&assemble_hn(&ExternalPotential::zero(g), &Interaction::Zero, &b, 2).unwrap()).unwrap();
        assert!((gs.energy - PI * PI).abs() < 1e-3);
        // next configuration occupies modes 0 and 2: energy 4π²
        assert!((gs.gap / (3.0 * PI * PI) - 1.0).abs() < 2e-2);

        let b = build_basis(BoundaryCondition::AntiPeriodic, g, 4).unwrap();
        let gs = ground_state(&assemble_hn(&ExternalPotential::zero(g), &Interaction::Zero, &b, 2).unwrap()).unwrap();
        assert!((gs.energy - 2.0 * PI * PI).abs() < 1e-3);
        assert!(gs.gap > 0.0);
    }

    #[test]
    fn single_particle_consistency() {
        let g = grid(100);
        let bc = BoundaryCondition::Periodic;
        let b = build_basis(bc, g, 41).unwrap();
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| 4.0 * (2.0 * PI * x).sin()));
        let gs = ground_state(&assemble_hn(&v, &Interaction::Zero, &b, 1).unwrap()).unwrap();
        let sp = eigensolve_lowest(&assemble_h(&v, bc).unwrap(), 1).unwrap();
        // lumped vs consistent mass differ at O(h²)
        assert!((gs.energy - sp.eigenvalues[0]).abs() < 1e-2 * sp.eigenvalues[0].abs().max(1.0));
    }

    #[test]
    fn determinant_density_and_hole() {
        let g = grid(400);
        let b = build_basis(BoundaryCondition::Neumann, g, 3).unwrap();
        let system = ManyBodySystem::new(b, Interaction::Zero, 2).unwrap();
        let psi = WaveFunction::determinant(Arc::clone(&system), &[0, 1]).unwrap();
        let rho = density(&psi);
        for (x, r) in g.nodes().iter().zip(rho.rho().values()) {
            assert!((r - (1.0 + 2.0 * (PI * x).cos().powi(2))).abs() < 1e-3);
        }
        assert!((integrate(rho.rho()) - 2.0).abs() < 1e-10);
        let pair = pair_density(&psi).unwrap();
        assert!(pair.diagonal().sup_norm() < 1e-6);
        assert!((pair.integral() - 2.0).abs() < 1e-8);
        let marg = pair.marginal();
        for (m, r) in marg.values().iter().zip(rho.rho().values()) {
            assert!((m - r).abs() < 1e-8);
        }
    }

    #[test]
    fn single_particle_density_is_cos_squared() {
        let g = grid(400);
        let b = build_basis(BoundaryCondition::Neumann, g, 2).unwrap();
        let system = ManyBodySystem::new(b, Interaction::Zero, 1).unwrap();
        let psi = WaveFunction::determinant(system, &[1]).unwrap();
        let rho = density(&psi);
        for (x, r) in g.nodes().iter().zip(rho.rho().values()) {
            assert!((r - 2.0 * (PI * x).cos().powi(2)).abs() < 1e-3);
        }
        assert!(matches!(pair_density(&psi), Err(Error::PairDensityUndefined)));
    }

    #[test]
    fn interacting_marginalization() {
        let g = grid(80);
        let w = Interaction::cosine(&g, 1, 0.8).unwrap();
        let b = build_basis(BoundaryCondition::Periodic, g, 7).unwrap();
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| (2.0 * PI * x).cos()));
        let gs = ground_state(&assemble_hn(&v, &w, &b, 3).unwrap()).unwrap();
        let rho = density(&gs.psi);
        let pair = pair_density(&gs.psi).unwrap();
        assert!(pair.symmetry_defect() < 1e-12);
        for (m, r) in pair.marginal().values().iter().zip(rho.rho().values()) {
            assert!((m - 2.0 * r).abs() < 1e-8);
        }
        // interaction energy equals the pairing with the pair density
        let e_int = gs.psi.coeffs().dot(&(system_interaction(&gs.psi) * gs.psi.coeffs()));
        assert!((e_int - w.pair(&pair).unwrap()).abs() < 1e-10);
    }

    fn system_interaction(psi: &WaveFunction) -> DMatrix<f64> {
        psi.system().interaction_matrix().clone()
    }

    #[test]
    fn k_operator_on_uniform_density() {
        let g = grid(90);
        let b = build_basis(BoundaryCondition::Periodic, g, 3).unwrap();
        let system = ManyBodySystem::new(b, Interaction::Zero, 3).unwrap();
        let psi = WaveFunction::determinant(system, &[0, 1, 2]).unwrap();
        let k = KOperator::new(&psi).unwrap();
        let one = k.apply(&GridFunction::constant(g, 1.0)).unwrap();
        for v in one.values() {
            assert!((v - 2.0).abs() < 1e-6);
        }
        let zero = k.apply(&GridFunction::zeros(g)).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
        let f = GridFunction::from_fn(g, |x| (5.0 * x).sin());
        let h = GridFunction::from_fn(g, |x| x * x - 0.2);
        let lhs = k.apply(&f.axpby(2.0, &h, -3.0).unwrap()).unwrap();
        let rhs = k.apply(&f).unwrap().axpby(2.0, &k.apply(&h).unwrap(), -3.0).unwrap();
        assert!(lhs.axpby(1.0, &rhs, -1.0).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn k_operator_rejects_vanishing_density() {
        let g = grid(100);
        let b = build_basis(BoundaryCondition::Neumann, g, 3).unwrap();
        let system = ManyBodySystem::new(b, Interaction::Zero, 2).unwrap();
        // modes 1 and 2 (cos πx, cos 2πx) both vanish nowhere simultaneously, but
        // a single mode does; use N = 2 with modes {1, 2} and check it passes,
        // then a one-particle state that vanishes at 1/2.
        let psi = WaveFunction::determinant(Arc::clone(&system), &[0, 1]).unwrap();
        assert!(KOperator::new(&psi).is_ok());
        let b1 = build_basis(BoundaryCondition::Neumann, g, 2).unwrap();
        let s1 = ManyBodySystem::new(b1, Interaction::Zero, 1).unwrap();
        let psi1 = WaveFunction::determinant(s1, &[1]).unwrap();
        assert!(matches!(KOperator::new(&psi1), Err(Error::VanishingDensity { .. })));
    }

    #[test]
    fn rearrangement_of_cosine() {
        let g = grid(400);
        let c = GridFunction::from_fn(g, |x| 2f64.sqrt() * (PI * x).cos());
        let r = Rearrangement::new(BoundaryCondition::AntiPeriodic, 0.5).unwrap();
        let out = r.apply(&c).unwrap();
        assert!(out.satisfies(BoundaryCondition::AntiPeriodic, 1e-12));
        assert!((h1_norm_sq(&out) - h1_norm_sq(&c)).abs() < 1e-10);
        let expected = GridFunction::from_fn(g, |x| -(2f64.sqrt()) * (PI * x).sin());
        assert!(out.axpby(1.0, &expected, -1.0).unwrap().sup_norm() < 1e-12);
        let id = Rearrangement::new(BoundaryCondition::Periodic, 1e-13).unwrap();
        let f = GridFunction::from_fn(g, |x| (2.0 * PI * x).sin() + 0.3);
        assert_eq!(id.apply(&f).unwrap(), f);
        assert!(Rearrangement::new(BoundaryCondition::Periodic, 1.0).is_err());
        assert!(Rearrangement::new(BoundaryCondition::Neumann, 0.5).is_err());
    }

    #[test]
    fn rearrangement_off_grid_interpolates() {
        let g = grid(400);
        let f = GridFunction::from_fn(g, |x| (2.0 * PI * x).cos());
        let r = Rearrangement::new(BoundaryCondition::Periodic, 0.123_456).unwrap();
        let out = r.apply(&f).unwrap();
        assert!((l2_norm(&out) - l2_norm(&f)).abs() < 1e-4);
    }

    #[test]
    fn rearranged_potential_has_same_spectrum() {
        let g = grid(120);
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| 3.0 * (2.0 * PI * x).sin() + x))
            .with_delta(0.25, 2.0)
            .unwrap();
        for bc in [BoundaryCondition::Periodic, BoundaryCondition::AntiPeriodic] {
            let r = Rearrangement::new(bc, 0.35).unwrap();
            let vt = r.pull_back_potential(&v).unwrap();
            let a = eigensolve_lowest(&assemble_h(&v, bc).unwrap(), 4).unwrap();
            let b = eigensolve_lowest(&assemble_h(&vt, bc).unwrap(), 4).unwrap();
            for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rearranged_many_body_spectrum_is_invariant() {
        let g = grid(60);
        let w = Interaction::General(
            crate::grid::GeneralKernel::from_fn(g, |x, y| 0.4 * (2.0 * PI * (x - y)).cos() + 0.2 * (x * y)).unwrap(),
        );
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| 2.0 * (2.0 * PI * x).sin() + x * x))
            .with_delta(0.2, 1.5)
            .unwrap();
        for (bc, k, n) in [(BoundaryCondition::Periodic, 7, 3), (BoundaryCondition::AntiPeriodic, 6, 2)] {
            let b = build_basis(bc, g, k).unwrap();
            let r = Rearrangement::new(bc, 0.3).unwrap();
            let vt = r.pull_back_potential(&v).unwrap();
            let wt = r.pull_back_interaction(&w, &g).unwrap();
            let a = assemble_hn(&v, &w, &b, n).unwrap().spectrum().eigenvalues;
            let c = assemble_hn(&vt, &wt, &b, n).unwrap().spectrum().eigenvalues;
            for (x, y) in a.iter().zip(&c) {
                assert!((x - y).abs() < 1e-8, "{bc}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn ground_energy_decreases_with_basis_size() {
        let g = grid(100);
        let w = Interaction::cosine(&g, 1, 0.7).unwrap();
        let v = ExternalPotential::from_regular(GridFunction::from_fn(g, |x| 3.0 * (3.0 * x).sin()))
            .with_delta(0.41, 2.0)
            .unwrap();
        let mut prev = f64::INFINITY;
        for k in 3..10 {
            let b = build_basis(BoundaryCondition::Neumann, g, k).unwrap();
            let e = ground_state(&assemble_hn(&v, &w, &b, 3).unwrap()).unwrap().energy;
            assert!(e <= prev + 1e-10, "K={k}: {e} > {prev}");
            prev = e;
        }
    }

    use proptest::prelude::*;

    fn random_potential(g: Grid, coeffs: &[f64], deltas: &[(f64, f64)]) -> ExternalPotential {
        let c = coeffs.to_vec();
        let mut v = ExternalPotential::from_regular(GridFunction::from_fn(g, move |x| {
            c.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * PI * x).cos()).sum()
        }));
        for &(p, w) in deltas {
            v = v.with_delta(p, w).unwrap();
        }
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn neumann_ground_states_are_nondegenerate_and_marginalize(
            coeffs in prop::collection::vec(-4.0f64..4.0, 3),
            deltas in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 0..3),
            strength in 0.0f64..1.0,
            n in 2usize..4,
        ) {
            let g = grid(80);
            let v = random_potential(g, &coeffs, &deltas);
            let w = Interaction::cosine(&g, 1, strength).unwrap();
            let b = build_basis(BoundaryCondition::Neumann, g, 7).unwrap();
            let p = assemble_hn(&v, &w, &b, n).unwrap();
            prop_assert!((p.hamiltonian() - p.hamiltonian().transpose()).amax() == 0.0);
            let gs = ground_state(&p).unwrap();
            prop_assert!(gs.gap > 1e-8);
            let rho = density(&gs.psi);
            prop_assert!((integrate(rho.rho()) - n as f64).abs() < 1e-10);
            let pair = pair_density(&gs.psi).unwrap();
            prop_assert!((pair.integral() - (n * (n - 1)) as f64).abs() < 1e-8);
            for (m, r) in pair.marginal().values().iter().zip(rho.rho().values()) {
                prop_assert!((m - (n - 1) as f64 * r).abs() < 1e-8);
            }
        }

        #[test]
        fn nonlocal_ground_states_are_nondegenerate_with_parity(
            coeffs in prop::collection::vec(-4.0f64..4.0, 3),
            strength in 0.0f64..1.0,
            periodic in any::<bool>(),
        ) {
            let g = grid(80);
            let (bc, k, n) = if periodic {
                (BoundaryCondition::Periodic, 7, 3)
            } else {
                (BoundaryCondition::AntiPeriodic, 6, 2)
            };
            let v = random_potential(g, &coeffs, &[(0.37, 1.0)]);
            let w = Interaction::cosine(&g, 1, strength).unwrap();
            let b = build_basis(bc, g, k).unwrap();
            let gs = ground_state(&assemble_hn(&v, &w, &b, n).unwrap()).unwrap();
            prop_assert!(gs.gap > 1e-8);
        }

        #[test]
        fn nonnegative_bump_raises_ground_energy(
            center in 0.05f64..0.95,
            width in 0.03f64..0.2,
            height in 0.5f64..5.0,
        ) {
            let g = grid(100);
            let v = random_potential(g, &[1.0, -2.0, 0.5], &[]);
            let w = Interaction::cosine(&g, 1, 0.5).unwrap();
            let b = build_basis(BoundaryCondition::Neumann, g, 7).unwrap();
            let bump = GridFunction::from_fn(g, |x| height * (-((x - center) / width).powi(2)).exp());
            prop_assert!(integrate(&bump) >= 1e-3);
            let e0 = ground_state(&assemble_hn(&v, &w, &b, 2).unwrap()).unwrap().energy;
            let e1 = ground_state(&assemble_hn(&v.add_regular(&bump, 1.0).unwrap(), &w, &b, 2).unwrap()).unwrap().energy;
            prop_assert!(e1 - e0 >= 1e-9);
        }
    }
}
