//! Weak-form assembly and dense diagonalization of `h(v) = −Δ + v`.
//!
//! The quadratic form `∫|u′|² + v(|u|²)` is discretized with P1 elements: the
//! Laplacian and the mass matrix are the consistent element matrices, the
//! regular part of `v` enters through trapezoid (lumped) quadrature, a point
//! mass `α δ_x` contributes the rank-one term `α b bᵀ` with `b` the nodal
//! evaluation vector at `x`, and the constant enters as `c·M`.
//!
//! Periodic and anti-periodic conditions drop the last node and couple it to
//! node 0 with sign `±1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::grid::{BoundaryCondition, ExternalPotential, Grid, GridFunction};
use crate::{Error, Result};

/// Degenerate-cluster tolerance used when fixing eigenvector phases.
pub const PHASE_CLUSTER_TOL: f64 = 1e-9;

/// Tolerance used by [`degeneracy_profile`] reports.
pub const DEGENERACY_TOL: f64 = 1e-6;

/// Maps node `a` to `(dof, sign)`.
pub(crate) fn node_dof(grid: &Grid, bc: BoundaryCondition, a: usize) -> (usize, f64) {
    match bc.wrap_sign() {
        Some(s) if a == grid.n_cells() => (0, s),
        _ => (a, 1.0),
    }
}

#[derive(Clone, Debug)]
pub struct SingleParticleOperator {
    grid: Grid,
    bc: BoundaryCondition,
    stiffness: DMatrix<f64>,
    mass: DMatrix<f64>,
}

impl SingleParticleOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn dimension(&self) -> usize {
        self.mass.nrows()
    }

    /// Restricts a nodal function to the degrees of freedom.
    pub fn restrict(&self, f: &GridFunction) -> DVector<f64> {
        DVector::from_iterator(self.dimension(), f.values()[..self.dimension()].iter().copied())
    }

    /// Expands a dof vector to nodal values (filling the identified endpoint).
    pub fn expand(&self, u: &DVector<f64>) -> GridFunction {
        let n = self.grid.n_nodes();
        let values = (0..n)
            .map(|a| {
                let (d, s) = node_dof(&self.grid, self.bc, a);
                s * u[d]
            })
            .collect();
        GridFunction::new(self.grid, values).expect("node count matches grid")
    }
}

fn assemble_element_matrices(grid: &Grid, bc: BoundaryCondition) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = bc.dimension(grid);
    let h = grid.h();
    let mut lap = DMatrix::zeros(d, d);
    let mut mass = DMatrix::zeros(d, d);
    let k_loc = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    let m_loc = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    for e in 0..grid.n_cells() {
        let nodes = [node_dof(grid, bc, e), node_dof(grid, bc, e + 1)];
        for (p, &(dp, sp)) in nodes.iter().enumerate() {
            for (q, &(dq, sq)) in nodes.iter().enumerate() {
                lap[(dp, dq)] += sp * sq * k_loc[p][q];
                mass[(dp, dq)] += sp * sq * m_loc[p][q];
            }
        }
    }
    (lap, mass)
}

/// Consistent P1 Laplacian (stiffness of `∫ u′ v′`) under `bc`.
pub fn laplacian(grid: &Grid, bc: BoundaryCondition) -> DMatrix<f64> {
    assemble_element_matrices(grid, bc).0
}

/// Consistent P1 mass matrix under `bc`.
pub fn mass_matrix(grid: &Grid, bc: BoundaryCondition) -> DMatrix<f64> {
    assemble_element_matrices(grid, bc).1
}

/// Assembles the weak form of `−Δ + v` on `v`'s grid.
pub fn assemble_h(v: &ExternalPotential, bc: BoundaryCondition) -> Result<SingleParticleOperator> {
    let grid = *v.grid();
    let (mut stiffness, mass) = assemble_element_matrices(&grid, bc);
    let w = grid.weights();
    for (a, (&va, &wa)) in v.regular().values().iter().zip(&w).enumerate() {
        let (d, _) = node_dof(&grid, bc, a);
        stiffness[(d, d)] += wa * va;
    }
    for delta in v.deltas() {
        let mut b: Vec<(usize, f64)> = Vec::with_capacity(2);
        for (a, c) in grid.evaluation_vector(delta.position)? {
            let (d, s) = node_dof(&grid, bc, a);
            match b.iter_mut().find(|(dd, _)| *dd == d) {
                Some(entry) => entry.1 += s * c,
                None => b.push((d, s * c)),
            }
        }
        for &(p, bp) in &b {
            for &(q, bq) in &b {
                stiffness[(p, q)] += delta.weight * bp * bq;
            }
        }
    }
    if v.constant() != 0.0 {
        stiffness += &mass * v.constant();
    }
    Ok(SingleParticleOperator {
        grid,
        bc,
        stiffness,
        mass,
    })
}

/// Lowest eigenpairs of the generalized problem `S u = λ M u`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenSolution {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<GridFunction>,
}

impl EigenSolution {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues.
pub(crate) fn sorted_symmetric_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flips each column so that its largest-magnitude entry is positive.
pub(crate) fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Consecutive index ranges whose eigenvalues differ by at most
/// `tol·max(1, |λ|)`.
pub(crate) fn clusters(eigenvalues: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=eigenvalues.len() {
        let split = i == eigenvalues.len()
            || eigenvalues[i] - eigenvalues[i - 1] > tol * eigenvalues[i - 1].abs().max(1.0);
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// `k` lowest generalized eigenpairs, ascending and mass-orthonormal.
pub fn eigensolve_lowest(op: &SingleParticleOperator, k: usize) -> Result<EigenSolution> {
    let d = op.dimension();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenpairs of a {d}-dimensional operator"
        )));
    }
    let chol = op
        .mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Eigensolver("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(&op.stiffness)
        .ok_or_else(|| Error::Eigensolver("singular Cholesky factor".into()))?;
    let mut c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Eigensolver("singular Cholesky factor".into()))?;
    c = (&c + c.transpose()) * 0.5;
    let (values, q) = sorted_symmetric_eigen(c);
    let q = q.columns(0, k).into_owned();
    let mut u = l
        .transpose()
        .solve_upper_triangular(&q)
        .ok_or_else(|| Error::Eigensolver("singular Cholesky factor".into()))?;

    let values: Vec<f64> = values[..k].to_vec();
    for cluster in clusters(&values, PHASE_CLUSTER_TOL) {
        if cluster.len() > 1 {
            mass_gram_schmidt(&mut u, &op.mass, cluster);
        }
    }
    fix_signs(&mut u);

    let s_norm = op.stiffness.norm();
    let m_norm = op.mass.norm();
    for (j, &lambda) in values.iter().enumerate() {
        let col = u.column(j);
        let r = &op.stiffness * col - (&op.mass * col) * lambda;
        let bound = 1e-9 * (s_norm + lambda.abs() * m_norm) * col.norm();
        if r.norm() > bound {
            return Err(Error::Eigensolver(format!(
                "eigenpair {j} residual {:e} exceeds {:e}",
                r.norm(),
                bound
            )));
        }
    }
    let eigenvectors = (0..k).map(|j| op.expand(&u.column(j).into_owned())).collect();
    Ok(EigenSolution {
        eigenvalues: values,
        eigenvectors,
    })
}

fn mass_gram_schmidt(u: &mut DMatrix<f64>, mass: &DMatrix<f64>, cols: std::ops::Range<usize>) {
    for j in cols.clone() {
        for i in cols.start..j {
            let ui = u.column(i).into_owned();
            let proj = (ui.transpose() * mass * u.column(j))[(0, 0)];
            let mut cj = u.column_mut(j);
            cj.axpy(-proj, &ui, 1.0);
        }
        let nrm = (u.column(j).transpose() * mass * u.column(j))[(0, 0)].sqrt();
        u.column_mut(j).scale_mut(1.0 / nrm);
    }
}

/// Multiplicities of eigenvalue clusters: consecutive eigenvalues within
/// `tol·max(1, |λ|)` are merged.
pub fn degeneracy_profile(sol: &EigenSolution, tol: f64) -> Vec<usize> {
    clusters(&sol.eigenvalues, tol)
        .into_iter()
        .map(|r| r.len())
        .collect()
}
