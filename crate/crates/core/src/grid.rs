//! Uniform P1 mesh on the unit interval, nodal functions and the pairings of
//! potentials and interactions against (pair) densities.
//!
//! All integrals are composite trapezoid sums over the nodes. A potential is
//! an L¹ part sampled on the nodes, a finite list of point masses and an
//! additive constant; an interaction is a symmetric two-point kernel.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Real or complex nodal values.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + Sum
{
    fn conj(self) -> Self;
    fn norm_sqr(self) -> f64;
    fn from_real(x: f64) -> Self;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn from_real(x: f64) -> Self {
        x
    }
}

impl Scalar for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
}

/// Uniform mesh of `n_cells` cells on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n_cells: usize,
}

impl Grid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_cells {
            1.0
        } else {
            i as f64 / self.n_cells as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights: `h/2` at the ends, `h` inside.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![h; self.n_nodes()];
        w[0] = 0.5 * h;
        w[self.n_cells] = 0.5 * h;
        w
    }

    /// Snaps `x` to a node when it lies within `h/100` of one.
    pub fn snap(&self, x: f64) -> f64 {
        let s = x * self.n_cells as f64;
        let r = s.round();
        if (s - r).abs() <= 0.01 {
            self.node(r as usize)
        } else {
            x
        }
    }

    /// P1 evaluation stencil at `x ∈ [0,1]`: `(left node, weight left, weight right)`.
    /// Nodes hit exactly return a zero right weight.
    pub fn locate(&self, x: f64) -> Result<(usize, f64, f64)> {
        if !(0.0..=1.0).contains(&x) || !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "point {x} lies outside [0, 1]"
            )));
        }
        let s = x * self.n_cells as f64;
        let r = s.round();
        if (s - r).abs() < 1e-12 {
            return Ok((r as usize, 1.0, 0.0));
        }
        let cell = (s.floor() as usize).min(self.n_cells - 1);
        let t = s - cell as f64;
        Ok((cell, 1.0 - t, t))
    }

    /// Nodal evaluation vector `b` with `f(x) = bᵀ f`.
    pub fn evaluation_vector(&self, x: f64) -> Result<Vec<(usize, f64)>> {
        let (i, wl, wr) = self.locate(x)?;
        if wr == 0.0 {
            Ok(vec![(i, wl)])
        } else {
            Ok(vec![(i, wl), (i + 1, wr)])
        }
    }
}

/// Boundary conditions of the self-adjoint realizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Neumann,
    Periodic,
    AntiPeriodic,
}

impl BoundaryCondition {
    /// Sign identifying the endpoint values, `None` for Neumann.
    pub fn wrap_sign(&self) -> Option<f64> {
        match self {
            Self::Neumann => None,
            Self::Periodic => Some(1.0),
            Self::AntiPeriodic => Some(-1.0),
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, Self::Neumann)
    }

    /// Number of H¹ degrees of freedom on `grid`.
    pub fn dimension(&self, grid: &Grid) -> usize {
        match self {
            Self::Neumann => grid.n_nodes(),
            _ => grid.n_cells(),
        }
    }

    /// Particle-count parity under which non-degeneracy and positivity of
    /// ground states hold: any N for Neumann, odd N for periodic, even N for
    /// anti-periodic.
    pub fn parity_ok(&self, n_particles: usize) -> bool {
        match self {
            Self::Neumann => true,
            Self::Periodic => n_particles % 2 == 1,
            Self::AntiPeriodic => n_particles.is_multiple_of(2),
        }
    }
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Neumann => "neumann",
            Self::Periodic => "periodic",
            Self::AntiPeriodic => "anti_periodic",
        };
        f.write_str(s)
    }
}

/// Nodal values of a continuous piecewise-linear function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridFunction<T>", into = "RawGridFunction<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct GridFunction<T: Scalar = f64> {
    grid: Grid,
    values: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct RawGridFunction<T> {
    n_cells: usize,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<RawGridFunction<T>> for GridFunction<T> {
    type Error = Error;
    fn try_from(raw: RawGridFunction<T>) -> Result<Self> {
        GridFunction::new(Grid::new(raw.n_cells)?, raw.values)
    }
}

impl<T: Scalar> From<GridFunction<T>> for RawGridFunction<T> {
    fn from(f: GridFunction<T>) -> Self {
        Self {
            n_cells: f.grid.n_cells,
            values: f.values,
        }
    }
}

impl<T: Scalar> GridFunction<T> {
    pub fn new(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::InvalidInput(format!(
                "expected {} nodal values, got {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![T::default(); grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> T) -> Self {
        Self {
            grid,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Value of the P1 interpolant at `x`.
    pub fn eval(&self, x: f64) -> Result<T> {
        let (i, wl, wr) = self.grid.locate(x)?;
        if wr == 0.0 {
            Ok(self.values[i] * wl)
        } else {
            Ok(self.values[i] * wl + self.values[i + 1] * wr)
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> GridFunction<U> {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| v * a)
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.n_cells,
                right: other.grid.n_cells,
            });
        }
        Ok(())
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| x * a + y * b)
                .collect(),
        })
    }

    /// Nodewise product `conj(self)·other`.
    pub fn conj_mul(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| x.conj() * y)
                .collect(),
        })
    }

    /// Whether the endpoint values obey the identification of `bc`.
    pub fn satisfies(&self, bc: BoundaryCondition, tol: f64) -> bool {
        match bc.wrap_sign() {
            None => true,
            Some(s) => {
                let n = self.grid.n_cells;
                (self.values[n] - self.values[0] * s).norm_sqr().sqrt() <= tol
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.norm_sqr().sqrt())
            .fold(0.0, f64::max)
    }
}

impl GridFunction<f64> {
    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_nodes()],
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Removes the mean so that `integrate(self) = 0`.
    pub fn zero_mean(&self) -> Self {
        let m = integrate(self);
        self.map(|v| v - m)
    }
}

/// Trapezoid integral of the interpolant (exact for P1).
pub fn integrate<T: Scalar>(f: &GridFunction<T>) -> T {
    let w = f.grid.weights();
    f.values.iter().zip(&w).map(|(&v, &wi)| v * wi).sum()
}

/// `∫ conj(f) g`.
pub fn inner<T: Scalar>(f: &GridFunction<T>, g: &GridFunction<T>) -> Result<T> {
    Ok(integrate(&f.conj_mul(g)?))
}

pub fn l2_norm<T: Scalar>(f: &GridFunction<T>) -> f64 {
    let w = f.grid.weights();
    f.values
        .iter()
        .zip(&w)
        .map(|(v, wi)| v.norm_sqr() * wi)
        .sum::<f64>()
        .sqrt()
}

/// `‖f′‖²` with the piecewise-constant derivative of the interpolant.
pub fn dirichlet_energy<T: Scalar>(f: &GridFunction<T>) -> f64 {
    let h = f.grid.h();
    f.values
        .windows(2)
        .map(|p| (p[1] - p[0]).norm_sqr())
        .sum::<f64>()
        / h
}

/// `‖f‖²_{L²} + ‖f′‖²_{L²}`.
pub fn h1_norm_sq<T: Scalar>(f: &GridFunction<T>) -> f64 {
    l2_norm(f).powi(2) + dirichlet_energy(f)
}

/// Normalized cumulative distribution `F(x) = (1/N) ∫₀ˣ ρ`.
pub fn cumulative_distribution(rho: &GridFunction, particle_count: usize) -> Result<GridFunction> {
    if particle_count == 0 {
        return Err(Error::InvalidInput("particle count must be positive".into()));
    }
    if let Some((i, v)) = rho.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeDensity { node: i, value: *v });
    }
    let h = rho.grid.h();
    let n = particle_count as f64;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(rho.values.len());
    out.push(0.0);
    for p in rho.values.windows(2) {
        acc += 0.5 * h * (p[0] + p[1]);
        out.push(acc / n);
    }
    Ok(GridFunction {
        grid: rho.grid,
        values: out,
    })
}

/// Nonnegative single-particle density integrating to `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    rho: GridFunction,
    particle_count: usize,
}

impl Density {
    /// Integral tolerance relative to `N`.
    pub const INTEGRAL_TOL: f64 = 1e-10;

    pub fn new(rho: GridFunction, particle_count: usize) -> Result<Self> {
        if particle_count == 0 {
            return Err(Error::InvalidInput("particle count must be positive".into()));
        }
        if let Some((i, v)) = rho.values.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
            return Err(Error::NegativeDensity { node: i, value: *v });
        }
        let n = particle_count as f64;
        let total = integrate(&rho);
        if (total - n).abs() > Self::INTEGRAL_TOL * n {
            return Err(Error::InvalidInput(format!(
                "density integrates to {total}, expected {particle_count}"
            )));
        }
        Ok(Self { rho, particle_count })
    }

    /// Rescales a nonnegative profile to integrate to `N`.
    pub fn normalized(profile: GridFunction, particle_count: usize) -> Result<Self> {
        let total = integrate(&profile);
        if !(total > 0.0) {
            return Err(Error::InvalidInput(format!(
                "density profile integrates to {total}"
            )));
        }
        Self::new(profile.scale(particle_count as f64 / total), particle_count)
    }

    pub fn uniform(grid: Grid, particle_count: usize) -> Result<Self> {
        Self::new(GridFunction::constant(grid, particle_count as f64), particle_count)
    }

    pub fn rho(&self) -> &GridFunction {
        &self.rho
    }

    pub fn particle_count(&self) -> usize {
        self.particle_count
    }

    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    pub fn cumulative(&self) -> GridFunction {
        cumulative_distribution(&self.rho, self.particle_count)
            .expect("density is nonnegative by construction")
    }

    /// `(1−t)·self + t·other`.
    pub fn mix(&self, other: &Density, t: f64) -> Result<Density> {
        if self.particle_count != other.particle_count {
            return Err(Error::InvalidInput("mixing densities with different N".into()));
        }
        let rho = self.rho.axpby(1.0 - t, &other.rho, t)?;
        Ok(Density {
            rho,
            particle_count: self.particle_count,
        })
    }
}

/// A point mass `weight·δ_position`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub position: f64,
    pub weight: f64,
}

/// Potential `regular + Σ αⱼ δ_{xⱼ} + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalPotential {
    regular: GridFunction,
    deltas: Vec<Delta>,
    constant: f64,
}

impl ExternalPotential {
    pub fn new(regular: GridFunction, deltas: Vec<Delta>, constant: f64) -> Result<Self> {
        let grid = *regular.grid();
        let mut snapped = Vec::with_capacity(deltas.len());
        for d in deltas {
            if !(0.0..=1.0).contains(&d.position) || !d.position.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "delta position {} lies outside [0, 1]",
                    d.position
                )));
            }
            if !d.weight.is_finite() {
                return Err(Error::InvalidInput("delta weight is not finite".into()));
            }
            snapped.push(Delta {
                position: grid.snap(d.position),
                weight: d.weight,
            });
        }
        if !constant.is_finite() || regular.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("potential has non-finite values".into()));
        }
        Ok(Self {
            regular,
            deltas: snapped,
            constant,
        })
    }

    pub fn zero(grid: Grid) -> Self {
        Self {
            regular: GridFunction::zeros(grid),
            deltas: Vec::new(),
            constant: 0.0,
        }
    }

    pub fn from_regular(regular: GridFunction) -> Self {
        Self {
            regular,
            deltas: Vec::new(),
            constant: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.regular.grid()
    }

    pub fn regular(&self) -> &GridFunction {
        &self.regular
    }

    pub fn deltas(&self) -> &[Delta] {
        &self.deltas
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn with_delta(self, position: f64, weight: f64) -> Result<Self> {
        let mut deltas = self.deltas;
        deltas.push(Delta { position, weight });
        Self::new(self.regular, deltas, self.constant)
    }

    /// Adds `f` to the regular part.
    pub fn add_regular(&self, f: &GridFunction, scale: f64) -> Result<Self> {
        Ok(Self {
            regular: self.regular.axpby(1.0, f, scale)?,
            deltas: self.deltas.clone(),
            constant: self.constant,
        })
    }

    /// `a·self + b·other` with deltas concatenated.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        let mut deltas: Vec<Delta> = self
            .deltas
            .iter()
            .map(|d| Delta { weight: a * d.weight, ..*d })
            .collect();
        deltas.extend(other.deltas.iter().map(|d| Delta { weight: b * d.weight, ..*d }));
        Ok(Self {
            regular: self.regular.axpby(a, &other.regular, b)?,
            deltas,
            constant: a * self.constant + b * other.constant,
        })
    }

    /// `v(f) = ∫ regular·f + Σ αⱼ f(xⱼ) + c ∫ f`.
    pub fn pair<T: Scalar>(&self, f: &GridFunction<T>) -> Result<T> {
        if f.grid() != self.grid() {
            return Err(Error::GridMismatch {
                left: self.grid().n_cells(),
                right: f.grid().n_cells(),
            });
        }
        let w = f.grid().weights();
        let regular: T = f
            .values()
            .iter()
            .zip(self.regular.values())
            .zip(&w)
            .map(|((&fv, &v), &wi)| fv * (v * wi))
            .sum();
        let mut point = T::default();
        for d in &self.deltas {
            point = point + f.eval(d.position)? * d.weight;
        }
        Ok(regular + point + integrate(f) * self.constant)
    }
}

/// Pairing of a potential with a nodal function.
pub fn pair_external<T: Scalar>(v: &ExternalPotential, f: &GridFunction<T>) -> Result<T> {
    v.pair(f)
}

/// Real function of two variables sampled on the tensor grid; entry
/// `(a, b)` holds the value at `(x_a, y_b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPointFunction {
    grid: Grid,
    values: DMatrix<f64>,
}

impl TwoPointFunction {
    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "two-point function must be {n}x{n}, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let x = grid.nodes();
        let n = x.len();
        Self {
            grid,
            values: DMatrix::from_fn(n, n, |a, b| f(x[a], x[b])),
        }
    }

    /// `(f ⊗ g)(x, y) = f(x) g(y)`.
    pub fn tensor(f: &GridFunction, g: &GridFunction) -> Result<Self> {
        if f.grid() != g.grid() {
            return Err(Error::GridMismatch {
                left: f.grid().n_cells(),
                right: g.grid().n_cells(),
            });
        }
        let n = f.grid().n_nodes();
        Ok(Self {
            grid: *f.grid(),
            values: DMatrix::from_fn(n, n, |a, b| f.values()[a] * g.values()[b]),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[(a, b)]
    }

    /// `x ↦ ∫ g(x, y) dy`.
    pub fn marginal(&self) -> GridFunction {
        let w = self.grid.weights();
        let n = w.len();
        let values = (0..n)
            .map(|a| (0..n).map(|b| self.values[(a, b)] * w[b]).sum())
            .collect();
        GridFunction {
            grid: self.grid,
            values,
        }
    }

    pub fn diagonal(&self) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: (0..self.grid.n_nodes()).map(|a| self.values[(a, a)]).collect(),
        }
    }

    pub fn integral(&self) -> f64 {
        let w = self.grid.weights();
        let n = w.len();
        let mut s = 0.0;
        for b in 0..n {
            let mut col = 0.0;
            for a in 0..n {
                col += w[a] * self.values[(a, b)];
            }
            s += w[b] * col;
        }
        s
    }

    pub fn symmetry_defect(&self) -> f64 {
        (&self.values - self.values.transpose()).amax()
    }
}

/// Symmetric convolution-type kernel `w(x − y)` sampled uniformly on `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConvolutionKernel {
    samples: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ConvolutionKernel {
    type Error = Error;
    fn try_from(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples)
    }
}

impl From<ConvolutionKernel> for Vec<f64> {
    fn from(k: ConvolutionKernel) -> Self {
        k.samples
    }
}

impl ConvolutionKernel {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 3 || samples.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "convolution kernel needs an odd number (>= 3) of samples on [-1, 1]".into(),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("convolution kernel has non-finite samples".into()));
        }
        let scale = samples.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let m = samples.len();
        for i in 0..m / 2 {
            if (samples[i] - samples[m - 1 - i]).abs() > 1e-12 * scale {
                return Err(Error::AsymmetricKernel {
                    defect: (samples[i] - samples[m - 1 - i]).abs(),
                });
            }
        }
        Ok(Self { samples })
    }

    /// Samples `f(s)` at `2·n_cells + 1` points of `[−1, 1]`.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = grid.n_cells() as f64;
        let m = 2 * grid.n_cells() + 1;
        Self::new((0..m).map(|i| f(i as f64 / n - 1.0)).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Linear interpolation of the samples at `s ∈ [−1, 1]`.
    pub fn eval(&self, s: f64) -> f64 {
        let m = self.samples.len() - 1;
        let t = ((s + 1.0) * 0.5 * m as f64).clamp(0.0, m as f64);
        let i = (t.floor() as usize).min(m - 1);
        let r = t - i as f64;
        if r < 1e-12 {
            self.samples[i]
        } else if r > 1.0 - 1e-12 {
            self.samples[i + 1]
        } else {
            (1.0 - r) * self.samples[i] + r * self.samples[i + 1]
        }
    }
}

/// Symmetric kernel sampled on the nodes of `[0,1]²`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralKernel {
    grid: Grid,
    values: DMatrix<f64>,
}

impl GeneralKernel {
    pub const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "kernel must be {n}x{n}, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("kernel has non-finite values".into()));
        }
        let scale = values.amax().max(1.0);
        let defect = (&values - values.transpose()).amax();
        if defect > Self::SYMMETRY_TOL * scale {
            return Err(Error::AsymmetricKernel { defect });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(grid, TwoPointFunction::from_fn(grid, f).values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Pair interaction `w ∈ 𝒲`.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Interaction {
    #[default]
    Zero,
    Convolution(ConvolutionKernel),
    General(GeneralKernel),
}

impl Interaction {
    /// `strength·cos(2π·k·(x − y))`.
    pub fn cosine(grid: &Grid, k: u32, strength: f64) -> Result<Self> {
        let kf = k as f64;
        Ok(Self::Convolution(ConvolutionKernel::from_fn(grid, |s| {
            strength * (2.0 * std::f64::consts::PI * kf * s).cos()
        })?))
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        let n = grid.n_nodes();
        Ok(Self::General(GeneralKernel::new(grid, DMatrix::from_element(n, n, c))?))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    /// Kernel values `w(x_a, x_b)` on the nodes of `grid`.
    pub fn kernel_matrix(&self, grid: &Grid) -> Result<DMatrix<f64>> {
        let n = grid.n_nodes();
        match self {
            Self::Zero => Ok(DMatrix::zeros(n, n)),
            Self::Convolution(k) => {
                let x = grid.nodes();
                Ok(DMatrix::from_fn(n, n, |a, b| k.eval(x[a] - x[b])))
            }
            Self::General(k) => {
                if k.grid() != grid {
                    return Err(Error::GridMismatch {
                        left: k.grid().n_cells(),
                        right: grid.n_cells(),
                    });
                }
                Ok(k.values.clone())
            }
        }
    }

    /// `w(g) = ∫∫ w(x, y) g(x, y)`.
    pub fn pair(&self, g: &TwoPointFunction) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let kernel = self.kernel_matrix(g.grid())?;
        let w = g.grid().weights();
        let n = w.len();
        let mut total = 0.0;
        for b in 0..n {
            let mut col = 0.0;
            for a in 0..n {
                col += w[a] * kernel[(a, b)] * g.values[(a, b)];
            }
            total += w[b] * col;
        }
        Ok(total)
    }
}

/// Pairing of an interaction with a two-point function.
pub fn pair_interaction(w: &Interaction, g: &TwoPointFunction) -> Result<f64> {
    w.pair(g)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawInteraction {
    Zero,
    Convolution { samples: Vec<f64> },
    General { values: Vec<Vec<f64>> },
}

impl Serialize for Interaction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = match self {
            Self::Zero => RawInteraction::Zero,
            Self::Convolution(k) => RawInteraction::Convolution {
                samples: k.samples.clone(),
            },
            Self::General(k) => RawInteraction::General {
                values: k
                    .values
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            },
        };
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interaction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match RawInteraction::deserialize(d)? {
            RawInteraction::Zero => Ok(Self::Zero),
            RawInteraction::Convolution { samples } => ConvolutionKernel::new(samples)
                .map(Self::Convolution)
                .map_err(D::Error::custom),
            RawInteraction::General { values } => {
                let n = values.len();
                if n < 3 || values.iter().any(|r| r.len() != n) {
                    return Err(D::Error::custom("kernel must be a square array"));
                }
                let grid = Grid::new(n - 1).map_err(D::Error::custom)?;
                let m = DMatrix::from_fn(n, n, |a, b| values[a][b]);
                GeneralKernel::new(grid, m)
                    .map(Self::General)
                    .map_err(D::Error::custom)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn grid_nodes_are_uniform() {
        let g = grid(7);
        let x = g.nodes();
        assert_eq!(x[0], 0.0);
        assert_eq!(x[7], 1.0);
        for p in x.windows(2) {
            assert!((p[1] - p[0] - g.h()).abs() < 1e-15);
        }
        assert!(Grid::new(1).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = grid(10);
        assert!((integrate(&GridFunction::constant(g, 1.0)) - 1.0).abs() < 1e-15);
        assert!((integrate(&GridFunction::from_fn(g, |x| x)) - 0.5).abs() < 1e-15);
        let f = GridFunction::from_fn(grid(200), |x| 2.0 * (PI * x).cos().powi(2));
        assert!((integrate(&f) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn h1_norm_examples() {
        let g = grid(10);
        assert!((h1_norm_sq(&GridFunction::constant(g, 1.0)) - 1.0).abs() < 1e-14);
        // trapezoid on x² carries an O(h²) error; the derivative part is exact
        let f = GridFunction::from_fn(grid(400), |x| x);
        assert!((h1_norm_sq(&f) - 4.0 / 3.0).abs() < 1e-5);
        let f = GridFunction::from_fn(grid(400), |x| 2f64.sqrt() * (PI * x).cos());
        assert!((h1_norm_sq(&f) - (1.0 + PI * PI)).abs() < 1e-3);
    }

    #[test]
    fn cumulative_examples() {
        let g = grid(50);
        let rho = GridFunction::constant(g, 3.0);
        let f = cumulative_distribution(&rho, 3).unwrap();
        for (x, v) in g.nodes().iter().zip(f.values()) {
            assert!((x - v).abs() < 1e-12);
        }
        let g = grid(400);
        let rho = Density::new(GridFunction::from_fn(g, |x| 2.0 * (PI * x).cos().powi(2)), 1).unwrap();
        let f = rho.cumulative();
        for (x, v) in g.nodes().iter().zip(f.values()) {
            let exact = x + (2.0 * PI * x).sin() / (2.0 * PI);
            assert!((exact - v).abs() < 1e-4);
        }
        assert!((f.values()[400] - 1.0).abs() < 1e-10);
        let mut bad = GridFunction::constant(g, 1.0);
        bad.values_mut()[5] = -0.1;
        assert!(matches!(
            cumulative_distribution(&bad, 1),
            Err(Error::NegativeDensity { node: 5, .. })
        ));
    }

    #[test]
    fn pair_external_examples() {
        let g = grid(100);
        let f = GridFunction::from_fn(g, |x| 2.0 * (PI * x).cos().powi(2));
        let v = ExternalPotential::zero(g).with_delta(0.5, 1.0).unwrap();
        assert!(v.pair(&f).unwrap().abs() < 1e-6);
        let v = ExternalPotential::zero(g).with_constant(3.0);
        assert!((v.pair(&GridFunction::constant(g, 1.0)).unwrap() - 3.0).abs() < 1e-14);
        let v = ExternalPotential::from_regular(GridFunction::constant(g, 1.0));
        assert!((v.pair(&GridFunction::from_fn(g, |x| x)).unwrap() - 0.5).abs() < 1e-14);
        assert!(ExternalPotential::zero(g).with_delta(1.5, 1.0).is_err());
    }

    #[test]
    fn delta_positions_snap_to_nodes() {
        let g = grid(10);
        let v = ExternalPotential::zero(g).with_delta(0.5 + 1e-4, 1.0).unwrap();
        assert_eq!(v.deltas()[0].position, 0.5);
        let v = ExternalPotential::zero(g).with_delta(0.53, 1.0).unwrap();
        assert_eq!(v.deltas()[0].position, 0.53);
        let f = GridFunction::from_fn(g, |x| x);
        assert!((v.pair(&f).unwrap() - 0.53).abs() < 1e-14);
    }

    #[test]
    fn pair_interaction_examples() {
        let g = grid(100);
        let one = TwoPointFunction::from_fn(g, |_, _| 1.0);
        assert_eq!(Interaction::Zero.pair(&one).unwrap(), 0.0);
        let rho = GridFunction::from_fn(g, |x| 1.0 + 2.0 * (PI * x).cos().powi(2));
        let n = integrate(&rho);
        let w = Interaction::constant(g, 1.0).unwrap();
        let gg = TwoPointFunction::tensor(&rho, &rho).unwrap();
        assert!((w.pair(&gg).unwrap() - n * n).abs() < 1e-6);
        let w = Interaction::cosine(&g, 1, 1.0).unwrap();
        assert!(w.pair(&one).unwrap().abs() < 1e-6);
    }

    #[test]
    fn asymmetric_kernels_are_rejected() {
        let g = grid(4);
        assert!(GeneralKernel::from_fn(g, |x, y| x - 2.0 * y).is_err());
        assert!(ConvolutionKernel::from_fn(&g, |s| s).is_err());
        assert!(ConvolutionKernel::new(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn convolution_interpolates_between_samples() {
        let k = ConvolutionKernel::new(vec![1.0, 0.0, 1.0]).unwrap();
        assert!((k.eval(0.5) - 0.5).abs() < 1e-15);
        assert!((k.eval(-1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_roundtrip() {
        let g = grid(8);
        let f = GridFunction::from_fn(g, |x| (3.0 * x).sin() / 7.0);
        let s = serde_json::to_string(&f).unwrap();
        let back: GridFunction = serde_json::from_str(&s).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
        let w = Interaction::General(GeneralKernel::from_fn(g, |x, y| (x * y).exp()).unwrap());
        let back: Interaction = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        let (Interaction::General(a), Interaction::General(b)) = (&w, &back) else {
            panic!("kind changed");
        };
        assert!((a.values() - b.values()).amax() <= 1e-15 * 3.0);
        let bad = r#"{"n_cells": 4, "values": [1.0, 2.0]}"#;
        assert!(serde_json::from_str::<GridFunction>(bad).is_err());
    }
}
