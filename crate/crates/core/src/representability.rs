//! Density classes and the density-to-determinant construction.
//!
//! For a density `ρ` with cumulative distribution `F = (1/N)∫₀ˣρ` the orbitals
//! `φ_k = √(ρ/N)·e^{−iθ_k F}` are orthonormal because `dF = ρ/N dx` turns
//! every overlap into `∫₀¹ e^{i(θ_j−θ_k)u} du`. Their densities sum to `ρ`.

use num_complex::Complex64;
use serde::Serialize;

use crate::grid::{dirichlet_energy, h1_norm_sq, integrate, BoundaryCondition, Density, GridFunction};
use crate::{Error, Result, POSITIVITY_THRESHOLD};

/// Tolerance on `ρ(0) = ρ(1)`.
pub const ENDPOINT_TOL: f64 = 1e-8;

/// Integral tolerance, relative to `N`, for membership in `𝒟_N`.
pub const INTEGRAL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepresentabilityReport {
    pub integral: f64,
    pub min_value: f64,
    /// `‖√ρ‖_{H¹}`.
    pub h1_norm: f64,
    pub endpoint_match: bool,
    pub in_rn: bool,
    pub in_dn: bool,
    pub in_dn_plus: bool,
}

impl RepresentabilityReport {
    /// Membership in the class that ground-state densities occupy under `bc`:
    /// `𝒟_N` for Neumann, `𝒟_N⁺` otherwise.
    pub fn admissible(&self, bc: BoundaryCondition) -> bool {
        if bc.is_local() {
            self.in_dn
        } else {
            self.in_dn_plus
        }
    }
}

fn sqrt_density(rho: &Density) -> GridFunction {
    rho.rho().map(|v: f64| v.max(0.0).sqrt())
}

/// Classifies `rho` against `ℛ_N`, `𝒟_N` and `𝒟_N⁺`.
///
/// The boundary condition does not change the classes themselves; use
/// [`RepresentabilityReport::admissible`] for the bc-appropriate verdict.
pub fn classify_density(rho: &Density, _bc: BoundaryCondition) -> RepresentabilityReport {
    let n = rho.particle_count() as f64;
    let values = rho.rho().values();
    let integral = integrate(rho.rho());
    let min_value = rho.rho().min_value();
    let h1_norm = h1_norm_sq(&sqrt_density(rho)).sqrt();
    let endpoint_match = (values[0] - values[values.len() - 1]).abs() <= ENDPOINT_TOL;
    let in_rn = min_value >= 0.0 && (integral - n).abs() <= INTEGRAL_TOL * n && h1_norm.is_finite();
    let in_dn = in_rn && min_value > POSITIVITY_THRESHOLD * n;
    RepresentabilityReport {
        integral,
        min_value,
        h1_norm,
        endpoint_match,
        in_rn,
        in_dn,
        in_dn_plus: in_dn && endpoint_match,
    }
}

/// Phase frequencies `θ_k` of the construction.
///
/// Neumann and periodic use `2πk`, `k = 1..N`; anti-periodic uses `πk` over
/// the `N` odd integers of smallest magnitude, positive first on ties.
pub fn phase_frequencies(bc: BoundaryCondition, n_particles: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    match bc {
        BoundaryCondition::Neumann | BoundaryCondition::Periodic => {
            (1..=n_particles).map(|k| 2.0 * PI * k as f64).collect()
        }
        BoundaryCondition::AntiPeriodic => {
            let mut ks = Vec::with_capacity(n_particles);
            let mut m = 1i64;
            while ks.len() < n_particles {
                ks.push(m);
                if ks.len() < n_particles {
                    ks.push(-m);
                }
                m += 2;
            }
            ks.sort_unstable();
            ks.into_iter().map(|k| PI * k as f64).collect()
        }
    }
}

/// Orbitals `φ_k = √(ρ/N)·e^{−iθ_k F}` of a determinant with density `rho`.
pub fn slater_from_density(rho: &Density, bc: BoundaryCondition) -> Result<Vec<GridFunction<Complex64>>> {
    let n = rho.particle_count();
    if let Some((node, &value)) = rho.rho().values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeDensity { node, value });
    }
    let f = rho.cumulative();
    let amp = rho.rho().map(|v: f64| (v / n as f64).sqrt());
    Ok(phase_frequencies(bc, n)
        .into_iter()
        .map(|theta| {
            let values = amp
                .values()
                .iter()
                .zip(f.values())
                .map(|(&a, &fx)| Complex64::from_polar(a, -theta * fx))
                .collect();
            GridFunction::new(*rho.grid(), values).expect("same grid")
        })
        .collect())
}

/// Overlap matrix `⟨φ_j, φ_k⟩` of the constructed orbitals, integrated exactly
/// for the piecewise-linear density by the change of variables `u = F(x)`.
pub fn orbital_gram(rho: &Density, bc: BoundaryCondition) -> Vec<Vec<Complex64>> {
    let f = rho.cumulative();
    let thetas = phase_frequencies(bc, rho.particle_count());
    let fv = f.values();
    thetas
        .iter()
        .map(|&tj| {
            thetas
                .iter()
                .map(|&tk| {
                    let d = tj - tk;
                    if d == 0.0 {
                        return Complex64::new(fv[fv.len() - 1], 0.0);
                    }
                    let i = Complex64::i();
                    fv.windows(2)
                        .map(|p| ((i * d * p[1]).exp() - (i * d * p[0]).exp()) / (i * d))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `Σ_k ‖φ_k′‖²` for the constructed determinant:
/// `∫(√ρ)′² + Σ_k θ_k²/N³ ∫ρ³`, with the P1 derivative of nodal `√ρ`.
pub fn slater_kinetic_energy(rho: &Density, bc: BoundaryCondition) -> f64 {
    let n = rho.particle_count() as f64;
    let grad = dirichlet_energy(&sqrt_density(rho));
    let cube = integrate(&rho.rho().map(|v: f64| v * v * v));
    let theta_sq: f64 = phase_frequencies(bc, rho.particle_count()).iter().map(|t| t * t).sum();
    grad + theta_sq / (n * n * n) * cube
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KineticBound {
    pub t_slater: f64,
    /// `1 + ‖√ρ‖²_{H¹}`.
    pub bound_rhs: f64,
}

impl KineticBound {
    pub fn ratio(&self) -> f64 {
        self.t_slater / self.bound_rhs
    }
}

pub fn kinetic_bound_check(rho: &Density, bc: BoundaryCondition) -> Result<KineticBound> {
    if let Some((node, &value)) = rho.rho().values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeDensity { node, value });
    }
    Ok(KineticBound {
        t_slater: slater_kinetic_energy(rho, bc),
        bound_rhs: 1.0 + h1_norm_sq(&sqrt_density(rho)),
    })
}
