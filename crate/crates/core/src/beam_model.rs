//! Material data and the energy densities of the beam.
//!
//! The Lagrangian density is `K(ξ) - Φ(η) - Π(g)` with
//!
//! * `K(ξ) = ½⟨𝕁ξ, ξ⟩`, `𝕁 = blockdiag(J, M I₃)`,
//! * `Φ(η) = ½⟨ℂ(η - E₆), η - E₆⟩`, `ℂ = blockdiag(C₂, C₁)`,
//! * `Π(g) = ⟨q, r⟩` for a constant force-per-length covector `q`.
//!
//! Both operators are diagonal for a homogeneous square section, so they are
//! stored as their diagonals.

use nalgebra::{Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::liegroup::{AlgebraVector, CoAlgebraVector, GroupElement};

/// Unstrained reference strain: no curvature, unit stretch along `d₃`.
pub const E6: AlgebraVector =
    AlgebraVector::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0));

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("Poisson ratio must lie in (-1, 0.5), got {0}")]
    PoissonOutOfRange(f64),
    #[error("grid must have at least two nodes in each direction (got {n_time} x {n_space})")]
    GridTooSmall { n_time: usize, n_space: usize },
}

/// Inputs for [`BeamParams::build`]. All SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialInput {
    pub rho: f64,
    pub side: f64,
    pub length: f64,
    pub young: f64,
    pub poisson: f64,
    pub gravity: Vector3<f64>,
    pub dt: f64,
    pub ds: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamParams {
    pub rho: f64,
    pub side: f64,
    pub length: f64,
    pub young: f64,
    pub poisson: f64,
    pub shear: f64,
    /// Mass per unit length `M = ρ a²`.
    pub mass_per_length: f64,
    /// Diagonal of the section inertia per unit length `J = ρ diag(I₁, I₂, I₁+I₂)`.
    pub inertia: Vector3<f64>,
    /// `C₁ = diag(GA, GA, EA)`.
    pub c1: Vector3<f64>,
    /// `C₂ = diag(EI₁, EI₂, GI)`.
    pub c2: Vector3<f64>,
    /// Constant covector `q` of the potential `Π(g) = ⟨q, r⟩`.
    pub gravity: Vector3<f64>,
    pub dt: f64,
    pub ds: f64,
    /// Number of dynamic time nodes `N` (rows `j = 0..N-1`).
    pub n_time: usize,
    /// Number of dynamic space nodes `A` (columns `a = 0..A-1`).
    pub n_space: usize,
}

fn positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonPositiveParam { name, value })
    }
}

impl BeamParams {
    pub fn build(input: &MaterialInput) -> Result<Self, ModelError> {
        let rho = positive("rho", input.rho)?;
        let side = positive("side", input.side)?;
        let length = positive("length", input.length)?;
        let young = positive("young", input.young)?;
        let dt = positive("dt", input.dt)?;
        let ds = positive("ds", input.ds)?;
        let duration = positive("duration", input.duration)?;
        if !(input.poisson > -1.0 && input.poisson < 0.5) {
            return Err(ModelError::PoissonOutOfRange(input.poisson));
        }
        let n_time = (duration / dt).round() as usize;
        let n_space = (length / ds).round() as usize;
        if n_time < 2 || n_space < 2 {
            return Err(ModelError::GridTooSmall { n_time, n_space });
        }

        let shear = young / (2.0 * (1.0 + input.poisson));
        let area = side * side;
        let i1 = side.powi(4) / 12.0;
        let polar = 2.0 * i1;
        Ok(Self {
            rho,
            side,
            length,
            young,
            poisson: input.poisson,
            shear,
            mass_per_length: rho * area,
            inertia: Vector3::new(rho * i1, rho * i1, rho * polar),
            c1: Vector3::new(shear * area, shear * area, young * area),
            c2: Vector3::new(young * i1, young * i1, shear * polar),
            gravity: input.gravity,
            dt,
            ds,
            n_time,
            n_space,
        })
    }

    /// Same material on a different grid.
    pub fn with_grid(&self, dt: f64, ds: f64, n_time: usize, n_space: usize) -> Self {
        Self {
            dt,
            ds,
            n_time,
            n_space,
            ..self.clone()
        }
    }

    pub fn inertia_diag(&self) -> Vector6<f64> {
        let m = self.mass_per_length;
        Vector6::new(self.inertia.x, self.inertia.y, self.inertia.z, m, m, m)
    }

    pub fn stiffness_diag(&self) -> Vector6<f64> {
        Vector6::new(
            self.c2.x, self.c2.y, self.c2.z, self.c1.x, self.c1.y, self.c1.z,
        )
    }

    /// `𝕁` as a 6×6 matrix.
    pub fn inertia_operator(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&self.inertia_diag())
    }

    /// `ℂ` as a 6×6 matrix.
    pub fn stiffness_operator(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&self.stiffness_diag())
    }

    pub fn kinetic(&self, xi: &AlgebraVector) -> f64 {
        0.5 * self.d_kinetic(xi).pair(xi)
    }

    pub fn elastic(&self, eta: &AlgebraVector) -> f64 {
        0.5 * self.d_elastic(eta).pair(&(*eta - E6))
    }

    pub fn potential(&self, g: &GroupElement) -> f64 {
        self.gravity.dot(&g.pos)
    }

    /// `∂K/∂ξ = 𝕁ξ`.
    pub fn d_kinetic(&self, xi: &AlgebraVector) -> CoAlgebraVector {
        CoAlgebraVector::new(
            self.inertia.component_mul(&xi.ang),
            xi.lin * self.mass_per_length,
        )
    }

    /// `∂Φ/∂η = ℂ(η - E₆)`.
    pub fn d_elastic(&self, eta: &AlgebraVector) -> CoAlgebraVector {
        let strain = *eta - E6;
        CoAlgebraVector::new(
            self.c2.component_mul(&strain.ang),
            self.c1.component_mul(&strain.lin),
        )
    }

    /// Left-trivialized gradient `g⁻¹ D_g Π = (0, Λᵀ q)`.
    pub fn d_potential(&self, g: &GroupElement) -> CoAlgebraVector {
        CoAlgebraVector::new(Vector3::zeros(), g.rot.transpose() * self.gravity)
    }

    /// `⟨ℂ(η - E₆), E₆⟩`, the axial force, which appears in the space energy.
    pub fn axial_force(&self, eta: &AlgebraVector) -> f64 {
        self.d_elastic(eta).pair(&E6)
    }

    pub fn has_potential(&self) -> bool {
        self.gravity != Vector3::zeros()
    }

    /// Lamé parameters `(λ, μ)` of the isotropic material.
    pub fn lame(&self) -> (f64, f64) {
        let nu = self.poisson;
        let lambda = self.young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        (lambda, self.shear)
    }

    /// Dilational wave speed `√((λ + 2μ)/ρ)`.
    pub fn dilational_wave_speed(&self) -> f64 {
        let (lambda, mu) = self.lame();
        ((lambda + 2.0 * mu) / self.rho).sqrt()
    }
}
