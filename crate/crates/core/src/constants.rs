//! Physical constants (SI, CODATA 2018) used in physical-units mode.

use std::f64::consts::PI;

/// Vacuum permeability μ0 (T·m/A).
pub const MU_0: f64 = 1.256_637_062_12e-6;
/// Bohr magneton μ_B (J/T).
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Boltzmann constant k_B (J/K).
pub const K_B: f64 = 1.380_649e-23;
/// Reduced Planck constant ħ (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Free-electron gyromagnetic ratio γ_e (rad s⁻¹ T⁻¹), 2π·28.025 GHz/T.
pub const GAMMA_ELECTRON: f64 = 2.0 * PI * 28.024_951_4e9;

/// Table of constants carried by an environment so that scenes can be
/// evaluated against an explicit, recorded set of values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub mu_0: f64,
    pub mu_b: f64,
    pub k_b: f64,
    pub hbar: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            mu_0: MU_0,
            mu_b: MU_B,
            k_b: K_B,
            hbar: HBAR,
        }
    }
}

impl Constants {
    /// μ0/4π.
    pub fn dipole_prefactor(&self) -> f64 {
        self.mu_0 / (4.0 * PI)
    }
}
