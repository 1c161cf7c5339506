//! Collapse-model constants and per-particle coupling.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{CollapseError, Result};

/// Reference nucleon mass in kg.
pub const NUCLEON_MASS_KG: f64 = 1.7e-27;
/// Localization rate of the discrete jump process, s⁻¹.
pub const GRW_LAMBDA_SI: f64 = 1e-16;
/// Localization width parameter, m⁻² (10¹⁰ cm⁻²).
pub const ALPHA_SI: f64 = 1e14;
/// Continuous-localization coupling λ₀, m⁻² s⁻¹.
pub const QMUPL_LAMBDA0_SI: f64 = 1e-2;

/// Collapse parameters in one consistent unit system.
///
/// `gamma` is always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    /// Jump frequency λ of the discrete process (1/time).
    pub grw_lambda: f64,
    /// Position-coupling constant λ₀ (1/(length² time)).
    pub qmupl_lambda0: f64,
    /// Localization parameter α (1/length²).
    pub alpha: f64,
    /// Reference mass m₀.
    pub m0: f64,
}

impl CollapseParams {
    pub fn new(grw_lambda: f64, qmupl_lambda0: f64, alpha: f64, m0: f64) -> Result<Self> {
        let p = Self {
            grw_lambda,
            qmupl_lambda0,
            alpha,
            m0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Standard values in SI units (m, s, kg).
    pub fn si_defaults() -> Self {
        Self {
            grw_lambda: GRW_LAMBDA_SI,
            qmupl_lambda0: QMUPL_LAMBDA0_SI,
            alpha: ALPHA_SI,
            m0: NUCLEON_MASS_KG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("grw_lambda", self.grw_lambda),
            ("qmupl_lambda0", self.qmupl_lambda0),
            ("alpha", self.alpha),
            ("m0", self.m0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CollapseError::Config(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// CSL rate γ = λ(4π/α)^{3/2}.
    pub fn gamma(&self) -> f64 {
        gamma_from(self.grw_lambda, self.alpha)
    }
}

/// γ = λ(4π/α)^{3/2}, in the units of the inputs.
pub fn gamma_from(lambda: f64, alpha: f64) -> f64 {
    lambda * (4.0 * PI / alpha).powf(1.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub mass: f64,
    #[serde(default)]
    pub label: String,
}

impl ParticleSpec {
    pub fn new(mass: f64, label: impl Into<String>) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(CollapseError::Config(format!(
                "particle mass must be positive, got {mass}"
            )));
        }
        Ok(Self {
            mass,
            label: label.into(),
        })
    }
}

/// Mass-proportional coupling λ_n = (m_n/m₀)·λ₀.
pub fn coupling_constant(mass: f64, m0: f64, lambda0: f64) -> f64 {
    mass / m0 * lambda0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_is_linear_in_mass() {
        assert_eq!(coupling_constant(1.0, 1.0, 0.3), 0.3);
        assert_eq!(coupling_constant(2.0, 1.0, 0.3), 0.6);
        let si = CollapseParams::si_defaults();
        let l = coupling_constant(1e-3, si.m0, si.qmupl_lambda0);
        // (1e-3 / 1.7e-27) * 1e-2
        assert!((l / 5.882352941e21 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_values() {
        // cm units: λ = 1e-16 s⁻¹, α = 1e10 cm⁻² → ≈ 4.5e-30 cm³ s⁻¹
        let g = gamma_from(1e-16, 1e10);
        assert!((g - 4.4546e-30).abs() / g < 1e-3, "{g}");
        assert_eq!(gamma_from(0.0, 1.0), 0.0);
        assert!((gamma_from(2.5, 4.0 * PI) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(CollapseParams::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ParticleSpec::new(0.0, "x").is_err());
    }
}
