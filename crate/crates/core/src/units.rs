//! Simulation units with ħ = 1 and m₀ = 1.

use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};

pub const HBAR_SI: f64 = 1.054_571_817e-34;

/// Dimension exponents over (length, time, mass).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub length: i32,
    pub time: i32,
    pub mass: i32,
}

impl Dimension {
    pub const fn new(length: i32, time: i32, mass: i32) -> Self {
        Self { length, time, mass }
    }
    pub const DIMENSIONLESS: Self = Self::new(0, 0, 0);
    pub const LENGTH: Self = Self::new(1, 0, 0);
    pub const TIME: Self = Self::new(0, 1, 0);
    pub const MASS: Self = Self::new(0, 0, 1);
    pub const RATE: Self = Self::new(0, -1, 0);
    /// λ₀ of the position-coupling model: length⁻² time⁻¹.
    pub const LOCALIZATION_RATE: Self = Self::new(-2, -1, 0);
    pub const INVERSE_AREA: Self = Self::new(-2, 0, 0);
    pub const ACTION: Self = Self::new(2, -1, 1);
    pub const ENERGY: Self = Self::new(2, -2, 1);
    pub const AREA: Self = Self::new(2, 0, 0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub dim: Dimension,
}

impl Quantity {
    pub fn new(value: f64, dim: Dimension) -> Self {
        Self { value, dim }
    }
}

/// Scales (SI per unit) for length, time and mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSystem {
    pub length_scale: f64,
    pub time_scale: f64,
    pub mass_scale: f64,
}

impl UnitSystem {
    pub const SI: Self = Self {
        length_scale: 1.0,
        time_scale: 1.0,
        mass_scale: 1.0,
    };

    /// Units in which ħ = 1 and the reference mass is 1, given a length scale in metres.
    pub fn natural(length_scale_m: f64, reference_mass_kg: f64) -> Self {
        Self {
            length_scale: length_scale_m,
            time_scale: reference_mass_kg * length_scale_m * length_scale_m / HBAR_SI,
            mass_scale: reference_mass_kg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("length_scale", self.length_scale),
            ("time_scale", self.time_scale),
            ("mass_scale", self.mass_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CollapseError::Unit(format!("{n} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// SI value of one unit of `dim` in this system.
    pub fn si_factor(&self, dim: Dimension) -> f64 {
        self.length_scale.powi(dim.length) * self.time_scale.powi(dim.time) * self.mass_scale.powi(dim.mass)
    }

    /// ħ expressed in this system.
    pub fn hbar(&self) -> f64 {
        HBAR_SI / self.si_factor(Dimension::ACTION)
    }
}

/// Re-express `q` (given in `from`) in the units of `to`, checking it has dimension `expected`.
pub fn convert(q: Quantity, expected: Dimension, from: &UnitSystem, to: &UnitSystem) -> Result<f64> {
    if q.dim != expected {
        return Err(CollapseError::Unit(format!(
            "dimension mismatch: have {:?}, expected {:?}",
            q.dim, expected
        )));
    }
    from.validate()?;
    to.validate()?;
    Ok(q.value * from.si_factor(q.dim) / to.si_factor(q.dim))
}
