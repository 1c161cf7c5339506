//! Closed forms: mass density, SI-scale spreads and variances, energy growth,
//! and the bundled phenomenology tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::params::{NUCLEON_MASS_KG, QMUPL_LAMBDA0_SI};
use crate::units::HBAR_SI;
use crate::wavefunction::GridWavefunction;

pub const EARTH_MASS_KG: f64 = 5.97e24;
/// Quoted linear-regime variance rate for a 1 g object, m²/s.
pub const GRAM_VARIANCE_RATE: f64 = 1.1e-31;
/// Quoted linear-regime variance rate for the Earth, m²/s.
pub const EARTH_VARIANCE_RATE: f64 = 1.8e-59;
/// Time after which the trajectory variance is taken to grow cubically, s.
pub const VARIANCE_CROSSOVER_S: f64 = 2.0e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassDensityField {
    pub grid: SpatialGrid,
    /// Mass per unit length at each grid point.
    pub values: Vec<f64>,
    pub masses: Vec<f64>,
}

impl MassDensityField {
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }
}

/// `Σ_n m_n · (marginal |ψ|² of particle n)`.
pub fn mass_density(psi: &GridWavefunction, masses: &[f64]) -> Result<MassDensityField> {
    if masses.len() != psi.particles() {
        return Err(CollapseError::Shape(format!(
            "{} masses for a {}-particle state",
            masses.len(),
            psi.particles()
        )));
    }
    if masses.iter().any(|m| !(*m > 0.0)) {
        return Err(CollapseError::Config("masses must be positive".into()));
    }
    let n = psi.grid().n_points();
    let norm = psi.norm_sqr();
    let mut values = vec![0.0; n];
    for (p, &m) in masses.iter().enumerate() {
        for (v, rho) in values.iter_mut().zip(psi.marginal_density(p)) {
            *v += m * rho / norm;
        }
    }
    Ok(MassDensityField {
        grid: *psi.grid(),
        values,
        masses: masses.to_vec(),
    })
}

fn check_mass(mass_kg: f64) -> Result<()> {
    if mass_kg > 0.0 && mass_kg.is_finite() {
        Ok(())
    } else {
        Err(CollapseError::Unit(format!(
            "mass must be a positive number of kg, got {mass_kg}"
        )))
    }
}

/// Stationary position spread of a free object of mass `M` under continuous
/// localization with the standard λ₀: `(ħ m₀ / (λ₀ M²))^{1/4} / √2`, about
/// `1.45×10⁻¹⁵ m · √(1 kg / M)`.
pub fn asymptotic_spread_si(mass_kg: f64) -> Result<f64> {
    check_mass(mass_kg)?;
    Ok((HBAR_SI * NUCLEON_MASS_KG / (QMUPL_LAMBDA0_SI * mass_kg * mass_kg)).powf(0.25) / std::f64::consts::SQRT_2)
}

/// Mass exponent `k` in `V ∝ M^{-k}` through the two quoted rate values.
pub fn variance_mass_exponent() -> f64 {
    (EARTH_VARIANCE_RATE / GRAM_VARIANCE_RATE).ln() / (1e-3 / EARTH_MASS_KG).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceRegime {
    Linear,
    /// Beyond the crossover: cubic continuation of the linear value.
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value_m2: f64,
    pub regime: VarianceRegime,
    pub mass_exponent: f64,
}

/// `1.1×10⁻³¹ m² · (t/s) · (10⁻³ kg / M)^k`, continued as `t³` past the crossover.
pub fn trajectory_variance_si(mass_kg: f64, t_s: f64) -> Result<VarianceEstimate> {
    check_mass(mass_kg)?;
    if !(t_s >= 0.0) {
        return Err(CollapseError::Unit(format!("time must be non-negative, got {t_s}")));
    }
    let k = variance_mass_exponent();
    let rate = GRAM_VARIANCE_RATE * (1e-3 / mass_kg).powf(k);
    let (value_m2, regime) = if t_s < VARIANCE_CROSSOVER_S {
        (rate * t_s, VarianceRegime::Linear)
    } else {
        (
            rate * VARIANCE_CROSSOVER_S * (t_s / VARIANCE_CROSSOVER_S).powi(3),
            VarianceRegime::Cubic,
        )
    };
    Ok(VarianceEstimate {
        value_m2,
        regime,
        mass_exponent: k,
    })
}

/// Mean energy gain per unit time of a free particle under continuous
/// position localization, `λ/(2m)` with ħ = 1.
pub fn energy_growth_rate(lambda: f64, mass: f64) -> f64 {
    lambda / (2.0 * mass)
}

/// Where a table entry comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Quoted decoherence-rate comparison (dust grain vs large molecule).
    DecoherenceTable,
    /// Quoted experimental and cosmological upper bounds on λ₀.
    BoundsTable,
    /// Standard parameter values of the jump model.
    StandardParameters,
    /// Quoted asymptotic-spread values.
    AsymptoticSpread,
    Computed,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Self::DecoherenceTable => "decoherence_table",
            Self::BoundsTable => "bounds_table",
            Self::StandardParameters => "standard_parameters",
            Self::AsymptoticSpread => "asymptotic_spread",
            Self::Computed => "computed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenoRow {
    pub label: String,
    pub value: f64,
    /// Order-of-magnitude uncertainty, in decades, when quoted as `10^{x±d}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty_decades: Option<u32>,
    pub units: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenoTable {
    pub rows: Vec<PhenoRow>,
}

fn row(label: &str, value: f64, units: &str, source: Source) -> PhenoRow {
    PhenoRow {
        label: label.into(),
        value,
        uncertainty_decades: None,
        units: units.into(),
        source,
    }
}

const DECOHERENCE: [(&str, f64, f64); 6] = [
    ("air molecules", 1e36, 1e30),
    ("laboratory vacuum", 1e23, 1e17),
    ("sunlight on earth", 1e21, 1e13),
    ("300K photons", 1e19, 1e6),
    ("cosmic background radiation", 1e6, 1e-12),
    ("COLLAPSE", 1e7, 1e-2),
];

const BOUNDS: [(&str, f64, Option<u32>); 9] = [
    ("fullerene diffraction", 5e12, None),
    ("decay of supercurrents", 1e14, None),
    ("radiation by free electrons", 1e12, None),
    ("11 keV photons from Ge", 3e14, None),
    ("proton decay", 1e18, None),
    ("hydrogen dissociation", 4e17, None),
    ("heating of protons", 1e12, None),
    ("intergalactic medium", 1e8, Some(1)),
    ("interstellar dust grains", 1e15, None),
];

/// Bundled reference values plus `λ_n`, stationary spread and linear-regime
/// variance rate for each requested mass.
pub fn pheno_tables(masses_kg: &[f64]) -> Result<PhenoTable> {
    let mut rows = vec![
        row(
            "jump rate lambda",
            crate::params::GRW_LAMBDA_SI,
            "s^-1",
            Source::StandardParameters,
        ),
        row("localization alpha", 1e10, "cm^-2", Source::StandardParameters),
        row(
            "coupling lambda0",
            QMUPL_LAMBDA0_SI,
            "m^-2 s^-1",
            Source::StandardParameters,
        ),
        row("reference mass m0", NUCLEON_MASS_KG, "kg", Source::StandardParameters),
    ];
    for (cause, dust, molecule) in DECOHERENCE {
        rows.push(row(
            &format!("{cause} / dust particle 1e-3 cm"),
            dust,
            "cm^-2 s^-1",
            Source::DecoherenceTable,
        ));
        rows.push(row(
            &format!("{cause} / large molecule 1e-6 cm"),
            molecule,
            "cm^-2 s^-1",
            Source::DecoherenceTable,
        ));
    }
    for (label, factor, unc) in BOUNDS {
        let mut r = row(
            &format!("upper bound: {label}"),
            factor,
            "x lambda0",
            Source::BoundsTable,
        );
        r.uncertainty_decades = unc;
        rows.push(r);
    }
    let mut adler = row(
        "latent-image enhancement of lambda0",
        2e9,
        "x lambda0",
        Source::BoundsTable,
    );
    adler.uncertainty_decades = Some(2);
    rows.push(adler);
    rows.push(row("stationary spread / 1 g", 4.6e-14, "m", Source::AsymptoticSpread));
    rows.push(row("stationary spread / Earth", 5.9e-28, "m", Source::AsymptoticSpread));
    for &m in masses_kg {
        check_mass(m)?;
        rows.push(row(
            &format!("lambda_n / {m:e} kg"),
            crate::params::coupling_constant(m, NUCLEON_MASS_KG, QMUPL_LAMBDA0_SI),
            "m^-2 s^-1",
            Source::Computed,
        ));
        rows.push(row(
            &format!("stationary spread / {m:e} kg"),
            asymptotic_spread_si(m)?,
            "m",
            Source::Computed,
        ));
        rows.push(row(
            &format!("variance rate / {m:e} kg"),
            trajectory_variance_si(m, 1.0)?.value_m2,
            "m^2 s^-1",
            Source::Computed,
        ));
    }
    Ok(PhenoTable { rows })
}

impl PhenoTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
        let mut s = String::new();
        for r in &self.rows {
            let value = match r.uncertainty_decades {
                Some(d) => format!("{:e} (±{d} dec)", r.value),
                None => format!("{:e}", r.value),
            };
            let _ = writeln!(
                s,
                "{:<width$}  {:>22}  {:<12}  {}",
                r.label,
                value,
                r.units,
                r.source.tag()
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_prefactor() {
        let s = asymptotic_spread_si(1.0).unwrap();
        assert!((s / 1.454e-15 - 1.0).abs() < 2e-3, "{s}");
        assert!(asymptotic_spread_si(0.0).is_err());
    }

    #[test]
    fn variance_exponent_near_one() {
        let k = variance_mass_exponent();
        assert!((k - 1.0).abs() < 0.01, "{k}");
        assert_eq!(trajectory_variance_si(1e-3, 0.0).unwrap().value_m2, 0.0);
        let late = trajectory_variance_si(1e-3, 4e4).unwrap();
        assert_eq!(late.regime, VarianceRegime::Cubic);
        assert!((late.value_m2 / (1.1e-31 * 2e4 * 8.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_rate() {
        assert_eq!(energy_growth_rate(1.0, 1.0), 0.5);
        assert_eq!(energy_growth_rate(0.0, 3.0), 0.0);
        assert_eq!(energy_growth_rate(2.0, 1.0), 2.0 * energy_growth_rate(1.0, 1.0));
    }

    #[test]
    fn every_row_tagged() {
        let t = pheno_tables(&[1e-3]).unwrap();
        let collapse = t
            .rows
            .iter()
            .find(|r| r.label == "COLLAPSE / dust particle 1e-3 cm")
            .unwrap();
        assert_eq!(collapse.value, 1e7);
        assert_eq!(collapse.source, Source::DecoherenceTable);
        assert!(t
            .rows
            .iter()
            .any(|r| r.label == "upper bound: proton decay" && r.value == 1e18));
        assert_eq!(t.rows.iter().filter(|r| r.source == Source::Computed).count(), 3);
    }
}
