use collapsar::analytics::{
    asymptotic_spread_si, energy_growth_rate, pheno_tables, trajectory_variance_si, VarianceRegime, EARTH_MASS_KG,
};

const GOLDEN_TEXT: &str = include_str!("data/pheno_tables.txt");
const GOLDEN_JSON: &str = include_str!("data/pheno_tables.json");

#[test]
fn tables_are_byte_stable() {
    let t = pheno_tables(&[1e-3, EARTH_MASS_KG]).unwrap();
    assert_eq!(t.to_text(), GOLDEN_TEXT);
    assert_eq!(t.to_json(), GOLDEN_JSON);
}

#[test]
fn quoted_values_are_reproduced() {
    assert!((asymptotic_spread_si(1e-3).unwrap() / 4.6e-14 - 1.0).abs() < 0.01);
    assert!((asymptotic_spread_si(EARTH_MASS_KG).unwrap() / 5.9e-28 - 1.0).abs() < 0.01);
    let gram = trajectory_variance_si(1e-3, 1.0).unwrap();
    assert!((gram.value_m2 / 1.1e-31 - 1.0).abs() < 1e-12);
    assert_eq!(gram.regime, VarianceRegime::Linear);
    let earth = trajectory_variance_si(EARTH_MASS_KG, 1.0).unwrap();
    assert!((earth.value_m2 / 1.8e-59 - 1.0).abs() < 1e-9);
}

#[test]
fn variance_is_continuous_at_crossover() {
    let before = trajectory_variance_si(1e-3, 2e4 * (1.0 - 1e-12)).unwrap();
    let after = trajectory_variance_si(1e-3, 2e4).unwrap();
    assert_eq!(after.regime, VarianceRegime::Cubic);
    assert!((before.value_m2 / after.value_m2 - 1.0).abs() < 1e-9);
    let later = trajectory_variance_si(1e-3, 4e4).unwrap();
    assert!((later.value_m2 / after.value_m2 - 8.0).abs() < 1e-9);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(asymptotic_spread_si(0.0).is_err());
    assert!(asymptotic_spread_si(f64::NAN).is_err());
    assert!(trajectory_variance_si(1e-3, -1.0).is_err());
    assert!(pheno_tables(&[-1.0]).is_err());
}

#[test]
fn energy_rate_is_half_lambda_over_mass() {
    assert_eq!(energy_growth_rate(0.5, 2.0), 0.125);
}
