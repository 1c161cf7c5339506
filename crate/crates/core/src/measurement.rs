//! Von Neumann measurement of a two-level micro system by a pointer whose
//! centre of mass obeys the continuous localization dynamics.
//!
//! The joint state is kept as two pointer wavefunctions, one per micro
//! eigenstate `|+⟩, |−⟩`. During the coupling window the pointer in branch `b`
//! feels `H_b = P²/2M + κ s_b P`, which drifts it by `κ s_b T_c`. Both branches
//! share the localization noise, since it couples to the pointer position only.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::hamiltonian::{HamiltonianKind, HamiltonianSpec, Propagator};
use crate::noise::NoiseStream;
use crate::qmupl::{stationary_width_parameter, stochastic_guard, Basin, SettlingClassifier};
use crate::stats::{binomial_se, chi_square, ChiSquareTest};
use crate::wavefunction::{GridWavefunction, DEGENERATE_NORM};

/// Consecutive steps a pointer must stay in one basin to count as settled.
pub const SETTLE_STEPS: usize = 100;
/// Micro fidelity regarded as an eigenstate.
pub const FIDELITY_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementModel {
    /// Micro amplitudes on `|+⟩` and `|−⟩` as `[re, im]`.
    pub amplitudes: [[f64; 2]; 2],
    pub pointer_mass: f64,
    pub lambda_cm: f64,
    pub kappa: f64,
    pub micro_eigenvalues: [f64; 2],
    pub coupling_window: f64,
    pub horizon: f64,
    pub dt: f64,
    pub grid: SpatialGrid,
    pub ready_center: f64,
    /// Width parameter `a` of the ready state `exp(-a (x - c)²)` as `[re, im]`.
    pub ready_width: [f64; 2],
    /// Keep every `path_stride`-th step in the recorded pointer path.
    pub path_stride: usize,
}

impl MeasurementModel {
    /// Desk-scale preset: collapse completes within the coupling window and the
    /// pointer ends well inside one of two basins 8 units apart.
    pub fn pointer_default(plus_weight: f64) -> Result<Self> {
        let pointer_mass = 10.0;
        let lambda_cm = 1.0;
        let a = stationary_width_parameter(lambda_cm, pointer_mass);
        Self {
            amplitudes: weights_to_amplitudes(plus_weight),
            pointer_mass,
            lambda_cm,
            kappa: 8.0,
            micro_eigenvalues: [1.0, -1.0],
            coupling_window: 0.5,
            horizon: 0.75,
            dt: 2.5e-4,
            grid: SpatialGrid::centered(6.0, 64)?,
            ready_center: 0.0,
            ready_width: [a.re, a.im],
            path_stride: 30,
        }
        .validated()
    }

    /// Strong-localization preset: the superposition is reduced before the
    /// branches separate appreciably, so the pointer spread stays far below
    /// the outcome separation at all times. The heavy pointer keeps the
    /// momentum diffusion from the strong localization out of its velocity.
    /// Much more expensive per run.
    pub fn pointer_sharp(plus_weight: f64) -> Result<Self> {
        let pointer_mass = 100.0;
        let lambda_cm = 400.0;
        let a = stationary_width_parameter(lambda_cm, pointer_mass);
        Self {
            amplitudes: weights_to_amplitudes(plus_weight),
            pointer_mass,
            lambda_cm,
            kappa: 4.0,
            micro_eigenvalues: [1.0, -1.0],
            coupling_window: 1.0,
            horizon: 1.0,
            dt: 1.25e-6,
            grid: SpatialGrid::centered(4.4, 256)?,
            ready_center: 0.0,
            ready_width: [a.re, a.im],
            path_stride: 2000,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn plus_amplitude(&self) -> Complex64 {
        Complex64::new(self.amplitudes[0][0], self.amplitudes[0][1])
    }

    pub fn minus_amplitude(&self) -> Complex64 {
        Complex64::new(self.amplitudes[1][0], self.amplitudes[1][1])
    }

    /// Pointer positions `[Q₋, Q₊]` reached at the end of the coupling window.
    pub fn outcome_positions(&self) -> [f64; 2] {
        let shift = |s: f64| self.ready_center + self.kappa * s * self.coupling_window;
        let plus = shift(self.micro_eigenvalues[0]);
        let minus = shift(self.micro_eigenvalues[1]);
        [minus, plus]
    }

    pub fn separation(&self) -> f64 {
        let [m, p] = self.outcome_positions();
        (p - m).abs()
    }

    pub fn ready_state(&self) -> Result<GridWavefunction> {
        let a = Complex64::new(self.ready_width[0], self.ready_width[1]);
        GridWavefunction::complex_gaussian(self.grid, self.ready_center, a, 0.0)
    }

    pub fn ready_spread(&self) -> f64 {
        (1.0 / (4.0 * self.ready_width[0])).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.plus_amplitude().norm_sqr() + self.minus_amplitude().norm_sqr();
        if (w - 1.0).abs() > 1e-9 {
            return Err(CollapseError::Config(format!("|a|² + |b|² = {w}, expected 1")));
        }
        for (name, v) in [
            ("pointer_mass", self.pointer_mass),
            ("dt", self.dt),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CollapseError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_cm >= 0.0) || !(self.kappa >= 0.0) || !(self.coupling_window >= 0.0) {
            return Err(CollapseError::Config(
                "lambda_cm, kappa and coupling_window must be ≥ 0".into(),
            ));
        }
        if self.coupling_window > self.horizon {
            return Err(CollapseError::Config("coupling window longer than the horizon".into()));
        }
        if self.micro_eigenvalues[0] == self.micro_eigenvalues[1] {
            return Err(CollapseError::Config("micro eigenvalues must differ".into()));
        }
        if !(self.ready_width[0] > 0.0) {
            return Err(CollapseError::Config(
                "ready-state width needs a positive real part".into(),
            ));
        }
        if self.path_stride == 0 {
            return Err(CollapseError::Config("path_stride must be at least 1".into()));
        }
        if self.kappa > 0.0 && self.ready_spread() >= self.separation() / 4.0 {
            return Err(CollapseError::Config(format!(
                "ready spread {} is not small against the outcome separation {}",
                self.ready_spread(),
                self.separation()
            )));
        }
        stochastic_guard(&self.grid, self.lambda_cm, self.dt)?;
        crate::hamiltonian::kinetic_guard(&self.grid, &self.hamiltonian()?, self.dt)
    }

    fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        HamiltonianSpec::new(
            HamiltonianKind::MeasurementCoupling {
                kappa: self.kappa,
                micro_eigenvalues: self.micro_eigenvalues,
            },
            vec![self.pointer_mass],
        )
    }
}

fn weights_to_amplitudes(plus_weight: f64) -> [[f64; 2]; 2] {
    [[plus_weight.sqrt(), 0.0], [(1.0 - plus_weight).max(0.0).sqrt(), 0.0]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Plus,
    Minus,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub mean_q: f64,
    pub sigma_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub outcome: Outcome,
    /// Weight of the micro eigenstate matching the outcome (0 if indeterminate).
    pub fidelity: f64,
    /// Final weight of `|+⟩`.
    pub plus_weight: f64,
    /// First time one branch carried more than 99% of the weight.
    pub collapse_time: Option<f64>,
    pub max_sigma_q: f64,
    pub final_sigma_q: f64,
    pub path: Vec<PathPoint>,
}

fn joint_moments(grid: &SpatialGrid, branches: &[Vec<Complex64>; 2]) -> (f64, f64, f64, f64) {
    let (mut w0, mut w1, mut wx, mut wxx) = (0.0, 0.0, 0.0, 0.0);
    for (b, amps) in branches.iter().enumerate() {
        for (i, z) in amps.iter().enumerate() {
            let p = z.norm_sqr();
            let x = grid.x(i);
            if b == 0 {
                w0 += p;
            } else {
                w1 += p;
            }
            wx += p * x;
            wxx += p * x * x;
        }
    }
    let w = w0 + w1;
    let mean = wx / w;
    let var = (wxx / w - mean * mean).max(0.0);
    (mean, var.sqrt(), w0 / w, w)
}

pub fn run_measurement(model: &MeasurementModel, noise: &mut NoiseStream) -> Result<OutcomeRecord> {
    model.validate()?;
    let grid = model.grid;
    let dx = grid.dx();
    let ready = model.ready_state()?;
    let a = model.plus_amplitude();
    let b = model.minus_amplitude();
    let mut branches = [
        ready.amplitudes().iter().map(|z| z * a).collect::<Vec<_>>(),
        ready.amplitudes().iter().map(|z| z * b).collect::<Vec<_>>(),
    ];
    let h = model.hamiltonian()?;
    let free = HamiltonianSpec::free(model.pointer_mass);
    let mut coupled = [
        Propagator::with_branch(grid, &h, model.dt, Some(0))?,
        Propagator::with_branch(grid, &h, model.dt, Some(1))?,
    ];
    let mut after = Propagator::new(grid, &free, model.dt)?;

    let steps = (model.horizon / model.dt).round() as usize;
    let window = (model.coupling_window / model.dt).round() as usize;
    let targets = model.outcome_positions();
    let mut classifier = SettlingClassifier::by_position(targets, SETTLE_STEPS);
    let sqrt_l = model.lambda_cm.sqrt();
    let xs = grid.positions();
    let mut factor = vec![0.0; grid.n_points()];

    let (mut mean, mut sigma, mut plus, _) = joint_moments(&grid, &branches);
    let mut max_sigma = sigma;
    let mut collapse_time = None;
    let mut path = vec![PathPoint {
        t: 0.0,
        mean_q: mean,
        sigma_q: sigma,
    }];

    for step in 1..=steps {
        let dw = noise.wiener(model.dt);
        if model.lambda_cm > 0.0 {
            for (f, x) in factor.iter_mut().zip(&xs) {
                let u = x - mean;
                *f = 1.0 + sqrt_l * u * dw - 0.5 * model.lambda_cm * u * u * model.dt;
            }
            for amps in branches.iter_mut() {
                for (z, f) in amps.iter_mut().zip(&factor) {
                    *z *= f;
                }
            }
        }
        for (bi, amps) in branches.iter_mut().enumerate() {
            if step <= window {
                coupled[bi].step(amps);
            } else {
                after.step(amps);
            }
        }
        let (m, s, p, w) = joint_moments(&grid, &branches);
        let norm = (w * dx).sqrt();
        if !(norm > DEGENERATE_NORM) || !norm.is_finite() {
            return Err(CollapseError::DegenerateState {
                norm,
                threshold: DEGENERATE_NORM,
            });
        }
        let scale = 1.0 / norm;
        for amps in branches.iter_mut() {
            for z in amps.iter_mut() {
                *z *= scale;
            }
        }
        mean = m;
        sigma = s;
        plus = p;
        max_sigma = max_sigma.max(sigma);
        if collapse_time.is_none() && plus.max(1.0 - plus) > FIDELITY_THRESHOLD {
            collapse_time = Some(step as f64 * model.dt);
        }
        classifier.observe(mean, sigma);
        if step % model.path_stride == 0 || step == steps {
            path.push(PathPoint {
                t: step as f64 * model.dt,
                mean_q: mean,
                sigma_q: sigma,
            });
        }
    }

    let (outcome, fidelity) = match classifier.settled() {
        Some(Basin::Right) => (Outcome::Plus, plus),
        Some(Basin::Left) => (Outcome::Minus, 1.0 - plus),
        None => (Outcome::Indeterminate, 0.0),
    };
    Ok(OutcomeRecord {
        outcome,
        fidelity,
        plus_weight: plus,
        collapse_time,
        max_sigma_q: max_sigma,
        final_sigma_q: sigma,
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub max_sigma_q: f64,
    pub final_sigma_q: f64,
    pub threshold: f64,
    pub localized: bool,
    pub start_q: f64,
    pub end_q: f64,
    /// Recorded path points with `σ_Q` above the threshold.
    pub excursions: usize,
}

/// Localization summary against the threshold `separation / 20`.
pub fn pointer_localization_report(record: &OutcomeRecord, model: &MeasurementModel) -> LocalizationReport {
    let threshold = model.separation() / 20.0;
    LocalizationReport {
        max_sigma_q: record.max_sigma_q,
        final_sigma_q: record.final_sigma_q,
        threshold,
        localized: record.max_sigma_q < threshold,
        start_q: record.path.first().map_or(f64::NAN, |p| p.mean_q),
        end_q: record.path.last().map_or(f64::NAN, |p| p.mean_q),
        excursions: record.path.iter().filter(|p| p.sigma_q >= threshold).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornStatistics {
    pub trajectories: usize,
    pub plus: usize,
    pub minus: usize,
    pub indeterminate: usize,
    pub expected_plus: f64,
    pub plus_frequency: f64,
    pub plus_standard_error: f64,
    /// Deviation from the expected frequency in units of the binomial error.
    pub z_score: f64,
    pub chi_square: ChiSquareTest,
    pub indeterminate_fraction: f64,
    /// Fraction of classified runs whose micro fidelity exceeds 0.99.
    pub high_fidelity_fraction: f64,
}

pub fn born_statistics(records: &[OutcomeRecord], model: &MeasurementModel) -> Result<BornStatistics> {
    let n = records.len();
    if n == 0 {
        return Err(CollapseError::Config("no outcome records".into()));
    }
    let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
    let (plus, minus, indeterminate) = (
        count(Outcome::Plus),
        count(Outcome::Minus),
        count(Outcome::Indeterminate),
    );
    let expected_plus = model.plus_amplitude().norm_sqr();
    let plus_frequency = plus as f64 / n as f64;
    let se = binomial_se(expected_plus, n);
    let classified = plus + minus;
    let chi = chi_square(
        &[plus as f64, minus as f64],
        &[
            expected_plus * classified as f64,
            (1.0 - expected_plus) * classified as f64,
        ],
        0,
    )?;
    let good = records
        .iter()
        .filter(|r| r.outcome != Outcome::Indeterminate && r.fidelity > FIDELITY_THRESHOLD)
        .count();
    Ok(BornStatistics {
        trajectories: n,
        plus,
        minus,
        indeterminate,
        expected_plus,
        plus_frequency,
        plus_standard_error: se,
        z_score: if se > 0.0 {
            (plus_frequency - expected_plus) / se
        } else {
            0.0
        },
        chi_square: chi,
        indeterminate_fraction: indeterminate as f64 / n as f64,
        high_fidelity_fraction: if classified > 0 {
            good as f64 / classified as f64
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let m = MeasurementModel::pointer_default(0.3).unwrap();
        assert_eq!(m.outcome_positions(), [-4.0, 4.0]);
        assert!((m.plus_amplitude().norm_sqr() - 0.3).abs() < 1e-15);
        assert!(MeasurementModel::pointer_sharp(0.5).is_ok());
        let mut bad = m.clone();
        bad.amplitudes[0][0] = 0.9;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn definite_input_gives_definite_outcome() {
        let m = MeasurementModel::pointer_default(1.0).unwrap();
        let r = run_measurement(&m, &mut NoiseStream::new(2, 0)).unwrap();
        assert_eq!(r.outcome, Outcome::Plus);
        assert!(r.fidelity > 0.99);
        let last = r.path.last().unwrap();
        assert!((last.mean_q - 4.0).abs() < 0.5);
    }

    #[test]
    fn deterministic_per_stream() {
        let m = MeasurementModel::pointer_default(0.5).unwrap();
        let a = run_measurement(&m, &mut NoiseStream::new(4, 17)).unwrap();
        let b = run_measurement(&m, &mut NoiseStream::new(4, 17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncoupled_pointer_stays_put() {
        let mut m = MeasurementModel::pointer_default(0.5).unwrap();
        m.kappa = 0.0;
        let r = run_measurement(&m, &mut NoiseStream::new(1, 1)).unwrap();
        let plateau = m.ready_spread();
        assert!((r.final_sigma_q - plateau).abs() / plateau < 0.02);
        assert!(r.path.iter().all(|p| p.mean_q.abs() < 0.5));
    }
}
