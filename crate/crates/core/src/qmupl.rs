//! Continuous position localization: Euler–Maruyama integration of
//!
//! `dψ = [-iH dt + Σ √λ_n (q_n - ⟨q_n⟩) dW_n - ½ Σ λ_n (q_n - ⟨q_n⟩)² dt] ψ`
//!
//! followed by renormalization, with `⟨q_n⟩` taken at the start of each step.
//! Rates are mass-proportional, `λ_n = m_n λ₀` (reference mass 1).
//!
//! Free single-particle runs may use a comoving frame: the grid then holds
//! `φ(y)` with `ψ(x) = e^{iPx} φ(x - X)` up to a global phase, and `(X, P)`
//! are re-centred every step. This keeps long runs inside a small box.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::hamiltonian::{energy_expectation, HamiltonianKind, HamiltonianSpec, Propagator};
use crate::noise::NoiseStream;
use crate::params::{coupling_constant, ParticleSpec};
use crate::wavefunction::GridWavefunction;

/// Bound on `dt · max_n λ_n · L²` (L = box half-width).
pub const STOCHASTIC_STEP_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Gaussian {
        center: f64,
        sigma: f64,
        momentum: f64,
    },
    /// The free-particle Gaussian that is stationary under the collapse dynamics.
    Stationary {
        center: f64,
        momentum: f64,
    },
    /// `√w₀ G(c₀) + √w₁ G(c₁)`, renormalized.
    Superposition {
        centers: [f64; 2],
        sigma: f64,
        weights: [f64; 2],
    },
}

/// Width parameter `a` of the stationary free Gaussian `exp(-a x²)` for rate λ and mass m:
/// the fixed point of `da/dt = λ - (2i/m) a²`.
pub fn stationary_width_parameter(lambda: f64, mass: f64) -> Complex64 {
    Complex64::new(0.5, -0.5) * (lambda * mass).sqrt()
}

/// Stationary position spread `(λ m)^{-1/4} / √2`.
pub fn stationary_spread(lambda: f64, mass: f64) -> f64 {
    (lambda * mass).powf(-0.25) / std::f64::consts::SQRT_2
}

impl InitialState {
    fn single(&self, grid: SpatialGrid, lambda: f64, mass: f64) -> Result<GridWavefunction> {
        match *self {
            Self::Gaussian {
                center,
                sigma,
                momentum,
            } => GridWavefunction::gaussian(grid, center, sigma, momentum),
            Self::Stationary { center, momentum } => {
                if !(lambda > 0.0) {
                    return Err(CollapseError::Config(
                        "stationary initial state needs a positive collapse rate".into(),
                    ));
                }
                GridWavefunction::complex_gaussian(grid, center, stationary_width_parameter(lambda, mass), momentum)
            }
            Self::Superposition {
                centers,
                sigma,
                weights,
            } => {
                if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(CollapseError::Config(
                        "superposition weights must be non-negative".into(),
                    ));
                }
                let a = GridWavefunction::gaussian(grid, centers[0], sigma, 0.0)?;
                let b = GridWavefunction::gaussian(grid, centers[1], sigma, 0.0)?;
                GridWavefunction::superpose(
                    &a,
                    Complex64::new(weights[0].sqrt(), 0.0),
                    &b,
                    Complex64::new(weights[1].sqrt(), 0.0),
                )
            }
        }
    }

    /// Product state, one copy of this profile per particle.
    pub fn build(&self, grid: SpatialGrid, masses: &[f64], lambdas: &[f64]) -> Result<GridWavefunction> {
        let singles = masses
            .iter()
            .zip(lambdas)
            .map(|(&m, &l)| self.single(grid, l, m))
            .collect::<Result<Vec<_>>>()?;
        if singles.len() == 1 {
            return Ok(singles.into_iter().next().unwrap());
        }
        let refs: Vec<&GridWavefunction> = singles.iter().collect();
        GridWavefunction::product(&refs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmuplConfig {
    pub grid: SpatialGrid,
    pub particles: Vec<ParticleSpec>,
    /// λ₀ in simulation units (per unit reference mass).
    pub lambda0: f64,
    pub hamiltonian: HamiltonianSpec,
    pub dt: f64,
    pub horizon: f64,
    /// Log every `stride` steps.
    pub stride: usize,
    pub initial: InitialState,
    /// Integrate in the comoving frame (free or zero Hamiltonian, one particle).
    #[serde(default)]
    pub comoving: bool,
}

impl QmuplConfig {
    pub fn lambdas(&self) -> Vec<f64> {
        self.particles
            .iter()
            .map(|p| coupling_constant(p.mass, 1.0, self.lambda0))
            .collect()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles.is_empty() {
            return Err(CollapseError::Config("at least one particle is required".into()));
        }
        if self.hamiltonian.particles() != self.particles.len() {
            return Err(CollapseError::Config(format!(
                "Hamiltonian has {} particle(s), config lists {}",
                self.hamiltonian.particles(),
                self.particles.len()
            )));
        }
        self.hamiltonian.validate()?;
        for (p, m) in self.particles.iter().zip(&self.hamiltonian.masses) {
            if !(p.mass > 0.0) || p.mass != *m {
                return Err(CollapseError::Config(format!(
                    "particle mass {} does not match Hamiltonian mass {m}",
                    p.mass
                )));
            }
        }
        if !(self.lambda0 >= 0.0) || !self.lambda0.is_finite() {
            return Err(CollapseError::Config(format!(
                "lambda0 must be finite and ≥ 0, got {}",
                self.lambda0
            )));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(CollapseError::Config("dt and horizon must be positive".into()));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(CollapseError::Config(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if self.stride == 0 {
            return Err(CollapseError::Config("stride must be at least 1".into()));
        }
        let max_lambda = self.lambdas().into_iter().fold(0.0, f64::max);
        stochastic_guard(&self.grid, max_lambda, self.dt)?;
        crate::hamiltonian::kinetic_guard(&self.grid, &self.hamiltonian, self.dt)?;
        if self.comoving
            && (self.particles.len() != 1
                || !matches!(self.hamiltonian.kind, HamiltonianKind::Free | HamiltonianKind::Zero))
        {
            return Err(CollapseError::Config(
                "comoving frame needs a single particle with a free or zero Hamiltonian".into(),
            ));
        }
        Ok(())
    }
}

pub fn stochastic_guard(grid: &SpatialGrid, max_lambda: f64, dt: f64) -> Result<()> {
    let l = grid.half_width();
    let s = dt * max_lambda * l * l;
    if s > STOCHASTIC_STEP_LIMIT * (1.0 + 1e-12) {
        return Err(CollapseError::StepSize(format!(
            "dt·λ·L² = {s:.3e} exceeds {STOCHASTIC_STEP_LIMIT}; reduce dt below {:.3e}",
            STOCHASTIC_STEP_LIMIT / (max_lambda * l * l)
        )));
    }
    Ok(())
}

/// State carried between steps: the grid wavefunction plus, in the comoving
/// frame, the position and momentum offsets.
#[derive(Debug, Clone)]
pub struct QmuplState {
    pub psi: GridWavefunction,
    pub frame: Option<(f64, f64)>,
}

impl QmuplState {
    pub fn lab(psi: GridWavefunction) -> Self {
        Self { psi, frame: None }
    }

    pub fn comoving(psi: GridWavefunction) -> Self {
        Self {
            psi,
            frame: Some((0.0, 0.0)),
        }
    }

    pub fn mean_q(&self, particle: usize) -> f64 {
        self.psi.expectation_position(particle) + self.frame.map_or(0.0, |f| f.0)
    }

    pub fn mean_p(&self, particle: usize) -> f64 {
        self.psi.expectation_momentum(particle) + self.frame.map_or(0.0, |f| f.1)
    }

    pub fn sigma_q(&self, particle: usize) -> f64 {
        self.psi.spread_position(particle)
    }

    pub fn sigma_p(&self, particle: usize) -> f64 {
        self.psi.spread_momentum(particle)
    }

    pub fn energy(&self, h: &HamiltonianSpec) -> Result<f64> {
        match self.frame {
            None => energy_expectation(&self.psi, h),
            Some((_, p_off)) => {
                if matches!(h.kind, HamiltonianKind::Zero) {
                    return Ok(0.0);
                }
                let m = h.masses[0];
                let w = self.psi.momentum_marginal(0);
                let ks = self.psi.grid().wavenumbers();
                let total: f64 = w.iter().sum();
                let k1 = w.iter().zip(&ks).map(|(p, k)| p * k).sum::<f64>() / total;
                let k2 = w.iter().zip(&ks).map(|(p, k)| p * k * k).sum::<f64>() / total;
                Ok((p_off * p_off + 2.0 * p_off * k1 + k2) / (2.0 * m))
            }
        }
    }
}

/// Reusable single-step integrator.
pub struct QmuplStepper {
    prop: Propagator,
    lambdas: Vec<f64>,
    sqrt_lambdas: Vec<f64>,
    dt: f64,
    mass: f64,
    free: bool,
    means: Vec<f64>,
    /// `coords[p][idx]`: position of particle p at flat index idx (multi-particle only).
    coords: Vec<Vec<f64>>,
}

impl QmuplStepper {
    pub fn new(grid: SpatialGrid, h: &HamiltonianSpec, lambdas: &[f64], dt: f64) -> Result<Self> {
        Self::with_branch(grid, h, lambdas, dt, None)
    }

    pub fn with_branch(
        grid: SpatialGrid,
        h: &HamiltonianSpec,
        lambdas: &[f64],
        dt: f64,
        branch: Option<usize>,
    ) -> Result<Self> {
        if lambdas.len() != h.particles() {
            return Err(CollapseError::Shape(format!(
                "{} rate(s) for {} particle(s)",
                lambdas.len(),
                h.particles()
            )));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(CollapseError::Config("collapse rates must be non-negative".into()));
        }
        stochastic_guard(&grid, lambdas.iter().cloned().fold(0.0, f64::max), dt)?;
        let prop = Propagator::with_branch(grid, h, dt, branch)?;
        let k = h.particles();
        let coords = if k > 1 {
            let len = grid.n_points().pow(k as u32);
            let probe = GridWavefunction::zeros(grid, k)?;
            (0..k)
                .map(|p| (0..len).map(|i| probe.coordinate(i, p)).collect())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            prop,
            lambdas: lambdas.to_vec(),
            sqrt_lambdas: lambdas.iter().map(|l| l.sqrt()).collect(),
            dt,
            mass: h.masses[0],
            free: matches!(h.kind, HamiltonianKind::Free),
            means: vec![0.0; k],
            coords,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn collapse_factor(&mut self, psi: &mut GridWavefunction, dw: &[f64]) {
        let dt = self.dt;
        if self.coords.is_empty() {
            let grid = *psi.grid();
            let amps = psi.amplitudes_mut();
            let (mut w, mut wx) = (0.0, 0.0);
            for (i, z) in amps.iter().enumerate() {
                let p = z.norm_sqr();
                w += p;
                wx += p * grid.x(i);
            }
            let mean = wx / w;
            self.means[0] = mean;
            let (s, l, d) = (self.sqrt_lambdas[0], self.lambdas[0], dw[0]);
            if l == 0.0 {
                return;
            }
            for (i, z) in amps.iter_mut().enumerate() {
                let u = grid.x(i) - mean;
                *z *= 1.0 + s * u * d - 0.5 * l * u * u * dt;
            }
            return;
        }
        for p in 0..self.means.len() {
            self.means[p] = psi.expectation_position(p);
        }
        let amps = psi.amplitudes_mut();
        for (idx, z) in amps.iter_mut().enumerate() {
            let mut f = 1.0;
            for (p, w) in dw.iter().enumerate().take(self.means.len()) {
                let u = self.coords[p][idx] - self.means[p];
                f += self.sqrt_lambdas[p] * u * w - 0.5 * self.lambdas[p] * u * u * dt;
            }
            *z *= f;
        }
    }

    /// One step with the given Wiener increments (one per particle).
    pub fn step(&mut self, state: &mut QmuplState, dw: &[f64]) -> Result<()> {
        self.collapse_factor(&mut state.psi, dw);
        match state.frame.as_mut() {
            None => self.prop.step(state.psi.amplitudes_mut()),
            Some((x_off, p_off)) => {
                let grid = *state.psi.grid();
                if self.free {
                    *x_off += *p_off * self.dt / self.mass;
                }
                let shift = self.means[0] - grid.center();
                let u = self.prop.step_translated(state.psi.amplitudes_mut(), shift);
                for (i, z) in state.psi.amplitudes_mut().iter_mut().enumerate() {
                    *z *= Complex64::from_polar(1.0, -u * (grid.x(i) - grid.center()));
                }
                *x_off += shift;
                *p_off += u;
            }
        }
        state.psi.normalize_in_place()?;
        Ok(())
    }
}

/// One Euler–Maruyama step on a lab-frame state.
pub fn qmupl_step(
    psi: &GridWavefunction,
    h: &HamiltonianSpec,
    lambdas: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<GridWavefunction> {
    crate::hamiltonian::check_particles(psi, h)?;
    if dw.len() != lambdas.len() || dw.iter().any(|w| !w.is_finite()) {
        return Err(CollapseError::Config(
            "need one finite Wiener increment per particle".into(),
        ));
    }
    let mut stepper = QmuplStepper::new(*psi.grid(), h, lambdas, dt)?;
    let mut state = QmuplState::lab(psi.clone());
    stepper.step(&mut state, dw)?;
    Ok(state.psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub sigma_q: f64,
    pub sigma_p: f64,
    pub energy: f64,
    pub norm_drift: f64,
}

/// Time series of particle-0 observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub const CSV_HEADER: &'static str = "t,mean_q,mean_p,sigma_q,sigma_p,energy,norm_drift";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.t, r.mean_q, r.mean_p, r.sigma_q, r.sigma_p, r.energy, r.norm_drift
            );
        }
        s
    }

    pub fn column(&self, f: impl Fn(&LogRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }
}

pub fn log_row(state: &QmuplState, h: &HamiltonianSpec, t: f64) -> Result<LogRow> {
    Ok(LogRow {
        t,
        mean_q: state.mean_q(0),
        mean_p: state.mean_p(0),
        sigma_q: state.sigma_q(0),
        sigma_p: state.sigma_p(0),
        energy: state.energy(h)?,
        norm_drift: (state.psi.norm_sqr() - 1.0).abs(),
    })
}

pub fn initial_state(config: &QmuplConfig) -> Result<QmuplState> {
    let masses: Vec<f64> = config.particles.iter().map(|p| p.mass).collect();
    let psi = config.initial.build(config.grid, &masses, &config.lambdas())?;
    Ok(if config.comoving {
        QmuplState::comoving(psi)
    } else {
        QmuplState::lab(psi)
    })
}

pub fn run_qmupl_trajectory(config: &QmuplConfig, noise: &mut NoiseStream) -> Result<TrajectoryLog> {
    run_qmupl_trajectory_observed(config, noise, |_, _, _| true)
}

/// Runs the trajectory, calling `observer(step, t, state)` after every step
/// (and once at step 0). Returning `false` stops the run; the log then ends at
/// the last completed stride point.
pub fn run_qmupl_trajectory_observed(
    config: &QmuplConfig,
    noise: &mut NoiseStream,
    mut observer: impl FnMut(usize, f64, &QmuplState) -> bool,
) -> Result<TrajectoryLog> {
    config.validate()?;
    let lambdas = config.lambdas();
    let mut stepper = QmuplStepper::new(config.grid, &config.hamiltonian, &lambdas, config.dt)?;
    let mut state = initial_state(config)?;
    let steps = config.steps();
    let mut rows = Vec::with_capacity(steps / config.stride + 1);
    rows.push(log_row(&state, &config.hamiltonian, 0.0)?);
    if !observer(0, 0.0, &state) {
        return Ok(TrajectoryLog { rows });
    }
    let mut dw = vec![0.0; lambdas.len()];
    for step in 1..=steps {
        noise.wiener_into(config.dt, &mut dw);
        stepper.step(&mut state, &dw)?;
        let t = step as f64 * config.dt;
        if step % config.stride == 0 {
            rows.push(log_row(&state, &config.hamiltonian, t)?);
        }
        if !observer(step, t, &state) {
            break;
        }
    }
    Ok(TrajectoryLog { rows })
}

/// Relative-motion data left over after splitting off the centre of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeMotion {
    pub masses: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Reduced mass and its rate `μ λ₀`, defined for two particles.
    pub reduced_mass: Option<f64>,
    pub lambda_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComSplit {
    pub total_mass: f64,
    pub lambda_cm: f64,
    pub com: ParticleSpec,
    pub relative: RelativeMotion,
}

pub fn com_split(particles: &[ParticleSpec], lambda0: f64) -> Result<ComSplit> {
    if particles.is_empty() {
        return Err(CollapseError::Config(
            "centre-of-mass split needs at least one particle".into(),
        ));
    }
    let masses: Vec<f64> = particles.iter().map(|p| p.mass).collect();
    let lambdas: Vec<f64> = masses.iter().map(|&m| coupling_constant(m, 1.0, lambda0)).collect();
    let total_mass: f64 = masses.iter().sum();
    let lambda_cm: f64 = lambdas.iter().sum();
    let (reduced_mass, lambda_rel) = if masses.len() == 2 {
        let mu = masses[0] * masses[1] / total_mass;
        let w = [masses[1] / total_mass, masses[0] / total_mass];
        (Some(mu), Some(lambdas[0] * w[0] * w[0] + lambdas[1] * w[1] * w[1]))
    } else {
        (None, None)
    };
    Ok(ComSplit {
        total_mass,
        lambda_cm,
        com: ParticleSpec {
            mass: total_mass,
            label: "com".into(),
        },
        relative: RelativeMotion {
            masses,
            lambdas,
            reduced_mass,
            lambda_rel,
        },
    })
}

impl ComSplit {
    /// Single-particle configuration for the centre of mass, keeping everything
    /// else from `config`. Its rate is `M λ₀ = λ_CM`.
    pub fn com_config(&self, config: &QmuplConfig) -> Result<QmuplConfig> {
        let mut out = config.clone();
        out.particles = vec![self.com.clone()];
        out.hamiltonian = HamiltonianSpec::new(config.hamiltonian.kind, vec![self.total_mass])?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basin {
    Left,
    Right,
}

/// Declares a trajectory settled once it has sat inside one basin, optionally with
/// a small spread, for `hold` consecutive observations.
#[derive(Debug, Clone)]
pub struct SettlingClassifier {
    targets: [f64; 2],
    radius: f64,
    max_spread: Option<f64>,
    hold: usize,
    current: Option<Basin>,
    run: usize,
}

impl SettlingClassifier {
    /// Basin = nearer target, settled when `σ_q < separation/10` for `hold` steps.
    pub fn by_spread(targets: [f64; 2], hold: usize) -> Self {
        let sep = (targets[1] - targets[0]).abs();
        Self {
            targets,
            radius: sep / 2.0,
            max_spread: Some(sep / 10.0),
            hold,
            current: None,
            run: 0,
        }
    }

    /// Settled when `|⟨q⟩ - target| < separation/4` for `hold` steps.
    pub fn by_position(targets: [f64; 2], hold: usize) -> Self {
        let sep = (targets[1] - targets[0]).abs();
        Self {
            targets,
            radius: sep / 4.0,
            max_spread: None,
            hold,
            current: None,
            run: 0,
        }
    }

    /// Feed one observation; returns the basin once settled.
    pub fn observe(&mut self, mean_q: f64, sigma_q: f64) -> Option<Basin> {
        let basin = if (mean_q - self.targets[0]).abs() < self.radius {
            Some(Basin::Left)
        } else if (mean_q - self.targets[1]).abs() < self.radius {
            Some(Basin::Right)
        } else {
            None
        };
        let ok = basin.is_some() && self.max_spread.is_none_or(|s| sigma_q < s);
        if ok && basin == self.current {
            self.run += 1;
        } else if ok {
            self.current = basin;
            self.run = 1;
        } else {
            self.current = None;
            self.run = 0;
        }
        self.settled()
    }

    pub fn settled(&self) -> Option<Basin> {
        if self.run >= self.hold {
            self.current
        } else {
            None
        }
    }

    /// Basin occupied at the latest observation, settled or not.
    pub fn current(&self) -> Option<Basin> {
        self.current
    }
}

/// Compare two lab-frame states amplitude-wise; used when checking λ = 0 limits.
pub fn max_amplitude_difference(a: &GridWavefunction, b: &GridWavefunction) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::hamiltonian::evolve_schrodinger;

    fn free_config(lambda: f64, comoving: bool) -> QmuplConfig {
        let sigma = stationary_spread(lambda, 1.0);
        let grid = SpatialGrid::centered(8.0 * sigma, 32).unwrap();
        let l = grid.half_width();
        QmuplConfig {
            grid,
            particles: vec![ParticleSpec::new(1.0, "p").unwrap()],
            lambda0: lambda,
            hamiltonian: HamiltonianSpec::free(1.0),
            dt: 1e-2 / (lambda * l * l) / 2.0,
            horizon: 1e-2 / (lambda * l * l) / 2.0 * 100.0,
            stride: 10,
            initial: InitialState::Stationary {
                center: 0.0,
                momentum: 0.0,
            },
            comoving,
        }
    }

    #[test]
    fn zero_rate_is_schrodinger() {
        let g = make_grid(-10.0, 10.0, 64).unwrap();
        let psi = GridWavefunction::gaussian(g, 1.0, 1.0, 0.3).unwrap();
        let h = HamiltonianSpec::harmonic(1.0, 1.0);
        let a = qmupl_step(&psi, &h, &[0.0], &[0.7], 1e-3).unwrap();
        let b = evolve_schrodinger(&psi, &h, 1e-3).unwrap();
        assert!(max_amplitude_difference(&a, &b) < 1e-13);
    }

    #[test]
    fn sharp_state_is_left_alone() {
        let g = make_grid(-4.0, 4.0, 64).unwrap();
        let mut amps = vec![Complex64::new(0.0, 0.0); 64];
        amps[40] = Complex64::new(1.0, 0.0);
        let psi = GridWavefunction::new(g, 1, amps).unwrap().normalize().unwrap();
        let h = HamiltonianSpec::zero(1);
        let out = qmupl_step(&psi, &h, &[0.5], &[0.03], 1e-4).unwrap();
        assert!(max_amplitude_difference(&out, &psi) < 1e-12);
    }

    #[test]
    fn guard_rejects_large_steps() {
        let g = make_grid(-10.0, 10.0, 64).unwrap();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.0, 0.0).unwrap();
        let r = qmupl_step(&psi, &HamiltonianSpec::zero(1), &[1.0], &[0.0], 1e-3);
        assert!(matches!(r, Err(CollapseError::StepSize(_))));
    }

    #[test]
    fn stationary_parameter_is_fixed_point() {
        for (l, m) in [(1.0, 1.0), (0.3, 2.5)] {
            let a = stationary_width_parameter(l, m);
            let rhs = l - Complex64::new(0.0, 2.0 / m) * a * a;
            assert!(rhs.norm() < 1e-12);
            assert!((1.0 / (4.0 * a.re)).sqrt() - stationary_spread(l, m) < 1e-12);
        }
    }

    #[test]
    fn comoving_tracks_lab_frame() {
        let lab = free_config(1.0, false);
        let mov = free_config(1.0, true);
        let a = run_qmupl_trajectory(&lab, &mut NoiseStream::new(5, 1)).unwrap();
        let b = run_qmupl_trajectory(&mov, &mut NoiseStream::new(5, 1)).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert!((ra.mean_q - rb.mean_q).abs() < 1e-9, "{ra:?} {rb:?}");
            assert!((ra.mean_p - rb.mean_p).abs() < 1e-9);
            assert!((ra.sigma_q - rb.sigma_q).abs() < 1e-9);
            assert!((ra.energy - rb.energy).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_noise() {
        let c = free_config(2.0, true);
        let a = run_qmupl_trajectory(&c, &mut NoiseStream::new(11, 3)).unwrap();
        let b = run_qmupl_trajectory(&c, &mut NoiseStream::new(11, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 11);
        assert!(a.to_csv().starts_with(TrajectoryLog::CSV_HEADER));
    }

    #[test]
    fn split_sums_rates() {
        let ps: Vec<ParticleSpec> = (0..100).map(|_| ParticleSpec::new(1.0, "n").unwrap()).collect();
        let s = com_split(&ps, 0.25).unwrap();
        assert!((s.lambda_cm - 25.0).abs() < 1e-12);
        assert_eq!(s.total_mass, 100.0);
        let one = com_split(&ps[..1], 0.25).unwrap();
        assert_eq!(one.lambda_cm, 0.25);
        assert_eq!(one.total_mass, 1.0);
        let two = com_split(
            &[
                ParticleSpec::new(1.0, "a").unwrap(),
                ParticleSpec::new(3.0, "b").unwrap(),
            ],
            2.0,
        )
        .unwrap();
        let mu = 0.75;
        assert!((two.relative.reduced_mass.unwrap() - mu).abs() < 1e-15);
        assert!((two.relative.lambda_rel.unwrap() - mu * 2.0).abs() < 1e-12);
    }

    #[test]
    fn classifier_needs_hold() {
        let mut c = SettlingClassifier::by_spread([-2.0, 2.0], 3);
        assert_eq!(c.observe(1.9, 0.1), None);
        assert_eq!(c.observe(2.1, 0.1), None);
        assert_eq!(c.observe(0.0, 0.1), None);
        assert_eq!(c.observe(2.0, 0.5), None);
        for _ in 0..2 {
            assert_eq!(c.observe(2.0, 0.1), None);
        }
        assert_eq!(c.observe(2.0, 0.1), Some(Basin::Right));
        let mut p = SettlingClassifier::by_position([-4.0, 4.0], 1);
        assert_eq!(p.observe(-3.5, 5.0), Some(Basin::Left));
    }
}
