//! Deterministic Schrödinger propagation between stochastic events (ħ = 1).
//!
//! The propagator is the symmetric split `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}`
//! with the kinetic factor applied exactly in Fourier space.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::spectral::{unflatten, Spectral};
use crate::wavefunction::{GridWavefunction, MAX_PARTICLES};

/// Upper bound on `dt · max kinetic eigenvalue`.
pub const KINETIC_STEP_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianKind {
    /// H = 0.
    Zero,
    /// H = Σ p²/2m.
    Free,
    /// H = Σ p²/2m + ½ m ω² x².
    Harmonic { omega: f64 },
    /// H = Σ p²/2m + m g x.
    LinearPotential { g: f64 },
    /// H = P²/2M + κ·S⊗P with S a two-level micro observable of the given eigenvalues.
    MeasurementCoupling { kappa: f64, micro_eigenvalues: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub kind: HamiltonianKind,
    pub masses: Vec<f64>,
}

impl HamiltonianSpec {
    pub fn new(kind: HamiltonianKind, masses: Vec<f64>) -> Result<Self> {
        let h = Self { kind, masses };
        h.validate()?;
        Ok(h)
    }

    pub fn zero(particles: usize) -> Self {
        Self {
            kind: HamiltonianKind::Zero,
            masses: vec![1.0; particles],
        }
    }

    pub fn free(mass: f64) -> Self {
        Self {
            kind: HamiltonianKind::Free,
            masses: vec![mass],
        }
    }

    pub fn harmonic(mass: f64, omega: f64) -> Self {
        Self {
            kind: HamiltonianKind::Harmonic { omega },
            masses: vec![mass],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.is_empty() || self.masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(CollapseError::Config("Hamiltonian masses must be positive".into()));
        }
        match self.kind {
            HamiltonianKind::Harmonic { omega } if !(omega >= 0.0 && omega.is_finite()) => {
                Err(CollapseError::Config(format!("omega must be >= 0, got {omega}")))
            }
            HamiltonianKind::LinearPotential { g } if !g.is_finite() => {
                Err(CollapseError::Config("g must be finite".into()))
            }
            HamiltonianKind::MeasurementCoupling {
                kappa,
                micro_eigenvalues,
            } if !(kappa.is_finite() && micro_eigenvalues.iter().all(|s| s.is_finite())) => {
                Err(CollapseError::Config("coupling parameters must be finite".into()))
            }
            HamiltonianKind::MeasurementCoupling { .. } if self.masses.len() != 1 => Err(CollapseError::Config(
                "measurement coupling acts on a single pointer coordinate".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn particles(&self) -> usize {
        self.masses.len()
    }

    /// Potential energy at configuration `xs`.
    pub fn potential(&self, xs: &[f64]) -> f64 {
        match self.kind {
            HamiltonianKind::Harmonic { omega } => xs
                .iter()
                .zip(&self.masses)
                .map(|(x, m)| 0.5 * m * omega * omega * x * x)
                .sum(),
            HamiltonianKind::LinearPotential { g } => xs.iter().zip(&self.masses).map(|(x, m)| m * g * x).sum(),
            _ => 0.0,
        }
    }

    /// Derivative of the single-particle potential, V'(x), for particle `n`.
    pub fn force_gradient(&self, particle: usize, x: f64) -> f64 {
        let m = self.masses[particle];
        match self.kind {
            HamiltonianKind::Harmonic { omega } => m * omega * omega * x,
            HamiltonianKind::LinearPotential { g } => m * g,
            _ => 0.0,
        }
    }

    fn has_potential(&self) -> bool {
        matches!(
            self.kind,
            HamiltonianKind::Harmonic { .. } | HamiltonianKind::LinearPotential { .. }
        )
    }

    /// Coefficient multiplying the pointer momentum in the given micro branch.
    fn momentum_coupling(&self, branch: Option<usize>) -> Result<f64> {
        match (self.kind, branch) {
            (
                HamiltonianKind::MeasurementCoupling {
                    kappa,
                    micro_eigenvalues,
                },
                Some(b),
            ) if b < 2 => Ok(kappa * micro_eigenvalues[b]),
            (HamiltonianKind::MeasurementCoupling { .. }, _) => Err(CollapseError::Config(
                "measurement coupling needs a micro branch index (0 or 1)".into(),
            )),
            (_, _) => Ok(0.0),
        }
    }

    /// Kinetic (Fourier-diagonal) energy at wavevector tuple `ks`.
    fn kinetic(&self, ks: &[f64], coupling: f64) -> f64 {
        match self.kind {
            HamiltonianKind::Zero => 0.0,
            _ => ks.iter().zip(&self.masses).map(|(k, m)| k * k / (2.0 * m)).sum::<f64>() + coupling * ks[0],
        }
    }
}

/// Checks `dt·max|T| < KINETIC_STEP_LIMIT` over the grid without building a
/// propagator. Every micro branch is checked for measurement coupling.
pub fn kinetic_guard(grid: &SpatialGrid, h: &HamiltonianSpec, dt: f64) -> Result<()> {
    h.validate()?;
    if matches!(h.kind, HamiltonianKind::Zero) {
        return Ok(());
    }
    let branches: &[Option<usize>] = match h.kind {
        HamiltonianKind::MeasurementCoupling { .. } => &[Some(0), Some(1)],
        _ => &[None],
    };
    let ks = grid.wavenumbers();
    for &b in branches {
        let coupling = h.momentum_coupling(b)?;
        // T is a sum of one-particle terms, so its extremes are sums of per-particle extremes.
        let (mut lo, mut hi) = (0.0, 0.0);
        for (p, m) in h.masses.iter().enumerate() {
            let c = if p == 0 { coupling } else { 0.0 };
            let terms = ks.iter().map(|k| k * k / (2.0 * m) + c * k);
            lo += terms.clone().fold(f64::INFINITY, f64::min);
            hi += terms.fold(f64::NEG_INFINITY, f64::max);
        }
        let max_t = f64::max(lo.abs(), hi.abs());
        if dt * max_t >= KINETIC_STEP_LIMIT {
            return Err(CollapseError::StepSize(format!(
                "dt·max|T| = {:.3} exceeds {KINETIC_STEP_LIMIT}; reduce dt below {:.3e}",
                dt * max_t,
                KINETIC_STEP_LIMIT / max_t
            )));
        }
    }
    Ok(())
}

/// Precomputed split-step propagator for one Hamiltonian, grid and time step.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: SpatialGrid,
    particles: usize,
    dt: f64,
    spectral: Spectral,
    kinetic_phase: Option<Vec<Complex64>>,
    half_potential_phase: Option<Vec<Complex64>>,
    wavenumbers: Vec<f64>,
}

impl Propagator {
    pub fn new(grid: SpatialGrid, h: &HamiltonianSpec, dt: f64) -> Result<Self> {
        Self::with_branch(grid, h, dt, None)
    }

    /// Propagator for one micro branch of a measurement-coupling Hamiltonian
    /// (`branch` is ignored by the other kinds).
    pub fn with_branch(grid: SpatialGrid, h: &HamiltonianSpec, dt: f64, branch: Option<usize>) -> Result<Self> {
        h.validate()?;
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(CollapseError::StepSize(format!("dt must be >= 0, got {dt}")));
        }
        let particles = h.particles();
        if particles > MAX_PARTICLES {
            return Err(CollapseError::Config("at most 3 particles on a full grid".into()));
        }
        let coupling = h.momentum_coupling(branch)?;
        let n = grid.n_points();
        let len = n.pow(particles as u32);
        let ks = grid.wavenumbers();
        let xs = grid.positions();
        let mut ix = [0usize; MAX_PARTICLES];
        let mut buf = [0.0; MAX_PARTICLES];

        let kinetic_phase = if matches!(h.kind, HamiltonianKind::Zero) {
            None
        } else {
            let mut max_t: f64 = 0.0;
            let mut phase = Vec::with_capacity(len);
            for idx in 0..len {
                unflatten(idx, n, particles, &mut ix);
                for p in 0..particles {
                    buf[p] = ks[ix[p]];
                }
                let t = h.kinetic(&buf[..particles], coupling);
                max_t = max_t.max(t.abs());
                phase.push(Complex64::from_polar(1.0, -t * dt));
            }
            if dt * max_t >= KINETIC_STEP_LIMIT {
                return Err(CollapseError::StepSize(format!(
                    "dt·max|T| = {:.3} exceeds {KINETIC_STEP_LIMIT}; reduce dt below {:.3e}",
                    dt * max_t,
                    KINETIC_STEP_LIMIT / max_t
                )));
            }
            Some(phase)
        };

        let half_potential_phase = h.has_potential().then(|| {
            (0..len)
                .map(|idx| {
                    unflatten(idx, n, particles, &mut ix);
                    for p in 0..particles {
                        buf[p] = xs[ix[p]];
                    }
                    Complex64::from_polar(1.0, -0.5 * dt * h.potential(&buf[..particles]))
                })
                .collect()
        });

        Ok(Self {
            grid,
            particles,
            dt,
            spectral: Spectral::new(n, particles),
            kinetic_phase,
            half_potential_phase,
            wavenumbers: ks,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn is_identity(&self) -> bool {
        self.kinetic_phase.is_none() && self.half_potential_phase.is_none()
    }

    /// Advance raw amplitudes by one step `dt`.
    pub fn step(&mut self, amps: &mut [Complex64]) {
        if let Some(v) = &self.half_potential_phase {
            for (z, p) in amps.iter_mut().zip(v) {
                *z *= p;
            }
        }
        if let Some(kp) = &self.kinetic_phase {
            self.spectral.forward(amps);
            for (z, p) in amps.iter_mut().zip(kp) {
                *z *= p;
            }
            self.spectral.inverse(amps);
        }
        if let Some(v) = &self.half_potential_phase {
            for (z, p) in amps.iter_mut().zip(v) {
                *z *= p;
            }
        }
    }

    /// Single-particle kinetic step fused with a translation by `-shift`
    /// (ψ(x) → ψ(x + shift)). Returns the mean wavenumber of the state.
    /// Only valid for potential-free single-particle Hamiltonians.
    pub fn step_translated(&mut self, amps: &mut [Complex64], shift: f64) -> f64 {
        debug_assert!(self.half_potential_phase.is_none() && self.particles == 1);
        self.spectral.forward(amps);
        let mut w = 0.0;
        let mut wk = 0.0;
        for ((z, k), kp) in amps.iter_mut().zip(&self.wavenumbers).zip(
            self.kinetic_phase
                .iter()
                .flatten()
                .chain(std::iter::repeat(&Complex64::new(1.0, 0.0))),
        ) {
            let p = z.norm_sqr();
            w += p;
            wk += p * k;
            *z *= kp * Complex64::from_polar(1.0, k * shift);
        }
        self.spectral.inverse(amps);
        wk / w
    }

    /// Advance a wavefunction over an arbitrary duration using full steps
    /// plus one shorter remainder step.
    pub fn evolve_for(
        &mut self,
        psi: &mut GridWavefunction,
        h: &HamiltonianSpec,
        duration: f64,
        branch: Option<usize>,
    ) -> Result<()> {
        if duration <= 0.0 {
            return Ok(());
        }
        let full = (duration / self.dt).floor() as usize;
        for _ in 0..full {
            self.step(psi.amplitudes_mut());
        }
        let rest = duration - full as f64 * self.dt;
        if rest > 1e-14 * duration.max(1.0) {
            let mut short = Propagator::with_branch(self.grid, h, rest, branch)?;
            short.step(psi.amplitudes_mut());
        }
        Ok(())
    }
}

/// One split-step of Schrödinger evolution.
pub fn evolve_schrodinger(psi: &GridWavefunction, h: &HamiltonianSpec, dt: f64) -> Result<GridWavefunction> {
    check_particles(psi, h)?;
    let mut prop = Propagator::new(*psi.grid(), h, dt)?;
    let mut out = psi.clone();
    prop.step(out.amplitudes_mut());
    Ok(out)
}

/// ⟨ψ|H|ψ⟩ with the kinetic term evaluated spectrally.
pub fn energy_expectation(psi: &GridWavefunction, h: &HamiltonianSpec) -> Result<f64> {
    energy_expectation_branch(psi, h, None)
}

pub fn energy_expectation_branch(psi: &GridWavefunction, h: &HamiltonianSpec, branch: Option<usize>) -> Result<f64> {
    check_particles(psi, h)?;
    if matches!(h.kind, HamiltonianKind::Zero) {
        return Ok(0.0);
    }
    let coupling = h.momentum_coupling(branch)?;
    let grid = psi.grid();
    let n = grid.n_points();
    let k = psi.particles();
    let ks = grid.wavenumbers();
    let mut ix = [0usize; MAX_PARTICLES];
    let mut buf = [0.0; MAX_PARTICLES];

    let mut data = psi.amplitudes().to_vec();
    Spectral::new(n, k).forward(&mut data);
    let mut w = 0.0;
    let mut t = 0.0;
    for (idx, z) in data.iter().enumerate() {
        unflatten(idx, n, k, &mut ix);
        for p in 0..k {
            buf[p] = ks[ix[p]];
        }
        let p2 = z.norm_sqr();
        w += p2;
        t += p2 * h.kinetic(&buf[..k], coupling);
    }
    let kinetic = t / w;

    let potential = if h.has_potential() {
        let xs = grid.positions();
        let mut vw = 0.0;
        let mut vv = 0.0;
        for (idx, z) in psi.amplitudes().iter().enumerate() {
            unflatten(idx, n, k, &mut ix);
            for p in 0..k {
                buf[p] = xs[ix[p]];
            }
            let p2 = z.norm_sqr();
            vw += p2;
            vv += p2 * h.potential(&buf[..k]);
        }
        vv / vw
    } else {
        0.0
    };
    Ok(kinetic + potential)
}

pub(crate) fn check_particles(psi: &GridWavefunction, h: &HamiltonianSpec) -> Result<()> {
    if psi.particles() != h.particles() {
        return Err(CollapseError::Shape(format!(
            "Hamiltonian describes {} particle(s), state has {}",
            h.particles(),
            psi.particles()
        )));
    }
    Ok(())
}
