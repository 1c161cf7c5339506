//! Smeared number-density localization for identical spinless bosons on a
//! small periodic 1-D lattice.
//!
//! Basis states are occupation tuples `(n_0, …, n_{M-1})` with `n_y ≤ n_max`,
//! ordered lexicographically with site 0 most significant, i.e. the index is
//! `Σ_y n_y (n_max+1)^{M-1-y}`. The continuum noise field is replaced by one
//! independent Wiener process per site.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::lindblad::{DensityOperator, LindbladGenerator};
use crate::noise::NoiseStream;
use crate::stats::{linear_fit, LinearFit};

pub use crate::params::gamma_from;

pub const MAX_SITES: usize = 6;
pub const MAX_OCCUPATION: usize = 2;
/// Bound on `dt · γ · Σ_x (range of N(x))²`.
pub const CSL_STEP_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFockSpace {
    sites: usize,
    n_max: usize,
    spacing: f64,
    basis: Vec<Vec<u8>>,
}

impl LatticeFockSpace {
    pub fn new(sites: usize, n_max: usize, spacing: f64) -> Result<Self> {
        if sites == 0 || sites > MAX_SITES {
            return Err(CollapseError::Config(format!(
                "lattice needs 1..={MAX_SITES} sites, got {sites}"
            )));
        }
        if n_max == 0 || n_max > MAX_OCCUPATION {
            return Err(CollapseError::Config(format!(
                "max occupation must be 1..={MAX_OCCUPATION}, got {n_max}"
            )));
        }
        if !(spacing > 0.0) {
            return Err(CollapseError::Config(format!(
                "lattice spacing must be positive, got {spacing}"
            )));
        }
        let base = n_max + 1;
        let dim = base.pow(sites as u32);
        let basis = (0..dim)
            .map(|mut idx| {
                let mut occ = vec![0u8; sites];
                for y in (0..sites).rev() {
                    occ[y] = (idx % base) as u8;
                    idx /= base;
                }
                occ
            })
            .collect();
        Ok(Self {
            sites,
            n_max,
            spacing,
            basis,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn occupation(&self, idx: usize) -> &[u8] {
        &self.basis[idx]
    }

    pub fn index_of(&self, occ: &[u8]) -> Result<usize> {
        if occ.len() != self.sites || occ.iter().any(|&n| n as usize > self.n_max) {
            return Err(CollapseError::Shape(format!("occupation {occ:?} not in this space")));
        }
        Ok(occ.iter().fold(0, |acc, &n| acc * (self.n_max + 1) + n as usize))
    }

    pub fn total_number(&self, idx: usize) -> usize {
        self.basis[idx].iter().map(|&n| n as usize).sum()
    }

    /// Minimum-image distance between a point and site `y` on the ring.
    fn ring_distance(&self, x: f64, y: usize) -> f64 {
        let len = self.sites as f64 * self.spacing;
        let d = x - y as f64 * self.spacing;
        d - len * (d / len).round()
    }

    /// Hopping Hamiltonian `-J Σ_y (a†_y a_{y+1} + h.c.)` on the ring; with two
    /// sites the single bond is counted once.
    pub fn hopping_hamiltonian(&self, hopping: f64) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        let bonds: Vec<(usize, usize)> = match self.sites {
            1 => Vec::new(),
            2 => vec![(0, 1)],
            m => (0..m).map(|y| (y, (y + 1) % m)).collect(),
        };
        for j in 0..dim {
            let occ = &self.basis[j];
            for &(a, b) in &bonds {
                for (from, to) in [(a, b), (b, a)] {
                    let nf = occ[from] as usize;
                    let nt = occ[to] as usize;
                    if nf == 0 || nt == self.n_max {
                        continue;
                    }
                    let mut next = occ.clone();
                    next[from] -= 1;
                    next[to] += 1;
                    let i = self.index_of(&next).expect("hop stays in space");
                    h[(i, j)] += -hopping * ((nf * (nt + 1)) as f64).sqrt();
                }
            }
        }
        h
    }
}

/// One-dimensional normalized smearing kernel `(α/2π)^{1/2} e^{-α d²/2}`.
pub fn smearing_kernel(alpha: f64, d: f64) -> f64 {
    (alpha / (2.0 * PI)).sqrt() * (-0.5 * alpha * d * d).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmearedNumberOperator {
    pub center: f64,
    pub alpha: f64,
    /// Diagonal entries in the occupation basis.
    pub diagonal: Vec<f64>,
}

pub fn build_number_density(space: &LatticeFockSpace, center: f64, alpha: f64) -> Result<SmearedNumberOperator> {
    if !(alpha > 0.0) {
        return Err(CollapseError::Config(format!("alpha must be positive, got {alpha}")));
    }
    let weights: Vec<f64> = (0..space.sites)
        .map(|y| smearing_kernel(alpha, space.ring_distance(center, y)))
        .collect();
    let diagonal = space
        .basis
        .iter()
        .map(|occ| occ.iter().zip(&weights).map(|(&n, w)| n as f64 * w).sum())
        .collect();
    Ok(SmearedNumberOperator {
        center,
        alpha,
        diagonal,
    })
}

/// Smeared densities centred on every lattice site.
pub fn site_densities(space: &LatticeFockSpace, alpha: f64) -> Result<Vec<SmearedNumberOperator>> {
    (0..space.sites)
        .map(|y| build_number_density(space, y as f64 * space.spacing, alpha))
        .collect()
}

/// Lattice analogue of the kernel-difference weight `Σ_x (g(x) - g(x - a))²`
/// that sets the rate at which hopping coherences are damped.
pub fn hop_damping_weight(space: &LatticeFockSpace, alpha: f64) -> f64 {
    (0..space.sites)
        .map(|x| {
            let xf = x as f64 * space.spacing;
            (smearing_kernel(alpha, space.ring_distance(xf, 0)) - smearing_kernel(alpha, space.ring_distance(xf, 1)))
                .powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFockState {
    amplitudes: Vec<Complex64>,
}

impl LatticeFockState {
    pub fn new(space: &LatticeFockSpace, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(CollapseError::Shape(format!(
                "{} amplitudes for a {}-dimensional space",
                amplitudes.len(),
                space.dim()
            )));
        }
        let mut s = Self { amplitudes };
        s.normalize()?;
        Ok(s)
    }

    pub fn basis_state(space: &LatticeFockSpace, occ: &[u8]) -> Result<Self> {
        let mut a = vec![Complex64::new(0.0, 0.0); space.dim()];
        a[space.index_of(occ)?] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes: a })
    }

    /// Lowest eigenvector of `h` inside the total-number sector `particles`.
    pub fn sector_ground_state(space: &LatticeFockSpace, h: &DMatrix<f64>, particles: usize) -> Result<(Self, f64)> {
        let idx: Vec<usize> = (0..space.dim())
            .filter(|&i| space.total_number(i) == particles)
            .collect();
        if idx.is_empty() {
            return Err(CollapseError::Config(format!(
                "no basis states with {particles} particle(s)"
            )));
        }
        let block = DMatrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
        let eig = SymmetricEigen::new(block);
        let (k, e0) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &e)| if e < acc.1 { (k, e) } else { acc });
        let mut a = vec![Complex64::new(0.0, 0.0); space.dim()];
        for (r, &i) in idx.iter().enumerate() {
            a[i] = Complex64::new(eig.eigenvectors[(r, k)], 0.0);
        }
        Ok((Self::new(space, a)?, e0))
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) -> Result<f64> {
        let n2 = self.norm_sqr();
        let n = n2.sqrt();
        if !(n > crate::wavefunction::DEGENERATE_NORM) || !n.is_finite() {
            return Err(CollapseError::DegenerateState {
                norm: n,
                threshold: crate::wavefunction::DEGENERATE_NORM,
            });
        }
        for z in &mut self.amplitudes {
            *z /= n;
        }
        Ok(n2)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn expectation_diag(&self, d: &[f64]) -> f64 {
        self.amplitudes
            .iter()
            .zip(d)
            .map(|(z, v)| z.norm_sqr() * v)
            .sum::<f64>()
            / self.norm_sqr()
    }

    pub fn energy(&self, h: &DMatrix<f64>) -> f64 {
        let v = DVector::from_column_slice(&self.amplitudes);
        let hv = h.map(|x| Complex64::new(x, 0.0)) * &v;
        (v.dotc(&hv)).re / self.norm_sqr()
    }

    /// Mean occupation of every site.
    pub fn site_occupations(&self, space: &LatticeFockSpace) -> Vec<f64> {
        let w = self.norm_sqr();
        (0..space.sites)
            .map(|y| {
                self.amplitudes
                    .iter()
                    .enumerate()
                    .map(|(i, z)| z.norm_sqr() * space.basis[i][y] as f64)
                    .sum::<f64>()
                    / w
            })
            .collect()
    }

    /// `(⟨N⟩, Var N)` of the total particle number.
    pub fn number_moments(&self, space: &LatticeFockSpace) -> (f64, f64) {
        let w = self.norm_sqr();
        let m = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, z)| z.norm_sqr() * space.total_number(i) as f64)
            .sum::<f64>()
            / w;
        let v = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, z)| z.norm_sqr() * (space.total_number(i) as f64 - m).powi(2))
            .sum::<f64>()
            / w;
        (m, v)
    }

    /// Probability outside the total-number sector `particles`.
    pub fn sector_residual(&self, space: &LatticeFockSpace, particles: usize) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| space.total_number(*i) != particles)
            .map(|(_, z)| z.norm_sqr())
            .sum::<f64>()
            / self.norm_sqr()
    }

    /// First-quantized amplitudes `ψ(y₁, …, y_N)` (site labels, `M^N` entries)
    /// for the `N`-particle component.
    pub fn first_quantized(&self, space: &LatticeFockSpace, particles: usize) -> Vec<Complex64> {
        let m = space.sites;
        let len = m.pow(particles as u32);
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        let mut ys = vec![0usize; particles];
        for (flat, o) in out.iter_mut().enumerate() {
            let mut r = flat;
            for k in (0..particles).rev() {
                ys[k] = r % m;
                r /= m;
            }
            let mut occ = vec![0u8; m];
            for &y in &ys {
                occ[y] += 1;
            }
            if occ.iter().any(|&n| n as usize > space.n_max) {
                continue;
            }
            let idx = space.index_of(&occ).expect("occupation fits");
            // c_n / sqrt(N! / Π n_y!) spread evenly over orderings
            let orderings = factorial(particles) / occ.iter().map(|&n| factorial(n as usize)).product::<f64>();
            *o = self.amplitudes[idx] / orderings.sqrt();
        }
        out
    }

    /// Norm of the part of the first-quantized wavefunction that is not
    /// symmetric under particle exchange.
    pub fn exchange_asymmetry(&self, space: &LatticeFockSpace, particles: usize) -> f64 {
        let psi = self.first_quantized(space, particles);
        let m = space.sites;
        let mut worst: f64 = 0.0;
        for swap in 0..particles.saturating_sub(1) {
            let mut acc = 0.0;
            for (flat, z) in psi.iter().enumerate() {
                let mut digits = vec![0usize; particles];
                let mut r = flat;
                for k in (0..particles).rev() {
                    digits[k] = r % m;
                    r /= m;
                }
                digits.swap(swap, swap + 1);
                let other = digits.iter().fold(0, |a, &d| a * m + d);
                acc += (z - psi[other]).norm_sqr();
            }
            worst = worst.max(acc.sqrt());
        }
        worst
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `exp(-iH dt)` for a real symmetric `H`.
pub fn unitary_propagator(h: &DMatrix<f64>, dt: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(h.clone());
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| Complex64::from_polar(1.0, -e * dt)));
    &v * d * v.adjoint()
}

/// Precomputed pieces of the Euler–Maruyama CSL step.
#[derive(Debug, Clone)]
pub struct CslStepper {
    unitary: DMatrix<Complex64>,
    densities: Vec<Vec<f64>>,
    gamma: f64,
    dt: f64,
    identity: bool,
}

impl CslStepper {
    pub fn new(h: &DMatrix<f64>, densities: &[SmearedNumberOperator], gamma: f64, dt: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !(dt > 0.0) {
            return Err(CollapseError::Config("gamma must be ≥ 0 and dt positive".into()));
        }
        let spread: f64 = densities
            .iter()
            .map(|n| {
                let lo = n.diagonal.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = n.diagonal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (hi - lo).powi(2)
            })
            .sum();
        let s = dt * gamma * spread;
        if s > CSL_STEP_LIMIT * (1.0 + 1e-12) {
            return Err(CollapseError::StepSize(format!(
                "dt·γ·Σ range² = {s:.3e} exceeds {CSL_STEP_LIMIT}; reduce dt below {:.3e}",
                CSL_STEP_LIMIT / (gamma * spread)
            )));
        }
        Ok(Self {
            unitary: unitary_propagator(h, dt),
            densities: densities.iter().map(|n| n.diagonal.clone()).collect(),
            gamma,
            dt,
            identity: h.iter().all(|&x| x == 0.0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn centers(&self) -> usize {
        self.densities.len()
    }

    /// One step with one Wiener increment per noise centre.
    pub fn step(&self, state: &mut LatticeFockState, dw: &[f64]) -> Result<()> {
        if dw.len() != self.densities.len() {
            return Err(CollapseError::Shape(format!(
                "{} increments for {} noise centres",
                dw.len(),
                self.densities.len()
            )));
        }
        if self.gamma > 0.0 {
            let sg = self.gamma.sqrt();
            let means: Vec<f64> = self.densities.iter().map(|d| state.expectation_diag(d)).collect();
            for (i, z) in state.amplitudes.iter_mut().enumerate() {
                let mut f = 1.0;
                for ((d, m), w) in self.densities.iter().zip(&means).zip(dw) {
                    let u = d[i] - m;
                    f += sg * u * w - 0.5 * self.gamma * u * u * self.dt;
                }
                *z *= f;
            }
        }
        if !self.identity {
            let v = DVector::from_column_slice(&state.amplitudes);
            state.amplitudes = (&self.unitary * v).as_slice().to_vec();
        }
        state.normalize()?;
        Ok(())
    }
}

/// One step built from scratch; see [`CslStepper`] for repeated use.
pub fn csl_step(
    state: &LatticeFockState,
    h: &DMatrix<f64>,
    densities: &[SmearedNumberOperator],
    gamma: f64,
    dw: &[f64],
    dt: f64,
) -> Result<LatticeFockState> {
    let mut out = state.clone();
    CslStepper::new(h, densities, gamma, dt)?.step(&mut out, dw)?;
    Ok(out)
}

/// Lindblad generator with collapse operators `N(x)` at rate `γ`.
pub fn csl_lindblad(h: &DMatrix<f64>, densities: &[SmearedNumberOperator], gamma: f64) -> Result<LindbladGenerator> {
    let ops: Vec<(f64, Vec<f64>)> = densities.iter().map(|n| (gamma, n.diagonal.clone())).collect();
    LindbladGenerator::new(h.map(|x| Complex64::new(x, 0.0)), &ops)
}

pub fn ensemble_fock_density(states: &[LatticeFockState]) -> Result<DensityOperator> {
    let first = states
        .first()
        .ok_or_else(|| CollapseError::Shape("no states to average".into()))?;
    let n = first.amplitudes.len();
    let mut m = DMatrix::zeros(n, n);
    for s in states {
        if s.amplitudes.len() != n {
            return Err(CollapseError::Shape("states of different dimension".into()));
        }
        m += DensityOperator::outer(&s.amplitudes).matrix();
    }
    m /= Complex64::new(states.len() as f64, 0.0);
    DensityOperator::new(None, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CslInitial {
    /// Lowest hopping eigenstate with the given particle number.
    GroundState {
        particles: usize,
    },
    Occupation {
        occupation: Vec<u8>,
    },
    /// Superposition of occupation states with amplitudes `[re, im]`.
    Superposition {
        terms: Vec<(Vec<u8>, [f64; 2])>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CslConfig {
    pub sites: usize,
    pub n_max: usize,
    #[serde(default = "unit_spacing")]
    pub spacing: f64,
    pub hopping: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub stride: usize,
    pub initial: CslInitial,
}

fn unit_spacing() -> f64 {
    1.0
}

/// Everything needed to run trajectories for one configuration.
#[derive(Debug, Clone)]
pub struct CslSystem {
    pub space: LatticeFockSpace,
    pub hamiltonian: DMatrix<f64>,
    pub densities: Vec<SmearedNumberOperator>,
    pub stepper: CslStepper,
    pub initial: LatticeFockState,
    pub steps: usize,
    pub stride: usize,
}

impl CslConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.hopping.is_finite() {
            return Err(CollapseError::Config(format!(
                "hopping must be finite, got {}",
                self.hopping
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(CollapseError::Config(format!(
                "gamma must be finite and ≥ 0, got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(CollapseError::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.stride == 0 {
            return Err(CollapseError::Config("dt, horizon and stride must be positive".into()));
        }
        let r = self.horizon / self.dt;
        if (r - r.round()).abs() > 1e-6 * r.max(1.0) {
            return Err(CollapseError::Config(
                "horizon must be an integer multiple of dt".into(),
            ));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<CslSystem> {
        self.validate()?;
        let space = LatticeFockSpace::new(self.sites, self.n_max, self.spacing)?;
        let hamiltonian = space.hopping_hamiltonian(self.hopping);
        let densities = site_densities(&space, self.alpha)?;
        let stepper = CslStepper::new(&hamiltonian, &densities, self.gamma, self.dt)?;
        let initial = match &self.initial {
            CslInitial::GroundState { particles } => {
                LatticeFockState::sector_ground_state(&space, &hamiltonian, *particles)?.0
            }
            CslInitial::Occupation { occupation } => LatticeFockState::basis_state(&space, occupation)?,
            CslInitial::Superposition { terms } => {
                let mut a = vec![Complex64::new(0.0, 0.0); space.dim()];
                for (occ, c) in terms {
                    a[space.index_of(occ)?] += Complex64::new(c[0], c[1]);
                }
                LatticeFockState::new(&space, a)?
            }
        };
        Ok(CslSystem {
            space,
            hamiltonian,
            densities,
            stepper,
            initial,
            steps: (self.horizon / self.dt).round() as usize,
            stride: self.stride,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslRow {
    pub t: f64,
    pub energy: f64,
    pub number_mean: f64,
    pub number_variance: f64,
    pub occupations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslLog {
    pub rows: Vec<CslRow>,
}

impl CslLog {
    pub fn to_csv(&self) -> String {
        let sites = self.rows.first().map_or(0, |r| r.occupations.len());
        let mut s = String::from("t,energy,number_mean,number_variance");
        for y in 0..sites {
            let _ = write!(s, ",n{y}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{:?},{:?},{:?},{:?}",
                r.t, r.energy, r.number_mean, r.number_variance
            );
            for o in &r.occupations {
                let _ = write!(s, ",{o:?}");
            }
            s.push('\n');
        }
        s
    }

    /// Largest change of the number variance from its initial value.
    pub fn number_variance_drift(&self) -> f64 {
        let v0 = self.rows.first().map_or(0.0, |r| r.number_variance);
        self.rows
            .iter()
            .map(|r| (r.number_variance - v0).abs())
            .fold(0.0, f64::max)
    }
}

impl CslSystem {
    fn row(&self, state: &LatticeFockState, t: f64) -> CslRow {
        let (m, v) = state.number_moments(&self.space);
        CslRow {
            t,
            energy: state.energy(&self.hamiltonian),
            number_mean: m,
            number_variance: v,
            occupations: state.site_occupations(&self.space),
        }
    }

    pub fn run(&self, noise: &mut NoiseStream) -> Result<(LatticeFockState, CslLog)> {
        self.run_observed(noise, |_, _, _| true)
    }

    /// As [`CslSystem::run`], with `observer(step, t, state)` after each step;
    /// returning `false` stops early.
    pub fn run_observed(
        &self,
        noise: &mut NoiseStream,
        mut observer: impl FnMut(usize, f64, &LatticeFockState) -> bool,
    ) -> Result<(LatticeFockState, CslLog)> {
        let mut state = self.initial.clone();
        let dt = self.stepper.dt();
        let mut rows = vec![self.row(&state, 0.0)];
        let mut dw = vec![0.0; self.stepper.centers()];
        for step in 1..=self.steps {
            noise.wiener_into(dt, &mut dw);
            self.stepper.step(&mut state, &dw)?;
            let t = step as f64 * dt;
            if step % self.stride == 0 {
                rows.push(self.row(&state, t));
            }
            if !observer(step, t, &state) {
                break;
            }
        }
        Ok((state, CslLog { rows }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub alpha: f64,
    pub slope: f64,
    pub slope_se: f64,
    /// Kernel-difference weight of the lattice for this α.
    pub hop_weight: f64,
    pub trajectories: usize,
    pub failed: usize,
}

/// Ensemble energy-growth slope for each α, all other settings from `config`.
/// Trajectory `i` of every α uses stream `(master_seed, i)`.
pub fn energy_growth_vs_alpha(
    config: &CslConfig,
    alphas: &[f64],
    trajectories: usize,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<SlopeRow>> {
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut cfg = config.clone();
        cfg.alpha = alpha;
        let system = cfg.build()?;
        let results = crate::ensemble::run_indexed(trajectories, master_seed, workers, |noise| {
            system
                .run(noise)
                .map(|(_, log)| log.rows.iter().map(|r| r.energy).collect::<Vec<f64>>())
        })?;
        let series = &results.values;
        let points = series[0].len();
        let n = series.len() as f64;
        let ts: Vec<f64> = (0..points).map(|k| (k * system.stride) as f64 * cfg.dt).collect();
        let means: Vec<f64> = (0..points)
            .map(|k| series.iter().map(|s| s[k]).sum::<f64>() / n)
            .collect();
        let fit = per_trajectory_slope_fit(&ts, series)?;
        if cfg.gamma > 0.0 && fit.slope < -3.0 * fit.slope_se {
            return Err(CollapseError::Fit(format!(
                "energy decreases at alpha = {alpha} (slope {} ± {}); series {:?}",
                fit.slope, fit.slope_se, means
            )));
        }
        out.push(SlopeRow {
            alpha,
            slope: fit.slope,
            slope_se: fit.slope_se,
            hop_weight: hop_damping_weight(&system.space, alpha),
            trajectories: series.len(),
            failed: results.failures.len(),
        });
    }
    Ok(out)
}

/// Slope of the ensemble-mean series with a standard error taken from the
/// spread of per-trajectory least-squares slopes.
fn per_trajectory_slope_fit(ts: &[f64], series: &[Vec<f64>]) -> Result<LinearFit> {
    let slopes = series
        .iter()
        .map(|s| linear_fit(ts, s).map(|f| f.slope))
        .collect::<Result<Vec<f64>>>()?;
    let n = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / n;
    let var = if slopes.len() > 1 {
        slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mean_series: Vec<f64> = (0..ts.len())
        .map(|k| series.iter().map(|s| s[k]).sum::<f64>() / n)
        .collect();
    let fit = linear_fit(ts, &mean_series)?;
    Ok(LinearFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_lexicographic() {
        let s = LatticeFockSpace::new(3, 1, 1.0).unwrap();
        assert_eq!(s.dim(), 8);
        assert_eq!(s.occupation(0), &[0, 0, 0]);
        assert_eq!(s.occupation(1), &[0, 0, 1]);
        assert_eq!(s.occupation(4), &[1, 0, 0]);
        for i in 0..s.dim() {
            assert_eq!(s.index_of(s.occupation(i)).unwrap(), i);
        }
        assert_eq!(LatticeFockSpace::new(6, 2, 1.0).unwrap().dim(), 729);
        assert!(LatticeFockSpace::new(7, 1, 1.0).is_err());
    }

    #[test]
    fn density_entries() {
        let s = LatticeFockSpace::new(4, 2, 1.0).unwrap();
        let n = build_number_density(&s, 2.0, 3.0).unwrap();
        assert_eq!(n.diagonal[0], 0.0);
        let one = s.index_of(&[0, 0, 1, 0]).unwrap();
        assert!((n.diagonal[one] - smearing_kernel(3.0, 0.0)).abs() < 1e-15);
        assert!(n.diagonal.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn hopping_is_symmetric_and_conserves_number() {
        let s = LatticeFockSpace::new(4, 2, 1.0).unwrap();
        let h = s.hopping_hamiltonian(0.7);
        assert!((&h - h.transpose()).abs().max() < 1e-15);
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                if h[(i, j)] != 0.0 {
                    assert_eq!(s.total_number(i), s.total_number(j));
                }
            }
        }
        // single particle on a 4-ring: band -2J cos k, ground energy -2J
        let (_, e0) = LatticeFockState::sector_ground_state(&s, &h, 1).unwrap();
        assert!((e0 + 1.4).abs() < 1e-12);
    }

    #[test]
    fn vacuum_is_stationary() {
        let s = LatticeFockSpace::new(3, 1, 1.0).unwrap();
        let h = s.hopping_hamiltonian(1.0);
        let d = site_densities(&s, 4.0).unwrap();
        let vac = LatticeFockState::basis_state(&s, &[0, 0, 0]).unwrap();
        let out = csl_step(&vac, &h, &d, 1.0, &[0.05, -0.02, 0.01], 1e-3).unwrap();
        for (a, b) in out.amplitudes().iter().zip(vac.amplitudes()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_gamma_is_unitary() {
        let s = LatticeFockSpace::new(3, 1, 1.0).unwrap();
        let h = s.hopping_hamiltonian(1.0);
        let d = site_densities(&s, 4.0).unwrap();
        let psi = LatticeFockState::basis_state(&s, &[1, 0, 0]).unwrap();
        let out = csl_step(&psi, &h, &d, 0.0, &[0.3, 0.1, -0.2], 0.1).unwrap();
        let u = unitary_propagator(&h, 0.1);
        let direct = &u * DVector::from_column_slice(psi.amplitudes());
        for (a, b) in out.amplitudes().iter().zip(direct.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_representation() {
        let s = LatticeFockSpace::new(3, 2, 1.0).unwrap();
        let h = s.hopping_hamiltonian(1.0);
        let (g, _) = LatticeFockState::sector_ground_state(&s, &h, 2).unwrap();
        let fq = g.first_quantized(&s, 2);
        let norm: f64 = fq.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(g.exchange_asymmetry(&s, 2) < 1e-12);
        assert!(g.sector_residual(&s, 2) < 1e-15);
    }

    #[test]
    fn narrow_kernel_weight_is_linear_in_alpha() {
        let s = LatticeFockSpace::new(6, 1, 1.0).unwrap();
        for a in [8.0, 16.0, 32.0] {
            let w = hop_damping_weight(&s, a);
            assert!((w / (a / PI) - 1.0).abs() < 0.05, "{a}: {w}");
        }
    }
}
