//! Complex amplitudes on a periodic grid for up to three particles.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::spectral::{unflatten, Spectral};

/// Norm below which a state is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-30;
/// Allowed deviation of ‖ψ‖² from 1 after any public operation.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Fraction of probability allowed in the two outermost cells on each side.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-8;

pub const MAX_PARTICLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWavefunction {
    grid: SpatialGrid,
    particles: usize,
    amplitudes: Vec<Complex64>,
}

impl GridWavefunction {
    pub fn new(grid: SpatialGrid, particles: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_size(&grid, particles)?;
        let expect = grid.n_points().pow(particles as u32);
        if amplitudes.len() != expect {
            return Err(CollapseError::Shape(format!(
                "expected {expect} amplitudes for {particles} particle(s), got {}",
                amplitudes.len()
            )));
        }
        Ok(Self {
            grid,
            particles,
            amplitudes,
        })
    }

    pub fn zeros(grid: SpatialGrid, particles: usize) -> Result<Self> {
        let len = grid.n_points().pow(particles as u32);
        Self::new(grid, particles, vec![Complex64::new(0.0, 0.0); len])
    }

    /// Single-particle state sampled from `f`, then normalized.
    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let amps = grid.positions().into_iter().map(f).collect();
        Self::new(grid, 1, amps)?.normalize()
    }

    /// Real Gaussian packet with position spread `sigma` and mean momentum `momentum` (ħ = 1).
    pub fn gaussian(grid: SpatialGrid, center: f64, sigma: f64, momentum: f64) -> Result<Self> {
        let a = Complex64::new(1.0 / (4.0 * sigma * sigma), 0.0);
        Self::complex_gaussian(grid, center, a, momentum)
    }

    /// Gaussian `exp(-a (x - center)² + i p x)` with complex width parameter `a` (Re a > 0).
    /// Distances are minimum-image so packets near the edge wrap smoothly.
    pub fn complex_gaussian(grid: SpatialGrid, center: f64, a: Complex64, momentum: f64) -> Result<Self> {
        if a.re <= 0.0 {
            return Err(CollapseError::Config("Gaussian width parameter needs Re a > 0".into()));
        }
        Self::from_fn(grid, |x| {
            let d = grid.periodic_delta(x, center);
            (-a * d * d + Complex64::new(0.0, momentum * (center + d))).exp()
        })
    }

    /// Normalized `ca·a + cb·b`.
    pub fn superpose(a: &Self, ca: Complex64, b: &Self, cb: Complex64) -> Result<Self> {
        a.check_compatible(b)?;
        let amps = a
            .amplitudes
            .iter()
            .zip(&b.amplitudes)
            .map(|(x, y)| ca * x + cb * y)
            .collect();
        Self::new(a.grid, a.particles, amps)?.normalize()
    }

    /// Tensor product of single-particle states on the same grid.
    pub fn product(factors: &[&Self]) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| CollapseError::Shape("empty product".into()))?;
        let grid = first.grid;
        let mut amps = vec![Complex64::new(1.0, 0.0)];
        for f in factors {
            if f.particles != 1 || f.grid != grid {
                return Err(CollapseError::Shape(
                    "product factors must be single-particle states on one grid".into(),
                ));
            }
            let mut next = Vec::with_capacity(amps.len() * grid.n_points());
            for a in &amps {
                for b in &f.amplitudes {
                    next.push(a * b);
                }
            }
            amps = next;
        }
        Self::new(grid, factors.len(), amps)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    /// Volume element dx^k.
    pub fn cell_volume(&self) -> f64 {
        self.grid.dx().powi(self.particles as i32)
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.particles != other.particles {
            return Err(CollapseError::Shape("wavefunctions live on different grids".into()));
        }
        Ok(())
    }

    pub fn check_particle(&self, particle: usize) -> Result<()> {
        if particle >= self.particles {
            return Err(CollapseError::Shape(format!(
                "particle index {particle} out of range for {} particle(s)",
                self.particles
            )));
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell_volume()
    }

    /// Rescale to unit norm; a vanishing norm is a degenerate-state error.
    pub fn normalize(mut self) -> Result<Self> {
        self.normalize_in_place()?;
        Ok(self)
    }

    /// Normalizes in place and returns the squared norm found before rescaling.
    pub fn normalize_in_place(&mut self) -> Result<f64> {
        let n2 = self.norm_sqr();
        let norm = n2.sqrt();
        if !(norm > DEGENERATE_NORM) || !norm.is_finite() {
            return Err(CollapseError::DegenerateState {
                norm,
                threshold: DEGENERATE_NORM,
            });
        }
        let s = 1.0 / norm;
        for z in &mut self.amplitudes {
            *z *= s;
        }
        Ok(n2)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// |ψ|² integrated over all particles except `particle`.
    pub fn marginal_density(&self, particle: usize) -> Vec<f64> {
        let n = self.grid.n_points();
        let k = self.particles;
        let dx_rest = self.grid.dx().powi(k as i32 - 1);
        let mut out = vec![0.0; n];
        if k == 1 {
            for (o, z) in out.iter_mut().zip(&self.amplitudes) {
                *o = z.norm_sqr();
            }
            return out;
        }
        let stride = n.pow((k - 1 - particle) as u32);
        for (idx, z) in self.amplitudes.iter().enumerate() {
            out[(idx / stride) % n] += z.norm_sqr() * dx_rest;
        }
        out
    }

    pub fn expectation_position(&self, particle: usize) -> f64 {
        let rho = self.marginal_density(particle);
        let dx = self.grid.dx();
        rho.iter().enumerate().map(|(i, p)| self.grid.x(i) * p).sum::<f64>() * dx / (rho.iter().sum::<f64>() * dx)
    }

    pub fn spread_position(&self, particle: usize) -> f64 {
        let rho = self.marginal_density(particle);
        let total: f64 = rho.iter().sum();
        let mean = rho.iter().enumerate().map(|(i, p)| self.grid.x(i) * p).sum::<f64>() / total;
        let var = rho
            .iter()
            .enumerate()
            .map(|(i, p)| (self.grid.x(i) - mean).powi(2) * p)
            .sum::<f64>()
            / total;
        var.max(0.0).sqrt()
    }

    /// Momentum marginal |ψ̃(k)|² for one particle (unnormalized weights, FFT order).
    pub fn momentum_marginal(&self, particle: usize) -> Vec<f64> {
        let n = self.grid.n_points();
        let k = self.particles;
        let mut data = self.amplitudes.clone();
        Spectral::new(n, k).forward(&mut data);
        let stride = n.pow((k - 1 - particle) as u32);
        let mut out = vec![0.0; n];
        for (idx, z) in data.iter().enumerate() {
            out[(idx / stride) % n] += z.norm_sqr();
        }
        out
    }

    pub fn expectation_momentum(&self, particle: usize) -> f64 {
        let w = self.momentum_marginal(particle);
        let ks = self.grid.wavenumbers();
        let total: f64 = w.iter().sum();
        w.iter().zip(&ks).map(|(p, k)| p * k).sum::<f64>() / total
    }

    pub fn spread_momentum(&self, particle: usize) -> f64 {
        let w = self.momentum_marginal(particle);
        let ks = self.grid.wavenumbers();
        let total: f64 = w.iter().sum();
        let mean = w.iter().zip(&ks).map(|(p, k)| p * k).sum::<f64>() / total;
        let var = w.iter().zip(&ks).map(|(p, k)| p * (k - mean).powi(2)).sum::<f64>() / total;
        var.max(0.0).sqrt()
    }

    /// Fraction of the particle's probability in the two outermost cells on each side.
    pub fn boundary_mass_fraction(&self, particle: usize) -> f64 {
        let rho = self.marginal_density(particle);
        let n = rho.len();
        let edge = rho[0] + rho[1] + rho[n - 2] + rho[n - 1];
        edge / rho.iter().sum::<f64>()
    }

    /// True when any particle leaks more than [`BOUNDARY_MASS_LIMIT`] into the edge cells.
    pub fn boundary_flagged(&self) -> bool {
        (0..self.particles).any(|p| self.boundary_mass_fraction(p) > BOUNDARY_MASS_LIMIT)
    }

    /// ⟨φ|ψ⟩ with the grid measure.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.cell_volume()
    }

    /// Position of `particle` at flat index `idx`.
    pub fn coordinate(&self, idx: usize, particle: usize) -> f64 {
        let mut ix = [0usize; MAX_PARTICLES];
        unflatten(idx, self.grid.n_points(), self.particles, &mut ix);
        self.grid.x(ix[particle])
    }
}

fn check_size(grid: &SpatialGrid, particles: usize) -> Result<()> {
    let n = grid.n_points();
    let ok = match particles {
        1 => true,
        2 => n <= 256,
        3 => n <= 64,
        _ => false,
    };
    if !ok {
        return Err(CollapseError::Config(format!(
            "{particles} particle(s) on a {n}-point grid exceeds the full-grid limit"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn grid() -> SpatialGrid {
        make_grid(-16.0, 16.0, 256).unwrap()
    }

    #[test]
    fn normalize_halves_amplitudes_of_norm_four() {
        let g = grid();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.0, 0.0).unwrap();
        let doubled: Vec<Complex64> = psi.amplitudes().iter().map(|z| z * 2.0).collect();
        let big = GridWavefunction::new(g, 1, doubled).unwrap();
        assert!((big.norm_sqr() - 4.0).abs() < 1e-12);
        let back = big.normalize().unwrap();
        for (a, b) in back.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-14);
        }
        let same = psi.clone().normalize().unwrap();
        assert!((same.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_state_is_degenerate() {
        let z = GridWavefunction::zeros(grid(), 1).unwrap();
        assert!(matches!(z.normalize(), Err(CollapseError::DegenerateState { .. })));
    }

    #[test]
    fn position_moments() {
        let g = grid();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.0, 0.0).unwrap();
        assert!(psi.expectation_position(0).abs() < 1e-10);
        assert!((psi.spread_position(0) - 1.0).abs() < 1e-8);
        let shifted = GridWavefunction::gaussian(g, 3.0, 1.0, 0.0).unwrap();
        assert!((shifted.expectation_position(0) - 3.0).abs() < g.dx() / 10.0);
        let l = GridWavefunction::gaussian(g, -4.0, 0.7, 0.0).unwrap();
        let r = GridWavefunction::gaussian(g, 4.0, 0.7, 0.0).unwrap();
        let cat = GridWavefunction::superpose(&l, Complex64::new(1.0, 0.0), &r, Complex64::new(1.0, 0.0)).unwrap();
        assert!(cat.expectation_position(0).abs() < 1e-10);
    }

    #[test]
    fn momentum_moments() {
        let g = grid();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.5, 1.25).unwrap();
        assert!((psi.expectation_momentum(0) - 1.25).abs() < 1e-10);
        assert!((psi.spread_momentum(0) - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn two_particle_marginals() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        let a = GridWavefunction::gaussian(g, -2.0, 0.8, 0.5).unwrap();
        let b = GridWavefunction::gaussian(g, 1.5, 0.6, -0.3).unwrap();
        let ab = GridWavefunction::product(&[&a, &b]).unwrap();
        assert!((ab.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((ab.expectation_position(0) + 2.0).abs() < 1e-8);
        assert!((ab.expectation_position(1) - 1.5).abs() < 1e-8);
        assert!((ab.expectation_momentum(0) - 0.5).abs() < 1e-8);
        assert!((ab.expectation_momentum(1) + 0.3).abs() < 1e-8);
        assert!((ab.spread_position(1) - 0.6).abs() < 1e-8);
    }

    #[test]
    fn boundary_flag() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        let ok = GridWavefunction::gaussian(g, 0.0, 0.8, 0.0).unwrap();
        assert!(!ok.boundary_flagged());
        let bad = GridWavefunction::gaussian(g, 0.0, 4.0, 0.0).unwrap();
        assert!(bad.boundary_flagged());
    }

    #[test]
    fn size_limits() {
        let g = make_grid(-8.0, 8.0, 128).unwrap();
        assert!(GridWavefunction::zeros(g, 3).is_err());
        assert!(GridWavefunction::zeros(g, 2).is_ok());
        assert!(GridWavefunction::zeros(g, 4).is_err());
    }
}
