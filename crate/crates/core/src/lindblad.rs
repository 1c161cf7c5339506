//! Dense master-equation integrator for
//!
//! `dρ/dt = -i[H, ρ] - ½ Σ_n λ_n [D_n, [D_n, ρ]]`
//!
//! with every `D_n` diagonal in the working basis (grid positions, or smeared
//! number operators in a Fock basis). The double commutator then acts
//! elementwise: `-½ Σ λ_n (d_n,i - d_n,j)² ρ_ij`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::hamiltonian::{HamiltonianKind, HamiltonianSpec};
use crate::wavefunction::GridWavefunction;

/// Largest grid handled by the dense integrator.
pub const MAX_GRID_POINTS: usize = 64;
/// Bound on `dt` times the spectral extent of the generator.
pub const RK4_STABILITY_LIMIT: f64 = 2.5;
const TRACE_DRIFT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    grid: Option<SpatialGrid>,
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    pub fn new(grid: Option<SpatialGrid>, matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(CollapseError::Shape("density matrix must be square".into()));
        }
        if let Some(g) = grid {
            if g.n_points() != matrix.nrows() {
                return Err(CollapseError::Shape(format!(
                    "{}×{} matrix on a {}-point grid",
                    matrix.nrows(),
                    matrix.ncols(),
                    g.n_points()
                )));
            }
        }
        Ok(Self { grid, matrix })
    }

    /// `|ψ⟩⟨ψ|` for a single-particle grid state, with the grid measure folded in
    /// so that the trace is `‖ψ‖²`.
    pub fn pure(psi: &GridWavefunction) -> Result<Self> {
        if psi.particles() != 1 {
            return Err(CollapseError::Shape("density operators are single-particle".into()));
        }
        if psi.grid().n_points() > MAX_GRID_POINTS {
            return Err(CollapseError::Shape(format!(
                "grid of {} points exceeds the dense limit {MAX_GRID_POINTS}",
                psi.grid().n_points()
            )));
        }
        let dx = psi.grid().dx();
        let mut rho = Self::outer(psi.amplitudes());
        rho.matrix *= Complex64::new(dx, 0.0);
        rho.grid = Some(*psi.grid());
        Ok(rho)
    }

    /// `|v⟩⟨v|` in an explicit basis (no measure).
    pub fn outer(v: &[Complex64]) -> Self {
        let n = v.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj());
        Self { grid: None, matrix }
    }

    pub fn grid(&self) -> Option<&SpatialGrid> {
        self.grid.as_ref()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
    }

    /// `Tr(O ρ)`.
    pub fn expectation(&self, op: &DMatrix<Complex64>) -> Complex64 {
        (op * &self.matrix).trace()
    }

    /// `Tr(diag(d) ρ)`.
    pub fn expectation_diag(&self, d: &[f64]) -> f64 {
        d.iter().enumerate().map(|(i, v)| v * self.matrix[(i, i)].re).sum()
    }

    /// Rows `i,j,re,im` in full round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,re,im\n");
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let z = self.matrix[(i, j)];
                let _ = writeln!(s, "{i},{j},{:?},{:?}", z.re, z.im);
            }
        }
        s
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() || self.grid != other.grid {
            return Err(CollapseError::Shape("density operators live in different bases".into()));
        }
        Ok(())
    }
}

/// `½ Σ |eigenvalues(ρ - σ)|`.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> Result<f64> {
    a.check_compatible(b)?;
    let d = &a.matrix - &b.matrix;
    let d = (&d + d.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(0.5 * SymmetricEigen::new(d).eigenvalues.iter().map(|e| e.abs()).sum::<f64>())
}

/// Average of `|ψ⟩⟨ψ|` over trajectories.
pub fn ensemble_density(trajectories: &[GridWavefunction]) -> Result<DensityOperator> {
    let first = trajectories
        .first()
        .ok_or_else(|| CollapseError::Shape("no trajectories to average".into()))?;
    let mut acc = DensityOperator::pure(first)?;
    for psi in &trajectories[1..] {
        if psi.grid() != first.grid() || psi.particles() != 1 {
            return Err(CollapseError::Shape("trajectories live on different grids".into()));
        }
        acc.matrix += DensityOperator::pure(psi)?.matrix;
    }
    acc.matrix /= Complex64::new(trajectories.len() as f64, 0.0);
    Ok(acc)
}

/// Decay rate `(λ/2) d²` of the coherence between points a distance `d` apart.
pub fn coherence_decay_rate(separation: f64, lambda: f64) -> f64 {
    0.5 * lambda * separation * separation
}

/// Grid Hamiltonian as a dense matrix: `F† diag(T) F + diag(V)`, the same
/// discrete operator the split-step propagator exponentiates.
pub fn grid_hamiltonian(grid: &SpatialGrid, h: &HamiltonianSpec) -> Result<DMatrix<Complex64>> {
    if h.particles() != 1 {
        return Err(CollapseError::Shape("dense grid Hamiltonian is single-particle".into()));
    }
    let n = grid.n_points();
    if n > MAX_GRID_POINTS {
        return Err(CollapseError::Shape(format!(
            "grid of {n} points exceeds the dense limit {MAX_GRID_POINTS}"
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    if matches!(h.kind, HamiltonianKind::Zero) {
        return Ok(m);
    }
    if matches!(h.kind, HamiltonianKind::MeasurementCoupling { .. }) {
        return Err(CollapseError::Config(
            "measurement coupling has no single dense grid Hamiltonian".into(),
        ));
    }
    let mass = h.masses[0];
    m = fourier_multiplier(grid, |k| k * k / (2.0 * mass));
    for i in 0..n {
        m[(i, i)] += h.potential(&[grid.x(i)]);
    }
    Ok(m)
}

/// Dense matrix of the grid operator `F† diag(f(k)) F`.
fn fourier_multiplier(grid: &SpatialGrid, f: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
    let n = grid.n_points();
    let ks = grid.wavenumbers();
    let dx = grid.dx();
    DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64) * dx;
        ks.iter()
            .map(|&k| Complex64::from_polar(f(k), k * d))
            .sum::<Complex64>()
            / n as f64
    })
}

/// Grid momentum operator, consistent with the FFT momentum marginal.
pub fn grid_momentum(grid: &SpatialGrid) -> Result<DMatrix<Complex64>> {
    if grid.n_points() > MAX_GRID_POINTS {
        return Err(CollapseError::Shape(format!(
            "grid of {} points exceeds the dense limit {MAX_GRID_POINTS}",
            grid.n_points()
        )));
    }
    Ok(fourier_multiplier(grid, |k| k))
}

/// `dρ/dt = -i[H, ρ] - Γ∘ρ` with `Γ_ij = ½ Σ λ_n (d_n,i - d_n,j)²`.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    hamiltonian: DMatrix<Complex64>,
    damping: DMatrix<f64>,
    spectral_extent: f64,
}

impl LindbladGenerator {
    /// General form: Hermitian `hamiltonian` and diagonal collapse operators with rates.
    pub fn new(hamiltonian: DMatrix<Complex64>, collapse: &[(f64, Vec<f64>)]) -> Result<Self> {
        let n = hamiltonian.nrows();
        if !hamiltonian.is_square() {
            return Err(CollapseError::Shape("Hamiltonian must be square".into()));
        }
        let mut damping = DMatrix::zeros(n, n);
        for (rate, d) in collapse {
            if !(*rate >= 0.0) {
                return Err(CollapseError::Config(format!("collapse rate must be ≥ 0, got {rate}")));
            }
            if d.len() != n {
                return Err(CollapseError::Shape(format!(
                    "collapse operator of length {} in dimension {n}",
                    d.len()
                )));
            }
            for i in 0..n {
                for j in 0..n {
                    damping[(i, j)] += 0.5 * rate * (d[i] - d[j]).powi(2);
                }
            }
        }
        let eig = SymmetricEigen::new(hamiltonian.clone()).eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
        let spread = if n > 0 { hi - lo } else { 0.0 };
        let max_damp = damping.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            hamiltonian,
            damping,
            spectral_extent: spread + max_damp,
        })
    }

    /// Grid generator with position collapse at rate `lambda` (single particle).
    pub fn for_grid(grid: &SpatialGrid, h: &HamiltonianSpec, lambda: f64) -> Result<Self> {
        let hm = grid_hamiltonian(grid, h)?;
        Self::new(hm, &[(lambda, grid.positions())])
    }

    pub fn hamiltonian(&self) -> &DMatrix<Complex64> {
        &self.hamiltonian
    }

    /// Largest stable RK4 step for this generator.
    pub fn max_dt(&self) -> f64 {
        if self.spectral_extent > 0.0 {
            RK4_STABILITY_LIMIT / self.spectral_extent
        } else {
            f64::INFINITY
        }
    }

    fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let hr = &self.hamiltonian * rho;
        let rh = rho * &self.hamiltonian;
        let mut out = (hr - rh) * Complex64::new(0.0, -1.0);
        for (o, (r, g)) in out.iter_mut().zip(rho.iter().zip(self.damping.iter())) {
            *o -= r * g;
        }
        out
    }

    /// One classical RK4 step; renormalizes the trace if it drifts past 1e-10.
    pub fn step(&self, rho: &DensityOperator, dt: f64) -> Result<DensityOperator> {
        if rho.dim() != self.hamiltonian.nrows() {
            return Err(CollapseError::Shape(
                "density operator and generator dimensions differ".into(),
            ));
        }
        if !(dt >= 0.0) || dt > self.max_dt() {
            return Err(CollapseError::StepSize(format!(
                "RK4 step {dt:e} outside stability bound {:e}",
                self.max_dt()
            )));
        }
        let r = &rho.matrix;
        let half = Complex64::new(0.5 * dt, 0.0);
        let full = Complex64::new(dt, 0.0);
        let k1 = self.apply(r);
        let k2 = self.apply(&(r + &k1 * half));
        let k3 = self.apply(&(r + &k2 * half));
        let k4 = self.apply(&(r + &k3 * full));
        let mut next = r
            + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4) * Complex64::new(dt / 6.0, 0.0);
        let tr = next.trace();
        let target = rho.matrix.trace();
        if (tr - target).norm() > TRACE_DRIFT {
            next *= target / tr;
        }
        Ok(DensityOperator {
            grid: rho.grid,
            matrix: next,
        })
    }

    /// `steps` RK4 steps of size `dt`.
    pub fn evolve(&self, rho: &DensityOperator, dt: f64, steps: usize) -> Result<DensityOperator> {
        let mut r = rho.clone();
        for _ in 0..steps {
            r = self.step(&r, dt)?;
        }
        Ok(r)
    }
}

/// One RK4 step for a single particle on a grid with position collapse at rate `lambdas[0]`.
pub fn lindblad_step(rho: &DensityOperator, h: &HamiltonianSpec, lambdas: &[f64], dt: f64) -> Result<DensityOperator> {
    let grid = rho
        .grid()
        .ok_or_else(|| CollapseError::Shape("lindblad_step needs a grid-based density operator".into()))?;
    if lambdas.len() != 1 {
        return Err(CollapseError::Shape(
            "grid Lindblad evolution is single-particle".into(),
        ));
    }
    LindbladGenerator::for_grid(grid, h, lambdas[0])?.step(rho, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::hamiltonian::Propagator;

    #[test]
    fn pure_state_projector() {
        let g = make_grid(-4.0, 4.0, 16).unwrap();
        let psi = GridWavefunction::gaussian(g, 0.3, 0.8, 0.5).unwrap();
        let rho = DensityOperator::pure(&psi).unwrap();
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        let single = ensemble_density(std::slice::from_ref(&psi)).unwrap();
        assert!(trace_distance(&rho, &single).unwrap() < 1e-14);
    }

    #[test]
    fn orthogonal_mixture_has_half_purity() {
        let g = make_grid(0.0, 8.0, 8).unwrap();
        let basis = |i: usize| {
            let mut a = vec![Complex64::new(0.0, 0.0); 8];
            a[i] = Complex64::new(1.0, 0.0);
            GridWavefunction::new(g, 1, a).unwrap().normalize().unwrap()
        };
        let rho = ensemble_density(&[basis(1), basis(5)]).unwrap();
        assert!((rho.purity() - 0.5).abs() < 1e-14);
        assert!((trace_distance(&DensityOperator::pure(&basis(1)).unwrap(), &rho).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dense_hamiltonian_matches_propagator() {
        let g = make_grid(-6.0, 6.0, 32).unwrap();
        let h = HamiltonianSpec::harmonic(1.3, 0.7);
        let hm = grid_hamiltonian(&g, &h).unwrap();
        assert!((&hm - hm.adjoint()).iter().all(|z| z.norm() < 1e-12));
        // kinetic part alone: exp(-iT dt) via eigen-decomposition vs spectral step
        let free = HamiltonianSpec::free(1.3);
        let tm = grid_hamiltonian(&g, &free).unwrap();
        let dt = 0.01;
        let eig = SymmetricEigen::new(tm);
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| Complex64::from_polar(1.0, -e * dt)));
        let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
        let psi = GridWavefunction::gaussian(g, 0.5, 1.0, 0.4).unwrap();
        let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
        let dense = u * v;
        let mut spectral = psi.amplitudes().to_vec();
        Propagator::new(g, &free, dt).unwrap().step(&mut spectral);
        for (a, b) in dense.iter().zip(&spectral) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn unitary_limit_conserves_purity() {
        let g = make_grid(-6.0, 6.0, 32).unwrap();
        let psi = GridWavefunction::gaussian(g, 1.0, 1.0, 0.0).unwrap();
        let gen = LindbladGenerator::for_grid(&g, &HamiltonianSpec::harmonic(1.0, 1.0), 0.0).unwrap();
        let rho = gen.evolve(&DensityOperator::pure(&psi).unwrap(), 1e-3, 500).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-8);
        assert!(rho.hermiticity_error() < 1e-10);
    }

    #[test]
    fn diagonal_constant_without_hamiltonian() {
        let g = make_grid(-4.0, 4.0, 16).unwrap();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.5, 0.2).unwrap();
        let rho0 = DensityOperator::pure(&psi).unwrap();
        let rho = lindblad_step(&rho0, &HamiltonianSpec::zero(1), &[1.0], 1e-3).unwrap();
        for i in 0..16 {
            assert!((rho.matrix()[(i, i)] - rho0.matrix()[(i, i)]).norm() < 1e-15);
        }
    }

    #[test]
    fn decay_rate_formula() {
        assert_eq!(coherence_decay_rate(2.0, 1.0), 2.0);
        assert_eq!(coherence_decay_rate(0.0, 3.0), 0.0);
        assert_eq!(coherence_decay_rate(1.5, 2.0), 2.0 * coherence_decay_rate(1.5, 1.0));
    }

    #[test]
    fn unstable_step_is_rejected() {
        let g = make_grid(-4.0, 4.0, 16).unwrap();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.0, 0.0).unwrap();
        let rho = DensityOperator::pure(&psi).unwrap();
        let r = lindblad_step(&rho, &HamiltonianSpec::free(1.0), &[1.0], 1.0);
        assert!(matches!(r, Err(CollapseError::StepSize(_))));
    }
}
