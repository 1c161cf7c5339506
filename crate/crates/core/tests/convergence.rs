//! Weak order of the continuous-localization integrator, with the ensemble
//! expectation over Wiener increments evaluated by Gauss–Hermite quadrature so
//! the comparison carries no sampling noise.

use collapsar::qmupl::{QmuplState, QmuplStepper};
use collapsar::{make_grid, GridWavefunction, HamiltonianSpec};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

/// Nodes and weights for expectations over a standard normal (Golub–Welsch).
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        j[(k, k - 1)] = (k as f64).sqrt();
        j[(k - 1, k)] = (k as f64).sqrt();
    }
    let e = SymmetricEigen::new(j);
    (0..n)
        .map(|i| (e.eigenvalues[i], e.eigenvectors[(0, i)].powi(2)))
        .collect()
}

fn cat_state() -> GridWavefunction {
    let grid = make_grid(-2.0, 2.0, 32).unwrap();
    let a = GridWavefunction::gaussian(grid, -0.8, 0.35, 0.0).unwrap();
    let b = GridWavefunction::gaussian(grid, 0.8, 0.35, 0.0).unwrap();
    GridWavefunction::superpose(&a, Complex64::new(0.6, 0.0), &b, Complex64::new(0.8, 0.0)).unwrap()
}

/// E[|ψ⟩⟨ψ|] after `steps` steps covering `t_end`, exact up to quadrature error.
fn averaged_projector(
    psi0: &GridWavefunction,
    lambda: f64,
    t_end: f64,
    steps: usize,
    nodes: usize,
) -> DMatrix<Complex64> {
    let grid = *psi0.grid();
    let dt = t_end / steps as f64;
    let mut stepper = QmuplStepper::new(grid, &HamiltonianSpec::zero(1), &[lambda], dt).unwrap();
    let gh = gauss_hermite(nodes);
    let n = grid.n_points();
    let mut avg = DMatrix::<Complex64>::zeros(n, n);
    for idx in 0..nodes.pow(steps as u32) {
        let mut s = QmuplState::lab(psi0.clone());
        let (mut w, mut r) = (1.0, idx);
        for _ in 0..steps {
            let (z, wz) = gh[r % nodes];
            r /= nodes;
            w *= wz;
            stepper.step(&mut s, &[z * dt.sqrt()]).unwrap();
        }
        let v = s.psi.amplitudes();
        for j in 0..n {
            for i in 0..n {
                avg[(i, j)] += v[i] * v[j].conj() * w;
            }
        }
    }
    avg
}

#[test]
fn ensemble_mean_converges_at_first_order() {
    let psi0 = cat_state();
    let (lambda, t_end) = (1.0, 2.5e-3);
    let xs = psi0.grid().positions();
    let p0 = psi0.amplitudes();
    let n = xs.len();
    // Without a Hamiltonian the averaged density only loses off-diagonal weight.
    let exact = DMatrix::from_fn(n, n, |i, j| {
        p0[i] * p0[j].conj() * (-0.5 * lambda * (xs[i] - xs[j]).powi(2) * t_end).exp()
    });
    let errors: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&steps| (averaged_projector(&psi0, lambda, t_end, steps, 10) - &exact).norm())
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=3.0).contains(&ratio), "errors {errors:?}, ratio {ratio}");
    }
}

#[test]
fn quadrature_is_converged() {
    let psi0 = cat_state();
    let a = averaged_projector(&psi0, 1.0, 2.5e-3, 2, 10);
    let b = averaged_projector(&psi0, 1.0, 2.5e-3, 2, 14);
    assert!((a - b).norm() < 1e-12);
}
