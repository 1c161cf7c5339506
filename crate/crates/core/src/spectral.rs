//! FFT plumbing for row-major grids of dimension 1–3.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cached forward/inverse plans for an `n^dims` grid.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    dims: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    line: Vec<Complex64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("dims", &self.dims)
            .finish()
    }
}

impl Spectral {
    pub fn new(n: usize, dims: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n,
            dims,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            line: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let f = self.forward.clone();
        self.apply(data, &f);
    }

    /// Inverse transform in place, including the 1/N normalization.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let f = self.inverse.clone();
        self.apply(data, &f);
        let s = 1.0 / data.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    fn apply(&mut self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        let n = self.n;
        // innermost (contiguous) axis
        fft.process_with_scratch(data, &mut self.scratch);
        for axis in 0..self.dims.saturating_sub(1) {
            let stride = n.pow((self.dims - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for j in 0..n {
                        self.line[j] = data[base + off + j * stride];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for j in 0..n {
                        data[base + off + j * stride] = self.line[j];
                    }
                }
            }
        }
    }
}

/// Decompose a flat row-major index into per-axis indices (axis 0 most significant).
pub fn unflatten(mut idx: usize, n: usize, dims: usize, out: &mut [usize]) {
    for a in (0..dims).rev() {
        out[a] = idx % n;
        idx /= n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft2(data: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for k0 in 0..n {
            for k1 in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for j0 in 0..n {
                    for j1 in 0..n {
                        let ph = -2.0 * std::f64::consts::PI * ((k0 * j0 + k1 * j1) as f64) / n as f64;
                        acc += data[j0 * n + j1] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[k0 * n + k1] = acc;
            }
        }
        out
    }

    #[test]
    fn two_dimensional_matches_naive_dft() {
        let n = 8;
        let data: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let expect = naive_dft2(&data, n);
        let mut s = Spectral::new(n, 2);
        let mut got = data.clone();
        s.forward(&mut got);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-10);
        }
        s.inverse(&mut got);
        for (a, b) in got.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn three_dimensional_round_trip() {
        let n = 8;
        let data: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::new((i as f64).sqrt(), -(i as f64 * 0.5).sin()))
            .collect();
        let mut s = Spectral::new(n, 3);
        let mut got = data.clone();
        s.forward(&mut got);
        s.inverse(&mut got);
        for (a, b) in got.iter().zip(&data) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
