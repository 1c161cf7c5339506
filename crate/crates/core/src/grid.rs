use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{CollapseError, Result};

/// Uniform periodic 1-D grid. Point `i` sits at `x_min + i*dx`; `x_max` is
/// identified with `x_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl TryFrom<RawGrid> for SpatialGrid {
    type Error = CollapseError;

    fn try_from(r: RawGrid) -> Result<Self> {
        Self::new(r.x_min, r.x_max, r.n_points)
    }
}

/// Build a grid, rejecting inverted bounds and non-power-of-two sizes below 8.
pub fn make_grid(x_min: f64, x_max: f64, n_points: usize) -> Result<SpatialGrid> {
    SpatialGrid::new(x_min, x_max, n_points)
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(CollapseError::Config(format!(
                "grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(CollapseError::Config(format!(
                "grid size must be a power of two >= 8, got {n_points}"
            )));
        }
        Ok(Self { x_min, x_max, n_points })
    }

    /// Symmetric grid `[-half_width, half_width)`.
    pub fn centered(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_points as f64
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.length()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / self.length();
        (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                m * dk
            })
            .collect()
    }

    pub fn k_max(&self) -> f64 {
        PI / self.dx()
    }

    /// Signed minimum-image separation `a - b` on the periodic domain.
    pub fn periodic_delta(&self, a: f64, b: f64) -> f64 {
        let l = self.length();
        let mut d = (a - b) % l;
        if d >= 0.5 * l {
            d -= l;
        } else if d < -0.5 * l {
            d += l;
        }
        d
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x < self.x_max
    }

    /// Index of the grid cell nearest to `x` (periodic).
    pub fn nearest_index(&self, x: f64) -> usize {
        let n = self.n_points as f64;
        let r = ((x - self.x_min) / self.dx()).round().rem_euclid(n);
        r as usize % self.n_points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dx_matches_definition() {
        let g = make_grid(-10.0, 10.0, 16).unwrap();
        assert_eq!(g.dx(), 1.25);
        let g = make_grid(0.0, 2.0 * PI, 64).unwrap();
        assert!((g.dx() - 2.0 * PI / 64.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(-10.0, 10.0, 15).is_err());
        assert!(make_grid(-10.0, 10.0, 4).is_err());
        assert!(make_grid(10.0, -10.0, 16).is_err());
        assert!(make_grid(1.0, 1.0, 16).is_err());
    }

    #[test]
    fn wavenumbers_fft_order() {
        let g = make_grid(0.0, 2.0 * PI, 8).unwrap();
        let k = g.wavenumbers();
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn periodic_delta_wraps() {
        let g = make_grid(-5.0, 5.0, 16).unwrap();
        assert!((g.periodic_delta(4.5, -4.5) + 1.0).abs() < 1e-12);
        assert!((g.periodic_delta(1.0, 3.0) + 2.0).abs() < 1e-12);
    }
}
