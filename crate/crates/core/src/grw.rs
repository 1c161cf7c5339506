//! Discrete GRW dynamics: Poisson-timed Gaussian localizations interleaved
//! with Schrödinger evolution.
//!
//! The 1-D localization operator is `L(c) = (α/π)^{1/4} exp(-(α/2)(q - c)²)`,
//! so that `∫ L(c)² dc = 1` and the jump-location density `‖L(c)ψ‖²` is the
//! particle's marginal convolved with a Gaussian of variance `1/(2α)`.

use serde::{Deserialize, Serialize};

use crate::error::{CollapseError, Result};
use crate::grid::SpatialGrid;
use crate::hamiltonian::{check_particles, HamiltonianSpec, Propagator};
use crate::noise::NoiseStream;
use crate::params::{coupling_constant, CollapseParams, ParticleSpec};
use crate::qmupl::{log_row, InitialState, QmuplState, TrajectoryLog};
use crate::wavefunction::{GridWavefunction, DEGENERATE_NORM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub time: f64,
    pub particle: usize,
    pub center: f64,
    pub pre_spread: f64,
    pub post_spread: f64,
}

/// Event times of a Poisson process with rate `lambda` on `[0, horizon]`, sorted.
pub fn sample_jump_times(lambda: f64, horizon: f64, noise: &mut NoiseStream) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CollapseError::Config(format!(
            "jump rate must be finite and ≥ 0, got {lambda}"
        )));
    }
    if !(horizon > 0.0) {
        return Err(CollapseError::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut times = Vec::new();
    if lambda == 0.0 {
        return Ok(times);
    }
    let mut t = noise.exponential(lambda);
    while t <= horizon {
        times.push(t);
        t += noise.exponential(lambda);
    }
    Ok(times)
}

/// Probability of at least one event in `[0, horizon]`.
pub fn jump_probability(lambda: f64, horizon: f64) -> f64 {
    -(-lambda * horizon).exp_m1()
}

/// Squared localization profile `L(c)²` evaluated on the grid, as a function of the
/// minimum-image offset, renormalized so that `Σ K dx = 1` exactly.
fn squared_kernel(grid: &SpatialGrid, alpha: f64) -> Vec<f64> {
    let n = grid.n_points();
    let dx = grid.dx();
    let mut k: Vec<f64> = (0..n)
        .map(|i| {
            let d = grid.periodic_delta(grid.x(i), grid.x(0));
            (-alpha * d * d).exp()
        })
        .collect();
    let s: f64 = k.iter().sum::<f64>() * dx;
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Jump-location density `p(c) = ‖L(c)ψ‖²` on the grid points; `Σ p dx = 1`.
pub fn jump_position_density(psi: &GridWavefunction, particle: usize, alpha: f64) -> Result<Vec<f64>> {
    psi.check_particle(particle)?;
    if !(alpha > 0.0) {
        return Err(CollapseError::Config(format!("alpha must be positive, got {alpha}")));
    }
    let grid = psi.grid();
    let n = grid.n_points();
    let dx = grid.dx();
    let rho = psi.marginal_density(particle);
    let total: f64 = rho.iter().sum::<f64>() * dx;
    let kernel = squared_kernel(grid, alpha);
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, r) in rho.iter().enumerate() {
            acc += kernel[(i + n - j) % n] * r;
        }
        *o = acc * dx / total;
    }
    Ok(out)
}

/// Inverse-CDF draw of a grid point from a (not necessarily normalized) density.
pub fn sample_jump_location(grid: &SpatialGrid, density: &[f64], u: f64) -> f64 {
    let total: f64 = density.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, p) in density.iter().enumerate() {
        acc += p;
        if acc > target {
            return grid.x(i);
        }
    }
    grid.x(density.len() - 1)
}

/// Multiply `psi` by `L(center)` acting on `particle` and renormalize.
/// The returned record has `time = 0`; callers fill it in.
pub fn apply_jump(
    psi: &GridWavefunction,
    particle: usize,
    center: f64,
    alpha: f64,
) -> Result<(GridWavefunction, JumpRecord)> {
    psi.check_particle(particle)?;
    if !(alpha >= 0.0) {
        return Err(CollapseError::Config(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    let grid = *psi.grid();
    if !grid.contains(center) {
        return Err(CollapseError::Config(format!("jump center {center} outside the grid")));
    }
    let pre_spread = psi.spread_position(particle);
    let n = grid.n_points();
    let prefactor = (alpha / std::f64::consts::PI).powf(0.25);
    let profile: Vec<f64> = (0..n)
        .map(|i| {
            let d = grid.periodic_delta(grid.x(i), center);
            prefactor * (-0.5 * alpha * d * d).exp()
        })
        .collect();
    let stride = n.pow((psi.particles() - 1 - particle) as u32);
    let mut out = psi.clone();
    for (idx, z) in out.amplitudes_mut().iter_mut().enumerate() {
        *z *= profile[(idx / stride) % n];
    }
    if out.norm_sqr().sqrt() < DEGENERATE_NORM {
        return Err(CollapseError::DegenerateState {
            norm: out.norm_sqr().sqrt(),
            threshold: DEGENERATE_NORM,
        });
    }
    out.normalize_in_place()?;
    let post_spread = out.spread_position(particle);
    Ok((
        out,
        JumpRecord {
            time: 0.0,
            particle,
            center,
            pre_spread,
            post_spread,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct GrwTrajectory {
    pub state: GridWavefunction,
    pub jumps: Vec<JumpRecord>,
    /// Time at which the observer asked to stop, if it did.
    pub stopped_at: Option<f64>,
}

/// Per-particle GRW rates `(m_n/m0)·λ`.
pub fn grw_rates(particles: &[ParticleSpec], params: &CollapseParams) -> Vec<f64> {
    particles
        .iter()
        .map(|p| coupling_constant(p.mass, params.m0, params.grw_lambda))
        .collect()
}

pub fn run_grw_trajectory(
    psi0: &GridWavefunction,
    h: &HamiltonianSpec,
    particles: &[ParticleSpec],
    params: &CollapseParams,
    horizon: f64,
    dt: f64,
    noise: &mut NoiseStream,
) -> Result<GrwTrajectory> {
    run_grw_trajectory_observed(psi0, h, particles, params, horizon, dt, noise, |_, _| true)
}

/// As [`run_grw_trajectory`], calling `observer(t, ψ)` after every grid step and
/// every jump; returning `false` ends the run early.
#[allow(clippy::too_many_arguments)]
pub fn run_grw_trajectory_observed(
    psi0: &GridWavefunction,
    h: &HamiltonianSpec,
    particles: &[ParticleSpec],
    params: &CollapseParams,
    horizon: f64,
    dt: f64,
    noise: &mut NoiseStream,
    mut observer: impl FnMut(f64, &GridWavefunction) -> bool,
) -> Result<GrwTrajectory> {
    check_particles(psi0, h)?;
    if !(params.alpha > 0.0) || !(params.m0 > 0.0) {
        return Err(CollapseError::Config("alpha and m0 must be positive".into()));
    }
    if particles.len() != psi0.particles() {
        return Err(CollapseError::Shape(format!(
            "{} particle spec(s) for a {}-particle state",
            particles.len(),
            psi0.particles()
        )));
    }
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(CollapseError::Config("dt and horizon must be positive".into()));
    }
    let grid = *psi0.grid();
    let rates = grw_rates(particles, params);

    let mut events: Vec<(f64, usize)> = Vec::new();
    for (p, &rate) in rates.iter().enumerate() {
        events.extend(sample_jump_times(rate, horizon, noise)?.into_iter().map(|t| (t, p)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut full = Propagator::new(grid, h, dt)?;
    let identity = full.is_identity();
    let mut state = psi0.clone();
    let mut jumps = Vec::with_capacity(events.len());
    let mut clock = StepClock { t: 0.0, k: 0, dt };

    let mut advance = |state: &mut GridWavefunction,
                       clock: &mut StepClock,
                       target: f64,
                       observe: &mut dyn FnMut(f64, &GridWavefunction) -> bool|
     -> Result<bool> {
        while clock.t < target {
            let boundary = (clock.k + 1) as f64 * clock.dt;
            let end = boundary.min(target);
            let span = end - clock.t;
            if !identity && span > 0.0 {
                if (span - clock.dt).abs() <= 1e-12 * clock.dt {
                    full.step(state.amplitudes_mut());
                } else {
                    Propagator::new(grid, h, span)?.step(state.amplitudes_mut());
                }
            }
            clock.t = end;
            if end >= boundary {
                clock.k += 1;
                if !observe(clock.t, state) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };

    for (te, p) in events {
        if !advance(&mut state, &mut clock, te, &mut observer)? {
            return Ok(GrwTrajectory {
                state,
                jumps,
                stopped_at: Some(clock.t),
            });
        }
        let density = jump_position_density(&state, p, params.alpha)?;
        let center = sample_jump_location(&grid, &density, noise.uniform());
        let (next, mut rec) = apply_jump(&state, p, center, params.alpha)?;
        rec.time = te;
        state = next;
        jumps.push(rec);
        if !observer(te, &state) {
            return Ok(GrwTrajectory {
                state,
                jumps,
                stopped_at: Some(te),
            });
        }
    }
    let end = (horizon / dt).round() * dt;
    let end = if (end - horizon).abs() <= 1e-9 * horizon {
        end
    } else {
        horizon
    };
    if !advance(&mut state, &mut clock, end, &mut observer)? {
        return Ok(GrwTrajectory {
            state,
            jumps,
            stopped_at: Some(clock.t),
        });
    }
    Ok(GrwTrajectory {
        state,
        jumps,
        stopped_at: None,
    })
}

/// Serializable description of one GRW run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrwConfig {
    pub grid: SpatialGrid,
    pub particles: Vec<ParticleSpec>,
    /// Jump rate per reference mass, simulation units.
    pub lambda: f64,
    pub alpha: f64,
    pub hamiltonian: HamiltonianSpec,
    pub dt: f64,
    pub horizon: f64,
    /// Log every `stride` grid steps.
    pub stride: usize,
    pub initial: InitialState,
}

/// Trajectory output: particle-0 moments on the stride grid plus the jump log.
#[derive(Debug, Clone)]
pub struct GrwRun {
    pub log: TrajectoryLog,
    pub jumps: Vec<JumpRecord>,
    pub state: GridWavefunction,
}

impl GrwConfig {
    pub fn params(&self) -> Result<CollapseParams> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CollapseError::Config(format!(
                "lambda must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(CollapseError::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(CollapseParams {
            grw_lambda: self.lambda,
            qmupl_lambda0: 1.0,
            alpha: self.alpha,
            m0: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.hamiltonian.validate()?;
        if self.particles.len() != self.hamiltonian.particles() {
            return Err(CollapseError::Config("particle list and Hamiltonian disagree".into()));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.stride == 0 {
            return Err(CollapseError::Config("dt, horizon and stride must be positive".into()));
        }
        crate::hamiltonian::kinetic_guard(&self.grid, &self.hamiltonian, self.dt)
    }

    pub fn run(&self, noise: &mut NoiseStream) -> Result<GrwRun> {
        self.validate()?;
        let masses: Vec<f64> = self.particles.iter().map(|p| p.mass).collect();
        let psi0 = self.initial.build(self.grid, &masses, &vec![0.0; masses.len()])?;
        let params = self.params()?;
        let h = &self.hamiltonian;
        let mut rows = vec![log_row(&QmuplState::lab(psi0.clone()), h, 0.0)?];
        let mut err = None;
        let log_every = self.stride as f64 * self.dt;
        let traj = run_grw_trajectory_observed(
            &psi0,
            h,
            &self.particles,
            &params,
            self.horizon,
            self.dt,
            noise,
            |t, psi| {
                let next = rows.len() as f64 * log_every;
                if t >= next - 1e-9 * self.dt {
                    match log_row(&QmuplState::lab(psi.clone()), h, t) {
                        Ok(r) => rows.push(r),
                        Err(e) => {
                            err = Some(e);
                            return false;
                        }
                    }
                }
                true
            },
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(GrwRun {
            log: TrajectoryLog { rows },
            jumps: traj.jumps,
            state: traj.state,
        })
    }
}

struct StepClock {
    t: f64,
    k: usize,
    dt: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::hamiltonian::evolve_schrodinger;
    use num_complex::Complex64;

    fn variance(grid: &SpatialGrid, p: &[f64]) -> f64 {
        let w: f64 = p.iter().sum();
        let m = p.iter().enumerate().map(|(i, v)| grid.x(i) * v).sum::<f64>() / w;
        p.iter()
            .enumerate()
            .map(|(i, v)| (grid.x(i) - m).powi(2) * v)
            .sum::<f64>()
            / w
    }

    #[test]
    fn density_is_normalized_and_broadened() {
        let g = make_grid(-20.0, 20.0, 512).unwrap();
        let s = 1.3;
        let alpha = 2.0;
        let psi = GridWavefunction::gaussian(g, 0.7, s, 0.4).unwrap();
        let p = jump_position_density(&psi, 0, alpha).unwrap();
        let total: f64 = p.iter().sum::<f64>() * g.dx();
        assert!((total - 1.0).abs() < 1e-8);
        let expect = s * s + 1.0 / (2.0 * alpha);
        assert!((variance(&g, &p) - expect).abs() / expect < 1e-6);
    }

    #[test]
    fn delta_state_density_has_kernel_width() {
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let mut amps = vec![Complex64::new(0.0, 0.0); 256];
        amps[128] = Complex64::new(1.0, 0.0);
        let psi = GridWavefunction::new(g, 1, amps).unwrap().normalize().unwrap();
        let alpha = 0.5;
        let p = jump_position_density(&psi, 0, alpha).unwrap();
        assert!((variance(&g, &p) - 1.0 / (2.0 * alpha)).abs() < 1e-3);
    }

    #[test]
    fn jump_at_mean_narrows_gaussian() {
        let g = make_grid(-20.0, 20.0, 1024).unwrap();
        let s = 2.0;
        let alpha = 0.3;
        let psi = GridWavefunction::gaussian(g, 1.0, s, 0.0).unwrap();
        let (post, rec) = apply_jump(&psi, 0, 1.0, alpha).unwrap();
        let expect = 1.0 / (1.0 / (s * s) + 2.0 * alpha);
        assert!((post.spread_position(0).powi(2) - expect).abs() / expect < 1e-6);
        assert!(rec.post_spread <= rec.pre_spread + g.dx());
        assert!((post.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jump_equals_pointwise_product() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        let psi = GridWavefunction::gaussian(g, -1.0, 1.5, 0.3).unwrap();
        let alpha = 1.7;
        let c = g.x(40);
        let (post, _) = apply_jump(&psi, 0, c, alpha).unwrap();
        let manual: Vec<Complex64> = psi
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(i, z)| z * (-0.5 * alpha * (g.x(i) - c).powi(2)).exp())
            .collect();
        let manual = GridWavefunction::new(g, 1, manual).unwrap().normalize().unwrap();
        for (a, b) in post.amplitudes().iter().zip(manual.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cat_component_is_suppressed() {
        let g = make_grid(-16.0, 16.0, 512).unwrap();
        let alpha: f64 = 1.0;
        let d = (10.0f64 / alpha).sqrt();
        let l = GridWavefunction::gaussian(g, -d, 0.3, 0.0).unwrap();
        let r = GridWavefunction::gaussian(g, d, 0.3, 0.0).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let cat = GridWavefunction::superpose(&l, one, &r, one).unwrap();
        let (post, _) = apply_jump(&cat, 0, d, alpha).unwrap();
        let left: f64 = post
            .marginal_density(0)
            .iter()
            .enumerate()
            .filter(|(i, _)| g.x(*i) < 0.0)
            .map(|(_, p)| p)
            .sum();
        let right: f64 = post
            .marginal_density(0)
            .iter()
            .enumerate()
            .filter(|(i, _)| g.x(*i) >= 0.0)
            .map(|(_, p)| p)
            .sum();
        assert!(left / right < (-20.0f64).exp());
    }

    #[test]
    fn vanishing_alpha_is_identity() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        let psi = GridWavefunction::gaussian(g, 1.0, 1.0, 0.2).unwrap();
        let (post, _) = apply_jump(&psi, 0, 3.0, 1e-14).unwrap();
        for (a, b) in post.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn degenerate_jump_is_error() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        let mut amps = vec![Complex64::new(0.0, 0.0); 64];
        amps[0] = Complex64::new(1.0, 0.0);
        let psi = GridWavefunction::new(g, 1, amps).unwrap().normalize().unwrap();
        let r = apply_jump(&psi, 0, 0.0, 1e4);
        assert!(matches!(r, Err(CollapseError::DegenerateState { .. })));
    }

    #[test]
    fn jump_times_are_sorted_within_horizon() {
        let mut noise = NoiseStream::new(3, 0);
        let t = sample_jump_times(4.0, 10.0, &mut noise).unwrap();
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.iter().all(|&x| (0.0..=10.0).contains(&x)));
        assert!(sample_jump_times(0.0, 1.0, &mut noise).unwrap().is_empty());
        assert!(sample_jump_times(-1.0, 1.0, &mut noise).is_err());
    }

    #[test]
    fn physical_rate_gives_tiny_probability() {
        let p = jump_probability(1e-16, 1.0);
        assert!((p - 1e-16).abs() < 1e-30);
    }

    #[test]
    fn inverse_cdf_picks_cells() {
        let g = make_grid(0.0, 8.0, 8).unwrap();
        let mut d = vec![0.0; 8];
        d[2] = 1.0;
        d[5] = 3.0;
        assert_eq!(sample_jump_location(&g, &d, 0.0), g.x(2));
        assert_eq!(sample_jump_location(&g, &d, 0.24), g.x(2));
        assert_eq!(sample_jump_location(&g, &d, 0.26), g.x(5));
        assert_eq!(sample_jump_location(&g, &d, 0.999), g.x(5));
    }

    #[test]
    fn zero_rate_matches_schrodinger() {
        let g = make_grid(-10.0, 10.0, 64).unwrap();
        let psi = GridWavefunction::gaussian(g, 1.0, 1.0, 0.5).unwrap();
        let h = HamiltonianSpec::harmonic(1.0, 1.0);
        let mut params = CollapseParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        params.grw_lambda = 0.0;
        let parts = [ParticleSpec::new(1.0, "p").unwrap()];
        let mut noise = NoiseStream::new(1, 0);
        let run = run_grw_trajectory(&psi, &h, &parts, &params, 0.5, 0.005, &mut noise).unwrap();
        assert!(run.jumps.is_empty());
        let mut direct = psi.clone();
        for _ in 0..100 {
            direct = evolve_schrodinger(&direct, &h, 0.005).unwrap();
        }
        for (a, b) in run.state.amplitudes().iter().zip(direct.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn straddling_jump_splits_step() {
        let g = make_grid(-10.0, 10.0, 64).unwrap();
        let psi = GridWavefunction::gaussian(g, 0.0, 1.0, 0.0).unwrap();
        let h = HamiltonianSpec::free(1.0);
        let params = CollapseParams::new(3.0, 1.0, 0.5, 1.0).unwrap();
        let parts = [ParticleSpec::new(1.0, "p").unwrap()];
        let run = run_grw_trajectory(&psi, &h, &parts, &params, 1.0, 0.005, &mut NoiseStream::new(9, 2)).unwrap();
        let again = run_grw_trajectory(&psi, &h, &parts, &params, 1.0, 0.005, &mut NoiseStream::new(9, 2)).unwrap();
        assert_eq!(run.jumps, again.jumps);
        assert_eq!(run.state, again.state);
        assert!(run.state.is_normalized());
    }
}
