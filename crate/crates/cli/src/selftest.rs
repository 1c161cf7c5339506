//! The twelve acceptance checks, shared by the `selftest` subcommand and the
//! `acceptance` test target. Each check builds its own oracle independently of
//! the code path under test where one exists.

use std::f64::consts::PI;

use collapsar::analytics::{asymptotic_spread_si, trajectory_variance_si};
use collapsar::csl::{energy_growth_vs_alpha, CslConfig, CslInitial, LatticeFockState};
use collapsar::ensemble::{
    collapse_time_scaling, ehrenfest_check, qmupl_lindblad_comparison, run_ensemble, run_indexed, run_qmupl_sampled,
    trajectory_variance_scaling, EnsembleModel,
};
use collapsar::grw::{apply_jump, GrwConfig};
use collapsar::lindblad::{DensityOperator, LindbladGenerator};
use collapsar::measurement::{MeasurementModel, Outcome};
use collapsar::qmupl::{run_qmupl_trajectory, stationary_spread, InitialState, QmuplConfig};
use collapsar::stats::{binomial_se, chi_square, log_log_fit, merge_sparse_bins, poisson_goodness_of_fit};
use collapsar::{make_grid, GridWavefunction, HamiltonianSpec, ParticleSpec, Result, SpatialGrid};
use num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {}  {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

type Check = fn(usize) -> Result<(bool, String)>;

/// `(id, name, check)`; each check takes the worker count.
pub const CRITERIA: [(u8, &str, Check); 12] = [
    (1, "born-rule", born_rule),
    (2, "lindblad-equivalence", lindblad_equivalence),
    (3, "coherence-decay", coherence_decay),
    (4, "grw-jump-statistics", grw_jump_statistics),
    (5, "asymptotic-localization", asymptotic_localization),
    (6, "si-formulas", si_formulas),
    (7, "ehrenfest", ehrenfest),
    (8, "cubic-variance-regime", cubic_variance),
    (9, "energy-growth", energy_growth),
    (10, "amplification", amplification),
    (11, "csl-identical-particles", csl_identical_particles),
    (12, "determinism", determinism),
];

pub fn run_criterion(id: u8, workers: usize) -> CriterionResult {
    let (id, name, check) = CRITERIA[(id - 1) as usize];
    match check(workers) {
        Ok((passed, detail)) => CriterionResult {
            id,
            name,
            passed,
            detail,
        },
        Err(e) => CriterionResult {
            id,
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

const BASE_SEED: u64 = 20_240_600;

/// Each criterion draws from its own master seed so the checks are independent.
const fn seed(id: u64) -> u64 {
    BASE_SEED + id
}

fn free(mass: f64) -> HamiltonianSpec {
    HamiltonianSpec::free(mass)
}

fn particle(mass: f64) -> Vec<ParticleSpec> {
    vec![ParticleSpec::new(mass, "p").expect("positive mass")]
}

fn born_rule(workers: usize) -> Result<(bool, String)> {
    let model = MeasurementModel::pointer_default(0.3)?;
    let n = 10_000;
    let out = run_ensemble(&EnsembleModel::Measurement(model), n, seed(1), workers)?;
    let plus = out
        .outcomes
        .iter()
        .filter(|o| o.record.outcome == Outcome::Plus)
        .count();
    let freq = plus as f64 / n as f64;
    let tol = 3.0 * binomial_se(0.3, n);
    let passed = (freq - 0.3).abs() <= tol && out.failures.is_empty();
    let b = out.born.expect("measurement ensemble reports Born statistics");
    Ok((
        passed,
        format!(
            "plus frequency {freq:.4} (target 0.300 ± {tol:.3}), indeterminate {}, failed {}",
            b.indeterminate,
            out.failures.len()
        ),
    ))
}

fn lindblad_config() -> Result<QmuplConfig> {
    let grid = SpatialGrid::centered(6.0, 16)?;
    Ok(QmuplConfig {
        grid,
        particles: particle(1.0),
        lambda0: 1.0,
        hamiltonian: free(1.0),
        dt: 1.0 / 4000.0,
        horizon: 1.0,
        stride: 800,
        initial: InitialState::Gaussian {
            center: 0.0,
            sigma: 1.0,
            momentum: 0.5,
        },
        comoving: false,
    })
}

fn lindblad_equivalence(workers: usize) -> Result<(bool, String)> {
    let cfg = lindblad_config()?;
    let checkpoints: Vec<usize> = (1..=5).map(|k| k * 800).collect();
    let cmp = qmupl_lindblad_comparison(&cfg, &checkpoints, 10_000, seed(2), workers)?;
    let worst = cmp.trace_distance.iter().cloned().fold(0.0, f64::max);
    Ok((
        worst <= 0.02,
        format!(
            "trace distances {:?} (limit 0.02)",
            cmp.trace_distance.iter().map(|d| round4(*d)).collect::<Vec<_>>()
        ),
    ))
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn coherence_decay(_: usize) -> Result<(bool, String)> {
    let grid = make_grid(-4.0, 4.0, 32)?;
    let lambda = 0.8;
    let a = GridWavefunction::gaussian(grid, -1.5, 0.6, 0.3)?;
    let b = GridWavefunction::gaussian(grid, 1.5, 0.6, -0.2)?;
    let psi = GridWavefunction::superpose(&a, Complex64::new(0.6, 0.0), &b, Complex64::new(0.0, 0.8))?;
    let rho0 = DensityOperator::pure(&psi)?;
    let gen = LindbladGenerator::for_grid(&grid, &HamiltonianSpec::zero(1), lambda)?;
    let t = 1.0;
    let steps = 2000;
    let rho = gen.evolve(&rho0, t / steps as f64, steps)?;
    let mut worst: f64 = 0.0;
    for i in 0..grid.n_points() {
        for j in 0..grid.n_points() {
            let d = grid.x(i) - grid.x(j);
            let expect = rho0.matrix()[(i, j)] * (-0.5 * lambda * d * d * t).exp();
            if expect.norm() > 1e-12 {
                worst = worst.max((rho.matrix()[(i, j)] - expect).norm() / expect.norm());
            }
        }
    }
    Ok((worst <= 1e-6, format!("max relative error {worst:.2e} (limit 1e-6)")))
}

/// Continuum jump-location density for `c₀G(x-a) + c₁G(x+a)` with real Gaussians
/// of position variance `s²`: each term of `|ψ|²` is a Gaussian of variance
/// `s²`, broadened by the kernel to `s² + 1/(2α)`.
fn superposition_jump_cdf(x: f64, a: f64, s: f64, w: [f64; 2], alpha: f64) -> f64 {
    let var = s * s + 0.5 / alpha;
    let sd = var.sqrt();
    let cross = 2.0 * (w[0] * w[1]).sqrt() * (-a * a / (2.0 * s * s)).exp();
    let total = w[0] + w[1] + cross;
    let phi = |m: f64| Normal::new(m, sd).expect("valid normal").cdf(x);
    (w[0] * phi(a) + w[1] * phi(-a) + cross * phi(0.0)) / total
}

fn grw_jump_statistics(workers: usize) -> Result<(bool, String)> {
    let grid = make_grid(-12.0, 12.0, 256)?;
    let (a, s, alpha) = (3.0, 0.8, 2.0);
    let weights = [0.35, 0.65];
    let cfg = GrwConfig {
        grid,
        particles: particle(1.0),
        lambda: 1.0,
        alpha,
        hamiltonian: HamiltonianSpec::zero(1),
        dt: 0.05,
        horizon: 5.0,
        stride: 100,
        initial: InitialState::Superposition {
            centers: [a, -a],
            sigma: s,
            weights,
        },
    };
    let n = 10_000;
    let runs = run_indexed(n, seed(4), workers, |noise| cfg.run(noise).map(|r| r.jumps))?;
    let counts: Vec<usize> = runs.values.iter().map(|j| j.len()).collect();
    let poisson = poisson_goodness_of_fit(&counts, 5.0)?;

    // first jump of each run sees the unchanged initial state (H = 0)
    let firsts: Vec<f64> = runs.values.iter().filter_map(|j| j.first().map(|r| r.center)).collect();
    // jumps land on grid points, so bins are whole groups of three grid cells
    let dx = grid.dx();
    let edges: Vec<f64> = (0..grid.n_points())
        .step_by(3)
        .map(|i| grid.x(i) - 0.5 * dx)
        .filter(|e| e.abs() <= 7.0)
        .collect();
    let mut observed = vec![0.0; edges.len() + 1];
    for &c in &firsts {
        let bin = edges.partition_point(|e| *e <= c);
        observed[bin] += 1.0;
    }
    let cdf = |x: f64| superposition_jump_cdf(x, a, s, weights, alpha);
    let mut expected = Vec::with_capacity(observed.len());
    let mut prev = 0.0;
    for e in &edges {
        let c = cdf(*e);
        expected.push((c - prev) * firsts.len() as f64);
        prev = c;
    }
    expected.push((1.0 - prev) * firsts.len() as f64);
    let (o, e) = merge_sparse_bins(&observed, &expected, 5.0);
    let hist = chi_square(&o, &e, 0)?;

    // post-jump width of a single Gaussian, at jump centres drawn by the runs
    let single = GridWavefunction::gaussian(grid, 0.0, s, 0.0)?;
    let expect_var = 1.0 / (1.0 / (s * s) + 2.0 * alpha);
    let worst_var = firsts
        .iter()
        .take(200)
        .map(|&c| apply_jump(&single, 0, c, alpha).map(|(_, r)| (r.post_spread.powi(2) / expect_var - 1.0).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let passed = poisson.p_value > 0.01 && hist.p_value > 0.01 && worst_var < 0.02;
    Ok((
        passed,
        format!(
            "Poisson p = {:.3}, location p = {:.3}, post-jump variance error {:.2e}",
            poisson.p_value, hist.p_value, worst_var
        ),
    ))
}

/// Width parameter of `exp(-a x²)` under `da/dt = λ - (2i/m) a²`, integrated with RK4.
fn width_oracle(a0: Complex64, lambda: f64, mass: f64, t: f64, steps: usize) -> Complex64 {
    let f = |a: Complex64| Complex64::new(lambda, 0.0) - Complex64::new(0.0, 2.0 / mass) * a * a;
    let h = t / steps as f64;
    let mut a = a0;
    for _ in 0..steps {
        let k1 = f(a);
        let k2 = f(a + k1 * (h / 2.0));
        let k3 = f(a + k2 * (h / 2.0));
        let k4 = f(a + k3 * h);
        a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    a
}

fn asymptotic_localization(_: usize) -> Result<(bool, String)> {
    let lambdas = [0.5, 1.0, 2.0, 4.0];
    let mut spreads = Vec::new();
    let mut worst: f64 = 0.0;
    for &lambda in &lambdas {
        let s_inf = stationary_spread(lambda, 1.0);
        let grid = SpatialGrid::centered(6.0 * s_inf, 32)?;
        let sigma0 = 1.5 * s_inf;
        let dt = 0.5e-2 / (lambda * grid.half_width().powi(2));
        let horizon = (8.0 / lambda.sqrt() / dt).round() * dt;
        let cfg = QmuplConfig {
            grid,
            particles: particle(1.0),
            lambda0: lambda,
            hamiltonian: free(1.0),
            dt,
            horizon,
            stride: (horizon / dt).round() as usize,
            initial: InitialState::Gaussian {
                center: 0.0,
                sigma: sigma0,
                momentum: 0.0,
            },
            comoving: true,
        };
        let log = run_qmupl_trajectory(&cfg, &mut collapsar::NoiseStream::new(seed(5), 0))?;
        let sim = log.rows.last().expect("final row").sigma_q;
        let a = width_oracle(
            Complex64::new(0.25 / (sigma0 * sigma0), 0.0),
            lambda,
            1.0,
            horizon,
            20_000,
        );
        let oracle = (0.25 / a.re).sqrt();
        worst = worst.max((sim / oracle - 1.0).abs());
        spreads.push(sim);
    }
    let fit = log_log_fit(&lambdas, &spreads)?;
    let passed = worst < 0.02 && (fit.slope + 0.25).abs() <= 0.03;
    Ok((
        passed,
        format!(
            "max deviation from width ODE {:.2e}, lambda exponent {:.4}",
            worst, fit.slope
        ),
    ))
}

/// Values printed by the `predict` subcommand, checked against the quoted ones.
fn si_formulas(_: usize) -> Result<(bool, String)> {
    let checks = [
        ("spread 1 g", asymptotic_spread_si(1e-3)?, 4.6e-14),
        ("spread Earth", asymptotic_spread_si(5.97e24)?, 5.9e-28),
        (
            "variance rate 1 g",
            trajectory_variance_si(1e-3, 1.0)?.value_m2,
            1.1e-31,
        ),
        (
            "variance rate Earth",
            trajectory_variance_si(5.97e24, 1.0)?.value_m2,
            1.8e-59,
        ),
    ];
    let worst = checks.iter().map(|(_, v, e)| (v / e - 1.0).abs()).fold(0.0, f64::max);
    let detail = checks
        .iter()
        .map(|(l, v, _)| format!("{l} {v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((worst <= 0.02, format!("{detail}; worst relative error {worst:.3}")))
}

fn ehrenfest(workers: usize) -> Result<(bool, String)> {
    let omega = 1.0;
    let grid = SpatialGrid::centered(8.0, 64)?;
    let dt = 2.5e-4;
    let period = 2.0 * PI / omega;
    let stride = 250;
    let steps = ((period / dt) / stride as f64).ceil() as usize * stride;
    let cfg = QmuplConfig {
        grid,
        particles: particle(1.0),
        lambda0: 0.5,
        hamiltonian: HamiltonianSpec::harmonic(1.0, omega),
        dt,
        horizon: steps as f64 * dt,
        stride,
        initial: InitialState::Gaussian {
            center: 2.0,
            sigma: std::f64::consts::FRAC_1_SQRT_2,
            momentum: 0.0,
        },
        comoving: false,
    };
    let out = run_ensemble(&EnsembleModel::Qmupl(cfg.clone()), 1000, seed(7), workers)?;
    let q = out.stats.series("mean_q")?;
    let mut worst: f64 = 0.0;
    for (k, t) in out.stats.t.iter().enumerate() {
        let d = (q.mean[k] - 2.0 * (omega * t).cos()).abs();
        let se = q.standard_error[k];
        let z = if d < 1e-9 { 0.0 } else { d / se };
        worst = worst.max(z);
    }
    let report = ehrenfest_check(&out.stats, &cfg.hamiltonian)?;
    Ok((
        worst < 3.0 && report.passed,
        format!(
            "max |E<Q> - 2cos t| = {worst:.2} SE over {} points; finite-difference residuals {:.2} / {:.2} SE",
            out.stats.t.len(),
            report.max_z_velocity,
            report.max_z_force
        ),
    ))
}

fn cubic_variance(workers: usize) -> Result<(bool, String)> {
    let (lambda, mass) = (1.0, 1.0);
    let s_inf = stationary_spread(lambda, mass);
    let grid = SpatialGrid::centered(5.0 * s_inf, 16)?;
    let dt = 0.01 / (lambda * grid.half_width().powi(2));
    let tc = (3.0 * mass / lambda).sqrt();
    let steps = (100.0 * tc / dt).ceil() as usize;
    let cfg = QmuplConfig {
        grid,
        particles: particle(mass),
        lambda0: lambda,
        hamiltonian: free(mass),
        dt,
        horizon: steps as f64 * dt,
        stride: steps,
        initial: InitialState::Stationary {
            center: 0.0,
            momentum: 0.0,
        },
        comoving: true,
    };
    let first = (0.01 * tc / dt).floor().max(1.0);
    let mut sample: Vec<usize> = (0..=80)
        .map(|k| (first * (steps as f64 / first).powf(k as f64 / 80.0)).round() as usize)
        .collect();
    sample.dedup();
    let stats = run_qmupl_sampled(&cfg, &sample, 300, seed(8), workers)?;
    let fit = trajectory_variance_scaling(&stats, lambda, mass)?;
    let passed = (fit.late.slope - 3.0).abs() <= 0.2 && (fit.early.slope - 1.0).abs() <= 0.2;
    Ok((
        passed,
        format!(
            "early slope {:.3}, late slope {:.3}, crossover {:.3}",
            fit.early.slope, fit.late.slope, fit.crossover
        ),
    ))
}

fn energy_growth(workers: usize) -> Result<(bool, String)> {
    let (lambda, mass) = (1.0, 1.0);
    let grid = SpatialGrid::centered(5.0 * stationary_spread(lambda, mass), 16)?;
    let dt = 0.01 / (lambda * grid.half_width().powi(2));
    let stride = 50;
    let steps = stride * 25;
    let cfg = QmuplConfig {
        grid,
        particles: particle(mass),
        lambda0: lambda,
        hamiltonian: free(mass),
        dt,
        horizon: steps as f64 * dt,
        stride,
        initial: InitialState::Stationary {
            center: 0.0,
            momentum: 0.0,
        },
        comoving: true,
    };
    let out = run_ensemble(&EnsembleModel::Qmupl(cfg), 10_000, seed(9), workers)?;
    let fit = collapsar::ensemble::series_slope(&out.stats, "energy")?;
    let expect = collapsar::analytics::energy_growth_rate(lambda, mass);
    let rel = (fit.slope / expect - 1.0).abs();
    Ok((
        rel <= 0.05,
        format!("slope {:.4} vs {expect} (relative error {rel:.3})", fit.slope),
    ))
}

fn amplification(workers: usize) -> Result<(bool, String)> {
    let grid = SpatialGrid::centered(6.0, 128)?;
    let base = QmuplConfig {
        grid,
        particles: particle(1.0),
        lambda0: 1.0,
        hamiltonian: free(1.0),
        dt: 2.5e-4,
        horizon: 10.0,
        stride: 40_000,
        initial: InitialState::Superposition {
            centers: [-2.0, 2.0],
            sigma: 0.5,
            weights: [0.5, 0.5],
        },
        comoving: false,
    };
    let scaling = collapse_time_scaling(&base, &[1, 10, 100], 1e-2, 200, seed(10), workers)?;
    let slope = scaling.fit.slope;
    let times: Vec<String> = scaling
        .rows
        .iter()
        .map(|r| format!("N={} t={:.4}", r.constituents, r.mean_collapse_time))
        .collect();
    Ok((
        (slope + 1.0).abs() <= 0.1,
        format!("exponent {slope:.3}; {}", times.join(", ")),
    ))
}

fn csl_identical_particles(workers: usize) -> Result<(bool, String)> {
    // number variance along trajectories from a definite-number state
    let drift_cfg = CslConfig {
        sites: 4,
        n_max: 2,
        spacing: 1.0,
        hopping: 1.0,
        gamma: 0.5,
        alpha: 2.0,
        dt: 5e-4,
        horizon: 1.0,
        stride: 20,
        initial: CslInitial::GroundState { particles: 2 },
    };
    let system = drift_cfg.build()?;
    let drifts = run_indexed(50, seed(11), workers, |noise| {
        system.run(noise).map(|(_, log)| log.number_variance_drift())
    })?;
    let drift = drifts.values.iter().cloned().fold(0.0, f64::max);

    // one particle shared by two sites, no hopping
    let (w0, w1) = (0.3_f64, 0.7_f64);
    let collapse_cfg = CslConfig {
        sites: 2,
        n_max: 1,
        spacing: 1.0,
        hopping: 0.0,
        gamma: 1.0,
        alpha: 16.0,
        dt: 1.5e-3,
        horizon: 6.0,
        stride: 4000,
        initial: CslInitial::Superposition {
            terms: vec![(vec![1, 0], [w0.sqrt(), 0.0]), (vec![0, 1], [w1.sqrt(), 0.0])],
        },
    };
    let sys2 = collapse_cfg.build()?;
    let n = 10_000;
    let finals = run_indexed(n, seed(11), workers, |noise| {
        sys2.run(noise).map(|(s, _)| s.site_occupations(&sys2.space)[0])
    })?;
    let left = finals.values.iter().filter(|&&n0| n0 > 0.99).count();
    let right = finals.values.iter().filter(|&&n0| n0 < 0.01).count();
    let freq = left as f64 / n as f64;
    let tol = 3.0 * binomial_se(w0, n);

    // energy growth against the smearing parameter
    let growth_cfg = CslConfig {
        sites: 6,
        n_max: 1,
        spacing: 1.0,
        hopping: 1.0,
        gamma: 0.02,
        alpha: 8.0,
        dt: 0.005,
        horizon: 1.0,
        stride: 20,
        initial: CslInitial::GroundState { particles: 2 },
    };
    let rows = energy_growth_vs_alpha(&growth_cfg, &[8.0, 16.0], 1000, seed(11), workers)?;
    let ratio = rows[1].slope / rows[0].slope;

    let sym = LatticeFockState::sector_ground_state(&system.space, &system.hamiltonian, 2)?.0;
    let asym = sym.exchange_asymmetry(&system.space, 2);
    let passed =
        drift < 1e-8 && (freq - w0).abs() <= tol && left + right == n && (ratio - 2.0).abs() <= 0.2 && asym < 1e-10;
    Ok((
        passed,
        format!(
            "number-variance drift {drift:.1e}; site-0 frequency {freq:.4} (target {w0} ± {tol:.3}, unresolved {}); slope ratio {ratio:.3}",
            n - left - right
        ),
    ))
}

fn determinism(workers: usize) -> Result<(bool, String)> {
    let model = EnsembleModel::Grw(GrwConfig {
        grid: make_grid(-8.0, 8.0, 64)?,
        particles: particle(1.0),
        lambda: 2.0,
        alpha: 1.0,
        hamiltonian: free(1.0),
        dt: 0.005,
        horizon: 1.0,
        stride: 20,
        initial: InitialState::Superposition {
            centers: [-2.0, 2.0],
            sigma: 0.7,
            weights: [0.5, 0.5],
        },
    });
    let a = run_ensemble(&model, 64, seed(12), 1)?;
    let b = run_ensemble(&model, 64, seed(12), 4.max(workers))?;
    let same = a.stats.to_json() == b.stats.to_json() && a.stats.to_csv() == b.stats.to_csv() && a.jumps == b.jumps;
    Ok((
        same,
        format!(
            "worker counts 1 and {} give identical stats and jump logs: {same}",
            4.max(workers)
        ),
    ))
}
