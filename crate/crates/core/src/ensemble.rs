//! Trajectory ensembles: parallel scheduling with index-ordered reduction, and
//! the ensemble-level checks built on top of it.
//!
//! Trajectory `i` always draws from `NoiseStream::new(master_seed, i)`, and
//! every reduction walks trajectories in index order, so aggregates do not
//! depend on the worker count.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csl::{csl_lindblad, CslConfig};
use crate::error::{CollapseError, Result};
use crate::grw::{GrwConfig, JumpRecord};
use crate::hamiltonian::{HamiltonianKind, HamiltonianSpec};
use crate::lindblad::{grid_momentum, trace_distance, DensityOperator, LindbladGenerator};
use crate::measurement::{born_statistics, run_measurement, BornStatistics, MeasurementModel, OutcomeRecord};
use crate::noise::NoiseStream;
use crate::qmupl::{log_row, run_qmupl_trajectory, run_qmupl_trajectory_observed, QmuplConfig};
use crate::stats::{linear_fit, log_log_fit, LinearFit};

/// Largest fraction of failed trajectories an ensemble tolerates.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;
/// Grid size limit for the dense martingale check.
pub const MARTINGALE_MAX_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFailure {
    pub trajectory: u64,
    pub error: String,
}

/// Successful values in index order, plus the failures that were skipped.
#[derive(Debug, Clone)]
pub struct IndexedResults<T> {
    pub values: Vec<T>,
    pub indices: Vec<u64>,
    pub failures: Vec<TrajectoryFailure>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CollapseError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs `f` for trajectories `0..n` on `workers` threads (0 = all cores).
pub fn run_indexed<T, F>(n: usize, master_seed: u64, workers: usize, f: F) -> Result<IndexedResults<T>>
where
    T: Send,
    F: Fn(&mut NoiseStream) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(CollapseError::Config("ensemble needs at least one trajectory".into()));
    }
    let raw: Vec<Result<T>> = pool(workers)?.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| f(&mut NoiseStream::new(master_seed, i)))
            .collect()
    });
    let mut out = IndexedResults {
        values: Vec::with_capacity(n),
        indices: Vec::with_capacity(n),
        failures: Vec::new(),
    };
    for (i, r) in raw.into_iter().enumerate() {
        match r {
            Ok(v) => {
                out.values.push(v);
                out.indices.push(i as u64);
            }
            Err(e) => out.failures.push(TrajectoryFailure {
                trajectory: i as u64,
                error: e.to_string(),
            }),
        }
    }
    if out.failures.len() as f64 > MAX_FAILURE_FRACTION * n as f64 || out.values.is_empty() {
        return Err(CollapseError::Ensemble {
            failed: out.failures.len(),
            total: n,
            first: out.failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub standard_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub master_seed: u64,
    pub n_trajectories: usize,
    pub failed: usize,
    pub t: Vec<f64>,
    pub series: Vec<SeriesStats>,
}

impl EnsembleStats {
    /// `samples[trajectory][series][time]`, already in trajectory-index order.
    /// Series longer than `t` are truncated; shorter ones are an error.
    pub fn from_samples(
        master_seed: u64,
        t: Vec<f64>,
        names: &[&str],
        samples: &[Vec<Vec<f64>>],
        failed: usize,
    ) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(CollapseError::Shape("no samples to reduce".into()));
        }
        let points = t.len();
        for s in samples {
            if s.len() != names.len() || s.iter().any(|v| v.len() < points) {
                return Err(CollapseError::Shape("trajectory series of inconsistent shape".into()));
            }
        }
        let nf = n as f64;
        let series = names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let mut mean = vec![0.0; points];
                for s in samples {
                    for (m, v) in mean.iter_mut().zip(&s[c]) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nf);
                let mut variance = vec![0.0; points];
                if n > 1 {
                    for s in samples {
                        for ((acc, v), m) in variance.iter_mut().zip(&s[c]).zip(&mean) {
                            *acc += (v - m).powi(2);
                        }
                    }
                    variance.iter_mut().for_each(|v| *v /= nf - 1.0);
                }
                let standard_error = variance.iter().map(|v| (v / nf).sqrt()).collect();
                SeriesStats {
                    name: name.to_string(),
                    mean,
                    variance,
                    standard_error,
                }
            })
            .collect();
        Ok(Self {
            master_seed,
            n_trajectories: n,
            failed,
            t,
            series,
        })
    }

    pub fn series(&self, name: &str) -> Result<&SeriesStats> {
        self.series
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CollapseError::Shape(format!("no series named {name}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    /// One row per time point: `t`, then mean/variance/SE per series.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for c in &self.series {
            let _ = write!(s, ",{0}_mean,{0}_var,{0}_se", c.name);
        }
        s.push('\n');
        for (k, t) in self.t.iter().enumerate() {
            let _ = write!(s, "{t:?}");
            for c in &self.series {
                let _ = write!(s, ",{:?},{:?},{:?}", c.mean[k], c.variance[k], c.standard_error[k]);
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EnsembleModel {
    Grw(GrwConfig),
    Qmupl(QmuplConfig),
    Csl(CslConfig),
    Measurement(MeasurementModel),
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Grw(c) => c.validate(),
            Self::Qmupl(c) => c.validate(),
            Self::Csl(c) => c.validate(),
            Self::Measurement(m) => m.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedJump {
    pub trajectory: u64,
    #[serde(flatten)]
    pub jump: JumpRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedOutcome {
    pub trajectory: u64,
    #[serde(flatten)]
    pub record: OutcomeRecord,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub stats: EnsembleStats,
    pub jumps: Vec<IndexedJump>,
    pub outcomes: Vec<IndexedOutcome>,
    pub born: Option<BornStatistics>,
    pub failures: Vec<TrajectoryFailure>,
}

const QMUPL_SERIES: [&str; 5] = ["mean_q", "mean_p", "sigma_q", "sigma_p", "energy"];

fn log_samples(log: &crate::qmupl::TrajectoryLog) -> (Vec<f64>, Vec<Vec<f64>>) {
    (
        log.column(|r| r.t),
        vec![
            log.column(|r| r.mean_q),
            log.column(|r| r.mean_p),
            log.column(|r| r.sigma_q),
            log.column(|r| r.sigma_p),
            log.column(|r| r.energy),
        ],
    )
}

/// Shortest time axis among trajectories (runs that stop early shorten it).
fn common_times(times: Vec<Vec<f64>>) -> Vec<f64> {
    times.into_iter().min_by_key(|t| t.len()).unwrap_or_default()
}

/// Series names, common time axis, `samples[trajectory][series][time]`, failures.
type Reduction = (Vec<String>, Vec<f64>, Vec<Vec<Vec<f64>>>, Vec<TrajectoryFailure>);

pub fn run_ensemble(model: &EnsembleModel, n: usize, master_seed: u64, workers: usize) -> Result<EnsembleOutput> {
    model.validate()?;
    let mut jumps = Vec::new();
    let mut outcomes = Vec::new();
    let mut born = None;
    let (names, times, samples, failures): Reduction = match model {
        EnsembleModel::Grw(c) => {
            let r = run_indexed(n, master_seed, workers, |noise| {
                c.run(noise).map(|run| (run.log, run.jumps))
            })?;
            let mut times = Vec::new();
            let mut samples = Vec::new();
            for (i, (log, js)) in r.indices.iter().zip(r.values) {
                let (t, s) = log_samples(&log);
                times.push(t);
                samples.push(s);
                jumps.extend(js.into_iter().map(|jump| IndexedJump { trajectory: *i, jump }));
            }
            (
                QMUPL_SERIES.map(String::from).to_vec(),
                common_times(times),
                samples,
                r.failures,
            )
        }
        EnsembleModel::Qmupl(c) => {
            let r = run_indexed(n, master_seed, workers, |noise| run_qmupl_trajectory(c, noise))?;
            let (times, samples): (Vec<_>, Vec<_>) = r.values.iter().map(log_samples).unzip();
            (
                QMUPL_SERIES.map(String::from).to_vec(),
                common_times(times),
                samples,
                r.failures,
            )
        }
        EnsembleModel::Csl(c) => {
            let system = c.build()?;
            let r = run_indexed(n, master_seed, workers, |noise| system.run(noise).map(|(_, log)| log))?;
            let mut names = vec!["energy".to_string(), "number_mean".into(), "number_variance".into()];
            names.extend((0..c.sites).map(|y| format!("n{y}")));
            let mut times = Vec::new();
            let mut samples = Vec::new();
            for log in &r.values {
                times.push(log.rows.iter().map(|row| row.t).collect());
                let mut s = vec![
                    log.rows.iter().map(|row| row.energy).collect(),
                    log.rows.iter().map(|row| row.number_mean).collect(),
                    log.rows.iter().map(|row| row.number_variance).collect(),
                ];
                for y in 0..c.sites {
                    s.push(log.rows.iter().map(|row| row.occupations[y]).collect());
                }
                samples.push(s);
            }
            (names, common_times(times), samples, r.failures)
        }
        EnsembleModel::Measurement(m) => {
            let r = run_indexed(n, master_seed, workers, |noise| run_measurement(m, noise))?;
            let mut times = Vec::new();
            let mut samples = Vec::new();
            for rec in &r.values {
                times.push(rec.path.iter().map(|p| p.t).collect());
                samples.push(vec![
                    rec.path.iter().map(|p| p.mean_q).collect(),
                    rec.path.iter().map(|p| p.sigma_q).collect(),
                ]);
            }
            born = Some(born_statistics(&r.values, m)?);
            outcomes = r
                .indices
                .iter()
                .zip(r.values)
                .map(|(i, record)| IndexedOutcome { trajectory: *i, record })
                .collect();
            (
                vec!["mean_q".into(), "sigma_q".into()],
                common_times(times),
                samples,
                r.failures,
            )
        }
    };
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let stats = EnsembleStats::from_samples(master_seed, times, &name_refs, &samples, failures.len())?;
    Ok(EnsembleOutput {
        stats,
        jumps,
        outcomes,
        born,
        failures,
    })
}

/// QMUPL ensemble recording particle-0 moments at arbitrary step indices
/// (e.g. log-spaced), without storing the full series.
pub fn run_qmupl_sampled(
    config: &QmuplConfig,
    sample_steps: &[usize],
    n: usize,
    master_seed: u64,
    workers: usize,
) -> Result<EnsembleStats> {
    config.validate()?;
    if sample_steps.windows(2).any(|w| w[1] <= w[0]) || sample_steps.last().is_some_and(|&s| s > config.steps()) {
        return Err(CollapseError::Config(
            "sample steps must increase and stay within the horizon".into(),
        ));
    }
    let r = run_indexed(n, master_seed, workers, |noise| {
        let mut cols = vec![Vec::with_capacity(sample_steps.len()); QMUPL_SERIES.len()];
        let mut next = 0;
        let mut err = None;
        let last = sample_steps.last().copied().unwrap_or(0);
        run_qmupl_trajectory_observed(config, noise, |step, t, state| {
            if next < sample_steps.len() && step == sample_steps[next] {
                match log_row(state, &config.hamiltonian, t) {
                    Ok(row) => {
                        for (c, v) in
                            cols.iter_mut()
                                .zip([row.mean_q, row.mean_p, row.sigma_q, row.sigma_p, row.energy])
                        {
                            c.push(v);
                        }
                    }
                    Err(e) => {
                        err = Some(e);
                        return false;
                    }
                }
                next += 1;
            }
            step < last
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(cols),
        }
    })?;
    let t = sample_steps.iter().map(|&s| s as f64 * config.dt).collect();
    EnsembleStats::from_samples(master_seed, t, &QMUPL_SERIES, &r.values, r.failures.len())
}

/// Lindblad evolution of `rho0` sampled at `times` (ascending, from 0), using
/// RK4 substeps inside the stability bound.
pub fn lindblad_series(
    generator: &LindbladGenerator,
    rho0: &DensityOperator,
    times: &[f64],
) -> Result<Vec<DensityOperator>> {
    let mut out = Vec::with_capacity(times.len());
    let mut rho = rho0.clone();
    let mut now = 0.0;
    let h_max = 0.5 * generator.max_dt();
    for &t in times {
        let gap = t - now;
        if gap < -1e-12 {
            return Err(CollapseError::Config("checkpoint times must be ascending".into()));
        }
        if gap > 0.0 {
            let steps = (gap / h_max).ceil().max(1.0) as usize;
            rho = generator.evolve(&rho, gap / steps as f64, steps)?;
        }
        now = t;
        out.push(rho.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindbladComparison {
    pub times: Vec<f64>,
    pub trace_distance: Vec<f64>,
    pub trajectories: usize,
    pub failed: usize,
}

fn average_projectors(states: &[Vec<Vec<Complex64>>], checkpoint: usize, weight: f64) -> DMatrix<Complex64> {
    let d = states[0][checkpoint].len();
    let mut m = DMatrix::zeros(d, d);
    for s in states {
        let v = &s[checkpoint];
        for j in 0..d {
            let cj = v[j].conj() * weight;
            for i in 0..d {
                m[(i, j)] += v[i] * cj;
            }
        }
    }
    m / Complex64::new(states.len() as f64, 0.0)
}

/// Ensemble density of a single-particle lab-frame QMUPL run against the RK4
/// Lindblad solution at the given step indices.
pub fn qmupl_lindblad_comparison(
    config: &QmuplConfig,
    checkpoints: &[usize],
    n: usize,
    master_seed: u64,
    workers: usize,
) -> Result<LindbladComparison> {
    config.validate()?;
    if config.particles.len() != 1 || config.comoving {
        return Err(CollapseError::Config(
            "Lindblad comparison needs one particle in the lab frame".into(),
        ));
    }
    let last = checkpoints.last().copied().unwrap_or(0);
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || last > config.steps() {
        return Err(CollapseError::Config(
            "checkpoints must increase and stay within the horizon".into(),
        ));
    }
    let generator = LindbladGenerator::for_grid(&config.grid, &config.hamiltonian, config.lambdas()[0])?;
    let r = run_indexed(n, master_seed, workers, |noise| {
        let mut snaps = Vec::with_capacity(checkpoints.len());
        run_qmupl_trajectory_observed(config, noise, |step, _, state| {
            if snaps.len() < checkpoints.len() && step == checkpoints[snaps.len()] {
                snaps.push(state.psi.amplitudes().to_vec());
            }
            step < last
        })?;
        Ok(snaps)
    })?;
    let psi0 = crate::qmupl::initial_state(config)?.psi;
    let times: Vec<f64> = checkpoints.iter().map(|&s| s as f64 * config.dt).collect();
    let exact = lindblad_series(&generator, &DensityOperator::pure(&psi0)?, &times)?;
    let dx = config.grid.dx();
    let mut trace_distance_out = Vec::with_capacity(times.len());
    for (k, ex) in exact.iter().enumerate() {
        let avg = DensityOperator::new(Some(config.grid), average_projectors(&r.values, k, dx))?;
        trace_distance_out.push(trace_distance(&avg, ex)?);
    }
    Ok(LindbladComparison {
        times,
        trace_distance: trace_distance_out,
        trajectories: r.values.len(),
        failed: r.failures.len(),
    })
}

/// As [`qmupl_lindblad_comparison`] for the lattice model.
pub fn csl_lindblad_comparison(
    config: &CslConfig,
    checkpoints: &[usize],
    n: usize,
    master_seed: u64,
    workers: usize,
) -> Result<LindbladComparison> {
    let system = config.build()?;
    let last = checkpoints.last().copied().unwrap_or(0);
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || last > system.steps {
        return Err(CollapseError::Config(
            "checkpoints must increase and stay within the horizon".into(),
        ));
    }
    let generator = csl_lindblad(&system.hamiltonian, &system.densities, config.gamma)?;
    let r = run_indexed(n, master_seed, workers, |noise| {
        let mut snaps = Vec::with_capacity(checkpoints.len());
        system.run_observed(noise, |step, _, state| {
            if snaps.len() < checkpoints.len() && step == checkpoints[snaps.len()] {
                snaps.push(state.amplitudes().to_vec());
            }
            step < last
        })?;
        Ok(snaps)
    })?;
    let times: Vec<f64> = checkpoints.iter().map(|&s| s as f64 * config.dt).collect();
    let rho0 = DensityOperator::outer(system.initial.amplitudes());
    let exact = lindblad_series(&generator, &rho0, &times)?;
    let mut trace_distance_out = Vec::with_capacity(times.len());
    for (k, ex) in exact.iter().enumerate() {
        let avg = DensityOperator::new(None, average_projectors(&r.values, k, 1.0))?;
        trace_distance_out.push(trace_distance(&avg, ex)?);
    }
    Ok(LindbladComparison {
        times,
        trace_distance: trace_distance_out,
        trajectories: r.values.len(),
        failed: r.failures.len(),
    })
}

/// `z = |observed - expected| / SE`, with exact agreement when SE vanishes.
fn z_score(observed: f64, expected: f64, se: f64) -> f64 {
    let d = (observed - expected).abs();
    if d <= 1e-9 * (1.0 + expected.abs()) {
        0.0
    } else if se > 0.0 {
        d / se
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub name: String,
    pub max_z: f64,
    pub worst_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub passed: bool,
}

/// Lindblad predictions of `mean_q`, `mean_p` and `energy` at the stats' time points.
pub fn lindblad_observables(config: &QmuplConfig, times: &[f64]) -> Result<Vec<(String, Vec<f64>)>> {
    if config.grid.n_points() > MARTINGALE_MAX_POINTS {
        return Err(CollapseError::Resolution(format!(
            "dense martingale check limited to {MARTINGALE_MAX_POINTS} grid points"
        )));
    }
    if config.particles.len() != 1 || config.comoving {
        return Err(CollapseError::Config(
            "martingale check needs one particle in the lab frame".into(),
        ));
    }
    let generator = LindbladGenerator::for_grid(&config.grid, &config.hamiltonian, config.lambdas()[0])?;
    let psi0 = crate::qmupl::initial_state(config)?.psi;
    let series = lindblad_series(&generator, &DensityOperator::pure(&psi0)?, times)?;
    let x = config.grid.positions();
    let p = grid_momentum(&config.grid)?;
    let h = generator.hamiltonian();
    Ok(vec![
        ("mean_q".into(), series.iter().map(|r| r.expectation_diag(&x)).collect()),
        ("mean_p".into(), series.iter().map(|r| r.expectation(&p).re).collect()),
        ("energy".into(), series.iter().map(|r| r.expectation(h).re).collect()),
    ])
}

/// Ensemble means against deterministic predictions, pass if every point is within 3 SE.
pub fn martingale_check(stats: &EnsembleStats, predictions: &[(String, Vec<f64>)]) -> Result<MartingaleReport> {
    let mut rows = Vec::with_capacity(predictions.len());
    for (name, pred) in predictions {
        let s = stats.series(name)?;
        if pred.len() != stats.t.len() {
            return Err(CollapseError::Shape(format!(
                "prediction for {name} has the wrong length"
            )));
        }
        let (max_z, worst_time) = pred
            .iter()
            .enumerate()
            .map(|(k, e)| (z_score(s.mean[k], *e, s.standard_error[k]), stats.t[k]))
            .fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        rows.push(MartingaleRow {
            name: name.clone(),
            max_z,
            worst_time,
        });
    }
    let passed = rows.iter().all(|r| r.max_z < 3.0);
    Ok(MartingaleReport { rows, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrenfestReport {
    /// Largest finite-difference residual of `dE[Q]/dt = E[P]/m`, in standard errors.
    pub max_z_velocity: f64,
    /// Largest finite-difference residual of `dE[P]/dt = -E[V'(Q)]`, in standard errors.
    pub max_z_force: f64,
    /// Classical trajectory from the initial means, when the force is affine.
    pub classical_q: Vec<f64>,
    pub classical_p: Vec<f64>,
    pub max_z_classical_q: f64,
    pub max_z_classical_p: f64,
    pub passed: bool,
}

/// `(V'(q) = a + b q)` for the potentials with affine forces.
fn affine_force(h: &HamiltonianSpec) -> Result<(f64, f64)> {
    Ok(match h.kind {
        HamiltonianKind::Zero | HamiltonianKind::Free => (0.0, 0.0),
        HamiltonianKind::Harmonic { omega } => (0.0, h.masses[0] * omega * omega),
        HamiltonianKind::LinearPotential { g } => (h.masses[0] * g, 0.0),
        HamiltonianKind::MeasurementCoupling { .. } => {
            return Err(CollapseError::Config(
                "Ehrenfest check needs a position-only potential".into(),
            ))
        }
    })
}

/// Checks the stochastic Ehrenfest relations on a single-particle ensemble.
///
/// Derivatives are central differences; their residuals are compared with the
/// propagated standard error plus the `Δt²` truncation estimate from the
/// classical solution. Sampling with `ω Δt > 0.2` is rejected.
pub fn ehrenfest_check(stats: &EnsembleStats, h: &HamiltonianSpec) -> Result<EhrenfestReport> {
    if h.particles() != 1 {
        return Err(CollapseError::Config("Ehrenfest check is single-particle".into()));
    }
    let (a, b) = affine_force(h)?;
    let m = h.masses[0];
    let q = stats.series("mean_q")?;
    let p = stats.series("mean_p")?;
    let t = &stats.t;
    if t.len() < 3 {
        return Err(CollapseError::Resolution("need at least three time points".into()));
    }
    let dt = t[1] - t[0];
    if t.windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300))
        || !(dt > 0.0)
    {
        return Err(CollapseError::Resolution("time points must be evenly spaced".into()));
    }
    let omega = (b / m).sqrt();
    if omega * dt > 0.2 {
        return Err(CollapseError::Resolution(format!(
            "sampling step {dt} too coarse for angular frequency {omega}"
        )));
    }
    // classical solution from the initial ensemble means
    let (q0, p0) = (q.mean[0], p.mean[0]);
    let (classical_q, classical_p): (Vec<f64>, Vec<f64>) = t
        .iter()
        .map(|&s| {
            let s = s - t[0];
            if b > 0.0 {
                let x0 = q0 + a / b;
                let (sn, cs) = (omega * s).sin_cos();
                (x0 * cs + p0 / (m * omega) * sn - a / b, p0 * cs - m * omega * x0 * sn)
            } else {
                (q0 + p0 * s / m - 0.5 * a * s * s / m, p0 - a * s)
            }
        })
        .unzip();
    // central-difference error Δt²/6 · |third derivative|; nonzero only for the oscillator
    let amp_q = classical_q.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let amp_p = classical_p.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cube = dt * dt / 6.0 * omega.powi(3);
    let mut max_z_velocity: f64 = 0.0;
    let mut max_z_force: f64 = 0.0;
    for k in 1..t.len() - 1 {
        let dq = (q.mean[k + 1] - q.mean[k - 1]) / (2.0 * dt);
        let dp = (p.mean[k + 1] - p.mean[k - 1]) / (2.0 * dt);
        let se_dq = (q.standard_error[k + 1].powi(2) + q.standard_error[k - 1].powi(2)).sqrt() / (2.0 * dt);
        let se_dp = (p.standard_error[k + 1].powi(2) + p.standard_error[k - 1].powi(2)).sqrt() / (2.0 * dt);
        let rv = (dq - p.mean[k] / m).abs();
        let rf = (dp + a + b * q.mean[k]).abs();
        let sv = se_dq + p.standard_error[k] / m + cube * amp_q;
        let sf = se_dp + b * q.standard_error[k] + cube * amp_p;
        max_z_velocity = max_z_velocity.max(z_score(rv, 0.0, sv));
        max_z_force = max_z_force.max(z_score(rf, 0.0, sf));
    }
    let max_z_classical_q = (0..t.len())
        .map(|k| z_score(q.mean[k], classical_q[k], q.standard_error[k]))
        .fold(0.0, f64::max);
    let max_z_classical_p = (0..t.len())
        .map(|k| z_score(p.mean[k], classical_p[k], p.standard_error[k]))
        .fold(0.0, f64::max);
    let passed = max_z_velocity < 3.0 && max_z_force < 3.0 && max_z_classical_q < 3.0 && max_z_classical_p < 3.0;
    Ok(EhrenfestReport {
        max_z_velocity,
        max_z_force,
        classical_q,
        classical_p,
        max_z_classical_q,
        max_z_classical_p,
        passed,
    })
}

/// Free-particle variance of `⟨Q⟩_t` from a stationary Gaussian start (ħ = 1):
/// `t/m + √λ t²/m^{3/2} + λ t³/(3 m²)`.
pub fn trajectory_variance_oracle(lambda: f64, mass: f64, t: f64) -> f64 {
    t / mass + lambda.sqrt() * t * t / mass.powf(1.5) + lambda * t.powi(3) / (3.0 * mass * mass)
}

/// Time at which the linear and cubic terms of the trajectory variance cross, `√(3m/λ)`.
pub fn variance_crossover_time(lambda: f64, mass: f64) -> f64 {
    (3.0 * mass / lambda).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceScaling {
    pub crossover: f64,
    pub early: LinearFit,
    pub late: LinearFit,
    pub early_points: usize,
    pub late_points: usize,
}

/// Log-log fits of `V[⟨Q⟩_t]` over `[0.01, 0.1]·t_c` and `[10, 100]·t_c`.
pub fn trajectory_variance_scaling(stats: &EnsembleStats, lambda: f64, mass: f64) -> Result<VarianceScaling> {
    let tc = variance_crossover_time(lambda, mass);
    let horizon = stats.t.last().copied().unwrap_or(0.0);
    if !(horizon >= 100.0 * tc * (1.0 - 1e-9)) {
        return Err(CollapseError::Horizon(format!(
            "horizon {horizon} does not reach two decades past the crossover {tc}"
        )));
    }
    let v = &stats.series("mean_q")?.variance;
    let window = |lo: f64, hi: f64| -> (Vec<f64>, Vec<f64>) {
        stats
            .t
            .iter()
            .zip(v)
            .filter(|(t, var)| **t >= lo * (1.0 - 1e-9) && **t <= hi * (1.0 + 1e-9) && **var > 0.0)
            .map(|(t, var)| (*t, *var))
            .unzip()
    };
    let (te, ve) = window(0.01 * tc, 0.1 * tc);
    let (tl, vl) = window(10.0 * tc, 100.0 * tc);
    if te.len() < 3 || tl.len() < 3 {
        return Err(CollapseError::Resolution(
            "fewer than three samples in a fit window".into(),
        ));
    }
    Ok(VarianceScaling {
        crossover: tc,
        early: log_log_fit(&te, &ve)?,
        late: log_log_fit(&tl, &vl)?,
        early_points: te.len(),
        late_points: tl.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRow {
    pub constituents: usize,
    pub total_mass: f64,
    pub lambda_cm: f64,
    pub mean_collapse_time: f64,
    pub standard_error: f64,
    pub unresolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationScaling {
    pub rows: Vec<AmplificationRow>,
    /// Log-log fit of mean collapse time against constituent count.
    pub fit: LinearFit,
}

/// Probability on the less populated side of `midpoint`.
fn minor_lobe_weight(psi: &crate::wavefunction::GridWavefunction, midpoint: f64) -> f64 {
    let grid = psi.grid();
    let rho = psi.marginal_density(0);
    let total: f64 = rho.iter().sum();
    let left: f64 = rho
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.x(*i) < midpoint)
        .map(|(_, r)| r)
        .sum();
    (left / total).min(1.0 - left / total)
}

/// Time for a two-lobe centre-of-mass superposition to collapse, for bodies
/// made of `counts[k]` copies of the single constituent in `base`.
///
/// The centre of mass carries the summed rate `λ_CM = Σ λ_n` and mass `M = Σ m_n`.
/// A trajectory has collapsed once the weight on the minor side of the
/// midpoint falls below `threshold`. Step size and horizon shrink as `1/N` so
/// every ensemble takes the same number of steps; runs that never collapse
/// count as failures.
pub fn collapse_time_scaling(
    base: &QmuplConfig,
    counts: &[usize],
    threshold: f64,
    n: usize,
    master_seed: u64,
    workers: usize,
) -> Result<AmplificationScaling> {
    let centers = match base.initial {
        crate::qmupl::InitialState::Superposition { centers, .. } => centers,
        _ => {
            return Err(CollapseError::Config(
                "collapse timing needs a superposition initial state".into(),
            ))
        }
    };
    if base.particles.len() != 1 || base.comoving {
        return Err(CollapseError::Config(
            "base configuration must hold one constituent in the lab frame".into(),
        ));
    }
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(CollapseError::Config(format!(
            "threshold must lie in (0, 0.5), got {threshold}"
        )));
    }
    let midpoint = 0.5 * (centers[0] + centers[1]);
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        if count == 0 {
            return Err(CollapseError::Config("constituent count must be positive".into()));
        }
        let split = crate::qmupl::com_split(&vec![base.particles[0].clone(); count], base.lambda0)?;
        let mut cfg = split.com_config(base)?;
        cfg.dt /= count as f64;
        cfg.horizon /= count as f64;
        let r = run_indexed(n, master_seed, workers, |noise| {
            let mut collapsed = None;
            run_qmupl_trajectory_observed(&cfg, noise, |_, t, state| {
                if minor_lobe_weight(&state.psi, midpoint) < threshold {
                    collapsed = Some(t);
                    return false;
                }
                true
            })?;
            collapsed.ok_or_else(|| CollapseError::Horizon("superposition did not collapse before the horizon".into()))
        })?;
        let times = &r.values;
        rows.push(AmplificationRow {
            constituents: count,
            total_mass: split.total_mass,
            lambda_cm: split.lambda_cm,
            mean_collapse_time: crate::stats::mean(times),
            standard_error: crate::stats::standard_error(times),
            unresolved: r.failures.len(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.constituents as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_collapse_time).collect();
    let fit = log_log_fit(&xs, &ys)?;
    Ok(AmplificationScaling { rows, fit })
}

/// Slope of an ensemble-mean series, e.g. energy against time.
pub fn series_slope(stats: &EnsembleStats, name: &str) -> Result<LinearFit> {
    linear_fit(&stats.t, &stats.series(name)?.mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_runs_are_ordered_and_worker_independent() {
        let f = |noise: &mut NoiseStream| Ok(noise.uniform());
        let a = run_indexed(64, 3, 1, f).unwrap();
        let b = run_indexed(64, 3, 4, f).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.indices, (0..64).collect::<Vec<u64>>());
        assert_eq!(a.values[5], NoiseStream::new(3, 5).uniform());
    }

    #[test]
    fn failure_budget() {
        let few = run_indexed(200, 0, 2, |noise| {
            if noise.trajectory_index() == 7 {
                Err(CollapseError::Config("boom".into()))
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
        assert_eq!(few.failures.len(), 1);
        assert_eq!(few.values.len(), 199);
        let many = run_indexed(100, 0, 2, |noise| {
            if noise.trajectory_index() < 2 {
                Err(CollapseError::Config("boom".into()))
            } else {
                Ok(1.0)
            }
        });
        assert!(matches!(
            many,
            Err(CollapseError::Ensemble {
                failed: 2,
                total: 100,
                ..
            })
        ));
    }

    #[test]
    fn single_trajectory_stats() {
        let s = EnsembleStats::from_samples(1, vec![0.0, 1.0], &["x"], &[vec![vec![2.0, 3.0]]], 0).unwrap();
        let x = s.series("x").unwrap();
        assert_eq!(x.mean, vec![2.0, 3.0]);
        assert_eq!(x.variance, vec![0.0, 0.0]);
        assert_eq!(x.standard_error, vec![0.0, 0.0]);
    }

    #[test]
    fn sample_variance_and_se() {
        let samples: Vec<Vec<Vec<f64>>> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![vec![v]]).collect();
        let s = EnsembleStats::from_samples(0, vec![0.0], &["x"], &samples, 0).unwrap();
        let x = s.series("x").unwrap();
        assert!((x.mean[0] - 2.5).abs() < 1e-15);
        assert!((x.variance[0] - 5.0 / 3.0).abs() < 1e-15);
        assert!((x.standard_error[0] - (5.0 / 12.0_f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn variance_oracle_regimes() {
        let tc = variance_crossover_time(1.0, 1.0);
        assert!((tc - 3f64.sqrt()).abs() < 1e-15);
        let early = trajectory_variance_oracle(1.0, 1.0, 1e-4);
        assert!((early / 1e-4 - 1.0).abs() < 1e-3);
        let late = trajectory_variance_oracle(1.0, 1.0, 1e4);
        assert!((late / (1e12 / 3.0) - 1.0).abs() < 1e-3);
        assert_eq!(trajectory_variance_oracle(0.0, 2.0, 3.0), 1.5);
    }
}
