//! Ensemble-level statistical checks. Seeds are fixed, so each test is deterministic.

use collapsar::csl::{CslConfig, CslInitial};
use collapsar::ensemble::{
    csl_lindblad_comparison, lindblad_observables, martingale_check, run_ensemble, run_indexed, EnsembleModel,
};
use collapsar::grw::{apply_jump, jump_position_density, sample_jump_location};
use collapsar::measurement::MeasurementModel;
use collapsar::qmupl::{run_qmupl_trajectory_observed, Basin, InitialState, QmuplConfig, SettlingClassifier};
use collapsar::stats::binomial_se;
use collapsar::{make_grid, GridWavefunction, HamiltonianSpec, NoiseStream, ParticleSpec};
use num_complex::Complex64;

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn small_free_config() -> QmuplConfig {
    QmuplConfig {
        grid: make_grid(-4.0, 4.0, 32).unwrap(),
        particles: vec![ParticleSpec::new(1.0, "p").unwrap()],
        lambda0: 0.25,
        hamiltonian: HamiltonianSpec::free(1.0),
        dt: 2.5e-3,
        horizon: 1.0,
        stride: 40,
        initial: InitialState::Superposition {
            centers: [-1.5, 1.5],
            sigma: 0.6,
            weights: [0.4, 0.6],
        },
        comoving: false,
    }
}

#[test]
fn ensemble_means_follow_lindblad_prediction() {
    let cfg = small_free_config();
    let model = EnsembleModel::Qmupl(cfg.clone());
    // 3 SE at every one of ~30 (time, observable) points is a multiple-comparison
    // test, so the ensemble is sized well above 10^4 to keep real bias visible.
    let out = run_ensemble(&model, 40_000, 31, workers()).unwrap();
    let predictions = lindblad_observables(&cfg, &out.stats.t).unwrap();
    let report = martingale_check(&out.stats, &predictions).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn standard_error_shrinks_as_inverse_root_n() {
    let model = EnsembleModel::Qmupl(small_free_config());
    // The first n/4 trajectories of the full run form the subsample.
    let full = run_ensemble(&model, 4000, 32, workers()).unwrap();
    let quarter = run_ensemble(&model, 1000, 32, workers()).unwrap();
    for name in ["mean_q", "energy"] {
        let (a, b) = (full.stats.series(name).unwrap(), quarter.stats.series(name).unwrap());
        let ratios: Vec<f64> = a
            .standard_error
            .iter()
            .zip(&b.standard_error)
            .skip(1)
            .map(|(f, q)| q / f)
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 2.0).abs() < 0.2, "{name}: SE ratio {mean}");
    }
}

#[test]
fn aggregates_do_not_depend_on_thread_count() {
    let csl = CslConfig {
        sites: 3,
        n_max: 2,
        hopping: 1.0,
        gamma: 0.5,
        alpha: 2.0,
        dt: 1e-3,
        horizon: 0.2,
        stride: 20,
        initial: CslInitial::GroundState { particles: 2 },
        spacing: 1.0,
    };
    let models = [
        EnsembleModel::Qmupl(small_free_config()),
        EnsembleModel::Csl(csl),
        EnsembleModel::Measurement(MeasurementModel::pointer_default(0.4).unwrap()),
    ];
    for model in &models {
        let runs: Vec<_> = [1, 2, 4]
            .iter()
            .map(|&w| run_ensemble(model, 12, 33, w).unwrap())
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.stats.to_json(), runs[0].stats.to_json());
            assert_eq!(r.stats.to_csv(), runs[0].stats.to_csv());
            assert_eq!(r.outcomes, runs[0].outcomes);
        }
    }
}

#[test]
fn superposition_reduces_with_born_weights() {
    let cfg = QmuplConfig {
        grid: make_grid(-3.0, 3.0, 64).unwrap(),
        lambda0: 1.0,
        hamiltonian: HamiltonianSpec::zero(1),
        dt: 1e-3,
        horizon: 4.0,
        stride: 100,
        initial: InitialState::Superposition {
            centers: [-1.5, 1.5],
            sigma: 0.25,
            weights: [0.3, 0.7],
        },
        ..small_free_config()
    };
    // Settled only once the minor lobe is nearly gone (σ_q below a tenth of the separation).
    let n = 10_000;
    let r = run_indexed(n, 34, workers(), |noise| {
        let mut classifier = SettlingClassifier::by_spread([-1.5, 1.5], 20);
        run_qmupl_trajectory_observed(&cfg, noise, |_, _, s| {
            classifier.observe(s.mean_q(0), s.sigma_q(0)).is_none()
        })?;
        Ok(classifier.settled())
    })
    .unwrap();
    assert!(r.failures.is_empty());
    assert!(r.values.iter().all(Option::is_some), "every run settles");
    let right = r.values.iter().filter(|b| **b == Some(Basin::Right)).count() as f64 / n as f64;
    assert!((right - 0.7).abs() <= 0.015, "right fraction {right}");
}

#[test]
fn lattice_ensemble_matches_lindblad() {
    let cfg = CslConfig {
        sites: 3,
        n_max: 2,
        hopping: 1.0,
        gamma: 0.5,
        alpha: 2.0,
        dt: 1e-3,
        horizon: 0.5,
        stride: 100,
        initial: CslInitial::Superposition {
            terms: vec![(vec![2, 0, 0], [0.6, 0.0]), (vec![0, 1, 1], [0.0, 0.8])],
        },
        spacing: 1.0,
    };
    let checkpoints: Vec<usize> = (1..=5).map(|k| k * 100).collect();
    let cmp = csl_lindblad_comparison(&cfg, &checkpoints, 10_000, 35, workers()).unwrap();
    assert_eq!(cmp.failed, 0);
    let worst = cmp.trace_distance.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 0.02, "trace distances {:?}", cmp.trace_distance);
}

#[test]
fn measurement_ends_in_two_basins_with_faithful_micro_state() {
    let model = MeasurementModel::pointer_default(0.5).unwrap();
    let out = run_ensemble(&EnsembleModel::Measurement(model), 2000, 36, workers()).unwrap();
    let born = out.born.unwrap();
    assert!(born.high_fidelity_fraction >= 0.99, "{born:?}");
    assert!(born.indeterminate_fraction < 1e-3, "{born:?}");
    assert!(born.z_score <= 3.0, "{born:?}");
}

#[test]
fn one_jump_selects_branch_with_born_weight() {
    let g = make_grid(-8.0, 8.0, 128).unwrap();
    let left = GridWavefunction::gaussian(g, -3.0, 0.5, 0.0).unwrap();
    let right = GridWavefunction::gaussian(g, 3.0, 0.5, 0.0).unwrap();
    let cat = GridWavefunction::superpose(
        &left,
        Complex64::new(0.3f64.sqrt(), 0.0),
        &right,
        Complex64::new(0.7f64.sqrt(), 0.0),
    )
    .unwrap();
    let alpha = 4.0;
    let density = jump_position_density(&cat, 0, alpha).unwrap();
    let n = 10_000;
    let mut right_count = 0;
    for i in 0..n {
        let mut noise = NoiseStream::new(37, i);
        let x = sample_jump_location(&g, &density, noise.uniform());
        let (post, _) = apply_jump(&cat, 0, x, alpha).unwrap();
        if post.expectation_position(0) > 0.0 {
            right_count += 1;
        }
    }
    let freq = right_count as f64 / n as f64;
    assert!(
        (freq - 0.7).abs() <= 3.0 * binomial_se(0.7, n as usize),
        "right fraction {freq}"
    );
}
