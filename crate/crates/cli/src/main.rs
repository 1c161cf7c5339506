use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use collapsar::analytics::{asymptotic_spread_si, pheno_tables, trajectory_variance_si, EARTH_MASS_KG};
use collapsar::ensemble::{csl_lindblad_comparison, qmupl_lindblad_comparison, run_ensemble, EnsembleModel};
use collapsar::measurement::MeasurementModel;
use collapsar::params::coupling_constant;
use collapsar::CollapseError;
use collapsar_cli::config::{self, ConfigError, EnsembleSection, OutputSection, RunConfig, SeriesFormat};
use collapsar_cli::output::RunDir;
use collapsar_cli::selftest::{run_criterion, CRITERIA};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser)]
#[command(
    name = "collapsar",
    version,
    about = "Spontaneous-collapse model simulations and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the first trajectory of a configured ensemble.
    Run(RunArgs),
    /// Run a full ensemble and write statistics.
    Ensemble(RunArgs),
    /// Compare ensemble-averaged projectors with the Lindblad solution.
    LindbladCompare {
        #[command(flatten)]
        run: RunArgs,
        /// Step indices to compare at (default: five evenly spaced up to the horizon).
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
    },
    /// Run a measurement-model ensemble, from a config or a preset.
    Measure {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, conflicts_with = "config")]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 0.5)]
        plus_weight: f64,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
    },
    /// Evaluate the SI closed forms for a macroscopic mass.
    Predict {
        #[arg(long, required = true, num_args = 1..)]
        mass_kg: Vec<f64>,
        /// Elapsed time for the trajectory-variance estimate.
        #[arg(long)]
        time_s: Option<f64>,
        #[arg(long, value_enum, default_value_t = TextFormat::Text)]
        format: TextFormat,
    },
    /// Print the reference parameter tables.
    Tables {
        #[arg(long, num_args = 1.., default_values_t = [1e-3, EARTH_MASS_KG])]
        mass_kg: Vec<f64>,
        #[arg(long, value_enum, default_value_t = TextFormat::Text)]
        format: TextFormat,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Criterion ids to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u8>>,
        #[arg(long, env = "COLLAPSAR_WORKERS")]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run config or manifest JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "COLLAPSAR_WORKERS")]
    workers: Option<usize>,
    /// Output directory (default: config value, else <command>-seed<seed>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Series file format
    #[arg(long, value_enum)]
    format: Option<SeriesFormat>,
    /// Gzip every data file except the manifest
    #[arg(long)]
    gzip: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Sharp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextFormat {
    Text,
    Json,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numeric(String),
    Selftest,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<CollapseError> for Failure {
    fn from(e: CollapseError) -> Self {
        match e {
            CollapseError::Config(_) | CollapseError::Shape(_) | CollapseError::Unit(_) => Self::Config(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Numeric(format!("i/o error: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("collapsar: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("collapsar: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(Failure::Selftest) => ExitCode::from(EXIT_SELFTEST),
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Run(args) => {
            let (mut cfg, _) = load(&args)?;
            cfg.ensemble.trajectories = 1;
            ensemble("run", cfg, &args)
        }
        Command::Ensemble(args) => {
            let (cfg, _) = load(&args)?;
            ensemble("ensemble", cfg, &args)
        }
        Command::LindbladCompare { run, checkpoints } => lindblad_compare(&run, checkpoints),
        Command::Measure {
            run,
            preset,
            plus_weight,
            trajectories,
        } => {
            let cfg = match preset {
                Some(p) => preset_config(p, plus_weight, trajectories, &run)?,
                None => load(&run)?.0,
            };
            if !matches!(cfg.simulation, EnsembleModel::Measurement(_)) {
                return Err(Failure::Config(
                    "measure needs a measurement model config or --preset".into(),
                ));
            }
            ensemble("measure", cfg, &run)
        }
        Command::Predict {
            mass_kg,
            time_s,
            format,
        } => predict(&mass_kg, time_s, format),
        Command::Tables { mass_kg, format } => {
            let t = pheno_tables(&mass_kg)?;
            match format {
                TextFormat::Text => print!("{}", t.to_text()),
                TextFormat::Json => println!("{}", t.to_json()),
            }
            Ok(())
        }
        Command::Selftest { only, workers } => selftest(only, workers.unwrap_or_else(default_workers)),
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Loads the config and applies command-line overrides, validating again afterwards.
fn load(args: &RunArgs) -> Result<(RunConfig, serde_json::Map<String, serde_json::Value>), Failure> {
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let (mut cfg, params) = config::load(path)?;
    apply_overrides(&mut cfg, args);
    cfg.validate()?;
    Ok((cfg, params))
}

fn apply_overrides(cfg: &mut RunConfig, args: &RunArgs) {
    if let Some(s) = args.seed {
        cfg.ensemble.master_seed = s;
    }
    if let Some(w) = args.workers {
        cfg.ensemble.workers = Some(w);
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    cfg.output.gzip |= args.gzip;
}

fn preset_config(preset: Preset, plus_weight: f64, trajectories: usize, args: &RunArgs) -> Result<RunConfig, Failure> {
    let model = match preset {
        Preset::Default => MeasurementModel::pointer_default(plus_weight)?,
        Preset::Sharp => MeasurementModel::pointer_sharp(plus_weight)?,
    };
    let mut cfg = RunConfig {
        simulation: EnsembleModel::Measurement(model),
        ensemble: EnsembleSection {
            trajectories,
            master_seed: 0,
            workers: None,
        },
        output: OutputSection::default(),
        units: None,
    };
    apply_overrides(&mut cfg, args);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, args: &RunArgs, command: &str) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{command}-seed{}", cfg.ensemble.master_seed)))
}

fn workers(cfg: &RunConfig) -> usize {
    cfg.ensemble.workers.unwrap_or_else(default_workers).max(1)
}

fn ensemble(command: &str, cfg: RunConfig, args: &RunArgs) -> Outcome {
    let out = run_ensemble(
        &cfg.simulation,
        cfg.ensemble.trajectories,
        cfg.ensemble.master_seed,
        workers(&cfg),
    )?;
    let mut dir = RunDir::create(&out_dir(&cfg, args, command), cfg.output.gzip)?;
    dir.write_series(&out.stats, cfg.output.format)?;
    dir.write_json("stats.json", &out.stats)?;
    if matches!(cfg.simulation, EnsembleModel::Grw(_)) {
        dir.write_ndjson("jumps.ndjson", &out.jumps)?;
    }
    if let Some(born) = &out.born {
        dir.write_ndjson("outcomes.ndjson", &out.outcomes)?;
        dir.write_json("born.json", born)?;
    }
    if !out.failures.is_empty() {
        dir.write_ndjson("failures.ndjson", &out.failures)?;
    }
    let manifest = dir.finish(command, &cfg, serde_json::Map::new())?;
    println!("{}", manifest.display());
    Ok(())
}

fn lindblad_compare(args: &RunArgs, checkpoints: Option<Vec<usize>>) -> Outcome {
    let (cfg, params) = load(args)?;
    let steps = match &cfg.simulation {
        EnsembleModel::Qmupl(c) => c.steps(),
        EnsembleModel::Csl(c) => (c.horizon / c.dt).round() as usize,
        _ => return Err(Failure::Config("lindblad-compare supports qmupl and csl models".into())),
    };
    let checkpoints = match (checkpoints, params.get("checkpoints")) {
        (Some(c), _) => c,
        (None, Some(v)) => {
            serde_json::from_value(v.clone()).map_err(|e| Failure::Config(format!("manifest checkpoints: {e}")))?
        }
        (None, None) => (1..=5).map(|k| k * steps / 5).filter(|&s| s > 0).collect(),
    };
    let (n, seed, w) = (cfg.ensemble.trajectories, cfg.ensemble.master_seed, workers(&cfg));
    let cmp = match &cfg.simulation {
        EnsembleModel::Qmupl(c) => qmupl_lindblad_comparison(c, &checkpoints, n, seed, w)?,
        EnsembleModel::Csl(c) => csl_lindblad_comparison(c, &checkpoints, n, seed, w)?,
        _ => unreachable!("rejected above"),
    };
    let mut dir = RunDir::create(&out_dir(&cfg, args, "lindblad-compare"), cfg.output.gzip)?;
    dir.write_json("comparison.json", &cmp)?;
    let mut params = serde_json::Map::new();
    params.insert("checkpoints".into(), serde_json::json!(checkpoints));
    let manifest = dir.finish("lindblad-compare", &cfg, params)?;
    println!("{}", manifest.display());
    Ok(())
}

fn predict(masses: &[f64], time_s: Option<f64>, format: TextFormat) -> Outcome {
    let mut rows = Vec::new();
    for &m in masses {
        let mut row = serde_json::Map::new();
        row.insert("mass_kg".into(), m.into());
        row.insert("stationary_spread_m".into(), asymptotic_spread_si(m)?.into());
        row.insert(
            "lambda_n_per_m2_s".into(),
            coupling_constant(
                m,
                collapsar::params::NUCLEON_MASS_KG,
                collapsar::params::QMUPL_LAMBDA0_SI,
            )
            .into(),
        );
        if let Some(t) = time_s {
            let v = trajectory_variance_si(m, t)?;
            row.insert("time_s".into(), t.into());
            row.insert(
                "trajectory_variance_m2".into(),
                serde_json::to_value(v).expect("estimate serializes"),
            );
        }
        rows.push(row);
    }
    match format {
        TextFormat::Json => println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize")),
        TextFormat::Text => {
            for r in &rows {
                let m = r["mass_kg"].as_f64().unwrap_or_default();
                println!("mass                    {m:e} kg");
                println!(
                    "stationary spread       {:.4e} m",
                    r["stationary_spread_m"].as_f64().unwrap_or_default()
                );
                println!(
                    "coupling lambda_n       {:.4e} m^-2 s^-1",
                    r["lambda_n_per_m2_s"].as_f64().unwrap_or_default()
                );
                if let Some(t) = time_s {
                    let v = trajectory_variance_si(m, t)?;
                    println!(
                        "trajectory variance     {:.4e} m^2 at t = {t:e} s ({:?} regime)",
                        v.value_m2, v.regime
                    );
                }
            }
        }
    }
    Ok(())
}

fn selftest(only: Option<Vec<u8>>, workers: usize) -> Outcome {
    let ids: Vec<u8> = only.unwrap_or_else(|| CRITERIA.iter().map(|c| c.0).collect());
    if let Some(bad) = ids.iter().find(|&&i| !(1..=CRITERIA.len() as u8).contains(&i)) {
        return Err(Failure::Config(format!(
            "no criterion {bad}; ids run 1..={}",
            CRITERIA.len()
        )));
    }
    let mut all = true;
    for id in ids {
        let r = run_criterion(id, workers);
        println!("{}", r.line());
        all &= r.passed;
    }
    if all {
        Ok(())
    } else {
        Err(Failure::Selftest)
    }
}
