//! `a2g`: simulate, sweep, train, optimize and baseline from one scenario file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use a2g_core::approximator::{self, ApproxModel};
use a2g_core::dataset;
use a2g_core::neuralnet::Checkpoint;
use a2g_core::optimizer::{self, Extrapolating, OptimizerRun, ReportRow, Surrogate};
use a2g_core::scenario::ScenarioFile;
use a2g_core::simulator::{self, DeploymentConfig};
use a2g_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "a2g", version, about = "Air-to-ground network design pipeline")]
struct Cli {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Master seed; overrides the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate one deployment with the simulator.
    Simulate(SimulateArgs),
    /// Evaluate the sweep grid and write a dataset CSV.
    Sweep(SweepArgs),
    /// Fit the surrogate to a dataset.
    Train(TrainArgs),
    /// Search for the best deployment with a trained surrogate.
    Optimize(OptimizeArgs),
    /// Best row of a dataset, in the optimizer's report format.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    isd_km: f64,
    /// Up-tilt per sector in degrees, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    tilt: Vec<f64>,
    #[arg(long)]
    load: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Dataset path; defaults to OUT/dataset.csv.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Evaluate only this many uniformly drawn grid points.
    #[arg(long)]
    subsample: Option<usize>,
    /// Overwrite an existing dataset.
    #[arg(long, conflicts_with = "resume")]
    force: bool,
    /// Continuing a partial sweep is not supported; an existing file is refused.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint path; defaults to OUT/approximator.json.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate at the last epoch (cosine annealing); equal to --lr for a constant rate.
    #[arg(long)]
    final_lr: Option<f64>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Hold a parameter fixed: `isd=80km`, `isd=80000`, `load=15`, `theta0=30`.
    #[arg(long = "fix")]
    fix: Vec<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Decode loads down to this value, querying the surrogate below its training range.
    #[arg(long)]
    load_floor: Option<f64>,
    /// Skip simulator verification of the candidates.
    #[arg(long)]
    no_verify: bool,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    dataset: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::NonConvergence { .. } => 3,
        Error::Io { .. } => 4,
        Error::Parse { .. } | Error::Schema(_) => 5,
        Error::Incompatible(_) => 6,
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cdf_csv(header: &str, values: &[f64]) -> String {
    let mut out = format!("{header},cdf\n");
    for (v, c) in approximator::empirical_cdf(values.to_vec()) {
        out.push_str(&format!("{v:.6},{c:.6}\n"));
    }
    out
}

fn simulate(file: &ScenarioFile, out: &Path, a: &SimulateArgs) -> Result<()> {
    let scenario = file.network()?;
    let config = DeploymentConfig::new(a.isd_km * 1000.0, a.tilt.clone(), a.load);
    let r = simulator::evaluate(&scenario, &config, scenario.n_drops, file.simulation_seed())?;
    let mut summary = optimizer::report_header(scenario.sectors)
        .replace(",surrogate_t50,verified_t50", ",x_percentile,t_x_mbps,mean_ru");
    summary.push('\n');
    let mut fields = vec![format!("{:.6}", config.isd_m / 1000.0)];
    fields.extend(config.uptilts_deg.iter().map(|t| format!("{t:.6}")));
    fields.push(format!("{:.6}", config.load_mbps));
    fields.push(format!("{:.6}", r.x_percentile));
    fields.push(format!("{:.6}", r.t_x_mbps));
    fields.push(format!("{:.6}", r.mean_ru));
    summary.push_str(&fields.join(","));
    summary.push('\n');
    write(&out.join("simulation.csv"), &summary)?;
    write(&out.join("throughput_cdf.csv"), &cdf_csv("throughput_mbps", &r.throughput_samples_mbps))?;
    write(&out.join("sinr_cdf.csv"), &cdf_csv("sinr_db", &r.sinr_samples_db))?;
    println!("t{} = {:.3} Mbps, mean RU = {:.4}", r.x_percentile, r.t_x_mbps, r.mean_ru);
    Ok(())
}

fn sweep(file: &ScenarioFile, out: &Path, a: &SweepArgs) -> Result<()> {
    let path = a.output.clone().unwrap_or_else(|| out.join("dataset.csv"));
    if path.exists() && !a.force {
        let why = if a.resume {
            "resuming a partial sweep is not supported"
        } else {
            "file exists (use --force to overwrite)"
        };
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::AlreadyExists, why)));
    }
    let scenario = file.network()?;
    let mut file = file.clone();
    if a.subsample.is_some() {
        file.grid.subsample = a.subsample;
    }
    let grid = file.sweep_grid();
    grid.validate(&scenario)?;
    let n = grid.selected_indices(scenario.sectors).len();
    eprintln!("sweep: {n} of {} grid points", grid.cardinality(scenario.sectors));
    let report = dataset::generate(&scenario, &grid, file.simulation_seed())?;
    if report.skipped > 0 {
        eprintln!("sweep: {} points skipped after simulator errors", report.skipped);
    }
    write(&path, &dataset::to_csv(&report.rows, scenario.sectors)?)?;
    println!("{} rows", report.rows.len());
    Ok(())
}

fn train(file: &ScenarioFile, out: &Path, a: &TrainArgs) -> Result<()> {
    let data = dataset::load(&a.dataset, None)?;
    let mut settings = file.train_settings();
    if let Some(e) = a.epochs {
        settings.epochs = e;
    }
    settings.lr = a.lr.unwrap_or(settings.lr);
    settings.final_lr = a.final_lr.unwrap_or(settings.final_lr);
    let fit = approximator::train(
        &data.rows,
        &file.bounds,
        data.sectors,
        file.simulation.percentile,
        &settings,
    )?;
    let path = a.checkpoint.clone().unwrap_or_else(|| out.join("approximator.json"));
    write(&path, &fit.model.to_checkpoint().to_json())?;
    write(&out.join("loss_history.csv"), &approximator::history_to_csv(&fit.history))?;
    let held_out = approximator::error_cdf(&fit.model, &fit.validation_rows);
    let in_sample = approximator::error_cdf(&fit.model, &fit.train_rows)?;
    write(&out.join("error_cdf_train.csv"), &approximator::cdf_to_csv(&in_sample))?;
    match held_out {
        Ok(cdf) => {
            write(&out.join("error_cdf.csv"), &approximator::cdf_to_csv(&cdf))?;
            println!(
                "held-out p95 absolute error {:.3} Mbps over {} rows",
                approximator::error_quantile(&cdf, 95.0)?,
                cdf.len()
            );
        }
        Err(_) => println!("no held-out rows; in-sample p95 {:.3} Mbps", approximator::error_quantile(&in_sample, 95.0)?),
    }
    Ok(())
}

fn report_rows(
    run: &OptimizerRun,
    surrogate: &dyn Surrogate,
    verify: Option<(&simulator::NetworkScenario, u64)>,
) -> Result<(Vec<ReportRow>, ReportRow)> {
    let (best, score) = optimizer::select_best(&run.best, surrogate)?;
    let verified = |c: &DeploymentConfig| -> Result<Option<f64>> {
        verify.map(|(sc, seed)| optimizer::verify(c, sc, seed).map(|r| r.t_x_mbps)).transpose()
    };
    let batch = run
        .best
        .rows
        .iter()
        .zip(&run.best.surrogate_scores)
        .map(|(c, &s)| {
            Ok(ReportRow {
                config: c.clone(),
                surrogate_t50: Some(s),
                verified_t50: verified(c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verified_best = verified(&best)?;
    Ok((
        batch,
        ReportRow {
            config: best,
            surrogate_t50: Some(score),
            verified_t50: verified_best,
        },
    ))
}

fn optimize(file: &ScenarioFile, out: &Path, a: &OptimizeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let model = ApproxModel::from_checkpoint(&Checkpoint::from_json(&text)?)?;
    let sectors = model.sectors;
    let mut file = file.clone();
    if file.sectors != sectors {
        log::info!("using the checkpoint's sector count {sectors} instead of the scenario's {}", file.sectors);
        file.sectors = sectors;
    }
    let fixed = file.fixed_params(&a.fix)?;
    let mut settings = file.optimizer_settings();
    settings.n = a.n.unwrap_or(settings.n);
    settings.tau = a.tau.unwrap_or(settings.tau);
    settings.k_max = a.k_max.unwrap_or(settings.k_max);
    settings.lr = a.lr.unwrap_or(settings.lr);
    if a.load_floor.is_some() {
        settings.load_floor_mbps = a.load_floor;
    }
    let extrapolating = Extrapolating(&model);
    let surrogate: &dyn Surrogate = if settings.load_floor_mbps.is_some() { &extrapolating } else { &model };
    let run = optimizer::train(surrogate, &file.bounds, &fixed, &settings)?;
    if run.hit_epoch_cap {
        eprintln!("optimize: stopped at the epoch cap ({}) before the plateau rule", settings.max_epochs);
    }
    let scenario;
    let verify = if a.no_verify {
        None
    } else {
        scenario = file.network()?;
        Some((&scenario, file.simulation_seed()))
    };
    let (batch, best) = report_rows(&run, surrogate, verify)?;
    write(&out.join("best.csv"), &optimizer::report_csv(std::slice::from_ref(&best), sectors)?)?;
    write(&out.join("batch.csv"), &optimizer::report_csv(&batch, sectors)?)?;
    write(&out.join("history.csv"), &optimizer::history_csv(&run.history))?;
    print!("{}", optimizer::report_csv(std::slice::from_ref(&best), sectors)?);
    Ok(())
}

fn baseline(out: &Path, a: &BaselineArgs) -> Result<()> {
    let data = dataset::load(&a.dataset, None)?;
    let best = dataset::exhaustive_best(&data.rows).map_err(|_| Error::Schema("dataset has no rows".into()))?;
    let row = ReportRow {
        config: best.config.clone(),
        surrogate_t50: None,
        verified_t50: Some(best.t_x_mbps),
    };
    let csv = optimizer::report_csv(&[row], data.sectors)?;
    write(&out.join("baseline.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut file = match &cli.scenario {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default(),
    };
    if let Some(seed) = cli.seed {
        file.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(&file, &cli.out, a),
        Command::Sweep(a) => sweep(&file, &cli.out, a),
        Command::Train(a) => train(&file, &cli.out, a),
        Command::Optimize(a) => optimize(&file, &cli.out, a),
        Command::Baseline(a) => baseline(&cli.out, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
