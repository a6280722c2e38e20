use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossbudget::data_gen::{self, validate_dataset, DatasetSpec};
use crossbudget::experiment::{
    run_bucket, run_estimate, run_pipeline, run_strategies, run_sweep, write_sweep_csv, ExperimentConfig, Inputs,
    RowStatus, BUCKET_CSV, RESULTS_CSV, SWEEP_CSV,
};
use crossbudget::{Error, ErrorCategory};

const THREADS_ENV: &str = "CROSSBUDGET_THREADS";

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "crossbudget", version, about = "Cross-channel budget allocation experiments")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a dataset spec.
    Generate {
        /// Dataset spec (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset directory and list every violation.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Estimate channel limits and the cost matrix of a dataset.
    Estimate {
        /// Dataset directory; alternatively take it from --config.
        #[arg(long, required_unless_present = "config")]
        dataset: Option<PathBuf>,
        #[arg(long, conflicts_with = "dataset")]
        config: Option<PathBuf>,
        /// Output directory, by default the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = crossbudget::cost_model::DEFAULT_BLEND_WEIGHT)]
        blend_weight: f64,
    },
    /// Replay every configured strategy and write a metrics table.
    Run(Common),
    /// Replay the OT allocation over the configured epsilon grid.
    Sweep(Common),
    /// Run two strategies side by side on split traffic and budgets.
    Bucket(Common),
    /// Generate, estimate and run in one go.
    Pipeline(Common),
}

fn exit_for(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => EXIT_CONFIG,
        ErrorCategory::Data => EXIT_DATA,
        ErrorCategory::Solver => EXIT_SOLVER,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn print_file(path: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(Error::Io)?;
    print!("{text}");
    Ok(())
}

fn base_exit(results: &crossbudget::experiment::RunResults) -> u8 {
    match &results.base_row().status {
        RowStatus::Ok => 0,
        RowStatus::NotConverged => EXIT_SOLVER,
        RowStatus::Failed { category, message } => {
            eprintln!("error: base strategy `{}` failed: {message}", results.base);
            exit_for(*category)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            if !config.exists() {
                return Err(Error::Config(format!("spec not found: {}", config.display())));
            }
            let mut spec = DatasetSpec::load(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let manifest = data_gen::generate(&spec, &out)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(0)
        }
        Command::Validate { dataset } => {
            let report = validate_dataset(&dataset)?;
            for v in &report.violations {
                let line = v.line.map_or_else(String::new, |l| format!(":{l}"));
                println!("{}{line}: {:?}: {}", v.file, v.kind, v.message);
            }
            println!("{} records, {} violations", report.records, report.violations.len());
            Ok(if report.is_clean() { 0 } else { EXIT_DATA })
        }
        Command::Estimate {
            dataset,
            config,
            out,
            blend_weight,
        } => {
            let (dir, est_dir, blend, replay) = match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(&path)?;
                    let est_dir = out.unwrap_or_else(|| cfg.dataset.estimates().to_path_buf());
                    (
                        cfg.dataset.dir.clone(),
                        est_dir,
                        cfg.estimate.blend_weight,
                        cfg.replay.config(),
                    )
                }
                None => {
                    let dir = dataset.expect("required by clap");
                    let est_dir = out.unwrap_or_else(|| dir.clone());
                    (dir, est_dir, blend_weight, Default::default())
                }
            };
            let est = run_estimate(&dir, &est_dir, blend, &replay)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
            Ok(0)
        }
        Command::Run(common) => {
            let cfg = load_config(&common)?;
            let inputs = Inputs::load(&cfg.dataset)?;
            let results = run_strategies(&cfg, &inputs)?;
            results.write(&cfg.output_dir)?;
            print_file(&cfg.output_dir.join(RESULTS_CSV))?;
            Ok(base_exit(&results))
        }
        Command::Sweep(common) => {
            let cfg = load_config(&common)?;
            let inputs = Inputs::load(&cfg.dataset)?;
            let table = run_sweep(&cfg, &inputs)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(Error::Io)?;
            let path = cfg.output_dir.join(SWEEP_CSV);
            write_sweep_csv(&path, &table, inputs.mean_cost())?;
            print_file(&path)?;
            Ok(if table.best.is_some() { 0 } else { EXIT_SOLVER })
        }
        Command::Bucket(common) => {
            let cfg = load_config(&common)?;
            let inputs = Inputs::load(&cfg.dataset)?;
            let results = run_bucket(&cfg, &inputs)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(Error::Io)?;
            let path = cfg.output_dir.join(BUCKET_CSV);
            results.write_csv(&path)?;
            print_file(&path)?;
            let failed = [&results.a, &results.b]
                .into_iter()
                .find_map(|arm| match &arm.row.status {
                    RowStatus::Failed { category, .. } => Some(exit_for(*category)),
                    _ => None,
                });
            Ok(failed.unwrap_or(0))
        }
        Command::Pipeline(common) => {
            let cfg = load_config(&common)?;
            let (_, _, results) = run_pipeline(&cfg, common.seed)?;
            print_file(&cfg.output_dir.join(RESULTS_CSV))?;
            Ok(base_exit(&results))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set {THREADS_ENV}={n}: {e}");
        }
    }
    match dispatch(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match &e {
                Error::Io(_) => EXIT_FAILURE,
                other => exit_for(other.category()),
            })
        }
    }
}
