//! `bench`: run experiment grids, generate synthetic KPIs and score
//! predictions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alforest_bench::report::{rows_table, summary_table, write_csv};
use alforest_bench::{run_experiment, BenchConfig, BenchError};
use alforest_core::timeseries::{load_csv, CsvSchema};
use alforest_core::{evaluate, featurize, synth_generate, FeatureConfig, SynthSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bench", version, about = "Active-learning iForest experiment tools")]
struct Cli {
    /// Override every seed (grid seeds, synthetic spec seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the strategy x update x budget grid described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for results.csv and summary.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also print every per-KPI row.
        #[arg(long)]
        rows: bool,
    },
    /// Generate a labelled synthetic KPI.
    Synth {
        /// TOML (or .json) file with generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delay-adjusted precision, recall and F1 of a prediction file.
    Eval {
        /// CSV with `timestamp` and `label` columns.
        #[arg(long)]
        truth: PathBuf,
        /// CSV with `timestamp` and a `prediction` (or `label`) column.
        #[arg(long)]
        pred: PathBuf,
        #[arg(short, long, default_value_t = alforest_core::eval::DEFAULT_DELAY)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Write the per-point feature matrix of a KPI file.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Core(#[from] alforest_core::Error),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
}

fn file_err(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |reason| CliError::File {
        path: path.to_path_buf(),
        reason,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| file_err(path)(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out_dir, rows } => {
            let mut config = BenchConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                config.grid.seeds = vec![seed];
            }
            let result = run_experiment(&config)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).map_err(|e| file_err(&dir)(e.to_string()))?;
                let results = dir.join("results.csv");
                write_csv(create(&results)?, &result.rows).map_err(|e| file_err(&results)(e.to_string()))?;
                let summary = dir.join("summary.csv");
                write_csv(create(&summary)?, &result.summary).map_err(|e| file_err(&summary)(e.to_string()))?;
            }
            if rows {
                println!("{}", rows_table(&result.rows));
            }
            print!("{}", summary_table(&result.summary));
        }
        Command::Synth { spec, out } => {
            let mut spec = match spec {
                Some(path) => read_spec(&path)?,
                None => SynthSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let ts = synth_generate(&spec).map_err(alforest_core::Error::from)?;
            ts.save_csv(&out).map_err(alforest_core::Error::from)?;
            let anomalies = ts.labels().map(|l| l.iter().filter(|&&x| x == 1).count()).unwrap_or(0);
            eprintln!("wrote {} points ({anomalies} anomalous) to {}", ts.len(), out.display());
        }
        Command::Eval { truth, pred, k, json } => {
            let ts = load_csv(&truth, &CsvSchema::default()).map_err(alforest_core::Error::from)?;
            let labels = ts.labels().ok_or_else(|| file_err(&truth)("no label column".into()))?;
            let predictions = read_predictions(&pred)?;
            if predictions.len() != ts.len() {
                return Err(file_err(&pred)(format!(
                    "{} rows but truth has {}",
                    predictions.len(),
                    ts.len()
                )));
            }
            let mut aligned = vec![0u8; ts.len()];
            for (i, (&t, &(pt, p))) in ts.timestamps().iter().zip(&predictions).enumerate() {
                if t != pt {
                    return Err(file_err(&pred)(format!(
                        "row {i}: timestamp {pt} does not match truth {t}"
                    )));
                }
                aligned[i] = p;
            }
            let report = evaluate(labels, &aligned, k).map_err(alforest_core::Error::from)?;
            if json {
                println!("{}", report.to_json());
            } else {
                println!("{report}");
            }
        }
        Command::Features { input, out } => {
            let ts = load_csv(&input, &CsvSchema::default()).map_err(alforest_core::Error::from)?;
            let matrix = featurize(&ts.fill_gaps(), &FeatureConfig::default());
            let mut w = create(&out)?;
            matrix.write_csv(&mut w).map_err(|e| file_err(&out)(e.to_string()))?;
            w.flush().map_err(|e| file_err(&out)(e.to_string()))?;
        }
    }
    Ok(())
}

fn read_spec(path: &Path) -> Result<SynthSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path)(e.to_string()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| file_err(path)(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| file_err(path)(e.to_string()))
    }
}

fn read_predictions(path: &Path) -> Result<Vec<(i64, u8)>, CliError> {
    let err = file_err(path);
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let ts_col = col(&["timestamp"]).ok_or_else(|| err("missing `timestamp` column".into()))?;
    let p_col = col(&["prediction", "pred", "label"]).ok_or_else(|| err("missing `prediction` column".into()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let t = record[ts_col]
            .trim()
            .parse::<i64>()
            .map_err(|e| err(format!("row {}: {e}", i + 1)))?;
        let p = match record[p_col].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("row {}: prediction `{other}` is not 0 or 1", i + 1))),
        };
        out.push((t, p));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
