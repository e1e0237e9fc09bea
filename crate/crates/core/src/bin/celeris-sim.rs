use std::path::{Path, PathBuf};
use std::process::ExitCode;

use celeris_sim::experiment::{
    coding_bench, ecdf, ml_drop, read_durations, read_json, simulate, sweep, tables, write_coding_bench,
    write_ecdf, write_ml_drop, write_sweep, write_tables, CodingBenchConfig, ExperimentError,
    MlDropConfig, ScenarioConfig, SeedPolicy, TablesConfig,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "celeris-sim", version, about = "Best-effort RDMA transport simulator and models")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "CELERIS_SIM_OUT", default_value = "results")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write steps, ports, timeout trace and summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scenario once per value of one config field.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted field path, e.g. `background.flow_arrival_rate`.
        #[arg(long)]
        axis: String,
        /// JSON array of values.
        #[arg(long)]
        values: String,
        #[arg(long, value_enum, default_value = "same")]
        seed_policy: SeedArg,
    },
    /// Empirical CDF of the `duration_ns` column of a steps CSV.
    Ecdf {
        #[arg(long)]
        input: PathBuf,
    },
    /// Context size, QP capacity and MTBF per design.
    Tables {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Throughput of the Hadamard and XOR codecs.
    CodingBench {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train small models with dropped gradient fragments.
    MlDrop {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SeedArg {
    Same,
    Offset,
}

fn optional_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, ExperimentError> {
    path.as_deref().map_or_else(|| Ok(T::default()), read_json)
}

fn scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, ExperimentError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Value, ExperimentError> {
    let out = &cli.out;
    match cli.command {
        Command::Simulate { config } => {
            let report = simulate(&scenario(&config, cli.seed)?)?;
            let steps = report.write(out)?;
            Ok(json!({ "steps_csv": steps, "summary": report.summary }))
        }
        Command::Sweep {
            config,
            axis,
            values,
            seed_policy,
        } => {
            let values: Vec<Value> = serde_json::from_str(&values)
                .map_err(|e| ExperimentError::invalid("values", format!("expected a JSON array: {e}")))?;
            let policy = match seed_policy {
                SeedArg::Same => SeedPolicy::Same,
                SeedArg::Offset => SeedPolicy::Offset,
            };
            let points = sweep(&scenario(&config, cli.seed)?, &axis, &values, policy)?;
            let rows = write_sweep(&points, &axis, out)?;
            Ok(json!({ "sweep_summary_csv": out.join("sweep_summary.csv"), "points": rows }))
        }
        Command::Ecdf { input } => {
            let rows = ecdf(&read_durations(&input)?)?;
            std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
            let path = out.join("ecdf.csv");
            write_ecdf(&rows, &path)?;
            Ok(json!({ "ecdf_csv": path, "rows": rows.len() }))
        }
        Command::Tables { config } => {
            let rows = tables(&optional_config::<TablesConfig>(&config)?)?;
            write_tables(&rows, out)?;
            Ok(json!({ "tables_csv": out.join("tables.csv"), "rows": rows }))
        }
        Command::CodingBench { config } => {
            let mut cfg: CodingBenchConfig = optional_config(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let rows = coding_bench(&cfg)?;
            write_coding_bench(&rows, out)?;
            Ok(json!({ "coding_bench_csv": out.join("coding_bench.csv"), "rows": rows }))
        }
        Command::MlDrop { config } => {
            let mut cfg: MlDropConfig = optional_config(&config)?;
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let report = ml_drop(&cfg)?;
            write_ml_drop(&report, out)?;
            Ok(json!({ "ml_summary_csv": out.join("ml_summary.csv"), "summary": report.summary }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let v = json!({ "error": { "kind": "usage", "field": null, "message": e.to_string().trim() } });
            eprintln!("{v}");
            return ExitCode::from(2);
        }
    };
    let quiet = cli.quiet;
    match run(cli) {
        Ok(v) => {
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&v).expect("values serialize"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
