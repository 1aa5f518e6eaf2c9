//! `bd`: run configured experiments and the acceptance battery.

mod config;
mod run;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use becker_doring::verify::{run_suite, Suite};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(name = "bd", version, about = "Becker-Doring experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON config.
    Run {
        /// Config path; may also be given positionally.
        #[arg(long = "config", value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(value_name = "CONFIG", conflicts_with = "config")]
        positional: Option<PathBuf>,
        /// `KEY=VALUE`, dotted keys for nested sections. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<String>,
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
        #[arg(long, value_name = "INT")]
        threads: Option<usize>,
    },
    /// Run the acceptance battery: `fast` or `full`.
    Verify {
        suite: String,
        #[arg(long, value_name = "INT")]
        threads: Option<usize>,
    },
}

#[derive(Serialize)]
struct Failure {
    kind: &'static str,
    message: String,
    witness: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Report<'a> {
    kind: &'static str,
    config_hash: String,
    config: &'a ExperimentConfig,
    result: Option<Value>,
    failure: Option<Failure>,
}

fn set_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
}

/// Write `bytes` to `dir/name` through a temporary file in the same directory.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| e.error)?;
    Ok(path)
}

fn csv_bytes(table: &run::Table) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn run_experiment(path: &Path, overrides: &[String], out: Option<String>, seed: Option<u64>) -> ExitCode {
    let mut all = overrides.to_vec();
    if let Some(out) = out {
        all.push(format!("out={}", serde_json::Value::String(out)));
    }
    if let Some(seed) = seed {
        all.push(format!("seed={seed}"));
    }
    let cfg = match ExperimentConfig::load(path, &all) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let hash = cfg.hash();
    let stem = format!("{}-{}", cfg.kind.name(), &hash[..16]);
    let dir = PathBuf::from(&cfg.out);
    let (result, failure, tables, code) = match run::run(&cfg) {
        Ok(o) => (Some(o.result), None, o.tables, 0u8),
        Err(f) => {
            let validation = f.error.is_validation();
            let failure = Failure {
                kind: if validation { "validation" } else { "numerical" },
                message: f.error.to_string(),
                witness: f.witness,
            };
            eprintln!("{}", failure.message);
            (f.partial, Some(failure), Vec::new(), if validation { 2 } else { 3 })
        }
    };
    let report = Report { kind: cfg.kind.name(), config_hash: hash, config: &cfg, result, failure };
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    let mut written = Vec::new();
    let mut io_failed = false;
    match write_atomic(&dir, &format!("{stem}.json"), &json) {
        Ok(p) => written.push(p),
        Err(e) => {
            eprintln!("cannot write report: {e}");
            io_failed = true;
        }
    }
    for table in &tables {
        let bytes = match csv_bytes(table) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("cannot encode table: {e}");
                io_failed = true;
                continue;
            }
        };
        match write_atomic(&dir, &format!("{stem}{}.csv", table.suffix), &bytes) {
            Ok(p) => written.push(p),
            Err(e) => {
                eprintln!("cannot write table: {e}");
                io_failed = true;
            }
        }
    }
    for p in &written {
        println!("{}", p.display());
    }
    if io_failed && code == 0 {
        return ExitCode::from(3);
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, positional, overrides, out, seed, threads } => {
            set_threads(threads);
            let Some(path) = config.or(positional) else {
                eprintln!("run needs a config path (--config PATH)");
                return ExitCode::from(2);
            };
            run_experiment(&path, &overrides, out, seed)
        }
        Command::Verify { suite, threads } => {
            set_threads(threads);
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            let outcomes = run_suite(suite);
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
