//! Command-line front end. Exit codes: 0 ok, 1 failed property check,
//! 2 usage or config error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::engine::trace_line;
use crate::harness::{
    csv_file_name, load_config, oracle_check, run_experiment_with, summarize, sweep, write_csv,
    ExperimentConfig, HarnessError,
};
use crate::linkstore::Direction;

#[derive(Debug, Parser)]
#[command(
    name = "dynlink",
    version,
    about = "Dynamic link experiments over simulated source networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its interval CSV.
    Run {
        /// Preset name or path to a JSON config.
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// fwd or bwd.
        #[arg(long)]
        direction: Option<Direction>,
        /// Write one JSON line per query to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the final link store after the run.
        #[arg(long)]
        debug_store: bool,
    },
    /// Run every JSON config in a directory for each seed.
    Sweep {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare link evaluation on an empty store against full evaluation.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Run an experiment and print the resulting link store.
    DumpStore {
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Usage(String),
    Property(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Gen(_) => Failure::Usage(e.to_string()),
            other => Failure::Property(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Property(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn configured(
    name: &str,
    seed: Option<u64>,
    direction: Option<Direction>,
) -> Result<ExperimentConfig, Failure> {
    let mut cfg = load_config(name)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = direction {
        cfg.direction = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            direction,
            trace,
            debug_store,
        } => {
            let cfg = configured(&config, seed, direction)?;
            let mut trace_out = match &trace {
                Some(p) => Some(std::io::BufWriter::new(fs::File::create(p)?)),
                None => None,
            };
            let mut store_dump = String::new();
            let series = run_experiment_with(&cfg, |exp, rec| {
                if let Some(w) = trace_out.as_mut() {
                    writeln!(
                        w,
                        "{}",
                        trace_line(&rec.query, &rec.linked, Some(&rec.optimal))
                    )?;
                }
                if debug_store && exp.is_finished() {
                    store_dump = exp.store().dump(exp.network());
                }
                Ok(())
            })?;
            if let Some(mut w) = trace_out {
                w.flush()?;
            }
            fs::create_dir_all(&out)?;
            let path = out.join(csv_file_name(&series));
            write_csv(&series, &path)?;
            let s = summarize(&series)?;
            println!(
                "{}: final reduction {:.2}%, final qos loss {:.2}%, linked-only reduction {:.2}%",
                path.display(),
                s.final_search_reduction_pct,
                s.final_qos_loss_pct,
                s.linked_only_reduction_pct
            );
            if debug_store {
                print!("{store_dump}");
            }
            Ok(())
        }
        Command::Sweep {
            configs,
            seeds,
            out,
        } => {
            let cfgs = configs_in(&configs)?;
            if seeds.is_empty() {
                return Err(Failure::Usage("no seeds given".into()));
            }
            for row in sweep(&cfgs, &seeds, &out)? {
                println!(
                    "{} seed {}: reduction {:.2}%, qos loss {:.2}%",
                    row.config,
                    row.seed,
                    row.summary.final_search_reduction_pct,
                    row.summary.final_qos_loss_pct
                );
            }
            println!("{}", out.join("sweep_summary.csv").display());
            Ok(())
        }
        Command::OracleCheck { seed, count } => {
            let report = oracle_check(seed, count)?;
            for m in &report.mismatches {
                eprintln!("mismatch at query {}: {}: {}", m.index, m.query, m.detail);
            }
            println!("{}/{} matched", report.matched, report.count);
            if report.matched == report.count {
                Ok(())
            } else {
                Err(Failure::Property(format!(
                    "{} mismatches",
                    report.count - report.matched
                )))
            }
        }
        Command::DumpStore { config, seed } => {
            let cfg = configured(&config, seed, None)?;
            let mut dump = String::new();
            run_experiment_with(&cfg, |exp, _| {
                if exp.is_finished() {
                    dump = exp.store().dump(exp.network());
                }
                Ok(())
            })?;
            print!("{dump}");
            Ok(())
        }
    }
}

fn configs_in(dir: &Path) -> Result<Vec<ExperimentConfig>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Usage(format!(
            "no .json configs in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            load_config(&p.to_string_lossy())
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        })
        .collect()
}
