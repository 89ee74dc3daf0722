//! `chemoflow` command-line entry point.
//!
//! Exit codes: 0 success, 1 solver or output failure, 2 usage or
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use chemoflow::config::{load_config, Overrides, RunConfig};
use chemoflow::io::SnapshotFormat;
use chemoflow::runner::{self, RunError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "chemoflow", version, about = "Predator-prey chemotaxis solver with fluid coupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a preset or configuration and write snapshots.
    Run(Common),
    /// Kinetic-to-macro error table over a list of ε.
    KineticStudy(Common),
    /// Run a configuration and test its invariants.
    Check(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// example1, example2, example3, test1 or test2.
    #[arg(long)]
    preset: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bitwise-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
    /// csv or pgm.
    #[arg(long)]
    format: Option<SnapshotFormat>,
}

enum Failure {
    Config(String),
    Solver(String),
}

fn resolve(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(_), Some(_)) => return Err(Failure::Config("give either --preset or --config, not both".into())),
        (Some(path), None) => load_config(path),
        (None, Some(name)) => RunConfig::from_preset(name),
        (None, None) => RunConfig::from_preset("example1"),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    let o = Overrides {
        t_end: c.t_end,
        dt: c.dt,
        nx: c.nx,
        ny: c.ny,
        seed: c.seed,
        out_dir: c.out_dir.clone(),
        format: c.format,
    };
    cfg.apply(&o).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn solver(e: RunError) -> Failure {
    Failure::Solver(e.to_string())
}

fn dispatch(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(c) => {
            let cfg = resolve(c)?;
            let out = runner::execute(&cfg, true).map_err(solver)?;
            eprintln!(
                "{}: {} steps to t = {}, {} snapshot files in {}",
                cfg.name,
                out.records.len(),
                out.state.t,
                out.snapshots.len(),
                cfg.output.out_dir.display()
            );
            Ok(())
        }
        Command::KineticStudy(c) => {
            let cfg = resolve(c)?;
            let rows = runner::kinetic_study(&cfg, true).map_err(solver)?;
            print!("{}", chemoflow::kinetic::error_table_csv(&rows));
            Ok(())
        }
        Command::Check(c) => {
            let cfg = resolve(c)?;
            let results = runner::check(&cfg).map_err(solver)?;
            let mut ok = true;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Solver("invariant check failed".into()))
            }
        }
    }
}

fn threads(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Run(c) | Command::KineticStudy(c) | Command::Check(c) => c.threads,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = threads(&cli.command) {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
