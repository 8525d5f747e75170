//! `ibis` — driver for the immersed-boundary engine.
//!
//! Subcommands: `run` (one simulation into an output directory),
//! `restart` (resume a checkpointed run), `converge` (refinement sweep
//! with an observed-order table), `tables` (benchmark tables for both
//! methods), and `dump-gap` (reconstructed thin-gap velocity profiles).
//!
//! Exit codes: 0 success, 1 configuration / usage error, 2 numerical
//! failure. All messages go to standard error.

mod config;
mod driver;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use ibis_core::error::{IbisError, Result};
use ibis_core::stepper::Method;

use config::RunConfig;
use driver::{dump_gaps, orders_csv, run_into, summary_csv, Quiet};

#[derive(Parser)]
#[command(
    name = "ibis",
    about = "Immersed-boundary flow benchmarks with optional lubrication corrections",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag overrides applied on top of the configuration file.
#[derive(Args, Debug)]
struct Overrides {
    /// Coupling method: standard | lubricated.
    #[arg(long)]
    method: Option<String>,
    /// Grid cells per side.
    #[arg(long)]
    grid: Option<usize>,
    /// Final simulation time.
    #[arg(long)]
    tfinal: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Lubrication activation cutoff in units of max(Δx, Δy).
    #[arg(long)]
    cutoff_factor: Option<f64>,
    /// Outer-sample offset along the gap normals, in gridpoints.
    #[arg(long)]
    offset: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(m) = &self.method {
            cfg.scenario.method = Method::parse(m)?;
        }
        if let Some(n) = self.grid {
            cfg.scenario.n = n;
        }
        if let Some(t) = self.tfinal {
            cfg.scenario.t_final = t;
        }
        if let Some(c) = self.cutoff_factor {
            cfg.scenario.cutoff_factor = c;
        }
        if let Some(d) = self.offset {
            cfg.scenario.offset_gridpoints = d;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its artifacts to the output directory.
    Run {
        /// Configuration file (flat `key = value` lines).
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Resume a checkpointed run and integrate on to the final time.
    Restart {
        config: PathBuf,
        /// `checkpoint.txt` from a previous run of the same configuration.
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep grid sizes and emit per-grid diagnostics plus observed orders.
    Converge {
        config: PathBuf,
        /// Comma-separated grid sizes, e.g. 16,32,64,128.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        grids: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run both methods across a grid sweep and write benchmark tables.
    Tables {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        grids: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run to the final time, then dump the reconstructed gap profiles of
    /// one pairing.
    DumpGap {
        config: PathBuf,
        /// Pairing index (order of the scenario's pairing list).
        #[arg(long, default_value_t = 0)]
        pairing: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 1 for configuration problems, 2 for anything that went wrong while
/// actually computing.
fn exit_code(err: &IbisError) -> u8 {
    match err {
        IbisError::Config(_)
        | IbisError::Parse(_)
        | IbisError::Io(_)
        | IbisError::InvalidGrid(_)
        | IbisError::LocationMismatch { .. }
        | IbisError::ShapeMismatch { .. } => 1,
        _ => 2,
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        IbisError::Config(format!("cannot read config '{}': {e}", path.display()))
    })?;
    let mut cfg = RunConfig::parse(&text)?;
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let fin = run_into(&cfg, &overrides.out, None)?;
            eprintln!(
                "run finished: t = {}, stop = {:?}, artifacts in {}",
                fin.state.t,
                fin.stop,
                overrides.out.display()
            );
            Ok(())
        }
        Command::Restart {
            config,
            checkpoint,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let text = fs::read_to_string(&checkpoint).map_err(|e| {
                IbisError::Config(format!(
                    "cannot read checkpoint '{}': {e}",
                    checkpoint.display()
                ))
            })?;
            let fin = run_into(&cfg, &overrides.out, Some(&text))?;
            eprintln!(
                "restart finished: t = {}, stop = {:?}, artifacts in {}",
                fin.state.t,
                fin.stop,
                overrides.out.display()
            );
            Ok(())
        }
        Command::Converge {
            config,
            grids,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            check_grids(&grids)?;
            let mut rows = Vec::new();
            for &n in &grids {
                let mut cfg_n = cfg.clone();
                cfg_n.scenario.n = n;
                let dir = overrides.out.join(format!("n{n}"));
                let fin = run_into(&cfg_n, &dir, None)?;
                eprintln!("grid {n}: t = {}, stop = {:?}", fin.state.t, fin.stop);
                rows.push((n, fin.record));
            }
            fs::create_dir_all(&overrides.out)?;
            fs::write(overrides.out.join("summary.csv"), summary_csv(&rows))?;
            fs::write(overrides.out.join("orders.csv"), orders_csv(&cfg, &rows))?;
            Ok(())
        }
        Command::Tables {
            config,
            grids,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            check_grids(&grids)?;
            fs::create_dir_all(&overrides.out)?;
            for method in [Method::Standard, Method::Lubricated] {
                let mut rows = Vec::new();
                for &n in &grids {
                    let mut cfg_n = cfg.clone();
                    cfg_n.scenario.n = n;
                    cfg_n.scenario.method = method;
                    let fin = driver::execute(&cfg_n, None, &mut Quiet)?;
                    eprintln!(
                        "{} {n}: t = {}, stop = {:?}",
                        method.name(),
                        fin.state.t,
                        fin.stop
                    );
                    rows.push((n, fin.record));
                }
                let name = format!(
                    "table_{}_{}.csv",
                    cfg.scenario.scenario.name(),
                    method.name()
                );
                fs::write(overrides.out.join(name), summary_csv(&rows))?;
            }
            Ok(())
        }
        Command::DumpGap {
            config,
            pairing,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let mut fin = driver::execute(&cfg, None, &mut Quiet)?;
            let text = dump_gaps(&mut fin, pairing, cfg.output.gap_samples)?;
            fs::create_dir_all(&overrides.out)?;
            fs::write(overrides.out.join("config.echo"), cfg.serialize())?;
            fs::write(overrides.out.join("gap.txt"), text)?;
            eprintln!(
                "gap profiles written to {}",
                overrides.out.join("gap.txt").display()
            );
            Ok(())
        }
    }
}

fn check_grids(grids: &[usize]) -> Result<()> {
    if grids.len() < 2 {
        return Err(IbisError::Config(
            "need at least two grid sizes for a refinement sweep".into(),
        ));
    }
    if grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(IbisError::Config(
            "grid sizes must be strictly increasing".into(),
        ));
    }
    Ok(())
}
