use std::path::PathBuf;
use std::process::ExitCode;

use chimhd_cli::{cmd_check, cmd_converge, cmd_run, parse_real, CliError, RunConfig};
use chimhd_core::experiments::SweepMode;
use chimhd_core::{CouplingIndex, Equation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chimhd", version, about = "Two-phase inductionless MHD phase-field solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one case and write diagnostics.csv plus VTK snapshots.
    Run(Common),
    /// Run a convergence sweep and write rates.csv.
    Converge {
        #[arg(long, default_value = "time", value_parser = clap::value_parser!(SweepMode))]
        mode: SweepMode,
        #[command(flatten)]
        common: Common,
    },
    /// Forcing oracle, algebraic invariants and inf-sup estimates.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (key = value with [sections], or .json).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long, value_parser = parse_real)]
    tau: Option<f64>,
    /// Mesh width; fractions such as 1/64 are accepted.
    #[arg(long, value_parser = parse_real)]
    h: Option<f64>,
    /// Final time.
    #[arg(long = "T", value_parser = parse_real)]
    t_final: Option<f64>,
    /// Number of steps; sets T = steps * tau.
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory (CHIMHD_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(CouplingIndex))]
    coupling_index: Option<CouplingIndex>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write fields_XXXX.vtk every k steps (default: first and last only).
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long, hide = true, value_parser = clap::value_parser!(Equation))]
    corrupt_forcing: Option<Equation>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = self.case {
            cfg.case = v;
        }
        cfg.tau = self.tau.or(cfg.tau);
        cfg.h = self.h.or(cfg.h);
        cfg.t_final = self.t_final.or(cfg.t_final);
        cfg.steps = self.steps.or(cfg.steps);
        cfg.coupling = self.coupling_index.or(cfg.coupling);
        cfg.snapshot_every = self.snapshot_every.or(cfg.snapshot_every);
        cfg.corrupt = self.corrupt_forcing.or(cfg.corrupt);
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(dir) = std::env::var_os("CHIMHD_OUT").filter(|d| !d.is_empty()) {
            cfg.out = dir.into();
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let s = cmd_run(&cfg)?;
            println!("{}: {} steps, {} snapshots in {}", cfg.case, s.steps, s.snapshots, cfg.out.display());
            if let Some(log) = s.last {
                println!(
                    "t = {:.6}  energy = {:.6e}  mass = {:.6e}  div J = {:.2e}",
                    log.t, log.energy, log.mass, log.div_j
                );
            }
            if let Some(r) = s.errors {
                println!("errors: {}", chimhd_cli::commands::describe_errors(&r));
            }
            Ok(true)
        }
        Command::Converge { mode, common } => {
            let cfg = common.resolve()?;
            let (_, table) = cmd_converge(mode, &cfg)?;
            print!("{table}");
            println!("rates written to {}", cfg.out.join("rates.csv").display());
            Ok(true)
        }
        Command::Check(common) => {
            let cfg = common.resolve()?;
            let report = cmd_check(&cfg);
            print!("{}", report.render());
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("chimhd: check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("chimhd: {e}");
            ExitCode::FAILURE
        }
    }
}
