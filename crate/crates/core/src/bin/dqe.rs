use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dqe_core::config::{AgspKind, ExperimentConfig, Overrides, ScheduleKind};
use dqe_core::experiments::{self, CircuitSelection, Options, Report};
use dqe_core::trajectory::ResamplingMode;
use dqe_core::{DqeError, Result};

#[derive(Parser)]
#[command(name = "dqe", version, about = "Dissipative quantum eigensolver simulator")]
struct Cli {
    /// Worker threads for ensembles (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print λ0, λ1, gap, degeneracy, D, κ and the suggested ε.
    Spectrum(Common),
    /// One trajectory with its per-sweep energy and overlap series.
    Run(Common),
    /// Many trajectories; per-trajectory CSV plus a summary against exact values.
    Ensemble(Common),
    /// Exact overlap and E(τ) per resampler and stop length.
    Analytics(Common),
    /// Fixed point of the resampling channel.
    FixedPoint(Common),
    /// Exact E(τ) for global and local resampling over chain sizes.
    CompareResampling(Common),
    /// Run-time caps under gate-level depolarising noise.
    NoiseSweep(Common),
    /// Export the measurement circuit as OpenQASM 2.
    Circuit {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "full_sweep", required_unless_present = "full_sweep")]
        term_index: Option<usize>,
        #[arg(long)]
        full_sweep: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Open Heisenberg chain of this many qubits.
    #[arg(long)]
    heisenberg: Option<usize>,
    #[arg(long, requires = "heisenberg")]
    periodic: bool,
    /// Hamiltonian JSON file.
    #[arg(long)]
    hamiltonian: Option<PathBuf>,
    #[arg(long, value_enum)]
    agsp: Option<AgspKind>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleKind>,
    /// global, local or identity.
    #[arg(long, value_parser = parse_resampling)]
    resampling: Option<ResamplingMode>,
    /// e.g. run-of-zeros:4, secretary:1000, expected-rank:50,cap:2000
    #[arg(long)]
    stopping: Option<String>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_resampling(s: &str) -> std::result::Result<ResamplingMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown resampling mode {s:?} (global, local, identity)"))
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = self
            .config
            .as_deref()
            .map(ExperimentConfig::from_file)
            .transpose()?;
        Overrides {
            heisenberg: self.heisenberg,
            periodic: self.periodic,
            hamiltonian: self.hamiltonian.clone(),
            agsp: self.agsp,
            eps: self.eps,
            schedule: self.schedule,
            resampling: self.resampling,
            stopping: self.stopping.clone(),
            trajectories: self.trajectories,
            seed: self.seed,
            max_steps: self.max_steps,
            output: self.output.clone(),
        }
        .apply(base)
    }
}

fn emit(cfg: &ExperimentConfig, report: Report) -> Result<()> {
    match (&report.body, &cfg.output) {
        (Some(body), Some(path)) => {
            std::fs::write(path, body)?;
            print!("{}", report.summary);
            log::info!("wrote {}", path.display());
        }
        (Some(body), None) => {
            print!("{body}");
            eprint!("{}", report.summary);
        }
        (None, _) => print!("{}", report.summary),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(DqeError::Config("--threads must be ≥ 1".into()));
    }
    let opts = Options {
        threads: cli.threads,
    };
    let (common, action): (&Common, Box<dyn Fn(&ExperimentConfig) -> Result<Report>>) =
        match &cli.command {
            Command::Spectrum(c) => (c, Box::new(experiments::cmd_spectrum)),
            Command::Run(c) => (c, Box::new(experiments::cmd_run)),
            Command::Ensemble(c) => (c, Box::new(move |cfg| experiments::cmd_ensemble(cfg, opts))),
            Command::Analytics(c) => (c, Box::new(experiments::cmd_analytics)),
            Command::FixedPoint(c) => (c, Box::new(experiments::cmd_fixed_point)),
            Command::CompareResampling(c) => (c, Box::new(experiments::cmd_compare_resampling)),
            Command::NoiseSweep(c) => {
                (c, Box::new(move |cfg| experiments::cmd_noise_sweep(cfg, opts)))
            }
            Command::Circuit {
                common,
                term_index,
                full_sweep,
            } => {
                let term = *term_index;
                let full = *full_sweep;
                (
                    common,
                    Box::new(move |cfg| {
                        let which = match (term, full) {
                            (Some(i), false) => CircuitSelection::Term(i),
                            _ => CircuitSelection::FullSweep,
                        };
                        experiments::cmd_circuit(cfg, which)
                    }),
                )
            }
        };
    let cfg = common.resolve()?;
    log::info!("config hash {}", cfg.hash());
    let report = action(&cfg)?;
    emit(&cfg, report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
