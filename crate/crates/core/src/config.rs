//! JSON experiment configuration, command-line overrides and config hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DqeError, Result};
use crate::pauli::{build_heisenberg_chain, build_maxsat, Clause, PauliHamiltonian};
use crate::stopping::{suggest_epsilon, EpsilonSchedule, StoppingRule};
use crate::trajectory::{AgspMode, GateNoise, ResamplingMode, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "builder", deny_unknown_fields)]
pub enum SystemSpec {
    Heisenberg {
        n: usize,
        #[serde(default)]
        periodic: bool,
    },
    Maxsat {
        num_vars: usize,
        clauses: Vec<Clause>,
    },
    /// Hamiltonian JSON file (`num_qubits`, `terms: [{coeff, paulis}]`).
    File { path: PathBuf },
}

impl SystemSpec {
    pub fn build(&self) -> Result<PauliHamiltonian> {
        match self {
            SystemSpec::Heisenberg { n, periodic } => build_heisenberg_chain(*n, *periodic),
            SystemSpec::Maxsat { num_vars, clauses } => build_maxsat(*num_vars, clauses),
            SystemSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    DqeError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                PauliHamiltonian::from_json_str(&text)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SystemSpec::Heisenberg { n, periodic } => {
                format!("heisenberg-{n}{}", if *periodic { "-periodic" } else { "" })
            }
            SystemSpec::Maxsat { num_vars, .. } => format!("maxsat-{num_vars}"),
            SystemSpec::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }
}

/// AGSP family; the first three also name a trajectory mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AgspKind {
    Linear,
    Product,
    Mixture,
    Chebyshev,
}

impl AgspKind {
    pub fn mode(self) -> Result<AgspMode> {
        match self {
            AgspKind::Linear => Ok(AgspMode::LinearGlobal),
            AgspKind::Product => Ok(AgspMode::ProductSweep),
            AgspKind::Mixture => Ok(AgspMode::MixtureRandom),
            AgspKind::Chebyshev => Err(DqeError::Config(
                "chebyshev has no measurement sweep; use linear, product or mixture".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    Decaying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweepConfig {
    /// Per-gate depolarising rates.
    pub rates: Vec<f64>,
    pub runtimes: Vec<usize>,
    #[serde(default)]
    pub measure_delta: bool,
}

impl Default for NoiseSweepConfig {
    fn default() -> Self {
        NoiseSweepConfig {
            rates: vec![1e-4],
            runtimes: vec![100, 400],
            measure_delta: false,
        }
    }
}

fn default_agsp() -> AgspKind {
    AgspKind::Product
}
fn default_resampling() -> ResamplingMode {
    ResamplingMode::Global
}
fn default_stopping() -> String {
    "run-of-zeros:4".into()
}
fn default_trajectories() -> usize {
    1000
}
fn default_max_steps() -> usize {
    1_000_000
}
fn default_stop_lengths() -> Vec<usize> {
    vec![1, 2, 4, 8]
}
fn default_max_size() -> usize {
    5
}
fn default_degree() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default = "default_agsp")]
    pub agsp: AgspKind,
    /// Measurement strength; 1/(4m + 4) when absent.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_resampling")]
    pub resampling: ResamplingMode,
    /// `run-of-zeros:n`, `secretary:t`, `expected-rank:t` or `time-cap:t`,
    /// optionally followed by `,cap:T`.
    #[serde(default = "default_stopping")]
    pub stopping: String,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub mixture_micro_steps: Option<usize>,
    #[serde(default)]
    pub gate_noise: Option<GateNoise>,
    #[serde(default = "default_degree")]
    pub chebyshev_degree: usize,
    /// Stop-run lengths for `analytics`.
    #[serde(default = "default_stop_lengths")]
    pub stop_lengths: Vec<usize>,
    /// Largest chain for `compare-resampling`.
    #[serde(default = "default_max_size")]
    pub max_size: usize,
    #[serde(default)]
    pub noise_sweep: NoiseSweepConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(system: SystemSpec) -> Self {
        ExperimentConfig {
            system,
            agsp: default_agsp(),
            eps: None,
            schedule: ScheduleKind::Constant,
            resampling: default_resampling(),
            stopping: default_stopping(),
            trajectories: default_trajectories(),
            seed: 0,
            max_steps: default_max_steps(),
            mixture_micro_steps: None,
            gate_noise: None,
            chebyshev_degree: default_degree(),
            stop_lengths: default_stop_lengths(),
            max_size: default_max_size(),
            noise_sweep: NoiseSweepConfig::default(),
            output: None,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| {
            DqeError::Config(format!("config line {} column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DqeError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.eps {
            if !(e > 0.0 && e <= 1.0) {
                return Err(DqeError::Config(format!("eps: {e} outside (0, 1]")));
            }
        }
        if self.trajectories == 0 {
            return Err(DqeError::Config("trajectories: must be ≥ 1".into()));
        }
        if self.max_steps == 0 {
            return Err(DqeError::Config("max_steps: must be ≥ 1".into()));
        }
        if self.stop_lengths.iter().any(|&n| n == 0) {
            return Err(DqeError::Config("stop_lengths: entries must be ≥ 1".into()));
        }
        self.stopping_rule()
            .map_err(|e| DqeError::Config(format!("stopping: {e}")))?;
        Ok(())
    }

    pub fn stopping_rule(&self) -> Result<StoppingRule> {
        self.stopping.parse()
    }

    pub fn eps_for(&self, h: &PauliHamiltonian) -> f64 {
        self.eps.unwrap_or_else(|| suggest_epsilon(h))
    }

    pub fn run_config(&self, h: &PauliHamiltonian) -> Result<RunConfig> {
        let eps = self.eps_for(h);
        let schedule = match self.schedule {
            ScheduleKind::Constant => EpsilonSchedule::Constant(eps),
            ScheduleKind::Decaying => EpsilonSchedule::Decaying(eps),
        };
        let mut cfg = RunConfig::new(
            self.agsp.mode()?,
            schedule,
            self.resampling,
            self.stopping_rule()?,
            self.seed,
        );
        cfg.max_steps = self.max_steps;
        cfg.mixture_micro_steps = self.mixture_micro_steps;
        cfg.gate_noise = self.gate_noise;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON; field order is fixed by the struct definition.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON, hex encoded. The output path is
    /// excluded so the same experiment hashes equally wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let digest = Sha256::digest(c.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Flag values that replace the corresponding config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub heisenberg: Option<usize>,
    pub periodic: bool,
    pub hamiltonian: Option<PathBuf>,
    pub agsp: Option<AgspKind>,
    pub eps: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub resampling: Option<ResamplingMode>,
    pub stopping: Option<String>,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, base: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
        let system = match (&self.hamiltonian, self.heisenberg) {
            (Some(_), Some(_)) => {
                return Err(DqeError::Config(
                    "--hamiltonian and --heisenberg are mutually exclusive".into(),
                ))
            }
            (Some(p), None) => Some(SystemSpec::File { path: p.clone() }),
            (None, Some(n)) => Some(SystemSpec::Heisenberg {
                n,
                periodic: self.periodic,
            }),
            (None, None) => None,
        };
        let mut cfg = match (base, system) {
            (Some(mut c), s) => {
                if let Some(s) = s {
                    c.system = s;
                }
                c
            }
            (None, Some(s)) => ExperimentConfig::new(s),
            (None, None) => {
                return Err(DqeError::Config(
                    "no system given; pass --config, --heisenberg or --hamiltonian".into(),
                ))
            }
        };
        if let Some(a) = self.agsp {
            cfg.agsp = a;
        }
        if self.eps.is_some() {
            cfg.eps = self.eps;
        }
        if let Some(s) = self.schedule {
            cfg.schedule = s;
        }
        if let Some(r) = self.resampling {
            cfg.resampling = r;
        }
        if let Some(s) = &self.stopping {
            cfg.stopping = s.clone();
        }
        if let Some(t) = self.trajectories {
            cfg.trajectories = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_steps {
            cfg.max_steps = m;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
