//! Monte Carlo trajectories of the dissipative eigensolver on pure states.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{measurement_circuit, noisy_term_step, Prim};
use crate::error::{DqeError, Result};
use crate::instrument::{PauliWeakMeasurement, Resampler};
use crate::linalg::{c, CMat, CVec, C64, ONE, ZERO};
use crate::pauli::{diagonalize, PauliHamiltonian, SpectralData};
use crate::stopping::{epsilon_at, Decision, EpsilonSchedule, StopMonitor, StoppingRule};

const TIE_SALT: u64 = 0x5eed_7135_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgspMode {
    /// One global instrument per sweep with E0 = (1-ε)1 + εK, K = (1 - H/κ)/2.
    LinearGlobal,
    /// Local weak measurements in term order, then reversed.
    ProductSweep,
    /// Uniformly random term per micro-step.
    MixtureRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplingMode {
    /// Fresh random basis state; the rest of the sweep is abandoned.
    Global,
    /// Reset the failing term's support qubits and continue the sweep.
    Local,
    Identity,
}

/// Per-gate depolarising rates for gate-level execution of local terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateNoise {
    pub p1: f64,
    pub p2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub agsp_mode: AgspMode,
    pub schedule: EpsilonSchedule,
    pub resampling: ResamplingMode,
    pub stopping: StoppingRule,
    pub seed: u64,
    pub max_steps: usize,
    #[serde(default)]
    pub record_series: bool,
    /// Micro-steps per sweep in mixture mode; 2m when absent.
    #[serde(default)]
    pub mixture_micro_steps: Option<usize>,
    #[serde(default)]
    pub gate_noise: Option<GateNoise>,
}

impl RunConfig {
    pub fn new(
        agsp_mode: AgspMode,
        schedule: EpsilonSchedule,
        resampling: ResamplingMode,
        stopping: StoppingRule,
        seed: u64,
    ) -> Self {
        RunConfig {
            agsp_mode,
            schedule,
            resampling,
            stopping,
            seed,
            max_steps: 1_000_000,
            record_series: false,
            mixture_micro_steps: None,
            gate_noise: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stopping.validate()?;
        if self.max_steps == 0 {
            return Err(DqeError::Parameter("max_steps must be ≥ 1".into()));
        }
        let e = self.schedule.base();
        if !(e > 0.0 && e <= 1.0) {
            return Err(DqeError::Parameter(format!("ε = {e} outside (0, 1]")));
        }
        if self.agsp_mode == AgspMode::LinearGlobal {
            if self.resampling == ResamplingMode::Local {
                return Err(DqeError::Parameter(
                    "local resampling needs local terms; linear-global has none".into(),
                ));
            }
            if self.gate_noise.is_some() {
                return Err(DqeError::Parameter(
                    "gate-level noise applies to local terms only".into(),
                ));
            }
        }
        if let Some(g) = self.gate_noise {
            if !(0.0..=1.0).contains(&g.p1) || !(0.0..=1.0).contains(&g.p2) {
                return Err(DqeError::InvalidNoise("gate rates must lie in [0, 1]".into()));
            }
        }
        if self.mixture_micro_steps == Some(0) {
            return Err(DqeError::Parameter("mixture_micro_steps must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Hamiltonian plus its exact spectrum, shared read-only by trajectories.
#[derive(Debug, Clone)]
pub struct System {
    pub h: PauliHamiltonian,
    pub spec: SpectralData,
}

impl System {
    pub fn new(h: PauliHamiltonian) -> Result<Self> {
        let spec = diagonalize(&h)?;
        Ok(System { h, spec })
    }

    pub fn num_qubits(&self) -> usize {
        self.h.num_qubits()
    }

    pub fn dimension(&self) -> usize {
        self.h.dimension()
    }

    pub fn measurement(&self, term: usize, eps: f64) -> PauliWeakMeasurement {
        let t = &self.h.terms()[term];
        PauliWeakMeasurement::new(
            t.string.clone(),
            t.sign(),
            t.coeff.abs() / self.h.kappa(),
            eps,
        )
    }

    /// Eigenvalues of K = (1 - H/κ)/2 in the order of `spec.eigenvalues`.
    pub fn linear_k_values(&self) -> Vec<f64> {
        let kappa = self.h.kappa();
        self.spec
            .eigenvalues
            .iter()
            .map(|l| 0.5 * (1.0 - l / kappa))
            .collect()
    }
}

/// Energy ⟨ψ|H|ψ⟩ and ground overlap ⟨ψ|Π0|ψ⟩.
pub fn measure_observables(psi: &CVec, h: &PauliHamiltonian, spec: &SpectralData) -> (f64, f64) {
    (h.energy(psi.as_slice()), spec.overlap(psi))
}

/// Trace forms for a density matrix.
pub fn measure_observables_mixed(rho: &CMat, h_dense: &CMat, pi0: &CMat) -> (f64, f64) {
    let tr = rho.trace().re;
    ((h_dense * rho).trace().re / tr, (pi0 * rho).trace().re / tr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Per-sweep outcome bits; only kept with `record_series`.
    pub outcomes: Vec<u8>,
    pub stop_step: usize,
    pub stopped_run_length: usize,
    pub final_energy: f64,
    pub final_overlap: f64,
    /// Per-sweep (energy, overlap) when requested.
    pub series: Option<Vec<(f64, f64)>>,
    pub truncated: bool,
    /// Local measurements performed (global instruments count once).
    pub measurements: u64,
}

/// Seeded streams for trajectory `index`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn run_trajectory(sys: &System, cfg: &RunConfig) -> Result<TrajectoryRecord> {
    run_trajectory_indexed(sys, cfg, 0)
}

struct Engine<'a> {
    sys: &'a System,
    cfg: &'a RunConfig,
    psi: Vec<C64>,
    scratch: Vec<C64>,
    out0: Vec<C64>,
    out1: Vec<C64>,
    linear_vals: Vec<f64>,
    circuits: Vec<Option<(f64, Vec<Prim>)>>,
    measurements: u64,
}

impl<'a> Engine<'a> {
    fn random_basis<R: Rng>(&mut self, rng: &mut R) {
        self.psi.iter_mut().for_each(|x| *x = ZERO);
        let d = self.psi.len();
        self.psi[rng.gen_range(0..d)] = ONE;
    }

    fn normalize_into_psi(&mut self, from_out0: bool, norm_sq: f64) {
        let s = 1.0 / norm_sq.sqrt();
        let src = if from_out0 { &self.out0 } else { &self.out1 };
        for (p, x) in self.psi.iter_mut().zip(src) {
            *p = x * s;
        }
    }

    /// One local weak measurement. Returns the outcome and whether the
    /// sweep must be abandoned.
    fn local_step<R: Rng>(&mut self, term: usize, eps: f64, rng: &mut R) -> Result<(u8, bool)> {
        self.measurements += 1;
        let n = self.sys.num_qubits();
        let w = self.sys.measurement(term, eps);
        let outcome = if let Some(noise) = self.cfg.gate_noise {
            let stale = !matches!(&self.circuits[term], Some((e, _)) if *e == eps);
            if stale {
                let t = &self.sys.h.terms()[term];
                let circ = measurement_circuit(t, w.weight, eps, Some(term))?;
                self.circuits[term] = Some((eps, circ.lower()));
            }
            let prims = &self.circuits[term].as_ref().expect("built above").1;
            let psi = CVec::from_column_slice(&self.psi);
            let (o, post) = noisy_term_step(prims, n + 1, &psi, noise.p1, noise.p2, rng);
            self.psi.copy_from_slice(post.as_slice());
            o
        } else {
            let (a0, b0) = w.e0_values();
            w.apply_diag(a0, b0, &self.psi, &mut self.scratch, &mut self.out0);
            let p0: f64 = self.out0.iter().map(|x| x.norm_sqr()).sum();
            if rng.gen::<f64>() < p0 {
                self.normalize_into_psi(true, p0);
                0
            } else {
                let (a1, b1) = w.e1_values();
                w.apply_diag(a1, b1, &self.psi, &mut self.scratch, &mut self.out1);
                let p1: f64 = self.out1.iter().map(|x| x.norm_sqr()).sum();
                if p1 > 1e-15 {
                    self.normalize_into_psi(false, p1);
                } else {
                    log::debug!("failure branch with probability {p1:e}; resampling input");
                }
                1
            }
        };
        if outcome == 0 {
            return Ok((0, false));
        }
        match self.cfg.resampling {
            ResamplingMode::Global => {
                self.random_basis(rng);
                Ok((1, true))
            }
            ResamplingMode::Local => {
                let r = Resampler::local(w.support.clone(), n);
                let psi = CVec::from_column_slice(&self.psi);
                let out = r.apply_pure(&psi, n, rng);
                self.psi.copy_from_slice(out.as_slice());
                Ok((1, false))
            }
            ResamplingMode::Identity => Ok((1, false)),
        }
    }

    fn linear_step<R: Rng>(&mut self, eps: f64, rng: &mut R) -> u8 {
        self.measurements += 1;
        let v = &self.sys.spec.eigenvectors;
        let psi = CVec::from_column_slice(&self.psi);
        let coeffs = v.ad_mul(&psi);
        let e0: Vec<f64> = self.linear_vals.iter().map(|k| 1.0 - eps + eps * k).collect();
        let succ = CVec::from_fn(coeffs.len(), |i, _| coeffs[i] * e0[i]);
        let p0 = succ.norm_squared();
        if rng.gen::<f64>() < p0 {
            let out = v * succ / c(p0.sqrt(), 0.0);
            self.psi.copy_from_slice(out.as_slice());
            return 0;
        }
        match self.cfg.resampling {
            ResamplingMode::Global => self.random_basis(rng),
            _ => {
                let fail =
                    CVec::from_fn(coeffs.len(), |i, _| coeffs[i] * (1.0 - e0[i] * e0[i]).max(0.0).sqrt());
                let p1 = fail.norm_squared();
                if p1 > 1e-15 {
                    let out = v * fail / c(p1.sqrt(), 0.0);
                    self.psi.copy_from_slice(out.as_slice());
                }
            }
        }
        1
    }

    fn sweep<R: Rng>(&mut self, eps: f64, rng: &mut R) -> Result<u8> {
        let m = self.sys.h.num_terms();
        match self.cfg.agsp_mode {
            AgspMode::LinearGlobal => Ok(self.linear_step(eps, rng)),
            AgspMode::ProductSweep => {
                let mut any = 0u8;
                for i in (0..m).chain((0..m).rev()) {
                    let (o, abort) = self.local_step(i, eps, rng)?;
                    any |= o;
                    if abort {
                        break;
                    }
                }
                Ok(any)
            }
            AgspMode::MixtureRandom => {
                let steps = self.cfg.mixture_micro_steps.unwrap_or(2 * m);
                let mut any = 0u8;
                for _ in 0..steps {
                    let i = rng.gen_range(0..m);
                    let (o, abort) = self.local_step(i, eps, rng)?;
                    any |= o;
                    if abort {
                        break;
                    }
                }
                Ok(any)
            }
        }
    }

    fn observables(&self) -> (f64, f64) {
        let psi = CVec::from_column_slice(&self.psi);
        measure_observables(&psi, &self.sys.h, &self.sys.spec)
    }
}

/// Trajectory `index` of the ensemble seeded by `cfg.seed`; starts from a
/// uniformly random basis state (the pure unravelling of 1/D).
pub fn run_trajectory_indexed(sys: &System, cfg: &RunConfig, index: u64) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let d = sys.dimension();
    let mut rng = trajectory_rng(cfg.seed, index);
    let mut monitor = StopMonitor::new(cfg.stopping, cfg.seed ^ TIE_SALT, index);
    let mut eng = Engine {
        sys,
        cfg,
        psi: vec![ZERO; d],
        scratch: vec![ZERO; d],
        out0: vec![ZERO; d],
        out1: vec![ZERO; d],
        linear_vals: if cfg.agsp_mode == AgspMode::LinearGlobal {
            sys.linear_k_values()
        } else {
            vec![]
        },
        circuits: vec![None; sys.h.num_terms()],
        measurements: 0,
    };
    eng.random_basis(&mut rng);

    let mut outcomes = Vec::new();
    let mut series = cfg.record_series.then(Vec::new);
    let mut best_len = 0usize;
    let mut best_state: Option<Vec<C64>> = None;
    let mut truncated = false;
    loop {
        let t = monitor.history.step + 1;
        let eps = epsilon_at(&cfg.schedule, t, monitor.history.last_one_step)?;
        let o = eng.sweep(eps, &mut rng)?;
        if let Some(s) = series.as_mut() {
            outcomes.push(o);
            s.push(eng.observables());
        }
        let decision = monitor.observe(o);
        if monitor.history.current_run > best_len {
            best_len = monitor.history.current_run;
            best_state = Some(eng.psi.clone());
        }
        match decision {
            Decision::Stop => break,
            Decision::Truncate => {
                truncated = true;
                break;
            }
            Decision::Continue if monitor.history.step >= cfg.max_steps => {
                truncated = true;
                break;
            }
            Decision::Continue => {}
        }
    }
    let stop_step = monitor.history.step;
    let (stopped_run_length, (final_energy, final_overlap)) = if truncated {
        if let Some(state) = best_state {
            eng.psi = state;
        }
        (best_len, eng.observables())
    } else {
        (monitor.history.current_run, eng.observables())
    };
    Ok(TrajectoryRecord {
        outcomes,
        stop_step,
        stopped_run_length,
        final_energy,
        final_overlap,
        series,
        truncated,
        measurements: eng.measurements,
    })
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }
}

/// Mean and standard error from the unbiased sample variance.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = Kahan::default();
    xs.iter().for_each(|&x| s.add(x));
    let mean = s.sum() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut v = Kahan::default();
    xs.iter().for_each(|&x| v.add((x - mean) * (x - mean)));
    let var = v.sum() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub num_trajectories: usize,
    pub mean_overlap: f64,
    pub stderr_overlap: f64,
    pub mean_energy: f64,
    pub stderr_energy: f64,
    pub mean_stop_step: f64,
    pub stderr_stop_step: f64,
    pub truncated: usize,
    pub run_length_histogram: BTreeMap<usize, usize>,
}

impl EnsembleStats {
    pub fn from_records(records: &[TrajectoryRecord]) -> Self {
        let col = |f: fn(&TrajectoryRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let (mo, so) = mean_stderr(&col(|r| r.final_overlap));
        let (me, se) = mean_stderr(&col(|r| r.final_energy));
        let (mt, st) = mean_stderr(&col(|r| r.stop_step as f64));
        let mut hist = BTreeMap::new();
        for r in records {
            *hist.entry(r.stopped_run_length).or_insert(0) += 1;
        }
        EnsembleStats {
            num_trajectories: records.len(),
            mean_overlap: mo,
            stderr_overlap: so,
            mean_energy: me,
            stderr_energy: se,
            mean_stop_step: mt,
            stderr_stop_step: st,
            truncated: records.iter().filter(|r| r.truncated).count(),
            run_length_histogram: hist,
        }
    }
}

/// Runs trajectories `0..count` in parallel; results are in index order and
/// independent of `threads`.
pub fn run_ensemble(
    sys: &System,
    cfg: &RunConfig,
    count: usize,
    threads: Option<usize>,
) -> Result<(Vec<TrajectoryRecord>, EnsembleStats)> {
    if count == 0 {
        return Err(DqeError::Parameter("ensemble needs at least one trajectory".into()));
    }
    cfg.validate()?;
    let work = || -> Result<Vec<TrajectoryRecord>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| run_trajectory_indexed(sys, cfg, i))
            .collect()
    };
    let records = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| DqeError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let stats = EnsembleStats::from_records(&records);
    Ok((records, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expect, random_state};
    use crate::pauli::{build_heisenberg_chain, PauliString, PauliTerm};
    use crate::stopping::StoppingKind;

    fn z_system() -> System {
        let t = PauliTerm::new(1.0, "Z".parse::<PauliString>().unwrap()).unwrap();
        System::new(PauliHamiltonian::from_terms(1, vec![t]).unwrap()).unwrap()
    }

    fn cfg(mode: AgspMode, eps: f64, n: usize, seed: u64) -> RunConfig {
        RunConfig::new(
            mode,
            EpsilonSchedule::Constant(eps),
            ResamplingMode::Global,
            StoppingRule::new(StoppingKind::FirstRunOfZeros(n)),
            seed,
        )
    }

    #[test]
    fn projective_z_reaches_ground_state() {
        let sys = z_system();
        for seed in 0..20 {
            let r = run_trajectory(&sys, &cfg(AgspMode::ProductSweep, 1.0, 1, seed)).unwrap();
            assert!((r.final_overlap - 1.0).abs() < 1e-12);
            assert!((r.final_energy + 1.0).abs() < 1e-12);
            assert!(r.stop_step <= 20);
            assert!(!r.truncated);
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let sys = System::new(build_heisenberg_chain(3, false).unwrap()).unwrap();
        let mut c = cfg(AgspMode::ProductSweep, 0.1, 3, 99);
        c.record_series = true;
        let a = run_trajectory_indexed(&sys, &c, 5).unwrap();
        let b = run_trajectory_indexed(&sys, &c, 5).unwrap();
        assert_eq!(a, b);
        let (_, s1) = run_ensemble(&sys, &c, 40, Some(1)).unwrap();
        let (_, s4) = run_ensemble(&sys, &c, 40, Some(4)).unwrap();
        assert_eq!(s1, s4);
    }

    #[test]
    fn single_trajectory_stats() {
        let sys = System::new(build_heisenberg_chain(2, false).unwrap()).unwrap();
        let c = cfg(AgspMode::MixtureRandom, 0.2, 2, 3);
        let (recs, st) = run_ensemble(&sys, &c, 1, None).unwrap();
        assert_eq!(st.mean_overlap, recs[0].final_overlap);
        assert_eq!(st.stderr_overlap, 0.0);
        assert_eq!(st.mean_stop_step, recs[0].stop_step as f64);
    }

    #[test]
    fn observables_known_states() {
        let sys = System::new(build_heisenberg_chain(3, false).unwrap()).unwrap();
        let g = sys.spec.ground_state();
        let (e, o) = measure_observables(&g, &sys.h, &sys.spec);
        assert!((e - sys.spec.lambda0).abs() < 1e-10 && (o - 1.0).abs() < 1e-10);
        let hd = sys.h.to_dense().unwrap();
        let d = sys.dimension();
        let mixed = crate::linalg::identity(d).scale(1.0 / d as f64);
        let (e, o) = measure_observables_mixed(&mixed, &hd, &sys.spec.ground_projector);
        assert!((e - hd.trace().re / d as f64).abs() < 1e-12);
        assert!((o - sys.spec.degeneracy as f64 / d as f64).abs() < 1e-12);
        let mut rng = trajectory_rng(1, 0);
        let psi = random_state(d, &mut rng);
        let (e, o) = measure_observables(&psi, &sys.h, &sys.spec);
        assert!((e - expect(&hd, &psi)).abs() < 1e-12);
        assert!((o - expect(&sys.spec.ground_projector, &psi)).abs() < 1e-12);
    }

    #[test]
    fn truncation_reports_longest_run() {
        let sys = System::new(build_heisenberg_chain(2, false).unwrap()).unwrap();
        let mut c = cfg(AgspMode::ProductSweep, 0.3, 10_000, 8);
        c.stopping = StoppingRule::new(StoppingKind::TimeCap(60));
        c.record_series = true;
        let r = run_trajectory(&sys, &c).unwrap();
        assert!(r.truncated);
        assert_eq!(r.stop_step, 60);
        let mut longest = 0;
        let mut cur = 0;
        for &o in &r.outcomes {
            cur = if o == 0 { cur + 1 } else { 0 };
            longest = longest.max(cur);
        }
        assert_eq!(r.stopped_run_length, longest);
    }

    #[test]
    fn rejects_bad_configs() {
        let sys = z_system();
        let mut c = cfg(AgspMode::LinearGlobal, 0.5, 2, 0);
        c.resampling = ResamplingMode::Local;
        assert!(run_trajectory(&sys, &c).is_err());
        let c = cfg(AgspMode::ProductSweep, 0.0, 2, 0);
        assert!(run_trajectory(&sys, &c).is_err());
        let mut c = cfg(AgspMode::ProductSweep, 0.5, 2, 0);
        c.max_steps = 0;
        assert!(run_trajectory(&sys, &c).is_err());
    }

    #[test]
    fn gate_noise_zero_matches_distribution() {
        // identical statistics, different random consumption
        let sys = System::new(build_heisenberg_chain(2, false).unwrap()).unwrap();
        let clean = cfg(AgspMode::ProductSweep, 0.2, 3, 12);
        let mut gate = clean.clone();
        gate.gate_noise = Some(GateNoise { p1: 0.0, p2: 0.0 });
        let (_, a) = run_ensemble(&sys, &clean, 3000, None).unwrap();
        let (_, b) = run_ensemble(&sys, &gate, 3000, None).unwrap();
        let z = (a.mean_overlap - b.mean_overlap)
            / (a.stderr_overlap.powi(2) + b.stderr_overlap.powi(2)).sqrt();
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn kahan_and_stderr() {
        let mut k = Kahan::default();
        for _ in 0..10 {
            k.add(0.1);
        }
        assert_eq!(k.sum(), 1.0);
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
