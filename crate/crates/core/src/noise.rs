//! Fault injection and the fault-resilience checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agsp::{agsp_product, verify_agsp, AgspParams};
use crate::analytics::Bound;
use crate::circuits::{noisy_term_channel, term_circuits, Circuit};
use crate::error::{DqeError, Result};
use crate::instrument::{local_depolarize, transfer_of_kraus, Instrument, TransferMatrix};
use crate::linalg::{random_isometry, CMat};
use crate::pauli::check_transfer;
use crate::stopping::{EpsilonSchedule, StoppingKind, StoppingRule};
use crate::trajectory::{run_ensemble, AgspMode, GateNoise, ResamplingMode, RunConfig, System};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseModel {
    DepolarizingPerGate { p1: f64, p2: f64 },
    /// Mix each branch with a random channel applied after it; `delta` is
    /// a 1-norm budget on each branch.
    ChannelPerturbation { delta: f64, seed: u64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseModel::DepolarizingPerGate { p1, p2 } => {
                (0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2)
            }
            NoiseModel::ChannelPerturbation { delta, .. } => delta >= 0.0 && delta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(DqeError::InvalidNoise(format!("{self:?} out of range")))
        }
    }
}

/// Faulty instrument in transfer form.
#[derive(Debug, Clone)]
pub struct NoisyInstrument {
    pub e0: TransferMatrix,
    pub e1: TransferMatrix,
    /// ‖E0' − E0‖ in transfer (operator 2-) norm.
    pub delta_transfer: f64,
}

impl NoisyInstrument {
    pub fn channel(&self) -> TransferMatrix {
        self.e0.add(&self.e1)
    }
}

/// Faulty version of `inst`. Gate-level noise needs the term's circuit.
pub fn perturb_instrument(
    inst: &Instrument,
    model: &NoiseModel,
    circuit: Option<&Circuit>,
) -> Result<NoisyInstrument> {
    model.validate()?;
    let n = inst.num_qubits;
    check_transfer(n, "noisy instrument")?;
    let e0 = inst.success_transfer()?;
    let e1 = inst.failure_transfer()?;
    let (p0, p1) = match *model {
        NoiseModel::DepolarizingPerGate { p1, p2 } => {
            let circ = circuit.ok_or_else(|| {
                DqeError::InvalidNoise("gate-level noise needs the measurement circuit".into())
            })?;
            let (b0, b1) = noisy_term_channel(&circ.lower(), circ.num_qubits, p1, p2);
            let r = inst.resampler.transfer(n)?;
            (TransferMatrix::new(b0), r.compose(&TransferMatrix::new(b1)))
        }
        NoiseModel::ChannelPerturbation { delta, seed } => {
            if delta == 0.0 {
                (e0.clone(), e1.clone())
            } else {
                let d = inst.dim();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = random_isometry(2 * d, d, &mut rng);
                let kraus: Vec<CMat> = (0..2).map(|k| v.rows(k * d, d).into_owned()).collect();
                let a = transfer_of_kraus(&kraus)?;
                let dir0 = a.compose(&e0).sub(&e0);
                let dir1 = a.compose(&e1).sub(&e1);
                // ‖Φ‖_{1→1} ≤ √D ‖Φ‖_{2→2}
                let target = delta / (d as f64).sqrt();
                let t = target / dir0.norm().max(dir1.norm());
                if t > 1.0 {
                    return Err(DqeError::InvalidNoise(format!(
                        "δ = {delta} exceeds what mixing with a channel can realise"
                    )));
                }
                (
                    TransferMatrix::new(&e0.matrix + dir0.matrix.scale(t)),
                    TransferMatrix::new(&e1.matrix + dir1.matrix.scale(t)),
                )
            }
        }
    };
    let out = NoisyInstrument {
        delta_transfer: p0.sub(&e0).norm(),
        e0: p0,
        e1: p1,
    };
    let defect = out.channel().tp_defect();
    if defect > 1e-8 {
        return Err(DqeError::InvalidNoise(format!(
            "perturbed instrument is not trace preserving (defect {defect:e})"
        )));
    }
    Ok(out)
}

/// Largest δ the asymptotic bound tolerates: √Γ(√Γ−√Δ)/2.
pub fn resilience_threshold(p: &AgspParams) -> f64 {
    p.sqrt_gamma * (p.sqrt_gamma - p.sqrt_delta) / 2.0
}

/// 1 − ε − 2δ/(√Γ(√Γ−√Δ) − 2δ), the n → ∞ overlap bound under faults.
pub fn resilience_bound_asymptotic(p: &AgspParams, delta: f64) -> Bound {
    let threshold = resilience_threshold(p);
    if delta >= threshold {
        return Bound {
            value: 0.0,
            vacuous: true,
        };
    }
    Bound {
        value: (1.0 - p.epsilon - delta / (threshold - delta)).clamp(0.0, 1.0),
        vacuous: false,
    }
}

/// 1 − ((1−Γ)/(1−Δ) + δ)(D/N − 1) − ε − δ.
pub fn fixed_point_resilience_bound(p: &AgspParams, delta: f64, d: usize, nn: usize) -> f64 {
    let r = if p.delta() < 1.0 {
        (1.0 - p.gamma()) / (1.0 - p.delta())
    } else {
        f64::INFINITY
    };
    1.0 - (r + delta) * (d as f64 / nn as f64 - 1.0) - p.epsilon - delta
}

/// Unitary gates touching each qubit during one product sweep.
pub fn gates_per_qubit_per_sweep(sys: &System, eps: f64) -> Result<Vec<usize>> {
    let n = sys.num_qubits();
    let mut counts = vec![0usize; n];
    for circ in term_circuits(&sys.h, eps)? {
        // each term circuit runs twice per sweep (forward, then reversed)
        for p in circ.lower().iter().filter(|p| p.is_unitary()) {
            for q in p.qubits() {
                if q < n {
                    counts[q] += 2;
                }
            }
        }
    }
    Ok(counts)
}

/// Ground overlap after `sweeps` sweeps' worth of idle depolarising noise,
/// starting from Π0/N.
pub fn free_decay_overlap(sys: &System, p: f64, gates_per_qubit: &[usize], sweeps: usize) -> f64 {
    let n = sys.num_qubits();
    let pi0 = &sys.spec.ground_projector;
    let mut rho = pi0.scale(1.0 / sys.spec.degeneracy as f64);
    for (q, &g) in gates_per_qubit.iter().enumerate() {
        let r = 1.0 - (1.0 - p).powf((g * sweeps) as f64);
        if r > 0.0 {
            rho = rho.scale(1.0 - r) + local_depolarize(&rho, &[q], n).scale(r);
        }
    }
    (pi0 * rho).trace().re
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResiliencePoint {
    pub runtime_cap: usize,
    pub mean_overlap: f64,
    pub stderr: f64,
    pub mean_stop_step: f64,
    pub free_decay_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub noise: GateNoise,
    pub eps: f64,
    /// Sum over the sweep of per-term ‖E0' − E0‖ (transfer norm).
    pub delta_measured: Option<f64>,
    pub params: AgspParams,
    pub asymptotic_bound: f64,
    pub bound_vacuous: bool,
    pub points: Vec<ResiliencePoint>,
    pub spread: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct ResilienceSettings {
    pub eps: f64,
    pub noise: GateNoise,
    pub runtimes: Vec<usize>,
    pub trajectories: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub measure_delta: bool,
}

/// Per-term transfer-norm distance of the gate-level noisy success branch.
pub fn term_deltas(sys: &System, eps: f64, noise: GateNoise) -> Result<Vec<f64>> {
    check_transfer(sys.num_qubits(), "per-term noise tomography")?;
    let circuits = term_circuits(&sys.h, eps)?;
    circuits
        .par_iter()
        .enumerate()
        .map(|(i, circ)| {
            let w = sys.measurement(i, eps);
            let clean = transfer_of_kraus(&[w.e0_dense()?])?;
            let (b0, _) = noisy_term_channel(&circ.lower(), circ.num_qubits, noise.p1, noise.p2);
            Ok(TransferMatrix::new(b0).sub(&clean).norm())
        })
        .collect()
}

/// Secretary-stopped product sweeps with gate-level noise at each
/// run-time cap, alongside the free-decay baseline.
pub fn run_resilience_experiment(sys: &System, s: &ResilienceSettings) -> Result<ResilienceReport> {
    if s.runtimes.is_empty() {
        return Err(DqeError::Parameter("no run-time caps given".into()));
    }
    let agsp = agsp_product(&sys.h, &sys.spec, s.eps)?;
    let params = verify_agsp(&agsp.operator, &sys.spec.ground_projector, sys.spec.degeneracy).params;
    let delta_measured = if s.measure_delta {
        Some(2.0 * term_deltas(sys, s.eps, s.noise)?.iter().sum::<f64>())
    } else {
        None
    };
    let bound = resilience_bound_asymptotic(&params, delta_measured.unwrap_or(0.0));
    let gates = gates_per_qubit_per_sweep(sys, s.eps)?;
    let mut points = Vec::new();
    for &cap in &s.runtimes {
        let mut cfg = RunConfig::new(
            AgspMode::ProductSweep,
            EpsilonSchedule::Constant(s.eps),
            ResamplingMode::Global,
            StoppingRule::new(StoppingKind::Secretary(cap)),
            s.seed,
        );
        cfg.max_steps = cap;
        cfg.gate_noise = Some(s.noise);
        let (_, st) = run_ensemble(sys, &cfg, s.trajectories, s.threads)?;
        points.push(ResiliencePoint {
            runtime_cap: cap,
            mean_overlap: st.mean_overlap,
            stderr: st.stderr_overlap,
            mean_stop_step: st.mean_stop_step,
            free_decay_overlap: free_decay_overlap(sys, s.noise.p1.max(s.noise.p2), &gates, cap),
        });
    }
    let (lo, hi) = points
        .iter()
        .enumerate()
        .fold((0, 0), |(lo, hi), (i, p)| {
            (
                if p.mean_overlap < points[lo].mean_overlap { i } else { lo },
                if p.mean_overlap > points[hi].mean_overlap { i } else { hi },
            )
        });
    let spread = points[hi].mean_overlap - points[lo].mean_overlap;
    let sigma = (points[hi].stderr.powi(2) + points[lo].stderr.powi(2)).sqrt();
    Ok(ResilienceReport {
        noise: s.noise,
        eps: s.eps,
        delta_measured,
        params,
        asymptotic_bound: bound.value,
        bound_vacuous: bound.vacuous,
        points,
        spread,
        tolerance: (3.0 * sigma).max(0.01),
    })
}
