//! C interface to `dqe-core`.
//!
//! Objects cross the boundary as opaque pointers created by `*_new`/builder
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`DqeStatus`]; on failure `dqe_last_error_message` describes the
//! error for the calling thread until that thread's next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dqe_core::analytics::{maximally_mixed, overlap_with, sweep_instrument, GeneralAnalytics};
use dqe_core::circuits::{export_qasm, measurement_circuit, schedule_sweep, sweep_circuit};
use dqe_core::pauli::{build_heisenberg_chain, PauliHamiltonian};
use dqe_core::stopping::{EpsilonSchedule, StoppingKind, StoppingRule};
use dqe_core::trajectory::{
    run_ensemble, run_trajectory_indexed, AgspMode, ResamplingMode, RunConfig, System,
};
use dqe_core::DqeError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ResourceLimit = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqeAgspMode {
    LinearGlobal = 0,
    ProductSweep = 1,
    MixtureRandom = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqeResampling {
    Global = 0,
    Local = 1,
    Identity = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DqeTrajectorySummary {
    pub stop_step: u64,
    pub stopped_run_length: u64,
    pub final_energy: f64,
    pub final_overlap: f64,
    pub truncated: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DqeEnsembleSummary {
    pub num_trajectories: u64,
    pub mean_overlap: f64,
    pub stderr_overlap: f64,
    pub mean_energy: f64,
    pub stderr_energy: f64,
    pub mean_stop_step: f64,
    pub stderr_stop_step: f64,
    pub truncated: u64,
}

/// Hamiltonian with its exact spectrum.
pub struct DqeSystem(System);

/// Trajectory settings.
pub struct DqeRunConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &DqeError) -> DqeStatus {
    match e.exit_code() {
        3 => DqeStatus::ResourceLimit,
        4 => DqeStatus::Numerical,
        _ => DqeStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DqeStatus, String)>) -> DqeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DqeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DqeStatus::Panic
        }
    }
}

fn core<T>(r: dqe_core::Result<T>) -> Result<T, (DqeStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (DqeStatus, String) {
    (DqeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DqeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DqeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (DqeStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (DqeStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dqe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failure; empty when none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dqe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn finish_system(h: dqe_core::Result<PauliHamiltonian>, out: &mut *mut DqeSystem) -> Result<(), (DqeStatus, String)> {
    let sys = core(h.and_then(System::new))?;
    *out = Box::into_raw(Box::new(DqeSystem(sys)));
    Ok(())
}

/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn dqe_system_heisenberg(
    n: usize,
    periodic: bool,
    out: *mut *mut DqeSystem,
) -> DqeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        finish_system(build_heisenberg_chain(n, periodic), out)
    })
}

/// Builds a system from Hamiltonian JSON (`num_qubits`, `terms`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_system_from_json(
    json: *const c_char,
    out: *mut *mut DqeSystem,
) -> DqeStatus {
    guard(|| {
        let text = cstr(json, "json")?;
        let out = out_ptr(out, "out")?;
        finish_system(PauliHamiltonian::from_json_str(text), out)
    })
}

/// # Safety
/// `sys` must come from a `dqe_system_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dqe_system_free(sys: *mut DqeSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// # Safety
/// `sys` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dqe_system_num_qubits(sys: *const DqeSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.num_qubits())
}

/// Ground energy λ0 and ground-space degeneracy N.
///
/// # Safety
/// `sys` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_system_ground(
    sys: *const DqeSystem,
    lambda0: *mut f64,
    degeneracy: *mut usize,
) -> DqeStatus {
    guard(|| {
        let s = in_ref(sys, "sys")?;
        *out_ptr(lambda0, "lambda0")? = s.0.spec.lambda0;
        *out_ptr(degeneracy, "degeneracy")? = s.0.spec.degeneracy;
        Ok(())
    })
}

/// Constant-ε run configuration stopping on the first run of `zeros` zeros.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_run_config_new(
    mode: DqeAgspMode,
    resampling: DqeResampling,
    eps: f64,
    zeros: usize,
    seed: u64,
    out: *mut *mut DqeRunConfig,
) -> DqeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mode = match mode {
            DqeAgspMode::LinearGlobal => AgspMode::LinearGlobal,
            DqeAgspMode::ProductSweep => AgspMode::ProductSweep,
            DqeAgspMode::MixtureRandom => AgspMode::MixtureRandom,
        };
        let resampling = match resampling {
            DqeResampling::Global => ResamplingMode::Global,
            DqeResampling::Local => ResamplingMode::Local,
            DqeResampling::Identity => ResamplingMode::Identity,
        };
        let cfg = RunConfig::new(
            mode,
            EpsilonSchedule::Constant(eps),
            resampling,
            StoppingRule::new(StoppingKind::FirstRunOfZeros(zeros)),
            seed,
        );
        core(cfg.validate())?;
        *out = Box::into_raw(Box::new(DqeRunConfig(cfg)));
        Ok(())
    })
}

/// Replaces the stopping rule, e.g. `"secretary:1000"` or
/// `"run-of-zeros:4,cap:500"`.
///
/// # Safety
/// `cfg` must be a live handle; `rule` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dqe_run_config_set_stopping(
    cfg: *mut DqeRunConfig,
    rule: *const c_char,
) -> DqeStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        let text = cstr(rule, "rule")?;
        cfg.0.stopping = core(text.parse())?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dqe_run_config_set_max_steps(
    cfg: *mut DqeRunConfig,
    max_steps: usize,
) -> DqeStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.max_steps = max_steps;
        core(next.validate())?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from `dqe_run_config_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dqe_run_config_free(cfg: *mut DqeRunConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs trajectory `index` of the seeded family.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_run_trajectory(
    sys: *const DqeSystem,
    cfg: *const DqeRunConfig,
    index: u64,
    out: *mut DqeTrajectorySummary,
) -> DqeStatus {
    guard(|| {
        let (s, c) = (in_ref(sys, "sys")?, in_ref(cfg, "cfg")?);
        let out = out_ptr(out, "out")?;
        let r = core(run_trajectory_indexed(&s.0, &c.0, index))?;
        *out = DqeTrajectorySummary {
            stop_step: r.stop_step as u64,
            stopped_run_length: r.stopped_run_length as u64,
            final_energy: r.final_energy,
            final_overlap: r.final_overlap,
            truncated: r.truncated,
        };
        Ok(())
    })
}

/// Runs trajectories `0..count`; `threads` = 0 uses all cores.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_run_ensemble(
    sys: *const DqeSystem,
    cfg: *const DqeRunConfig,
    count: usize,
    threads: usize,
    out: *mut DqeEnsembleSummary,
) -> DqeStatus {
    guard(|| {
        let (s, c) = (in_ref(sys, "sys")?, in_ref(cfg, "cfg")?);
        let out = out_ptr(out, "out")?;
        let threads = (threads > 0).then_some(threads);
        let (_, st) = core(run_ensemble(&s.0, &c.0, count, threads))?;
        *out = DqeEnsembleSummary {
            num_trajectories: st.num_trajectories as u64,
            mean_overlap: st.mean_overlap,
            stderr_overlap: st.stderr_overlap,
            mean_energy: st.mean_energy,
            stderr_energy: st.stderr_energy,
            mean_stop_step: st.mean_stop_step,
            stderr_stop_step: st.stderr_stop_step,
            truncated: st.truncated as u64,
        };
        Ok(())
    })
}

/// Exact expected stopping time and stopped-state overlap from the
/// maximally mixed start. Needs a run-of-zeros rule without a cap.
///
/// # Safety
/// Handles must be live; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_expected_stopping(
    sys: *const DqeSystem,
    cfg: *const DqeRunConfig,
    tau: *mut f64,
    overlap: *mut f64,
) -> DqeStatus {
    guard(|| {
        let (s, c) = (&in_ref(sys, "sys")?.0, &in_ref(cfg, "cfg")?.0);
        let (tau, overlap) = (out_ptr(tau, "tau")?, out_ptr(overlap, "overlap")?);
        let n = match (c.stopping.kind, c.stopping.time_cap) {
            (StoppingKind::FirstRunOfZeros(n), None) => n,
            _ => {
                return Err((
                    DqeStatus::InvalidArgument,
                    "exact analytics need an uncapped run-of-zeros rule".into(),
                ))
            }
        };
        let eps = match c.schedule {
            EpsilonSchedule::Constant(e) => e,
            EpsilonSchedule::Decaying(_) => {
                return Err((DqeStatus::InvalidArgument, "schedule must be constant".into()))
            }
        };
        let inst = core(sweep_instrument(
            s,
            c.agsp_mode,
            c.resampling,
            eps,
            c.mixture_micro_steps,
        ))?;
        let g = core(GeneralAnalytics::new(&inst.e0, &inst.e1, n))?;
        let rho0 = maximally_mixed(s.dimension());
        *overlap = overlap_with(&core(g.expected_state(&rho0))?, &s.spec.ground_projector);
        *tau = core(g.expected_tau(&rho0))?;
        Ok(())
    })
}

/// OpenQASM 2 for one term's measurement circuit, or the full sweep when
/// `term_index` is negative. Release the string with `dqe_string_free`.
///
/// # Safety
/// `sys` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dqe_circuit_qasm(
    sys: *const DqeSystem,
    eps: f64,
    term_index: i64,
    out: *mut *mut c_char,
) -> DqeStatus {
    guard(|| {
        let h = &in_ref(sys, "sys")?.0.h;
        let out = out_ptr(out, "out")?;
        let circuit = if term_index < 0 {
            core(sweep_circuit(h, eps, &schedule_sweep(h)))?
        } else {
            let i = term_index as usize;
            let t = h.terms().get(i).ok_or_else(|| {
                (
                    DqeStatus::InvalidArgument,
                    format!("term index {i} out of range"),
                )
            })?;
            core(measurement_circuit(t, t.coeff.abs() / h.kappa(), eps, Some(i)))?
        };
        let text = CString::new(export_qasm(&circuit))
            .map_err(|_| (DqeStatus::Panic, "QASM contains NUL".to_string()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dqe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
