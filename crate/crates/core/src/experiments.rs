//! End-to-end experiments behind the `dqe` subcommands. Each command returns
//! the output file body (CSV or QASM, with a commented header carrying the
//! version and config hash) plus a human-readable summary.

use std::fmt::Write as _;

use crate::agsp::{agsp_chebyshev, agsp_linear, agsp_product, forward_product, verify_agsp};
use crate::analytics::{
    fit_loglinear, maximally_mixed, overlap_lower_bound, overlap_with, stopping_time_upper_bound,
    sweep_instrument, GeneralAnalytics,
};
use crate::circuits::{export_qasm, measurement_circuit, schedule_sweep, sweep_circuit, Circuit};
use crate::config::{AgspKind, ExperimentConfig, ScheduleKind, SystemSpec};
use crate::error::{DqeError, Result};
use crate::instrument::{fixed_point_direct, fixed_point_iterate, global_channel_transfer, trace_distance};
use crate::linalg::{herm_fn, herm_norm, CMat};
use crate::noise::{run_resilience_experiment, ResilienceSettings};
use crate::pauli::{build_heisenberg_chain, check_transfer, diagonalize};
use crate::stopping::{suggest_epsilon, StoppingKind};
use crate::trajectory::{run_ensemble, run_trajectory, GateNoise, ResamplingMode, System};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// File body; `None` for report-only commands.
    pub body: Option<String>,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// Worker threads for ensembles; all cores when `None`.
    pub threads: Option<usize>,
}

fn header(cfg: &ExperimentConfig, prefix: &str) -> String {
    format!(
        "{prefix} dqe {}\n{prefix} config_hash {}\n{prefix} config {}\n",
        crate::VERSION,
        cfg.hash(),
        cfg.canonical_json()
    )
}

struct Csv {
    out: csv::Writer<Vec<u8>>,
    head: String,
}

impl Csv {
    fn new(cfg: &ExperimentConfig, columns: &[&str]) -> Result<Self> {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(columns).map_err(csv_err)?;
        Ok(Csv {
            out,
            head: header(cfg, "#"),
        })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.out.write_record(fields).map_err(csv_err)
    }

    fn finish(self) -> Result<String> {
        let bytes = self.out.into_inner().map_err(|e| DqeError::Config(e.to_string()))?;
        Ok(self.head + &String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> DqeError {
    DqeError::Io(std::io::Error::other(e.to_string()))
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn system(cfg: &ExperimentConfig) -> Result<System> {
    System::new(cfg.system.build()?)
}

fn zero_run_length(cfg: &ExperimentConfig) -> Result<usize> {
    let rule = cfg.stopping_rule()?;
    match (rule.kind, rule.time_cap) {
        (StoppingKind::FirstRunOfZeros(n), None) => Ok(n),
        _ => Err(DqeError::Config(format!(
            "stopping: exact analytics need an uncapped run-of-zeros rule, got {:?}",
            cfg.stopping
        ))),
    }
}

/// Single-operator form E0(ρ) = KρK† of one sweep, where one exists.
fn sweep_success_operator(sys: &System, kind: AgspKind, eps: f64) -> Result<Option<CMat>> {
    Ok(match kind {
        AgspKind::Linear => {
            let vals: Vec<f64> = sys
                .linear_k_values()
                .iter()
                .map(|k| 1.0 - eps + eps * k)
                .collect();
            Some(herm_fn(&vals, &sys.spec.eigenvectors, |x| x))
        }
        AgspKind::Product => {
            let a = forward_product(&sys.h, eps)?;
            Some(&a * a.adjoint())
        }
        _ => None,
    })
}

pub fn cmd_spectrum(cfg: &ExperimentConfig) -> Result<Report> {
    let h = cfg.system.build()?;
    let spec = diagonalize(&h)?;
    let mut s = String::new();
    writeln!(s, "system     {}", cfg.system.label()).unwrap();
    writeln!(s, "qubits     {}", h.num_qubits()).unwrap();
    writeln!(s, "D          {}", h.dimension()).unwrap();
    writeln!(s, "terms      {}", h.num_terms()).unwrap();
    writeln!(s, "kappa      {}", h.kappa()).unwrap();
    writeln!(s, "lambda0    {}", spec.lambda0).unwrap();
    match spec.lambda1 {
        Some(l1) => {
            writeln!(s, "lambda1    {l1}").unwrap();
            writeln!(s, "gap        {}", l1 - spec.lambda0).unwrap();
        }
        None => writeln!(s, "lambda1    none (single eigenvalue)").unwrap(),
    }
    writeln!(s, "N          {}", spec.degeneracy).unwrap();
    writeln!(s, "eps        {} (suggested)", suggest_epsilon(&h)).unwrap();
    Ok(Report {
        body: None,
        summary: s,
    })
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Report> {
    let sys = system(cfg)?;
    let mut rc = cfg.run_config(&sys.h)?;
    rc.record_series = true;
    let rec = run_trajectory(&sys, &rc)?;
    let mut csv = Csv::new(cfg, &["step", "outcome", "energy", "overlap"])?;
    let series = rec.series.clone().unwrap_or_default();
    for (i, (o, (e, ov))) in rec.outcomes.iter().zip(series).enumerate() {
        csv.row(&[(i + 1).to_string(), o.to_string(), f(e), f(ov)])?;
    }
    let mut s = String::new();
    writeln!(s, "stop_step           {}", rec.stop_step).unwrap();
    writeln!(s, "stopped_run_length  {}", rec.stopped_run_length).unwrap();
    writeln!(s, "final_energy        {}", rec.final_energy).unwrap();
    writeln!(s, "final_overlap       {}", rec.final_overlap).unwrap();
    writeln!(s, "lambda0             {}", sys.spec.lambda0).unwrap();
    writeln!(s, "truncated           {}", rec.truncated).unwrap();
    writeln!(s, "local_measurements  {}", rec.measurements).unwrap();
    Ok(Report {
        body: Some(csv.finish()?),
        summary: s,
    })
}

/// Exact (overlap, E(τ)) for the configured sweep from the maximally mixed start.
fn oracle(sys: &System, cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let n = zero_run_length(cfg)?;
    if cfg.schedule != ScheduleKind::Constant || cfg.gate_noise.is_some() {
        return Err(DqeError::Config(
            "exact analytics cover noiseless constant-ε sweeps only".into(),
        ));
    }
    let inst = sweep_instrument(
        sys,
        cfg.agsp.mode()?,
        cfg.resampling,
        cfg.eps_for(&sys.h),
        cfg.mixture_micro_steps,
    )?;
    let g = GeneralAnalytics::new(&inst.e0, &inst.e1, n)?;
    let rho0 = maximally_mixed(sys.dimension());
    let state = g.expected_state(&rho0)?;
    Ok((overlap_with(&state, &sys.spec.ground_projector), g.expected_tau(&rho0)?))
}

pub fn cmd_ensemble(cfg: &ExperimentConfig, opts: Options) -> Result<Report> {
    let sys = system(cfg)?;
    let rc = cfg.run_config(&sys.h)?;
    let (records, st) = run_ensemble(&sys, &rc, cfg.trajectories, opts.threads)?;
    let mut csv = Csv::new(
        cfg,
        &[
            "trajectory_id",
            "stop_step",
            "stopped_run_length",
            "final_energy",
            "final_overlap",
            "truncated",
        ],
    )?;
    for (i, r) in records.iter().enumerate() {
        csv.row(&[
            i.to_string(),
            r.stop_step.to_string(),
            r.stopped_run_length.to_string(),
            f(r.final_energy),
            f(r.final_overlap),
            (r.truncated as u8).to_string(),
        ])?;
    }
    let mut s = String::new();
    writeln!(s, "trajectories   {}", st.num_trajectories).unwrap();
    writeln!(s, "mean_overlap   {} ± {}", st.mean_overlap, st.stderr_overlap).unwrap();
    writeln!(s, "mean_energy    {} ± {}", st.mean_energy, st.stderr_energy).unwrap();
    writeln!(s, "mean_stop_step {} ± {}", st.mean_stop_step, st.stderr_stop_step).unwrap();
    writeln!(s, "truncated      {}", st.truncated).unwrap();
    if check_transfer(sys.num_qubits(), "ensemble oracle").is_ok() {
        match oracle(&sys, cfg) {
            Ok((ov, tau)) => {
                let z = |mean: f64, exact: f64, se: f64| {
                    if se > 0.0 {
                        (mean - exact) / se
                    } else if mean == exact {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                };
                writeln!(
                    s,
                    "exact_overlap  {ov} (z = {:.3})",
                    z(st.mean_overlap, ov, st.stderr_overlap)
                )
                .unwrap();
                writeln!(
                    s,
                    "exact_tau      {tau} (z = {:.3})",
                    z(st.mean_stop_step, tau, st.stderr_stop_step)
                )
                .unwrap();
            }
            Err(e) => writeln!(s, "oracle         unavailable: {e}").unwrap(),
        }
    }
    Ok(Report {
        body: Some(csv.finish()?),
        summary: s,
    })
}

pub fn cmd_analytics(cfg: &ExperimentConfig) -> Result<Report> {
    let sys = system(cfg)?;
    let eps = cfg.eps_for(&sys.h);
    let mode = cfg.agsp.mode()?;
    let d = sys.dimension();
    let nn = sys.spec.degeneracy;
    let rho0 = maximally_mixed(d);
    let params = sweep_success_operator(&sys, cfg.agsp, eps)?
        .map(|k| verify_agsp(&k, &sys.spec.ground_projector, nn).params);
    let resamplers: &[ResamplingMode] = if cfg.agsp == AgspKind::Linear {
        &[ResamplingMode::Global]
    } else {
        &[ResamplingMode::Global, ResamplingMode::Local]
    };
    let mut csv = Csv::new(
        cfg,
        &[
            "system",
            "agsp",
            "resampler",
            "n",
            "exact_overlap",
            "exact_tau",
            "overlap_lower_bound",
            "tau_upper_bound",
        ],
    )?;
    let label = cfg.system.label();
    let agsp = serde_json::to_value(cfg.agsp)?;
    for &r in resamplers {
        let inst = sweep_instrument(&sys, mode, r, eps, cfg.mixture_micro_steps)?;
        let rname = serde_json::to_value(r)?;
        for &n in &cfg.stop_lengths {
            let g = GeneralAnalytics::new(&inst.e0, &inst.e1, n)?;
            let ov = overlap_with(&g.expected_state(&rho0)?, &sys.spec.ground_projector);
            let tau = g.expected_tau(&rho0)?;
            let (lb, ub) = match (r, params) {
                (ResamplingMode::Global, Some(p)) => {
                    let b = overlap_lower_bound(&p, d, nn, n);
                    (
                        (!b.vacuous).then_some(b.value),
                        Some(stopping_time_upper_bound(&p, d, nn, n)),
                    )
                }
                _ => (None, None),
            };
            csv.row(&[
                label.clone(),
                agsp.as_str().unwrap_or_default().to_string(),
                rname.as_str().unwrap_or_default().to_string(),
                n.to_string(),
                f(ov),
                f(tau),
                opt(lb),
                opt(ub),
            ])?;
        }
    }
    Ok(Report {
        body: Some(csv.finish()?),
        summary: format!(
            "exact stopped-state analytics for {label}, eps = {eps}, {} rows\n",
            resamplers.len() * cfg.stop_lengths.len()
        ),
    })
}

pub fn cmd_fixed_point(cfg: &ExperimentConfig) -> Result<Report> {
    let sys = system(cfg)?;
    let eps = cfg.eps_for(&sys.h);
    let agsp = match cfg.agsp {
        AgspKind::Linear => agsp_linear(&sys.h, &sys.spec)?,
        AgspKind::Product => agsp_product(&sys.h, &sys.spec, eps)?,
        AgspKind::Chebyshev => agsp_chebyshev(&sys.spec, cfg.chebyshev_degree)?,
        AgspKind::Mixture => {
            return Err(DqeError::Config(
                "agsp: the mixture AGSP is a channel, not a single operator; \
                 use linear, product or chebyshev"
                    .into(),
            ))
        }
    };
    let k = &agsp.operator;
    let pi0 = &sys.spec.ground_projector;
    let nn = sys.spec.degeneracy;
    let d = sys.dimension();
    let norm = herm_norm(k);
    let direct = fixed_point_direct(k)?;
    let ov_direct = overlap_with(&direct, pi0);
    let iterate = if check_transfer(sys.num_qubits(), "fixed-point iteration").is_ok() {
        let map = global_channel_transfer(k)?;
        Some(fixed_point_iterate(&map, 1e-13, 10_000_000)?)
    } else {
        None
    };
    let params = verify_agsp(k, pi0, nn).params;
    let bound = crate::analytics::fixed_point_overlap_bound(&params, d, nn);
    let mut csv = Csv::new(
        cfg,
        &[
            "agsp",
            "norm",
            "overlap_direct",
            "overlap_iterate",
            "trace_distance",
            "overlap_bound",
        ],
    )?;
    let name = serde_json::to_value(cfg.agsp)?;
    csv.row(&[
        name.as_str().unwrap_or_default().to_string(),
        f(norm),
        f(ov_direct),
        opt(iterate.as_ref().map(|r| overlap_with(r, pi0))),
        opt(iterate.as_ref().map(|r| trace_distance(r, &direct))),
        f(bound),
    ])?;
    let mut s = String::new();
    writeln!(s, "norm            {norm}").unwrap();
    writeln!(s, "sqrt_gamma      {}", params.sqrt_gamma).unwrap();
    writeln!(s, "sqrt_delta      {}", params.sqrt_delta).unwrap();
    writeln!(s, "epsilon         {}", params.epsilon).unwrap();
    writeln!(s, "overlap         {ov_direct}").unwrap();
    writeln!(s, "overlap_bound   {bound}").unwrap();
    Ok(Report {
        body: Some(csv.finish()?),
        summary: s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResamplingComparison {
    pub sizes: Vec<usize>,
    pub tau_global: Vec<f64>,
    pub tau_local: Vec<f64>,
    pub overlap_global: Vec<f64>,
    pub overlap_local: Vec<f64>,
    pub slope_global: f64,
    pub slope_local: f64,
}

impl ResamplingComparison {
    /// E(τ) local ≤ E(τ) global at every size, up to relative rounding `rtol`.
    pub fn local_not_worse(&self, rtol: f64) -> bool {
        self.tau_local
            .iter()
            .zip(&self.tau_global)
            .all(|(l, g)| *l <= g * (1.0 + rtol))
    }
}

/// Relative slack for E(τ) comparisons; equal instruments (n = 2, where every
/// term covers the chain) agree only to rounding.
pub const ORDER_RTOL: f64 = 1e-9;

/// Exact E(τ) under global and local resampling on Heisenberg chains of
/// every size in `sizes`, with log-linear fits of E(τ) against size.
pub fn compare_resampling(
    sizes: &[usize],
    periodic: bool,
    kind: AgspKind,
    eps: f64,
    zeros: usize,
    micro_steps: Option<usize>,
) -> Result<ResamplingComparison> {
    if sizes.len() < 2 {
        return Err(DqeError::Parameter("a fit needs at least two sizes".into()));
    }
    let mode = kind.mode()?;
    let mut out = ResamplingComparison {
        sizes: sizes.to_vec(),
        tau_global: vec![],
        tau_local: vec![],
        overlap_global: vec![],
        overlap_local: vec![],
        slope_global: 0.0,
        slope_local: 0.0,
    };
    for &q in sizes {
        let sys = System::new(build_heisenberg_chain(q, periodic)?)?;
        let rho0 = maximally_mixed(sys.dimension());
        for r in [ResamplingMode::Global, ResamplingMode::Local] {
            let inst = sweep_instrument(&sys, mode, r, eps, micro_steps)?;
            let g = GeneralAnalytics::new(&inst.e0, &inst.e1, zeros)?;
            let tau = g.expected_tau(&rho0)?;
            let ov = overlap_with(&g.expected_state(&rho0)?, &sys.spec.ground_projector);
            if r == ResamplingMode::Global {
                out.tau_global.push(tau);
                out.overlap_global.push(ov);
            } else {
                out.tau_local.push(tau);
                out.overlap_local.push(ov);
            }
        }
    }
    let xs: Vec<f64> = sizes.iter().map(|&q| q as f64).collect();
    out.slope_global = fit_loglinear(&xs, &out.tau_global).0;
    out.slope_local = fit_loglinear(&xs, &out.tau_local).0;
    Ok(out)
}

pub fn cmd_compare_resampling(cfg: &ExperimentConfig) -> Result<Report> {
    let periodic = match cfg.system {
        SystemSpec::Heisenberg { periodic, .. } => periodic,
        _ => {
            return Err(DqeError::Config(
                "system: compare-resampling scans Heisenberg chain sizes".into(),
            ))
        }
    };
    if cfg.max_size < 3 {
        return Err(DqeError::Config("max_size: must be ≥ 3".into()));
    }
    let sizes: Vec<usize> = (2..=cfg.max_size).collect();
    let h2 = build_heisenberg_chain(2, periodic)?;
    let eps = cfg.eps_for(&h2);
    let cmp = compare_resampling(
        &sizes,
        periodic,
        cfg.agsp,
        eps,
        zero_run_length(cfg)?,
        cfg.mixture_micro_steps,
    )?;
    let mut csv = Csv::new(
        cfg,
        &["n", "tau_global", "tau_local", "overlap_global", "overlap_local"],
    )?;
    for i in 0..sizes.len() {
        csv.row(&[
            sizes[i].to_string(),
            f(cmp.tau_global[i]),
            f(cmp.tau_local[i]),
            f(cmp.overlap_global[i]),
            f(cmp.overlap_local[i]),
        ])?;
    }
    let mut s = String::new();
    writeln!(s, "slope_global  {}", cmp.slope_global).unwrap();
    writeln!(s, "slope_local   {}", cmp.slope_local).unwrap();
    writeln!(
        s,
        "local <= global at every size: {}",
        cmp.local_not_worse(ORDER_RTOL)
    )
    .unwrap();
    Ok(Report {
        body: Some(csv.finish()?),
        summary: s,
    })
}

pub fn cmd_noise_sweep(cfg: &ExperimentConfig, opts: Options) -> Result<Report> {
    let sys = system(cfg)?;
    let eps = cfg.eps_for(&sys.h);
    let mut csv = Csv::new(
        cfg,
        &[
            "delta",
            "runtime_cap",
            "mean_overlap",
            "stderr",
            "bound",
            "free_decay_overlap",
            "mean_stop_step",
        ],
    )?;
    let mut s = String::new();
    for &p in &cfg.noise_sweep.rates {
        let report = run_resilience_experiment(
            &sys,
            &ResilienceSettings {
                eps,
                noise: GateNoise { p1: p, p2: p },
                runtimes: cfg.noise_sweep.runtimes.clone(),
                trajectories: cfg.trajectories,
                seed: cfg.seed,
                threads: opts.threads,
                measure_delta: cfg.noise_sweep.measure_delta,
            },
        )?;
        let bound = (!report.bound_vacuous && report.delta_measured.is_some())
            .then_some(report.asymptotic_bound);
        for pt in &report.points {
            csv.row(&[
                f(p),
                pt.runtime_cap.to_string(),
                f(pt.mean_overlap),
                f(pt.stderr),
                opt(bound),
                f(pt.free_decay_overlap),
                f(pt.mean_stop_step),
            ])?;
        }
        writeln!(
            s,
            "p = {p}: overlap spread {} across caps (tolerance {})",
            report.spread, report.tolerance
        )
        .unwrap();
    }
    Ok(Report {
        body: Some(csv.finish()?),
        summary: s,
    })
}

pub enum CircuitSelection {
    Term(usize),
    FullSweep,
}

pub fn cmd_circuit(cfg: &ExperimentConfig, which: CircuitSelection) -> Result<Report> {
    let h = cfg.system.build()?;
    let eps = cfg.eps_for(&h);
    let kappa = h.kappa();
    let circuit: Circuit = match which {
        CircuitSelection::Term(i) => {
            let t = h.terms().get(i).ok_or_else(|| {
                DqeError::Config(format!(
                    "term-index: {i} out of range ({} terms)",
                    h.num_terms()
                ))
            })?;
            measurement_circuit(t, t.coeff.abs() / kappa, eps, Some(i))?
        }
        CircuitSelection::FullSweep => sweep_circuit(&h, eps, &schedule_sweep(&h))?,
    };
    let qasm = export_qasm(&circuit);
    let prims = circuit.lower();
    Ok(Report {
        body: Some(header(cfg, "//") + &qasm),
        summary: format!(
            "{} qubits (ancilla last), {} gates, {} primitives\n",
            circuit.num_qubits,
            circuit.gates.len(),
            prims.len()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::parse_qasm;

    fn heis(n: usize) -> ExperimentConfig {
        ExperimentConfig::new(SystemSpec::Heisenberg { n, periodic: false })
    }

    #[test]
    fn spectrum_heisenberg_two() {
        let r = cmd_spectrum(&heis(2)).unwrap();
        assert!(r.summary.contains("lambda0    -3"));
        assert!(r.summary.contains("gap        4"));
        assert!(r.summary.contains("eps        0.0625"));
    }

    #[test]
    fn csv_header_and_determinism() {
        let mut c = heis(2);
        c.trajectories = 50;
        c.seed = 11;
        let a = cmd_ensemble(&c, Options { threads: Some(1) }).unwrap();
        let b = cmd_ensemble(&c, Options { threads: Some(3) }).unwrap();
        assert_eq!(a.body, b.body);
        let body = a.body.unwrap();
        assert!(body.starts_with("# dqe "));
        assert!(body.contains(&format!("# config_hash {}", c.hash())));
        let rows = body.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 51);
        assert!(a.summary.contains("exact_overlap"));
    }

    #[test]
    fn analytics_rows_and_bounds() {
        let mut c = heis(2);
        c.stop_lengths = vec![1, 3];
        let body = cmd_analytics(&c).unwrap().body.unwrap();
        let rows: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 5);
        assert!(rows[1].starts_with("heisenberg-2,product,global,1,"));
        assert!(rows[3].starts_with("heisenberg-2,product,local,1,"));
    }

    #[test]
    fn fixed_point_linear_is_singular_on_heisenberg_two() {
        // λ0 = -κ makes ‖K‖ = 1.
        let mut c = heis(2);
        c.agsp = AgspKind::Linear;
        assert!(matches!(
            cmd_fixed_point(&c),
            Err(DqeError::SingularFixedPoint { .. })
        ));
        c.agsp = AgspKind::Product;
        let r = cmd_fixed_point(&c).unwrap();
        let row = r.body.unwrap().lines().last().unwrap().to_string();
        let cols: Vec<f64> = row.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(cols[3] < 1e-8, "{row}");
        assert!(cols[1] >= cols[4] - 1e-9, "{row}");
    }

    #[test]
    fn circuit_output_parses() {
        let mut c = heis(2);
        c.eps = Some(0.2);
        let body = cmd_circuit(&c, CircuitSelection::Term(1)).unwrap().body.unwrap();
        let (nq, prims) = parse_qasm(&body).unwrap();
        assert_eq!(nq, 3);
        assert!(!prims.is_empty());
        assert!(cmd_circuit(&c, CircuitSelection::Term(9)).is_err());
        assert!(cmd_circuit(&c, CircuitSelection::FullSweep).is_ok());
    }

    #[test]
    fn compare_needs_heisenberg() {
        let mut c = ExperimentConfig::new(SystemSpec::Maxsat {
            num_vars: 2,
            clauses: vec![],
        });
        c.max_size = 3;
        assert!(cmd_compare_resampling(&c).is_err());
    }
}
