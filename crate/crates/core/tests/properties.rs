use dqe_core::analytics::sweep_instrument;
use dqe_core::circuits::{export_qasm, parse_qasm, prims_unitary, term_circuits};
use dqe_core::config::{AgspKind, ExperimentConfig, ScheduleKind, SystemSpec};
use dqe_core::instrument::{PauliWeakMeasurement, Resampler};
use dqe_core::linalg::{identity, max_abs_diff, CVec, C64};
use dqe_core::pauli::{
    build_heisenberg_chain, build_maxsat, Clause, Pauli, PauliHamiltonian, PauliString, PauliTerm,
};
use dqe_core::stopping::{
    chow_thresholds, epsilon_at, Decision, EpsilonSchedule, StopMonitor, StoppingKind,
    StoppingRule,
};
use dqe_core::trajectory::{run_ensemble, AgspMode, ResamplingMode, RunConfig, System};
use proptest::prelude::*;

fn pauli() -> impl Strategy<Value = Pauli> {
    prop_oneof![
        Just(Pauli::I),
        Just(Pauli::X),
        Just(Pauli::Y),
        Just(Pauli::Z)
    ]
}

fn pauli_string(n: usize) -> impl Strategy<Value = PauliString> {
    prop::collection::vec(pauli(), n).prop_map(|f| PauliString::new(f).unwrap())
}

fn rule() -> impl Strategy<Value = StoppingRule> {
    prop_oneof![
        (1usize..6).prop_map(StoppingKind::FirstRunOfZeros),
        (5usize..60).prop_map(StoppingKind::Secretary),
        (1usize..8).prop_map(StoppingKind::ExpectedRank),
        (1usize..40).prop_map(StoppingKind::TimeCap),
    ]
    .prop_map(StoppingRule::new)
}

fn decisions(rule: StoppingRule, outcomes: &[u8], seed: u64, stream: u64) -> Vec<Decision> {
    let mut m = StopMonitor::new(rule, seed, stream);
    let mut out = vec![];
    for &o in outcomes {
        let d = m.observe(o);
        out.push(d);
        if d != Decision::Continue {
            break;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pauli_apply_matches_dense(s in (1usize..5).prop_flat_map(pauli_string), seed in 0u64..1000) {
        let d = 1usize << s.num_qubits();
        let psi = CVec::from_fn(d, |i, _| C64::new((i as f64 + seed as f64).sin(), (i as f64).cos()));
        let dense = s.to_dense().unwrap();
        let diff = (&dense * &psi - s.apply(&psi)).norm();
        prop_assert!(diff < 1e-12);
        prop_assert!(max_abs_diff(&(&dense * &dense), &identity(d)) < 1e-12);
    }

    #[test]
    fn commutation_matches_dense(
        (a, b) in (1usize..4).prop_flat_map(|n| (pauli_string(n), pauli_string(n)))
    ) {
        let (da, db) = (a.to_dense().unwrap(), b.to_dense().unwrap());
        let comm = &da * &db - &db * &da;
        let zero = comm.iter().all(|z| z.norm() < 1e-12);
        prop_assert_eq!(a.commutes_with(&b), zero);
        let text = a.to_string();
        prop_assert_eq!(text.parse::<PauliString>().unwrap(), a);
    }

    #[test]
    fn hamiltonian_json_round_trip(
        terms in (1usize..4).prop_flat_map(|n| prop::collection::vec((-2.0f64..2.0, pauli_string(n)), 1..5))
    ) {
        let n = terms[0].1.num_qubits();
        let ts: Vec<PauliTerm> = terms
            .into_iter()
            .filter(|(c, _)| c.abs() > 1e-3)
            .map(|(c, s)| PauliTerm::new(c, s).unwrap())
            .collect();
        prop_assume!(!ts.is_empty());
        let h = PauliHamiltonian::from_terms(n, ts).unwrap();
        let back = PauliHamiltonian::from_json_str(&h.to_json_string()).unwrap();
        prop_assert!(max_abs_diff(&h.to_dense().unwrap(), &back.to_dense().unwrap()) < 1e-12);
    }

    #[test]
    fn maxsat_energy_counts_violations(
        clauses in prop::collection::vec(
            (prop::sample::subsequence(vec![0usize, 1, 2, 3, 4], 1..4), any::<u8>()),
            1..6,
        )
    ) {
        let clauses: Vec<Clause> = clauses
            .into_iter()
            .map(|(vars, bits)| {
                let forbidden = (0..vars.len()).map(|i| if bits >> i & 1 == 1 { '1' } else { '0' }).collect();
                Clause { vars, forbidden }
            })
            .collect();
        let h = build_maxsat(5, &clauses).unwrap();
        let dense = h.to_dense().unwrap();
        for b in 0..32usize {
            // qubit 0 is the most significant bit
            let bit = |q: usize| (b >> (4 - q)) & 1;
            let violated = clauses
                .iter()
                .filter(|c| c.vars.iter().zip(c.forbidden.chars()).all(|(&v, ch)| bit(v) == (ch == '1') as usize))
                .count();
            prop_assert!((dense[(b, b)].re - violated as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_measurement_is_complete(
        s in (1usize..4).prop_flat_map(pauli_string),
        sign in prop_oneof![Just(1.0), Just(-1.0)],
        weight in 0.0f64..=1.0,
        eps in 0.001f64..=1.0,
    ) {
        prop_assume!(!s.is_identity());
        let w = PauliWeakMeasurement::new(s, sign, weight, eps);
        let inst = w.instrument(Resampler::identity()).unwrap();
        prop_assert!(inst.completeness_defect() < 1e-12);
    }

    #[test]
    fn decaying_schedule_never_exceeds_base(base in 0.001f64..=1.0, t1 in 0usize..50, gap in 1usize..50) {
        let e = epsilon_at(&EpsilonSchedule::Decaying(base), t1 + gap, t1).unwrap();
        prop_assert!(e <= base && e > 0.0);
        prop_assert!(epsilon_at(&EpsilonSchedule::Decaying(base), t1, t1).is_err());
    }

    #[test]
    fn stopping_decisions_replay_on_prefixes(
        rule in rule(),
        outcomes in prop::collection::vec(0u8..2, 1..120),
        seed in 0u64..50,
        cut in 0usize..120,
    ) {
        let full = decisions(rule, &outcomes, seed, 3);
        prop_assert_eq!(&full, &decisions(rule, &outcomes, seed, 3));
        let cut = cut.min(outcomes.len());
        let prefix = decisions(rule, &outcomes[..cut], seed, 3);
        prop_assert_eq!(&prefix[..], &full[..prefix.len()]);
        if let Some(cap) = rule.horizon() {
            prop_assert!(full.len() <= cap);
        }
    }

    #[test]
    fn run_of_zeros_stops_at_first_completed_run(n in 1usize..6, outcomes in prop::collection::vec(0u8..2, 1..80)) {
        let ds = decisions(StoppingRule::new(StoppingKind::FirstRunOfZeros(n)), &outcomes, 0, 0);
        let mut run = 0;
        let first = outcomes.iter().position(|&o| {
            run = if o == 0 { run + 1 } else { 0 };
            run >= n
        });
        match first {
            Some(t) => prop_assert_eq!(ds.len(), t + 1),
            None => prop_assert!(ds.iter().all(|&d| d == Decision::Continue)),
        }
    }

    #[test]
    fn chow_thresholds_are_consistent(n in 1usize..60) {
        let ch = chow_thresholds(n);
        prop_assert_eq!(ch.s(n), n);
        for i in 1..n {
            prop_assert!(ch.s(i) <= ch.s(i + 1) && ch.s(i) <= i);
        }
        prop_assert!(ch.c0() >= 1.0 && ch.c0() < 3.8695);
        if n > 1 {
            prop_assert!(chow_thresholds(n - 1).c0() <= ch.c0() + 1e-12);
        }
    }

    #[test]
    fn config_json_round_trip(
        n in 2usize..6,
        periodic: bool,
        agsp in prop_oneof![Just(AgspKind::Linear), Just(AgspKind::Product), Just(AgspKind::Mixture)],
        eps in prop::option::of(0.01f64..1.0),
        decaying: bool,
        zeros in 1usize..9,
        trajectories in 1usize..5000,
        seed: u64,
    ) {
        let mut cfg = ExperimentConfig::new(SystemSpec::Heisenberg { n, periodic });
        cfg.agsp = agsp;
        cfg.eps = eps;
        cfg.schedule = if decaying { ScheduleKind::Decaying } else { ScheduleKind::Constant };
        cfg.stopping = format!("run-of-zeros:{zeros}");
        cfg.trajectories = trajectories;
        cfg.seed = seed;
        let back = ExperimentConfig::from_json_str(&cfg.canonical_json()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = seed.wrapping_add(1);
        prop_assert_ne!(other.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sweep_channels_preserve_trace(
        q in 2usize..4,
        mode in prop_oneof![Just(AgspMode::LinearGlobal), Just(AgspMode::ProductSweep), Just(AgspMode::MixtureRandom)],
        local: bool,
        eps in 0.01f64..1.0,
    ) {
        let sys = System::new(build_heisenberg_chain(q, false).unwrap()).unwrap();
        let r = if local && mode != AgspMode::LinearGlobal { ResamplingMode::Local } else { ResamplingMode::Global };
        let inst = sweep_instrument(&sys, mode, r, eps, None).unwrap();
        prop_assert!(inst.e0.add(&inst.e1).tp_defect() < 1e-10);
    }

    #[test]
    fn qasm_round_trip_preserves_unitary(eps in 0.01f64..=1.0, q in 2usize..4) {
        let h = build_heisenberg_chain(q, false).unwrap();
        for c in term_circuits(&h, eps).unwrap() {
            let (nq, prims) = parse_qasm(&export_qasm(&c)).unwrap();
            prop_assert_eq!(nq, c.num_qubits);
            let a = prims_unitary(&c.lower(), nq);
            let b = prims_unitary(&prims, nq);
            prop_assert!(max_abs_diff(&a, &b) < 1e-10);
        }
    }

    #[test]
    fn ensembles_do_not_depend_on_threads(
        seed in 0u64..1000,
        mode in prop_oneof![Just(AgspMode::ProductSweep), Just(AgspMode::MixtureRandom)],
        local: bool,
    ) {
        let sys = System::new(build_heisenberg_chain(2, false).unwrap()).unwrap();
        let mut cfg = RunConfig::new(
            mode,
            EpsilonSchedule::Constant(0.2),
            if local { ResamplingMode::Local } else { ResamplingMode::Global },
            StoppingRule::new(StoppingKind::FirstRunOfZeros(2)),
            seed,
        );
        cfg.max_steps = 2000;
        let (a, sa) = run_ensemble(&sys, &cfg, 24, Some(1)).unwrap();
        let (b, sb) = run_ensemble(&sys, &cfg, 24, Some(3)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(sa, sb);
    }
}
