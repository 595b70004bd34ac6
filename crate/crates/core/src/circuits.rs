//! Gate-level weak measurement of Pauli terms with a single reused ancilla.
//!
//! The ancilla rotation R(x) = [[cos x, -sin x], [sin x, cos x]] equals the
//! standard `ry(2x)`; the conversion lives in [`Gate::lower`] only.

use rand::Rng;

use crate::error::{DqeError, Result};
use crate::instrument::local_depolarize;
use crate::linalg::{c, identity, CMat, CVec, C64, ONE, ZERO};
use crate::pauli::{Pauli, PauliHamiltonian, PauliTerm};

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    /// H_σ (or H_σ† when `dagger`) on one system qubit.
    BasisRotation {
        qubit: usize,
        pauli: Pauli,
        dagger: bool,
    },
    ControlledNot {
        control: usize,
        target: usize,
    },
    /// R(x) on the ancilla, x in radians.
    AncillaRotation {
        angle: f64,
    },
    MeasureAncilla,
    ResetAncilla,
    ResetQubits(Vec<usize>),
}

/// Elementary gates shared by export, parsing and simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prim {
    H(usize),
    S(usize),
    Sdg(usize),
    Cx(usize, usize),
    /// Standard y rotation by `theta`.
    Ry(usize, f64),
    Measure(usize),
    Reset(usize),
}

impl Prim {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Prim::H(q) | Prim::S(q) | Prim::Sdg(q) | Prim::Ry(q, _) => vec![q],
            Prim::Measure(q) | Prim::Reset(q) => vec![q],
            Prim::Cx(a, b) => vec![a, b],
        }
    }

    pub fn is_unitary(&self) -> bool {
        !matches!(self, Prim::Measure(_) | Prim::Reset(_))
    }
}

impl Gate {
    /// Elementary sequence in time order. `ancilla` is the ancilla index.
    pub fn lower(&self, ancilla: usize) -> Vec<Prim> {
        match self {
            Gate::BasisRotation {
                qubit,
                pauli,
                dagger,
            } => match (pauli, dagger) {
                (Pauli::X, _) => vec![Prim::H(*qubit)],
                // H_Y = S·H, so H_Y† = H·S†: S† acts first
                (Pauli::Y, true) => vec![Prim::Sdg(*qubit), Prim::H(*qubit)],
                (Pauli::Y, false) => vec![Prim::H(*qubit), Prim::S(*qubit)],
                _ => vec![],
            },
            Gate::ControlledNot { control, target } => vec![Prim::Cx(*control, *target)],
            Gate::AncillaRotation { angle } => vec![Prim::Ry(ancilla, 2.0 * angle)],
            Gate::MeasureAncilla => vec![Prim::Measure(ancilla)],
            Gate::ResetAncilla => vec![Prim::Reset(ancilla)],
            Gate::ResetQubits(qs) => qs.iter().map(|&q| Prim::Reset(q)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermMetadata {
    pub term_index: Option<usize>,
    pub paulis: String,
    pub eps: f64,
    pub kappa_v: f64,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    /// System qubits plus one ancilla, which is the last index.
    pub num_qubits: usize,
    pub gates: Vec<Gate>,
    pub terms: Vec<TermMetadata>,
}

impl Circuit {
    pub fn empty(num_system: usize) -> Self {
        Circuit {
            num_qubits: num_system + 1,
            gates: vec![],
            terms: vec![],
        }
    }

    pub fn ancilla(&self) -> usize {
        self.num_qubits - 1
    }

    pub fn num_system(&self) -> usize {
        self.num_qubits - 1
    }

    pub fn lower(&self) -> Vec<Prim> {
        let a = self.ancilla();
        self.gates.iter().flat_map(|g| g.lower(a)).collect()
    }
}

/// θ = arccos(1-ε), φ = arccos(1-ε(1-κ_v)).
pub fn measurement_angles(kappa_v: f64, eps: f64) -> (f64, f64) {
    let theta = (1.0 - eps).clamp(-1.0, 1.0).acos();
    let phi = (1.0 - eps * (1.0 - kappa_v)).clamp(-1.0, 1.0).acos();
    (theta, phi)
}

pub fn rotation(x: f64) -> CMat {
    let (s, co) = x.sin_cos();
    CMat::from_row_slice(2, 2, &[c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)])
}

/// U = (R_φ⊗1)(1⊗Π + R_{θ-φ}⊗(1-Π)), ancilla as the first tensor factor.
pub fn dilation_unitary(kappa_v: f64, eps: f64, projector: &CMat) -> CMat {
    let (theta, phi) = measurement_angles(kappa_v, eps);
    let d = projector.nrows();
    let perp = identity(d) - projector;
    let ctrl = rotation(0.0).kronecker(projector) + rotation(theta - phi).kronecker(&perp);
    rotation(phi).kronecker(&identity(d)) * ctrl
}

/// Weak measurement circuit for one term.
pub fn measurement_circuit(
    term: &PauliTerm,
    kappa_v: f64,
    eps: f64,
    term_index: Option<usize>,
) -> Result<Circuit> {
    let support = term.string.support();
    if support.is_empty() {
        return Err(DqeError::InvalidInstance(
            "identity term has no measurement circuit".into(),
        ));
    }
    let n = term.string.num_qubits();
    let anc = n;
    let (theta, phi) = measurement_angles(kappa_v, eps);
    // parity 0 ↔ h = +1; Π is the h = -s eigenspace
    let (base, diff) = if term.sign() < 0.0 {
        (phi, theta - phi)
    } else {
        (theta, phi - theta)
    };
    let factors = term.string.factors();
    let mut gates = Vec::new();
    for &q in &support {
        gates.push(Gate::BasisRotation {
            qubit: q,
            pauli: factors[q],
            dagger: true,
        });
    }
    gates.push(Gate::AncillaRotation { angle: base });
    for &q in &support {
        gates.push(Gate::ControlledNot {
            control: q,
            target: anc,
        });
    }
    gates.push(Gate::AncillaRotation { angle: -diff / 2.0 });
    for &q in support.iter().rev() {
        gates.push(Gate::ControlledNot {
            control: q,
            target: anc,
        });
    }
    gates.push(Gate::AncillaRotation { angle: diff / 2.0 });
    for &q in &support {
        gates.push(Gate::BasisRotation {
            qubit: q,
            pauli: factors[q],
            dagger: false,
        });
    }
    gates.push(Gate::MeasureAncilla);
    Ok(Circuit {
        num_qubits: n + 1,
        gates,
        terms: vec![TermMetadata {
            term_index,
            paulis: term.string.to_string(),
            eps,
            kappa_v,
            sign: term.sign(),
        }],
    })
}

/// Circuits for every term of `h`, indexed like `h.terms()`.
pub fn term_circuits(h: &PauliHamiltonian, eps: f64) -> Result<Vec<Circuit>> {
    let kappa = h.kappa();
    h.terms()
        .iter()
        .enumerate()
        .map(|(i, t)| measurement_circuit(t, t.coeff.abs() / kappa, eps, Some(i)))
        .collect()
}

fn one_qubit_matrix(p: &Prim) -> [C64; 4] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    match *p {
        Prim::H(_) => [c(r, 0.0), c(r, 0.0), c(r, 0.0), c(-r, 0.0)],
        Prim::S(_) => [ONE, ZERO, ZERO, c(0.0, 1.0)],
        Prim::Sdg(_) => [ONE, ZERO, ZERO, c(0.0, -1.0)],
        Prim::Ry(_, t) => {
            let (s, co) = (t / 2.0).sin_cos();
            [c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)]
        }
        _ => unreachable!("not a one-qubit unitary"),
    }
}

fn apply_1q(state: &mut [C64], q: usize, nq: usize, m: &[C64; 4]) {
    let bit = 1usize << (nq - 1 - q);
    for b in 0..state.len() {
        if b & bit == 0 {
            let (a0, a1) = (state[b], state[b | bit]);
            state[b] = m[0] * a0 + m[1] * a1;
            state[b | bit] = m[2] * a0 + m[3] * a1;
        }
    }
}

fn apply_pauli_1q(state: &mut [C64], q: usize, nq: usize, p: Pauli) {
    if p == Pauli::I {
        return;
    }
    let m = p.matrix();
    apply_1q(state, q, nq, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]);
}

/// Applies a unitary primitive to a state vector over `nq` qubits.
pub fn apply_prim(state: &mut [C64], p: &Prim, nq: usize) {
    match *p {
        Prim::Cx(ctl, tgt) => {
            let cb = 1usize << (nq - 1 - ctl);
            let tb = 1usize << (nq - 1 - tgt);
            for b in 0..state.len() {
                if b & cb != 0 && b & tb == 0 {
                    state.swap(b, b | tb);
                }
            }
        }
        Prim::Measure(_) | Prim::Reset(_) => panic!("non-unitary primitive in unitary path"),
        ref one => {
            let q = one.qubits()[0];
            apply_1q(state, q, nq, &one_qubit_matrix(one));
        }
    }
}

/// Unitary of the primitives preceding the first measurement.
pub fn prims_unitary(prims: &[Prim], nq: usize) -> CMat {
    let d = 1usize << nq;
    let mut u = identity(d);
    for k in 0..d {
        let mut col: Vec<C64> = u.column(k).iter().copied().collect();
        for p in prims.iter().take_while(|p| p.is_unitary()) {
            apply_prim(&mut col, p, nq);
        }
        u.column_mut(k).copy_from_slice(&col);
    }
    u
}

/// Branches `(E0 ψ, E1 ψ)` read off the ancilla before measurement.
pub fn simulate_term_branches(circuit: &Circuit, psi: &CVec) -> (CVec, CVec) {
    let nq = circuit.num_qubits;
    let d = psi.len();
    let mut state = vec![ZERO; 2 * d];
    for b in 0..d {
        state[b << 1] = psi[b];
    }
    for p in circuit.lower().iter().take_while(|p| p.is_unitary()) {
        apply_prim(&mut state, p, nq);
    }
    let b0 = CVec::from_fn(d, |b, _| state[b << 1]);
    let b1 = CVec::from_fn(d, |b, _| state[(b << 1) | 1]);
    (b0, b1)
}

/// Sampled execution with Pauli faults after each unitary primitive:
/// probability `p1` (one-qubit) or `p2` (two-qubit) of a uniformly random
/// Pauli on the touched qubits, which unravels complete depolarisation.
pub fn noisy_term_step<R: Rng + ?Sized>(
    prims: &[Prim],
    nq: usize,
    psi: &CVec,
    p1: f64,
    p2: f64,
    rng: &mut R,
) -> (u8, CVec) {
    let d = psi.len();
    let mut state = vec![ZERO; 2 * d];
    for b in 0..d {
        state[b << 1] = psi[b];
    }
    let paulis = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
    for p in prims.iter().take_while(|p| p.is_unitary()) {
        apply_prim(&mut state, p, nq);
        let qs = p.qubits();
        let rate = if qs.len() == 1 { p1 } else { p2 };
        if rate > 0.0 && rng.gen::<f64>() < rate {
            for &q in &qs {
                apply_pauli_1q(&mut state, q, nq, paulis[rng.gen_range(0..4)]);
            }
        }
    }
    let p0: f64 = (0..d).map(|b| state[b << 1].norm_sqr()).sum();
    let outcome = if rng.gen::<f64>() < p0 { 0u8 } else { 1u8 };
    let norm = if outcome == 0 { p0 } else { 1.0 - p0 }.max(1e-300).sqrt();
    let post = CVec::from_fn(d, |b, _| state[(b << 1) | outcome as usize] / norm);
    (outcome, post)
}

/// Noisy channel of one term circuit by process tomography: returns the
/// transfer matrices of the ancilla-0 and ancilla-1 branches.
pub fn noisy_term_channel(prims: &[Prim], nq: usize, p1: f64, p2: f64) -> (CMat, CMat) {
    let d = 1usize << (nq - 1);
    let big = 2 * d;
    let mut t0 = CMat::zeros(d * d, d * d);
    let mut t1 = CMat::zeros(d * d, d * d);
    let unitary: Vec<&Prim> = prims.iter().take_while(|p| p.is_unitary()).collect();
    for j in 0..d {
        for i in 0..d {
            let mut rho = CMat::zeros(big, big);
            rho[(i << 1, j << 1)] = ONE;
            for p in &unitary {
                conjugate_prim(&mut rho, p, nq);
                let qs = p.qubits();
                let rate = if qs.len() == 1 { p1 } else { p2 };
                if rate > 0.0 {
                    let dep = local_depolarize(&rho, &qs, nq);
                    rho = rho.scale(1.0 - rate) + dep.scale(rate);
                }
            }
            let col = i + j * d;
            for bj in 0..d {
                for bi in 0..d {
                    t0[(bi + bj * d, col)] = rho[(bi << 1, bj << 1)];
                    t1[(bi + bj * d, col)] = rho[((bi << 1) | 1, (bj << 1) | 1)];
                }
            }
        }
    }
    (t0, t1)
}

/// ρ ↦ U ρ U† for one primitive.
fn conjugate_prim(rho: &mut CMat, p: &Prim, nq: usize) {
    let n = rho.nrows();
    let mut col = vec![ZERO; n];
    for k in 0..n {
        col.copy_from_slice(rho.column(k).as_slice());
        apply_prim(&mut col, p, nq);
        rho.column_mut(k).copy_from_slice(&col);
    }
    // right multiplication by U†: rows of ρ transform by conj(U)
    let mut adj = rho.adjoint();
    for k in 0..n {
        col.copy_from_slice(adj.column(k).as_slice());
        apply_prim(&mut col, p, nq);
        adj.column_mut(k).copy_from_slice(&col);
    }
    *rho = adj.adjoint();
}

/// Term indices grouped into layers of pairwise disjoint supports.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSchedule {
    pub layers: Vec<Vec<usize>>,
}

impl SweepSchedule {
    pub fn order(&self) -> Vec<usize> {
        self.layers.iter().flatten().copied().collect()
    }
}

/// Greedy colouring of the term conflict graph in term order.
pub fn schedule_sweep(h: &PauliHamiltonian) -> SweepSchedule {
    let supports: Vec<Vec<usize>> = h.terms().iter().map(|t| t.string.support()).collect();
    let mut colour = vec![usize::MAX; supports.len()];
    for i in 0..supports.len() {
        let used: Vec<usize> = (0..i)
            .filter(|&j| supports_overlap(&supports[i], &supports[j]))
            .map(|j| colour[j])
            .collect();
        colour[i] = (0..).find(|c| !used.contains(c)).expect("colour exists");
    }
    let count = colour.iter().copied().max().map_or(0, |m| m + 1);
    let mut layers = vec![Vec::new(); count];
    for (i, &c) in colour.iter().enumerate() {
        layers[c].push(i);
    }
    SweepSchedule { layers }
}

pub fn supports_overlap(a: &[usize], b: &[usize]) -> bool {
    a.iter().any(|q| b.contains(q))
}

/// One full product sweep: layered order forward, then reversed, with the
/// ancilla reset after every term.
pub fn sweep_circuit(h: &PauliHamiltonian, eps: f64, schedule: &SweepSchedule) -> Result<Circuit> {
    let per_term = term_circuits(h, eps)?;
    let mut order = schedule.order();
    let back: Vec<usize> = order.iter().rev().copied().collect();
    order.extend(back);
    let mut out = Circuit::empty(h.num_qubits());
    for i in order {
        out.gates.extend(per_term[i].gates.iter().cloned());
        out.gates.push(Gate::ResetAncilla);
        out.terms.extend(per_term[i].terms.iter().cloned());
    }
    Ok(out)
}

fn fmt_angle(x: f64) -> String {
    format!("{x:?}")
}

pub fn export_qasm(circuit: &Circuit) -> String {
    let n = circuit.num_system();
    let measurements = circuit
        .gates
        .iter()
        .filter(|g| matches!(g, Gate::MeasureAncilla))
        .count();
    let mut out = String::new();
    out.push_str("OPENQASM 2.0;\n");
    out.push_str("include \"qelib1.inc\";\n");
    out.push_str("// ancilla rotation R(x) = [[cos x, -sin x], [sin x, cos x]] is ry(2x)\n");
    out.push_str("// register q[0] is the most significant qubit\n");
    for t in &circuit.terms {
        out.push_str(&format!(
            "// term {} eps={} kappa_v={}\n",
            t.paulis,
            fmt_angle(t.eps),
            fmt_angle(t.kappa_v)
        ));
    }
    out.push_str(&format!("qreg q[{n}];\nqreg a[1];\n"));
    if measurements > 0 {
        out.push_str(&format!("creg m[{measurements}];\n"));
    }
    let name = |q: usize| {
        if q == n {
            "a[0]".to_string()
        } else {
            format!("q[{q}]")
        }
    };
    let mut mi = 0;
    for p in circuit.lower() {
        let line = match p {
            Prim::H(q) => format!("h {};", name(q)),
            Prim::S(q) => format!("s {};", name(q)),
            Prim::Sdg(q) => format!("sdg {};", name(q)),
            Prim::Cx(a, b) => format!("cx {},{};", name(a), name(b)),
            Prim::Ry(q, t) => format!("ry({}) {};", fmt_angle(t), name(q)),
            Prim::Measure(q) => {
                mi += 1;
                format!("measure {} -> m[{}];", name(q), mi - 1)
            }
            Prim::Reset(q) => format!("reset {};", name(q)),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parses the subset emitted by [`export_qasm`]; returns the total qubit
/// count (system plus ancilla) and the primitive list.
pub fn parse_qasm(text: &str) -> Result<(usize, Vec<Prim>)> {
    let mut n_sys = None;
    let mut prims = Vec::new();
    let bad = |ln: usize, msg: &str| DqeError::Config(format!("qasm line {}: {msg}", ln + 1));
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split("//").next().unwrap_or("").trim();
        if line.is_empty()
            || line.starts_with("OPENQASM")
            || line.starts_with("include")
            || line.starts_with("creg")
            || line.starts_with("qreg a")
        {
            continue;
        }
        let line = line.trim_end_matches(';');
        if let Some(rest) = line.strip_prefix("qreg q[") {
            let v = rest.trim_end_matches(']');
            n_sys = Some(v.parse::<usize>().map_err(|_| bad(ln, "register size"))?);
            continue;
        }
        let n = n_sys.ok_or_else(|| bad(ln, "gate before qreg"))?;
        let qubit = |s: &str| -> Result<usize> {
            let s = s.trim();
            if s == "a[0]" {
                return Ok(n);
            }
            s.strip_prefix("q[")
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(ln, "qubit operand"))
        };
        let (op, args) = line.split_once(' ').ok_or_else(|| bad(ln, "missing operand"))?;
        let prim = if let Some(angle) = op.strip_prefix("ry(") {
            let t: f64 = angle
                .trim_end_matches(')')
                .parse()
                .map_err(|_| bad(ln, "angle"))?;
            Prim::Ry(qubit(args)?, t)
        } else {
            match op {
                "h" => Prim::H(qubit(args)?),
                "s" => Prim::S(qubit(args)?),
                "sdg" => Prim::Sdg(qubit(args)?),
                "cx" => {
                    let (a, b) = args.split_once(',').ok_or_else(|| bad(ln, "cx operands"))?;
                    Prim::Cx(qubit(a)?, qubit(b)?)
                }
                "measure" => {
                    let q = args.split("->").next().unwrap_or("");
                    Prim::Measure(qubit(q)?)
                }
                "reset" => Prim::Reset(qubit(args)?),
                other => return Err(bad(ln, &format!("unsupported gate {other}"))),
            }
        };
        prims.push(prim);
    }
    let n = n_sys.ok_or_else(|| DqeError::Config("qasm: no qreg q".into()))?;
    Ok((n + 1, prims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::PauliWeakMeasurement;
    use crate::linalg::{max_abs_diff, random_state};
    use crate::pauli::{build_heisenberg_chain, PauliString};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn term(s: &str, coeff: f64) -> PauliTerm {
        PauliTerm::new(coeff, s.parse::<PauliString>().unwrap()).unwrap()
    }

    #[test]
    fn dilation_blocks_are_kraus_operators() {
        let w = PauliWeakMeasurement::new("XZ".parse().unwrap(), 1.0, 0.5, 0.2);
        let pi = w.projector().unwrap();
        let u = dilation_unitary(0.5, 0.2, &pi);
        let d = 4;
        let top = u.view((0, 0), (d, d)).into_owned();
        let bottom = u.view((d, 0), (d, d)).into_owned();
        assert!(max_abs_diff(&top, &w.e0_dense().unwrap()) < 1e-14);
        assert!(max_abs_diff(&bottom, &w.e1_dense().unwrap()) < 1e-14);
        assert!(max_abs_diff(&(u.adjoint() * &u), &identity(8)) < 1e-12);
        let id = dilation_unitary(0.3, 0.0, &pi);
        assert!(max_abs_diff(&id, &identity(8)) < 1e-15);
        let (_, phi) = measurement_angles(1.0, 0.4);
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn gate_count() {
        for (s, k) in [("Z", 1), ("XX", 2), ("XYZ", 3)] {
            let c = measurement_circuit(&term(s, 1.0), 0.5, 0.2, None).unwrap();
            assert_eq!(c.gates.len(), 2 * k + 2 * k + 3 + 1);
        }
    }

    #[test]
    fn circuit_matches_instrument_both_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (s, coeff) in [("XX", 1.0), ("YZ", -0.7), ("ZIY", 0.4), ("Y", -1.0)] {
            let t = term(s, coeff);
            let kappa_v = 0.6;
            let c = measurement_circuit(&t, kappa_v, 0.2, None).unwrap();
            let w = PauliWeakMeasurement::new(t.string.clone(), t.sign(), kappa_v, 0.2);
            let e0 = w.e0_dense().unwrap();
            let e1 = w.e1_dense().unwrap();
            for _ in 0..20 {
                let psi = random_state(e0.nrows(), &mut rng);
                let (b0, b1) = simulate_term_branches(&c, &psi);
                assert!((b0 - &e0 * &psi).norm() < 1e-12, "{s}");
                assert!((b1 - &e1 * &psi).norm() < 1e-12, "{s}");
            }
        }
    }

    #[test]
    fn projective_z_limit() {
        let c = measurement_circuit(&term("Z", -1.0), 1.0, 1.0, None).unwrap();
        let zero = CVec::from_vec(vec![ONE, ZERO]);
        let (b0, b1) = simulate_term_branches(&c, &zero);
        // -Z has ground state |0>, Π = |0><0|
        assert!((b0.norm() - 1.0).abs() < 1e-12);
        assert!(b1.norm() < 1e-12);
    }

    #[test]
    fn schedule_chain() {
        let h = build_heisenberg_chain(4, false).unwrap();
        let s = schedule_sweep(&h);
        assert_eq!(s.layers.len(), 6);
        let zz = PauliHamiltonian::from_terms(
            4,
            vec![term("ZZII", 1.0), term("IZZI", 1.0), term("IIZZ", 1.0)],
        )
        .unwrap();
        assert_eq!(schedule_sweep(&zz).layers.len(), 2);
        let disjoint =
            PauliHamiltonian::from_terms(2, vec![term("ZI", 1.0), term("IX", 1.0)]).unwrap();
        assert_eq!(schedule_sweep(&disjoint).layers.len(), 1);
    }

    #[test]
    fn qasm_z_term_body() {
        let c = measurement_circuit(&term("Z", 1.0), 1.0, 0.5, None).unwrap();
        let text = export_qasm(&c);
        let body: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with("//") && !l.contains("qreg") && !l.contains("creg"))
            .skip(2)
            .collect();
        assert_eq!(body.len(), 6);
        assert!(body[0].starts_with("ry("));
        assert!(body[5].starts_with("measure"));
        let empty = export_qasm(&Circuit::empty(2));
        assert!(empty.lines().all(|l| !l.starts_with("ry") && !l.starts_with("creg")));
    }

    #[test]
    fn qasm_round_trip() {
        let h = build_heisenberg_chain(3, false).unwrap();
        for c in term_circuits(&h, 0.3).unwrap() {
            let (nq, prims) = parse_qasm(&export_qasm(&c)).unwrap();
            assert_eq!(nq, c.num_qubits);
            let a = prims_unitary(&c.lower(), nq);
            let b = prims_unitary(&prims, nq);
            assert!(max_abs_diff(&a, &b) < 1e-10);
        }
    }
}
