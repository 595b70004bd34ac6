//! Pauli strings, Pauli-sum Hamiltonians and exact diagonalisation.
//!
//! Qubit 0 is the most significant tensor factor: basis index bit `n-1-q`
//! holds qubit `q`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DqeError, Result};
use crate::linalg::{c, eigh, projector_from_columns, CMat, CVec, C64, ONE, ZERO};

pub const DEFAULT_DENSE_LIMIT: usize = 12;
pub const DEFAULT_TRANSFER_LIMIT: usize = 6;

/// Dense qubit cap, overridable through `DQE_DENSE_LIMIT`.
pub fn dense_limit() -> usize {
    std::env::var("DQE_DENSE_LIMIT")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_DENSE_LIMIT)
}

pub fn check_dense(n: usize, what: &str) -> Result<()> {
    let limit = dense_limit();
    if n > limit {
        return Err(DqeError::ResourceLimit {
            what: what.to_string(),
            requested: n,
            limit,
        });
    }
    Ok(())
}

pub fn check_transfer(n: usize, what: &str) -> Result<()> {
    if n > DEFAULT_TRANSFER_LIMIT {
        return Err(DqeError::ResourceLimit {
            what: what.to_string(),
            requested: n,
            limit: DEFAULT_TRANSFER_LIMIT,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(ch: char) -> Option<Pauli> {
        match ch.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn matrix(self) -> CMat {
        let m = |a: [C64; 4]| CMat::from_row_slice(2, 2, &a);
        match self {
            Pauli::I => m([ONE, ZERO, ZERO, ONE]),
            Pauli::X => m([ZERO, ONE, ONE, ZERO]),
            Pauli::Y => m([ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO]),
            Pauli::Z => m([ONE, ZERO, ZERO, -ONE]),
        }
    }
}

/// Tensor product of single-qubit Paulis, stored as bit masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    factors: Vec<Pauli>,
    xmask: u64,
    zmask: u64,
    ny: u32,
}

impl PauliString {
    pub fn new(factors: Vec<Pauli>) -> Result<Self> {
        let n = factors.len();
        if n == 0 || n > 63 {
            return Err(DqeError::InvalidInstance(format!(
                "Pauli string length {n} outside 1..=63"
            )));
        }
        let mut xmask = 0u64;
        let mut zmask = 0u64;
        let mut ny = 0;
        for (q, p) in factors.iter().enumerate() {
            let bit = 1u64 << (n - 1 - q);
            match p {
                Pauli::I => {}
                Pauli::X => xmask |= bit,
                Pauli::Z => zmask |= bit,
                Pauli::Y => {
                    xmask |= bit;
                    zmask |= bit;
                    ny += 1;
                }
            }
        }
        Ok(PauliString {
            factors,
            xmask,
            zmask,
            ny,
        })
    }

    /// Single non-identity factors placed on an `n`-qubit register.
    pub fn from_sparse(n: usize, ops: &[(usize, Pauli)]) -> Result<Self> {
        let mut factors = vec![Pauli::I; n];
        for &(q, p) in ops {
            if q >= n {
                return Err(DqeError::InvalidInstance(format!(
                    "qubit {q} out of range for {n} qubits"
                )));
            }
            factors[q] = p;
        }
        PauliString::new(factors)
    }

    pub fn num_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Pauli] {
        &self.factors
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.factors.len())
            .filter(|&q| self.factors[q] != Pauli::I)
            .collect()
    }

    pub fn weight(&self) -> usize {
        self.factors.iter().filter(|&&p| p != Pauli::I).count()
    }

    pub fn is_identity(&self) -> bool {
        self.xmask == 0 && self.zmask == 0
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let a = (self.xmask & other.zmask).count_ones();
        let b = (self.zmask & other.xmask).count_ones();
        (a + b) % 2 == 0
    }

    fn phase(&self) -> C64 {
        match self.ny % 4 {
            0 => ONE,
            1 => c(0.0, 1.0),
            2 => -ONE,
            _ => c(0.0, -1.0),
        }
    }

    /// The single non-zero of column `b`: `P|b> = val |row>`.
    pub fn column_entry(&self, b: usize) -> (usize, C64) {
        let sign = if (b as u64 & self.zmask).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        (b ^ self.xmask as usize, self.phase() * sign)
    }

    /// `out = P psi`, touching each amplitude once.
    pub fn apply_into(&self, psi: &[C64], out: &mut [C64]) {
        let ph = self.phase();
        for (b, amp) in psi.iter().enumerate() {
            let sign = if (b as u64 & self.zmask).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            out[b ^ self.xmask as usize] = amp * ph * sign;
        }
    }

    pub fn apply(&self, psi: &CVec) -> CVec {
        let mut out = CVec::zeros(psi.len());
        self.apply_into(psi.as_slice(), out.as_mut_slice());
        out
    }

    /// `<psi|P|psi>`, real because P is Hermitian.
    pub fn expectation(&self, psi: &[C64]) -> f64 {
        let ph = self.phase();
        let mut acc = ZERO;
        for (b, amp) in psi.iter().enumerate() {
            let sign = if (b as u64 & self.zmask).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            acc += psi[b ^ self.xmask as usize].conj() * amp * ph * sign;
        }
        acc.re
    }

    pub fn to_dense(&self) -> Result<CMat> {
        let n = self.num_qubits();
        check_dense(n, "Pauli string dense materialisation")?;
        let d = 1usize << n;
        let ph = self.phase();
        let mut m = CMat::zeros(d, d);
        for b in 0..d {
            let sign = if (b as u64 & self.zmask).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            m[(b ^ self.xmask as usize, b)] = ph * sign;
        }
        Ok(m)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.factors {
            write!(f, "{}", p.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = DqeError;

    fn from_str(s: &str) -> Result<Self> {
        let factors = s
            .trim()
            .chars()
            .enumerate()
            .map(|(i, ch)| {
                Pauli::from_char(ch).ok_or_else(|| {
                    DqeError::InvalidInstance(format!("bad Pauli letter {ch:?} at position {i}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(factors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PauliTerm {
    pub coeff: f64,
    pub string: PauliString,
}

impl PauliTerm {
    pub fn new(coeff: f64, string: PauliString) -> Result<Self> {
        if !coeff.is_finite() || coeff == 0.0 {
            return Err(DqeError::InvalidInstance(format!(
                "term coefficient must be finite and non-zero, got {coeff}"
            )));
        }
        Ok(PauliTerm { coeff, string })
    }

    pub fn sign(&self) -> f64 {
        self.coeff.signum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PauliHamiltonian {
    num_qubits: usize,
    terms: Vec<PauliTerm>,
    kappa: f64,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    coeff: f64,
    paulis: String,
}

#[derive(Serialize, Deserialize)]
struct HamiltonianJson {
    num_qubits: usize,
    terms: Vec<TermJson>,
}

impl PauliHamiltonian {
    /// Builds a Hamiltonian, merging repeated strings and dropping zero sums.
    pub fn from_terms(num_qubits: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        if num_qubits == 0 {
            return Err(DqeError::InvalidInstance("zero qubits".into()));
        }
        let mut merged: Vec<PauliTerm> = Vec::new();
        for t in terms {
            if t.string.num_qubits() != num_qubits {
                return Err(DqeError::InvalidInstance(format!(
                    "term {} acts on {} qubits, Hamiltonian has {}",
                    t.string,
                    t.string.num_qubits(),
                    num_qubits
                )));
            }
            if !t.coeff.is_finite() {
                return Err(DqeError::InvalidInstance("non-finite coefficient".into()));
            }
            match merged.iter_mut().find(|m| m.string == t.string) {
                Some(m) => m.coeff += t.coeff,
                None => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff.abs() > 1e-14);
        if merged.is_empty() {
            return Err(DqeError::InvalidInstance("Hamiltonian has no terms".into()));
        }
        let kappa = merged.iter().map(|t| t.coeff.abs()).sum();
        Ok(PauliHamiltonian {
            num_qubits,
            terms: merged,
            kappa,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dimension(&self) -> usize {
        1usize << self.num_qubits
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn to_dense(&self) -> Result<CMat> {
        check_dense(self.num_qubits, "Hamiltonian dense materialisation")?;
        let d = self.dimension();
        let mut h = CMat::zeros(d, d);
        for t in &self.terms {
            let s = &t.string;
            let ph = s.phase() * t.coeff;
            for b in 0..d {
                let sign = if (b as u64 & s.zmask).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                h[(b ^ s.xmask as usize, b)] += ph * sign;
            }
        }
        Ok(h)
    }

    /// `H psi` without forming the dense matrix.
    pub fn apply(&self, psi: &CVec) -> CVec {
        let mut out = CVec::zeros(psi.len());
        let mut tmp = CVec::zeros(psi.len());
        for t in &self.terms {
            t.string.apply_into(psi.as_slice(), tmp.as_mut_slice());
            out.axpy(c(t.coeff, 0.0), &tmp, ONE);
        }
        out
    }

    pub fn energy(&self, psi: &[C64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.string.expectation(psi))
            .sum()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: HamiltonianJson = serde_json::from_str(s)?;
        let terms = raw
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let string: PauliString = t.paulis.parse().map_err(|e| {
                    DqeError::InvalidInstance(format!("terms[{i}].paulis: {e}"))
                })?;
                PauliTerm::new(t.coeff, string)
                    .map_err(|e| DqeError::InvalidInstance(format!("terms[{i}].coeff: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PauliHamiltonian::from_terms(raw.num_qubits, terms)
    }

    pub fn to_json_string(&self) -> String {
        let raw = HamiltonianJson {
            num_qubits: self.num_qubits,
            terms: self
                .terms
                .iter()
                .map(|t| TermJson {
                    coeff: t.coeff,
                    paulis: t.string.to_string(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("serialisable")
    }
}

/// Nearest-neighbour XX+YY+ZZ chain.
pub fn build_heisenberg_chain(n: usize, periodic: bool) -> Result<PauliHamiltonian> {
    if n < 2 {
        return Err(DqeError::InvalidInstance(format!(
            "Heisenberg chain needs at least 2 qubits, got {n}"
        )));
    }
    let mut bonds: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if periodic {
        bonds.push((n - 1, 0));
    }
    let mut terms = Vec::with_capacity(3 * bonds.len());
    for (i, j) in bonds {
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            terms.push(PauliTerm::new(1.0, PauliString::from_sparse(n, &[(i, p), (j, p)])?)?);
        }
    }
    PauliHamiltonian::from_terms(n, terms)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub vars: Vec<usize>,
    /// Forbidden assignment, one '0'/'1' per variable.
    pub forbidden: String,
}

/// Sum of projectors onto forbidden clause assignments, expanded over Z/I.
pub fn build_maxsat(num_vars: usize, clauses: &[Clause]) -> Result<PauliHamiltonian> {
    if num_vars == 0 {
        return Err(DqeError::InvalidInstance("MAXSAT needs variables".into()));
    }
    let mut terms = Vec::new();
    for (ci, cl) in clauses.iter().enumerate() {
        let bits: Vec<char> = cl.forbidden.chars().collect();
        if bits.len() != cl.vars.len() || cl.vars.is_empty() {
            return Err(DqeError::InvalidInstance(format!(
                "clause {ci}: forbidden string length {} does not match {} variables",
                bits.len(),
                cl.vars.len()
            )));
        }
        for &v in &cl.vars {
            if v >= num_vars {
                return Err(DqeError::InvalidInstance(format!(
                    "clause {ci}: variable {v} out of range for {num_vars} variables"
                )));
            }
        }
        let k = cl.vars.len();
        // |b><b| = (1 + (-1)^b Z)/2 per variable; expand the product.
        for subset in 0u32..(1 << k) {
            let mut coeff = 1.0 / (1u64 << k) as f64;
            let mut ops = Vec::new();
            for (j, (&v, &b)) in cl.vars.iter().zip(bits.iter()).enumerate() {
                if subset >> j & 1 == 1 {
                    match b {
                        '0' => {}
                        '1' => coeff = -coeff,
                        other => {
                            return Err(DqeError::InvalidInstance(format!(
                                "clause {ci}: bad bit {other:?}"
                            )))
                        }
                    }
                    ops.push((v, Pauli::Z));
                } else if b != '0' && b != '1' {
                    return Err(DqeError::InvalidInstance(format!("clause {ci}: bad bit {b:?}")));
                }
            }
            let string = PauliString::from_sparse(num_vars, &ops)?;
            terms.push(PauliTerm { coeff, string });
        }
    }
    PauliHamiltonian::from_terms(num_vars, terms)
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    pub lambda0: f64,
    /// Next distinct eigenvalue; `None` when the spectrum is a single level.
    pub lambda1: Option<f64>,
    pub norm: f64,
    pub ground_projector: CMat,
    pub degeneracy: usize,
    pub dimension: usize,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl SpectralData {
    pub fn gap(&self) -> Option<f64> {
        self.lambda1.map(|l1| l1 - self.lambda0)
    }

    pub fn degeneracy_tolerance(&self) -> f64 {
        1e-9 * self.norm.max(1.0)
    }

    /// One ground eigenvector.
    pub fn ground_state(&self) -> CVec {
        self.eigenvectors.column(0).into_owned()
    }

    pub fn overlap(&self, psi: &CVec) -> f64 {
        (0..self.degeneracy)
            .map(|k| self.eigenvectors.column(k).dotc(psi).norm_sqr())
            .sum()
    }
}

pub fn diagonalize(h: &PauliHamiltonian) -> Result<SpectralData> {
    let dense = h.to_dense()?;
    diagonalize_dense(&dense)
}

pub fn diagonalize_dense(dense: &CMat) -> Result<SpectralData> {
    let d = dense.nrows();
    let (vals, vecs) = eigh(dense);
    let norm = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * norm.max(1.0);
    let lambda0 = vals[0];
    let degeneracy = vals.iter().take_while(|&&v| v <= lambda0 + tol).count();
    let lambda1 = vals.get(degeneracy).copied();
    let cols: Vec<usize> = (0..degeneracy).collect();
    let ground_projector = projector_from_columns(&vecs, &cols);
    Ok(SpectralData {
        lambda0,
        lambda1,
        norm,
        ground_projector,
        degeneracy,
        dimension: d,
        eigenvalues: vals,
        eigenvectors: vecs,
    })
}

/// Bit of qubit `q` in basis index `b` for an `n`-qubit register.
pub fn qubit_bit(b: usize, q: usize, n: usize) -> usize {
    (b >> (n - 1 - q)) & 1
}
