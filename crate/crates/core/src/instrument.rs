//! Two-outcome instruments, resampling maps, transfer matrices and
//! fixed points of the resulting channels.
//!
//! Vectorisation stacks columns, so `vec(A ρ B†) = (B̄ ⊗ A) vec(ρ)` and the
//! trace functional is `⟨⟨1| = vec(1)†`.

use rand::Rng;

use crate::error::{DqeError, Result};
use crate::linalg::{
    c, eigh, herm_fn, herm_norm, identity, kron, matmul, op_norm, random_state, unvec, vec_of,
    CMat, CVec, C64, ONE, ZERO,
};
use crate::pauli::{check_transfer, PauliString};

#[derive(Debug, Clone, PartialEq)]
pub enum ResamplerKind {
    GlobalMaximallyMixed,
    LocalMaximallyMixed(Vec<usize>),
    Identity,
    CustomCpt(Vec<CMat>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    pub kind: ResamplerKind,
    /// Guaranteed minimum eigenvalue of any output state.
    pub min_support: f64,
}

impl Resampler {
    pub fn global(dim: usize) -> Self {
        Resampler {
            kind: ResamplerKind::GlobalMaximallyMixed,
            min_support: 1.0 / dim as f64,
        }
    }

    pub fn local(qubits: Vec<usize>, num_qubits: usize) -> Self {
        let min_support = if qubits.len() >= num_qubits {
            1.0 / (1usize << num_qubits) as f64
        } else {
            0.0
        };
        Resampler {
            kind: ResamplerKind::LocalMaximallyMixed(qubits),
            min_support,
        }
    }

    pub fn identity() -> Self {
        Resampler {
            kind: ResamplerKind::Identity,
            min_support: 0.0,
        }
    }

    /// Custom channel with a declared minimum output eigenvalue, checked on
    /// `samples` random pure inputs.
    pub fn custom<R: Rng + ?Sized>(
        kraus: Vec<CMat>,
        declared_mu: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = kraus
            .first()
            .ok_or_else(|| DqeError::InvalidInstrument("empty Kraus list".into()))?
            .nrows();
        let mut sum = CMat::zeros(d, d);
        for a in &kraus {
            if a.nrows() != d || a.ncols() != d {
                return Err(DqeError::InvalidInstrument("Kraus shape mismatch".into()));
            }
            sum += a.adjoint() * a;
        }
        let defect = op_norm(&(sum - identity(d)));
        if defect > 1e-10 {
            return Err(DqeError::InvalidInstrument(format!(
                "Kraus completeness defect {defect:e}"
            )));
        }
        for _ in 0..samples {
            let psi = random_state(d, rng);
            let rho = &psi * psi.adjoint();
            let mut out = CMat::zeros(d, d);
            for a in &kraus {
                out += a * &rho * a.adjoint();
            }
            let (vals, _) = eigh(&out);
            if vals[0] < declared_mu - 1e-9 {
                return Err(DqeError::InvalidInstrument(format!(
                    "declared μ = {declared_mu} but observed output eigenvalue {}",
                    vals[0]
                )));
            }
        }
        Ok(Resampler {
            kind: ResamplerKind::CustomCpt(kraus),
            min_support: declared_mu,
        })
    }

    pub fn is_global(&self) -> bool {
        matches!(self.kind, ResamplerKind::GlobalMaximallyMixed)
    }

    pub fn apply_density(&self, rho: &CMat, num_qubits: usize) -> CMat {
        let d = rho.nrows();
        match &self.kind {
            ResamplerKind::GlobalMaximallyMixed => identity(d).scale(rho.trace().re / d as f64),
            ResamplerKind::Identity => rho.clone(),
            ResamplerKind::LocalMaximallyMixed(qs) => local_depolarize(rho, qs, num_qubits),
            ResamplerKind::CustomCpt(ks) => {
                let mut out = CMat::zeros(d, d);
                for a in ks {
                    out += a * rho * a.adjoint();
                }
                out
            }
        }
    }

    pub fn transfer(&self, num_qubits: usize) -> Result<TransferMatrix> {
        check_transfer(num_qubits, "resampler transfer matrix")?;
        let d = 1usize << num_qubits;
        let matrix = match &self.kind {
            ResamplerKind::GlobalMaximallyMixed => {
                let col = vec_of(&identity(d).scale(1.0 / d as f64));
                &col * trace_row(d)
            }
            ResamplerKind::Identity => identity(d * d),
            ResamplerKind::CustomCpt(ks) => return transfer_of_kraus(ks),
            ResamplerKind::LocalMaximallyMixed(_) => {
                transfer_of_map(d, |r| self.apply_density(r, num_qubits))
            }
        };
        Ok(TransferMatrix {
            matrix,
            trace_preserving: true,
        })
    }

    /// Pure-state unravelling.
    pub fn apply_pure<R: Rng + ?Sized>(&self, psi: &CVec, num_qubits: usize, rng: &mut R) -> CVec {
        let d = psi.len();
        match &self.kind {
            ResamplerKind::GlobalMaximallyMixed => {
                let mut out = CVec::zeros(d);
                out[rng.gen_range(0..d)] = ONE;
                out
            }
            ResamplerKind::Identity => psi.clone(),
            ResamplerKind::LocalMaximallyMixed(qs) => local_reset_pure(psi, qs, num_qubits, rng),
            ResamplerKind::CustomCpt(ks) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = None;
                for a in ks {
                    let v = a * psi;
                    let p = v.norm_squared();
                    if p > 0.0 {
                        last = Some((v.clone(), p));
                    }
                    acc += p;
                    if u < acc && p > 0.0 {
                        return v / c(p.sqrt(), 0.0);
                    }
                }
                let (v, p) = last.expect("CPT map has a non-zero branch");
                v / c(p.sqrt(), 0.0)
            }
        }
    }
}

/// `tr_S(ρ) ⊗ 1_S / 2^k` with S placed at its qubit positions.
pub fn local_depolarize(rho: &CMat, qubits: &[usize], n: usize) -> CMat {
    let d = rho.nrows();
    let mask: usize = qubits.iter().map(|&q| 1usize << (n - 1 - q)).sum();
    let k = qubits.len();
    let scale = 1.0 / (1usize << k) as f64;
    let mut out = CMat::zeros(d, d);
    let subs = subset_values(mask);
    for i in 0..d {
        for j in 0..d {
            if (i & mask) != (j & mask) {
                continue;
            }
            // contributes to out[(i', j')] for every shared S value
            let v = rho[(i, j)] * scale;
            let (ri, rj) = (i & !mask, j & !mask);
            for &s in &subs {
                out[(ri | s, rj | s)] += v;
            }
        }
    }
    out
}

fn subset_values(mask: usize) -> Vec<usize> {
    let mut out = vec![0usize];
    let mut s = mask;
    while s != 0 {
        let bit = s & s.wrapping_neg();
        let len = out.len();
        for i in 0..len {
            out.push(out[i] | bit);
        }
        s &= s - 1;
    }
    out
}

fn local_reset_pure<R: Rng + ?Sized>(psi: &CVec, qubits: &[usize], n: usize, rng: &mut R) -> CVec {
    let d = psi.len();
    let mask: usize = qubits.iter().map(|&q| 1usize << (n - 1 - q)).sum();
    let subs = subset_values(mask);
    // Born-sample the support register
    let probs: Vec<f64> = subs
        .iter()
        .map(|&s| {
            (0..d)
                .filter(|b| b & mask == s)
                .map(|b| psi[b].norm_sqr())
                .sum()
        })
        .collect();
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = subs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = i;
            break;
        }
    }
    while probs[pick] <= 0.0 {
        pick = (pick + 1) % subs.len();
    }
    let measured = subs[pick];
    let fresh = subs[rng.gen_range(0..subs.len())];
    let norm = probs[pick].sqrt();
    let mut out = CVec::zeros(d);
    for b in 0..d {
        if b & mask == measured {
            out[(b & !mask) | fresh] = psi[b] / norm;
        }
    }
    out
}

/// Matrix of a linear map on D×D matrices.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub matrix: CMat,
    pub trace_preserving: bool,
}

impl TransferMatrix {
    pub fn new(matrix: CMat) -> Self {
        let mut t = TransferMatrix {
            matrix,
            trace_preserving: false,
        };
        t.trace_preserving = t.tp_defect() < 1e-9;
        t
    }

    pub fn dim(&self) -> usize {
        (self.matrix.nrows() as f64).sqrt().round() as usize
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        unvec(&(&self.matrix * vec_of(rho)), rho.nrows())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &TransferMatrix) -> TransferMatrix {
        TransferMatrix::new(matmul(&self.matrix, &other.matrix))
    }

    pub fn add(&self, other: &TransferMatrix) -> TransferMatrix {
        TransferMatrix::new(&self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &TransferMatrix) -> TransferMatrix {
        TransferMatrix::new(&self.matrix - &other.matrix)
    }

    /// max |(⟨⟨1|T - ⟨⟨1|)_k|
    pub fn tp_defect(&self) -> f64 {
        let d = self.dim();
        let one = trace_row(d);
        let lhs = &one * &self.matrix;
        lhs.iter()
            .zip(one.iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).norm()))
    }

    pub fn spectral_radius(&self) -> f64 {
        let (_, t) = nalgebra::linalg::Schur::new(self.matrix.clone()).unpack();
        t.diagonal().iter().fold(0.0f64, |a, z| a.max(z.norm()))
    }

    /// Operator 2-norm of the matrix, the "transfer norm".
    pub fn norm(&self) -> f64 {
        op_norm(&self.matrix)
    }
}

/// ⟨⟨1| as a row vector of length D².
pub fn trace_row(d: usize) -> CMat {
    let v = vec_of(&identity(d));
    CMat::from_fn(1, d * d, |_, k| v[k].conj())
}

pub fn transfer_of_kraus(ops: &[CMat]) -> Result<TransferMatrix> {
    let d = ops
        .first()
        .ok_or_else(|| DqeError::InvalidInstrument("empty Kraus list".into()))?
        .nrows();
    check_transfer(d.trailing_zeros() as usize, "transfer matrix")?;
    let mut m = CMat::zeros(d * d, d * d);
    for a in ops {
        m += kron(&a.conjugate(), a);
    }
    Ok(TransferMatrix::new(m))
}

/// Transfer matrix of an arbitrary linear map, column by column.
pub fn transfer_of_map(d: usize, f: impl Fn(&CMat) -> CMat) -> CMat {
    let mut m = CMat::zeros(d * d, d * d);
    let mut basis = CMat::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            basis[(i, j)] = ONE;
            let out = f(&basis);
            basis[(i, j)] = ZERO;
            m.column_mut(i + j * d).copy_from(&vec_of(&out));
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct Instrument {
    pub e0: CMat,
    pub e1: CMat,
    pub resampler: Resampler,
    pub support: Option<Vec<usize>>,
    pub num_qubits: usize,
}

/// Principal square root of `1 - E0†E0`.
pub fn failure_kraus(e0: &CMat) -> CMat {
    let d = e0.nrows();
    let comp = identity(d) - e0.adjoint() * e0;
    let (vals, vecs) = eigh(&comp);
    herm_fn(&vals, &vecs, |x| x.max(0.0).sqrt())
}

pub fn make_instrument(
    e0: CMat,
    resampler: Resampler,
    support: Option<Vec<usize>>,
) -> Result<Instrument> {
    let norm = op_norm(&e0);
    if norm > 1.0 + 1e-12 {
        return Err(DqeError::InvalidAgsp(format!(
            "success operator norm {norm} exceeds 1"
        )));
    }
    let d = e0.nrows();
    let num_qubits = d.trailing_zeros() as usize;
    let e1 = failure_kraus(&e0);
    Ok(Instrument {
        e0,
        e1,
        resampler,
        support,
        num_qubits,
    })
}

/// `E0 = (1-ε)1 + εK`.
pub fn instrument_from_agsp(k: &CMat, eps: f64, resampler: Resampler) -> Result<Instrument> {
    let d = k.nrows();
    make_instrument(identity(d).scale(1.0 - eps) + k.scale(eps), resampler, None)
}

/// `E0 = (1-ε)1 + εκ_v k_v` for one local factor.
pub fn instrument_from_factor(
    k: &CMat,
    weight: f64,
    eps: f64,
    resampler: Resampler,
    support: Vec<usize>,
) -> Result<Instrument> {
    let d = k.nrows();
    make_instrument(
        identity(d).scale(1.0 - eps) + k.scale(eps * weight),
        resampler,
        Some(support),
    )
}

impl Instrument {
    pub fn dim(&self) -> usize {
        self.e0.nrows()
    }

    pub fn completeness_defect(&self) -> f64 {
        let d = self.dim();
        op_norm(&(self.e0.adjoint() * &self.e0 + self.e1.adjoint() * &self.e1 - identity(d)))
    }

    pub fn apply_sampled<R: Rng + ?Sized>(&self, psi: &CVec, rng: &mut R) -> (u8, CVec) {
        let v0 = &self.e0 * psi;
        let p0 = v0.norm_squared();
        if rng.gen::<f64>() < p0 {
            return (0, v0 / c(p0.sqrt(), 0.0));
        }
        let v1 = &self.e1 * psi;
        let p1 = v1.norm_squared();
        let after = if p1 < 1e-15 {
            log::debug!("failure branch with probability {p1:e}; resampling input directly");
            psi.clone()
        } else {
            v1 / c(p1.sqrt(), 0.0)
        };
        (1, self.resampler.apply_pure(&after, self.num_qubits, rng))
    }

    pub fn success_transfer(&self) -> Result<TransferMatrix> {
        transfer_of_kraus(std::slice::from_ref(&self.e0))
    }

    /// ρ ↦ R(E1 ρ E1†).
    pub fn failure_transfer(&self) -> Result<TransferMatrix> {
        let d = self.dim();
        if self.resampler.is_global() {
            check_transfer(self.num_qubits, "transfer matrix")?;
            let m = self.e1.adjoint() * &self.e1;
            let col = vec_of(&identity(d).scale(1.0 / d as f64));
            // tr(M ρ) = Σ_ij M_ji ρ_ij
            let row = CMat::from_fn(1, d * d, |_, k| m[(k / d, k % d)]);
            return Ok(TransferMatrix::new(col * row));
        }
        let f = transfer_of_kraus(std::slice::from_ref(&self.e1))?;
        Ok(self.resampler.transfer(self.num_qubits)?.compose(&f))
    }
}

/// Weak measurement of one Pauli factor, applied in O(D) per state.
#[derive(Debug, Clone)]
pub struct PauliWeakMeasurement {
    pub string: PauliString,
    pub sign: f64,
    pub weight: f64,
    pub eps: f64,
    pub support: Vec<usize>,
}

impl PauliWeakMeasurement {
    pub fn new(string: PauliString, sign: f64, weight: f64, eps: f64) -> Self {
        let support = string.support();
        PauliWeakMeasurement {
            string,
            sign,
            weight,
            eps,
            support,
        }
    }

    /// Eigenvalues of E0 on (Π, 1-Π).
    pub fn e0_values(&self) -> (f64, f64) {
        (1.0 - self.eps * (1.0 - self.weight), 1.0 - self.eps)
    }

    pub fn e1_values(&self) -> (f64, f64) {
        let (a, b) = self.e0_values();
        ((1.0 - a * a).max(0.0).sqrt(), (1.0 - b * b).max(0.0).sqrt())
    }

    /// `(aΠ + b(1-Π)) psi` with `Π = (1 - s h)/2`.
    pub fn apply_diag(&self, a: f64, b: f64, psi: &[C64], scratch: &mut [C64], out: &mut [C64]) {
        self.string.apply_into(psi, scratch);
        let p = (a + b) / 2.0;
        let q = -self.sign * (a - b) / 2.0;
        for ((o, x), h) in out.iter_mut().zip(psi).zip(scratch.iter()) {
            *o = x * p + h * q;
        }
    }

    pub fn projector(&self) -> Result<CMat> {
        let h = self.string.to_dense()?;
        Ok((identity(h.nrows()) - h.scale(self.sign)).scale(0.5))
    }

    pub fn e0_dense(&self) -> Result<CMat> {
        let pi = self.projector()?;
        let (a, b) = self.e0_values();
        let d = pi.nrows();
        Ok(pi.scale(a) + (identity(d) - &pi).scale(b))
    }

    pub fn e1_dense(&self) -> Result<CMat> {
        let pi = self.projector()?;
        let (a, b) = self.e1_values();
        let d = pi.nrows();
        Ok(pi.scale(a) + (identity(d) - &pi).scale(b))
    }

    pub fn instrument(&self, resampler: Resampler) -> Result<Instrument> {
        let e0 = self.e0_dense()?;
        let e1 = self.e1_dense()?;
        let num_qubits = self.string.num_qubits();
        Ok(Instrument {
            e0,
            e1,
            resampler,
            support: Some(self.support.clone()),
            num_qubits,
        })
    }
}

/// Channel ρ ↦ KρK + tr((1-K²)ρ) 1/D.
pub fn global_channel_transfer(k: &CMat) -> Result<TransferMatrix> {
    let inst = Instrument {
        e0: k.clone(),
        e1: failure_kraus(k),
        resampler: Resampler::global(k.nrows()),
        support: None,
        num_qubits: k.nrows().trailing_zeros() as usize,
    };
    Ok(inst.success_transfer()?.add(&inst.failure_transfer()?))
}

/// ρ∞ = (1-K²)^{-1}/tr(1-K²)^{-1}.
pub fn fixed_point_direct(k: &CMat) -> Result<CMat> {
    let norm = herm_norm(k);
    if norm >= 1.0 - 1e-8 {
        return Err(DqeError::SingularFixedPoint { norm });
    }
    let (vals, vecs) = eigh(k);
    let x = herm_fn(&vals, &vecs, |l| 1.0 / (1.0 - l * l));
    let tr = x.trace().re;
    Ok(x.scale(1.0 / tr))
}

pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let diff = a - b;
    let h = (&diff + diff.adjoint()).scale(0.5);
    let (vals, _) = eigh(&h);
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}

/// Power iteration from 1/D until successive iterates are `tol`-close.
pub fn fixed_point_iterate(map: &TransferMatrix, tol: f64, max_iters: usize) -> Result<CMat> {
    fixed_point_iterate_from(map, None, tol, max_iters)
}

pub fn fixed_point_iterate_from(
    map: &TransferMatrix,
    start: Option<&CMat>,
    tol: f64,
    max_iters: usize,
) -> Result<CMat> {
    if map.tp_defect() > 1e-8 {
        return Err(DqeError::InvalidInstrument(
            "power iteration needs a trace-preserving map".into(),
        ));
    }
    let d = map.dim();
    let mut rho = match start {
        Some(s) => s.clone(),
        None => identity(d).scale(1.0 / d as f64),
    };
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = map.apply(&rho);
        residual = trace_distance(&next, &rho);
        rho = next;
        if residual < tol {
            let h = (&rho + rho.adjoint()).scale(0.5);
            return Ok(h);
        }
    }
    Err(DqeError::Convergence {
        iterations: max_iters,
        residual,
    })
}
