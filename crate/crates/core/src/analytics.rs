//! Exact expectations of the stopped process via transfer matrices.

use crate::agsp::AgspParams;
use crate::error::{DqeError, Result};
use crate::instrument::{local_depolarize, trace_row, PauliWeakMeasurement, TransferMatrix};
use crate::linalg::{c, eigh, herm_fn, identity, matmul, matpow, unvec, vec_of, CMat, CVec, ZERO};
use crate::pauli::check_transfer;
use crate::trajectory::{AgspMode, ResamplingMode, System};

const PIVOT_RATIO_MIN: f64 = 1e-15;
const TRACE_TOL: f64 = 1e-6;
const TP_TOL: f64 = 1e-9;

/// Bound value plus a flag set when the bound's precondition fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub value: f64,
    pub vacuous: bool,
}

/// Relative weights (|λ_i|/max|λ|)^{2n}, i.e. K^{2n} up to scale.
fn scaled_powers(vals: &[f64], n: usize) -> Result<(Vec<f64>, f64)> {
    let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return Err(DqeError::IllConditioned(
            "tr K^{2n} vanishes (K = 0)".into(),
        ));
    }
    let w = vals
        .iter()
        .map(|v| {
            let r = v.abs() / max;
            if n > 500 {
                (2.0 * n as f64 * r.ln()).exp()
            } else {
                r.powi(2 * n as i32)
            }
        })
        .collect();
    Ok((w, max))
}

/// E(ρ_n) = K^{2n}/tr K^{2n} from the maximally mixed start.
pub fn expected_state_global(k: &CMat, n: usize) -> Result<CMat> {
    let d = k.nrows();
    if n == 0 {
        return Ok(identity(d).scale(1.0 / d as f64));
    }
    let (vals, vecs) = eigh(k);
    let (w, _) = scaled_powers(&vals, n)?;
    let total: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
    Ok(herm_fn(&probs, &vecs, |x| x))
}

pub fn overlap_with(rho: &CMat, pi0: &CMat) -> f64 {
    (pi0 * rho).trace().re
}

/// E(τ_n) = Σ_{k<n} tr K^{2k} / tr K^{2n}.
pub fn expected_tau_global(k: &CMat, n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let (vals, _) = eigh(k);
    let (w, max) = scaled_powers(&vals, n)?;
    let log_den = 2.0 * n as f64 * max.ln() + w.iter().sum::<f64>().ln();
    let num: f64 = vals
        .iter()
        .map(|v| {
            let x = v * v;
            if (1.0 - x).abs() < 1e-12 {
                n as f64
            } else {
                (1.0 - x.powi(n as i32)) / (1.0 - x)
            }
        })
        .sum();
    Ok((num.ln() - log_den).exp())
}

/// (1/Γⁿ)(n + (1-Δⁿ)/(1-Δ)·(D/N - 1)).
pub fn stopping_time_upper_bound(p: &AgspParams, d: usize, nn: usize, n: usize) -> f64 {
    let (g, dl) = (p.gamma(), p.delta());
    let ratio = d as f64 / nn as f64;
    let geo = if (1.0 - dl).abs() < 1e-15 {
        n as f64
    } else {
        (1.0 - dl.powi(n as i32)) / (1.0 - dl)
    };
    (n as f64 + geo * (ratio - 1.0)) / g.powi(n as i32)
}

/// 1 - ε - (D/N)(Δ/Γ)ⁿ, clamped to [0, 1].
pub fn overlap_lower_bound(p: &AgspParams, d: usize, nn: usize, n: usize) -> Bound {
    let (g, dl) = (p.gamma(), p.delta());
    if g <= dl {
        return Bound {
            value: 0.0,
            vacuous: true,
        };
    }
    let v = 1.0 - p.epsilon - (d as f64 / nn as f64) * (dl / g).powi(n as i32);
    Bound {
        value: v.clamp(0.0, 1.0),
        vacuous: false,
    }
}

/// Smallest n with (D/N)(Δ/Γ)ⁿ ≤ target.
pub fn depth_estimate(p: &AgspParams, d: usize, nn: usize, target: f64) -> Result<usize> {
    let (g, dl) = (p.gamma(), p.delta());
    if g <= dl {
        return Err(DqeError::Parameter(
            "Γ ≤ Δ: no finite depth reaches the target".into(),
        ));
    }
    if !(target > 0.0) {
        return Err(DqeError::Parameter("target error must be positive".into()));
    }
    let ratio = d as f64 / nn as f64;
    if ratio <= target {
        return Ok(0);
    }
    if dl == 0.0 {
        return Ok(1);
    }
    let q = dl / g;
    let mut n = ((ratio / target).ln() / (1.0 / q).ln()).ceil().max(0.0) as usize;
    while n > 0 && ratio * q.powi(n as i32 - 1) <= target {
        n -= 1;
    }
    while ratio * q.powi(n as i32) > target {
        n += 1;
    }
    Ok(n)
}

/// (1-Δ)/((Γ-Δ) + (D/N)(1-Γ)) - ε.
pub fn fixed_point_overlap_bound(p: &AgspParams, d: usize, nn: usize) -> f64 {
    let (g, dl) = (p.gamma(), p.delta());
    let den = (g - dl) + (d as f64 / nn as f64) * (1.0 - g);
    if den <= 0.0 {
        return 0.0;
    }
    (1.0 - dl) / den - p.epsilon
}

/// Σ_{k<n} Eᵏ and Eⁿ by doubling.
pub fn geometric_sum(e: &CMat, n: usize) -> (CMat, CMat) {
    let dim = e.nrows();
    if n == 0 {
        return (CMat::zeros(dim, dim), identity(dim));
    }
    if n % 2 == 0 {
        let (s, p) = geometric_sum(e, n / 2);
        let s2 = &s + matmul(&p, &s);
        (s2, matmul(&p, &p))
    } else {
        let (s, p) = geometric_sum(e, n - 1);
        (identity(dim) + matmul(e, &s), matmul(e, &p))
    }
}

/// LU-based solver for W = 1 - E1·Σ_{k<n} E0ᵏ.
pub struct GeneralAnalytics {
    pub e0: CMat,
    pub e1: CMat,
    pub n: usize,
    pub e0n: CMat,
    lu: nalgebra::LU<crate::linalg::C64, nalgebra::Dyn, nalgebra::Dyn>,
    // Row 0 of W replaced by s·⟨⟨1|W when E0 + E1 is trace preserving.
    trace_row_scale: Option<f64>,
    pub pivot_ratio: f64,
}

impl GeneralAnalytics {
    pub fn new(e0: &TransferMatrix, e1: &TransferMatrix, n: usize) -> Result<Self> {
        let dim = e0.matrix.nrows();
        if e1.matrix.nrows() != dim {
            return Err(DqeError::InvalidInstrument("E0/E1 dimension mismatch".into()));
        }
        let (s, e0n) = geometric_sum(&e0.matrix, n);
        let mut w = identity(dim) - matmul(&e1.matrix, &s);
        // For a trace-preserving pair, ⟨⟨1|W = ⟨⟨1|E0ⁿ exactly. Forming it from
        // W loses everything to cancellation once E0ⁿ is below machine epsilon,
        // so the exact row goes in instead (an invertible row operation).
        let trace_row_scale = if e0.add(e1).tp_defect() < TP_TOL {
            let d = e0.dim();
            let exact = &trace_row(d) * &e0n;
            let max = exact.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            if max > 0.0 {
                let scale = 1.0 / max;
                for j in 0..dim {
                    w[(0, j)] = exact[(0, j)] * c(scale, 0.0);
                }
                Some(scale)
            } else {
                None
            }
        } else {
            None
        };
        let lu = w.lu();
        let diag = lu.u().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), z| (lo.min(z.norm()), hi.max(z.norm())));
        let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
        if pivot_ratio < PIVOT_RATIO_MIN {
            return Err(DqeError::IllConditioned(format!(
                "W is numerically singular (pivot ratio {pivot_ratio:.3e}); \
                 the failure branch cannot return weight to E0"
            )));
        }
        Ok(GeneralAnalytics {
            e0: e0.matrix.clone(),
            e1: e1.matrix.clone(),
            n,
            e0n,
            lu,
            trace_row_scale,
            pivot_ratio,
        })
    }

    fn transform_rhs(&self, b: &mut CMat) {
        if let Some(scale) = self.trace_row_scale {
            let d = self.d();
            for col in 0..b.ncols() {
                let tr: crate::linalg::C64 = (0..d).map(|i| b[(i * d + i, col)]).sum();
                b[(0, col)] = tr * c(scale, 0.0);
            }
        }
    }

    fn solve(&self, b: &CVec) -> Result<CVec> {
        let mut m = CMat::from_column_slice(b.len(), 1, b.as_slice());
        self.transform_rhs(&mut m);
        let x = self
            .lu
            .solve(&m)
            .ok_or_else(|| DqeError::IllConditioned("LU solve failed".into()))?;
        Ok(x.column(0).into_owned())
    }

    fn d(&self) -> usize {
        (self.e0.nrows() as f64).sqrt().round() as usize
    }

    /// E0ⁿ W⁻¹ |ρ0⟩⟩, checked to have unit trace.
    pub fn expected_state(&self, rho0: &CMat) -> Result<CMat> {
        let d = self.d();
        let x = self.solve(&vec_of(rho0))?;
        let rho = unvec(&(&self.e0n * x), d);
        let tr = rho.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(DqeError::IllConditioned(format!(
                "expected stopped state has trace {tr}"
            )));
        }
        Ok(rho)
    }

    /// ⟨⟨1|[n E0ⁿW⁻¹ + E0ⁿW⁻¹ E1 T W⁻¹]|ρ0⟩⟩ with T = Σ_{j<n}(j+1)E0ʲ.
    pub fn expected_tau(&self, rho0: &CMat) -> Result<f64> {
        let d = self.d();
        let one = trace_row(d);
        let x = self.solve(&vec_of(rho0))?;
        let mut tx = CVec::zeros(x.len());
        let mut v = x.clone();
        for j in 0..self.n {
            tx += &v * c((j + 1) as f64, 0.0);
            v = &self.e0 * v;
        }
        let u = self.solve(&(&self.e1 * tx))?;
        let first = (&one * (&self.e0n * &x))[(0, 0)] * c(self.n as f64, 0.0);
        let second = (&one * (&self.e0n * u))[(0, 0)];
        let tau = (first + second).re;
        // Every stop needs at least n steps.
        if !tau.is_finite() || tau < self.n as f64 * (1.0 - TRACE_TOL) {
            return Err(DqeError::IllConditioned(format!(
                "expected stopping time {tau} is not consistent with n = {}",
                self.n
            )));
        }
        Ok(tau)
    }

    /// N = E0ⁿ W⁻¹ as a matrix.
    pub fn stopped_map(&self) -> Result<CMat> {
        let dim = self.e0.nrows();
        let mut rhs = identity(dim);
        self.transform_rhs(&mut rhs);
        let inv = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| DqeError::IllConditioned("LU solve failed".into()))?;
        Ok(matmul(&self.e0n, &inv))
    }

    /// E1 (1 - E0)⁻¹.
    pub fn failure_resolvent(&self) -> Result<CMat> {
        let dim = self.e0.nrows();
        let m = (identity(dim) - &self.e0).transpose();
        let sol = m
            .lu()
            .solve(&self.e1.transpose())
            .ok_or_else(|| DqeError::IllConditioned("1 - E0 is singular".into()))?;
        Ok(sol.transpose())
    }
}

pub fn expected_state_general(
    e0: &TransferMatrix,
    e1: &TransferMatrix,
    rho0: &CMat,
    n: usize,
) -> Result<CMat> {
    GeneralAnalytics::new(e0, e1, n)?.expected_state(rho0)
}

pub fn expected_tau_general(
    e0: &TransferMatrix,
    e1: &TransferMatrix,
    rho0: &CMat,
    n: usize,
) -> Result<f64> {
    GeneralAnalytics::new(e0, e1, n)?.expected_tau(rho0)
}

/// |1/D⟩⟩(⟨⟨1| - ⟨⟨1|E0): global resampling of the lost weight.
pub fn global_failure_transfer(e0: &TransferMatrix) -> TransferMatrix {
    let d = e0.dim();
    let one = trace_row(d);
    let row = &one - &one * &e0.matrix;
    let col = vec_of(&identity(d).scale(1.0 / d as f64));
    TransferMatrix::new(col * row)
}

/// Sweep-level instrument in transfer form.
#[derive(Debug, Clone)]
pub struct SweepInstrument {
    pub e0: TransferMatrix,
    pub e1: TransferMatrix,
}

impl SweepInstrument {
    pub fn channel(&self) -> TransferMatrix {
        self.e0.add(&self.e1)
    }
}

/// `A ρ A†` with A = aΠ + b(1-Π) of one weak measurement.
pub fn weak_sandwich(w: &PauliWeakMeasurement, a: f64, b: f64, rho: &CMat) -> CMat {
    let left = apply_columns(w, a, b, rho);
    apply_columns(w, a, b, &left.adjoint()).adjoint()
}

fn apply_columns(w: &PauliWeakMeasurement, a: f64, b: f64, m: &CMat) -> CMat {
    let d = m.nrows();
    let mut out = CMat::zeros(d, m.ncols());
    let mut scratch = vec![ZERO; d];
    let mut col = vec![ZERO; d];
    for j in 0..m.ncols() {
        w.apply_diag(a, b, m.column(j).as_slice(), &mut scratch, &mut col);
        out.column_mut(j).copy_from_slice(&col);
    }
    out
}

/// Replaces `m` by f∘m, applying the map to every column read as a matrix.
fn compose_left(m: &CMat, d: usize, f: impl Fn(&CMat) -> CMat + Sync) -> CMat {
    use rayon::prelude::*;
    let cols: Vec<CVec> = (0..m.ncols())
        .into_par_iter()
        .map(|k| vec_of(&f(&unvec(&m.column(k).into_owned(), d))))
        .collect();
    CMat::from_columns(&cols)
}

fn local_failure(
    w: &PauliWeakMeasurement,
    resampling: ResamplingMode,
    n: usize,
    rho: &CMat,
) -> CMat {
    let (a1, b1) = w.e1_values();
    let out = weak_sandwich(w, a1, b1, rho);
    match resampling {
        ResamplingMode::Local => local_depolarize(&out, &w.support, n),
        _ => out,
    }
}

/// Transfer-form instrument of one sweep of `mode` at strength `eps`.
/// Global resampling abandons the sweep, so its failure branch is rank one.
pub fn sweep_instrument(
    sys: &System,
    mode: AgspMode,
    resampling: ResamplingMode,
    eps: f64,
    micro_steps: Option<usize>,
) -> Result<SweepInstrument> {
    let n = sys.num_qubits();
    check_transfer(n, "sweep transfer matrix")?;
    let d = sys.dimension();
    let m = sys.h.num_terms();
    match mode {
        AgspMode::LinearGlobal => {
            let v = &sys.spec.eigenvectors;
            let e0_vals: Vec<f64> = sys
                .linear_k_values()
                .iter()
                .map(|k| 1.0 - eps + eps * k)
                .collect();
            let kop = herm_fn(&e0_vals, v, |x| x);
            let t0 = TransferMatrix::new(kop.conjugate().kronecker(&kop));
            let e1 = match resampling {
                ResamplingMode::Global => global_failure_transfer(&t0),
                ResamplingMode::Identity => {
                    let f = herm_fn(&e0_vals, v, |x| (1.0 - x * x).max(0.0).sqrt());
                    TransferMatrix::new(f.conjugate().kronecker(&f))
                }
                ResamplingMode::Local => {
                    return Err(DqeError::Parameter(
                        "local resampling needs local terms".into(),
                    ))
                }
            };
            Ok(SweepInstrument { e0: t0, e1 })
        }
        AgspMode::ProductSweep => {
            let ws: Vec<PauliWeakMeasurement> = (0..m)
                .chain((0..m).rev())
                .map(|i| sys.measurement(i, eps))
                .collect();
            let mut e0 = identity(d * d);
            for w in &ws {
                let (a, b) = w.e0_values();
                e0 = compose_left(&e0, d, |r| weak_sandwich(w, a, b, r));
            }
            let e0 = TransferMatrix::new(e0);
            if resampling == ResamplingMode::Global {
                let e1 = global_failure_transfer(&e0);
                return Ok(SweepInstrument { e0, e1 });
            }
            let mut full = identity(d * d);
            for w in &ws {
                let (a, b) = w.e0_values();
                full = compose_left(&full, d, |r| {
                    weak_sandwich(w, a, b, r) + local_failure(w, resampling, n, r)
                });
            }
            let e1 = TransferMatrix::new(full - &e0.matrix);
            Ok(SweepInstrument { e0, e1 })
        }
        AgspMode::MixtureRandom => {
            let ws: Vec<PauliWeakMeasurement> = (0..m).map(|i| sys.measurement(i, eps)).collect();
            let inv_m = 1.0 / m as f64;
            let micro0 = compose_left(&identity(d * d), d, |r| {
                let mut acc = CMat::zeros(d, d);
                for w in &ws {
                    let (a, b) = w.e0_values();
                    acc += weak_sandwich(w, a, b, r);
                }
                acc.scale(inv_m)
            });
            let steps = micro_steps.unwrap_or(2 * m) as u64;
            let e0 = TransferMatrix::new(matpow(&micro0, steps));
            if resampling == ResamplingMode::Global {
                let e1 = global_failure_transfer(&e0);
                return Ok(SweepInstrument { e0, e1 });
            }
            let micro1 = compose_left(&identity(d * d), d, |r| {
                let mut acc = CMat::zeros(d, d);
                for w in &ws {
                    acc += local_failure(w, resampling, n, r);
                }
                acc.scale(inv_m)
            });
            let full = matpow(&(micro0 + micro1), steps);
            let e1 = TransferMatrix::new(full - &e0.matrix);
            Ok(SweepInstrument { e0, e1 })
        }
    }
}

/// Least-squares fit of ln y = a + b x; returns (b, a).
pub fn fit_loglinear(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// Density of the maximally mixed state.
pub fn maximally_mixed(d: usize) -> CMat {
    identity(d).scale(1.0 / d as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agsp::{agsp_linear, agsp_product, mixture_kraus};
    use crate::instrument::transfer_of_kraus;
    use crate::linalg::max_abs_diff;
    use crate::pauli::{build_heisenberg_chain, PauliHamiltonian, PauliString, PauliTerm};
    use crate::stopping::{EpsilonSchedule, StoppingKind, StoppingRule};
    use crate::trajectory::{run_ensemble, RunConfig};

    fn diag(vals: &[f64]) -> CMat {
        let d = vals.len();
        CMat::from_fn(d, d, |i, j| if i == j { c(vals[i], 0.0) } else { ZERO })
    }

    fn heis(n: usize) -> System {
        System::new(build_heisenberg_chain(n, false).unwrap()).unwrap()
    }

    #[test]
    fn global_state_examples() {
        let r = expected_state_global(&diag(&[1.0, 0.5]), 2).unwrap();
        assert!(max_abs_diff(&r, &diag(&[1.0 / 1.0625, 0.0625 / 1.0625])) < 1e-14);
        let p = diag(&[1.0, 0.0, 1.0, 0.0]);
        for n in 1..5 {
            let r = expected_state_global(&p, n).unwrap();
            assert!(max_abs_diff(&r, &p.scale(0.5)) < 1e-14);
        }
        let r = expected_state_global(&diag(&[1.0, 0.99]), 5000).unwrap();
        assert!((r.trace().re - 1.0).abs() < 1e-12 && r[(1, 1)].re < 1e-8);
        assert!(expected_state_global(&diag(&[0.0, 0.0]), 3).is_err());
    }

    #[test]
    fn global_tau_examples() {
        assert!((expected_tau_global(&diag(&[0.0, 1.0]), 3).unwrap() - 4.0).abs() < 1e-12);
        assert!((expected_tau_global(&diag(&[1.0, 0.5]), 1).unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(expected_tau_global(&diag(&[1.0, 0.5]), 0).unwrap(), 0.0);
        // huge n: ratio still finite
        let t = expected_tau_global(&diag(&[0.9, 0.5]), 2000).unwrap();
        assert!(t.is_finite() && t > 1e10);
    }

    #[test]
    fn bound_examples() {
        let p = AgspParams::new(1.0 / 3.0, 1.0, 0.0);
        let b = overlap_lower_bound(&p, 4, 1, 8);
        assert!((b.value - (1.0 - 4.0 * (1.0f64 / 9.0).powi(8))).abs() < 1e-15);
        let b0 = overlap_lower_bound(&AgspParams::new(0.0, 1.0, 0.1), 4, 1, 3);
        assert!((b0.value - 0.9).abs() < 1e-15);
        assert_eq!(overlap_lower_bound(&p, 4, 1, 0).value, 0.0);
        assert!(overlap_lower_bound(&AgspParams::new(0.5, 0.5, 0.0), 4, 1, 3).vacuous);
        assert_eq!(depth_estimate(&p, 4, 1, 1e-3).unwrap(), 4);
        assert_eq!(depth_estimate(&p, 4, 1, 5.0).unwrap(), 0);
        assert!(depth_estimate(&AgspParams::new(0.5, 0.5, 0.0), 4, 1, 0.1).is_err());
        assert!((fixed_point_overlap_bound(&p, 4, 1) - 1.0).abs() < 1e-15);
        let eq = AgspParams::from_delta_gamma(0.4, 0.4, 0.0);
        assert!((fixed_point_overlap_bound(&eq, 8, 2) - 0.25).abs() < 1e-15);
        let near = AgspParams::from_delta_gamma(0.5, 1.0 - 1e-4, 0.0);
        let v = fixed_point_overlap_bound(&near, 16, 1);
        assert!(1.0 - v > 1e-4 && 1.0 - v < 16.0 * 1e-4 / 0.5);
    }

    #[test]
    fn geometric_sum_matches_naive() {
        let e = diag(&[0.5, -0.3, 0.9]);
        for n in 0..9 {
            let (s, p) = geometric_sum(&e, n);
            let mut naive = CMat::zeros(3, 3);
            let mut pw = identity(3);
            for _ in 0..n {
                naive += &pw;
                pw = &pw * &e;
            }
            assert!(max_abs_diff(&s, &naive) < 1e-14 && max_abs_diff(&p, &pw) < 1e-14);
        }
    }

    #[test]
    fn general_reduces_to_global() {
        for q in [2, 3] {
            let sys = heis(q);
            let inst =
                sweep_instrument(&sys, AgspMode::LinearGlobal, ResamplingMode::Global, 1.0, None)
                    .unwrap();
            let k = agsp_linear(&sys.h, &sys.spec).unwrap().operator;
            let rho0 = maximally_mixed(sys.dimension());
            for n in [1, 3, 6] {
                let g = GeneralAnalytics::new(&inst.e0, &inst.e1, n).unwrap();
                let a = g.expected_state(&rho0).unwrap();
                let b = expected_state_global(&k, n).unwrap();
                assert!(max_abs_diff(&a, &b) < 1e-9);
                let ta = g.expected_tau(&rho0).unwrap();
                let tb = expected_tau_global(&k, n).unwrap();
                assert!((ta - tb).abs() < 1e-8 * tb.max(1.0), "{ta} vs {tb}");
            }
        }
    }

    #[test]
    fn product_sweep_success_is_kprime() {
        let sys = heis(2);
        let eps = 0.1;
        let inst =
            sweep_instrument(&sys, AgspMode::ProductSweep, ResamplingMode::Global, eps, None)
                .unwrap();
        let kp = agsp_product(&sys.h, &sys.spec, eps).unwrap().operator;
        let t = transfer_of_kraus(&[kp]).unwrap();
        assert!(max_abs_diff(&inst.e0.matrix, &t.matrix) < 1e-12);
        assert!(inst.channel().tp_defect() < 1e-12);
    }

    #[test]
    fn mixture_micro_step_is_kraus_mixture() {
        let sys = heis(2);
        let eps = 0.2;
        let inst = sweep_instrument(
            &sys,
            AgspMode::MixtureRandom,
            ResamplingMode::Global,
            eps,
            Some(1),
        )
        .unwrap();
        let t = transfer_of_kraus(&mixture_kraus(&sys.h, eps).unwrap()).unwrap();
        assert!(max_abs_diff(&inst.e0.matrix, &t.matrix) < 1e-12);
    }

    #[test]
    fn local_resampling_identities() {
        let sys = heis(2);
        let rho0 = maximally_mixed(4);
        for mode in [AgspMode::ProductSweep, AgspMode::MixtureRandom] {
            let inst = sweep_instrument(&sys, mode, ResamplingMode::Local, 0.2, Some(2)).unwrap();
            assert!(inst.channel().tp_defect() < 1e-12);
            let g = GeneralAnalytics::new(&inst.e0, &inst.e1, 4).unwrap();
            let rho = g.expected_state(&rho0).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-8);
            let one = trace_row(4);
            let n_map = g.stopped_map().unwrap();
            assert!(max_abs_diff(&(&one * n_map), &one) < 1e-8);
            let res = g.failure_resolvent().unwrap();
            assert!(max_abs_diff(&(&one * res), &one) < 1e-8);
        }
    }

    #[test]
    fn one_qubit_local_equals_global() {
        let t = PauliTerm::new(1.0, "X".parse::<PauliString>().unwrap()).unwrap();
        let sys = System::new(PauliHamiltonian::from_terms(1, vec![t]).unwrap()).unwrap();
        let rho0 = maximally_mixed(2);
        let a = sweep_instrument(&sys, AgspMode::ProductSweep, ResamplingMode::Local, 0.3, None)
            .unwrap();
        let b = sweep_instrument(&sys, AgspMode::ProductSweep, ResamplingMode::Global, 0.3, None)
            .unwrap();
        // local abandons nothing, global abandons the rest of the sweep; with
        // one qubit the reset state is the same either way
        let ra = expected_state_general(&a.e0, &a.e1, &rho0, 3).unwrap();
        let rb = expected_state_general(&b.e0, &b.e1, &rho0, 3).unwrap();
        assert!((ra.trace().re - 1.0).abs() < 1e-10);
        assert!(max_abs_diff(&ra, &rb) < 1e-2);
    }

    #[test]
    fn absorbing_failure_is_rejected() {
        // E0 = Π, identity resampling: weight in 1-Π never returns
        let e0 = transfer_of_kraus(&[diag(&[1.0, 0.0])]).unwrap();
        let e1 = transfer_of_kraus(&[diag(&[0.0, 1.0])]).unwrap();
        assert!(matches!(
            GeneralAnalytics::new(&e0, &e1, 3),
            Err(DqeError::IllConditioned(_))
        ));
    }

    #[test]
    fn monte_carlo_matches_local_formula() {
        let sys = heis(2);
        let eps = 0.1;
        let n = 3;
        let inst =
            sweep_instrument(&sys, AgspMode::ProductSweep, ResamplingMode::Local, eps, None)
                .unwrap();
        let g = GeneralAnalytics::new(&inst.e0, &inst.e1, n).unwrap();
        let rho0 = maximally_mixed(4);
        let ov = overlap_with(&g.expected_state(&rho0).unwrap(), &sys.spec.ground_projector);
        let tau = g.expected_tau(&rho0).unwrap();
        let mut cfg = RunConfig::new(
            AgspMode::ProductSweep,
            EpsilonSchedule::Constant(eps),
            ResamplingMode::Local,
            StoppingRule::new(StoppingKind::FirstRunOfZeros(n)),
            2024,
        );
        cfg.max_steps = 100_000;
        let (_, st) = run_ensemble(&sys, &cfg, 4000, None).unwrap();
        let zo = (st.mean_overlap - ov) / st.stderr_overlap;
        let zt = (st.mean_stop_step - tau) / st.stderr_stop_step;
        assert!(zo.abs() < 4.0 && zt.abs() < 4.0, "zo {zo} zt {zt}");
    }
}
