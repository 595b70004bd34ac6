//! Approximate ground state projectors and their (Δ, Γ, ε) parameters.

use serde::{Deserialize, Serialize};

use crate::error::{DqeError, Result};
use crate::linalg::{eigh, herm_fn, herm_norm, identity, matmul, CMat};
use crate::pauli::{PauliHamiltonian, PauliString, SpectralData};

/// AGSP parameters. The square roots are primary because the defining
/// inequalities bound eigenvalues of K, not of K².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgspParams {
    pub sqrt_delta: f64,
    pub sqrt_gamma: f64,
    pub epsilon: f64,
}

impl AgspParams {
    pub fn new(sqrt_delta: f64, sqrt_gamma: f64, epsilon: f64) -> Self {
        AgspParams {
            sqrt_delta,
            sqrt_gamma,
            epsilon,
        }
    }

    pub fn from_delta_gamma(delta: f64, gamma: f64, epsilon: f64) -> Self {
        AgspParams::new(delta.max(0.0).sqrt(), gamma.max(0.0).sqrt(), epsilon)
    }

    pub fn delta(&self) -> f64 {
        self.sqrt_delta * self.sqrt_delta
    }

    pub fn gamma(&self) -> f64 {
        self.sqrt_gamma * self.sqrt_gamma
    }

    pub fn is_valid(&self) -> bool {
        self.sqrt_delta >= 0.0
            && self.sqrt_gamma > 0.0
            && self.gamma() <= 1.0 + 1e-12
            && self.epsilon >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamSource {
    Claimed,
    Measured,
}

/// One local factor `k_v = (1 - s_v h_v)/2` with weight `κ_v = |α_v|/κ`.
#[derive(Debug, Clone)]
pub struct LocalFactor {
    pub weight: f64,
    pub sign: f64,
    pub string: PauliString,
    pub support: Vec<usize>,
}

impl LocalFactor {
    pub fn dense(&self) -> Result<CMat> {
        let h = self.string.to_dense()?;
        let d = h.nrows();
        Ok((identity(d) - h.scale(self.sign)).scale(0.5))
    }
}

#[derive(Debug, Clone)]
pub struct Agsp {
    pub operator: CMat,
    pub params: AgspParams,
    pub source: ParamSource,
    pub local_factors: Option<Vec<LocalFactor>>,
    /// Pauli term count estimate for a local expansion, when meaningful.
    pub term_count_estimate: Option<f64>,
}

pub fn local_factors(h: &PauliHamiltonian) -> Vec<LocalFactor> {
    let kappa = h.kappa();
    h.terms()
        .iter()
        .map(|t| LocalFactor {
            weight: t.coeff.abs() / kappa,
            sign: t.sign(),
            string: t.string.clone(),
            support: t.string.support(),
        })
        .collect()
}

/// K = (1 - H/κ)/2.
pub fn agsp_linear(h: &PauliHamiltonian, spec: &SpectralData) -> Result<Agsp> {
    let kappa = h.kappa();
    if kappa <= 0.0 {
        return Err(DqeError::DegenerateInstance("κ = 0".into()));
    }
    let dense = h.to_dense()?;
    let d = dense.nrows();
    let operator = (identity(d) - dense.scale(1.0 / kappa)).scale(0.5);
    let sqrt_gamma = (1.0 - spec.lambda0 / kappa) / 2.0;
    let sqrt_delta = spec.lambda1.map_or(0.0, |l1| (1.0 - l1 / kappa) / 2.0);
    Ok(Agsp {
        operator,
        params: AgspParams::new(sqrt_delta, sqrt_gamma, 0.0),
        source: ParamSource::Claimed,
        local_factors: Some(local_factors(h)),
        term_count_estimate: Some(h.num_terms() as f64),
    })
}

fn check_eps_open(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DqeError::Parameter(format!("ε = {eps} outside (0, 1)")));
    }
    Ok(())
}

/// Right-multiply `a` in place by `x·1 + y·P`.
fn right_mul_affine_pauli(a: &CMat, x: f64, y: f64, p: &PauliString) -> CMat {
    let d = a.nrows();
    let mut out = a.scale(x);
    for b in 0..d {
        let (row, val) = p.column_entry(b);
        let coef = val * y;
        for r in 0..d {
            out[(r, b)] += a[(r, row)] * coef;
        }
    }
    out
}

/// Forward product F_1⋯F_m of the weak factors `(1-ε)1 + εκ_i k_i`.
pub fn forward_product(h: &PauliHamiltonian, eps: f64) -> Result<CMat> {
    let d = h.dimension();
    crate::pauli::check_dense(h.num_qubits(), "product AGSP")?;
    let mut a = identity(d);
    for f in local_factors(h) {
        // (1-ε)1 + εκ(1 - s h)/2 = x 1 + y h
        let x = 1.0 - eps + eps * f.weight / 2.0;
        let y = -eps * f.weight * f.sign / 2.0;
        a = right_mul_affine_pauli(&a, x, y, &f.string);
    }
    Ok(a)
}

/// K' = F_1⋯F_m F_m⋯F_1.
pub fn agsp_product(h: &PauliHamiltonian, spec: &SpectralData, eps: f64) -> Result<Agsp> {
    check_eps_open(eps)?;
    let a = forward_product(h, eps)?;
    let k = matmul(&a, &a.adjoint());
    let operator = (&k + k.adjoint()).scale(0.5);
    let kappa = h.kappa();
    let m = h.num_terms() as i32;
    let pre = (1.0 - eps).powi(2 * m - 1);
    let sqrt_gamma = pre * (1.0 - eps * spec.lambda0 / kappa);
    let sqrt_delta = spec.lambda1.map_or(0.0, |l1| pre * (1.0 - eps * l1 / kappa));
    Ok(Agsp {
        operator,
        params: AgspParams::new(sqrt_delta, sqrt_gamma, 0.0),
        source: ParamSource::Claimed,
        local_factors: Some(local_factors(h)),
        term_count_estimate: Some((2 * m) as f64),
    })
}

/// First-order approximation `(1-ε)^{2m} 1 + 2ε(1-ε)^{2m-1} K`.
pub fn product_first_order(h: &PauliHamiltonian, spec: &SpectralData, eps: f64) -> Result<CMat> {
    let lin = agsp_linear(h, spec)?;
    let m = h.num_terms() as i32;
    let d = h.dimension();
    Ok(identity(d).scale((1.0 - eps).powi(2 * m))
        + lin.operator.scale(2.0 * eps * (1.0 - eps).powi(2 * m - 1)))
}

/// Chebyshev polynomial of the first kind by three-term recurrence.
pub fn chebyshev_t(ell: usize, y: f64) -> f64 {
    match ell {
        0 => 1.0,
        1 => y,
        _ => {
            let (mut t0, mut t1) = (1.0, y);
            for _ in 1..ell {
                let t2 = 2.0 * y * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            t1
        }
    }
}

/// Exponential bound on √Δ for the rescaled Chebyshev AGSP.
pub fn chebyshev_delta_bound(spec: &SpectralData, ell: usize) -> Option<f64> {
    let gap = spec.gap()?;
    Some(2.0 * (-2.0 * ell as f64 * (gap / (spec.norm - spec.lambda0)).sqrt()).exp())
}

/// K = C_ℓ(H), normalised to 1 on the ground space, small on [λ1, ‖H‖].
pub fn agsp_chebyshev(spec: &SpectralData, ell: usize) -> Result<Agsp> {
    if ell == 0 {
        return Err(DqeError::Parameter("Chebyshev degree must be ≥ 1".into()));
    }
    let tol = spec.degeneracy_tolerance();
    let lambda1 = match spec.lambda1 {
        Some(l1) if l1 - spec.lambda0 > tol => l1,
        _ => {
            return Err(DqeError::DegenerateInstance(
                "spectral gap below tolerance".into(),
            ))
        }
    };
    let lambda0 = spec.lambda0;
    let b = spec.norm;
    let f: Box<dyn Fn(f64) -> f64> = if b - lambda1 <= tol {
        // every excited level sits at λ1; the rescaled polynomial degenerates
        Box::new(move |x: f64| ((x - lambda1) / (lambda0 - lambda1)).powi(ell as i32))
    } else {
        let y = move |x: f64| (2.0 * x - lambda1 - b) / (b - lambda1);
        let denom = chebyshev_t(ell, y(lambda0));
        Box::new(move |x: f64| chebyshev_t(ell, y(x)) / denom)
    };
    let operator = herm_fn(&spec.eigenvalues, &spec.eigenvectors, |x| {
        if x <= lambda0 + tol {
            1.0
        } else {
            f(x)
        }
    });
    let bound = chebyshev_delta_bound(spec, ell).unwrap_or(0.0);
    Ok(Agsp {
        operator,
        params: AgspParams::new(bound.min(1.0), 1.0, 0.0),
        source: ParamSource::Claimed,
        local_factors: None,
        term_count_estimate: None,
    })
}

/// Mixture Kraus operators `E_i = m^{-1/2}((1-ε)1 + εκ_i k_i)`.
pub fn mixture_kraus(h: &PauliHamiltonian, eps: f64) -> Result<Vec<CMat>> {
    check_eps_open(eps)?;
    let d = h.dimension();
    let m = h.num_terms() as f64;
    local_factors(h)
        .iter()
        .map(|f| {
            let k = f.dense()?;
            Ok((identity(d).scale(1.0 - eps) + k.scale(eps * f.weight)).scale(1.0 / m.sqrt()))
        })
        .collect()
}

/// Measured parameters together with the selected spectral projector.
#[derive(Debug, Clone)]
pub struct Verified {
    pub params: AgspParams,
    pub projector: CMat,
}

/// Measures (√Δ, √Γ, ε) of K against a ground projector of rank N.
pub fn verify_agsp(k: &CMat, pi0: &CMat, rank: usize) -> Verified {
    let d = k.nrows();
    let (vals, mut vecs) = eigh(k);
    let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * scale;

    // rotate degenerate clusters so Π0 is diagonal inside each
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && vals[end] - vals[start] <= tol {
            end += 1;
        }
        if end - start > 1 {
            let block = vecs.columns(start, end - start).into_owned();
            let comp = block.adjoint() * pi0 * &block;
            let (_, rot) = eigh(&comp);
            let rotated = block * rot;
            vecs.columns_mut(start, end - start).copy_from(&rotated);
        }
        start = end;
    }

    let overlaps: Vec<f64> = (0..d)
        .map(|j| {
            let v = vecs.column(j);
            (v.adjoint() * pi0 * v)[(0, 0)].re
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        let qi = (overlaps[i] * 1e9).round() as i64;
        let qj = (overlaps[j] * 1e9).round() as i64;
        qj.cmp(&qi).then(vals[j].total_cmp(&vals[i]))
    });
    let rank = rank.min(d);
    let (chosen, rest) = order.split_at(rank);
    let sqrt_gamma = chosen.iter().map(|&i| vals[i]).fold(f64::INFINITY, f64::min);
    let sqrt_delta = rest.iter().map(|&i| vals[i].abs()).fold(0.0, f64::max);
    let projector = crate::linalg::projector_from_columns(&vecs, chosen);
    let epsilon = herm_norm(&(&projector - pi0));
    Verified {
        params: AgspParams::new(sqrt_delta, sqrt_gamma, epsilon),
        projector,
    }
}

/// Term count estimate `(e/ℓ)^ℓ m^ℓ` for a local expansion of C_ℓ(H).
pub fn chebyshev_term_estimate(num_terms: usize, ell: usize) -> f64 {
    (std::f64::consts::E * num_terms as f64 / ell as f64).powi(ell as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, op_norm};
    use crate::pauli::{build_heisenberg_chain, build_maxsat, diagonalize, Clause, PauliTerm};

    fn z1() -> PauliHamiltonian {
        PauliHamiltonian::from_terms(1, vec![PauliTerm::new(1.0, "Z".parse().unwrap()).unwrap()])
            .unwrap()
    }

    #[test]
    fn linear_on_z() {
        let h = z1();
        let s = diagonalize(&h).unwrap();
        let a = agsp_linear(&h, &s).unwrap();
        assert!(a.operator[(0, 0)].norm() < 1e-15);
        assert!((a.operator[(1, 1)].re - 1.0).abs() < 1e-15);
        assert_eq!(a.params, AgspParams::new(0.0, 1.0, 0.0));
        let v = verify_agsp(&a.operator, &s.ground_projector, s.degeneracy);
        assert!((v.params.sqrt_gamma - 1.0).abs() < 1e-10);
        assert!(v.params.sqrt_delta.abs() < 1e-10);
        assert!(v.params.epsilon < 1e-10);
    }

    #[test]
    fn linear_on_heisenberg_and_maxsat() {
        let h = build_heisenberg_chain(2, false).unwrap();
        let s = diagonalize(&h).unwrap();
        let a = agsp_linear(&h, &s).unwrap();
        assert!((a.params.sqrt_gamma - 1.0).abs() < 1e-12);
        assert!((a.params.sqrt_delta - 1.0 / 3.0).abs() < 1e-12);

        let m = build_maxsat(
            2,
            &[Clause {
                vars: vec![0, 1],
                forbidden: "11".into(),
            }],
        )
        .unwrap();
        let s = diagonalize(&m).unwrap();
        let a = agsp_linear(&m, &s).unwrap();
        assert!((a.params.sqrt_gamma - 0.5).abs() < 1e-12);
        assert!(a.params.sqrt_delta.abs() < 1e-12);
    }

    #[test]
    fn local_factors_are_projectors() {
        let h = build_heisenberg_chain(3, false).unwrap();
        for f in local_factors(&h) {
            let k = f.dense().unwrap();
            assert!(max_abs_diff(&(&k * &k), &k) < 1e-12);
            assert!(op_norm(&k) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn product_single_term_is_square() {
        let h = z1();
        let s = diagonalize(&h).unwrap();
        let eps = 0.3;
        let a = agsp_product(&h, &s, eps).unwrap();
        let k = local_factors(&h)[0].dense().unwrap();
        let f = identity(2).scale(1.0 - eps) + k.scale(eps);
        assert!(max_abs_diff(&a.operator, &(&f * &f)) < 1e-14);
    }

    #[test]
    fn product_hermitian_and_first_order() {
        let h = build_heisenberg_chain(2, false).unwrap();
        let s = diagonalize(&h).unwrap();
        let mut errs = vec![];
        for eps in [1e-2, 1e-3] {
            let a = agsp_product(&h, &s, eps).unwrap();
            assert!(max_abs_diff(&a.operator, &a.operator.adjoint()) < 1e-12);
            assert!(op_norm(&a.operator) <= 1.0 + 1e-12);
            let approx = product_first_order(&h, &s, eps).unwrap();
            errs.push(op_norm(&(&a.operator - approx)));
        }
        // quadratic: tenfold smaller ε → about hundredfold smaller error
        let ratio = errs[0] / errs[1];
        assert!(ratio > 80.0 && ratio < 120.0, "ratio {ratio}");
        let c = errs[0] / 1e-4;
        assert!(errs[1] <= c * 1e-6 * 1.05);
    }

    #[test]
    fn product_measured_epsilon_is_second_order() {
        let h = build_heisenberg_chain(2, false).unwrap();
        let s = diagonalize(&h).unwrap();
        let e: Vec<f64> = [1e-2, 1e-3]
            .iter()
            .map(|&eps| {
                let a = agsp_product(&h, &s, eps).unwrap();
                verify_agsp(&a.operator, &s.ground_projector, s.degeneracy).params.epsilon
            })
            .collect();
        let c = e[0] / 1e-4;
        assert!(e[1] <= c * 1e-6 * 1.5 + 1e-12, "{e:?}");
    }

    #[test]
    fn chebyshev_on_z_and_heisenberg() {
        let h = z1();
        let s = diagonalize(&h).unwrap();
        let a = agsp_chebyshev(&s, 1).unwrap();
        assert!((a.operator[(1, 1)].re - 1.0).abs() < 1e-12);
        assert!(a.operator[(0, 0)].norm() < 1.0);

        let h = build_heisenberg_chain(2, false).unwrap();
        let s = diagonalize(&h).unwrap();
        let mut last = f64::INFINITY;
        for ell in 1..=6 {
            let a = agsp_chebyshev(&s, ell).unwrap();
            let v = verify_agsp(&a.operator, &s.ground_projector, 1);
            let bound = chebyshev_delta_bound(&s, ell).unwrap();
            assert!(v.params.sqrt_delta <= bound + 1e-12, "ell {ell}");
            assert!(v.params.sqrt_delta <= last + 1e-15);
            last = v.params.sqrt_delta;
            let kp = &a.operator * &s.ground_projector;
            assert!(max_abs_diff(&kp, &s.ground_projector) < 1e-9);
        }
        let three = agsp_chebyshev(&s, 3).unwrap();
        let v = verify_agsp(&three.operator, &s.ground_projector, 1);
        assert!((v.params.sqrt_delta - 1.0 / 485.0).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_rejects_gapless() {
        let h = build_maxsat(
            1,
            &[
                Clause {
                    vars: vec![0],
                    forbidden: "0".into(),
                },
                Clause {
                    vars: vec![0],
                    forbidden: "1".into(),
                },
            ],
        )
        .unwrap();
        let s = diagonalize(&h).unwrap();
        assert!(matches!(agsp_chebyshev(&s, 2), Err(DqeError::DegenerateInstance(_))));
    }

    #[test]
    fn mixture_completeness_defect() {
        let h = build_heisenberg_chain(2, false).unwrap();
        let eps = 0.1;
        let ks = mixture_kraus(&h, eps).unwrap();
        let mut sum = CMat::zeros(4, 4);
        for e in &ks {
            sum += e.adjoint() * e;
        }
        let defect = op_norm(&(sum - identity(4)));
        assert!(defect <= 2.0 * eps + eps * eps + 1e-12);
        let single = mixture_kraus(&z1(), eps).unwrap();
        assert_eq!(single.len(), 1);
        assert!(agsp_product(&z1(), &diagonalize(&z1()).unwrap(), 1.0).is_err());
    }

    #[test]
    fn verify_exact_projector() {
        let h = build_heisenberg_chain(3, false).unwrap();
        let s = diagonalize(&h).unwrap();
        let v = verify_agsp(&s.ground_projector, &s.ground_projector, s.degeneracy);
        assert!((v.params.sqrt_gamma - 1.0).abs() < 1e-10);
        assert!(v.params.sqrt_delta < 1e-10);
        assert!(v.params.epsilon < 1e-10);
    }
}
