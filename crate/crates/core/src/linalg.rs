//! Dense complex linear algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

/// Matrix product through the blocked complex gemm kernel.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMat::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if m * k * n < 4096 {
        return a * b;
    }
    // Complex64 is repr(C) {re, im}, identical in layout to [f64; 2].
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            out.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    out
}

/// `a^p` by binary exponentiation.
pub fn matpow(a: &CMat, mut p: u64) -> CMat {
    let mut result = identity(a.nrows());
    let mut base = a.clone();
    let mut first = true;
    while p > 0 {
        if p & 1 == 1 {
            result = if first { base.clone() } else { matmul(&result, &base) };
            first = false;
        }
        p >>= 1;
        if p > 0 {
            base = matmul(&base, &base);
        }
    }
    result
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Column-stacking vectorisation.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVec, d: usize) -> CMat {
    CMat::from_column_slice(d, d, v.as_slice())
}

pub fn is_real(m: &CMat, tol: f64) -> bool {
    m.iter().all(|z| z.im.abs() <= tol)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let d = m.nrows();
    let scale = m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    let (vals, vecs): (Vec<f64>, CMat) = if is_real(m, 1e-15 * scale.max(1.0)) {
        let re = DMatrix::<f64>::from_fn(d, d, |i, j| 0.5 * (m[(i, j)].re + m[(j, i)].re));
        let eig = SymmetricEigen::new(re);
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|x| c(x, 0.0)),
        )
    } else {
        let h = (m + m.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(h);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = CMat::from_fn(d, d, |r, k| vecs[(r, order[k])]);
    (sorted_vals, sorted_vecs)
}

/// `V diag(f(λ)) V†` for a Hermitian matrix.
pub fn herm_fn(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let d = vecs.nrows();
    let mut scaled = vecs.clone();
    for (k, &lam) in vals.iter().enumerate() {
        let fk = f(lam);
        for r in 0..d {
            scaled[(r, k)] *= fk;
        }
    }
    matmul(&scaled, &vecs.adjoint())
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let gram = matmul(&m.adjoint(), m);
    let (vals, _) = eigh(&gram);
    vals.into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Largest absolute eigenvalue of a Hermitian matrix.
pub fn herm_norm(m: &CMat) -> f64 {
    let (vals, _) = eigh(m);
    vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn trace_norm(m: &CMat) -> f64 {
    m.clone().svd(false, false).singular_values.sum()
}

pub fn trace(m: &CMat) -> C64 {
    m.trace()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn projector_from_columns(vecs: &CMat, cols: &[usize]) -> CMat {
    let d = vecs.nrows();
    let sub = CMat::from_fn(d, cols.len(), |r, k| vecs[(r, cols[k])]);
    matmul(&sub, &sub.adjoint())
}

pub fn normal_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let (a, b) = gaussian_pair(rng);
    c(a, b) / std::f64::consts::SQRT_2
}

pub fn gaussian_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Ginibre matrix with i.i.d. standard complex normal entries.
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| normal_c64(rng))
}

/// Haar-random unitary via QR with phase correction.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    random_isometry(d, d, rng)
}

/// Random isometry `rows x cols` (rows >= cols) with orthonormal columns.
pub fn random_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let g = ginibre(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..cols {
        let diag = r[(k, k)];
        let phase = if diag.norm() > 0.0 { diag / diag.norm() } else { ONE };
        for i in 0..rows {
            q[(i, k)] *= phase;
        }
    }
    q
}

pub fn random_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVec {
    let v = CVec::from_fn(d, |_, _| normal_c64(rng));
    let n = v.norm();
    v / c(n, 0.0)
}

/// Random Hermitian matrix with the given spectrum.
pub fn random_hermitian_with_spectrum<R: Rng + ?Sized>(spectrum: &[f64], rng: &mut R) -> CMat {
    let u = random_unitary(spectrum.len(), rng);
    let h = herm_fn(spectrum, &u, |x| x);
    (&h + h.adjoint()).scale(0.5)
}

pub fn expect(m: &CMat, psi: &CVec) -> f64 {
    (psi.adjoint() * (m * psi))[(0, 0)].re
}

pub fn outer(psi: &CVec) -> CMat {
    psi * psi.adjoint()
}
