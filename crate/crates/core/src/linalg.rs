//! Small dense complex linear-algebra helpers shared by the optimizers.
//!
//! Every matrix here is tiny (at most a few dozen rows), so these are thin
//! wrappers over `nalgebra` that add the Hermitian bookkeeping the optimizers
//! need: log-determinants with a guarded retry, eigen-pairs in descending
//! order and the Euclidean projection onto `{V ⪰ 0, Tr V ≤ c}`.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

thread_local! {
    static REGULARIZED: Cell<u64> = const { Cell::new(0) };
}

/// Number of log-determinant evaluations on this thread that needed the
/// diagonal-loading retry. Optimizer runs are single-threaded, so callers read
/// this before and after a run to attribute regularizations to it.
pub fn regularization_count() -> u64 {
    REGULARIZED.with(|c| c.get())
}

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Squared Frobenius norm.
pub fn frob2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

pub fn is_hermitian(m: &CMat, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = frob2(m).sqrt().max(f64::MIN_POSITIVE);
    frob2(&(m - m.adjoint())).sqrt() <= rel_tol * scale
}

/// `ln det(m)` for a Hermitian positive-definite `m`.
///
/// If the Cholesky factorization fails (roundoff pushed an eigenvalue below
/// zero) the matrix is loaded with `1e-14 · tr(m)/n` on the diagonal and the
/// factorization is retried once; the retry is counted per thread.
pub fn logdet_hpd(m: &CMat) -> Result<f64> {
    let h = hermitian_part(m);
    if let Some(ch) = cholesky_hpd(h.clone()) {
        return Ok(chol_logdet(&ch));
    }
    let n = h.nrows().max(1) as f64;
    let load = 1e-14 * trace_re(&h).abs() / n;
    let mut loaded = h;
    for i in 0..loaded.nrows() {
        loaded[(i, i)] += c(load);
    }
    match cholesky_hpd(loaded) {
        Some(ch) => {
            REGULARIZED.with(|c| c.set(c.get() + 1));
            Ok(chol_logdet(&ch))
        }
        None => Err(Error::numerical("log-determinant of a non-positive-definite matrix")),
    }
}

/// Complex Cholesky in `nalgebra` takes complex square roots of the pivots, so
/// it "succeeds" on indefinite input; a genuine factorization of a positive
/// definite matrix has a real, positive diagonal.
fn cholesky_hpd(h: CMat) -> Option<Cholesky<C64, nalgebra::Dyn>> {
    let ch = Cholesky::new(h)?;
    let l = ch.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.im.abs() <= 1e-8 * d.re
    });
    ok.then_some(ch)
}

fn chol_logdet(ch: &Cholesky<C64, nalgebra::Dyn>) -> f64 {
    let l = ch.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].re.ln();
    }
    2.0 * acc
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inv_hpd(m: &CMat) -> Result<CMat> {
    let h = hermitian_part(m);
    match cholesky_hpd(h) {
        Some(ch) => Ok(hermitian_part(&ch.inverse())),
        None => Err(Error::numerical("inverse of a non-positive-definite matrix")),
    }
}

/// Solves `m x = b` for Hermitian positive-definite `m`.
pub fn solve_hpd(m: &CMat, b: &CVec) -> Result<CVec> {
    match cholesky_hpd(hermitian_part(m)) {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(Error::numerical("linear solve with a non-positive-definite matrix")),
    }
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; column `i` of the returned matrix pairs with value `i`.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest eigenvalue of a Hermitian matrix and a unit eigenvector for it.
pub fn leading_eigpair(m: &CMat) -> Result<(f64, CVec)> {
    if !is_hermitian(m, 1e-10) {
        return Err(Error::Contract("leading eigenpair requested for a non-Hermitian matrix".into()));
    }
    let (values, vectors) = hermitian_eigen(m);
    let chi: CVec = vectors.column(0).into_owned();
    let norm = chi.norm();
    Ok((values[0], chi / c(norm)))
}

/// Ratio of the extreme eigenvalues of a Hermitian positive-definite matrix.
pub fn condition_number_hpd(m: &CMat) -> f64 {
    let (values, _) = hermitian_eigen(m);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Euclidean projection of a real vector onto `{x ≥ 0, Σx ≤ cap}`.
pub fn project_capped_simplex(y: &[f64], cap: f64) -> Vec<f64> {
    let clipped: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    // Find the shift θ > 0 with Σ max(y − θ, 0) = cap.
    let mut sorted: Vec<f64> = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - cap) / (i + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Euclidean (Frobenius) projection of a Hermitian matrix onto
/// `{V ⪰ 0, Tr V ≤ cap}`: the eigenvalues are projected onto the capped
/// simplex while the eigenvectors are kept.
pub fn project_capped_spectraplex(m: &CMat, cap: f64) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let projected = project_capped_simplex(&values, cap);
    let mut out = CMat::zeros(m.nrows(), m.ncols());
    for (i, &lam) in projected.iter().enumerate() {
        if lam > 0.0 {
            let col = vectors.column(i);
            out += col * col.adjoint() * c(lam);
        }
    }
    hermitian_part(&out)
}

/// Real inner product `Re Tr(a^H b)`.
pub fn inner_re(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn outer(a: &CVec, b: &CVec) -> CMat {
    a * b.adjoint()
}

/// `x^H m x` for Hermitian `m`, returned as a real number.
pub fn quad_form(m: &CMat, x: &CVec) -> f64 {
    (x.adjoint() * m * x)[(0, 0)].re
}

pub fn real_vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn to_dvec(v: Vec<C64>) -> CVec {
    DVector::from_vec(v)
}
