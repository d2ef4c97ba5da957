//! Small complex linear-algebra helpers shared by the estimators.

use nalgebra::Cholesky;
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{C64, CMat, CVec};

/// Result of a least-squares solve, flagging whether the ridge fallback fired.
pub struct Lstsq {
    pub solution: CMat,
    pub ridge_fallback: bool,
}

/// Solves min_X ||A X - B||_F for a tall (or square) A via QR, falling back to
/// ridge-regularized normal equations when A is detected rank deficient.
pub fn lstsq(a: &CMat, b: &CMat, ridge: f64) -> Lstsq {
    assert_eq!(a.nrows(), b.nrows(), "lstsq: row mismatch");
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let n = a.ncols();

    let diag_max = (0..n).map(|i| r[(i, i)].norm()).fold(0.0_f64, f64::max);
    let rank_ok = n == 0
        || (0..n).all(|i| r[(i, i)].norm() > 1e-12 * diag_max.max(1.0));

    if rank_ok {
        let rhs = q.adjoint() * b;
        let solution = back_substitute(&r, &rhs);
        Lstsq { solution, ridge_fallback: false }
    } else {
        Lstsq { solution: ridge_solve(a, b, ridge), ridge_fallback: true }
    }
}

/// Normal-equation solve with a ridge term, used when QR detects rank loss.
pub fn ridge_solve(a: &CMat, b: &CMat, ridge: f64) -> CMat {
    let n = a.ncols();
    let mut gram = a.adjoint() * a;
    for i in 0..n {
        gram[(i, i)] += Complex::new(ridge, 0.0);
    }
    let rhs = a.adjoint() * b;
    match Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => {
            // Bump the ridge until the Gram factorizes.
            let mut eps = ridge.max(1e-12) * 10.0;
            loop {
                let mut g = gram.clone();
                for i in 0..n {
                    g[(i, i)] += Complex::new(eps, 0.0);
                }
                if let Some(c) = Cholesky::new(g) {
                    return c.solve(&rhs);
                }
                eps *= 10.0;
            }
        }
    }
}

fn back_substitute(r: &CMat, rhs: &CMat) -> CMat {
    let n = r.ncols();
    let d = rhs.ncols();
    let mut x = CMat::zeros(n, d);
    for col in 0..d {
        for i in (0..n).rev() {
            let mut acc = rhs[(i, col)];
            for k in (i + 1)..n {
                acc -= r[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = acc / r[(i, i)];
        }
    }
    x
}

/// Thin QR with the diagonal of R forced nonnegative real, making the Q
/// factor deterministic for a given input.
pub fn qr_thin_positive(a: &CMat) -> (CMat, CMat) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let n = r.nrows().min(r.ncols());
    for i in 0..n {
        let d = r[(i, i)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            let scale = phase.conj();
            for j in 0..r.ncols() {
                r[(i, j)] *= scale;
            }
            for j in 0..q.nrows() {
                q[(j, i)] *= phase;
            }
        }
    }
    (q, r)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen_desc(a: &CMat) -> (Vec<f64>, CMat) {
    let sym = nalgebra::SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        sym.eigenvalues[j]
            .partial_cmp(&sym.eigenvalues[i])
            .unwrap()
    });
    let vals: Vec<f64> = order.iter().map(|&i| sym.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &sym.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec_cols(a: &CMat) -> CVec {
    CVec::from_column_slice(a.as_slice())
}

/// One draw from CN(0, sigma^2): independent real/imaginary N(0, sigma^2/2).
pub fn cn_sample<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> C64 {
    let s = sigma / std::f64::consts::SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(re * s, im * s)
}

/// Matrix of iid CN(0, sigma^2) entries.
pub fn cn_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cn_sample(rng, sigma))
}

/// Condition number of a Hermitian positive semidefinite matrix.
pub fn hermitian_condition(a: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen_desc(a);
    let max = vals.first().copied().unwrap_or(0.0);
    let min = vals.last().copied().unwrap_or(0.0);
    if min <= 0.0 { f64::INFINITY } else { max / min }
}
