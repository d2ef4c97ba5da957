//! Greedy sparse recovery: SOMP for multiple measurement vectors (OMP is the
//! d = 1 special case), mutual-incoherence computation, and an exhaustive
//! support-search oracle used for testing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cn_matrix, hermitian_eigen_desc, lstsq};
use crate::{C64, CMat};

const RIDGE: f64 = 1e-12;

/// Observations Y (M x d), measurement matrix Phi (M x G), row sparsity L.
#[derive(Debug, Clone)]
pub struct MeasurementProblem {
    pub observations: CMat,
    pub measurement_matrix: CMat,
    pub sparsity: usize,
}

impl MeasurementProblem {
    pub fn new(observations: CMat, measurement_matrix: CMat, sparsity: usize) -> Result<Self> {
        if observations.nrows() != measurement_matrix.nrows() {
            return Err(Error::Dimension(format!(
                "observations have {} rows but measurement matrix has {}",
                observations.nrows(),
                measurement_matrix.nrows()
            )));
        }
        if sparsity == 0 || sparsity > measurement_matrix.ncols() {
            return Err(Error::Config(format!(
                "sparsity {sparsity} outside 1..=G = {}",
                measurement_matrix.ncols()
            )));
        }
        Ok(Self { observations, measurement_matrix, sparsity })
    }
}

/// Recovered support with refit coefficients and per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct SupportEstimate {
    /// Selected column indices, in selection order.
    pub support: Vec<usize>,
    /// L x d coefficients restricted to the support.
    pub coefficients: CMat,
    /// Frobenius norms of the residual, length iterations + 1.
    pub residual_norms: Vec<f64>,
    /// True when any refit had to fall back to ridge regularization.
    pub ridge_fallback: bool,
    /// Dominant complex multiply count (the Phi^H R correlations).
    pub multiply_count: u64,
}

/// Stopping rule: the sparsity is known, or stop once the residual Frobenius
/// norm drops below a caller-chosen threshold.
#[derive(Debug, Clone, Copy)]
pub enum Stopping {
    FixedIterations,
    ResidualBelow { threshold: f64, max_iterations: usize },
}

/// SOMP with the iteration count fixed at the known sparsity.
pub fn somp(problem: &MeasurementProblem) -> Result<SupportEstimate> {
    somp_with_stopping(problem, Stopping::FixedIterations)
}

/// SOMP steps: correlate S = Phi^H R, pick the row with the largest 2-norm
/// (ties to the smallest index), refit by least squares, recompute residual.
pub fn somp_with_stopping(
    problem: &MeasurementProblem,
    stopping: Stopping,
) -> Result<SupportEstimate> {
    let phi = &problem.measurement_matrix;
    let y = &problem.observations;
    let (m, g) = (phi.nrows(), phi.ncols());
    let d = y.ncols();
    for j in 0..g {
        if phi.column(j).norm() == 0.0 {
            return Err(Error::Domain(format!("measurement matrix column {j} is zero")));
        }
    }

    let max_iter = match stopping {
        Stopping::FixedIterations => problem.sparsity,
        Stopping::ResidualBelow { max_iterations, .. } => max_iterations.min(g),
    };

    let mut support: Vec<usize> = Vec::with_capacity(max_iter);
    let mut residual = y.clone();
    let mut residual_norms = vec![residual.norm()];
    let mut coefficients = CMat::zeros(0, d);
    let mut ridge_fallback = false;
    let mut multiply_count: u64 = 0;

    for _ in 0..max_iter {
        if let Stopping::ResidualBelow { threshold, .. } = stopping {
            if *residual_norms.last().unwrap() < threshold {
                break;
            }
        }
        let scores = phi.adjoint() * &residual;
        multiply_count += (m * g * d) as u64;
        let mut best = usize::MAX;
        let mut best_val = f64::NEG_INFINITY;
        for i in 0..g {
            if support.contains(&i) {
                continue;
            }
            let row_norm: f64 = scores.row(i).iter().map(|z| z.norm_sqr()).sum();
            if row_norm > best_val {
                best_val = row_norm;
                best = i;
            }
        }
        support.push(best);

        let sub = select_columns(phi, &support);
        let fit = lstsq(&sub, y, RIDGE);
        ridge_fallback |= fit.ridge_fallback;
        multiply_count += (m * support.len() * (support.len() + d)) as u64;
        residual = y - &sub * &fit.solution;
        coefficients = fit.solution;
        residual_norms.push(residual.norm());
    }

    Ok(SupportEstimate { support, coefficients, residual_norms, ridge_fallback, multiply_count })
}

/// Maximum absolute inner product over distinct column pairs; optionally
/// normalizing columns to unit norm first.
pub fn mip_constant(matrix: &CMat, normalize: bool) -> Result<f64> {
    let g = matrix.ncols();
    if g < 2 {
        return Err(Error::Config("need at least two columns".into()));
    }
    let mut cols = matrix.clone();
    if normalize {
        for j in 0..g {
            let n = cols.column(j).norm();
            if n == 0.0 {
                return Err(Error::Domain(format!("cannot normalize zero column {j}")));
            }
            let mut c = cols.column_mut(j);
            c /= crate::C64::new(n, 0.0);
        }
    }
    let gram = cols.adjoint() * &cols;
    let mut mu = 0.0_f64;
    for i in 0..g {
        for j in (i + 1)..g {
            mu = mu.max(gram[(i, j)].norm());
        }
    }
    Ok(mu)
}

/// Exhaustive minimizer of the projection residual over all size-L supports.
/// Testing oracle; guarded to binomial(G, L) <= 10^6 candidates.
pub fn brute_force_support(problem: &MeasurementProblem) -> Result<SupportEstimate> {
    let phi = &problem.measurement_matrix;
    let y = &problem.observations;
    let g = phi.ncols();
    let l = problem.sparsity;
    if binomial(g, l) > 1_000_000 {
        return Err(Error::GuardExceeded(format!(
            "binomial({g}, {l}) exceeds the 10^6 candidate guard"
        )));
    }

    let mut best_support: Option<Vec<usize>> = None;
    let mut best_norm = f64::INFINITY;
    let mut best_coeffs = CMat::zeros(0, 0);
    let mut support: Vec<usize> = (0..l).collect();
    loop {
        let sub = select_columns(phi, &support);
        let fit = lstsq(&sub, y, RIDGE);
        let res = (y - &sub * &fit.solution).norm();
        // Strict improvement keeps the lexicographically first support on ties.
        if best_support.is_none() || res < best_norm - 1e-15 * best_norm.max(1.0) {
            best_norm = res;
            best_support = Some(support.clone());
            best_coeffs = fit.solution;
        }
        if !next_combination(&mut support, g) {
            break;
        }
    }

    let support = best_support.expect("at least one support candidate");
    Ok(SupportEstimate {
        support,
        coefficients: best_coeffs,
        residual_norms: vec![y.norm(), best_norm],
        ridge_fallback: false,
        multiply_count: 0,
    })
}

/// Draws a random unit-norm frame and shrinks its Gram off-diagonal until
/// the mutual coherence drops below `target`. Instance generator for tests
/// that need the exact-recovery hypothesis to hold; random frames at small
/// M almost never satisfy it unaided.
pub fn low_coherence_frame<R: Rng + ?Sized>(
    m: usize,
    g: usize,
    target: f64,
    max_iters: usize,
    rng: &mut R,
) -> Result<CMat> {
    if m == 0 || g < m {
        return Err(Error::Dimension(format!("frame shape {m}x{g} must be wide")));
    }
    let welch = if g > m {
        ((g - m) as f64 / (m * (g - 1)) as f64).sqrt()
    } else {
        0.0
    };
    if target <= welch {
        return Err(Error::Domain(format!(
            "target coherence {target} at or below the Welch bound {welch}"
        )));
    }
    let mut a = cn_matrix(m, g, 1.0, rng);
    normalize_columns(&mut a);
    for _ in 0..max_iters {
        let mut gram = a.adjoint() * &a;
        let mut mu = 0.0_f64;
        for i in 0..g {
            for j in (i + 1)..g {
                mu = mu.max(gram[(i, j)].norm());
            }
        }
        if mu < target {
            return Ok(a);
        }
        // Clip the Gram magnitudes, then project back to rank m.
        let clip = (0.95 * target).max(0.7 * mu);
        for i in 0..g {
            for j in 0..g {
                if i != j && gram[(i, j)].norm() > clip {
                    let shrink = clip / gram[(i, j)].norm();
                    gram[(i, j)] *= C64::new(shrink, 0.0);
                } else if i == j {
                    gram[(i, j)] = C64::new(1.0, 0.0);
                }
            }
        }
        let (vals, vecs) = hermitian_eigen_desc(&gram);
        a = CMat::from_fn(m, g, |r, c| {
            vecs[(c, r)].conj() * C64::new(vals[r].max(0.0).sqrt(), 0.0)
        });
        normalize_columns(&mut a);
    }
    Err(Error::GuardExceeded(format!(
        "coherence target {target} not reached in {max_iters} iterations"
    )))
}

fn normalize_columns(a: &mut CMat) {
    for j in 0..a.ncols() {
        let n = a.column(j).norm();
        if n > 0.0 {
            let mut c = a.column_mut(j);
            c /= C64::new(n, 0.0);
        }
    }
}

pub(crate) fn select_columns(m: &CMat, indices: &[usize]) -> CMat {
    let cols: Vec<_> = indices.iter().map(|&i| m.column(i)).collect();
    CMat::from_columns(&cols)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > 10_000_000 {
            return acc;
        }
    }
    acc
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in (i + 1)..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Flat Kronecker column index q maps to (q mod g_r, q / g_r).
pub fn flat_to_pair(q: usize, g_r: usize) -> (usize, usize) {
    (q % g_r, q / g_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cn_matrix, vec_cols as vc};
    use crate::sounding::dft_matrix;
    use crate::{C64, CVec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sparse_problem(
        phi: &CMat,
        support: &[usize],
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> (MeasurementProblem, Vec<usize>) {
        let l = support.len();
        let coeff = cn_matrix(l, d, 1.0, rng);
        let sub = select_columns(phi, support);
        let y = &sub * &coeff;
        (
            MeasurementProblem::new(y, phi.clone(), l).unwrap(),
            support.to_vec(),
        )
    }

    #[test]
    fn somp_exact_on_orthogonal_dictionary() {
        // Phi = S^H A with s = 1 has zero coherence, so recovery is exact.
        let dict = crate::channel::build_dictionary(20, 1.0).unwrap();
        let phi = dft_matrix(20).adjoint() * &dict.response_matrix;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for trial in 0..100 {
            let support = {
                use rand::seq::SliceRandom;
                let mut idx: Vec<usize> = (0..20).collect();
                idx.shuffle(&mut rng);
                idx.truncate(4);
                idx
            };
            let (problem, truth) = sparse_problem(&phi, &support, 3, &mut rng);
            let est = somp(&problem).unwrap();
            let mut got = est.support.clone();
            let mut want = truth.clone();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want, "trial {trial}");
            assert!(*est.residual_norms.last().unwrap() < 1e-10);
        }
    }

    #[test]
    fn omp_single_atom() {
        let dict = crate::channel::build_dictionary(12, 1.0).unwrap();
        let phi = dict.response_matrix.clone();
        let y = phi.column(5).into_owned();
        let problem = MeasurementProblem::new(CMat::from_columns(&[y.column(0)]), phi, 1).unwrap();
        let est = somp(&problem).unwrap();
        assert_eq!(est.support, vec![5]);
    }

    #[test]
    fn residual_norms_non_increasing_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = cn_matrix(10, 24, 1.0, &mut rng);
        let y = cn_matrix(10, 3, 1.0, &mut rng);
        let problem = MeasurementProblem::new(y.clone(), phi.clone(), 4).unwrap();
        let est = somp(&problem).unwrap();
        assert!(est
            .residual_norms
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12));
        // Residual orthogonality on the chosen columns.
        let sub = select_columns(&phi, &est.support);
        let residual = &y - &sub * &est.coefficients;
        let corr = sub.adjoint() * residual;
        assert!(corr.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
    }

    #[test]
    fn mip_of_orthonormal_columns_is_zero() {
        let dict = crate::channel::build_dictionary(16, 1.0).unwrap();
        let phi = dft_matrix(16).adjoint() * &dict.response_matrix;
        assert!(mip_constant(&phi, false).unwrap() < 1e-12);
    }

    #[test]
    fn mip_of_truncated_dictionary_matches_dirichlet_kernel() {
        // A_t for N_t = 64, s = 2, restricted to the first B rows and
        // normalized: coherence = |sin(pi B f)/(B sin(pi f))| at f = 1/G.
        let n_t = 64;
        let b = 46usize;
        let dict = crate::channel::build_dictionary(n_t, 2.0).unwrap();
        let truncated = dict.response_matrix.rows(0, b).into_owned();
        let mu = mip_constant(&truncated, true).unwrap();
        let f = 1.0 / dict.grid_size as f64;
        let expect = ((std::f64::consts::PI * b as f64 * f).sin()
            / (b as f64 * (std::f64::consts::PI * f).sin()))
        .abs();
        assert!((mu - expect).abs() < 1e-10, "mu {mu} vs dirichlet {expect}");
    }

    #[test]
    fn mip_rejects_zero_column_normalization() {
        let mut m = CMat::identity(4, 4);
        m.set_column(2, &CVec::zeros(4).column(0).into_owned());
        assert!(mip_constant(&m, true).is_err());
    }

    #[test]
    fn brute_force_degenerate_full_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = cn_matrix(6, 4, 1.0, &mut rng);
        let y = cn_matrix(6, 2, 1.0, &mut rng);
        let problem = MeasurementProblem::new(y, phi, 4).unwrap();
        let est = brute_force_support(&problem).unwrap();
        assert_eq!(est.support, vec![0, 1, 2, 3]);
    }

    #[test]
    fn brute_force_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = cn_matrix(4, 200, 1.0, &mut rng);
        let y = cn_matrix(4, 1, 1.0, &mut rng);
        let problem = MeasurementProblem::new(y, phi, 5).unwrap();
        assert!(matches!(
            brute_force_support(&problem),
            Err(Error::GuardExceeded(_))
        ));
    }

    #[test]
    fn brute_force_zero_residual_at_true_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dict = crate::channel::build_dictionary(8, 1.5).unwrap();
        let (problem, truth) = sparse_problem(&dict.response_matrix, &[2, 9], 2, &mut rng);
        let est = brute_force_support(&problem).unwrap();
        let mut got = est.support.clone();
        got.sort_unstable();
        assert_eq!(got, truth);
        assert!(*est.residual_norms.last().unwrap() < 1e-10);
    }

    #[test]
    fn threshold_stopping_estimates_path_count() {
        let dict = crate::channel::build_dictionary(20, 1.0).unwrap();
        let phi = dft_matrix(20).adjoint() * &dict.response_matrix;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (problem, truth) = sparse_problem(&phi, &[1, 8, 15], 2, &mut rng);
        let est = somp_with_stopping(
            &problem,
            Stopping::ResidualBelow { threshold: 1e-8, max_iterations: 10 },
        )
        .unwrap();
        let mut got = est.support.clone();
        got.sort_unstable();
        assert_eq!(got, truth);
        assert_eq!(est.support.len(), 3);
    }

    #[test]
    fn flat_index_mapping() {
        assert_eq!(flat_to_pair(0, 8), (0, 0));
        assert_eq!(flat_to_pair(7, 8), (7, 0));
        assert_eq!(flat_to_pair(8, 8), (0, 1));
        assert_eq!(flat_to_pair(19, 8), (3, 2));
    }

    #[test]
    fn kronecker_flat_index_consistency() {
        // vec(A X B^T) ordering: column q of B kron A is b_j kron a_i with
        // q = j * ncols(A) + i.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = cn_matrix(3, 4, 1.0, &mut rng);
        let b = cn_matrix(2, 5, 1.0, &mut rng);
        let k = crate::linalg::kron(&b, &a);
        for q in 0..20 {
            let (i, j) = flat_to_pair(q, 4);
            let mut outer = CMat::zeros(3, 2);
            let ai = a.column(i);
            let bj = b.column(j);
            for r in 0..3 {
                for c in 0..2 {
                    outer[(r, c)] = ai[r] * bj[c];
                }
            }
            let expect = vc(&outer);
            assert!((k.column(q).into_owned() - expect).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn somp_matches_brute_force_when_incoherent(seed in 0u64..5000) {
            // G = 12, M = 8, L = 2, noiseless: whenever mu (2L-1) < 1 the
            // greedy path must agree with exhaustive search.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = low_coherence_frame(8, 12, 0.999 / 3.0, 100, &mut rng).unwrap();
            let mu = mip_constant(&phi, false).unwrap();
            prop_assert!(mu * 3.0 < 1.0);
            let support = vec![3usize, 10];
            let coeff = cn_matrix(2, 3, 1.0, &mut rng);
            let y = select_columns(&phi, &support) * coeff;
            let problem = MeasurementProblem::new(y, phi, 2).unwrap();
            let greedy = somp(&problem).unwrap();
            let oracle = brute_force_support(&problem).unwrap();
            let mut a = greedy.support.clone();
            let mut b = oracle.support.clone();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn somp_permutation_equivariance(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = cn_matrix(8, 10, 1.0, &mut rng);
            let y = cn_matrix(8, 2, 1.0, &mut rng);
            let problem = MeasurementProblem::new(y.clone(), phi.clone(), 3).unwrap();
            let base = somp(&problem).unwrap();
            // Rotate columns by 4.
            let perm: Vec<usize> = (0..10).map(|i| (i + 4) % 10).collect();
            let permuted = select_columns(&phi, &perm);
            let p2 = MeasurementProblem::new(y, permuted, 3).unwrap();
            let rotated = somp(&p2).unwrap();
            let mapped: Vec<usize> = rotated.support.iter().map(|&i| perm[i]).collect();
            prop_assert_eq!(base.support, mapped);
        }
    }
}
