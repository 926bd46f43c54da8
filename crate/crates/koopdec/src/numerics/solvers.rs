//! Least squares, discrete Lyapunov, pseudo-inverse, spectral radius.

use super::{Matrix, NumericsError};
use nalgebra::linalg::Schur;

/// Stability margin below the unit circle required for the exact Lyapunov
/// path; guards the doubling iteration against near-critical dynamics.
pub const EPS_STAB: f64 = 1e-6;

/// Result of a regularized least-squares solve.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// The minimizer of `||targets - X * regressors||_F^2 + ridge * ||X||_F^2`.
    pub solution: Matrix,
    /// Set when `ridge == 0` and the regressors are rank deficient; the
    /// returned solution is then the minimum-norm one (via pseudo-inverse).
    /// Callers that need a unique solution should supply a positive ridge.
    pub rank_deficient: bool,
}

/// Solve `min_X ||targets - X * regressors||_F^2 + ridge * ||X||_F^2`.
///
/// `targets` is `p x N`, `regressors` is `q x N`; the solution is `p x q`.
/// Computed through the SVD of the regressors with Tikhonov filtering
/// `sigma / (sigma^2 + ridge)`, which for `ridge = 0` degenerates to the
/// minimum-norm (pseudo-inverse) solution with small singular values zeroed.
pub fn solve_least_squares(
    targets: &Matrix,
    regressors: &Matrix,
    ridge: f64,
) -> Result<LeastSquares, NumericsError> {
    if targets.cols() != regressors.cols() {
        return Err(NumericsError::DimensionMismatch {
            context: format!(
                "targets have {} columns, regressors {}",
                targets.cols(),
                regressors.cols()
            ),
        });
    }
    if regressors.cols() == 0 {
        return Err(NumericsError::InvalidArgument {
            context: "least squares needs at least one snapshot column".into(),
        });
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(NumericsError::InvalidArgument {
            context: format!("ridge must be finite and nonnegative, got {ridge}"),
        });
    }

    let q = regressors.rows();
    let n = regressors.cols();
    let svd = regressors.as_dmatrix().clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u requested");
    let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
    let sigma = &svd.singular_values;

    let sigma_max = sigma.iter().fold(0.0_f64, |a, &s| a.max(s));
    // Effective-rank cutoff for the unregularized path.
    let rank_tol = sigma_max * (q.max(n) as f64) * f64::EPSILON;

    let mut rank_deficient = false;
    let mut filter = vec![0.0; sigma.len()];
    for (i, &s) in sigma.iter().enumerate() {
        if ridge > 0.0 {
            filter[i] = s / (s * s + ridge);
        } else if s > rank_tol {
            filter[i] = 1.0 / s;
        } else {
            rank_deficient = true;
        }
    }
    if ridge == 0.0 && sigma.len() < q {
        rank_deficient = true;
    }

    // X = T * V * diag(filter) * U^T
    let tv = targets.as_dmatrix() * v_t.transpose(); // p x r
    let mut scaled = tv;
    for (i, f) in filter.iter().enumerate() {
        scaled.column_mut(i).scale_mut(*f);
    }
    let x = scaled * u.transpose(); // p x q
    Ok(LeastSquares {
        solution: Matrix::from_dmatrix(x),
        rank_deficient,
    })
}

/// Solve the discrete Lyapunov equation `X = A X A^T + Q` (the closed form of
/// `sum_t A^t Q (A^T)^t`) by the squared-Smith doubling iteration.
///
/// Requires `spectral_radius(A) < 1 - EPS_STAB`; otherwise callers should fall
/// back to a finite-horizon sum. `Q` is symmetrized on entry; the returned `X`
/// is symmetric with residual `||A X A^T + Q - X||_F <= 1e-10 * max(1, ||X||_F)`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix, NumericsError> {
    let n = a.rows();
    if a.cols() != n || q.rows() != n || q.cols() != n {
        return Err(NumericsError::DimensionMismatch {
            context: format!(
                "lyapunov needs square A and Q of equal size, got A {}x{}, Q {}x{}",
                a.rows(),
                a.cols(),
                q.rows(),
                q.cols()
            ),
        });
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 - EPS_STAB {
        return Err(NumericsError::UnstableDynamics {
            spectral_radius: rho,
        });
    }

    // X_{k+1} = X_k + A_k X_k A_k^T, A_{k+1} = A_k^2 accumulates the sum over
    // 2^k horizon terms per step.
    let mut x = q.symmetrized();
    let mut a_k = a.clone();
    let mut converged = false;
    for _ in 0..200 {
        let term = &(&a_k * &x) * &a_k.transpose();
        x = &x + &term;
        if !x.is_finite() {
            return Err(NumericsError::NonFinite {
                context: "lyapunov doubling iterate".into(),
            });
        }
        if term.frobenius_norm() <= 1e-13 * x.frobenius_norm().max(1.0) {
            converged = true;
            break;
        }
        a_k = &a_k * &a_k;
    }
    if !converged {
        return Err(NumericsError::EigenNonConvergence {
            iterate_norm: x.frobenius_norm(),
        });
    }
    Ok(x.symmetrized())
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `tol_rel * sigma_max` treated as zero.
pub fn pseudo_inverse(a: &Matrix, tol_rel: f64) -> Result<Matrix, NumericsError> {
    if !(tol_rel.is_finite() && tol_rel > 0.0) {
        return Err(NumericsError::InvalidArgument {
            context: format!("tol_rel must be finite and positive, got {tol_rel}"),
        });
    }
    let svd = a.as_dmatrix().clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u requested");
    let v_t = svd.v_t.as_ref().expect("svd with v_t requested");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let cutoff = tol_rel * sigma_max;

    let mut vs = v_t.transpose(); // n x r
    for (i, &s) in sigma.iter().enumerate() {
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        vs.column_mut(i).scale_mut(inv);
    }
    Ok(Matrix::from_dmatrix(vs * u.transpose()))
}

/// Largest eigenvalue modulus, computed from the real Schur form
/// (Hessenberg reduction followed by the implicit-shift QR iteration).
pub fn spectral_radius(a: &Matrix) -> Result<f64, NumericsError> {
    let n = a.rows();
    if a.cols() != n || n == 0 {
        return Err(NumericsError::DimensionMismatch {
            context: format!("spectral radius needs a nonempty square matrix, got {}x{}", a.rows(), a.cols()),
        });
    }
    let schur = Schur::try_new(a.as_dmatrix().clone(), 1e-14, 20_000).ok_or(
        NumericsError::EigenNonConvergence {
            iterate_norm: a.frobenius_norm(),
        },
    )?;
    let eigs = schur.complex_eigenvalues();
    Ok(eigs.iter().fold(0.0_f64, |acc, z| acc.max(z.norm())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Plain Gauss-Jordan inverse, independent of the SVD path.
    fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
        let n = m.rows();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i)).collect();
        let mut inv: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            assert!(p.abs() > 1e-12, "singular matrix in oracle");
            for j in 0..n {
                a[col][j] /= p;
                inv[col][j] /= p;
            }
            for i in 0..n {
                if i != col {
                    let f = a[i][col];
                    for j in 0..n {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
        Matrix::from_rows(&inv).unwrap()
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let diff = (a - b).frobenius_norm();
        let scale = b.frobenius_norm().max(1.0);
        assert!(
            diff <= tol * scale,
            "matrices differ: ||diff|| = {diff:.3e}, scale = {scale:.3e}, tol = {tol:.1e}"
        );
    }

    #[test]
    fn lstsq_identity_case() {
        let i3 = Matrix::identity(3);
        let sol = solve_least_squares(&i3, &i3, 0.0).unwrap();
        assert!(!sol.rank_deficient);
        assert_close(&sol.solution, &i3, 1e-12);
    }

    #[test]
    fn lstsq_exact_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let regressors = random_matrix(&mut rng, 4, 20);
        let targets = regressors.scale(2.0);
        let sol = solve_least_squares(&targets, &regressors, 0.0).unwrap();
        assert!(!sol.rank_deficient);
        assert_close(&sol.solution, &Matrix::identity(4).scale(2.0), 1e-10);
    }

    #[test]
    fn lstsq_matches_normal_equations_oracle() {
        // Independent route: (T R^T)(R R^T + ridge I)^{-1} via Gauss-Jordan.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let targets = random_matrix(&mut rng, 4, 50);
        let regressors = random_matrix(&mut rng, 4, 50);
        let ridge = 0.1;
        let sol = solve_least_squares(&targets, &regressors, ridge).unwrap();

        let rrt = &regressors * &regressors.transpose();
        let mut lhs = rrt;
        for i in 0..4 {
            lhs.set(i, i, lhs.get(i, i) + ridge);
        }
        let expected = &(&targets * &regressors.transpose()) * &gauss_jordan_inverse(&lhs);
        assert_close(&sol.solution, &expected, 1e-10);
    }

    #[test]
    fn lstsq_square_invertible_reproduces_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let regressors = random_matrix(&mut rng, 5, 5);
            let targets = random_matrix(&mut rng, 3, 5);
            let sol = solve_least_squares(&targets, &regressors, 0.0).unwrap();
            let expected = &targets * &gauss_jordan_inverse(&regressors);
            assert_close(&sol.solution, &expected, 1e-10);
        }
    }

    #[test]
    fn lstsq_flags_rank_deficiency() {
        // Two identical rows: rank 1 out of 2.
        let regressors = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let targets = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let sol = solve_least_squares(&targets, &regressors, 0.0).unwrap();
        assert!(sol.rank_deficient);
        // Minimum-norm solution still reproduces the targets.
        let recon = &sol.solution * &regressors;
        assert_close(&recon, &targets, 1e-10);
        // A positive ridge silences the flag.
        let sol = solve_least_squares(&targets, &regressors, 1e-8).unwrap();
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn lstsq_rejects_mismatched_columns() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(matches!(
            solve_least_squares(&a, &b, 0.0),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lyapunov_zero_dynamics_returns_q() {
        let q = Matrix::identity(3);
        let x = solve_discrete_lyapunov(&Matrix::zeros(3, 3), &q).unwrap();
        assert_close(&x, &q, 1e-14);
    }

    #[test]
    fn lyapunov_geometric_series_case() {
        // A = 0.5 I, Q = I: X = sum 0.25^t I = (4/3) I.
        let a = Matrix::identity(2).scale(0.5);
        let x = solve_discrete_lyapunov(&a, &Matrix::identity(2)).unwrap();
        assert_close(&x, &Matrix::identity(2).scale(4.0 / 3.0), 1e-12);
    }

    #[test]
    fn lyapunov_matches_truncated_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = random_matrix(&mut rng, 5, 5);
        let rho = spectral_radius(&raw).unwrap();
        let a = raw.scale(0.8 / rho);
        let b = random_matrix(&mut rng, 5, 2);
        let q = &b * &b.transpose();

        let x = solve_discrete_lyapunov(&a, &q).unwrap();

        // Oracle: direct summation of 201 horizon terms.
        let mut sum = q.clone();
        let mut a_pow = a.clone();
        for _ in 0..200 {
            sum = &sum + &(&(&a_pow * &q) * &a_pow.transpose());
            a_pow = &a_pow * &a;
        }
        assert_close(&x, &sum, 1e-8);
    }

    #[test]
    fn lyapunov_residual_and_symmetry_over_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let n = rng.random_range(2..7);
            let raw = random_matrix(&mut rng, n, n);
            let rho0 = spectral_radius(&raw).unwrap();
            if rho0 < 1e-8 {
                continue;
            }
            let target = rng.random_range(0.3..0.95);
            let a = raw.scale(target / rho0);
            let b = random_matrix(&mut rng, n, 2);
            let q = &b * &b.transpose();
            let x = solve_discrete_lyapunov(&a, &q).unwrap();

            let residual = &(&(&a * &x) * &a.transpose()) + &(&q - &x);
            let rel = residual.frobenius_norm() / x.frobenius_norm().max(1.0);
            assert!(rel <= 1e-10, "trial {trial}: residual {rel:.3e}");

            let asym = (&x - &x.transpose()).frobenius_norm();
            assert!(asym <= 1e-12 * x.frobenius_norm(), "trial {trial}: asymmetry {asym:.3e}");
        }
    }

    #[test]
    fn lyapunov_rejects_unstable_dynamics() {
        let a = Matrix::identity(2).scale(1.01);
        assert!(matches!(
            solve_discrete_lyapunov(&a, &Matrix::identity(2)),
            Err(NumericsError::UnstableDynamics { .. })
        ));
    }

    #[test]
    fn pinv_diagonal_case() {
        let a = Matrix::diagonal(&[2.0, 0.0]);
        let p = pseudo_inverse(&a, 1e-12).unwrap();
        assert_close(&p, &Matrix::diagonal(&[0.5, 0.0]), 1e-14);
    }

    #[test]
    fn pinv_zero_matrix() {
        let p = pseudo_inverse(&Matrix::zeros(3, 2), 1e-12).unwrap();
        assert_eq!(p, Matrix::zeros(2, 3));
    }

    #[test]
    fn pinv_matches_direct_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 3);
        let p = pseudo_inverse(&a, 1e-12).unwrap();
        assert_close(&p, &gauss_jordan_inverse(&a), 1e-10);
    }

    #[test]
    fn pinv_satisfies_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (r, c) in [(4, 4), (5, 3), (3, 5)] {
            let a = random_matrix(&mut rng, r, c);
            let p = pseudo_inverse(&a, 1e-12).unwrap();
            let apa = &(&a * &p) * &a;
            let pap = &(&p * &a) * &p;
            let ap = &a * &p;
            let pa = &p * &a;
            let scale = a.frobenius_norm().max(1.0);
            assert!((&apa - &a).frobenius_norm() <= 1e-8 * scale);
            assert!((&pap - &p).frobenius_norm() <= 1e-8 * p.frobenius_norm().max(1.0));
            assert!((&ap - &ap.transpose()).frobenius_norm() <= 1e-8 * ap.frobenius_norm().max(1.0));
            assert!((&pa - &pa.transpose()).frobenius_norm() <= 1e-8 * pa.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn pinv_is_an_involution_on_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_matrix(&mut rng, 4, 6);
        let p = pseudo_inverse(&a, 1e-12).unwrap();
        let back = pseudo_inverse(&p, 1e-12).unwrap();
        assert_close(&back, &a, 1e-8);
    }

    #[test]
    fn spectral_radius_diagonal() {
        let a = Matrix::diagonal(&[0.5, -0.9]);
        assert!((spectral_radius(&a).unwrap() - 0.9).abs() <= 1e-12);
    }

    #[test]
    fn spectral_radius_complex_pair() {
        // Rotation by 90 degrees scaled by 0.7: eigenvalues +/- 0.7i.
        let a = Matrix::from_rows(&[vec![0.0, -0.7], vec![0.7, 0.0]]).unwrap();
        assert!((spectral_radius(&a).unwrap() - 0.7).abs() <= 1e-10);
    }

    #[test]
    fn spectral_radius_matches_power_iteration_oracle() {
        // Oracle: normalized power iteration. The dominant invariant subspace
        // has dimension at most two (real eigenvalue or complex pair), so late
        // iterates satisfy A^2 u = alpha A u + beta u; the max-modulus root of
        // mu^2 - alpha mu - beta recovers the spectral radius either way.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for trial in 0..5 {
            // A diagonal shift keeps the dominant modulus isolated; fully
            // centered ensembles can have three-way modulus near-ties that
            // stall any fixed-order recurrence fit.
            let mut a = random_matrix(&mut rng, 8, 8);
            for i in 0..8 {
                a.set(i, i, a.get(i, i) + 1.2);
            }
            let direct = spectral_radius(&a).unwrap();

            let mut u0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n0 = crate::util::vec_norm(&u0);
            u0.iter_mut().for_each(|x| *x /= n0);

            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let mut oracle = f64::NAN;
            // Iterate in chunks until the two-step recurrence fit explains the
            // iterates; small modulus gaps just take more chunks.
            'chunks: for _ in 0..60 {
                for _ in 0..50_000 {
                    let w = a.mul_vec(&u0);
                    let nw = crate::util::vec_norm(&w);
                    assert!(nw > 0.0);
                    u0 = w.into_iter().map(|x| x / nw).collect();
                }
                // Two more steps from the current iterate: u0 -> v1 -> v2.
                let w1 = a.mul_vec(&u0);
                let s1 = crate::util::vec_norm(&w1);
                let v1: Vec<f64> = w1.iter().map(|x| x / s1).collect();
                let w2 = a.mul_vec(&v1);
                let s2 = crate::util::vec_norm(&w2);
                let v2: Vec<f64> = w2.iter().map(|x| x / s2).collect();

                // Fit s1*s2*v2 = alpha * (s1*v1) + beta * u0 in an orthonormal
                // basis of span{u0, v1}; normal equations cancel catastrophically
                // once the iterates become collinear.
                let x1: Vec<f64> = v1.iter().map(|x| x * s1).collect();
                let y: Vec<f64> = v2.iter().map(|x| x * s1 * s2).collect();
                let e1 = u0.clone();
                let a1 = dot(&x1, &e1);
                let perp: Vec<f64> = x1.iter().zip(&e1).map(|(x, e)| x - a1 * e).collect();
                let a2 = crate::util::vec_norm(&perp);

                let residual;
                if a2 <= 1e-8 * s1 {
                    // Collinear iterates: a single real dominant eigenvalue,
                    // whose modulus is the converged step norm.
                    oracle = s1;
                    let y1 = dot(&y, &e1);
                    let mut acc = 0.0;
                    for i in 0..8 {
                        let r = y[i] - y1 * e1[i];
                        acc += r * r;
                    }
                    residual = acc.sqrt() / crate::util::vec_norm(&y);
                } else {
                    let e2: Vec<f64> = perp.iter().map(|x| x / a2).collect();
                    let y1 = dot(&y, &e1);
                    let y2 = dot(&y, &e2);
                    let alpha = y2 / a2;
                    let beta = y1 - alpha * a1;
                    let mut acc = 0.0;
                    for i in 0..8 {
                        let r = y[i] - y1 * e1[i] - y2 * e2[i];
                        acc += r * r;
                    }
                    residual = acc.sqrt() / crate::util::vec_norm(&y);

                    let disc = alpha * alpha + 4.0 * beta;
                    oracle = if disc >= 0.0 {
                        let root = disc.sqrt();
                        ((alpha + root) / 2.0).abs().max(((alpha - root) / 2.0).abs())
                    } else {
                        (-beta).sqrt()
                    };
                }
                if residual < 1e-11 {
                    break 'chunks;
                }
            }
            assert!(
                (direct - oracle).abs() <= 1e-8 * direct.max(1.0),
                "trial {trial}: schur {direct} vs power-iteration {oracle}"
            );
        }
    }
}
