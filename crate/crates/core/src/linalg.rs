//! Dense helpers for symmetric-definite pencils.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("symmetric eigensolver did not converge within {max_iterations} sweeps (size {size})")]
    NoConvergence { size: usize, max_iterations: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular system")]
    Singular,
}

const EIGEN_SWEEPS: usize = 10_000;

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>, LinalgError> {
    Cholesky::new(m.clone()).ok_or(LinalgError::NotPositiveDefinite(what))
}

/// Eigenpairs of the pencil `A x = lambda B x` with `B` symmetric positive
/// definite, via Cholesky reduction.
///
/// Eigenvalues are ascending; eigenvectors are `B`-orthonormal columns with
/// their first significant coordinate positive.
pub fn generalized_eigh(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(LinalgError::Dimension(format!(
            "pencil {}x{} / {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let chol = cholesky(b, "pencil right-hand matrix")?;
    let l = chol.l();
    // C = L^{-1} A L^{-T}
    let y = l.solve_lower_triangular(a).ok_or(LinalgError::Singular)?;
    let c = l.solve_lower_triangular(&y.transpose()).ok_or(LinalgError::Singular)?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, EIGEN_SWEEPS).ok_or(LinalgError::NoConvergence {
        size: n,
        max_iterations: EIGEN_SWEEPS,
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut sorted = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        sorted.set_column(col, &eig.eigenvectors.column(i));
    }
    let mut vectors = l
        .transpose()
        .solve_upper_triangular(&sorted)
        .ok_or(LinalgError::Singular)?;
    for mut col in vectors.column_iter_mut() {
        fix_sign(col.as_mut_slice());
    }
    Ok((values, vectors))
}

/// Flip `v` so that its first significant coordinate is positive.
pub fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Largest eigenvalue of the pencil `(A, B)`.
pub fn max_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let (vals, _) = generalized_eigh(a, b)?;
    Ok(*vals.last().expect("non-empty pencil"))
}

/// Orthonormal basis (columns) of the orthogonal complement of the column
/// space of `w`, built from Householder reflections.
///
/// `w` must have full column rank.
pub fn orthogonal_complement(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = w.shape();
    assert!(k <= n, "more constraints than unknowns");
    let mut r = w.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x = r.view((j, j), (n - j, 1)).column(0).into_owned();
        let alpha = x.norm();
        let mut v = x;
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
        }
        // Apply H = I - 2 v v^T to the trailing block.
        for c in j..k {
            let mut col = r.view_mut((j, c), (n - j, 1));
            let d = 2.0 * v.dot(&col.column(0));
            col.column_mut(0).axpy(-d, &v, 1.0);
        }
        reflectors.push(v);
    }
    // Columns k..n of Q = H_0 H_1 ... H_{k-1}.
    let mut q = DMatrix::zeros(n, n - k);
    for c in 0..(n - k) {
        q[(k + c, c)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        for c in 0..(n - k) {
            let mut col = q.view_mut((j, c), (n - j, 1));
            let d = 2.0 * v.dot(&col.column(0));
            col.column_mut(0).axpy(-d, v, 1.0);
        }
    }
    q
}

/// `x^T A y`.
pub fn bilinear(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(a * y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn pencil_eigenpairs_satisfy_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(6, &mut rng);
        let b = random_spd(6, &mut rng);
        let (vals, vecs) = generalized_eigh(&a, &b).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let gram = vecs.transpose() * &b * &vecs;
        assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-12);
        for (i, lam) in vals.iter().enumerate() {
            let x = vecs.column(i);
            let r = &a * x - &b * x * *lam;
            assert!(r.norm() < 1e-10 * (1.0 + lam.abs()));
        }
    }

    #[test]
    fn non_spd_right_matrix_is_rejected() {
        let a = DMatrix::identity(3, 3);
        let b = -DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            generalized_eigh(&a, &b),
            Err(LinalgError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let z = orthogonal_complement(&w);
        assert_eq!(z.shape(), (10, 7));
        assert!((z.transpose() * &z - DMatrix::identity(7, 7)).amax() < 1e-13);
        assert!((w.transpose() * &z).amax() < 1e-13);
    }

    #[test]
    fn sign_convention() {
        let mut v = [0.0, -1e-20, -0.3, 0.9];
        fix_sign(&mut v);
        assert!(v[2] > 0.0);
    }
}
