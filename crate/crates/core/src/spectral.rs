//! Dirichlet spectrum of the superposition operator and the certificates
//! built on it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::AssembledOperator;
use crate::linalg::{bilinear, fix_sign, generalized_eigh, orthogonal_complement, LinalgError};

/// Relative gap below which neighbouring eigenvalues form one cluster.
pub const CLUSTER_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("requested {requested} eigenpairs but the mesh has {available} unknowns")]
    TooManyEigenpairs { requested: usize, available: usize },
    #[error("index k = {k} needs eigenpair k+1 but only {m} were computed")]
    IndexOutOfRange { k: usize, m: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Leading eigenpairs of the pencil `(K, M)`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// `M`-orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// `‖K e_k - λ_k M e_k‖₂`.
    pub residuals: Vec<f64>,
    /// Cluster id per eigenvalue; equal ids mark a numerical multiplicity.
    pub clusters: Vec<usize>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvector `e_k` (0-based).
    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    pub fn is_simple(&self, k: usize) -> bool {
        let id = self.clusters[k];
        self.clusters.iter().filter(|c| **c == id).count() == 1
    }
}

fn cluster_ids(values: &[f64]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(values.len());
    let mut id = 0;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            let prev = values[i - 1];
            if (v - prev).abs() > CLUSTER_TOLERANCE * v.abs().max(prev.abs()).max(f64::MIN_POSITIVE) {
                id += 1;
            }
        }
        ids.push(id);
    }
    ids
}

/// The `m` smallest eigenpairs of `K e = λ M e`.
pub fn solve_spectrum(op: &AssembledOperator, m: usize) -> Result<Spectrum, SpectralError> {
    let n = op.mesh.n_interior();
    if m > n {
        return Err(SpectralError::TooManyEigenpairs {
            requested: m,
            available: n,
        });
    }
    let (values, vectors) = generalized_eigh(&op.k, &op.mass)?;
    let eigenvalues = values[..m].to_vec();
    let eigenvectors = vectors.columns(0, m).into_owned();
    let residuals = (0..m)
        .map(|k| {
            let e = eigenvectors.column(k);
            (&op.k * e - &op.mass * e * eigenvalues[k]).norm()
        })
        .collect();
    let clusters = cluster_ids(&eigenvalues);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        residuals,
        clusters,
    })
}

/// Result of the constrained Rayleigh-quotient minimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RayleighCheck {
    pub k: usize,
    /// Minimum of `u^T K u / u^T M u` over the `K`-orthogonal complement of
    /// `e_1..e_k`.
    pub minimum: f64,
    /// `|minimum - λ_{k+1}| / |λ_{k+1}|`.
    pub deviation: f64,
    /// `min_± ‖u_min ∓ e_{k+1}‖_M`; absent inside a multiplicity cluster.
    pub eigenvector_error: Option<f64>,
}

/// Minimize the Rayleigh quotient over `{u : e_j^T K u = 0, j <= k}` by a
/// projected eigensolve and compare with `λ_{k+1}`.
pub fn rayleigh_verify(spectrum: &Spectrum, op: &AssembledOperator, k: usize) -> Result<RayleighCheck, SpectralError> {
    let m = spectrum.len();
    if k + 1 > m {
        return Err(SpectralError::IndexOutOfRange { k, m });
    }
    let n = op.mesh.n_interior();
    let (kz, mz, z) = if k == 0 {
        (op.k.clone(), op.mass.clone(), None)
    } else {
        let constraints = &op.k * spectrum.eigenvectors.columns(0, k);
        let z = orthogonal_complement(&constraints);
        let kz = z.transpose() * &op.k * &z;
        let mz = z.transpose() * &op.mass * &z;
        (kz, mz, Some(z))
    };
    let (vals, vecs) = generalized_eigh(&kz, &mz)?;
    let minimum = vals[0];
    let target = spectrum.eigenvalues[k];
    let deviation = (minimum - target).abs() / target.abs().max(f64::MIN_POSITIVE);

    let next = if k + 1 < m {
        Some(spectrum.eigenvalues[k + 1])
    } else {
        vals.get(1).copied()
    };
    let degenerate = next.is_some_and(|v| (v - minimum).abs() <= CLUSTER_TOLERANCE * v.abs().max(minimum.abs()))
        || !spectrum.is_simple(k);
    let eigenvector_error = if degenerate || n == k {
        None
    } else {
        let y = vecs.column(0).into_owned();
        let mut u = match &z {
            Some(z) => z * y,
            None => y,
        };
        u /= bilinear(&op.mass, &u, &u).sqrt();
        fix_sign(u.as_mut_slice());
        let e = spectrum.vector(k);
        let plus = &u - &e;
        let minus = &u + &e;
        Some(
            bilinear(&op.mass, &plus, &plus)
                .sqrt()
                .min(bilinear(&op.mass, &minus, &minus).sqrt()),
        )
    };
    Ok(RayleighCheck {
        k,
        minimum,
        deviation,
        eigenvector_error,
    })
}

/// Discrete reabsorption bound for the negative part of the measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityCertificate {
    /// Largest eigenvalue of the pencil `(K_minus, K_high)`.
    pub c0_gamma: f64,
    pub passes: bool,
    /// `(1 - c0_gamma, 1)`: `lower · u^T K_plus u <= u^T K u <= upper · u^T K_plus u`.
    pub lower_bound: f64,
    pub upper_bound: f64,
}

pub fn coercivity_certificate(op: &AssembledOperator) -> Result<CoercivityCertificate, SpectralError> {
    let c0_gamma = if op.k_minus.iter().all(|v| *v == 0.0) {
        // Still require K_high to be definite.
        crate::linalg::cholesky(&op.k_high, "high-exponent stiffness")?;
        0.0
    } else {
        let (vals, _) = generalized_eigh(&op.k_minus, &op.k_high).map_err(|e| match e {
            LinalgError::NotPositiveDefinite(_) => LinalgError::NotPositiveDefinite("high-exponent stiffness"),
            other => other,
        })?;
        vals.last().copied().unwrap_or(0.0).max(0.0)
    };
    Ok(CoercivityCertificate {
        c0_gamma,
        passes: c0_gamma < 1.0,
        lower_bound: 1.0 - c0_gamma,
        upper_bound: 1.0,
    })
}

/// Largest `u^T K u / (λ_k u^T M u)` over `draws` random `u` in
/// `span{e_1..e_k}` (1-based `k`).
pub fn subspace_norm_bound(
    spectrum: &Spectrum,
    op: &AssembledOperator,
    k: usize,
    draws: usize,
    seed: u64,
) -> Result<f64, SpectralError> {
    let m = spectrum.len();
    if k == 0 || k > m {
        return Err(SpectralError::IndexOutOfRange { k, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = spectrum.eigenvectors.columns(0, k);
    let lambda_k = spectrum.eigenvalues[k - 1];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..draws {
        let coeffs = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let u = basis * coeffs;
        let ratio = bilinear(&op.k, &u, &u) / (lambda_k * bilinear(&op.mass, &u, &u));
        worst = worst.max(ratio);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_operator, DomainMesh};
    use crate::measure::Atom;
    use std::f64::consts::PI;

    fn laplacian(n: usize, weight: f64) -> AssembledOperator {
        let mesh = DomainMesh::new(0.0, PI, n).unwrap();
        assemble_operator(&mesh, &[Atom::new(1.0, weight)], 0.5).unwrap()
    }

    #[test]
    fn too_many_eigenpairs() {
        let op = laplacian(8, 1.0);
        assert_eq!(
            solve_spectrum(&op, 9).unwrap_err(),
            SpectralError::TooManyEigenpairs {
                requested: 9,
                available: 8
            }
        );
    }

    #[test]
    fn doubling_the_measure_doubles_the_spectrum() {
        let one = solve_spectrum(&laplacian(64, 1.0), 5).unwrap();
        let two = solve_spectrum(&laplacian(64, 2.0), 5).unwrap();
        for k in 0..5 {
            assert!((two.eigenvalues[k] - 2.0 * one.eigenvalues[k]).abs() < 1e-10 * two.eigenvalues[k]);
            let diff = one.vector(k) - two.vector(k);
            assert!(diff.amax() < 1e-8);
        }
    }

    #[test]
    fn rayleigh_unconstrained_is_first_eigenvalue() {
        let op = laplacian(64, 1.0);
        let sp = solve_spectrum(&op, 4).unwrap();
        let r = rayleigh_verify(&sp, &op, 0).unwrap();
        assert!(r.deviation <= 1e-8);
        assert!(r.eigenvector_error.unwrap() < 1e-6);
    }

    #[test]
    fn rayleigh_second_level_is_four() {
        let op = laplacian(256, 1.0);
        let sp = solve_spectrum(&op, 4).unwrap();
        let r = rayleigh_verify(&sp, &op, 1).unwrap();
        assert!((r.minimum - 4.0).abs() < 4e-3);
        assert!(r.deviation <= 1e-8);
    }

    #[test]
    fn rayleigh_index_out_of_range() {
        let op = laplacian(16, 1.0);
        let sp = solve_spectrum(&op, 3).unwrap();
        assert!(matches!(
            rayleigh_verify(&sp, &op, 3),
            Err(SpectralError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn certificate_without_negative_part() {
        let c = coercivity_certificate(&laplacian(16, 1.0)).unwrap();
        assert_eq!(c.c0_gamma, 0.0);
        assert!(c.passes);
    }

    #[test]
    fn subspace_ratio_equality_and_strictness() {
        let op = laplacian(64, 1.0);
        let sp = solve_spectrum(&op, 5).unwrap();
        let e3 = sp.vector(2);
        let ratio = bilinear(&op.k, &e3, &e3) / (sp.eigenvalues[2] * bilinear(&op.mass, &e3, &e3));
        assert!((ratio - 1.0).abs() < 1e-12);
        let e1 = sp.vector(0);
        let ratio = bilinear(&op.k, &e1, &e1) / (sp.eigenvalues[2] * bilinear(&op.mass, &e1, &e1));
        assert!((ratio - sp.eigenvalues[0] / sp.eigenvalues[2]).abs() < 1e-12);
        assert!(ratio < 1.0);
        assert!(subspace_norm_bound(&sp, &op, 3, 200, 1).unwrap() <= 1.0 + 1e-8);
    }

    #[test]
    fn clusters_group_close_values() {
        assert_eq!(cluster_ids(&[1.0, 1.0 + 1e-12, 2.0, 3.0, 3.0]), vec![0, 0, 1, 2, 2]);
    }
}
