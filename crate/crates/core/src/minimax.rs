//! Energy functional of `A_μ u = λ̄ u + f(u)` with zero exterior data, the
//! hypothesis checks on `f`, the eigenvalue window and a deflated multistart
//! search for ± pairs of solutions.
//!
//! The discrete energy is
//!
//! ```text
//! J(u) = ½ uᵀKu − (λ̄/2) uᵀMu − Σᵢ mᵢ F(uᵢ)
//! ```
//!
//! with lumped masses `mᵢ`, so `gradient` is the exact derivative of `energy`.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{lumped_masses, AssembledOperator};
use crate::linalg::{bilinear, cholesky, LinalgError};
use crate::spectral::Spectrum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinimaxError {
    #[error("lambda0 must be nonzero")]
    ZeroLambda0,
    #[error("non-finite parameter: {0}")]
    NonFinite(&'static str),
    #[error("invalid table nonlinearity: {0}")]
    InvalidTable(String),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("insufficient spectrum: largest computed eigenvalue {largest} is below the window bound {bound}")]
    InsufficientSpectrum { largest: f64, bound: f64 },
    #[error("window needs eigenpair {needed} but only {available} were computed")]
    MissingEigenpairs { needed: usize, available: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Shape of the odd nonlinearity `f(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `λ₀ t / (1 + t²)`.
    RationalDecay,
    /// `λ₀ t exp(−t²)`.
    GaussianDecay,
    /// Odd piecewise-linear interpolant of `(t, f(t))` knots on `t ≥ 0`,
    /// constant beyond the last knot. The first knot is `(0, 0)`.
    Table { knots: Vec<(f64, f64)> },
    /// `f ≡ 0`; the problem is linear.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    lambda0: f64,
    lambda_bar: f64,
}

impl Nonlinearity {
    pub fn rational_decay(lambda0: f64, lambda_bar: f64) -> Result<Self, MinimaxError> {
        Self::analytic(NonlinearityKind::RationalDecay, lambda0, lambda_bar)
    }

    pub fn gaussian_decay(lambda0: f64, lambda_bar: f64) -> Result<Self, MinimaxError> {
        Self::analytic(NonlinearityKind::GaussianDecay, lambda0, lambda_bar)
    }

    fn analytic(kind: NonlinearityKind, lambda0: f64, lambda_bar: f64) -> Result<Self, MinimaxError> {
        if !lambda0.is_finite() {
            return Err(MinimaxError::NonFinite("lambda0"));
        }
        if !lambda_bar.is_finite() {
            return Err(MinimaxError::NonFinite("lambda_bar"));
        }
        if lambda0 == 0.0 {
            return Err(MinimaxError::ZeroLambda0);
        }
        Ok(Nonlinearity {
            kind,
            lambda0,
            lambda_bar,
        })
    }

    /// Table nonlinearity from knots `(t, f(t))` with `t > 0` strictly
    /// increasing. `λ₀` is the slope of the first segment.
    pub fn table(points: &[(f64, f64)], lambda_bar: f64) -> Result<Self, MinimaxError> {
        if !lambda_bar.is_finite() {
            return Err(MinimaxError::NonFinite("lambda_bar"));
        }
        if points.is_empty() {
            return Err(MinimaxError::InvalidTable("no knots".into()));
        }
        let mut knots = vec![(0.0, 0.0)];
        for &(t, v) in points {
            if !(t.is_finite() && v.is_finite()) {
                return Err(MinimaxError::InvalidTable(format!("non-finite knot ({t}, {v})")));
            }
            let last = knots.last().expect("non-empty").0;
            if t <= last {
                return Err(MinimaxError::InvalidTable(format!(
                    "knot abscissae must be positive and strictly increasing, got {t} after {last}"
                )));
            }
            knots.push((t, v));
        }
        let lambda0 = knots[1].1 / knots[1].0;
        if lambda0 == 0.0 {
            return Err(MinimaxError::ZeroLambda0);
        }
        Ok(Nonlinearity {
            kind: NonlinearityKind::Table { knots },
            lambda0,
            lambda_bar,
        })
    }

    pub fn zero(lambda_bar: f64) -> Result<Self, MinimaxError> {
        if !lambda_bar.is_finite() {
            return Err(MinimaxError::NonFinite("lambda_bar"));
        }
        Ok(Nonlinearity {
            kind: NonlinearityKind::Zero,
            lambda0: 0.0,
            lambda_bar,
        })
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    /// All kinds are odd by construction.
    pub fn is_odd(&self) -> bool {
        true
    }

    pub fn f(&self, t: f64) -> f64 {
        let l = self.lambda0;
        match &self.kind {
            NonlinearityKind::RationalDecay => l * t / (1.0 + t * t),
            NonlinearityKind::GaussianDecay => l * t * (-t * t).exp(),
            NonlinearityKind::Table { knots } => {
                let v = table_value(knots, t.abs());
                if t < 0.0 {
                    -v
                } else {
                    v
                }
            }
            NonlinearityKind::Zero => 0.0,
        }
    }

    /// `F(t) = ∫₀ᵗ f`.
    pub fn primitive(&self, t: f64) -> f64 {
        let l = self.lambda0;
        match &self.kind {
            NonlinearityKind::RationalDecay => 0.5 * l * (t * t).ln_1p(),
            NonlinearityKind::GaussianDecay => -0.5 * l * (-t * t).exp_m1(),
            NonlinearityKind::Table { knots } => table_primitive(knots, t.abs()),
            NonlinearityKind::Zero => 0.0,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let l = self.lambda0;
        match &self.kind {
            NonlinearityKind::RationalDecay => {
                let q = 1.0 + t * t;
                l * (1.0 - t * t) / (q * q)
            }
            NonlinearityKind::GaussianDecay => l * (1.0 - 2.0 * t * t) * (-t * t).exp(),
            NonlinearityKind::Table { knots } => table_slope(knots, t.abs()),
            NonlinearityKind::Zero => 0.0,
        }
    }
}

fn table_segment(knots: &[(f64, f64)], t: f64) -> Option<usize> {
    // Index i with knots[i].0 <= t < knots[i+1].0; None past the last knot.
    let i = knots.partition_point(|k| k.0 <= t);
    if i >= knots.len() {
        None
    } else {
        Some(i - 1)
    }
}

fn table_slope(knots: &[(f64, f64)], t: f64) -> f64 {
    match table_segment(knots, t) {
        Some(i) => (knots[i + 1].1 - knots[i].1) / (knots[i + 1].0 - knots[i].0),
        None => 0.0,
    }
}

fn table_value(knots: &[(f64, f64)], t: f64) -> f64 {
    match table_segment(knots, t) {
        Some(i) => knots[i].1 + table_slope(knots, t) * (t - knots[i].0),
        None => knots.last().expect("non-empty").1,
    }
}

fn table_primitive(knots: &[(f64, f64)], t: f64) -> f64 {
    let mut acc = 0.0;
    for w in knots.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t >= t1 {
            acc += 0.5 * (v0 + v1) * (t1 - t0);
        } else {
            let v = v0 + (v1 - v0) / (t1 - t0) * (t - t0);
            return acc + 0.5 * (v0 + v) * (t - t0);
        }
    }
    let (tn, vn) = *knots.last().expect("non-empty");
    acc + vn * (t - tn)
}

const GRID_DECADE_LO: i32 = -6;
const GRID_DECADE_HI: i32 = 6;
const GRID_PER_DECADE: usize = 200;

/// Positive log-spaced grid on `[1e-6, 1e6]`.
fn log_grid() -> Vec<f64> {
    let decades = (GRID_DECADE_HI - GRID_DECADE_LO) as usize;
    let n = decades * GRID_PER_DECADE;
    (0..=n)
        .map(|i| 10f64.powf(GRID_DECADE_LO as f64 + i as f64 / GRID_PER_DECADE as f64))
        .collect()
}

/// Both signs of [`log_grid`].
fn signed_grid() -> impl Iterator<Item = f64> {
    log_grid().into_iter().flat_map(|t| [t, -t])
}

/// Empirical constant in `|f(t)| ≤ ε|t| + a_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub epsilon: f64,
    pub a_epsilon: f64,
    /// Grid point attaining `a_ε`.
    pub maximizer: f64,
    /// The supremum sits in the top decade of the grid: `f` is not
    /// dominated by `ε|t|`.
    pub violation: bool,
}

pub fn growth_bound(f: impl Fn(f64) -> f64, epsilon: f64) -> Result<GrowthBound, MinimaxError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MinimaxError::InvalidEpsilon(epsilon));
    }
    let mut best = 0.0;
    let mut arg = 0.0;
    for t in signed_grid() {
        let g = f(t).abs() - epsilon * t.abs();
        if g > best {
            best = g;
            arg = t;
        }
    }
    let top = 10f64.powi(GRID_DECADE_HI - 1);
    Ok(GrowthBound {
        epsilon,
        a_epsilon: best,
        maximizer: arg,
        violation: best > 0.0 && arg.abs() >= top,
    })
}

pub fn check_growth(nl: &Nonlinearity, epsilon: f64) -> Result<GrowthBound, MinimaxError> {
    growth_bound(|t| nl.f(t), epsilon)
}

/// Grid checks of the structural hypotheses on `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub tolerance: f64,
    /// `sup |f|` over the grid; finite means bounded on bounded sets.
    pub sup_abs: f64,
    pub bounded_on_compacts: bool,
    /// `max |f(t)/t|` over `|t| ≥ 1e5`.
    pub ratio_at_infinity: f64,
    pub sublinear_at_infinity: bool,
    /// `max |f(t)/t − λ₀|` over `0 < |t| ≤ 1e-5`.
    pub deviation_at_zero: f64,
    pub linear_at_zero: bool,
    pub odd: bool,
}

impl HypothesisReport {
    pub fn all_hold(&self) -> bool {
        self.bounded_on_compacts && self.sublinear_at_infinity && self.linear_at_zero && self.odd
    }
}

pub fn check_hypotheses(nl: &Nonlinearity, tolerance: f64) -> HypothesisReport {
    let mut sup_abs = 0.0f64;
    let mut ratio_at_infinity = 0.0f64;
    let mut deviation_at_zero = 0.0f64;
    let mut odd = true;
    for t in signed_grid() {
        let v = nl.f(t);
        sup_abs = sup_abs.max(v.abs());
        if t.abs() >= 1e5 {
            ratio_at_infinity = ratio_at_infinity.max((v / t).abs());
        }
        if t.abs() <= 1e-5 {
            deviation_at_zero = deviation_at_zero.max((v / t - nl.lambda0()).abs());
        }
        odd &= nl.f(-t) == -v;
    }
    HypothesisReport {
        tolerance,
        sup_abs,
        bounded_on_compacts: sup_abs.is_finite(),
        ratio_at_infinity,
        sublinear_at_infinity: ratio_at_infinity <= tolerance,
        deviation_at_zero,
        linear_at_zero: deviation_at_zero <= tolerance * nl.lambda0().abs().max(1.0),
        odd,
    }
}

/// `J(u)`.
pub fn energy(op: &AssembledOperator, nl: &Nonlinearity, u: &DVector<f64>) -> f64 {
    let lumped = lumped_masses(&op.mesh);
    energy_with(op, nl, &lumped, u)
}

fn energy_with(op: &AssembledOperator, nl: &Nonlinearity, lumped: &DVector<f64>, u: &DVector<f64>) -> f64 {
    assert_eq!(u.len(), op.mesh.n_interior(), "vector does not match the mesh");
    let quad = 0.5 * bilinear(&op.k, u, u) - 0.5 * nl.lambda_bar() * bilinear(&op.mass, u, u);
    let nonlinear: f64 = u.iter().zip(lumped.iter()).map(|(x, m)| m * nl.primitive(*x)).sum();
    quad - nonlinear
}

/// `Ku − λ̄Mu − N(u)` with `N(u)ᵢ = mᵢ f(uᵢ)`.
pub fn gradient(op: &AssembledOperator, nl: &Nonlinearity, u: &DVector<f64>) -> DVector<f64> {
    let lumped = lumped_masses(&op.mesh);
    gradient_parts(op, nl, &lumped, u).0
}

/// Gradient and `Ku`.
fn gradient_parts(
    op: &AssembledOperator,
    nl: &Nonlinearity,
    lumped: &DVector<f64>,
    u: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    assert_eq!(u.len(), op.mesh.n_interior(), "vector does not match the mesh");
    let ku = &op.k * u;
    let mu = &op.mass * u;
    let g = DVector::from_fn(u.len(), |i, _| ku[i] - nl.lambda_bar() * mu[i] - lumped[i] * nl.f(u[i]));
    (g, ku)
}

/// `K − λ̄M − diag(mᵢ f'(uᵢ))`.
pub fn hessian(op: &AssembledOperator, nl: &Nonlinearity, u: &DVector<f64>) -> DMatrix<f64> {
    let lumped = lumped_masses(&op.mesh);
    hessian_with(op, nl, &lumped, u)
}

fn hessian_with(op: &AssembledOperator, nl: &Nonlinearity, lumped: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let mut h = &op.k - &op.mass * nl.lambda_bar();
    for i in 0..u.len() {
        h[(i, i)] -= lumped[i] * nl.derivative(u[i]);
    }
    h
}

/// `‖Ku − λ̄Mu − N(u)‖ / (1 + ‖Ku‖)`.
pub fn relative_residual(op: &AssembledOperator, nl: &Nonlinearity, u: &DVector<f64>) -> f64 {
    let lumped = lumped_masses(&op.mesh);
    let (g, ku) = gradient_parts(op, nl, &lumped, u);
    g.norm() / (1.0 + ku.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowVariant {
    /// `λ₀ < 0`: `λ₀ + λ̄ < λ_h ≤ λ_k < λ̄`.
    Standard,
    /// `λ₀ > 0`: `λ̄ < λ_h ≤ λ_k < λ₀ + λ̄`.
    Mirrored,
}

/// Eigenvalues inside the open window. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub variant: WindowVariant,
    pub lambda0: f64,
    pub lambda_bar: f64,
    pub lower: f64,
    pub upper: f64,
    pub h: Option<usize>,
    pub k: Option<usize>,
    /// `λ_h − lower`.
    pub lower_margin: Option<f64>,
    /// `upper − λ_k`.
    pub upper_margin: Option<f64>,
    pub pairs_predicted: usize,
    pub lambda_bar_in_spectrum: bool,
    /// Distance from `λ̄` to the nearest computed eigenvalue.
    pub resonance_distance: f64,
}

pub fn lambda_window(spectrum: &Spectrum, nl: &Nonlinearity) -> Result<WindowReport, MinimaxError> {
    window_from_eigenvalues(&spectrum.eigenvalues, nl.lambda0(), nl.lambda_bar())
}

pub fn window_from_eigenvalues(
    eigenvalues: &[f64],
    lambda0: f64,
    lambda_bar: f64,
) -> Result<WindowReport, MinimaxError> {
    if !lambda0.is_finite() {
        return Err(MinimaxError::NonFinite("lambda0"));
    }
    if !lambda_bar.is_finite() {
        return Err(MinimaxError::NonFinite("lambda_bar"));
    }
    if lambda0 == 0.0 {
        return Err(MinimaxError::ZeroLambda0);
    }
    let (variant, lower, upper) = if lambda0 < 0.0 {
        (WindowVariant::Standard, lambda0 + lambda_bar, lambda_bar)
    } else {
        (WindowVariant::Mirrored, lambda_bar, lambda0 + lambda_bar)
    };
    let largest = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if largest < upper {
        return Err(MinimaxError::InsufficientSpectrum { largest, bound: upper });
    }
    let inside: Vec<usize> = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > lower && **l < upper)
        .map(|(i, _)| i + 1)
        .collect();
    let h = inside.first().copied();
    let k = inside.last().copied();
    let resonance_distance = eigenvalues
        .iter()
        .map(|l| (l - lambda_bar).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(WindowReport {
        variant,
        lambda0,
        lambda_bar,
        lower,
        upper,
        h,
        k,
        lower_margin: h.map(|h| eigenvalues[h - 1] - lower),
        upper_margin: k.map(|k| upper - eigenvalues[k - 1]),
        pairs_predicted: match (h, k) {
            (Some(h), Some(k)) => k - h + 1,
            _ => 0,
        },
        lambda_bar_in_spectrum: resonance_distance <= 1e-6 * lambda_bar.abs(),
        resonance_distance,
    })
}

/// Estimates of the linking levels. For the mirrored variant every quantity
/// refers to `−J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBand {
    pub variant: WindowVariant,
    /// Radius of the sphere (energy norm `√(uᵀKu)`).
    pub rho: f64,
    /// Beyond this `M`-norm the functional is negative on the ceiling subspace.
    pub radius: f64,
    pub c0: f64,
    pub c_inf: f64,
    /// Coefficients of `k″ρ² − k′ρ³`.
    pub k_quadratic: f64,
    pub k_cubic: f64,
    /// `max_i √((K⁻¹)_ii)`, bounding `‖u‖_∞` by the energy norm.
    pub sup_norm_constant: f64,
    pub sphere_samples: usize,
    pub sphere_min: f64,
    pub ceiling_samples: usize,
    pub ceiling_max: f64,
    pub consistent: bool,
}

impl EnergyBand {
    fn orientation(&self) -> f64 {
        match self.variant {
            WindowVariant::Standard => 1.0,
            WindowVariant::Mirrored => -1.0,
        }
    }

    /// Whether `energy` (a value of `J`) lies in the band, up to `tol`.
    pub fn contains(&self, energy: f64, tol: f64) -> bool {
        let e = self.orientation() * energy;
        e >= self.c0 - tol && e <= self.c_inf + tol
    }
}

/// `sup_t g(t) / |t|^p` over the signed grid, clipped at zero.
fn grid_ratio_sup(g: impl Fn(f64) -> f64, p: i32) -> f64 {
    signed_grid().map(|t| g(t) / t.abs().powi(p)).fold(0.0, f64::max)
}

const SPHERE_SAMPLES: usize = 500;
const CEILING_RANDOM_SAMPLES: usize = 2000;
const CEILING_GRID_PER_AXIS: usize = 9;

/// Coefficients `y` drawn on the ellipsoid `Σ λ_j y_j² = ρ²` over `indices`.
fn sphere_point(rng: &mut ChaCha8Rng, eig: &[f64], indices: &[usize], rho: f64) -> Vec<(usize, f64)> {
    let y: Vec<f64> = indices.iter().map(|_| StandardNormal.sample(rng)).collect();
    let norm: f64 = indices.iter().zip(&y).map(|(j, v)| eig[*j] * v * v).sum::<f64>().sqrt();
    indices.iter().zip(y).map(|(j, v)| (*j, rho * v / norm)).collect()
}

/// Coefficients uniform in the ball `|y| ≤ r` over `indices`.
fn ball_point(rng: &mut ChaCha8Rng, indices: &[usize], r: f64) -> Vec<(usize, f64)> {
    let y: Vec<f64> = indices.iter().map(|_| StandardNormal.sample(rng)).collect();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = r * rng.random::<f64>().powf(1.0 / indices.len() as f64);
    indices.iter().zip(y).map(|(j, v)| (*j, radius * v / norm)).collect()
}

fn combine(spectrum: &Spectrum, coeffs: &[(usize, f64)]) -> DVector<f64> {
    let mut u = DVector::zeros(spectrum.eigenvectors.nrows());
    for (j, c) in coeffs {
        u.axpy(*c, &spectrum.eigenvectors.column(*j), 1.0);
    }
    u
}

fn sup_norm_constant(op: &AssembledOperator) -> Result<f64, MinimaxError> {
    let chol = cholesky(&op.k, "operator stiffness")?;
    let inv = chol.inverse();
    Ok(inv.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)).sqrt())
}

/// Sphere and ceiling index sets (0-based) for the variant.
fn geometry_indices(window: &WindowReport, m: usize) -> (Vec<usize>, Vec<usize>) {
    let h = window.h.expect("window present") - 1;
    let k = window.k.expect("window present") - 1;
    let low: Vec<usize> = (0..=k).collect();
    let high: Vec<usize> = (h..m).collect();
    match window.variant {
        WindowVariant::Standard => (high, low),
        WindowVariant::Mirrored => (low, high),
    }
}

/// Sphere lower bound and ceiling upper bound for the window, with the
/// sampling checks.
pub fn energy_band(
    op: &AssembledOperator,
    nl: &Nonlinearity,
    spectrum: &Spectrum,
    window: &WindowReport,
    seed: u64,
) -> Result<EnergyBand, MinimaxError> {
    let (h, k) = match (window.h, window.k) {
        (Some(h), Some(k)) => (h, k),
        _ => {
            return Err(MinimaxError::MissingEigenpairs {
                needed: 1,
                available: 0,
            })
        }
    };
    let m = spectrum.len();
    if k > m {
        return Err(MinimaxError::MissingEigenpairs {
            needed: k,
            available: m,
        });
    }
    let eig = &spectrum.eigenvalues;
    let (l0, lb) = (nl.lambda0(), nl.lambda_bar());
    let (lh, lk, l1) = (eig[h - 1], eig[k - 1], eig[0]);
    let c_sup = sup_norm_constant(op)?;
    let length = op.mesh.length();
    let sign = match window.variant {
        WindowVariant::Standard => 1.0,
        WindowVariant::Mirrored => -1.0,
    };

    // Sphere: F(t) ≤ βt²/2 + k_ε|t|³ (standard), F(t) ≥ βt²/2 − k_ε|t|³ (mirrored).
    let (beta, k2) = match window.variant {
        WindowVariant::Standard => {
            let eps = 0.5 * (lh - (lb + l0)).min(-l0);
            let beta = l0 + eps;
            (beta, 0.5 * (1.0 - (lb + beta).max(0.0) / lh))
        }
        WindowVariant::Mirrored => {
            let eps = 0.5 * ((l0 + lb) - lk).min(l0);
            let beta = l0 - eps;
            (beta, 0.5 * ((lb + beta) / lk - 1.0))
        }
    };
    let k_eps = grid_ratio_sup(|t| sign * (nl.primitive(t) - 0.5 * beta * t * t), 3);
    let k1 = k_eps * c_sup * 3.0 / l1;
    let (rho, c0) = if k1 > 0.0 {
        let rho = 2.0 * k2 / (3.0 * k1);
        (rho, 4.0 * k2.powi(3) / (27.0 * k1 * k1))
    } else {
        (1.0, k2)
    };

    // Ceiling: ∓F(t) ≤ ε₂t²/2 + b|t| on the ceiling subspace.
    let gap = match window.variant {
        WindowVariant::Standard => lb - lk,
        WindowVariant::Mirrored => lh - lb,
    };
    let eps2 = gap / 6.0;
    let b = grid_ratio_sup(|t| -sign * nl.primitive(t) - 0.5 * eps2 * t * t, 1);
    let a = gap / 4.0;
    let bb = b * (3.0 * length).sqrt();
    let radius = bb / a;
    let c_inf = bb * bb / (4.0 * a);

    let lumped = lumped_masses(&op.mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ba5_e000_0001);
    let (sphere_idx, ceiling_idx) = geometry_indices(window, m);

    let mut sphere_min = f64::INFINITY;
    for _ in 0..SPHERE_SAMPLES {
        let u = combine(spectrum, &sphere_point(&mut rng, eig, &sphere_idx, rho));
        sphere_min = sphere_min.min(sign * energy_with(op, nl, &lumped, &u));
    }

    // On span{e_j} the quadratic part is diagonal in the coefficients.
    let ceiling_value = |coeffs: &[(usize, f64)]| {
        let u = combine(spectrum, coeffs);
        let quad: f64 = coeffs.iter().map(|(j, y)| 0.5 * (eig[*j] - lb) * y * y).sum();
        let nonlinear: f64 = u.iter().zip(lumped.iter()).map(|(x, mi)| mi * nl.primitive(*x)).sum();
        sign * (quad - nonlinear)
    };
    let mut ceiling_max = f64::NEG_INFINITY;
    let ceiling_samples;
    if window.variant == WindowVariant::Standard && ceiling_idx.len() <= 4 {
        let d = ceiling_idx.len();
        let axis: Vec<f64> = (0..CEILING_GRID_PER_AXIS)
            .map(|i| -radius + 2.0 * radius * i as f64 / (CEILING_GRID_PER_AXIS - 1) as f64)
            .collect();
        let total = CEILING_GRID_PER_AXIS.pow(d as u32);
        for mut code in 0..total {
            let coeffs: Vec<(usize, f64)> = ceiling_idx
                .iter()
                .map(|j| {
                    let y = axis[code % CEILING_GRID_PER_AXIS];
                    code /= CEILING_GRID_PER_AXIS;
                    (*j, y)
                })
                .collect();
            ceiling_max = ceiling_max.max(ceiling_value(&coeffs));
        }
        ceiling_samples = total;
    } else {
        for _ in 0..CEILING_RANDOM_SAMPLES {
            let coeffs = ball_point(&mut rng, &ceiling_idx, radius);
            ceiling_max = ceiling_max.max(ceiling_value(&coeffs));
        }
        ceiling_samples = CEILING_RANDOM_SAMPLES;
    }

    let consistent = c0 > 0.0 && sphere_min >= c0 && ceiling_max <= c_inf && c0 < c_inf;
    Ok(EnergyBand {
        variant: window.variant,
        rho,
        radius,
        c0,
        c_inf,
        k_quadratic: k2,
        k_cubic: k1,
        sup_norm_constant: c_sup,
        sphere_samples: SPHERE_SAMPLES,
        sphere_min,
        ceiling_samples,
        ceiling_max,
        consistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Total iteration cap over all seeds.
    pub budget: usize,
    /// Convergence threshold on `‖G(u)‖ / ‖Ku‖`; implies the same bound on
    /// `‖G(u)‖ / (1 + ‖Ku‖)`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            budget: 10_000,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub pair: usize,
    /// `+1` for the converged iterate, `−1` for its negation.
    pub sign: i8,
    pub values: Vec<f64>,
    pub energy: f64,
    pub residual: f64,
    pub norm_m: f64,
    pub in_band: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedKind {
    Eigenvector { index: usize, amplitude: f64 },
    Sphere,
    Ceiling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedOutcome {
    NewPair,
    Duplicate,
    Trivial,
    Stalled,
    BudgetExhausted,
}

/// Health of one deflated run: iterate norms and the residual history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDiagnostics {
    pub seed_index: usize,
    pub kind: SeedKind,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub initial_norm: f64,
    pub max_norm: f64,
    pub bounded: bool,
    pub residual_trace: Vec<f64>,
    pub outcome: SeedOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub solutions: Vec<SolutionRecord>,
    pub pairs_found: usize,
    pub pairs_predicted: usize,
    pub band: Option<EnergyBand>,
    pub diagnostics: Vec<SeedDiagnostics>,
    pub iterations_used: usize,
    pub budget: usize,
    pub tolerance: f64,
    pub nontriviality_threshold: f64,
    pub distinctness_tolerance: f64,
    pub workers: usize,
}

impl MinimaxReport {
    /// `None` without a band.
    pub fn all_in_band(&self) -> Option<bool> {
        self.band.as_ref()?;
        Some(self.solutions.iter().all(|s| s.in_band == Some(true)))
    }
}

const NEWTON_SWITCH: f64 = 1e-3;
const GRIPPO_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
/// Descent iterations without a merit decrease of [`PROGRESS`] before a seed
/// is abandoned.
const PATIENCE: usize = 60;
const PROGRESS: f64 = 1e-6;
const LADDER_STEPS: usize = 6;
const RANDOM_SEEDS: usize = 4;
const BAND_TOLERANCE: f64 = 1e-8;

struct State {
    u: DVector<f64>,
    g: DVector<f64>,
    /// `‖G‖ / ‖Ku‖`.
    rel: f64,
    /// `P⁻¹G`.
    z: DVector<f64>,
    phi: f64,
    grad_ln_eta: DVector<f64>,
    merit: f64,
}

struct Search<'a> {
    op: &'a AssembledOperator,
    nl: &'a Nonlinearity,
    lumped: DVector<f64>,
    precond: Cholesky<f64, Dyn>,
    /// Deflation centres: zero and every accepted solution with its negation.
    roots: Vec<DVector<f64>>,
}

impl<'a> Search<'a> {
    fn m_norm(&self, v: &DVector<f64>) -> f64 {
        bilinear(&self.op.mass, v, v).max(0.0).sqrt()
    }

    fn evaluate(&self, u: DVector<f64>) -> State {
        let (g, ku) = gradient_parts(self.op, self.nl, &self.lumped, &u);
        // Scale-free, so small iterates near a nearly singular linearization
        // are not mistaken for roots.
        let rel = if g.norm() == 0.0 { 0.0 } else { g.norm() / ku.norm() };
        let z = self.precond.solve(&g);
        let phi = 0.5 * g.dot(&z);
        let mut ln_eta = 0.0;
        let mut grad_ln_eta = DVector::zeros(u.len());
        for r in &self.roots {
            let w = &u - r;
            let mw = &self.op.mass * &w;
            let d2 = w.dot(&mw);
            ln_eta += (1.0 / d2).ln_1p();
            grad_ln_eta.axpy(-2.0 / (d2 * (1.0 + d2)), &mw, 1.0);
        }
        let merit = phi.ln() + 2.0 * ln_eta;
        State {
            u,
            g,
            rel,
            z,
            phi,
            grad_ln_eta,
            merit,
        }
    }

    /// Gradient of the log merit `ln(½GᵀP⁻¹G) + 2 ln η`.
    fn merit_gradient(&self, s: &State) -> DVector<f64> {
        let mut hz = &self.op.k * &s.z - &self.op.mass * &s.z * self.nl.lambda_bar();
        for i in 0..hz.len() {
            hz[i] -= self.lumped[i] * self.nl.derivative(s.u[i]) * s.z[i];
        }
        hz / s.phi + &s.grad_ln_eta * 2.0
    }

    /// Deflated Newton until convergence, failure or `cap`.
    fn newton(
        &self,
        mut s: State,
        tol: f64,
        cap: usize,
        trace: &mut Vec<f64>,
        max_norm: &mut f64,
    ) -> (State, usize, bool) {
        let mut used = 0;
        while used < cap {
            if s.rel <= tol {
                return (s, used, true);
            }
            let hess = hessian_with(self.op, self.nl, &self.lumped, &s.u);
            let Some(delta) = hess.lu().solve(&(-&s.g)) else {
                return (s, used, false);
            };
            let denom = 1.0 - s.grad_ln_eta.dot(&delta);
            let tau = if denom.abs() > 1e-12 && denom.is_finite() {
                1.0 / denom
            } else {
                1.0
            };
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial = self.evaluate(&s.u + &delta * (tau * step));
                if trial.merit < s.merit || trial.rel <= tol {
                    accepted = Some(trial);
                    break;
                }
                step *= 0.5;
            }
            used += 1;
            match accepted {
                Some(next) => {
                    s = next;
                    trace.push(s.rel);
                    *max_norm = max_norm.max(self.m_norm(&s.u));
                }
                None => return (s, used, false),
            }
        }
        let done = s.rel <= tol;
        (s, used, done)
    }

    /// Barzilai–Borwein descent on the deflated merit, handing over to Newton
    /// once the relative residual drops below [`NEWTON_SWITCH`].
    fn run(&self, u0: DVector<f64>, tol: f64, cap: usize) -> (Option<DVector<f64>>, RunStats) {
        let mut stats = RunStats {
            initial_norm: self.m_norm(&u0),
            max_norm: self.m_norm(&u0),
            ..RunStats::default()
        };
        let mut s = self.evaluate(u0);
        stats.trace.push(s.rel);
        let mut history: VecDeque<f64> = VecDeque::with_capacity(GRIPPO_MEMORY);
        let mut grad = self.merit_gradient(&s);
        let mut alpha: Option<f64> = None;
        let mut newton_gate = NEWTON_SWITCH;
        let mut best = s.merit;
        let mut since_best = 0;
        while stats.iterations < cap {
            if s.rel <= tol {
                return (Some(s.u), stats);
            }
            if s.rel < newton_gate {
                let (next, used, ok) =
                    self.newton(s, tol, cap - stats.iterations, &mut stats.trace, &mut stats.max_norm);
                stats.iterations += used;
                stats.newton_iterations += used;
                s = next;
                if ok {
                    return (Some(s.u), stats);
                }
                newton_gate = 0.5 * s.rel;
                history.clear();
                grad = self.merit_gradient(&s);
                alpha = None;
                continue;
            }
            if !s.merit.is_finite() {
                stats.stalled = true;
                break;
            }
            let dir = -self.precond.solve(&grad);
            let slope = grad.dot(&dir);
            let mut a = match alpha {
                Some(a) => a,
                None => {
                    let pu = bilinear(&self.op.k_plus, &s.u, &s.u).sqrt();
                    let pd = bilinear(&self.op.k_plus, &dir, &dir).sqrt();
                    if pu > 0.0 && pd > 0.0 {
                        0.1 * pu / pd
                    } else {
                        1.0
                    }
                }
            };
            history.push_back(s.merit);
            if history.len() > GRIPPO_MEMORY {
                history.pop_front();
            }
            let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial = self.evaluate(&s.u + &dir * a);
                if trial.merit.is_finite() && trial.merit <= reference + ARMIJO * a * slope {
                    accepted = Some(trial);
                    break;
                }
                a *= 0.5;
            }
            stats.iterations += 1;
            let Some(next) = accepted else {
                stats.stalled = true;
                break;
            };
            let next_grad = self.merit_gradient(&next);
            let step = &next.u - &s.u;
            let y = &next_grad - &grad;
            let sy = step.dot(&y);
            let sps = bilinear(&self.op.k_plus, &step, &step);
            alpha = Some(if sy > 0.0 {
                (sps / sy).clamp(1e-12, 1e12)
            } else {
                2.0 * a
            });
            s = next;
            grad = next_grad;
            if s.merit < best - PROGRESS {
                best = s.merit;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= PATIENCE {
                    stats.trace.push(s.rel);
                    stats.stalled = true;
                    break;
                }
            }
            stats.trace.push(s.rel);
            stats.max_norm = stats.max_norm.max(self.m_norm(&s.u));
        }
        if s.rel <= tol {
            (Some(s.u), stats)
        } else {
            (None, stats)
        }
    }
}

#[derive(Debug, Default)]
struct RunStats {
    iterations: usize,
    newton_iterations: usize,
    initial_norm: f64,
    max_norm: f64,
    trace: Vec<f64>,
    stalled: bool,
}

/// Deflated multistart search for ± pairs of nontrivial zeros of the gradient.
///
/// With a window containing eigenvalues, seeds follow the linking geometry:
/// scaled eigenvectors `e_h..e_k`, random points on the sphere `S_ρ` and random
/// mixtures below the ceiling radius. Without one, seeds are scaled computed
/// eigenvectors and random mixtures of them.
pub fn find_pairs(
    op: &AssembledOperator,
    nl: &Nonlinearity,
    spectrum: &Spectrum,
    window: Option<&WindowReport>,
    options: &SolverOptions,
) -> Result<MinimaxReport, MinimaxError> {
    let n = op.mesh.n_interior();
    let m = spectrum.len();
    let length = op.mesh.length();
    let nontriviality_threshold = 1e-6 * length.sqrt();
    let distinctness_tolerance = 1e-4 * length.sqrt();
    let window = window.filter(|w| w.h.is_some());
    let band = match window {
        Some(w) => Some(energy_band(op, nl, spectrum, w, options.seed)?),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let eig = &spectrum.eigenvalues;
    let mut seeds: Vec<(SeedKind, DVector<f64>)> = Vec::new();
    match (window, &band) {
        (Some(w), Some(b)) => {
            let (h, k) = (w.h.expect("window"), w.k.expect("window"));
            for j in h..=k {
                let lo = b.rho / eig[j - 1].max(f64::MIN_POSITIVE).sqrt();
                let hi = b.radius.max(lo);
                for i in 0..LADDER_STEPS {
                    let amplitude = lo * (hi / lo).powf(i as f64 / (LADDER_STEPS - 1) as f64);
                    seeds.push((
                        SeedKind::Eigenvector { index: j, amplitude },
                        spectrum.vector(j - 1) * amplitude,
                    ));
                }
            }
            let (sphere_idx, ceiling_idx) = geometry_indices(w, m);
            for _ in 0..RANDOM_SEEDS {
                let c = sphere_point(&mut rng, eig, &sphere_idx, b.rho);
                seeds.push((SeedKind::Sphere, combine(spectrum, &c)));
            }
            for _ in 0..RANDOM_SEEDS {
                let c = ball_point(&mut rng, &ceiling_idx, b.radius);
                seeds.push((SeedKind::Ceiling, combine(spectrum, &c)));
            }
        }
        _ => {
            for j in 1..=m {
                for amplitude in [0.5, 2.0] {
                    seeds.push((
                        SeedKind::Eigenvector { index: j, amplitude },
                        spectrum.vector(j - 1) * amplitude,
                    ));
                }
            }
            let all: Vec<usize> = (0..m).collect();
            for _ in 0..RANDOM_SEEDS {
                let c = ball_point(&mut rng, &all, 2.0);
                seeds.push((SeedKind::Ceiling, combine(spectrum, &c)));
            }
        }
    }

    let mut search = Search {
        op,
        nl,
        lumped: lumped_masses(&op.mesh),
        precond: cholesky(&op.k_plus, "positive stiffness")?,
        roots: vec![DVector::zeros(n)],
    };
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    let mut diagnostics = Vec::with_capacity(seeds.len());
    let mut used = 0;
    let total = seeds.len();
    for (index, (kind, u0)) in seeds.into_iter().enumerate() {
        let remaining = options.budget.saturating_sub(used);
        if remaining == 0 {
            diagnostics.push(SeedDiagnostics {
                seed_index: index,
                kind,
                iterations: 0,
                newton_iterations: 0,
                initial_norm: search.m_norm(&u0),
                max_norm: search.m_norm(&u0),
                bounded: true,
                residual_trace: Vec::new(),
                outcome: SeedOutcome::BudgetExhausted,
            });
            continue;
        }
        let cap = (remaining / (total - index)).max(1);
        let (found, stats) = search.run(u0, options.tolerance, cap);
        used += stats.iterations;
        let outcome = match found {
            None if stats.stalled => SeedOutcome::Stalled,
            None => SeedOutcome::BudgetExhausted,
            Some(u) => {
                let norm = search.m_norm(&u);
                let duplicate = accepted.iter().any(|v| {
                    let a = &u - v;
                    let b = &u + v;
                    search.m_norm(&a).min(search.m_norm(&b)) < distinctness_tolerance
                });
                if norm < nontriviality_threshold {
                    SeedOutcome::Trivial
                } else if duplicate {
                    SeedOutcome::Duplicate
                } else {
                    search.roots.push(u.clone());
                    search.roots.push(-&u);
                    accepted.push(u);
                    SeedOutcome::NewPair
                }
            }
        };
        let bound = 10.0 * (stats.initial_norm + band.as_ref().map_or(1.0, |b| b.radius));
        diagnostics.push(SeedDiagnostics {
            seed_index: index,
            kind,
            iterations: stats.iterations,
            newton_iterations: stats.newton_iterations,
            initial_norm: stats.initial_norm,
            max_norm: stats.max_norm,
            bounded: stats.max_norm <= bound,
            residual_trace: stats.trace,
            outcome,
        });
    }

    let mut solutions = Vec::with_capacity(2 * accepted.len());
    for (pair, u) in accepted.iter().enumerate() {
        for sign in [1i8, -1] {
            let v = u * f64::from(sign);
            let e = energy_with(op, nl, &search.lumped, &v);
            solutions.push(SolutionRecord {
                pair,
                sign,
                energy: e,
                residual: relative_residual(op, nl, &v),
                norm_m: search.m_norm(&v),
                in_band: band.as_ref().map(|b| b.contains(e, BAND_TOLERANCE * (1.0 + e.abs()))),
                values: v.iter().copied().collect(),
            });
        }
    }
    Ok(MinimaxReport {
        pairs_found: accepted.len(),
        pairs_predicted: window.map_or(0, |w| w.pairs_predicted),
        solutions,
        band,
        diagnostics,
        iterations_used: used,
        budget: options.budget,
        tolerance: options.tolerance,
        nontriviality_threshold,
        distinctness_tolerance,
        workers: 1,
    })
}
