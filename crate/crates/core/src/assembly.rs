//! Finite element matrices for the integral fractional Laplacian on an
//! interval with zero exterior data.
//!
//! Continuous piecewise-linear hat functions on a uniform mesh, extended by
//! zero outside `(a, b)`, are translates of one reference hat. The energy form
//!
//! ```text
//! a_s(u, v) = (C_{1,s} / 2) ∬_{R×R} (u(x)-u(y)) (v(x)-v(y)) / |x-y|^{1+2s} dx dy
//! ```
//!
//! (exterior interaction included) is translation invariant, so `A_s` is a
//! symmetric Toeplitz matrix scaled by `h^{1-2s}`. Its generating sequence is
//! the fourth central difference of `|r|^{3-2s}` up to a closed-form factor
//! (the hat's Fourier transform is `h sinc^4(xi h / 2)`); far entries are
//! evaluated instead as a cubic B-spline average of the kernel
//! `-C_{1,s} r^{-1-2s}`, which avoids the cancellation in the difference.
//!
//! `C_{1,s} = 4^s s Γ(s+1/2) / (√π Γ(1-s))` is the constant of the operator
//! `(-Δ)^s`; with the 1/2 in front of the double integral the seminorm tends
//! to `‖u'‖²` as `s → 1` and to `‖u‖²` as `s → 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::linalg::{max_generalized_eigenvalue, LinalgError};
use crate::measure::Atom;
use crate::quadrature::gauss_legendre_on;

/// Identifier of the normalization in use, recorded in run metadata.
pub const NORMALIZATION_ID: &str =
    "c_{1,s} = 4^s s Gamma(s+1/2) / (sqrt(pi) Gamma(1-s)); energy weight c_{1,s}/2 (symbol |xi|^{2s})";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("exponent outside [0,1]: {0}")]
    ExponentOutOfRange(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Uniform mesh of `(a, b)` with `n_interior` free nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainMesh {
    a: f64,
    b: f64,
    n_interior: usize,
}

impl DomainMesh {
    pub fn new(a: f64, b: f64, n_interior: usize) -> Result<Self, AssemblyError> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(AssemblyError::InvalidMesh(format!(
                "endpoints must satisfy a < b, got ({a}, {b})"
            )));
        }
        if n_interior == 0 {
            return Err(AssemblyError::InvalidMesh("need at least one interior node".into()));
        }
        Ok(DomainMesh { a, b, n_interior })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.n_interior as f64 + 1.0)
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.n_interior).map(|i| self.a + h * i as f64).collect()
    }

    /// Nodal interpolant of `f` on the interior nodes.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.n_interior, self.nodes().into_iter().map(f))
    }
}

/// `C_{1,s}`, the constant in front of the singular integral defining `(-Δ)^s`
/// in one dimension. Vanishes at both endpoints.
pub fn normalization_constant(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    // 4^s s Γ(s+1/2) / (√π Γ(1-s)) rewritten through the duplication formula.
    2.0 * s * gamma(2.0 * s) * (PI * s).sin() / PI
}

/// `sin(pi s) / (s (1 - s))`, continuous on `[0, 1]`.
fn sine_ratio(s: f64) -> f64 {
    if s <= 0.5 {
        let sinc = if s == 0.0 { PI } else { (PI * s).sin() / s };
        sinc / (1.0 - s)
    } else {
        let t = 1.0 - s;
        let sinc = if t == 0.0 { PI } else { (PI * t).sin() / t };
        sinc / s
    }
}

/// `(e^{eps L} - 1) / eps`, equal to `L` at `eps = 0`.
fn expm1_ratio(eps: f64, l: f64) -> f64 {
    if eps == 0.0 {
        l
    } else {
        (eps * l).exp_m1() / eps
    }
}

const FOURTH_DIFFERENCE: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];

/// Reference Toeplitz entry `t_s(m) = A_s[i][i+m] / h^{1-2s}` for offsets
/// `m <= 2`, from the closed form
/// `Γ(2s+1) sin(πs) / (4π s(1-s)(3-2s)) · δ⁴[r² (|r|^{1-2s} - 1)/(1-2s)](m)`.
fn near_entry(s: f64, m: usize) -> f64 {
    let eps = 1.0 - 2.0 * s;
    let diff: f64 = FOURTH_DIFFERENCE
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let r = (m as f64 + j as f64 - 2.0).abs();
            if r == 0.0 {
                0.0
            } else {
                c * r * r * expm1_ratio(eps, r.ln())
            }
        })
        .sum();
    gamma(2.0 * s + 1.0) * sine_ratio(s) / (4.0 * PI * (3.0 - 2.0 * s)) * diff
}

/// Centered cubic B-spline, the kernel turning a fourth difference into an
/// average of the fourth derivative.
fn cubic_bspline(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0
    } else if t <= 2.0 {
        let u = 2.0 - t;
        u * u * u / 6.0
    } else {
        0.0
    }
}

struct FarRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl FarRule {
    fn new() -> Self {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for lo in [-2.0, -1.0, 0.0, 1.0] {
            let (x, w) = gauss_legendre_on(16, lo, lo + 1.0);
            for (xi, wi) in x.into_iter().zip(w) {
                nodes.push(xi);
                weights.push(wi * cubic_bspline(xi));
            }
        }
        FarRule { nodes, weights }
    }

    /// `t_s(m) = -C_{1,s} ∫ B(τ) (m+τ)^{-1-2s} dτ`, valid for `m >= 3`.
    fn entry(&self, s: f64, c: f64, m: usize) -> f64 {
        let p = -1.0 - 2.0 * s;
        let acc: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * (m as f64 + t).powf(p))
            .sum();
        -c * acc
    }
}

/// Generating sequence `t_s(0..len)` of the reference stiffness on a unit mesh.
pub fn reference_toeplitz(s: f64, len: usize) -> Result<Vec<f64>, AssemblyError> {
    if !(0.0..=1.0).contains(&s) || s.is_nan() {
        return Err(AssemblyError::ExponentOutOfRange(s));
    }
    let mut t = vec![0.0; len];
    if s == 0.0 {
        // Mass matrix of unit hats.
        for (m, v) in [2.0 / 3.0, 1.0 / 6.0].into_iter().enumerate().take(len) {
            t[m] = v;
        }
        return Ok(t);
    }
    if s == 1.0 {
        for (m, v) in [2.0, -1.0].into_iter().enumerate().take(len) {
            t[m] = v;
        }
        return Ok(t);
    }
    let c = normalization_constant(s);
    let far = FarRule::new();
    for (m, v) in t.iter_mut().enumerate() {
        *v = if m <= 2 { near_entry(s, m) } else { far.entry(s, c, m) };
    }
    Ok(t)
}

fn toeplitz(n: usize, t: &[f64], scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| scale * t[i.abs_diff(j)])
}

/// Stiffness matrix of `a_s` on the interior hat functions of `mesh`.
/// `s = 1` gives the gradient stiffness, `s = 0` the mass matrix.
pub fn assemble_fractional_stiffness(mesh: &DomainMesh, s: f64) -> Result<DMatrix<f64>, AssemblyError> {
    let n = mesh.n_interior();
    let t = reference_toeplitz(s, n)?;
    Ok(toeplitz(n, &t, mesh.h().powf(1.0 - 2.0 * s)))
}

/// Consistent L2 mass matrix of the interior hats.
pub fn assemble_mass(mesh: &DomainMesh) -> DMatrix<f64> {
    let n = mesh.n_interior();
    let h = mesh.h();
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * h / 3.0,
        1 => h / 6.0,
        _ => 0.0,
    })
}

/// Lumped masses `m_i = ∫ φ_i = h`.
pub fn lumped_masses(mesh: &DomainMesh) -> DVector<f64> {
    DVector::from_element(mesh.n_interior(), mesh.h())
}

/// Stiffness matrices for a set of exponents plus the mass matrix.
#[derive(Debug, Clone)]
pub struct StiffnessFamily {
    pub mass: DMatrix<f64>,
    /// `(s, A_s, C_{1,s})` sorted by exponent.
    pub members: Vec<(f64, DMatrix<f64>, f64)>,
}

impl StiffnessFamily {
    pub fn assemble(mesh: &DomainMesh, exponents: &[f64]) -> Result<Self, AssemblyError> {
        let mut sorted = exponents.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let members = sorted
            .into_iter()
            .map(|s| Ok((s, assemble_fractional_stiffness(mesh, s)?, normalization_constant(s))))
            .collect::<Result<Vec<_>, AssemblyError>>()?;
        Ok(StiffnessFamily {
            mass: assemble_mass(mesh),
            members,
        })
    }

    pub fn get(&self, s: f64) -> Option<&DMatrix<f64>> {
        self.members.iter().find(|(e, _, _)| *e == s).map(|(_, a, _)| a)
    }
}

/// Discretization of the superposition operator for a signed atom list.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub mesh: DomainMesh,
    /// Positive atoms: the inner product of the energy space.
    pub k_plus: DMatrix<f64>,
    /// Negative atoms (absolute weights): the subtracted bilinear form.
    pub k_minus: DMatrix<f64>,
    /// `k_plus - k_minus`.
    pub k: DMatrix<f64>,
    /// Positive atoms with exponent `>= s_bar`.
    pub k_high: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub atoms: Vec<Atom>,
    pub s_bar: f64,
}

pub fn assemble_operator(mesh: &DomainMesh, atoms: &[Atom], s_bar: f64) -> Result<AssembledOperator, AssemblyError> {
    let n = mesh.n_interior();
    let mut k_plus = DMatrix::zeros(n, n);
    let mut k_minus = DMatrix::zeros(n, n);
    let mut k_high = DMatrix::zeros(n, n);
    for atom in atoms {
        let a = assemble_fractional_stiffness(mesh, atom.s)?;
        if atom.weight > 0.0 {
            k_plus += &a * atom.weight;
            if atom.s >= s_bar {
                k_high += &a * atom.weight;
            }
        } else {
            k_minus += &a * (-atom.weight);
        }
    }
    let k = &k_plus - &k_minus;
    Ok(AssembledOperator {
        mesh: *mesh,
        k_plus,
        k_minus,
        k,
        k_high,
        mass: assemble_mass(mesh),
        atoms: atoms.to_vec(),
        s_bar,
    })
}

/// Smallest `c` with `u^T A_low u <= c u^T A_high u` for all `u`.
pub fn domination_constant(a_low: &DMatrix<f64>, a_high: &DMatrix<f64>) -> Result<f64, AssemblyError> {
    Ok(max_generalized_eigenvalue(a_low, a_high)?)
}
