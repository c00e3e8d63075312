//! Signed measures on the exponent interval `[0, 1]`.
//!
//! A [`SpectralMeasure`] is a finite list of weighted atoms plus an optional
//! piecewise-polynomial density, together with the split point `s_bar` that
//! separates the "high" exponents (where only positive mass may live) from the
//! "low" ones (where negative mass is allowed but must be dominated).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::gauss_legendre_on;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("exponent outside [0,1]: {0}")]
    ExponentOutOfRange(f64),
    #[error("duplicate atom exponent {0}")]
    DuplicateExponent(f64),
    #[error("atom at exponent {0} has zero weight")]
    ZeroWeight(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("split point s_bar = {0} must lie in (0,1]")]
    InvalidSplitPoint(f64),
    #[error("density piece [{0}, {1}] is empty or outside [0,1]")]
    InvalidPiece(f64, f64),
    #[error("density pieces overlap near s = {0}")]
    OverlappingPieces(f64),
    #[error("density piece has no polynomial coefficients")]
    EmptyPolynomial,
    #[error("series exponents must be strictly decreasing (index {0})")]
    NonMonotoneExponents(usize),
    #[error("series has {coefficients} coefficients but {exponents} exponents")]
    LengthMismatch { coefficients: usize, exponents: usize },
    #[error("series tail {tail:e} exceeds tolerance {tolerance:e}")]
    TailAboveTolerance { tail: f64, tolerance: f64 },
    #[error("series is empty")]
    EmptySeries,
}

/// A point mass `weight * delta_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub s: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(s: f64, weight: f64) -> Self {
        Atom { s, weight }
    }
}

/// Polynomial `sum_k coeffs[k] * s^k` restricted to `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub interval: (f64, f64),
    pub coeffs: Vec<f64>,
}

impl DensityPiece {
    pub fn new(lo: f64, hi: f64, coeffs: Vec<f64>) -> Self {
        DensityPiece {
            interval: (lo, hi),
            coeffs,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }

    fn antiderivative(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, c)| acc * s + c / (k as f64 + 1.0))
            * s
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.antiderivative(hi) - self.antiderivative(lo)
    }

    fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Sorted breakpoints in `[lo, hi]` (endpoints included) between which the
    /// polynomial keeps a constant sign.
    fn sign_breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = vec![lo];
        if self.degree() >= 1 {
            let samples = 64 * (self.degree() + 1);
            let step = (hi - lo) / samples as f64;
            let mut x0 = lo;
            let mut f0 = self.eval(x0);
            for i in 1..=samples {
                let x1 = if i == samples { hi } else { lo + step * i as f64 };
                let f1 = self.eval(x1);
                if f0 == 0.0 && x0 > lo {
                    pts.push(x0);
                } else if f0 * f1 < 0.0 {
                    pts.push(self.bisect(x0, x1, f0));
                }
                x0 = x1;
                f0 = f1;
            }
        }
        pts.push(hi);
        pts.dedup();
        pts
    }

    fn bisect(&self, mut a: f64, mut b: f64, fa: f64) -> f64 {
        let sa = fa.signum();
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if self.eval(m).signum() == sa {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    /// Integral of `max(sign * f, 0)` over `[lo, hi]`.
    fn clipped_integral(&self, sign: f64, lo: f64, hi: f64) -> f64 {
        let pts = self.sign_breakpoints(lo, hi);
        pts.windows(2)
            .filter(|w| sign * self.eval(0.5 * (w[0] + w[1])) > 0.0)
            .map(|w| sign * self.integral(w[0], w[1]))
            .sum()
    }
}

/// Piecewise-polynomial density on non-overlapping pieces of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pieces: Vec<DensityPiece>,
}

impl Density {
    pub fn new(mut pieces: Vec<DensityPiece>) -> Result<Self, MeasureError> {
        for p in &pieces {
            let (lo, hi) = p.interval;
            if !lo.is_finite() || !hi.is_finite() {
                return Err(MeasureError::NonFinite("density interval"));
            }
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
                return Err(MeasureError::InvalidPiece(lo, hi));
            }
            if p.coeffs.is_empty() {
                return Err(MeasureError::EmptyPolynomial);
            }
            if p.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(MeasureError::NonFinite("density coefficients"));
            }
        }
        pieces.sort_by(|a, b| a.interval.0.total_cmp(&b.interval.0));
        for w in pieces.windows(2) {
            if w[1].interval.0 < w[0].interval.1 {
                return Err(MeasureError::OverlappingPieces(w[1].interval.0));
            }
        }
        Ok(Density { pieces })
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    /// Density value at `s` (zero outside every piece). On a shared breakpoint
    /// the left piece wins.
    pub fn eval(&self, s: f64) -> f64 {
        self.pieces
            .iter()
            .find(|p| s >= p.interval.0 && s <= p.interval.1)
            .map_or(0.0, |p| p.eval(s))
    }

    fn clipped_mass(&self, sign: f64, lo: f64, hi: f64) -> f64 {
        self.pieces
            .iter()
            .filter_map(|p| {
                let a = p.interval.0.max(lo);
                let b = p.interval.1.min(hi);
                (a < b).then(|| p.clipped_integral(sign, a, b))
            })
            .sum()
    }

    fn signed_mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.integral(p.interval.0, p.interval.1)).sum()
    }

    /// True when `sign * f < 0` somewhere inside `[lo, hi]`.
    fn takes_sign_on(&self, sign: f64, lo: f64, hi: f64) -> bool {
        self.pieces.iter().any(|p| {
            let a = p.interval.0.max(lo);
            let b = p.interval.1.min(hi);
            a < b
                && p.sign_breakpoints(a, b)
                    .windows(2)
                    .any(|w| sign * p.eval(0.5 * (w[0] + w[1])) > 0.0)
        })
    }
}

/// Nonnegative density `max(sign * f, 0)` obtained from a signed density.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedDensity {
    pub source: Density,
    pub sign: f64,
}

impl ClippedDensity {
    pub fn eval(&self, s: f64) -> f64 {
        (self.sign * self.source.eval(s)).max(0.0)
    }

    /// Mass of the clipped density on `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.source.clipped_mass(self.sign, lo, hi)
    }
}

/// One side of a Jordan decomposition: nonnegative atoms plus a nonnegative
/// density.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePart {
    pub atoms: Vec<Atom>,
    pub density: Option<ClippedDensity>,
}

impl MeasurePart {
    /// Mass on the closed interval `[lo, hi]`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.s >= lo && a.s <= hi)
            .map(|a| a.weight)
            .sum();
        atoms + self.density.as_ref().map_or(0.0, |d| d.mass(lo, hi))
    }

    pub fn density_at(&self, s: f64) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d.eval(s))
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.as_ref().is_none_or(|d| d.mass(0.0, 1.0) == 0.0)
    }
}

/// Signed Borel measure on `[0, 1]` with a chosen split point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    atoms: Vec<Atom>,
    density: Option<Density>,
    s_bar: f64,
}

impl SpectralMeasure {
    pub fn new(atoms: Vec<Atom>, density: Option<Density>, s_bar: f64) -> Result<Self, MeasureError> {
        if !s_bar.is_finite() || s_bar <= 0.0 || s_bar > 1.0 {
            return Err(MeasureError::InvalidSplitPoint(s_bar));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !a.s.is_finite() || !a.weight.is_finite() {
                return Err(MeasureError::NonFinite("atom"));
            }
            if !(0.0..=1.0).contains(&a.s) {
                return Err(MeasureError::ExponentOutOfRange(a.s));
            }
            if a.weight == 0.0 {
                return Err(MeasureError::ZeroWeight(a.s));
            }
            if atoms[..i].iter().any(|b| b.s == a.s) {
                return Err(MeasureError::DuplicateExponent(a.s));
            }
        }
        Ok(SpectralMeasure { atoms, density, s_bar })
    }

    /// `weight * delta_s` with split point `s_bar`.
    pub fn dirac(s: f64, weight: f64, s_bar: f64) -> Result<Self, MeasureError> {
        Self::new(vec![Atom::new(s, weight)], None, s_bar)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    pub fn s_bar(&self) -> f64 {
        self.s_bar
    }

    pub fn total_signed_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum::<f64>() + self.density.as_ref().map_or(0.0, |d| d.signed_mass())
    }

    /// Jordan split `mu = mu_plus - mu_minus`.
    pub fn decompose(&self) -> Result<(MeasurePart, MeasurePart), MeasureError> {
        if let Some(d) = &self.density {
            // Probe for overflow in the polynomial evaluation.
            for p in d.pieces() {
                let (lo, hi) = p.interval;
                for i in 0..=32 {
                    let s = lo + (hi - lo) * i as f64 / 32.0;
                    if !p.eval(s).is_finite() {
                        return Err(MeasureError::NonFinite("density values"));
                    }
                }
            }
        }
        let split = |sign: f64| MeasurePart {
            atoms: self
                .atoms
                .iter()
                .filter(|a| sign * a.weight > 0.0)
                .map(|a| Atom::new(a.s, sign * a.weight))
                .collect(),
            density: self.density.as_ref().map(|d| ClippedDensity {
                source: d.clone(),
                sign,
            }),
        };
        Ok((split(1.0), split(-1.0)))
    }

    /// Check the structural hypotheses relative to `s_bar` and report the
    /// smallest admissible domination ratio `gamma`.
    pub fn validate_hypotheses(&self) -> Result<MeasureReport, MeasureError> {
        let (pos, neg) = self.decompose()?;
        let s_bar = self.s_bar;
        let positive_high_mass = pos.mass(s_bar, 1.0);
        let negative_low_mass = neg.mass(0.0, s_bar);

        let has_positive_high_mass = positive_high_mass > 0.0;
        let negative_atom_high = self.atoms.iter().any(|a| a.weight < 0.0 && a.s >= s_bar);
        let negative_density_high = self.density.as_ref().is_some_and(|d| d.takes_sign_on(-1.0, s_bar, 1.0));
        let negative_part_confined = !negative_atom_high && !negative_density_high;

        let gamma = if has_positive_high_mass {
            negative_low_mass / positive_high_mass
        } else if negative_low_mass == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let negative_part_dominated = gamma.is_finite() && has_positive_high_mass;

        let s_sharp = self.s_sharp(&pos);
        Ok(MeasureReport {
            gamma,
            s_sharp,
            s_bar,
            positive_high_mass,
            negative_low_mass,
            has_positive_high_mass,
            negative_part_confined,
            negative_part_dominated,
            dimension_exceeds_two_s_sharp: s_sharp.map(|s| 1.0 > 2.0 * s),
        })
    }

    /// Largest positive atom at or above `s_bar`; for the density part, the
    /// largest `s` such that the density still carries half of its high mass
    /// on `[s, 1]`.
    fn s_sharp(&self, pos: &MeasurePart) -> Option<f64> {
        let atom = pos
            .atoms
            .iter()
            .filter(|a| a.s >= self.s_bar)
            .map(|a| a.s)
            .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
        let density = pos.density.as_ref().and_then(|d| {
            let total = d.mass(self.s_bar, 1.0);
            if total <= 0.0 {
                return None;
            }
            let (mut lo, mut hi) = (self.s_bar, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if d.mass(mid, 1.0) >= 0.5 * total {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(lo)
        });
        match (atom, density) {
            (Some(a), Some(d)) => Some(a.max(d)),
            (a, d) => a.or(d),
        }
    }

    /// Reduce to a finite signed atom list: atoms pass through, each density
    /// piece becomes an `order`-point Gauss–Legendre rule with signed weights.
    pub fn to_atoms(&self, quadrature_order: usize) -> Vec<Atom> {
        assert!(quadrature_order >= 1, "quadrature order must be positive");
        let mut out = self.atoms.clone();
        if let Some(d) = &self.density {
            for p in d.pieces() {
                let (nodes, weights) = gauss_legendre_on(quadrature_order, p.interval.0, p.interval.1);
                for (s, w) in nodes.into_iter().zip(weights) {
                    let weight = w * p.eval(s);
                    if let Some(existing) = out.iter_mut().find(|a| a.s == s) {
                        existing.weight += weight;
                    } else {
                        out.push(Atom::new(s, weight));
                    }
                }
            }
        }
        out.retain(|a| a.weight != 0.0);
        out
    }
}

/// Outcome of the hypothesis check on a [`SpectralMeasure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    /// `mu_minus([0, s_bar]) / mu_plus([s_bar, 1])`.
    pub gamma: f64,
    pub s_sharp: Option<f64>,
    pub s_bar: f64,
    pub positive_high_mass: f64,
    pub negative_low_mass: f64,
    /// `mu_plus([s_bar, 1]) > 0`.
    pub has_positive_high_mass: bool,
    /// `mu_minus` vanishes on `[s_bar, 1]`.
    pub negative_part_confined: bool,
    /// `mu_minus([0, s_bar]) <= gamma * mu_plus([s_bar, 1])` with finite gamma.
    pub negative_part_dominated: bool,
    /// Whether `N > 2 s_sharp` holds for `N = 1`; recorded, never enforced.
    pub dimension_exceeds_two_s_sharp: Option<bool>,
}

impl MeasureReport {
    pub fn all_hold(&self) -> bool {
        self.has_positive_high_mass && self.negative_part_confined && self.negative_part_dominated
    }
}

/// Truncated series `sum_k c_k delta_{s_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMeasure {
    pub measure: SpectralMeasure,
    pub kept_terms: usize,
    /// Mass of dropped trailing terms plus the geometric estimate of the
    /// unsupplied remainder.
    pub dropped_tail: f64,
    /// Smallest gamma for which the partial-sum domination condition holds.
    pub series_gamma: f64,
    /// Coefficients at exponents `>= s_bar` are all positive.
    pub positive_head: bool,
    pub report: MeasureReport,
}

/// Build the atomic measure of a series of fractional Laplacians.
///
/// Trailing terms are dropped while their cumulative absolute mass stays below
/// `tail_tolerance`. The unsupplied remainder is estimated geometrically from
/// the ratio of the last two supplied coefficients.
pub fn series_measure(
    coefficients: &[f64],
    exponents: &[f64],
    tail_tolerance: f64,
    s_bar: f64,
) -> Result<SeriesMeasure, MeasureError> {
    if coefficients.len() != exponents.len() {
        return Err(MeasureError::LengthMismatch {
            coefficients: coefficients.len(),
            exponents: exponents.len(),
        });
    }
    if coefficients.is_empty() {
        return Err(MeasureError::EmptySeries);
    }
    if let Some(i) = exponents.windows(2).position(|w| w[1] >= w[0]) {
        return Err(MeasureError::NonMonotoneExponents(i + 1));
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(MeasureError::NonFinite("series coefficients"));
    }

    let n = coefficients.len();
    let remainder = if n >= 2 {
        let last = coefficients[n - 1].abs();
        let prev = coefficients[n - 2].abs();
        let ratio = if prev > 0.0 { last / prev } else { f64::INFINITY };
        if last == 0.0 {
            0.0
        } else if ratio >= 1.0 {
            return Err(MeasureError::TailAboveTolerance {
                tail: f64::INFINITY,
                tolerance: tail_tolerance,
            });
        } else {
            last * ratio / (1.0 - ratio)
        }
    } else {
        0.0
    };
    if remainder > tail_tolerance {
        return Err(MeasureError::TailAboveTolerance {
            tail: remainder,
            tolerance: tail_tolerance,
        });
    }

    let mut kept = n;
    let mut dropped = remainder;
    while kept > 1 && dropped + coefficients[kept - 1].abs() <= tail_tolerance {
        dropped += coefficients[kept - 1].abs();
        kept -= 1;
    }

    let atoms: Vec<Atom> = coefficients[..kept]
        .iter()
        .zip(exponents)
        .filter(|(c, _)| **c != 0.0)
        .map(|(c, s)| Atom::new(*s, *c))
        .collect();
    let measure = SpectralMeasure::new(atoms, None, s_bar)?;
    let report = measure.validate_hypotheses()?;

    let head: Vec<f64> = coefficients[..kept]
        .iter()
        .zip(exponents)
        .filter(|(_, s)| **s >= s_bar)
        .map(|(c, _)| *c)
        .collect();
    let tail_sum: f64 = coefficients[..kept]
        .iter()
        .zip(exponents)
        .filter(|(_, s)| **s < s_bar)
        .map(|(c, _)| *c)
        .sum();
    let head_sum: f64 = head.iter().sum();
    let positive_head = !head.is_empty() && head.iter().all(|c| *c > 0.0);
    let series_gamma = if head_sum > 0.0 {
        tail_sum.max(0.0) / head_sum
    } else {
        f64::INFINITY
    };

    Ok(SeriesMeasure {
        measure,
        kept_terms: kept,
        dropped_tail: dropped,
        series_gamma,
        positive_head,
        report,
    })
}
