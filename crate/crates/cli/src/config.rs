//! Run configuration: TOML with explicit sections, unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use musolve_core::measure::{Atom, Density, DensityPiece, SpectralMeasure};
use musolve_core::minimax::Nonlinearity;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_INTERIOR_NODES: usize = 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("syntax error: {0}")]
    SyntaxNoSpan(String),
    #[error("{field}: {message}")]
    Semantic { field: String, message: String },
}

fn semantic(field: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Semantic {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub a: f64,
    pub b: f64,
    pub n_interior: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub s: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub interval: [f64; 2],
    /// Coefficients of increasing powers of `s`.
    pub poly_coeffs: Vec<f64>,
}

fn default_s_bar() -> f64 {
    0.5
}

fn default_quadrature_order() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default = "default_s_bar")]
    pub s_bar: f64,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub density: Vec<DensityConfig>,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKindConfig {
    RationalDecay,
    GaussianDecay,
    Table,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub kind: NonlinearityKindConfig,
    /// Required for the analytic kinds; derived from the first segment for
    /// tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    pub lambda_bar: f64,
    /// `[t, f(t)]` knots with `t > 0` increasing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<[f64; 2]>,
}

fn default_m() -> usize {
    10
}

fn default_budget() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            m: default_m(),
            budget: default_budget(),
            tolerance: default_tolerance(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    #[default]
    Spectrum,
    Certify,
    Window,
    Solve,
    Convergence,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Spectrum => "spectrum",
            PipelineKind::Certify => "certify",
            PipelineKind::Window => "window",
            PipelineKind::Solve => "solve",
            PipelineKind::Convergence => "convergence",
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spectrum" => Ok(PipelineKind::Spectrum),
            "certify" => Ok(PipelineKind::Certify),
            "window" => Ok(PipelineKind::Window),
            "solve" => Ok(PipelineKind::Solve),
            "convergence" => Ok(PipelineKind::Convergence),
            other => Err(format!(
                "unknown pipeline '{other}' (expected spectrum, certify, window, solve or convergence)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub kind: PipelineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub measure: MeasureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    /// Canonical TOML text with every default filled in.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The signed measure described by the `[measure]` section.
    pub fn spectral_measure(&self) -> Result<SpectralMeasure, ConfigError> {
        let atoms = self.measure.atoms.iter().map(|a| Atom::new(a.s, a.c)).collect();
        let density = if self.measure.density.is_empty() {
            None
        } else {
            let pieces = self
                .measure
                .density
                .iter()
                .map(|d| DensityPiece::new(d.interval[0], d.interval[1], d.poly_coeffs.clone()))
                .collect();
            Some(Density::new(pieces).map_err(|e| semantic("measure.density", e))?)
        };
        SpectralMeasure::new(atoms, density, self.measure.s_bar).map_err(|e| semantic("measure", e))
    }

    /// `None` when the config has no `[nonlinearity]` section.
    pub fn nonlinearity(&self) -> Result<Option<Nonlinearity>, ConfigError> {
        let Some(nl) = &self.nonlinearity else {
            return Ok(None);
        };
        let lambda0 = || {
            nl.lambda0
                .ok_or_else(|| semantic("nonlinearity.lambda0", "required for this kind"))
        };
        let built = match nl.kind {
            NonlinearityKindConfig::RationalDecay => Nonlinearity::rational_decay(lambda0()?, nl.lambda_bar),
            NonlinearityKindConfig::GaussianDecay => Nonlinearity::gaussian_decay(lambda0()?, nl.lambda_bar),
            NonlinearityKindConfig::Table => {
                if nl.lambda0.is_some() {
                    return Err(semantic("nonlinearity.lambda0", "derived from the table; remove it"));
                }
                let knots: Vec<(f64, f64)> = nl.table.iter().map(|k| (k[0], k[1])).collect();
                Nonlinearity::table(&knots, nl.lambda_bar)
            }
            NonlinearityKindConfig::Zero => Nonlinearity::zero(nl.lambda_bar),
        };
        built.map(Some).map_err(|e| semantic("nonlinearity", e))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.domain;
        if !(d.a.is_finite() && d.b.is_finite()) || d.a >= d.b {
            return Err(semantic(
                "domain",
                format!("need finite a < b, got a = {}, b = {}", d.a, d.b),
            ));
        }
        if d.n_interior == 0 || d.n_interior > MAX_INTERIOR_NODES {
            return Err(semantic(
                "domain.n_interior",
                format!("must lie in 1..={MAX_INTERIOR_NODES}, got {}", d.n_interior),
            ));
        }
        if self.measure.quadrature_order == 0 {
            return Err(semantic("measure.quadrature_order", "must be positive"));
        }
        for (i, a) in self.measure.atoms.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.s) {
                return Err(semantic(
                    &format!("measure.atoms[{i}].s"),
                    format!("exponent outside [0,1]: {}", a.s),
                ));
            }
        }
        if self.measure.atoms.is_empty() && self.measure.density.is_empty() {
            return Err(semantic("measure", "needs at least one atom or density piece"));
        }
        self.spectral_measure()?;
        let s = &self.solver;
        if s.m == 0 || s.m > d.n_interior {
            return Err(semantic(
                "solver.m",
                format!("must lie in 1..={}, got {}", d.n_interior, s.m),
            ));
        }
        if !(s.tolerance > 0.0 && s.tolerance.is_finite()) {
            return Err(semantic("solver.tolerance", "must be positive"));
        }
        if s.budget == 0 {
            return Err(semantic("solver.budget", "must be positive"));
        }
        self.nonlinearity()?;
        if matches!(self.pipeline.kind, PipelineKind::Window | PipelineKind::Solve) && self.nonlinearity.is_none() {
            return Err(semantic(
                "nonlinearity",
                format!("section required for the {} pipeline", self.pipeline.kind),
            ));
        }
        Ok(())
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let config: RunConfig = toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => {
                let (line, column) = line_column(text, span.start);
                ConfigError::Syntax {
                    line,
                    column,
                    message: e.message().to_string(),
                }
            }
            None => ConfigError::SyntaxNoSpan(e.message().to_string()),
        })?;
        config.validate()?;
        Ok(config)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.parse()
}
