//! Pipeline orchestration and the run record.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use musolve_core::assembly::{
    assemble_fractional_stiffness, assemble_operator, domination_constant, AssembledOperator, DomainMesh,
    NORMALIZATION_ID,
};
use musolve_core::measure::{MeasureReport, SpectralMeasure};
use musolve_core::minimax::{
    check_hypotheses, find_pairs, lambda_window, HypothesisReport, MinimaxReport, Nonlinearity, NonlinearityKind,
    SolverOptions, WindowReport,
};
use musolve_core::spectral::{
    coercivity_certificate, rayleigh_verify, solve_spectrum, CoercivityCertificate, Spectrum,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::config::{PipelineKind, RunConfig};
use crate::output::{encode_matrix, matrix_text, sha256_hex, two_column, Cell, Csv, OutputDir};

pub const RECORD_FILE: &str = "record.json";
pub const HYPOTHESIS_TOLERANCE: f64 = 1e-4;
pub const CONVERGENCE_LADDER: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Config,
    Hypothesis,
    Numerical,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Io => 1,
            FailureKind::Config => 2,
            FailureKind::Hypothesis => 3,
            FailureKind::Numerical => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineError {
    pub kind: FailureKind,
    pub module: String,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.module, self.message)
    }
}

impl std::error::Error for PipelineError {}

fn fail(kind: FailureKind, module: &str, message: impl fmt::Display) -> PipelineError {
    PipelineError {
        kind,
        module: module.to_string(),
        message: message.to_string(),
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        fail(FailureKind::Io, "cli", e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub normalization_id: String,
    pub pipeline: PipelineKind,
    pub config: RunConfig,
    /// SHA-256 of the rendered config.
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: RunStatus,
    pub error: Option<PipelineError>,
    pub dimension_exceeds_two_s_sharp: Option<bool>,
    pub workers: usize,
    /// Every produced file except this record, with its SHA-256.
    pub manifest: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, |e| e.kind.exit_code())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Run<'a> {
    config: &'a RunConfig,
    out: OutputDir,
    plot_dir: String,
    s_sharp_flag: Option<bool>,
}

/// Execute `config.pipeline.kind` into `out_dir`. Always leaves a
/// `record.json` behind, partial on failure.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> RunRecord {
    let started_unix = unix_now();
    let rendered = config.render();
    let config_hash = sha256_hex(rendered.as_bytes());
    let kind = config.pipeline.kind;
    let mut record = RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        normalization_id: NORMALIZATION_ID.to_string(),
        pipeline: kind,
        config: config.clone(),
        config_hash: config_hash.clone(),
        started_unix,
        finished_unix: started_unix,
        status: RunStatus::Failed,
        error: None,
        dimension_exceeds_two_s_sharp: None,
        workers: 1,
        manifest: BTreeMap::new(),
    };
    let out = match OutputDir::new(out_dir) {
        Ok(out) => out,
        Err(e) => {
            record.error = Some(e.into());
            return record;
        }
    };
    let mut run = Run {
        config,
        out,
        plot_dir: format!("plots/{kind}-{}", &config_hash[..12]),
        s_sharp_flag: None,
    };
    info!("running {kind} pipeline into {}", out_dir.display());
    let result = match kind {
        PipelineKind::Spectrum => spectrum_pipeline(&mut run),
        PipelineKind::Certify => certify_pipeline(&mut run),
        PipelineKind::Window => window_pipeline(&mut run),
        PipelineKind::Solve => solve_pipeline(&mut run),
        PipelineKind::Convergence => convergence_pipeline(&mut run),
    };
    record.dimension_exceeds_two_s_sharp = run.s_sharp_flag;
    record.manifest = run.out.manifest().clone();
    match result {
        Ok(()) => record.status = RunStatus::Ok,
        Err(e) => {
            info!("pipeline failed: {e}");
            record.error = Some(e);
        }
    }
    record.finished_unix = unix_now();
    let written = serde_json::to_string_pretty(&record)
        .map_err(std::io::Error::other)
        .and_then(|text| run.out.write_unlisted(RECORD_FILE, format!("{text}\n").as_bytes()));
    if let Err(e) = written {
        if record.error.is_none() {
            record.status = RunStatus::Failed;
            record.error = Some(e.into());
        }
    }
    record
}

fn measure_of(config: &RunConfig) -> Result<SpectralMeasure, PipelineError> {
    config
        .spectral_measure()
        .map_err(|e| fail(FailureKind::Config, "measure", e))
}

fn failed_hypotheses(r: &MeasureReport) -> Vec<&'static str> {
    let mut failed = Vec::new();
    if !r.has_positive_high_mass {
        failed.push("no positive mass above s_bar");
    }
    if !r.negative_part_confined {
        failed.push("negative part above s_bar");
    }
    if !r.negative_part_dominated {
        failed.push("negative part not dominated");
    }
    failed
}

/// Validate the measure (writing its report) and assemble on `n` nodes.
fn prepare(run: &mut Run, n: usize) -> Result<AssembledOperator, PipelineError> {
    let measure = measure_of(run.config)?;
    let report = measure
        .validate_hypotheses()
        .map_err(|e| fail(FailureKind::Config, "measure", e))?;
    run.s_sharp_flag = report.dimension_exceeds_two_s_sharp;
    run.out.write_json("measure_report.json", &report)?;
    let failed = failed_hypotheses(&report);
    if !failed.is_empty() {
        return Err(fail(FailureKind::Hypothesis, "measure", failed.join("; ")));
    }
    assemble(run.config, &measure, n)
}

fn assemble(config: &RunConfig, measure: &SpectralMeasure, n: usize) -> Result<AssembledOperator, PipelineError> {
    let mesh =
        DomainMesh::new(config.domain.a, config.domain.b, n).map_err(|e| fail(FailureKind::Config, "assembly", e))?;
    let atoms = measure.to_atoms(config.measure.quadrature_order);
    assemble_operator(&mesh, &atoms, measure.s_bar()).map_err(|e| fail(FailureKind::Numerical, "assembly", e))
}

fn export_spectrum(run: &mut Run, op: &AssembledOperator) -> Result<Spectrum, PipelineError> {
    let sp = solve_spectrum(op, run.config.solver.m).map_err(|e| fail(FailureKind::Numerical, "spectral", e))?;
    let mut csv = Csv::new(&["k", "lambda", "residual", "multiplicity_cluster_id"]);
    for k in 0..sp.len() {
        csv.row(&[
            Cell::Int(k + 1),
            Cell::Float(sp.eigenvalues[k]),
            Cell::Float(sp.residuals[k]),
            Cell::Int(sp.clusters[k]),
        ]);
    }
    run.out.write("spectrum.csv", &csv.into_bytes())?;
    run.out.write("eigenvectors.musmat", &encode_matrix(&sp.eigenvectors))?;
    run.out.write("eigenvectors.txt", &matrix_text(&sp.eigenvectors))?;

    let mut csv = Csv::new(&["k", "minimum", "deviation", "eigenvector_error"]);
    for k in 0..sp.len() {
        let r = rayleigh_verify(&sp, op, k).map_err(|e| fail(FailureKind::Numerical, "spectral", e))?;
        csv.row(&[
            Cell::Int(k),
            Cell::Float(r.minimum),
            Cell::Float(r.deviation),
            r.eigenvector_error.map_or(Cell::Missing, Cell::Float),
        ]);
    }
    run.out.write("rayleigh.csv", &csv.into_bytes())?;
    let points = sp.eigenvalues.iter().enumerate().map(|(i, l)| ((i + 1) as f64, *l));
    let path = format!("{}/spectrum.dat", run.plot_dir);
    run.out.write(&path, &two_column(points))?;
    Ok(sp)
}

fn spectrum_pipeline(run: &mut Run) -> Result<(), PipelineError> {
    let op = prepare(run, run.config.domain.n_interior)?;
    export_spectrum(run, &op)?;
    Ok(())
}

#[derive(Serialize)]
struct DominationEntry {
    s_low: f64,
    s_high: f64,
    constant: f64,
}

#[derive(Serialize)]
struct CertificateFile {
    gamma: f64,
    s_bar: f64,
    certificate: CoercivityCertificate,
    lambda_1: Option<f64>,
    domination: Vec<DominationEntry>,
}

fn certify_pipeline(run: &mut Run) -> Result<(), PipelineError> {
    let op = prepare(run, run.config.domain.n_interior)?;
    let measure = measure_of(run.config)?;
    let report = measure
        .validate_hypotheses()
        .map_err(|e| fail(FailureKind::Config, "measure", e))?;
    let certificate = coercivity_certificate(&op).map_err(|e| fail(FailureKind::Numerical, "spectral", e))?;

    let mut exponents: Vec<f64> = op.atoms.iter().map(|a| a.s).collect();
    exponents.sort_by(f64::total_cmp);
    exponents.dedup();
    let stiffness = exponents
        .iter()
        .map(|s| assemble_fractional_stiffness(&op.mesh, *s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(FailureKind::Numerical, "assembly", e))?;
    let mut domination = Vec::new();
    for i in 0..exponents.len() {
        for j in i + 1..exponents.len() {
            let constant = domination_constant(&stiffness[i], &stiffness[j])
                .map_err(|e| fail(FailureKind::Numerical, "assembly", e))?;
            domination.push(DominationEntry {
                s_low: exponents[i],
                s_high: exponents[j],
                constant,
            });
        }
    }
    let lambda_1 = if certificate.passes {
        let sp = solve_spectrum(&op, 1).map_err(|e| fail(FailureKind::Numerical, "spectral", e))?;
        Some(sp.eigenvalues[0])
    } else {
        None
    };
    run.out.write_json(
        "certificate.json",
        &CertificateFile {
            gamma: report.gamma,
            s_bar: report.s_bar,
            certificate,
            lambda_1,
            domination,
        },
    )?;
    if !certificate.passes {
        return Err(fail(
            FailureKind::Hypothesis,
            "spectral",
            format!("coercivity certificate fails: c0_gamma = {} >= 1", certificate.c0_gamma),
        ));
    }
    Ok(())
}

fn nonlinearity_of(config: &RunConfig) -> Result<Nonlinearity, PipelineError> {
    config
        .nonlinearity()
        .map_err(|e| fail(FailureKind::Config, "minimax", e))?
        .ok_or_else(|| fail(FailureKind::Config, "minimax", "missing [nonlinearity] section"))
}

#[derive(Serialize)]
struct WindowFile<'a> {
    hypotheses: &'a HypothesisReport,
    window: Option<&'a WindowReport>,
}

/// Spectrum, nonlinearity checks and the window (absent for the zero kind).
fn spectrum_and_window(
    run: &mut Run,
) -> Result<
    (
        AssembledOperator,
        Spectrum,
        Nonlinearity,
        HypothesisReport,
        Option<WindowReport>,
    ),
    PipelineError,
> {
    let op = prepare(run, run.config.domain.n_interior)?;
    let sp = export_spectrum(run, &op)?;
    let nl = nonlinearity_of(run.config)?;
    let hypotheses = check_hypotheses(&nl, HYPOTHESIS_TOLERANCE);
    let window = if matches!(nl.kind(), NonlinearityKind::Zero) {
        None
    } else {
        match lambda_window(&sp, &nl) {
            Ok(w) => Some(w),
            Err(e) => {
                run.out.write_json(
                    "window.json",
                    &WindowFile {
                        hypotheses: &hypotheses,
                        window: None,
                    },
                )?;
                return Err(fail(FailureKind::Hypothesis, "minimax", e));
            }
        }
    };
    if let Some(w) = &window {
        if w.lambda_bar_in_spectrum {
            warn!(
                "lambda_bar = {} is resonant with the computed spectrum (distance {:e})",
                w.lambda_bar, w.resonance_distance
            );
        }
    }
    run.out.write_json(
        "window.json",
        &WindowFile {
            hypotheses: &hypotheses,
            window: window.as_ref(),
        },
    )?;
    if !hypotheses.all_hold() {
        return Err(fail(
            FailureKind::Hypothesis,
            "minimax",
            format!("nonlinearity hypotheses fail: {hypotheses:?}"),
        ));
    }
    Ok((op, sp, nl, hypotheses, window))
}

fn window_pipeline(run: &mut Run) -> Result<(), PipelineError> {
    let (_, _, _, _, window) = spectrum_and_window(run)?;
    if window.is_none() {
        return Err(fail(
            FailureKind::Hypothesis,
            "minimax",
            "no window for a nonlinearity with lambda0 = 0",
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct SolutionEntry {
    pair: usize,
    sign: i8,
    energy: f64,
    residual: f64,
    norm_m: f64,
    in_band: Option<bool>,
    file: String,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    window: Option<&'a WindowReport>,
    hypotheses: &'a HypothesisReport,
    pairs_predicted: usize,
    pairs_found: usize,
    all_in_band: Option<bool>,
    iterations_used: usize,
    budget: usize,
    tolerance: f64,
    nontriviality_threshold: f64,
    distinctness_tolerance: f64,
    workers: usize,
    solutions: Vec<SolutionEntry>,
    band: Option<&'a musolve_core::minimax::EnergyBand>,
    diagnostics: &'a [musolve_core::minimax::SeedDiagnostics],
}

fn sign_label(sign: i8) -> &'static str {
    if sign > 0 {
        "plus"
    } else {
        "minus"
    }
}

fn solve_pipeline(run: &mut Run) -> Result<(), PipelineError> {
    let (op, sp, nl, hypotheses, window) = spectrum_and_window(run)?;
    if let Some(w) = &window {
        if w.pairs_predicted == 0 {
            return Err(fail(
                FailureKind::Hypothesis,
                "minimax",
                format!("no eigenvalue inside the window ({}, {})", w.lower, w.upper),
            ));
        }
    }
    let options = SolverOptions {
        budget: run.config.solver.budget,
        tolerance: run.config.solver.tolerance,
        seed: run.config.solver.seed,
    };
    let report: MinimaxReport =
        find_pairs(&op, &nl, &sp, window.as_ref(), &options).map_err(|e| fail(FailureKind::Numerical, "minimax", e))?;

    let (a, b) = (op.mesh.a(), op.mesh.b());
    let nodes = op.mesh.nodes();
    let mut entries = Vec::with_capacity(report.solutions.len());
    for s in &report.solutions {
        let stem = format!("solution_{}_{}", s.pair, sign_label(s.sign));
        let points: Vec<(f64, f64)> = std::iter::once((a, 0.0))
            .chain(nodes.iter().copied().zip(s.values.iter().copied()))
            .chain(std::iter::once((b, 0.0)))
            .collect();
        let mut csv = Csv::new(&["x", "u"]);
        for (x, u) in &points {
            csv.row(&[Cell::Float(*x), Cell::Float(*u)]);
        }
        let file = format!("{stem}.csv");
        run.out.write(&file, &csv.into_bytes())?;
        let path = format!("{}/{stem}.dat", run.plot_dir);
        run.out.write(&path, &two_column(points))?;
        entries.push(SolutionEntry {
            pair: s.pair,
            sign: s.sign,
            energy: s.energy,
            residual: s.residual,
            norm_m: s.norm_m,
            in_band: s.in_band,
            file,
        });
    }
    run.out.write_json(
        "summary.json",
        &SolveSummary {
            window: window.as_ref(),
            hypotheses: &hypotheses,
            pairs_predicted: report.pairs_predicted,
            pairs_found: report.pairs_found,
            all_in_band: report.all_in_band(),
            iterations_used: report.iterations_used,
            budget: report.budget,
            tolerance: report.tolerance,
            nontriviality_threshold: report.nontriviality_threshold,
            distinctness_tolerance: report.distinctness_tolerance,
            workers: report.workers,
            solutions: entries,
            band: report.band.as_ref(),
            diagnostics: &report.diagnostics,
        },
    )?;
    info!(
        "found {} of {} predicted pairs",
        report.pairs_found, report.pairs_predicted
    );
    if report.pairs_found < report.pairs_predicted {
        return Err(fail(
            FailureKind::Numerical,
            "minimax",
            format!(
                "found {} of {} predicted pairs within the budget",
                report.pairs_found, report.pairs_predicted
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStudy {
    /// Single atom: exact torsion-type solution of `K u = M·1`.
    Getoor,
    /// Otherwise: first eigenvalue against the finest mesh.
    FirstEigenvalue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub error: f64,
}

/// Errors along [`CONVERGENCE_LADDER`]. For the eigenvalue study the finest
/// mesh is the reference and has no row.
pub fn convergence_study(config: &RunConfig) -> Result<(ConvergenceStudy, Vec<ConvergenceRow>), PipelineError> {
    let measure = measure_of(config)?;
    let atoms = measure.to_atoms(config.measure.quadrature_order);
    let (a, b) = (config.domain.a, config.domain.b);
    if let [atom] = atoms.as_slice() {
        let rows = CONVERGENCE_LADDER
            .iter()
            .map(|&n| {
                let op = assemble(config, &measure, n)?;
                let load = &op.mass * DVector::from_element(n, 1.0);
                let u =
                    op.k.clone()
                        .cholesky()
                        .ok_or_else(|| fail(FailureKind::Numerical, "assembly", "stiffness is not positive definite"))?
                        .solve(&load);
                let scale = 1.0 / (gamma(2.0 * atom.s + 1.0) * atom.weight);
                let exact = op.mesh.interpolate(|x| ((x - a) * (b - x)).powf(atom.s) * scale);
                let e = u - exact;
                Ok(ConvergenceRow {
                    n,
                    h: op.mesh.h(),
                    error: e.dot(&(&op.mass * &e)).sqrt(),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        return Ok((ConvergenceStudy::Getoor, rows));
    }
    let mut lambdas = Vec::new();
    for &n in &CONVERGENCE_LADDER {
        let op = assemble(config, &measure, n)?;
        let sp = solve_spectrum(&op, 1).map_err(|e| fail(FailureKind::Numerical, "spectral", e))?;
        lambdas.push((n, op.mesh.h(), sp.eigenvalues[0]));
    }
    let reference = lambdas.last().expect("ladder").2;
    let rows = lambdas[..lambdas.len() - 1]
        .iter()
        .map(|&(n, h, l)| ConvergenceRow {
            n,
            h,
            error: (l - reference).abs(),
        })
        .collect();
    Ok((ConvergenceStudy::FirstEigenvalue, rows))
}

#[derive(Serialize)]
struct ConvergenceFile<'a> {
    study: ConvergenceStudy,
    rows: &'a [ConvergenceRow],
    strictly_decreasing: bool,
}

fn convergence_pipeline(run: &mut Run) -> Result<(), PipelineError> {
    // Hypothesis gate and report, on the configured mesh.
    prepare(run, run.config.domain.n_interior)?;
    let (study, rows) = convergence_study(run.config)?;
    let mut csv = Csv::new(&["n", "h", "error", "ratio"]);
    for (i, r) in rows.iter().enumerate() {
        let ratio = if i == 0 {
            Cell::Missing
        } else {
            Cell::Float(r.error / rows[i - 1].error)
        };
        csv.row(&[Cell::Int(r.n), Cell::Float(r.h), Cell::Float(r.error), ratio]);
    }
    run.out.write("convergence.csv", &csv.into_bytes())?;
    let path = format!("{}/error_vs_h.dat", run.plot_dir);
    run.out.write(&path, &two_column(rows.iter().map(|r| (r.h, r.error))))?;
    let strictly_decreasing = rows.windows(2).all(|w| w[1].error < w[0].error);
    run.out.write_json(
        "convergence.json",
        &ConvergenceFile {
            study,
            rows: &rows,
            strictly_decreasing,
        },
    )?;
    if !strictly_decreasing {
        warn!("errors do not decrease along the mesh ladder");
    }
    Ok(())
}
