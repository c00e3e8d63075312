use std::path::{Path, PathBuf};
use std::process::Command;

use musolve::config::{
    AtomConfig, DensityConfig, DomainConfig, MeasureConfig, NonlinearityConfig, NonlinearityKindConfig, PipelineConfig,
    SolverConfig,
};
use musolve::output::{decode_matrix, sha256_hex};
use musolve::{PipelineKind, RunConfig, RunRecord, RunStatus};
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_musolve"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = bin().arg(config).arg("--out").arg(out).args(extra).status().unwrap();
    status.code().unwrap()
}

fn record(out: &Path) -> RunRecord {
    serde_json::from_slice(&std::fs::read(out.join("record.json")).unwrap()).unwrap()
}

fn second_column(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect()
}

fn plot_file(out: &Path, name: &str) -> PathBuf {
    let plots = out.join("plots");
    let dir = std::fs::read_dir(&plots).unwrap().next().unwrap().unwrap().path();
    dir.join(name)
}

const SMALL: &str = r#"
[domain]
a = 0.0
b = 3.141592653589793
n_interior = 48

[measure]
atoms = [{ s = 1.0, c = 1.0 }, { s = 0.25, c = -0.1 }]

[solver]
m = 6
"#;

#[test]
fn spectrum_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&write_config(dir.path(), SMALL), &out, &[]), 0);
    let rec = record(&out);
    assert_eq!(rec.status, RunStatus::Ok);
    assert_eq!(rec.pipeline, PipelineKind::Spectrum);
    assert_eq!(rec.config.solver.tolerance, 1e-8);
    for name in [
        "spectrum.csv",
        "rayleigh.csv",
        "eigenvectors.musmat",
        "eigenvectors.txt",
        "measure_report.json",
    ] {
        assert!(rec.manifest.contains_key(name), "{name}");
    }
    assert!(!rec.manifest.contains_key("record.json"));
    for (name, hash) in &rec.manifest {
        assert_eq!(&sha256_hex(&std::fs::read(out.join(name)).unwrap()), hash, "{name}");
    }
    let lambdas = second_column(&plot_file(&out, "spectrum.dat"));
    assert_eq!(lambdas.len(), 6);
    assert!(lambdas.windows(2).all(|w| w[0] < w[1]));
    let header = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert!(header.starts_with("k,lambda,residual,multiplicity_cluster_id\n"));
    let vectors = decode_matrix(&std::fs::read(out.join("eigenvectors.musmat")).unwrap()).unwrap();
    assert_eq!(vectors.shape(), (48, 6));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("s = 0.25", "s = 1.5");
    let out = bin().arg(write_config(dir.path(), &bad)).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exponent outside [0,1]"));

    let unknown = SMALL.replace("m = 6", "m = 6\nrestarts = 2");
    let out = bin().arg(write_config(dir.path(), &unknown)).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 12"));

    // The override is validated too: window needs a nonlinearity.
    let out = bin()
        .arg(write_config(dir.path(), SMALL))
        .args(["--pipeline", "window"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hypothesis_failure_writes_partial_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = SMALL.replace("s = 0.25, c = -0.1", "s = 0.8, c = -0.1");
    assert_eq!(run(&write_config(dir.path(), &text), &out, &[]), 3);
    let rec = record(&out);
    assert_eq!(rec.status, RunStatus::Failed);
    let err = rec.error.unwrap();
    assert_eq!(err.module, "measure");
    assert!(err.message.contains("negative part above s_bar"));
    assert!(rec.manifest.contains_key("measure_report.json"));
    assert!(!out.join("spectrum.csv").exists());
}

#[test]
fn certificate_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = SMALL.replace("c = -0.1", "c = -20.0");
    assert_eq!(
        run(&write_config(dir.path(), &text), &out, &["--pipeline", "certify"]),
        3
    );
    let cert: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["certificate"]["passes"], false);
    assert!(cert["lambda_1"].is_null());
}

#[test]
fn certify_echoes_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&configs().join("wrong_sign.toml"), &out, &[]), 0);
    let cert: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["gamma"], 0.1);
    assert!(cert["certificate"]["c0_gamma"].as_f64().unwrap() < 1.0);
    assert!(cert["lambda_1"].as_f64().unwrap() > 0.0);
    assert_eq!(cert["domination"].as_array().unwrap().len(), 1);
}

#[test]
fn exhausted_budget_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = format!(
        "{}\n[nonlinearity]\nkind = \"rational_decay\"\nlambda0 = -7.0\nlambda_bar = 10.0\n",
        SMALL
            .replace("m = 6", "m = 6\nbudget = 3")
            .replace(", { s = 0.25, c = -0.1 }", "")
    );
    assert_eq!(run(&write_config(dir.path(), &text), &out, &["--pipeline", "solve"]), 4);
    let rec = record(&out);
    assert_eq!(rec.error.unwrap().module, "minimax");
    assert!(rec.manifest.contains_key("summary.json"));
}

#[test]
fn empty_window_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = format!(
        "{}\n[nonlinearity]\nkind = \"rational_decay\"\nlambda0 = -0.5\nlambda_bar = 3.0\n",
        SMALL.replace(", { s = 0.25, c = -0.1 }", "")
    );
    assert_eq!(run(&write_config(dir.path(), &text), &out, &["--pipeline", "solve"]), 3);
    let window: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("window.json")).unwrap()).unwrap();
    assert_eq!(window["window"]["pairs_predicted"], 0);
}

#[test]
fn convergence_errors_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&configs().join("getoor.toml"), &out, &[]), 0);
    let errors = second_column(&plot_file(&out, "error_vs_h.dat"));
    assert_eq!(errors.len(), 4);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn output_dir_from_config_is_relative_to_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("m = 6", "m = 3") + "\n[pipeline]\noutput_dir = \"results\"\n";
    let config = write_config(dir.path(), &text);
    let status = bin().arg(&config).current_dir(std::env::temp_dir()).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("results/record.json").exists());
}

#[test]
fn plot_names_are_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&config, &a, &[]), 0);
    assert_eq!(run(&config, &b, &[]), 0);
    let (ra, rb) = (record(&a), record(&b));
    assert_eq!(ra.manifest, rb.manifest);
    assert_eq!(ra.config_hash, rb.config_hash);
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    let atoms = prop::collection::btree_map(0u32..=100, prop_oneof![-2.0f64..-0.01, 0.01f64..2.0], 1..4);
    let density = prop::option::of((0.0f64..0.5, 0.1f64..0.5, prop::collection::vec(-1.0f64..1.0, 1..4)));
    let nonlinearity = prop::option::of((0usize..4, -9.0f64..-0.1, -5.0f64..20.0));
    (
        (-3.0f64..1.0, 0.5f64..4.0, 1usize..200),
        atoms,
        density,
        nonlinearity,
        (1usize..20, 1usize..50_000, 1e-12f64..1e-3, any::<u64>()),
        0usize..5,
        prop::option::of("[a-z]{1,8}"),
    )
        .prop_map(
            |((a, len, n), atoms, density, nl, (m, budget, tolerance, seed), kind, out)| {
                let atoms = atoms
                    .into_iter()
                    .map(|(s, c)| AtomConfig {
                        s: f64::from(s) / 100.0,
                        c,
                    })
                    .collect();
                let density = density
                    .map(|(lo, width, poly_coeffs)| {
                        vec![DensityConfig {
                            interval: [lo, lo + width],
                            poly_coeffs,
                        }]
                    })
                    .unwrap_or_default();
                let nonlinearity = nl.map(|(k, lambda0, lambda_bar)| match k {
                    0 => NonlinearityConfig {
                        kind: NonlinearityKindConfig::RationalDecay,
                        lambda0: Some(lambda0),
                        lambda_bar,
                        table: vec![],
                    },
                    1 => NonlinearityConfig {
                        kind: NonlinearityKindConfig::GaussianDecay,
                        lambda0: Some(lambda0),
                        lambda_bar,
                        table: vec![],
                    },
                    2 => NonlinearityConfig {
                        kind: NonlinearityKindConfig::Table,
                        lambda0: None,
                        lambda_bar,
                        table: vec![[0.5, 0.5 * lambda0], [2.0, 0.1]],
                    },
                    _ => NonlinearityConfig {
                        kind: NonlinearityKindConfig::Zero,
                        lambda0: None,
                        lambda_bar,
                        table: vec![],
                    },
                });
                let kinds = [
                    PipelineKind::Spectrum,
                    PipelineKind::Certify,
                    PipelineKind::Window,
                    PipelineKind::Solve,
                    PipelineKind::Convergence,
                ];
                let kind = if nonlinearity.is_none() && (2..=3).contains(&kind) {
                    PipelineKind::Spectrum
                } else {
                    kinds[kind]
                };
                RunConfig {
                    domain: DomainConfig {
                        a,
                        b: a + len,
                        n_interior: n,
                    },
                    measure: MeasureConfig {
                        s_bar: 0.5,
                        atoms,
                        density,
                        quadrature_order: 3,
                    },
                    nonlinearity,
                    solver: SolverConfig {
                        m: m.min(n),
                        budget,
                        tolerance,
                        seed,
                    },
                    pipeline: PipelineConfig {
                        kind,
                        output_dir: out.map(PathBuf::from),
                    },
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn render_then_parse_is_identity(config in config_strategy()) {
        let text = config.render();
        let parsed: RunConfig = text.parse().map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(parsed, config);
    }
}
