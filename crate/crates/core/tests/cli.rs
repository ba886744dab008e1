use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use monoglue::cli::{self, CliError, ExperimentConfig, Mode};
use monoglue::deformation::DeformationError;
use monoglue::linear_system::LinearError;

fn monoglue(config: &str, mode: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = out.join("config.toml");
    fs::create_dir_all(out).unwrap();
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_monoglue"))
        .args(["--config", cfg.to_str().unwrap(), "--mode", mode, "--out", out.to_str().unwrap()])
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const FAST_BPS: &str = "[bps]\nlambda = 1.0\nradius = 2.0\nspacings = [0.2, 0.1]\n";

#[test]
fn imbalanced_charges_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[dirac]
points_per_axis = 16
charges = [ { position = [2.0, 4.0, 4.0], charge = 1 }, { position = [6.0, 4.0, 4.0], charge = 1 } ]
"#;
    let out = monoglue(cfg, "dirac-solve", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(cli::EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solvable"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = monoglue("[bps]\nlamda = 2.0\n", "bps-residual", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(cli::EXIT_VALIDATION));
}

#[test]
fn coarse_glue_grid_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = monoglue("[glue]\nlambda = 64.0\npoints_per_axis = 32\n", "glue", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(cli::EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("4h"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_monoglue"))
        .args(["--config", "/nonexistent/monoglue.toml", "--mode", "hardy", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(cli::EXIT_IO));
}

#[test]
fn bps_residual_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = monoglue(FAST_BPS, "bps-residual", dir.path(), &["--threads", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "bps-residual");
    assert_eq!(manifest["threads"], 3);
    assert_eq!(manifest["artifacts"][0], "bps_residual.csv");
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bps_residual.csv.json")).unwrap()).unwrap();
    assert_eq!(sidecar["config_hash"], manifest["config_hash"]);
    let mut rdr = csv::Reader::from_path(dir.path().join("bps_residual.csv")).unwrap();
    assert_eq!(rdr.records().count(), 2);
    let orders = manifest["summary"]["orders"][0].as_f64().unwrap();
    assert!(orders > 1.5, "{orders}");
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let cfg = "[hardy]\nsamples = 6\nspacing = 0.12\n";
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = monoglue(cfg, "hardy", dir.path(), &["--seed", seed]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let table = fs::read_to_string(dir.path().join("hardy.csv")).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        (table, manifest["config_hash"].as_str().unwrap().to_string())
    };
    let (a, ha) = run("5");
    let (b, hb) = run("5");
    let (c, hc) = run("6");
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_ne!(a, c);
    assert_ne!(ha, hc);
}

#[test]
fn vtk_export_is_legacy_ascii() {
    let dir = tempfile::tempdir().unwrap();
    let out = monoglue("[glue]\nlambda = 8.0\npoints_per_axis = 48\n", "glue", dir.path(), &["--export-vtk"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("glued.vtk")).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    assert!(text.contains("DIMENSIONS 48 48 48"));
    assert!(text.contains("SCALARS higgs_norm double 1"));
}

#[test]
fn config_round_trips_and_hash_tracks_content() {
    let cfg = ExperimentConfig::from_toml("seed = 9\n[weights]\nalpha1 = -0.3\n").unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.weights.alpha1, -0.3);
    assert_eq!(cfg.weights.alpha2, -0.5);
    let again = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
    assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
}

#[test]
fn mode_preconditions() {
    let mut cfg = ExperimentConfig::default();
    cfg.weights.alpha1 = 0.2;
    assert!(matches!(cfg.validate(Mode::Deform), Err(CliError::Validation(_))));
    assert!(cfg.validate(Mode::Glue).is_ok());
    cfg.hardy.alpha = -1.0;
    assert!(cfg.validate(Mode::Hardy).is_err());
    cfg.bps.spacings = vec![0.1];
    assert!(cfg.validate(Mode::BpsResidual).is_err());
}

#[test]
fn solver_failures_map_to_exit_codes() {
    let gate: CliError = DeformationError::GateFailed { norm: 2.0, bound: 1.0 }.into();
    assert_eq!(gate.exit_code(), cli::EXIT_GATE);
    let div: CliError = DeformationError::Diverged { iteration: 4, update: 1e3 }.into();
    assert_eq!(div.exit_code(), cli::EXIT_DIVERGENCE);
    let cg: CliError = LinearError::ContractionFailed { factor: 1.2 }.into();
    assert_eq!(cg.exit_code(), cli::EXIT_DIVERGENCE);
    let nested: CliError = DeformationError::Linear(LinearError::GateFailed { norm: 1.0, delta: 0.1 }).into();
    assert_eq!(nested.exit_code(), cli::EXIT_GATE);
}
