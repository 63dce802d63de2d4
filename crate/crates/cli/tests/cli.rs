use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpbf-pinn"))
        .args(args)
        .env_remove("LPBF_PINN_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Desk profile shrunk to a few seconds of work.
const TINY: &[&str] = &[
    "--profile",
    "desk",
    "--set",
    "optimizer.total_epochs=6",
    "--set",
    "optimizer.adam_epochs=4",
    "--set",
    "optimizer.curriculum_epochs=2",
    "--set",
    "optimizer.max_iter=2",
    "--set",
    "sampling.adam_batch={bc = 64, ic = 16, pde = 64}",
    "--set",
    "sampling.lbfgs_batch={bc = 64, ic = 16, pde = 64}",
    "--set",
    "process.t_end=0.6",
    "--set",
    "evaluation.snapshot_times=[0.3]",
    "--set",
    "evaluation.grid_spacing=1e-3",
    "--set",
    "evaluation.materials=[\"Ti-6Al-4V\", \"Copper\"]",
];

fn train_tiny(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), &["--set", "optimizer.lr_adamm=1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lr_adamm"), "{}", stderr(&o));
    let o = run(&["ablate", "--suite", "nope", "--profile", "desk"]);
    assert_eq!(code(&o), 1);
    let o = run(&["eval", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // zero power makes the physics-guided scale vanish
    let o = train_tiny(dir.path(), &["--set", "process.power=0"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("degenerate"));
}

#[test]
fn default_profile_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "optimizer.total_epochs=10",
        "--set",
        "optimizer.adam_epochs=10",
        "--set",
        "optimizer.curriculum_epochs=5",
        "--set",
        "sampling.adam_batch={bc = 256, ic = 64, pde = 256}",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.toml", "history.csv", "params.bin", "manifest.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 11);
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("profile = \"paper\""));
}

#[test]
fn same_seed_same_checkpoint() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = train_tiny(d.path(), &["--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("params.bin")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_tiny(c.path(), &["--seed", "8"])), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn scaling_flag_selects_arm() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), &["--scaling", "softplus-only"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(cfg.contains("scaling = \"softplus-only\""), "{cfg}");
    let o = train_tiny(dir.path(), &["--scaling", "sideways"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_and_export_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_tiny(dir.path(), &[])), 0);
    let run_dir = dir.path().to_str().unwrap();
    let o = run(&["eval", run_dir]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("Ti-6Al-4V,") && rows[1].ends_with(",false"));
    assert!(rows[2].starts_with("Copper,") && rows[2].ends_with(",true"));
    assert!(dir.path().join("probe0-Copper-reference.csv").exists());
    assert!(dir.path().join("model-Ti-6Al-4V-t0.30.csv").exists());

    let o = run(&["export", run_dir, "--time", "0.1,0.2", "--vtk"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let vtk = fs::read_to_string(dir.path().join("model-Ti-6Al-4V-t0.10.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile"));
    assert_eq!(code(&run(&["export", run_dir, "--time", "9"])), 1);
}

#[test]
fn zero_power_oracle_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "oracle",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "process.power=0",
        "--set",
        "process.t_end=0.5",
        "--set",
        "evaluation.snapshot_times=[0.5]",
        "--set",
        "evaluation.grid_spacing=1e-3",
        "--material",
        "SS-316L",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("oracle-SS-316L/reference-t0.50.csv")).unwrap();
    let mut n = 0;
    for line in csv.lines().skip(1) {
        let t: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((t - 300.0).abs() < 1e-9, "{line}");
        n += 1;
    }
    assert_eq!(n, 41 * 11 * 7);
}

#[test]
fn ablation_suite_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--suite", "optimizer", "--seeds", "0", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(&TINY[..]);
    args.extend_from_slice(&["--set", "evaluation.materials=[\"SS-316L\"]"]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let arms: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["physics-guided", "adam-only"]);
    assert!(dir.path().join("adam-only/seed-0/params.bin").exists());
}
