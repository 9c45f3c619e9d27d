//! End-to-end checks of the `lab` binary.

use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lab"))
}

#[test]
fn list_prints_catalog() {
    let out = lab().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "lyapunov",
        "fk-consistency",
        "sync",
        "contraction",
        "corrector",
        "generator",
        "supermartingale",
        "moments",
        "kernel-bounds",
        "stopping-stats",
        "allen-cahn-threshold",
    ] {
        assert!(text.contains(name), "catalog missing {name}:\n{text}");
    }
}

#[test]
fn schema_prints_headers() {
    let out = lab().args(["schema", "lyapunov"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("paths.csv"));
    assert!(text.contains("lambda_sample"));
}

#[test]
fn schema_unknown_experiment_fails() {
    let out = lab().args(["schema", "nope"]).output().unwrap();
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("unknown experiment name"));
}

#[test]
fn run_verify_and_seed_override() {
    let dir = std::env::temp_dir().join("spde-lab-cli-test");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("exp.toml");
    std::fs::write(
        &config,
        r#"
experiment = "lyapunov"
seed = 3

[grid]
points_per_axis = 16

[kernel]
kind = "constant"
variance = 1.0

[nonlinearity]
preset = "linear"
gamma = 1.0

[time]
dt = 2e-3
horizon = 5.0
burn_in = 1.0
record_dt = 0.05

[ensemble]
n_paths = 6
"#,
    )
    .unwrap();

    let out_a = dir.join("a");
    let st = lab()
        .args(["run", config.to_str().unwrap(), "--threads", "1", "--verify"])
        .args(["--out", out_a.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(out_a.join("manifest.toml").exists());
    assert!(out_a.join("paths.csv").exists());
    assert!(out_a.join("resolved_config.toml").exists());

    // A different worker count must produce the identical manifest.
    let out_b = dir.join("b");
    let st = lab()
        .args(["run", config.to_str().unwrap(), "--threads", "2", "--verify"])
        .args(["--out", out_b.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(st.status.success());
    let strip_clock = |p: &std::path::Path| -> String {
        std::fs::read_to_string(p.join("manifest.toml"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("wall_clock"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_clock(&out_a), strip_clock(&out_b));

    // LAB_SEED overrides the config seed.
    let out_c = dir.join("c");
    let st = lab()
        .env("LAB_SEED", "99")
        .args(["run", config.to_str().unwrap(), "--out", out_c.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(st.status.success());
    let manifest = std::fs::read_to_string(out_c.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 99"));
    let _ = std::fs::remove_dir_all(&dir);
}
