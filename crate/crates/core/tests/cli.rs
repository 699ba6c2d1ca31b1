use std::process::Command;

fn kaclab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kaclab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn kernel_suite_passes() {
    let out = kaclab(&["verify", "kernels"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS")));
    assert!(!text.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn run_suites_need_a_run_directory() {
    let out = kaclab(&["verify", "oracle"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run"));
}

#[test]
fn unknown_suite_is_an_error() {
    assert_eq!(kaclab(&["verify", "everything"]).status.code(), Some(2));
}

#[test]
fn simulate_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "gamma = 0.0\nn_particles = 32\nreplicas = 2\nhorizon_time = 0.1\nsnapshot_stride = 5\noutput_dir = {:?}\n",
            tmp.path().join("runs")
        ),
    )
    .unwrap();
    let out = kaclab(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = String::from_utf8_lossy(&out.stdout).trim().to_string();
    assert_eq!(kaclab(&["report", &run_dir]).status.code(), Some(0));
}
