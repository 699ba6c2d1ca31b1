use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kaclab::config::SimConfig;
use kaclab::harness::{final_snapshot, report, resume_with, run_simulate, RunManifest, RunStatus};
use kaclab::io::read_snapshot;
use kaclab::KacError;

fn small(dir: &Path) -> SimConfig {
    SimConfig {
        gamma: 0.5,
        n_particles: 48,
        replicas: 2,
        dt_time: 0.01,
        horizon_time: 1.0,
        seed: 9,
        snapshot_stride: 50,
        log_stride: 10,
        output_dir: dir.to_path_buf(),
        ..SimConfig::default()
    }
}

fn checksums(run: &Path) -> BTreeMap<String, String> {
    RunManifest::read(run).unwrap().files.into_iter().map(|f| (f.path, f.sha256)).collect()
}

#[test]
fn rerun_reproduces_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let a = run_simulate(&cfg).unwrap();
    let b = run_simulate(&cfg).unwrap();
    assert_ne!(a, b);
    assert_eq!(RunManifest::read(&a).unwrap().status, RunStatus::Complete);
    let (ca, cb) = (checksums(&a), checksums(&b));
    assert!(ca.keys().any(|k| k.ends_with(".csv")) && ca.keys().any(|k| k.ends_with(".kacl")));
    assert_eq!(ca, cb);
    assert!(report(&a).unwrap().checksum_failures.is_empty());
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let run_with = |threads: usize| -> PathBuf {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_simulate(&cfg).unwrap())
    };
    assert_eq!(checksums(&run_with(1)), checksums(&run_with(3)));
}

#[test]
fn invalid_config_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = SimConfig {
        dt_time: 0.0,
        ..small(&out)
    };
    match run_simulate(&cfg) {
        Err(KacError::Config { key, .. }) => assert_eq!(key, "dt_time"),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert!(!out.exists());
    assert!(matches!(
        SimConfig::from_str("gamma = 0.5\nparticle_count = 12\n"),
        Err(KacError::Config { .. })
    ));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SimConfig {
        replicas: 1,
        ..small(tmp.path())
    };
    let full = run_simulate(&cfg).unwrap();
    let halfway = RunManifest::read(&full)
        .unwrap()
        .snapshots
        .into_iter()
        .find(|s| s.step == 50 && s.path.contains("state_"))
        .unwrap();
    let resumed = resume_with(&full.join(&halfway.path), 0.5, None).unwrap();
    let a = read_snapshot(&final_snapshot(&full, 0).unwrap()).unwrap();
    let b = read_snapshot(&final_snapshot(&resumed, 0).unwrap()).unwrap();
    assert_eq!(a.velocities, b.velocities);
    assert_eq!(RunManifest::read(&resumed).unwrap().resumed_from.is_some(), true);

    let changed = SimConfig { gamma: 1.0, ..cfg.clone() };
    let err = resume_with(&full.join(&halfway.path), 0.5, Some(&changed)).unwrap_err();
    assert!(err.to_string().contains("physics mismatch"), "{err}");
}

#[test]
fn damaged_snapshots_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let run = run_simulate(&SimConfig {
        replicas: 1,
        ..small(tmp.path())
    })
    .unwrap();
    let snap = final_snapshot(&run, 0).unwrap();
    let bytes = std::fs::read(&snap).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    std::fs::write(&snap, &bad_magic).unwrap();
    assert!(matches!(read_snapshot(&snap), Err(KacError::Corrupt { .. })));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&7u32.to_le_bytes());
    std::fs::write(&snap, &future).unwrap();
    assert!(matches!(read_snapshot(&snap), Err(KacError::Version { found: 7, .. })));

    std::fs::write(&snap, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_snapshot(&snap), Err(KacError::Corrupt { .. })));
    assert_eq!(report(&run).unwrap().checksum_failures.len(), 1);
}
