//! Run directories, manifests, resumption and the verification suites.
//!
//! Every command writes into a fresh timestamped directory under the
//! config's `output_dir`. The manifest is written first with status
//! `incomplete` and rewritten as `complete` with a SHA-256 inventory of every
//! other file once all outputs are on disk.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::coupling::coupled_simulate;
use crate::ensemble::{Ensemble, SeedLineage};
use crate::inequality::{
    exp_series_partial_sums, exp_series_threshold, fit_moment_constant, hierarchy_weight_sums,
    hierarchy_weights, moment_ode_bound_log, moment_ode_solve, saturating_series_moments_log, weight_bounds,
    MomentOdeParams,
};
use crate::integrator::{initial_ensemble, run_replica, simulate, step, StepOptions, TrajectoryLog, CODE_VERSION};
use crate::io::{self, num, Snapshot};
use crate::kernels::{eval_pair_kernels, povzner_sides};
use crate::noise::{replica_seed, NoiseKey};
use crate::observables::{chaos_covariance, ChaosStatistic, MomentReport, ReportSettings};
use crate::oracle::{convergence_rows, maxwellian_m4_trajectory};
use crate::stats::ols;
use crate::{KacError, Result, Vec3};

pub const MANIFEST_NAME: &str = "manifest.json";
const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub path: String,
    pub replica: u64,
    pub step: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub status: RunStatus,
    pub code_version: String,
    pub started: String,
    pub finished: Option<String>,
    pub config: SimConfig,
    pub replica_seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
    pub snapshots: Vec<SnapshotEntry>,
    pub resumed_from: Option<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| KacError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| KacError::Corrupt {
            path,
            reason: e.to_string(),
        })
    }

    fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| KacError::io(&path, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn fresh_run_dir(base: &Path, kind: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(base).map_err(|e| KacError::io(base, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    for k in 0u32.. {
        let name = if k == 0 { format!("{kind}-{stamp}") } else { format!("{kind}-{stamp}-{k}") };
        let dir = base.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(KacError::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Open run directory with its manifest.
struct RunWriter {
    dir: PathBuf,
    manifest: RunManifest,
}

impl RunWriter {
    fn create(config: &SimConfig, kind: &str) -> Result<Self> {
        let dir = fresh_run_dir(&config.output_dir, kind)?;
        let manifest = RunManifest {
            kind: kind.to_string(),
            status: RunStatus::Incomplete,
            code_version: CODE_VERSION.to_string(),
            started: now(),
            finished: None,
            config: config.clone(),
            replica_seeds: (0..config.replicas as u64).map(|r| replica_seed(config.seed, r)).collect(),
            files: Vec::new(),
            snapshots: Vec::new(),
            resumed_from: None,
            error: None,
        };
        manifest.write(&dir)?;
        Ok(RunWriter { dir, manifest })
    }

    fn csv(&self, name: &str, table: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        io::write_csv(&self.dir.join(name), table, header, rows)
    }

    fn snapshot(&mut self, e: &Ensemble, label: &str) -> Result<()> {
        let sub = self.dir.join(SNAPSHOT_DIR);
        std::fs::create_dir_all(&sub).map_err(|err| KacError::io(&sub, err))?;
        let name = format!("{label}_r{:04}_s{:08}.kacl", e.lineage.replica, e.lineage.step);
        io::write_snapshot(
            &sub.join(&name),
            &Snapshot {
                gamma: e.gamma,
                time: e.time,
                velocities: e.velocities.clone(),
            },
        )?;
        self.manifest.snapshots.push(SnapshotEntry {
            path: format!("{SNAPSHOT_DIR}/{name}"),
            replica: e.lineage.replica,
            step: e.lineage.step,
            time: e.time,
        });
        Ok(())
    }

    fn finish(mut self, outcome: Result<()>) -> Result<PathBuf> {
        self.manifest.finished = Some(now());
        match outcome {
            Ok(()) => {
                self.manifest.files = inventory(&self.dir)?;
                self.manifest.status = RunStatus::Complete;
                self.manifest.write(&self.dir)?;
                Ok(self.dir)
            }
            Err(e) => {
                self.manifest.files = inventory(&self.dir)?;
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
                self.manifest.write(&self.dir)?;
                Err(e)
            }
        }
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| KacError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| KacError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST_NAME) {
            out.push(path);
        }
    }
    Ok(())
}

fn inventory(dir: &Path) -> Result<Vec<FileEntry>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    files
        .iter()
        .map(|p| {
            let bytes = std::fs::metadata(p).map_err(|e| KacError::io(p, e))?.len();
            Ok(FileEntry {
                path: p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"),
                sha256: io::sha256_file(p)?,
                bytes,
            })
        })
        .collect()
}

fn conserved_rows(log: &TrajectoryLog) -> Vec<Vec<String>> {
    log.times
        .iter()
        .zip(&log.conserved_series)
        .map(|(t, c)| vec![num(*t), num(c.momentum.x), num(c.momentum.y), num(c.momentum.z), num(c.energy)])
        .collect()
}

const CONSERVED_HEADER: [&str; 5] = ["time", "px", "py", "pz", "energy"];

/// Moment orders of at least 4 present in the report.
fn high_orders(report: &MomentReport) -> Vec<usize> {
    (0..report.p_values.len()).filter(|&k| report.p_values[k] >= 4.0).collect()
}

/// Quarter of the series threshold implied by the largest moment constant
/// fitted over all frames; `None` without orders `>= 4`.
pub fn default_exp_xi(report: &MomentReport, gamma: f64) -> Result<Option<f64>> {
    let ks = high_orders(report);
    if ks.is_empty() {
        return Ok(None);
    }
    let ps: Vec<f64> = ks.iter().map(|&k| report.p_values[k]).collect();
    let mut c: f64 = 0.0;
    for row in &report.moment_mean {
        let ms: Vec<f64> = ks.iter().map(|&k| row[k]).collect();
        c = c.max(fit_moment_constant(&ps, &ms, gamma)?);
    }
    Ok(Some(0.25 * exp_series_threshold(c, gamma)?))
}

/// Moment, exponential-moment, entropy and chaos series over the stored frames.
fn frame_report(config: &SimConfig, times: &[f64], frames: &[Vec<&[Vec3]>]) -> Result<MomentReport> {
    let mut settings = ReportSettings {
        gamma: config.gamma,
        p_values: config.moment_orders.clone(),
        xi_values: config.exp_moment_xi.clone(),
        entropy_neighbors: Some(config.entropy_neighbors),
        chaos: (config.replicas >= 8).then_some(ChaosStatistic::SpeedSq),
    };
    if settings.xi_values.is_empty() {
        let plain = MomentReport::build(
            times,
            frames,
            &ReportSettings {
                entropy_neighbors: None,
                chaos: None,
                ..settings.clone()
            },
        )?;
        settings.xi_values = default_exp_xi(&plain, config.gamma)?.into_iter().collect();
    }
    MomentReport::build(times, frames, &settings)
}

fn write_report_tables(w: &RunWriter, report: &MomentReport) -> Result<()> {
    let mut rows = Vec::new();
    for (t, time) in report.times.iter().enumerate() {
        for (k, p) in report.p_values.iter().enumerate() {
            rows.push(vec![num(*time), num(*p), num(report.moment_mean[t][k]), num(report.moment_stderr[t][k])]);
        }
    }
    w.csv("moments.csv", "moments", &["time", "p", "moment", "stderr"], &rows)?;
    let mut rows = Vec::new();
    for (t, time) in report.times.iter().enumerate() {
        for (k, xi) in report.xi_values.iter().enumerate() {
            let e = &report.exp_moment[t][k];
            rows.push(vec![
                num(*time),
                num(*xi),
                num(e.value),
                num(e.stderr),
                u8::from(e.tail_dominated).to_string(),
            ]);
        }
    }
    w.csv("exp_moments.csv", "exp_moments", &["time", "xi", "estimate", "stderr", "tail_flag"], &rows)?;
    let rows: Vec<Vec<String>> = report
        .times
        .iter()
        .enumerate()
        .map(|(t, time)| {
            let (c, s) = report.chaos_cov[t].map_or((f64::NAN, f64::NAN), |e| (e.value, e.stderr));
            vec![num(*time), num(report.entropy[t].unwrap_or(f64::NAN)), num(c), num(s)]
        })
        .collect();
    w.csv("entropy_chaos.csv", "entropy_chaos", &["time", "entropy", "chaos_cov", "chaos_stderr"], &rows)
}

/// `simulate`: runs every replica and writes conserved series, moment tables
/// and snapshots. The final ensemble of each replica is always stored.
pub fn run_simulate(config: &SimConfig) -> Result<PathBuf> {
    config.validate()?;
    let mut w = RunWriter::create(config, "simulate")?;
    let outcome = (|| -> Result<()> {
        let out = simulate(config)?;
        for log in &out.logs {
            w.csv(
                &format!("conserved_r{:04}.csv", log.replica),
                "conserved_series",
                &CONSERVED_HEADER,
                &conserved_rows(log),
            )?;
        }
        let stored = out.logs[0].snapshots.len();
        let (times, frames): (Vec<f64>, Vec<Vec<&[Vec3]>>) = if stored > 0 {
            (0..stored)
                .map(|k| {
                    (
                        out.logs[0].snapshots[k].time,
                        out.logs.iter().map(|l| l.snapshots[k].velocities.as_slice()).collect(),
                    )
                })
                .unzip()
        } else {
            (
                vec![out.logs[0].final_state.time],
                vec![out.logs.iter().map(|l| l.final_state.velocities.as_slice()).collect()],
            )
        };
        write_report_tables(&w, &frame_report(config, &times, &frames)?)?;
        for log in &out.logs {
            for s in &log.snapshots[..log.snapshots.len().saturating_sub(1)] {
                w.snapshot(s, "state")?;
            }
            w.snapshot(&log.final_state, "final")?;
        }
        Ok(())
    })();
    w.finish(outcome)
}

/// Reads a config file and runs `simulate`.
pub fn run(config_path: &Path) -> Result<PathBuf> {
    run_simulate(&SimConfig::from_path(config_path)?)
}

/// `couple`: the configured law against its translate by
/// `partner_shift_velocity`, under shared noise.
pub fn run_couple(config: &SimConfig) -> Result<PathBuf> {
    config.validate()?;
    let mut w = RunWriter::create(config, "couple")?;
    let outcome = (|| -> Result<()> {
        let a = config.initial_spec();
        let b = a.clone().shifted(Vec3::from(config.partner_shift_velocity));
        let r = coupled_simulate(config, &a, &b, &config.coupling_m_list)?;
        let mut rows = Vec::new();
        for (t, time) in r.times.iter().enumerate() {
            for (k, m) in r.m_list.iter().enumerate() {
                rows.push(vec![num(*time), m.to_string(), num(r.u_mean[t][k]), num(r.u_stderr[t][k])]);
            }
        }
        w.csv("coupling.csv", "coupling", &["time", "m", "u_mean", "u_stderr"], &rows)?;
        let (fw, fs) = r.final_w2.map_or((f64::NAN, f64::NAN), |e| (e.value, e.stderr));
        w.csv(
            "coupling_summary.csv",
            "coupling_summary",
            &["u0", "horizon", "final_w2", "final_w2_stderr", "replicas"],
            &[vec![num(r.u0), num(config.horizon_time), num(fw), num(fs), r.replicas.to_string()]],
        )?;
        w.manifest.snapshots.clear();
        Ok(())
    })();
    w.finish(outcome)
}

/// `chaos`: two-particle covariance of `|v|²` at `chaos_probe_time` for every
/// entry of `chaos_n_list`, plus the self-convergence table.
pub fn run_chaos(config: &SimConfig) -> Result<PathBuf> {
    config.validate()?;
    if config.chaos_n_list.len() < 2 {
        return Err(KacError::Config {
            key: "chaos_n_list".into(),
            allowed: "needs at least two particle counts".into(),
        });
    }
    if config.replicas < 8 {
        return Err(KacError::Config {
            key: "replicas".into(),
            allowed: "the chaos covariance needs >= 8 replicas".into(),
        });
    }
    let w = RunWriter::create(config, "chaos")?;
    let outcome = (|| -> Result<()> {
        let mut pools = Vec::new();
        let mut rows = Vec::new();
        for &n in &config.chaos_n_list {
            let cfg = SimConfig {
                n_particles: n,
                horizon_time: config.chaos_probe_time,
                snapshot_stride: 0,
                entropy_neighbors: 1,
                ..config.clone()
            };
            let out = simulate(&cfg)?;
            let reps: Vec<&[Vec3]> = out.logs.iter().map(|l| l.final_state.velocities.as_slice()).collect();
            let cov = chaos_covariance(&reps, ChaosStatistic::SpeedSq)?;
            rows.push(vec![n.to_string(), num(config.chaos_probe_time), num(cov.value), num(cov.stderr)]);
            pools.push((n, reps.concat()));
        }
        w.csv("chaos.csv", "chaos", &["n", "t", "cov", "stderr"], &rows)?;
        let table = convergence_rows(&pools, config.chaos_probe_time, config.seed)?;
        let rows: Vec<Vec<String>> = table
            .iter()
            .map(|r| vec![r.n_small.to_string(), r.n_large.to_string(), num(r.t), num(r.w2), num(r.stderr)])
            .collect();
        w.csv("self_convergence.csv", "self_convergence", &["N_small", "N_large", "t", "w2", "stderr"], &rows)
    })();
    w.finish(outcome)
}

/// Continues the replica stored in `snapshot_path` for `additional_horizon`
/// more time units with the configuration recorded in its run manifest.
pub fn resume(snapshot_path: &Path, additional_horizon: f64) -> Result<PathBuf> {
    resume_with(snapshot_path, additional_horizon, None)
}

/// As [`resume`], optionally with a different configuration. Changing `γ` or
/// the particle count is refused; other keys such as `output_dir` may differ.
pub fn resume_with(snapshot_path: &Path, additional_horizon: f64, config: Option<&SimConfig>) -> Result<PathBuf> {
    let snap = io::read_snapshot(snapshot_path)?;
    let run_dir = snapshot_path
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| KacError::Prerequisite(format!("{} is not inside a run directory", snapshot_path.display())))?;
    let manifest = RunManifest::read(run_dir).map_err(|e| {
        KacError::Prerequisite(format!("cannot read the run manifest next to the snapshot: {e}"))
    })?;
    let recorded = manifest.config.clone();
    let config = config.cloned().unwrap_or_else(|| recorded.clone());
    config.validate()?;
    if !(additional_horizon > 0.0 && additional_horizon.is_finite()) {
        return Err(KacError::Domain(format!("additional horizon must be > 0, got {additional_horizon}")));
    }
    if snap.gamma != recorded.gamma || snap.velocities.len() != recorded.n_particles {
        return Err(KacError::Corrupt {
            path: snapshot_path.to_path_buf(),
            reason: "snapshot header disagrees with its run manifest".into(),
        });
    }
    if config.gamma != snap.gamma {
        return Err(KacError::Domain(format!(
            "physics mismatch: snapshot has gamma = {}, resume config has gamma = {}",
            snap.gamma, config.gamma
        )));
    }
    if config.n_particles != snap.velocities.len() {
        return Err(KacError::Domain(format!(
            "physics mismatch: snapshot has N = {}, resume config has N = {}",
            snap.velocities.len(),
            config.n_particles
        )));
    }
    let rel = snapshot_path
        .strip_prefix(run_dir)
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .unwrap_or_default();
    let (replica, step) = match manifest.snapshots.iter().find(|s| s.path == rel) {
        Some(s) => (s.replica, s.step),
        None => {
            log::warn!("snapshot not listed in its manifest; recovering the step from t/dt, replica 0");
            (0, (snap.time / config.dt_time).round() as u64)
        }
    };
    let start = Ensemble {
        velocities: snap.velocities,
        gamma: snap.gamma,
        time: snap.time,
        lineage: SeedLineage {
            seed: config.seed,
            replica,
            step,
        },
    };
    let extra = SimConfig {
        horizon_time: additional_horizon,
        ..config.clone()
    }
    .n_steps();
    let cfg = SimConfig {
        horizon_time: snap.time + additional_horizon,
        ..config
    };
    let mut w = RunWriter::create(&cfg, "resume")?;
    w.manifest.resumed_from = Some(snapshot_path.display().to_string());
    w.manifest.replica_seeds = vec![replica_seed(cfg.seed, replica)];
    let outcome = (|| -> Result<()> {
        let log = run_replica(&cfg, start, step + extra)?;
        w.csv(
            &format!("conserved_r{:04}.csv", log.replica),
            "conserved_series",
            &CONSERVED_HEADER,
            &conserved_rows(&log),
        )?;
        for s in log.snapshots.iter().skip(1).take(log.snapshots.len().saturating_sub(2)) {
            w.snapshot(s, "state")?;
        }
        w.snapshot(&log.final_state, "final")
    })();
    w.finish(outcome)
}

/// Final snapshot file of `replica` in a run directory.
pub fn final_snapshot(run_dir: &Path, replica: u64) -> Result<PathBuf> {
    let manifest = RunManifest::read(run_dir)?;
    manifest
        .snapshots
        .iter()
        .filter(|s| s.replica == replica && s.path.contains("final_"))
        .max_by_key(|s| s.step)
        .map(|s| run_dir.join(&s.path))
        .ok_or_else(|| KacError::Prerequisite(format!("no final snapshot of replica {replica} in {}", run_dir.display())))
}

/// Text summary of a run directory. Files whose checksum no longer matches
/// the manifest are listed in `checksum_failures`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub text: String,
    pub checksum_failures: Vec<String>,
}

pub fn report(run_dir: &Path) -> Result<RunSummary> {
    let m = RunManifest::read(run_dir)?;
    let mut failures = Vec::new();
    for f in &m.files {
        let p = run_dir.join(&f.path);
        match io::sha256_file(&p) {
            Ok(h) if h == f.sha256 => {}
            _ => failures.push(f.path.clone()),
        }
    }
    let listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    if m.status == RunStatus::Complete {
        for f in inventory(run_dir)? {
            if !listed.contains(&f.path) {
                failures.push(format!("{} (not in manifest)", f.path));
            }
        }
    }
    let c = &m.config;
    let mut text = format!(
        "run {}\n  kind {}  status {:?}  code {}\n  started {}  finished {}\n  gamma {}  N {}  replicas {}  dt {}  T {}  seed {}\n  files {}  snapshots {}\n",
        run_dir.display(),
        m.kind,
        m.status,
        m.code_version,
        m.started,
        m.finished.as_deref().unwrap_or("-"),
        c.gamma,
        c.n_particles,
        c.replicas,
        c.dt_time,
        c.horizon_time,
        c.seed,
        m.files.len(),
        m.snapshots.len(),
    );
    if let Some(e) = &m.error {
        text.push_str(&format!("  error: {e}\n"));
    }
    let moments = run_dir.join("moments.csv");
    if moments.exists() {
        let (h, rows) = io::read_csv(&moments)?;
        let t = io::csv_column(&h, &rows, "time", &moments)?;
        let p = io::csv_column(&h, &rows, "p", &moments)?;
        let v = io::csv_column(&h, &rows, "moment", &moments)?;
        let s = io::csv_column(&h, &rows, "stderr", &moments)?;
        if let Some(&last) = t.last() {
            text.push_str(&format!("  moments at t = {last}:\n"));
            for k in (0..t.len()).filter(|&k| t[k] == last) {
                text.push_str(&format!("    p = {:<4} {:.6e} ± {:.2e}\n", p[k], v[k], s[k]));
            }
        }
    }
    let coupling = run_dir.join("coupling_summary.csv");
    if coupling.exists() {
        let (h, rows) = io::read_csv(&coupling)?;
        let u0 = io::csv_column(&h, &rows, "u0", &coupling)?;
        let fw = io::csv_column(&h, &rows, "final_w2", &coupling)?;
        text.push_str(&format!("  coupling: u0 = {:.6e}, final W2 = {:.6e}\n", u0[0], fw[0]));
    }
    let chaos = run_dir.join("chaos.csv");
    if chaos.exists() {
        let (h, rows) = io::read_csv(&chaos)?;
        let n = io::csv_column(&h, &rows, "n", &chaos)?;
        let cov = io::csv_column(&h, &rows, "cov", &chaos)?;
        for (n, c) in n.iter().zip(&cov) {
            text.push_str(&format!("  chaos: N = {n:<6} cov = {c:.4e}\n"));
        }
    }
    if failures.is_empty() {
        text.push_str("  checksums: all match\n");
    } else {
        text.push_str(&format!("  checksums: {} mismatch(es): {}\n", failures.len(), failures.join(", ")));
    }
    Ok(RunSummary {
        text,
        checksum_failures: failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Kernels,
    Inequalities,
    Conservation,
    Oracle,
    Chaos,
    Stability,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Kernels,
        Suite::Inequalities,
        Suite::Conservation,
        Suite::Oracle,
        Suite::Chaos,
        Suite::Stability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kernels => "kernels",
            Suite::Inequalities => "inequalities",
            Suite::Conservation => "conservation",
            Suite::Oracle => "oracle",
            Suite::Chaos => "chaos",
            Suite::Stability => "stability",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| KacError::Config {
            key: "suite".into(),
            allowed: format!(
                "one of kernels, inequalities, conservation, oracle, chaos, stability; got {name:?}"
            ),
        })
    }
}

/// One pass/fail line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Criterion {
    /// Passes when `measured <= threshold`.
    pub fn at_most(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Criterion {
            name: name.to_string(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.6e}, threshold {:.6e}; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: bool,
    pub criteria: Vec<Criterion>,
}

/// Runs a verification suite. `oracle`, `chaos` and `stability` read the
/// artifacts of an earlier `simulate`, `chaos` or `couple` run.
pub fn verify(suite: Suite, run_dir: Option<&Path>) -> Result<VerifyReport> {
    let criteria = match suite {
        Suite::Kernels => vec![check_povzner(1_000_000, 11), check_sigma_square(20_000, 12)],
        Suite::Inequalities => vec![
            check_ode_comparison(100, 50, 13)?,
            check_weight_bounds(1.0, 1.0, 5, 40, 60)?,
            check_ladder_closed_form(1.0, 1.0, 5, 12)?,
            check_series_threshold()?,
        ],
        Suite::Conservation => vec![check_momentum_run(256, 0.5, 100, 14)?],
        Suite::Oracle => {
            let dir = need_run(run_dir, "simulate", "a gamma = 0 `simulate` run with snapshot_stride > 0")?;
            check_maxwellian_run(&dir)?
        }
        Suite::Chaos => {
            let dir = need_run(run_dir, "chaos", "a `chaos` run")?;
            check_chaos_run(&dir)?
        }
        Suite::Stability => {
            let dir = need_run(run_dir, "couple", "a `couple` run")?;
            check_coupling_run(&dir)?
        }
    };
    Ok(VerifyReport {
        suite,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    })
}

fn need_run(run_dir: Option<&Path>, kind: &str, what: &str) -> Result<PathBuf> {
    let dir = run_dir.ok_or_else(|| {
        KacError::Prerequisite(format!("this suite needs {what}; execute `kaclab {kind} <config>` first and pass --run-dir"))
    })?;
    let m = RunManifest::read(dir).map_err(|_| {
        KacError::Prerequisite(format!("{} has no manifest; execute `kaclab {kind} <config>` first", dir.display()))
    })?;
    if m.kind != kind || m.status != RunStatus::Complete {
        return Err(KacError::Prerequisite(format!(
            "{} holds a {} run with status {:?}; this suite needs a complete `kaclab {kind}` run",
            dir.display(),
            m.kind,
            m.status
        )));
    }
    Ok(dir.to_path_buf())
}

/// Random `(x, y, p, γ)` with `x, y ∈ [0, 100]`, `p ∈ [4, 40]`, `γ ∈ (0, 1]`;
/// counts violations of the sharpened Povzner inequality beyond `1e-9`.
pub fn check_povzner(samples: usize, seed: u64) -> Criterion {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = 100.0 * rng.random::<f64>();
        let y = 100.0 * rng.random::<f64>();
        let p = 4.0 + 36.0 * rng.random::<f64>();
        let g = 1.0 - rng.random::<f64>();
        let s = povzner_sides(x, y, p, g).expect("sampled inside the domain");
        if !s.holds_within(1e-9) {
            violations += 1;
        }
        let scale = s.rhs_scaled.abs().max(1e-300);
        worst = worst.min(s.gap_scaled() / scale);
    }
    Criterion::at_most(
        "povzner",
        violations as f64,
        0.0,
        format!("{samples} samples, most negative relative gap {worst:.3e}"),
    )
}

/// `σσᵀ = A` on random `z` with magnitudes spanning eight decades.
pub fn check_sigma_square(samples: usize, seed: u64) -> Criterion {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let dir = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        if dir.norm() < 1e-6 {
            continue;
        }
        let z = dir.normalize() * 10f64.powf(8.0 * rng.random::<f64>() - 4.0);
        let g = rng.random::<f64>();
        let k = eval_pair_kernels(&z, g).expect("finite z");
        let err = (k.sigma_matrix * k.sigma_matrix.transpose() - k.a_matrix).norm() / k.a_matrix.norm();
        worst = worst.max(err);
    }
    Criterion::at_most("sigma_square", worst, 1e-12, format!("{samples} samples, max relative error"))
}

/// Solutions of the moment ODE stay below the comparison bound.
pub fn check_ode_comparison(sets: usize, probes: usize, seed: u64) -> Result<Criterion> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let grid: Vec<f64> = (0..probes)
        .map(|k| 1e-3 * (1e4f64).powf(k as f64 / (probes - 1) as f64))
        .collect();
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..sets {
        let g = 1.0 - rng.random::<f64>();
        let p = 4.0 + 36.0 * rng.random::<f64>();
        let r0 = 0.5 + 1.5 * rng.random::<f64>();
        let params = MomentOdeParams::for_moment(p, g, r0)?;
        let h0 = 10f64.powf(-2.0 + 8.0 * rng.random::<f64>());
        let traj = moment_ode_solve(&params, h0, &grid)?;
        for (t, h) in grid.iter().zip(&traj.values) {
            let margin = h.ln() - moment_ode_bound_log(&params, *t)?;
            worst = worst.max(margin);
            if margin > 1e-6 {
                violations += 1;
            }
        }
    }
    Ok(Criterion::at_most(
        "ode_comparison",
        violations as f64,
        0.0,
        format!("{sets} parameter sets x {probes} times, largest ln(solution/bound) {worst:.3e}"),
    ))
}

/// The three weight estimates over `m ≤ m_max`, `n ≤ n_max`, partial sums
/// up to `l_max`.
pub fn check_weight_bounds(a: f64, t: f64, m_max: usize, n_max: usize, l_max: usize) -> Result<Criterion> {
    let tol = 1e-9;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for m in 1..=m_max {
        for n in m + 1..=n_max {
            let (f, _) = hierarchy_weights(m, n - 1, a, t)?;
            let (bound, _, _) = weight_bounds(m, n, a, t);
            worst = worst.max(f - bound);
            if f > bound + tol {
                failures.push(format!("tail m={m} n={n}"));
            }
        }
        let (_, f_sum_bound, g_sum_bound) = weight_bounds(m, n_max, a, t);
        for l in m..=l_max {
            let (fs, gs) = hierarchy_weight_sums(m, l, a, t)?;
            worst = worst.max(fs - f_sum_bound).max(gs - g_sum_bound);
            if fs > f_sum_bound + tol {
                failures.push(format!("F sum m={m} L={l}"));
            }
            if gs > g_sum_bound + tol {
                failures.push(format!("G sum m={m} L={l}"));
            }
        }
    }
    Ok(Criterion::at_most(
        "weight_bounds",
        failures.len() as f64,
        0.0,
        format!("largest excess {worst:.3e}; {}", if failures.is_empty() { "none".into() } else { failures.join(", ") }),
    ))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    use statrs::function::factorial::ln_factorial;
    ln_factorial(n as u64) - ln_factorial(k as u64) - ln_factorial((n - k) as u64)
}

/// Ladder values against the negative-binomial law of a pure birth process
/// at rate `a·k` started from `m`:
/// `P(X_t = ℓ) = C(ℓ−1, m−1) e^{−amt} (1 − e^{−at})^{ℓ−m}`, with
/// `G_m^ℓ = P(X_t = ℓ)` and `F_m^ℓ = P(X_t > ℓ)`.
pub fn check_ladder_closed_form(a: f64, t: f64, m_max: usize, l_max: usize) -> Result<Criterion> {
    let q = 1.0 - (-a * t).exp();
    let pmf = |m: usize, l: usize| (ln_choose(l - 1, m - 1) - a * m as f64 * t + (l - m) as f64 * q.ln()).exp();
    let mut worst = 0.0f64;
    for m in 1..=m_max {
        for l in m..=l_max {
            let (f, g) = hierarchy_weights(m, l, a, t)?;
            let tail = 1.0 - (m..=l).map(|k| pmf(m, k)).sum::<f64>();
            worst = worst.max((f - tail).abs()).max((g - pmf(m, l)).abs());
        }
    }
    Ok(Criterion::at_most("ladder_closed_form", worst, 1e-9, "max abs difference to the birth-process law"))
}

/// The exponential series built from saturating moments converges below the
/// threshold and diverges above it.
pub fn check_series_threshold() -> Result<Criterion> {
    let mut wrong = Vec::new();
    for &c in &[0.5, 1.0, 2.0] {
        for &g in &[0.25, 0.5, 1.0] {
            let xs = exp_series_threshold(c, g)?;
            let lm = saturating_series_moments_log(c, g, 3000);
            let below = exp_series_partial_sums(0.9 * xs, &lm)?;
            let above = exp_series_partial_sums(1.1 * xs, &lm)?;
            let (b_half, b_end) = (below[1500], below[3000]);
            if !(b_end.is_finite() && (b_end - b_half).abs() <= 1e-9 * b_end) {
                wrong.push(format!("no convergence at C={c}, γ={g}"));
            }
            let (a_half, a_end) = (above[1500], above[3000]);
            if a_end.is_finite() && a_end <= 1e6 * a_half {
                wrong.push(format!("no divergence at C={c}, γ={g}"));
            }
        }
    }
    Ok(Criterion::at_most(
        "series_threshold",
        wrong.len() as f64,
        0.0,
        if wrong.is_empty() { "converges at 0.9ξ*, diverges at 1.1ξ*".into() } else { wrong.join(", ") },
    ))
}

/// Largest `|P(t) − P(0)| / √(Σ|v|²)` over a fresh run of `steps` steps.
pub fn check_momentum_run(n: usize, gamma: f64, steps: u64, seed: u64) -> Result<Criterion> {
    let cfg = SimConfig {
        gamma,
        n_particles: n,
        seed,
        ..SimConfig::default()
    };
    let mut e = initial_ensemble(&cfg, 0)?;
    let p0 = e.conserved().momentum;
    let scale = e.conserved().energy.sqrt();
    let opts = StepOptions::default();
    let mut worst = 0.0f64;
    for k in 0..steps {
        e = step(&e, &opts, NoiseKey::new(seed, 0, k))?;
        worst = worst.max((e.conserved().momentum - p0).norm() / scale);
    }
    Ok(Criterion::at_most(
        "momentum",
        worst,
        1e-12,
        format!("N={n}, gamma={gamma}, {steps} steps, deviation relative to sqrt(sum |v|^2)"),
    ))
}

fn moment_series(run_dir: &Path, p: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let path = run_dir.join("moments.csv");
    let (h, rows) = io::read_csv(&path)?;
    let t = io::csv_column(&h, &rows, "time", &path)?;
    let ps = io::csv_column(&h, &rows, "p", &path)?;
    let v = io::csv_column(&h, &rows, "moment", &path)?;
    let s = io::csv_column(&h, &rows, "stderr", &path)?;
    let keep: Vec<usize> = (0..t.len()).filter(|&k| ps[k] == p).collect();
    if keep.is_empty() {
        return Err(KacError::Prerequisite(format!(
            "{} has no p = {p} column; rerun with {p} in moment_orders",
            path.display()
        )));
    }
    Ok((
        keep.iter().map(|&k| t[k]).collect(),
        keep.iter().map(|&k| v[k]).collect(),
        keep.iter().map(|&k| s[k]).collect(),
    ))
}

/// Measured `m4(t)` against the closed-form Maxwellian relaxation, and the
/// non-increase of `E|v|^p` for `p ∈ {4, 6, 8}`.
pub fn check_maxwellian_run(run_dir: &Path) -> Result<Vec<Criterion>> {
    let m = RunManifest::read(run_dir)?;
    if m.config.gamma != 0.0 {
        return Err(KacError::Prerequisite(format!(
            "the oracle suite needs a gamma = 0 run, {} has gamma = {}",
            run_dir.display(),
            m.config.gamma
        )));
    }
    let (t, m2, _) = moment_series(run_dir, 2.0)?;
    let (_, m4, s4) = moment_series(run_dir, 4.0)?;
    if t.len() < 2 {
        return Err(KacError::Prerequisite("the run stored fewer than two frames; set snapshot_stride > 0".into()));
    }
    Ok(vec![maxwellian_m4_criterion(&t, m2[0], &m4, &s4)?, {
        let mut series = Vec::new();
        for p in [4.0, 6.0, 8.0] {
            if let Ok(s) = moment_series(run_dir, p) {
                series.push((p, s.1, s.2));
            }
        }
        moment_monotonicity_criterion(&series)
    }])
}

/// `|m4(t) − oracle(t)| ≤ max(5% oracle, 3 stderr)` at every frame.
pub fn maxwellian_m4_criterion(times: &[f64], m2_0: f64, m4: &[f64], m4_stderr: &[f64]) -> Result<Criterion> {
    let mut worst = 0.0f64;
    for k in 0..times.len() {
        let oracle = maxwellian_m4_trajectory(m2_0, m4[0], times[k])?;
        let allowed = (0.05 * oracle).max(3.0 * m4_stderr[k]);
        worst = worst.max((m4[k] - oracle).abs() / allowed);
    }
    Ok(Criterion::at_most(
        "maxwellian_m4",
        worst,
        1.0,
        format!("{} frames, error in units of max(5%, 3 stderr)", times.len()),
    ))
}

/// `sup_t m_p(t) ≤ m_p(0)(1 + 3 relative stderr)` for every supplied order.
pub fn moment_monotonicity_criterion(series: &[(f64, Vec<f64>, Vec<f64>)]) -> Criterion {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (p, v, s) in series {
        let allowed = v[0] * (1.0 + 3.0 * s[0] / v[0]);
        let sup = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(sup / allowed);
        detail.push(format!("p={p}: sup/initial {:.4}", sup / v[0]));
    }
    Criterion::at_most("moment_monotonicity", worst, 1.0, detail.join(", "))
}

/// Chaos covariance slope against `N` and the self-convergence column.
pub fn check_chaos_run(run_dir: &Path) -> Result<Vec<Criterion>> {
    let path = run_dir.join("chaos.csv");
    let (h, rows) = io::read_csv(&path)?;
    let n = io::csv_column(&h, &rows, "n", &path)?;
    let cov = io::csv_column(&h, &rows, "cov", &path)?;
    let table = run_dir.join("self_convergence.csv");
    let (h2, rows2) = io::read_csv(&table)?;
    let w2 = io::csv_column(&h2, &rows2, "w2", &table)?;
    let se = io::csv_column(&h2, &rows2, "stderr", &table)?;
    Ok(vec![chaos_slope_criterion(&n, &cov)?, convergence_column_criterion(&w2, &se)])
}

/// Log-log slope of `|cov|` against `N` within `−1 ± 0.3`.
pub fn chaos_slope_criterion(n: &[f64], cov: &[f64]) -> Result<Criterion> {
    let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = cov.iter().map(|v| v.abs().ln()).collect();
    let fit = ols(&x, &y)?;
    Ok(Criterion::at_most(
        "chaos_slope",
        (fit.slope + 1.0).abs(),
        0.3,
        format!("slope {:.3} ± {:.3}", fit.slope, fit.slope_stderr),
    ))
}

/// Each row of the self-convergence column is at most the previous one plus
/// three combined standard errors.
pub fn convergence_column_criterion(w2: &[f64], stderr: &[f64]) -> Criterion {
    let mut worst = f64::NEG_INFINITY;
    for k in 1..w2.len() {
        let slack = 3.0 * (stderr[k].powi(2) + stderr[k - 1].powi(2)).sqrt();
        worst = worst.max(w2[k] - w2[k - 1] - slack);
    }
    Criterion::at_most(
        "self_convergence",
        worst.max(0.0),
        0.0,
        format!("w2 column {w2:.4?}"),
    )
}

/// Structural checks on a coupled run: `u_m(0) = m u0`, monotonicity in `m`
/// within three standard errors, and `W2 ≤ √u_1` at the horizon.
pub fn check_coupling_run(run_dir: &Path) -> Result<Vec<Criterion>> {
    let path = run_dir.join("coupling.csv");
    let (h, rows) = io::read_csv(&path)?;
    let t = io::csv_column(&h, &rows, "time", &path)?;
    let m = io::csv_column(&h, &rows, "m", &path)?;
    let u = io::csv_column(&h, &rows, "u_mean", &path)?;
    let s = io::csv_column(&h, &rows, "u_stderr", &path)?;
    let summary = run_dir.join("coupling_summary.csv");
    let (h2, rows2) = io::read_csv(&summary)?;
    let u0 = io::csv_column(&h2, &rows2, "u0", &summary)?[0];
    let fw = io::csv_column(&h2, &rows2, "final_w2", &summary)?[0];
    let mut start_err = 0.0f64;
    let mut mono = 0.0f64;
    let t_last = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut u1_last = f64::NAN;
    for k in 0..t.len() {
        if t[k] == 0.0 {
            start_err = start_err.max((u[k] - m[k] * u0).abs() / (m[k] * u0).max(1e-300));
        }
        if k > 0 && t[k] == t[k - 1] && m[k] > m[k - 1] {
            mono = mono.max(u[k - 1] - u[k] - 3.0 * (s[k].powi(2) + s[k - 1].powi(2)).sqrt());
        }
        if t[k] == t_last && m[k] == 1.0 {
            u1_last = u[k];
        }
    }
    Ok(vec![
        Criterion::at_most("coupling_start", start_err, 1e-9, "relative error of u_m(0) against m u0"),
        Criterion::at_most("coupling_monotone_in_m", mono.max(0.0), 0.0, "largest decrease in m beyond 3 stderr"),
        Criterion::at_most(
            "w2_below_coupling",
            fw,
            u1_last.sqrt() * (1.0 + 1e-12),
            "optimal transport cannot exceed the synchronous coupling",
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> SimConfig {
        SimConfig {
            gamma: 0.5,
            n_particles: 16,
            horizon_time: 0.05,
            replicas: 2,
            snapshot_stride: 2,
            output_dir: dir.to_path_buf(),
            ..SimConfig::default()
        }
    }

    #[test]
    fn manifest_lists_every_file() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = run_simulate(&small(tmp.path())).unwrap();
        let m = RunManifest::read(&dir).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        assert_eq!(m.replica_seeds.len(), 2);
        let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert!(paths.contains(&"conserved_r0000.csv"));
        assert!(paths.contains(&"moments.csv"));
        for s in &m.snapshots {
            assert!(paths.contains(&s.path.as_str()));
        }
        assert!(report(&dir).unwrap().checksum_failures.is_empty());
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(matches!(Suite::parse("nope"), Err(KacError::Config { .. })));
    }

    #[test]
    fn run_suites_need_artifacts() {
        for s in [Suite::Oracle, Suite::Chaos, Suite::Stability] {
            assert!(matches!(verify(s, None), Err(KacError::Prerequisite(_))));
        }
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(verify(Suite::Oracle, Some(tmp.path())), Err(KacError::Prerequisite(_))));
    }

    #[test]
    fn ladder_matches_birth_process() {
        assert!(check_ladder_closed_form(1.0, 1.0, 3, 8).unwrap().passed);
        assert!(check_ladder_closed_form(0.5, 2.0, 2, 6).unwrap().passed);
    }

    #[test]
    fn monotonicity_criterion_flags_growth() {
        let flat = moment_monotonicity_criterion(&[(4.0, vec![1.0, 0.9, 0.95], vec![0.01; 3])]);
        assert!(flat.passed);
        let grows = moment_monotonicity_criterion(&[(4.0, vec![1.0, 1.2], vec![0.01; 2])]);
        assert!(!grows.passed);
    }
}
