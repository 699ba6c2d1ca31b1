//! Run configuration.
//!
//! Configs are flat `key = value` files (TOML syntax, no tables). Key names
//! carry their units, e.g. `dt_time` or `r0_velocity`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{InitialKind, InitialSpec};
use crate::integrator::StepOptions;
use crate::{KacError, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub gamma: f64,
    pub n_particles: usize,
    pub r0_velocity: f64,
    pub dt_time: f64,
    pub horizon_time: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Steps between stored ensembles; 0 stores none.
    pub snapshot_stride: u64,
    /// Steps between entries of the conserved-quantity series.
    pub log_stride: u64,
    pub energy_projection: bool,
    pub noise: bool,
    pub dt_adaptive_cap_velocity: f64,
    pub initial_kind: String,
    pub initial_offset_velocity: [f64; 3],
    pub initial_center_velocity: [f64; 3],
    pub mixture_weight: f64,
    pub point_cloud_path: Option<PathBuf>,
    pub moment_orders: Vec<f64>,
    /// Exponential-moment strengths; empty selects a quarter of the series
    /// threshold implied by the fitted moment constant.
    pub exp_moment_xi: Vec<f64>,
    pub entropy_neighbors: usize,
    /// Translation of the partner law used by `couple`.
    pub partner_shift_velocity: [f64; 3],
    pub coupling_m_list: Vec<usize>,
    pub chaos_n_list: Vec<usize>,
    pub chaos_probe_time: f64,
    pub output_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gamma: 0.5,
            n_particles: 256,
            r0_velocity: 1.0,
            dt_time: 0.01,
            horizon_time: 1.0,
            replicas: 1,
            seed: 1,
            snapshot_stride: 0,
            log_stride: 1,
            energy_projection: false,
            noise: true,
            dt_adaptive_cap_velocity: 0.5,
            initial_kind: "uniform_ball".into(),
            initial_offset_velocity: [0.0; 3],
            initial_center_velocity: [0.0; 3],
            mixture_weight: 1.0,
            point_cloud_path: None,
            moment_orders: vec![2.0, 4.0, 6.0, 8.0],
            exp_moment_xi: Vec::new(),
            entropy_neighbors: 4,
            partner_shift_velocity: [0.1, 0.0, 0.0],
            coupling_m_list: vec![1, 2, 3],
            chaos_n_list: vec![128, 256, 512, 1024],
            chaos_probe_time: 0.5,
            output_dir: PathBuf::from("runs"),
        }
    }
}

const KEYS: &[&str] = &[
    "gamma",
    "n_particles",
    "r0_velocity",
    "dt_time",
    "horizon_time",
    "replicas",
    "seed",
    "snapshot_stride",
    "log_stride",
    "energy_projection",
    "noise",
    "dt_adaptive_cap_velocity",
    "initial_kind",
    "initial_offset_velocity",
    "initial_center_velocity",
    "mixture_weight",
    "point_cloud_path",
    "moment_orders",
    "exp_moment_xi",
    "entropy_neighbors",
    "partner_shift_velocity",
    "coupling_m_list",
    "chaos_n_list",
    "chaos_probe_time",
    "output_dir",
];

fn bad(key: &str, allowed: impl Into<String>) -> KacError {
    KacError::Config {
        key: key.into(),
        allowed: allowed.into(),
    }
}

impl SimConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KacError::io(path, e))?;
        let mut cfg = Self::from_str(&text)?;
        // relative point-cloud paths resolve against the config's directory
        if let (Some(p), Some(dir)) = (cfg.point_cloud_path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad("<syntax>", e.to_string()))?;
        for (key, value) in &table {
            if !KEYS.contains(&key.as_str()) {
                return Err(bad(key, format!("unknown key; allowed keys are {}", KEYS.join(", "))));
            }
            if value.is_table() {
                return Err(bad(key, "nested tables are not allowed; use flat keys"));
            }
        }
        let cfg: SimConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad("<value>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(bad("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        if self.n_particles < 2 {
            return Err(bad("n_particles", format!("must be >= 2, got {}", self.n_particles)));
        }
        if !(self.r0_velocity > 0.0 && self.r0_velocity.is_finite()) {
            return Err(bad("r0_velocity", format!("must be > 0, got {}", self.r0_velocity)));
        }
        if !(self.dt_time > 0.0 && self.dt_time.is_finite()) {
            return Err(bad("dt_time", format!("must be > 0, got {}", self.dt_time)));
        }
        if !(self.horizon_time > 0.0 && self.horizon_time.is_finite()) {
            return Err(bad("horizon_time", format!("must be > 0, got {}", self.horizon_time)));
        }
        if self.replicas < 1 {
            return Err(bad("replicas", "must be >= 1"));
        }
        if self.log_stride < 1 {
            return Err(bad("log_stride", "must be >= 1"));
        }
        if !(self.dt_adaptive_cap_velocity > 0.0) {
            return Err(bad("dt_adaptive_cap_velocity", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.mixture_weight) {
            return Err(bad("mixture_weight", "must lie in [0, 1]"));
        }
        match self.initial_kind.as_str() {
            "uniform_ball" | "two_ball_mixture" => {}
            "point_cloud_file" => {
                if self.point_cloud_path.is_none() {
                    return Err(bad(
                        "point_cloud_path",
                        "required when initial_kind = \"point_cloud_file\"",
                    ));
                }
            }
            other => {
                return Err(bad(
                    "initial_kind",
                    format!("must be one of uniform_ball, two_ball_mixture, point_cloud_file; got {other:?}"),
                ))
            }
        }
        if self.moment_orders.iter().any(|&p| !(p >= 2.0)) {
            return Err(bad("moment_orders", "every order must be >= 2"));
        }
        if self.exp_moment_xi.iter().any(|&x| !(x > 0.0)) {
            return Err(bad("exp_moment_xi", "every value must be > 0"));
        }
        if self.entropy_neighbors < 1 || self.entropy_neighbors >= self.n_particles * self.replicas {
            return Err(bad("entropy_neighbors", "must satisfy 1 <= k < number of pooled samples"));
        }
        if self
            .coupling_m_list
            .iter()
            .any(|&m| m < 1 || m > self.n_particles)
        {
            return Err(bad("coupling_m_list", format!("entries must lie in 1..={}", self.n_particles)));
        }
        if self.chaos_n_list.iter().any(|&n| n < 2) || self.chaos_n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("chaos_n_list", "must be strictly increasing with entries >= 2"));
        }
        if !(self.chaos_probe_time >= 0.0) {
            return Err(bad("chaos_probe_time", "must be >= 0"));
        }
        Ok(())
    }

    pub fn initial_spec(&self) -> InitialSpec {
        let kind = match self.initial_kind.as_str() {
            "two_ball_mixture" => InitialKind::TwoBallMixture,
            "point_cloud_file" => {
                InitialKind::PointCloudFile(self.point_cloud_path.clone().unwrap_or_default())
            }
            _ => InitialKind::UniformBall,
        };
        InitialSpec {
            kind,
            r0: self.r0_velocity,
            offset: Vec3::from(self.initial_offset_velocity),
            mixture_weight: self.mixture_weight,
            center: Vec3::from(self.initial_center_velocity),
        }
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            dt: self.dt_time,
            energy_projection: self.energy_projection,
            dt_adaptive_cap: self.dt_adaptive_cap_velocity,
            noise: self.noise,
            ..StepOptions::default()
        }
    }

    /// Number of steps needed to cover the horizon, `⌈T/dt⌉`.
    pub fn n_steps(&self) -> u64 {
        let ratio = self.horizon_time / self.dt_time;
        // guard against 1.0000000000000002-style overshoot
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            rounded as u64
        } else {
            ratio.ceil() as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = SimConfig::from_str("gamma = 0.5\nn_particles = 64\nhorizon_time = 0.1\n").unwrap();
        assert_eq!(cfg.n_particles, 64);
        assert_eq!(cfg.n_steps(), 10);
        let back = SimConfig::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values_naming_the_key() {
        for (text, key) in [
            ("dt_time = 0.0", "dt_time"),
            ("dt_time = -1.0", "dt_time"),
            ("gamma = 1.5", "gamma"),
            ("n_particles = 1", "n_particles"),
            ("initial_kind = \"cube\"", "initial_kind"),
            ("frobnicate = 3", "frobnicate"),
        ] {
            match SimConfig::from_str(text) {
                Err(KacError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_nesting() {
        assert!(matches!(
            SimConfig::from_str("[physics]\ngamma = 0.5\n"),
            Err(KacError::Config { .. })
        ));
    }

    #[test]
    fn step_count_rounds_sensibly() {
        let mut cfg = SimConfig { dt_time: 0.1, horizon_time: 0.3, ..SimConfig::default() };
        assert_eq!(cfg.n_steps(), 3);
        cfg.horizon_time = 0.35;
        assert_eq!(cfg.n_steps(), 4);
    }
}
