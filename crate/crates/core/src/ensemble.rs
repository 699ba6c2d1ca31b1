//! Particle states and compactly supported initial data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::check_gamma;
use crate::noise::{domain, keyed_rng, replica_seed};
use crate::{KacError, Result, Vec3};

/// Deterministic record of where an ensemble sits in the noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub seed: u64,
    pub replica: u64,
    /// Number of completed steps; the next step draws noise keyed by this index.
    pub step: u64,
}

/// N velocities plus the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub velocities: Vec<Vec3>,
    pub gamma: f64,
    pub time: f64,
    pub lineage: SeedLineage,
}

impl Ensemble {
    pub fn new(velocities: Vec<Vec3>, gamma: f64, lineage: SeedLineage) -> Result<Self> {
        if velocities.len() < 2 {
            return Err(KacError::Domain(format!(
                "an ensemble needs at least 2 particles, got {}",
                velocities.len()
            )));
        }
        check_gamma(gamma)?;
        if let Some(k) = velocities.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(KacError::Input(format!("velocity {k} is not finite")));
        }
        Ok(Ensemble {
            velocities,
            gamma,
            time: 0.0,
            lineage,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn replica_id(&self) -> u64 {
        self.lineage.replica
    }

    pub fn conserved(&self) -> Conserved {
        conserved_quantities(self)
    }

    /// Applies `perm` to particle labels: particle `k` of the result is
    /// particle `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Ensemble {
        Ensemble {
            velocities: perm.iter().map(|&k| self.velocities[k]).collect(),
            ..self.clone()
        }
    }
}

/// Total momentum and total kinetic energy `Σ|v|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conserved {
    pub momentum: Vec3,
    pub energy: f64,
}

pub fn conserved_quantities(e: &Ensemble) -> Conserved {
    conserved_of(&e.velocities)
}

pub(crate) fn conserved_of(vs: &[Vec3]) -> Conserved {
    let mut momentum = Vec3::zeros();
    let mut energy = 0.0;
    for v in vs {
        momentum += v;
        energy += v.norm_squared();
    }
    Conserved { momentum, energy }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    UniformBall,
    /// Ball at `center` with probability `mixture_weight`, otherwise the ball
    /// at `center + offset`.
    TwoBallMixture,
    /// Empirical law of the points in a text file. A file with exactly `n`
    /// points is used verbatim; otherwise `n` points are drawn with replacement.
    PointCloudFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub kind: InitialKind,
    pub r0: f64,
    pub offset: Vec3,
    pub mixture_weight: f64,
    /// Translation applied to every sample (zero in the standard setting).
    pub center: Vec3,
}

impl InitialSpec {
    pub fn uniform_ball(r0: f64) -> Self {
        InitialSpec {
            kind: InitialKind::UniformBall,
            r0,
            offset: Vec3::zeros(),
            mixture_weight: 1.0,
            center: Vec3::zeros(),
        }
    }

    pub fn two_ball_mixture(r0: f64, offset: Vec3, mixture_weight: f64) -> Self {
        InitialSpec {
            kind: InitialKind::TwoBallMixture,
            r0,
            offset,
            mixture_weight,
            center: Vec3::zeros(),
        }
    }

    pub fn shifted(mut self, shift: Vec3) -> Self {
        self.center += shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(KacError::Domain(format!("r0 must be positive, got {}", self.r0)));
        }
        if !(0.0..=1.0).contains(&self.mixture_weight) {
            return Err(KacError::Domain(format!(
                "mixture_weight must lie in [0, 1], got {}",
                self.mixture_weight
            )));
        }
        if !self.offset.iter().chain(self.center.iter()).all(|c| c.is_finite()) {
            return Err(KacError::Input("offset and center must be finite".into()));
        }
        Ok(())
    }
}

fn uniform_in_ball<R: Rng>(rng: &mut R, r0: f64) -> Vec3 {
    let radius = r0 * rng.random::<f64>().cbrt();
    let cos_theta: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    Vec3::new(
        radius * sin_theta * phi.cos(),
        radius * sin_theta * phi.sin(),
        radius * cos_theta,
    )
}

/// Draws `n` i.i.d. velocities for replica 0 of `seed`.
pub fn sample_initial(spec: &InitialSpec, n: usize, seed: u64) -> Result<Ensemble> {
    sample_initial_replica(spec, n, seed, 0)
}

/// Draws `n` i.i.d. velocities for replica `replica` of `seed`.
///
/// The ball point and the mixture component come from separate streams, so a
/// mixture with weight 1 reproduces the uniform ball bit for bit.
pub fn sample_initial_replica(
    spec: &InitialSpec,
    n: usize,
    seed: u64,
    replica: u64,
) -> Result<Ensemble> {
    spec.validate()?;
    if n < 2 {
        return Err(KacError::Domain(format!("n must be at least 2, got {n}")));
    }
    let rseed = replica_seed(seed, replica);
    let velocities = match &spec.kind {
        InitialKind::UniformBall => {
            let mut rng = keyed_rng(&[domain::INITIAL, rseed]);
            (0..n)
                .map(|_| spec.center + uniform_in_ball(&mut rng, spec.r0))
                .collect()
        }
        InitialKind::TwoBallMixture => {
            let mut rng = keyed_rng(&[domain::INITIAL, rseed]);
            let mut pick = keyed_rng(&[domain::MIXTURE, rseed]);
            (0..n)
                .map(|_| {
                    let p = spec.center + uniform_in_ball(&mut rng, spec.r0);
                    if pick.random::<f64>() < spec.mixture_weight {
                        p
                    } else {
                        p + spec.offset
                    }
                })
                .collect()
        }
        InitialKind::PointCloudFile(path) => {
            let cloud = read_point_cloud(path)?;
            if cloud.is_empty() {
                return Err(KacError::Corrupt {
                    path: path.clone(),
                    reason: "point cloud is empty".into(),
                });
            }
            if cloud.len() == n {
                cloud.into_iter().map(|v| v + spec.center).collect()
            } else {
                let mut rng = keyed_rng(&[domain::INITIAL, rseed]);
                (0..n)
                    .map(|_| cloud[rng.random_range(0..cloud.len())] + spec.center)
                    .collect()
            }
        }
    };
    Ensemble::new(
        velocities,
        0.0,
        SeedLineage {
            seed,
            replica,
            step: 0,
        },
    )
}

/// Reads one velocity per line, three whitespace-separated decimals.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_point_cloud(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path).map_err(|e| KacError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| KacError::Corrupt {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
        if fields.len() != 3 || !fields.iter().all(|x| x.is_finite()) {
            return Err(KacError::Corrupt {
                path: path.to_path_buf(),
                reason: format!("line {}: expected three finite fields", lineno + 1),
            });
        }
        out.push(Vec3::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn ball_support_and_determinism() {
        let spec = InitialSpec::uniform_ball(1.0);
        let e = sample_initial(&spec, 1000, 7).unwrap();
        assert!(e.velocities.iter().all(|v| v.norm() <= 1.0));
        let again = sample_initial(&spec, 1000, 7).unwrap();
        assert_eq!(e, again);
        let other = sample_initial_replica(&spec, 1000, 7, 1).unwrap();
        assert_ne!(e.velocities, other.velocities);
        let c = e.conserved();
        assert!(c.energy / 1000.0 <= 1.0);
    }

    #[test]
    fn ball_moments_match_closed_form() {
        // ∫_{|v|<1} |v|² dv / |B| = 3/5
        let n = 100_000;
        let e = sample_initial(&InitialSpec::uniform_ball(1.0), n, 3).unwrap();
        let sq: Vec<f64> = e.velocities.iter().map(|v| v.norm_squared()).collect();
        let mean_sq = sq.iter().sum::<f64>() / n as f64;
        let var_sq = sq.iter().map(|x| (x - mean_sq).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean_sq - 0.6).abs() <= 3.0 * (var_sq / n as f64).sqrt());
        let mean = e.velocities.iter().fold(Vec3::zeros(), |a, v| a + v) / n as f64;
        // each component has variance 1/5
        let se = (0.2 / n as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() <= 3.0 * se));
    }

    #[test]
    fn unit_weight_mixture_is_the_ball() {
        let ball = InitialSpec::uniform_ball(1.5);
        let mix = InitialSpec::two_ball_mixture(1.5, Vec3::new(4.0, 0.0, 0.0), 1.0);
        assert_eq!(
            sample_initial(&ball, 300, 9).unwrap(),
            sample_initial(&mix, 300, 9).unwrap()
        );
    }

    #[test]
    fn mixture_support() {
        let off = Vec3::new(5.0, 0.0, 0.0);
        let mix = InitialSpec::two_ball_mixture(1.0, off, 0.3);
        let e = sample_initial(&mix, 2000, 1).unwrap();
        let far = e.velocities.iter().filter(|v| (*v - off).norm() <= 1.0).count();
        assert!(e
            .velocities
            .iter()
            .all(|v| v.norm() <= 1.0 || (v - off).norm() <= 1.0));
        assert!((far as f64 / 2000.0 - 0.7).abs() < 0.05);
    }

    #[test]
    fn conserved_examples() {
        let lin = SeedLineage { seed: 0, replica: 0, step: 0 };
        let e = Ensemble::new(vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], 0.5, lin)
            .unwrap();
        let c = conserved_quantities(&e);
        assert_eq!(c.momentum, Vec3::zeros());
        assert_eq!(c.energy, 2.0);
        let z = Ensemble::new(vec![Vec3::zeros(); 4], 0.5, lin).unwrap();
        assert_eq!(conserved_quantities(&z), Conserved { momentum: Vec3::zeros(), energy: 0.0 });
    }

    #[test]
    fn errors() {
        assert!(matches!(
            sample_initial(&InitialSpec::uniform_ball(0.0), 10, 1),
            Err(KacError::Domain(_))
        ));
        assert!(matches!(
            sample_initial(&InitialSpec::uniform_ball(1.0), 1, 1),
            Err(KacError::Domain(_))
        ));
        let missing = InitialSpec {
            kind: InitialKind::PointCloudFile("/nonexistent/cloud.txt".into()),
            ..InitialSpec::uniform_ball(1.0)
        };
        match sample_initial(&missing, 10, 1) {
            Err(KacError::Io { path, .. }) => assert!(path.ends_with("cloud.txt")),
            other => panic!("expected I/O error, got {other:?}"),
        }
    }

    #[test]
    fn point_cloud_roundtrip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# velocities").unwrap();
        writeln!(f, "0.1 0.2 0.3").unwrap();
        writeln!(f, "-1 0\t2.5").unwrap();
        writeln!(f, "0 0 0").unwrap();
        let spec = InitialSpec {
            kind: InitialKind::PointCloudFile(f.path().to_path_buf()),
            ..InitialSpec::uniform_ball(1.0)
        };
        let e = sample_initial(&spec, 3, 0).unwrap();
        assert_eq!(e.velocities[1], Vec3::new(-1.0, 0.0, 2.5));
        let resampled = sample_initial(&spec, 10, 0).unwrap();
        assert_eq!(resampled.len(), 10);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "1 2").unwrap();
        assert!(matches!(read_point_cloud(bad.path()), Err(KacError::Corrupt { .. })));
    }
}
