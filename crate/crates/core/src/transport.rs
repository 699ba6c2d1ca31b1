//! Wasserstein-2 distances between uniform empirical measures.

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::noise::{domain, keyed_rng};
use crate::stats::{mean_stderr, Estimate};
use crate::{KacError, Result, Vec3};

/// Largest point count accepted by the exact solver.
pub const EXACT_CAP: usize = 4096;
/// Up to this size optimal assignments are made lexicographically minimal.
const LEX_TIE_BREAK_MAX: usize = 8;
const TIE_TOL: f64 = 1e-12;

/// `k` points in `R^dim`, each of weight `1/k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl EmpiricalCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(KacError::Domain(format!(
                "a cloud needs k >= 1 points of dimension {dim}, got {} coordinates",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(KacError::Input("cloud contains non-finite coordinates".into()));
        }
        Ok(EmpiricalCloud { dim, coords })
    }

    pub fn from_vec3(points: &[Vec3]) -> Result<Self> {
        Self::new(3, points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
    }

    /// Concatenates consecutive `m`-tuples of velocities into `3m`-vectors.
    pub fn from_tuples(points: &[Vec3], m: usize) -> Result<Self> {
        if m == 0 || points.len() < m {
            return Err(KacError::Domain(format!("cannot form {m}-tuples from {} points", points.len())));
        }
        let k = points.len() / m;
        Self::new(3 * m, points[..k * m].iter().flat_map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        EmpiricalCloud {
            dim: self.dim,
            coords: self.coords.iter().map(|c| c * lambda).collect(),
        }
    }

    fn sq_dist(&self, i: usize, other: &EmpiricalCloud, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(other.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Minimum-cost perfect assignment for the cost `cost(i, j)` on a `k × k`
/// grid by shortest augmenting paths with dual potentials. Returns `π` with
/// row `i` assigned to column `π[i]`.
pub fn solve_assignment(k: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let inf = f64::INFINITY;
    // 1-based arrays, index 0 is the virtual start column
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    let mut minv = vec![inf; k + 1];
    let mut used = vec![false; k + 1];
    for i in 1..=k {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; k];
    for j in 1..=k {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

/// First permutation in lexicographic order whose cost is within `target`.
fn lexicographic_optimum(k: usize, cost: &dyn Fn(usize, usize) -> f64, target: f64) -> Option<Vec<usize>> {
    fn dfs(
        row: usize,
        k: usize,
        cost: &dyn Fn(usize, usize) -> f64,
        target: f64,
        acc: f64,
        used: &mut [bool],
        perm: &mut Vec<usize>,
    ) -> bool {
        if row == k {
            return acc <= target;
        }
        for j in 0..k {
            if used[j] {
                continue;
            }
            let c = acc + cost(row, j);
            if c > target {
                continue;
            }
            used[j] = true;
            perm.push(j);
            if dfs(row + 1, k, cost, target, c, used, perm) {
                return true;
            }
            perm.pop();
            used[j] = false;
        }
        false
    }
    let mut perm = Vec::with_capacity(k);
    dfs(0, k, cost, target, 0.0, &mut vec![false; k], &mut perm).then_some(perm)
}

fn assignment_cost(perm: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum()
}

fn exact_pairing(a: &EmpiricalCloud, b: &EmpiricalCloud) -> Vec<usize> {
    let k = a.len();
    let cost = |i: usize, j: usize| a.sq_dist(i, b, j);
    let perm = solve_assignment(k, cost);
    if k <= LEX_TIE_BREAK_MAX {
        let best = assignment_cost(&perm, &cost);
        let target = best + TIE_TOL * best.max(1.0);
        if let Some(lex) = lexicographic_optimum(k, &cost, target) {
            return lex;
        }
    }
    perm
}

/// Pairs by rank of the projection onto the mean-displacement axis.
fn projected_pairing(a: &EmpiricalCloud, b: &EmpiricalCloud) -> Vec<usize> {
    let d = a.dim();
    let k = a.len();
    let mean = |c: &EmpiricalCloud| -> Vec<f64> {
        (0..d).map(|t| (0..k).map(|i| c.point(i)[t]).sum::<f64>() / k as f64).collect()
    };
    let (ma, mb) = (mean(a), mean(b));
    let mut axis: Vec<f64> = mb.iter().zip(&ma).map(|(x, y)| x - y).collect();
    let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        axis.iter_mut().for_each(|x| *x /= norm);
    } else {
        axis = (0..d).map(|t| if t == 0 { 1.0 } else { 0.0 }).collect();
    }
    let proj = |c: &EmpiricalCloud, i: usize| c.point(i).iter().zip(&axis).map(|(x, y)| x * y).sum::<f64>();
    let mut ia: Vec<usize> = (0..k).collect();
    let mut ib: Vec<usize> = (0..k).collect();
    ia.sort_by(|&x, &y| proj(a, x).total_cmp(&proj(a, y)).then(x.cmp(&y)));
    ib.sort_by(|&x, &y| proj(b, x).total_cmp(&proj(b, y)).then(x.cmp(&y)));
    let mut perm = vec![0; k];
    for (&i, &j) in ia.iter().zip(&ib) {
        perm[i] = j;
    }
    perm
}

/// Permutation minimising `Σ|a_i − b_{π(i)}|²`.
///
/// Exact for up to [`EXACT_CAP`] points, with ties among optimal assignments
/// broken towards the lexicographically smallest permutation for up to eight
/// points. Larger inputs are paired by sorted projection along the
/// mean-displacement axis.
pub fn optimal_pairing(a: &[Vec3], b: &[Vec3]) -> Result<Vec<usize>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(KacError::Domain(format!(
            "pairing needs equal non-zero counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ca, cb) = (EmpiricalCloud::from_vec3(a)?, EmpiricalCloud::from_vec3(b)?);
    Ok(if a.len() <= EXACT_CAP {
        exact_pairing(&ca, &cb)
    } else {
        projected_pairing(&ca, &cb)
    })
}

/// Exact `W2` between two clouds of equal size `k ≤ EXACT_CAP`.
pub fn w2_exact(a: &EmpiricalCloud, b: &EmpiricalCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(KacError::Domain(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    if a.len() != b.len() {
        return Err(KacError::Domain(format!(
            "exact W2 needs equal point counts, got {} and {}; resample first",
            a.len(),
            b.len()
        )));
    }
    let k = a.len();
    if k > EXACT_CAP {
        return Err(KacError::Domain(format!(
            "{k} points exceed the exact-solver cap of {EXACT_CAP}; use w2_sliced"
        )));
    }
    let perm = solve_assignment(k, |i, j| a.sq_dist(i, b, j));
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| a.sq_dist(i, b, j)).sum();
    Ok((total / k as f64).max(0.0).sqrt())
}

/// Squared 1-D W2 between the empirical quantile functions of `x` and `y`.
fn w2_sq_1d(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    if x.len() == y.len() {
        return x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < x.len() && j < y.len() {
        let next = ((i + 1) as f64 / nx).min((j + 1) as f64 / ny);
        total += (next - u) * (x[i] - y[j]).powi(2);
        u = next;
        if (i + 1) as f64 / nx <= next {
            i += 1;
        }
        if (j + 1) as f64 / ny <= next {
            j += 1;
        }
    }
    total
}

/// Sliced `W2`: root of the mean over random unit directions of the squared
/// 1-D distance between projected samples. The standard error is propagated
/// from the spread over directions.
pub fn w2_sliced(a: &EmpiricalCloud, b: &EmpiricalCloud, n_projections: usize, seed: u64) -> Result<Estimate> {
    if n_projections == 0 {
        return Err(KacError::Domain("n_projections must be >= 1".into()));
    }
    if a.dim() != b.dim() {
        return Err(KacError::Domain(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let d = a.dim();
    let mut rng = keyed_rng(&[domain::PROJECTIONS, seed]);
    let mut sq = Vec::with_capacity(n_projections);
    for _ in 0..n_projections {
        let theta = loop {
            let t: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break t.into_iter().map(|x| x / n).collect::<Vec<f64>>();
            }
        };
        let proj = |c: &EmpiricalCloud| -> Vec<f64> {
            (0..c.len())
                .map(|i| c.point(i).iter().zip(&theta).map(|(x, y)| x * y).sum())
                .collect()
        };
        sq.push(w2_sq_1d(proj(a), proj(b)));
    }
    let m = mean_stderr(&sq)?;
    let value = m.value.max(0.0).sqrt();
    let stderr = if n_projections < 2 {
        f64::INFINITY
    } else if value > 0.0 {
        m.stderr / (2.0 * value)
    } else {
        m.stderr.sqrt()
    };
    Ok(Estimate::new(value, stderr))
}

/// Deterministic subsample of `k` points (all of them when fewer exist).
pub fn subsample(points: &[Vec3], k: usize, seed: u64, stream: u64) -> Vec<Vec3> {
    if k >= points.len() {
        return points.to_vec();
    }
    let mut rng = keyed_rng(&[domain::SUBSAMPLE, seed, stream]);
    let mut idx = sample_indices(&mut rng, points.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// `W2` between pooled samples, estimated by exact transport on `draws`
/// independent subsamples of size `min(cap, available)`.
pub fn w2_subsampled(a: &[Vec3], b: &[Vec3], cap: usize, draws: usize, seed: u64) -> Result<Estimate> {
    let k = a.len().min(b.len()).min(cap);
    if k == 0 || draws == 0 {
        return Err(KacError::Domain("subsampled W2 needs points and draws".into()));
    }
    let values: Vec<f64> = (0..draws as u64)
        .map(|d| {
            let sa = EmpiricalCloud::from_vec3(&subsample(a, k, seed, d))?;
            let sb = EmpiricalCloud::from_vec3(&subsample(b, k, seed, d))?;
            w2_exact(&sa, &sb)
        })
        .collect::<Result<_>>()?;
    let est = mean_stderr(&values)?;
    Ok(if draws == 1 { Estimate::new(est.value, f64::INFINITY) } else { est })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(a: &[Vec3], b: &[Vec3]) -> (Vec<usize>, f64) {
        fn rec(row: usize, a: &[Vec3], b: &[Vec3], used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut (Vec<usize>, f64)) {
            if row == a.len() {
                let c: f64 = cur.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).norm_squared()).sum();
                if best.0.is_empty() || c < best.1 - 1e-12 * best.1.max(1.0) {
                    *best = (cur.clone(), c);
                }
                return;
            }
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(row + 1, a, b, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = (Vec::new(), f64::INFINITY);
        rec(0, a, b, &mut vec![false; a.len()], &mut Vec::new(), &mut best);
        best
    }

    fn random_points(seed: u64, k: usize) -> Vec<Vec3> {
        let mut rng = keyed_rng(&[seed]);
        (0..k)
            .map(|_| Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn pairing_examples() {
        let a = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        let b = [Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(optimal_pairing(&a, &b).unwrap(), vec![1, 0]);
        let same = random_points(1, 6);
        assert_eq!(optimal_pairing(&same, &same).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(optimal_pairing(&a, &b[..1]).is_err());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // both assignments cost the same
        let a = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        let b = [Vec3::new(0.5, 1.0, 0.0), Vec3::new(0.5, -1.0, 0.0)];
        assert_eq!(optimal_pairing(&a, &b).unwrap(), vec![0, 1]);
        let flipped = [b[1], b[0]];
        assert_eq!(optimal_pairing(&a, &flipped).unwrap(), vec![0, 1]);
    }

    #[test]
    fn solver_matches_factorial_enumeration() {
        for seed in 0..40 {
            let k = 1 + (seed as usize % 6);
            let a = random_points(seed, k);
            let b = random_points(seed + 1000, k);
            let (perm, cost) = brute_force(&a, &b);
            let got = optimal_pairing(&a, &b).unwrap();
            assert_eq!(got, perm, "seed {seed}");
            let w = w2_exact(&EmpiricalCloud::from_vec3(&a).unwrap(), &EmpiricalCloud::from_vec3(&b).unwrap()).unwrap();
            assert!((w * w * k as f64 - cost).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_distance_examples() {
        let a = EmpiricalCloud::from_vec3(&random_points(5, 50)).unwrap();
        assert_eq!(w2_exact(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Vec3> = random_points(5, 50).iter().map(|p| p + Vec3::new(1.0, 0.0, 0.0)).collect();
        let b = EmpiricalCloud::from_vec3(&shifted).unwrap();
        assert!((w2_exact(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let line_a = EmpiricalCloud::from_vec3(&[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        let line_b = EmpiricalCloud::from_vec3(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)]).unwrap();
        assert!((w2_exact(&line_a, &line_b).unwrap() - 1.0).abs() < 1e-14);
        assert!(w2_exact(&line_a, &a).is_err());
        let big = EmpiricalCloud::from_vec3(&vec![Vec3::zeros(); EXACT_CAP + 1]).unwrap();
        assert!(matches!(w2_exact(&big, &big), Err(KacError::Domain(_))));
    }

    #[test]
    fn sliced_distance_of_translation() {
        let pts = random_points(8, 200);
        let u = Vec3::new(0.6, -0.3, 0.9);
        let moved: Vec<Vec3> = pts.iter().map(|p| p + u).collect();
        let a = EmpiricalCloud::from_vec3(&pts).unwrap();
        let b = EmpiricalCloud::from_vec3(&moved).unwrap();
        let s = w2_sliced(&a, &b, 512, 3).unwrap();
        assert!(s.within(u.norm() / 3f64.sqrt(), 3.0), "{s:?}");
        assert_eq!(w2_sliced(&a, &a, 16, 1).unwrap().value, 0.0);
        assert_eq!(w2_sliced(&a, &b, 16, 9).unwrap(), w2_sliced(&a, &b, 16, 9).unwrap());
        let exact = w2_exact(&a, &b).unwrap();
        assert!(s.value <= exact + 3.0 * s.stderr);
    }

    #[test]
    fn unequal_counts_in_one_dimension() {
        // quantile functions of {0,1} and {0,0.5,1}
        let d = w2_sq_1d(vec![0.0, 1.0], vec![0.0, 0.5, 1.0]);
        // u∈[0,1/3): 0, [1/3,1/2): 0.25, [1/2,2/3): 0.25, [2/3,1): 0
        assert!((d - (1.0 / 6.0) * 0.25 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn large_inputs_use_projection_pairing() {
        let pts = random_points(2, EXACT_CAP + 10);
        let moved: Vec<Vec3> = pts.iter().map(|p| p + Vec3::new(0.2, 0.0, 0.0)).collect();
        let perm = optimal_pairing(&pts, &moved).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..pts.len()).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metric_axioms(seed in 0u64..10_000, k in 1usize..40, lambda in 0.1f64..5.0) {
            let a = EmpiricalCloud::from_vec3(&random_points(seed, k)).unwrap();
            let b = EmpiricalCloud::from_vec3(&random_points(seed + 1, k)).unwrap();
            let c = EmpiricalCloud::from_vec3(&random_points(seed + 2, k)).unwrap();
            let ab = w2_exact(&a, &b).unwrap();
            prop_assert!((ab - w2_exact(&b, &a).unwrap()).abs() <= 1e-12);
            prop_assert!(ab <= w2_exact(&a, &c).unwrap() + w2_exact(&c, &b).unwrap() + 1e-10);
            let scaled = w2_exact(&a.scaled(lambda), &b.scaled(lambda)).unwrap();
            prop_assert!((scaled - lambda * ab).abs() <= 1e-10 * (1.0 + lambda * ab));
            let s1 = w2_sliced(&a.scaled(lambda), &b.scaled(lambda), 8, seed).unwrap().value;
            let s0 = w2_sliced(&a, &b, 8, seed).unwrap().value;
            prop_assert!((s1 - lambda * s0).abs() <= 1e-10 * (1.0 + lambda * s0));
        }
    }
}
