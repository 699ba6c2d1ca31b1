//! The pairwise generator applied to `|v|⁴` reproduces the closed Maxwellian
//! fourth-moment equation on any sample with cubic symmetry.

use kaclab::kernels::eval_pair_kernels;
use kaclab::oracle::IsotropicState;
use kaclab::{Mat3, Vec3};
use rand::{Rng, SeedableRng};

/// Orbit of `v` under the 48 signed coordinate permutations.
fn octahedral_orbit(v: &Vec3) -> Vec<Vec3> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for p in PERMS {
        for signs in 0..8u8 {
            let s = |k: u8| if signs >> k & 1 == 1 { -1.0 } else { 1.0 };
            out.push(Vec3::new(s(0) * v[p[0]], s(1) * v[p[1]], s(2) * v[p[2]]));
        }
    }
    out
}

/// Empirical mean over `i` of `(1/N) Σ_j [A(v_i − v_j):∇²φ(v_i) + 2B(v_i − v_j)·∇φ(v_i)]`
/// for `φ = |v|⁴`.
fn generator_of_quartic(vs: &[Vec3], gamma: f64) -> f64 {
    let n = vs.len() as f64;
    let mut total = 0.0;
    for v in vs {
        let r2 = v.norm_squared();
        let grad = 4.0 * r2 * v;
        let hess = 4.0 * r2 * Mat3::identity() + 8.0 * v * v.transpose();
        for w in vs {
            let k = eval_pair_kernels(&(v - w), gamma).unwrap();
            total += k.a_matrix.component_mul(&hess).sum() + 2.0 * k.b_vector.dot(&grad);
        }
    }
    total / (n * n)
}

#[test]
fn quartic_rate_matches_closed_equation() {
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(11);
    for _ in 0..4 {
        let seeds: Vec<Vec3> = (0..3)
            .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let sample: Vec<Vec3> = seeds.iter().flat_map(octahedral_orbit).collect();
        let st = IsotropicState::of(&sample).unwrap();
        assert!(st.mean.norm() < 1e-14);
        let closed = -8.0 * st.m4 + 40.0 / 3.0 * st.m2 * st.m2;
        let measured = generator_of_quartic(&sample, 0.0);
        assert!(
            (measured - closed).abs() <= 1e-10 * closed.abs().max(st.m4),
            "generator {measured} vs closed form {closed}"
        );
    }
}

#[test]
fn quartic_rate_needs_isotropic_covariance() {
    // stretched along x: the closed equation no longer applies
    let sample: Vec<Vec3> = [Vec3::new(2.0, 0.1, 0.0), Vec3::new(0.3, 0.2, 0.1)]
        .iter()
        .flat_map(|v| [*v, -v])
        .collect();
    let st = IsotropicState::of(&sample).unwrap();
    let closed = -8.0 * st.m4 + 40.0 / 3.0 * st.m2 * st.m2;
    assert!((generator_of_quartic(&sample, 0.0) - closed).abs() > 1e-3);
}
