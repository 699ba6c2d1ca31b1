"""Smoke test for the kaclab_py extension.

Build first with `maturin develop -m crates/py/Cargo.toml` (or
`pip install --no-build-isolation ./crates/py`).
"""

import math
import sys
import tempfile

import kaclab_py as kl


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    a, b, s = kl.pair_kernels([1.0, 0.0, 0.0], 1.0)
    assert close(a[1][1], 1.0, 1e-15) and a[0][0] == 0.0
    assert close(b[0], -2.0, 1e-15)

    cfg = kl.Config(gamma=0.5, n_particles=64, replicas=4, horizon_time=0.2, seed=3)
    e0 = kl.Ensemble.sample(cfg, 0)
    p0, en0 = e0.conserved()
    e1 = e0.advance(0.01, steps=20, energy_projection=True)
    p1, en1 = e1.conserved()
    assert max(abs(x - y) for x, y in zip(p0, p1)) <= 1e-12 * math.sqrt(en0)
    assert close(en1, en0, 1e-12)
    assert e1.step_index == 20 and len(e1) == 64

    out = kl.simulate(cfg)
    assert len(out["final_velocities"]) == 4
    m2 = out["moments"][out["p_values"].index(2.0)]
    print(f"E|v|^2 at t={out['time']:.2f}: {m2:.4f}")

    try:
        kl.Config(particle_count=10)
    except kl.KaclabError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    f, g = kl.hierarchy_weights(1, 1, 1.0, 1.0)
    assert close(f, 1.0 - math.exp(-1.0), 1e-9) and close(g, math.exp(-1.0), 1e-12)
    assert close(kl.exp_series_threshold(1.0, 1.0), 3.0 / (4.0 * math.e), 1e-12)
    assert close(kl.maxwellian_m4(3.0, 9.0, 50.0), 15.0, 1e-12)

    pts = e0.velocities
    assert kl.w2_exact(pts, pts) == 0.0

    passed, criteria = kl.verify("kernels")
    for c in criteria:
        print(("PASS" if c["passed"] else "FAIL"), c["name"])
    assert passed

    with tempfile.TemporaryDirectory() as tmp:
        run = kl.run_simulate(kl.Config(n_particles=32, replicas=2, horizon_time=0.1, output_dir=tmp))
        text, failures = kl.report(run)
        assert not failures, failures
    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
