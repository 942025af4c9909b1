"""Smoke test for the Python bindings. Run after `pip install -e crates/python --no-build-isolation`."""

import json
import math

import invariant_moments_py as im

J = [10.0, 12.0, 14.0]
Q = [0.005, 0.002, 0.003]


def close(a, b, rel=1e-12):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def main():
    assert close(im.kinetic_energy(J, [1.0, 0.0, 0.0]), 5.0)
    rate = im.ke_mean_rate(J, Q)
    assert close(rate, 0.5 * sum(q / j for q, j in zip(Q, J)))

    cov = [[2e-5, 0, 0], [0, 2e-5, 0], [0, 0, 2e-5]]
    traj = im.propagate_rigidbody(J, Q, [0.02] * 3, cov, 0.1, 10.0)
    assert len(traj["t"]) == 101
    gain = traj["ke_mean"][-1] - traj["ke_mean"][0]
    assert close(gain, rate * 10.0, 1e-9), gain
    assert all(v >= 0 for v in traj["ke_cov"])

    m3 = im.gaussian_third_moment([1.0, 2.0], [[1.0, 0.5], [0.5, 2.0]], 0, 0, 1)
    assert close(m3, 1 * 1 * 2 + 2 * 1 * 0.5 + 2 * 1.0)

    h, grad, hh = im.h_invariant([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert close(h, 1.0) and len(grad) == 6 and len(hh) == 6

    lo, hi = im.mu_h_rate_bounds(1.0, [[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1e-3]])
    assert lo == hi and close(lo, 2e-3)
    lo, hi = im.r_h_rate_bounds(1.0, [[3e-3, 0, 0], [0, 1e-3, 0], [0, 0, 2e-3]])
    assert lo <= hi

    cfg = json.loads(im.bundled_config("rigidbody"))
    cfg["t_final"] = 2.0
    report = im.run_scenario(json.dumps(cfg), seed=5, samples=500)
    assert report.scenario == "rigidbody"
    assert len(report.rows) == 21 and report.columns[0] == "t"
    assert all(math.isfinite(v) for v in report.column("mc_ke_mean"))
    summary = json.loads(report.summary_json())
    assert summary["rows"] == 21

    try:
        im.run_scenario(json.dumps({**cfg, "dt": 0.0}))
    except ValueError as e:
        assert "dt" in str(e) or "step" in str(e), e
    else:
        raise AssertionError("dt = 0 accepted")

    print("smoke test passed:", [c[0] for c in report.checks])


if __name__ == "__main__":
    main()
