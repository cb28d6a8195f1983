"""Smoke test for the `mbr` extension module.

Build it first, e.g. `maturin develop -m crates/python/Cargo.toml --features extension-module`,
or copy the built shared library next to this script as `mbr.so`.
"""

import json
import math

import mbr


def main():
    quad = mbr.Potential.quadratic(1.0)
    params = mbr.ModelParams(2.0, 1.0, 0.5, quad, gamma=1.0)

    report = mbr.solve_fixed_point(params)
    assert report.converged, report
    c = math.sqrt(2.0) - 1.0
    got = report.state.as_tuple()
    want = (c, 2.0 * c, math.sqrt(2.0), 0.0)
    assert all(abs(a - b) < 1e-8 for a, b in zip(got, want)), got

    closed = mbr.closed_form_quadratic(params)
    assert abs(closed.q - report.state.q) < 1e-8

    f = mbr.free_energy_f(params, report.state.q, report.state.rho)
    fbar = mbr.free_energy_fbar(params, report.state)
    assert abs(f - fbar) < 1e-10, (f, fbar)

    mse, fe, _ = mbr.predict_regression(params)
    assert abs(fe - (-0.5 + f)) < 1e-12

    for beta in (0.5, 2.0):
        assert abs(mbr.closed_form_quadratic(params.with_beta(beta)).q - closed.q) < 1e-10

    zero = mbr.ModelParams(2.0, 1.0, 0.5, mbr.Potential.zero(), h=1.0)
    f0, state0 = mbr.reference_endpoints(zero)
    assert state0.as_tuple() == (1.0, 2.0, 0.0, 0.0)
    assert abs(f0 - 0.5 * (1.0 + math.log(2.0 * math.pi))) < 1e-12

    post = mbr.exact_posterior(params, 50, 0)
    assert len(post["x_hat"]) == 50
    seed = mbr.run_seed(params, 200, 0)
    assert abs(seed["mse_per_n"] - mse) < 0.2, seed

    huber = mbr.Potential.pseudo_huber(1.0)
    assert huber.check_growth()["ok"]
    try:
        mbr.closed_form_quadratic(mbr.ModelParams(2.0, 1.0, 0.5, huber, gamma=1.0))
    except ValueError:
        pass
    else:
        raise AssertionError("closed form accepted a non-quadratic potential")

    config = {
        "model": {"alpha": 2, "delta_star": 1, "kappa": 0.5, "gamma": 1,
                  "potential": {"kind": "quadratic", "delta": 1.0}},
        "sim": {"n": 50, "seeds": 4},
    }
    rep = json.loads(mbr.compare(json.dumps(config)))
    assert rep["rows"][0]["simulation"]["seeds_used"] == 4

    print("smoke test passed: q =", report.state.q, "mse_per_n(seed 0, N=200) =", seed["mse_per_n"])


if __name__ == "__main__":
    main()
