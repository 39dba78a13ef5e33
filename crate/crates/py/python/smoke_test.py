"""Smoke test for the rtefade Python bindings.

Build and install first:  maturin develop --release -m crates/py/Cargo.toml
"""

import math
import tempfile
from pathlib import Path

import rtefade


def main():
    exact, linear = rtefade.analytic_eta(650.0, 0.05, 100.0)
    assert abs(exact - (650 - 5) / (650 + 5)) < 1e-12
    assert abs(linear - (1 - 2 * 5 / 650)) < 1e-12

    params = {
        "emf": {"kind": "flat", "volts": 650.0},
        "resistance": {"r0_ohm": 0.05},
        "capacity_ah": 200.0,
        "initial_soc": 0.5,
    }
    profile = {
        "phases": [
            {"duration_s": 900, "current_a": 0.0},
            {"duration_s": 1800, "current_a": -100.0},
            {"duration_s": 1800, "current_a": 100.0},
            {"duration_s": 900, "current_a": 0.0},
        ],
        "temperature": {"kind": "constant", "celsius": 25.0},
    }
    series = rtefade.simulate(params, profile, seed=1)
    assert len(series) == 5400

    soc = rtefade.compute_soc(series)
    assert abs(soc[-1] - 0.5) < 1e-9

    trips = rtefade.detect_round_trips(series)
    assert len(trips) == 1, trips
    est = rtefade.estimate_efficiency(series, trips[0])
    assert abs(est["eta"] - exact) < 1e-6, est
    assert est["eta_stderr"] > 0

    rho, p, significant = rtefade.spearman([1, 2, 3, 4, 5], [2, 4, 6, 8, 10])
    assert rho == 1.0 and p == 0.0 and significant

    c1 = [0.5, 1.0, 1.5, 0.5, 1.0, 1.5]
    c2 = [20.0, 20.0, 20.0, 30.0, 30.0, 30.0]
    eta = [0.99 - 0.02 * a + 0.001 * (b - 25) for a, b in zip(c1, c2)]
    model = rtefade.fit_wls(c1, c2, eta, [1e-3] * 6, names=("rms_crate", "temp_rt"))
    assert abs(model.beta[0] + 0.02) < 1e-9
    eta_hat, stderr, _ = model.predict(1.0, 25.0)
    assert abs(eta_hat - 0.97) < 1e-9 and math.isfinite(stderr)

    try:
        rtefade.spearman([1, 1, 1], [1, 2, 3])
    except rtefade.DegenerateError:
        pass
    else:
        raise AssertionError("constant input must raise")

    scenario = {
        "params": params,
        "profile": {**profile, "repeat_count": 10},
        "start": "2020-01-01T00:00:00Z",
        "partitions": 3,
        "aging": {"kind": "linear", "total_increase": 0.2},
    }
    with tempfile.TemporaryDirectory() as tmp:
        paths = rtefade.simulate_fleet(scenario, Path(tmp) / "tel", seed=3)
        assert len(paths) == 3
        found = rtefade.detect([Path(tmp) / "tel"])
        assert found["summary"]["trips"] == 30, found["summary"]
        loaded = rtefade.read_csv(paths[0])
        assert len(loaded) == 1 and len(loaded[0]) == 54000

    print("rtefade smoke test passed")


if __name__ == "__main__":
    main()
