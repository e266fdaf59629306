"""Smoke test for the pyatlaslab extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python crates/python/python/smoke_test.py`.
"""

import json
import math
import tempfile

import pyatlaslab as al


def main():
    assert al.pi_a_rates(0.0, 3) == [2.0, 2.0, 2.0]
    assert al.pi_a_rates(1.0, 3) == [3.0, 4.0, 5.0]
    assert al.a_min() == 0.0

    value, first, _ = al.psi_eps(0.1, 0.1)
    assert math.isclose(value, 0.005) and math.isclose(first, 0.1)

    prods = al.kakutani_products(0.0, 1.0, 50)
    assert all(b < a for a, b in zip(prods, prods[1:]))
    assert prods[-1] < 1e-3

    try:
        al.validate_config('experiment = "stationarity"\n[sim]\ndt = -1.0\n')
    except ValueError as e:
        assert "sim.dt" in str(e)
    else:
        raise AssertionError("negative dt accepted")

    config = 'experiment = "kakutani"\n[kakutani]\na_prime = 1.0\n'
    with tempfile.TemporaryDirectory() as out:
        report = json.loads(al.run_config(config, out, 1))
    assert report["experiment"] == "kakutani"
    assert report["pass"] is True
    print("pyatlaslab smoke test passed")


if __name__ == "__main__":
    main()
