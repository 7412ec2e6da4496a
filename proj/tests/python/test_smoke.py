import math
import random

import pytest

import ppanel


def panel(n_units=60, waves=3, seed=3):
    rng = random.Random(seed)
    data = {"unit": [], "wave": [], "x": [], "z": [], "y": []}
    for i in range(n_units):
        a = rng.gauss(0, 1)
        for t in range(1, waves + 1):
            z = rng.gauss(0, 1)
            x = z + 0.5 * rng.gauss(0, 1) + a
            data["unit"].append(f"u{i}")
            data["wave"].append(t)
            data["x"].append(x)
            data["z"].append(z)
            data["y"].append(1.0 + 0.5 * x + a + 0.2 * rng.gauss(0, 1))
    return data


def test_within_removes_effect_bias():
    data = panel()
    within = ppanel.estimate(data, "y", ["x"], estimator="within")
    pooled = ppanel.estimate(data, "y", ["x"])
    slope = lambda f: f["coef"]["x"]
    assert abs(slope(within) - 0.5) < 0.1
    assert slope(pooled) > slope(within)
    h = ppanel.hausman(ppanel.estimate(data, "y", ["x"], estimator="between"), within, subset=["x"])
    assert h["p_value"] < 0.05


def test_shadow_price_and_elasticity():
    r = ppanel.shadow_price(0.19, 0.38)
    assert r["gamma_ii"] == pytest.approx(-0.19)
    assert r["shadow_income_elasticity"] == pytest.approx(1.0)
    assert ppanel.expenditure_elasticity(-0.05, 0.0, 0.25, 3.0, False) == pytest.approx(0.8)


def test_errors_are_python_exceptions():
    with pytest.raises(ppanel.PpanelError, match="ZeroPriceElasticity"):
        ppanel.shadow_price(1.0, 0.0)
    with pytest.raises(ppanel.PpanelError):
        ppanel.estimate(panel(), "y", ["missing"])


def test_simulate_and_cli():
    report = ppanel.simulate(reps=3, n_units=100, n_cells=10, estimators=["within"])
    assert report is not None
    code, out, _ = ppanel.run_cli(["shadow-price", "--table4"])
    assert code == 0 and out
    assert ppanel.run_cli(["estimate"])[0] == 2
