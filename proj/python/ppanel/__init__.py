"""Python front end of the ppanel estimation library."""

import json

from . import _ppanel
from ._ppanel import PpanelError, expenditure_elasticity, run_cli, shadow_price

__all__ = ["PpanelError", "estimate", "expenditure_elasticity", "hausman", "run_cli", "shadow_price", "simulate"]


def _split(data, unit, wave):
    units = [str(u) for u in data[unit]]
    waves = [int(w) for w in data[wave]]
    columns = {k: [float(v) for v in vals] for k, vals in data.items() if k not in (unit, wave)}
    return units, waves, columns


def estimate(data, dependent, regressors, estimator="ols", unit="unit", wave="wave", **options):
    """Fit `estimator` on a mapping of column name -> sequence (pandas frames work too).

    Returns the fit as a dict; coef and se are keyed by regressor name.
    """
    units, waves, columns = _split(data, unit, wave)
    return json.loads(_ppanel.estimate(estimator, units, waves, columns, dependent, list(regressors), **options))


def hausman(fit_a, fit_b, subset=(), naive=False):
    return json.loads(_ppanel.hausman(json.dumps(fit_a), json.dumps(fit_b), list(subset), naive))


def simulate(config=None, **overrides):
    cfg = dict(config or {})
    cfg.update(overrides)
    return json.loads(_ppanel.simulate(json.dumps(cfg)))
