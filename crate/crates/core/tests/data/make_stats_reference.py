"""Regenerates stats_reference.json with scipy."""
import json

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240601)
cases = []
makers = [
    lambda n: rng.normal(0, 1, n),
    lambda n: rng.uniform(0, 1, n),
    lambda n: rng.exponential(2.0, n),
    lambda n: rng.standard_t(3, n),
    lambda n: np.round(rng.normal(5, 2, n), 0),  # ties
]
sizes = [3, 4, 7, 11, 12, 20, 50, 50, 100, 250]
for i in range(20):
    n = sizes[i % len(sizes)]
    x = makers[i % len(makers)](n)
    y = makers[(i + 2) % len(makers)](n) + 0.5 * x
    w, p = stats.shapiro(x)
    rho = stats.spearmanr(x, y).statistic
    cases.append({"x": x.tolist(), "y": y.tolist(), "w": float(w), "p": float(p), "rho": float(rho)})

with open("stats_reference.json", "w") as f:
    json.dump({"scipy": __import__("scipy").__version__, "cases": cases}, f, indent=1)
