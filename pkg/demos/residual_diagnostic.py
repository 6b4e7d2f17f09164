"""Residual-heterogeneity tables for the four benchmarks.

For each model a regression g is fitted on 2e5 prior simulations. The
residuals theta - g(s) inside growing distance balls around the observed
summaries are compared with those in the smallest ball. Flat rows mean
regression adjustment is safe; growing rows mean the residual law depends
on s and wide acceptance regions will bias the adjusted samples.

    python3 demos/residual_diagnostic.py [model ...]

Expect minutes per model on one core (M/G/1 and LV are the slow ones).
"""

import sys
import time

from agcabc.evaluation import residual_heterogeneity
from agcabc.simulators import get_model, observe

names = sys.argv[1:] or ["ma2", "gc_toy", "lv", "mg1"]
for name in names:
    model = get_model(name)
    _, s_obs = observe(model, seed=7)
    start = time.perf_counter()
    rows = residual_heterogeneity(model, model.prior, s_obs, budget=200_000, seed=1)
    print(f"{name} ({time.perf_counter() - start:.0f}s)")
    for r in rows:
        print(f"  {100 * r.quantile:5.1f}%  JSD {r.jsd:.4f}  ({r.n_rows} rows, eps {r.epsilon:.3g})")
