"""A pocket version of the simulation study.

Twenty replicates per scenario at n=5000.  With so few replicates the
Monte Carlo error is large, but the pattern is already visible: TR stays
near 0.334 everywhere while the likelihood plug-in is pulled away when
the gamma or alpha model uses the wrong covariate.  Per-replicate rows go
to ``small_monte_carlo.csv`` for boxplots.
"""

import csv
from pathlib import Path

from qiv.sim import Scenario, ScenarioSpec, run_mc

OUT = Path(__file__).with_name("small_monte_carlo.csv")

rows = []
for sc in Scenario:
    summ = run_mc(ScenarioSpec(sc, n=5_000, seed=3, reps=20))
    line = ", ".join(f"{e} {v['mean']:.3f} (sd {v['mc_sd']:.3f})" for e, v in summ.estimators.items())
    print(f"{sc.value:12s} {line}")
    rows += [dict(scenario=sc.value, **r) for r in summ.records]

with OUT.open("w", newline="") as fh:
    w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
print(f"wrote {len(rows)} rows to {OUT.name}")
