"""How the GOP map carves up risk space.

Fix gamma and alpha, sweep log(GOP), and watch the implied baseline risk
move across its admissible interval.  The resulting table is the data
behind a risk-versus-log-GOP plot; it is written to ``gop_surface.csv``.
"""

import csv
from pathlib import Path

import numpy as np

from qiv.gop import GopPoint, gop_forward, implied_risks, root_interval

OUT = Path(__file__).with_name("gop_surface.csv")

rows = []
for gamma in (-0.2, 0.1, 0.4):
    for alpha in (0.5, 1.2, 3.0):
        if gamma + alpha <= 0:
            continue
        lo, hi = root_interval(gamma, alpha)
        log_gop = np.linspace(-10, 10, 81)
        r = implied_risks(GopPoint(np.full(81, gamma), np.full(81, alpha), np.exp(log_gop)))
        for lg, p11, p01, p00 in zip(log_gop, r.p11, r.p01, r.p00):
            rows.append(dict(gamma=gamma, alpha=alpha, log_gop=lg, p11=p11, p01=p01, p00=p00))
        print(f"gamma={gamma:+.1f} alpha={alpha:.1f}: p00 spans ({r.p00.min():.4f}, {r.p00.max():.4f})"
              f" inside ({float(lo):.4f}, {float(hi):.4f})")

with OUT.open("w", newline="") as fh:
    w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)

# going the other way: any risk triple has a GOP point, and it maps back exactly
triple = implied_risks(GopPoint(0.1, 1.2, 2.0))
print("risks implied by (0.1, 1.2, 2.0):", triple)
print("mapped back:", gop_forward(triple))
print(f"wrote {len(rows)} rows to {OUT.name}")
