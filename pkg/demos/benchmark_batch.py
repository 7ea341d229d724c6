"""
Small benchmark batch
=====================

Runs the full batch pipeline on a reduced benchmark city: stations on the
open side of a dense/open divide (mixed visibility) and stations deep
inside the dense grid (mostly NLOS). The batch report shows the dual
models winning the mixed sites and a single 3GPP fit doing well on the
dense ones.

Run with ``python demos/benchmark_batch.py [OUT_DIR]`` (about a minute).
The full 25-site benchmark of the acceptance suite is
``losfield synth --benchmark 20,5`` followed by ``losfield batch``.
"""

import json
import sys
from pathlib import Path

from losfield.pipeline import RunConfig, run_batch
from losfield.scenarios import benchmark_city

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/benchmark")

# %%
# Four mixed and two dense sites at a 300 m analysis radius
layout = benchmark_city(n_mixed=4, n_dense=2, seed=0, radius_m=300.0)
cfg = RunConfig(synth=layout.city, radius_m=300.0, estimators=10, out=out)
batch, code = run_batch(cfg)
print(f"exit code {code}, {len(batch.sites)} sites, {len(batch.failed)} failed")

# %%
# Per-site winners and the batch means (see summary.json, cdf.svg, quantiles.svg)
summary = json.loads((out / "summary.json").read_text())
for row in summary["sites"]:
    kind = "mixed" if row["site_id"] in layout.mixed_ids else "dense"
    print(f"{row['site_id']:4s} {kind:5s} LOS {row['los_fraction']:.2f}  best {row['best_method']:16s} "
          f"rmse {row['best_rmse']:.4f}")
means = summary["mean_rmse"]
print(f"mean best single {means['best_single']:.4f}, mean best dual {means['best_dual']:.4f}")
