"""
One station at the edge of a dense district
===========================================

Builds a synthetic city whose western half is open ground, puts a station
just west of the dense grid, and walks through every stage: visibility
map, empirical LOS curve, the single-environment fits, both zone
boundaries and the dual-environment fits.

Run with ``python demos/single_site.py [OUT_DIR]``; plots go to
``OUT_DIR`` (default ``demo_out/single_site``).
"""

import json
import sys
from pathlib import Path

import numpy as np

from losfield import (TransitionParams, compute_viewshed, empirical_curve, extract_los_boundary, fit_dual,
                      fit_single, fit_svc_boundary, fit_trig_boundary, los_fraction, synth_city, zone_geometry)
from losfield.boundary import boundary_geojson
from losfield.dualenv import mix, rma
from losfield.geodata import SynthCitySpec
from losfield.losmodel import uma
from losfield.report import plot_site_curve

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/single_site")
out.mkdir(parents=True, exist_ok=True)

# %%
# A 1.6 km city, open west of x = 800 m, station 60 m west of the divide
city = SynthCitySpec(extent_m=1600.0, open_area_fraction=0.5, station_positions=((740.0, 800.0),))
surface, (station,) = synth_city(city)
vm = compute_viewshed(surface, station, 400.0).crop()
print(f"LOS fraction within 400 m: {los_fraction(vm):.3f}")

# %%
# Empirical p_LOS(d) in 10 m rings and the three single-environment variants
curve = empirical_curve(vm, 10.0)
fits, modeled = {}, {}
for variant in ("Default3gpp", "Fitted3gpp", "Fitted3gppMinLos"):
    res = fit_single(curve, variant, station.id)
    fits[variant] = res
    modeled[variant] = uma(res.params["d1"], res.params["d2"], curve.bin_centers)

# %%
# Trig boundary: every (order, w0) candidate is ranked by the dual-model RMSE it yields
transition = TransitionParams()


def dual_rmse(candidate):
    F = zone_geometry(candidate, vm, stride=2).fractions(transition)
    return fit_dual(curve, F).rmse


trig = fit_trig_boundary(extract_los_boundary(vm), score=dual_rmse)
print(f"trig boundary: order {trig.order}, w0 {trig.w0}, mean radius {trig.a0:.0f} m")

# %%
# SVC boundary: bagged nu-SVC on the LOS/NLOS pixel labels
svc = fit_svc_boundary(vm, nu=0.5, gamma=1e-4, n_estimators=10, seed=1)
print(f"SVC boundary: nu {svc.nu:.3f}, {len(svc.crossings)} mesh zero crossings")

for name, boundary in (("DualTrig", trig), ("DualSvc", svc)):
    F = zone_geometry(boundary, vm).fractions(transition)
    res = fit_dual(curve, F, station.id, method=name)
    fits[name] = res
    p = res.params
    modeled[name] = mix(uma(p["d1"], p["d2"], curve.bin_centers), rma(p["d3"], p["d4"], curve.bin_centers), F)
    (out / f"boundary_{name}.geojson").write_text(json.dumps(boundary_geojson(boundary)))

# %%
# Curve RMSE per method; the dual models should sit well below the single ones
for name, res in fits.items():
    print(f"{name:18s} rmse {res.rmse:.4f}")
best = min(fits, key=lambda m: fits[m].rmse)
print(f"best method: {best}")

plot_site_curve(curve, modeled, station.id, out / "curve.svg")
np.savetxt(out / "visibility.txt", vm.states, fmt="%d")
print(f"plots written to {out}")
