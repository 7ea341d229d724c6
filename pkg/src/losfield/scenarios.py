"""Synthetic benchmark cities.

The benchmark city is split at its vertical midline into an open western
half and a dense Manhattan grid to the east. Mixed-visibility sites sit in
the open half close to the divide, so a LOS-dense zone faces an NLOS-dense
one. Dense sites sit at street intersections deep inside the grid, where
only the streets through the station are visible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geodata import SynthCitySpec


@dataclass(frozen=True)
class BenchmarkLayout:
    city: SynthCitySpec
    mixed_ids: tuple
    dense_ids: tuple


def benchmark_city(n_mixed: int = 20, n_dense: int = 5, seed: int = 0, radius_m: float = 500.0,
                   max_offset_m: float = 150.0, **city_overrides) -> BenchmarkLayout:
    """City spec with ``n_mixed`` divide-side stations and ``n_dense`` grid stations.

    Station ids follow ``synth_city`` numbering: mixed sites first.
    """
    base = SynthCitySpec(extent_m=2 * radius_m + 2 * (radius_m + 150.0), open_area_fraction=0.5,
                         mean_height_m=20.0, stdev_height_m=6.0, seed=seed)
    city = replace(base, **city_overrides)
    ext = city.extent_m
    period = city.block_size_m + city.street_width_m
    divide = city.open_area_fraction * ext
    rng = np.random.default_rng(seed)

    margin = radius_m + city.cell_size_m
    ys = np.linspace(margin, ext - margin, max(n_mixed, 1))
    offsets = rng.uniform(0.0, max_offset_m, n_mixed)
    jitter = rng.uniform(-0.25, 0.25, n_mixed) * (ys[1] - ys[0] if n_mixed > 1 else 0.0)
    mixed = [(divide - float(o), float(y + j)) for o, y, j in zip(offsets, ys[:n_mixed], jitter)]

    # intersections lie on center + k * period along both axes
    center = ext / 2
    k_min = int(np.ceil((divide + radius_m - center) / period))
    k_max = int(np.floor((ext - margin - center) / period))
    if n_dense and k_min > k_max:
        raise ValueError("city too small for dense sites at this radius")
    kx = np.arange(k_min, k_max + 1)
    ky = np.arange(int(np.ceil((margin - center) / period)), int(np.floor((ext - margin - center) / period)) + 1)
    picks = rng.choice(len(kx) * len(ky), size=n_dense, replace=False) if n_dense else []
    dense = [(center + kx[p % len(kx)] * period, center + ky[p // len(kx)] * period) for p in picks]

    city = replace(city, station_positions=tuple(mixed + dense))
    ids = [f"s{i + 1}" for i in range(n_mixed + n_dense)]
    return BenchmarkLayout(city, tuple(ids[:n_mixed]), tuple(ids[n_mixed:]))
