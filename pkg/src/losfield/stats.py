"""Fit scoring and batch aggregation.

RMSE between an empirical LOS-probability curve and a model is taken over
populated distance bins, weighted by the number of pixels in each bin.
Batch summaries follow the per-site "best method" view: each site is
represented by its lowest-RMSE method, and the sites are split into
equal-count groups by that RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

METHOD_ORDER = ("Default3gpp", "Fitted3gpp", "Fitted3gppMinLos", "DualTrig", "DualSvc")
"""Canonical method order; earlier methods win exact RMSE ties."""

SINGLE_METHODS = METHOD_ORDER[:3]
DUAL_METHODS = METHOD_ORDER[3:]


def method_rank(method: str) -> int:
    return METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)


def rmse(curve, model: Callable[[np.ndarray], np.ndarray], weighted: bool = True) -> float:
    """Root-mean-square error of ``model(bin_center)`` against a curve's populated bins."""
    ok = curve.n_pixels > 0
    if not ok.any():
        raise ValueError("curve has no populated bins")
    err = curve.p_los[ok] - np.asarray(model(curve.bin_centers[ok]), dtype=float)
    w = curve.n_pixels[ok].astype(float) if weighted else np.ones(int(ok.sum()))
    return float(np.sqrt(np.sum(w * err * err) / np.sum(w)))


@dataclass
class SiteResults:
    site_id: str
    los_fraction: float
    fits: dict = field(default_factory=dict)
    """Method tag -> FitResult."""


@dataclass
class BatchResults:
    sites: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    """``(site_id, stage, message)`` for sites that did not complete."""

    def methods(self) -> list[str]:
        seen = {m for s in self.sites for m in s.fits}
        return sorted(seen, key=lambda m: (method_rank(m), m))

    def rmse_values(self, method: str) -> np.ndarray:
        if not self.sites or any(method not in s.fits for s in self.sites):
            raise KeyError(f"unknown method {method!r}")
        return np.array([s.fits[method].rmse for s in self.sites])


def rmse_cdf(results: BatchResults, method: str) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of per-site RMSE: sorted values and ``F(value)``.

    Equal values share the right-continuous step height, so ``F`` at a value
    counts every site at or below it.
    """
    if not results.sites:
        raise ValueError("batch has no sites")
    values = np.sort(results.rmse_values(method))
    cum = np.searchsorted(values, values, side="right") / len(values)
    return values, cum


def best_model_per_site(results: BatchResults, methods: Sequence[str] | None = None) -> list[tuple[str, str, float]]:
    """Lowest-RMSE method for every site, ties going to the canonical order."""
    if not results.sites:
        raise ValueError("batch has no sites")
    rows = []
    for site in results.sites:
        candidates = [m for m in (methods or site.fits) if m in site.fits]
        best = min(candidates, key=lambda m: (site.fits[m].rmse, method_rank(m), m))
        rows.append((site.site_id, best, float(site.fits[best].rmse)))
    return rows


@dataclass(frozen=True)
class QuantileGroup:
    index: int
    site_ids: tuple
    rmse_range: tuple
    los_fraction_range: tuple
    winners: dict

    @property
    def count(self) -> int:
        return len(self.site_ids)


def quantile_groups(results: BatchResults, k: int = 5, methods: Sequence[str] | None = None) -> list[QuantileGroup]:
    """Split sites into ``k`` equal-count groups by best-method RMSE.

    Sites are ordered by (best RMSE, site_id); group sizes differ by at most
    one when the site count is not a multiple of ``k``.
    """
    if len(results.sites) < k:
        raise ValueError(f"need at least {k} sites, got {len(results.sites)}")
    best = best_model_per_site(results, methods)
    frac = {s.site_id: s.los_fraction for s in results.sites}
    order = sorted(range(len(best)), key=lambda i: (best[i][2], best[i][0]))
    groups = []
    for g, idx in enumerate(np.array_split(np.array(order, dtype=int), k)):
        rows = [best[i] for i in idx]
        fr = [frac[r[0]] for r in rows]
        winners: dict[str, int] = {}
        for _, m, _ in rows:
            winners[m] = winners.get(m, 0) + 1
        groups.append(QuantileGroup(
            index=g,
            site_ids=tuple(r[0] for r in rows),
            rmse_range=(min(r[2] for r in rows), max(r[2] for r in rows)),
            los_fraction_range=(min(fr), max(fr)),
            winners=dict(sorted(winners.items(), key=lambda kv: method_rank(kv[0]))),
        ))
    return groups


def mean_rmse(results: BatchResults, methods: Iterable[str]) -> float:
    """Mean over sites of the best RMSE among ``methods``."""
    methods = list(methods)
    return float(np.mean([min(s.fits[m].rmse for m in methods if m in s.fits) for s in results.sites]))
