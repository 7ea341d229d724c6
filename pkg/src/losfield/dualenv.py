"""Dual-environment LOS probability model.

A site is split into a LOS-dense zone 1 around the station and an NLOS-dense
zone 2 beyond a boundary. With ``x`` the signed distance to the boundary
(positive inside zone 1) the model is::

    p(d) = p1(d) f(x) + p2(d) (1 - f(x)),    f(x) = Phi((x - mu_h) / sigma_h)

where ``p1`` has the UMa form, ``p2`` the RMa form and ``Phi`` is the
standard normal CDF. ``f`` is averaged over each distance ring into a
per-bin zone fraction ``F(d)`` so the fit is one-dimensional in ``d``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit, ndtr

from . import stats
from .boundary import SvcBoundary, TrigBoundary, pixel_signed_distances
from .losmodel import (RMA_DEFAULTS, UMA_DEFAULTS, FitResult, ProbabilityCurve, SingleEnvParams, curve_weights,
                       from_log, pixel_bins, uma, uma_log_jacobian)
from .numerics import LmOptions, lm_solve
from .viewshed import OUTSIDE, VisibilityMap

log = logging.getLogger(__name__)

_D3_RANGE = (1e-6, 1.0 - 1e-9)
_ZONE_TOL = 1e-12


@dataclass(frozen=True)
class TransitionParams:
    mu_h: float = 0.0
    sigma_h: float = 50.0
    mode: str = "erf"

    def __post_init__(self):
        if self.mode not in ("erf", "hard"):
            raise ValueError(f"unknown transition mode {self.mode!r}")
        if self.mode == "erf" and not self.sigma_h > 0:
            raise ValueError("sigma_h must be positive in erf mode")

    def to_dict(self) -> dict:
        return {"mu_h": self.mu_h, "sigma_h": self.sigma_h, "mode": self.mode}


def transition_f(params: TransitionParams, x) -> np.ndarray:
    """Zone-1 weight at signed boundary distance ``x``."""
    x = np.asarray(x, dtype=float)
    if params.mode == "hard":
        return (x > 0).astype(float)
    return ndtr((x - params.mu_h) / params.sigma_h)


@dataclass(frozen=True)
class ZoneGeometry:
    """Per-pixel signed distances and distance-bin indices for one site."""

    signed_distance: np.ndarray
    bin_index: np.ndarray
    n_bins: int

    def fractions(self, transition: TransitionParams) -> np.ndarray:
        """Ring-averaged zone-1 weight per bin, NaN for empty bins."""
        f = transition_f(transition, self.signed_distance)
        n = np.bincount(self.bin_index, minlength=self.n_bins)
        total = np.bincount(self.bin_index, weights=f, minlength=self.n_bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.clip(total / n, 0.0, 1.0)


def zone_geometry(boundary: TrigBoundary | SvcBoundary, vm: VisibilityMap, bin_width: float = 10.0,
                  stride: int = 1) -> ZoneGeometry:
    """Signed distances and bin indices of the evaluated pixels.

    ``stride > 1`` keeps every ``stride``-th row and column only, a cheaper
    approximation used to rank boundary candidates.
    """
    edges, _, _ = pixel_bins(vm, bin_width)
    mask = vm.states != OUTSIDE
    if stride > 1:
        lattice = np.zeros_like(mask)
        lattice[::stride, ::stride] = True
        mask &= lattice
    n_bins = len(edges) - 1
    idx = np.minimum((vm.distances()[mask] / bin_width).astype(np.int64), n_bins - 1)
    return ZoneGeometry(pixel_signed_distances(boundary, vm, mask), idx, n_bins)


def zone_fraction_curve(boundary: TrigBoundary | SvcBoundary, vm: VisibilityMap,
                        transition: TransitionParams = TransitionParams(), bin_width: float = 10.0) -> np.ndarray:
    """Per-bin mean of ``transition_f(signed_distance(pixel))`` over evaluated pixels."""
    return zone_geometry(boundary, vm, bin_width).fractions(transition)


@dataclass(frozen=True)
class DualEnvModel:
    boundary: TrigBoundary | SvcBoundary | None
    transition: TransitionParams
    zone1: SingleEnvParams
    zone2: SingleEnvParams

    def __post_init__(self):
        if self.zone1.form != "UMa" or self.zone2.form != "RMa":
            raise ValueError("zone 1 takes the UMa form and zone 2 the RMa form")

    def mix(self, d, F) -> np.ndarray:
        return mix(self.zone1(d), self.zone2(d), F)

    def to_dict(self, rmse: float | None = None) -> dict:
        out = {
            "boundary": None if self.boundary is None else self.boundary.to_dict(),
            "transition": self.transition.to_dict(),
            "zone1": {"form": "UMa", "d1": self.zone1.d1, "d2": self.zone1.d2},
            "zone2": {"form": "RMa", "d3": self.zone2.d3, "d4": self.zone2.d4},
        }
        if rmse is not None:
            out["rmse"] = rmse
        return out


def mix(p1, p2, F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    return np.asarray(p1) * F + np.asarray(p2) * (1.0 - F)


def rma(d3: float, d4: float, d) -> np.ndarray:
    return d3 * np.exp(-np.asarray(d, dtype=float) / d4)


def pixel_mixed_curve(model: DualEnvModel, geometry: ZoneGeometry, distances: np.ndarray) -> np.ndarray:
    """Model curve from per-pixel mixing at each pixel's own distance.

    Kept to validate the ring-averaged form used for fitting.
    """
    f = transition_f(model.transition, geometry.signed_distance)
    p = mix(model.zone1(distances), model.zone2(distances), f)
    n = np.bincount(geometry.bin_index, minlength=geometry.n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.bincount(geometry.bin_index, weights=p, minlength=geometry.n_bins) / n


def fit_dual(curve: ProbabilityCurve, F, site_id: str = "", los_fraction: float = float("nan"),
             method: str = "DualTrig", opts: LmOptions = LmOptions(), weighted: bool = True,
             geometry: ZoneGeometry | None = None, transition: TransitionParams = TransitionParams(),
             co_fit_transition: bool = False, boundary=None) -> FitResult:
    """Jointly fit zone-1 (d1, d2) and zone-2 (d3, d4) against a curve.

    Bins where ``F`` is undefined are skipped. When ``F`` is identically 1
    (or 0) over the fitted bins the other zone is unidentifiable; its
    parameters stay at their defaults and are reported as fixed. With
    ``co_fit_transition`` the transition centre and width are fitted too,
    which needs the per-pixel ``geometry``.
    """
    F = np.asarray(F, dtype=float)
    if F.shape != curve.p_los.shape:
        raise ValueError("zone fractions and curve bins differ in length")
    if co_fit_transition and (geometry is None or transition.mode != "erf"):
        raise ValueError("co-fitting the transition needs per-pixel geometry and erf mode")
    ok_curve, sw_all = curve_weights(curve, weighted)
    ok = ok_curve & np.isfinite(F)
    if ok.sum() < 4:
        raise ValueError(f"dual fit needs at least 4 populated bins, got {int(ok.sum())}")
    sw = sw_all[ok[ok_curve]]
    d, p, Fk = curve.bin_centers[ok], curve.p_los[ok], F[ok]

    fit_zone1 = not np.all(Fk <= _ZONE_TOL)
    fit_zone2 = not np.all(Fk >= 1 - _ZONE_TOL)
    fixed = [] if fit_zone1 and fit_zone2 else (["d1", "d2"] if not fit_zone1 else ["d3", "d4"])

    def unpack(u):
        u = list(u)
        d1, d2 = (float(v) for v in from_log(u[:2])) if fit_zone1 else (UMA_DEFAULTS.d1, UMA_DEFAULTS.d2)
        u = u[2:] if fit_zone1 else u
        if fit_zone2:
            d3 = float(np.clip(expit(u[0]), *_D3_RANGE))
            d4 = float(from_log(u[1]))
            u = u[2:]
        else:
            d3, d4 = RMA_DEFAULTS.d3, RMA_DEFAULTS.d4
        tr = transition
        if co_fit_transition:
            tr = TransitionParams(float(u[0]), float(from_log(u[1])), "erf")
        return d1, d2, d3, d4, tr

    def fractions(tr):
        return Fk if not co_fit_transition else geometry.fractions(tr)[ok]

    def residual(u):
        d1, d2, d3, d4, tr = unpack(u)
        return sw * (mix(uma(d1, d2, d), rma(d3, d4, d), fractions(tr)) - p)

    def jacobian(u):
        d1, d2, d3, d4, _ = unpack(u)
        cols = []
        if fit_zone1:
            cols.append(uma_log_jacobian(d1, d2, d) * Fk[:, None])
        if fit_zone2:
            e = np.exp(-d / d4)
            cols.append(np.column_stack([e * d3 * (1 - d3), d3 * e * d / d4]) * (1 - Fk)[:, None])
        return np.hstack(cols) * sw[:, None]

    below = np.flatnonzero(p < 0.98)
    knee = max(float(d[below[0]]) - 5.0, 1.0) if len(below) else float(d[-1])
    tail = float(np.clip(np.mean(p[-max(len(p) // 5, 1):]), 0.02, 0.95))
    z1_starts = [(UMA_DEFAULTS.d1, UMA_DEFAULTS.d2), (knee, 30.0), (knee, 300.0)] if fit_zone1 else [()]
    z2_starts = [(tail, 1000.0), (tail, 200.0)] if fit_zone2 else [()]
    best = None
    for z1, z2 in itertools.product(z1_starts, z2_starts):
        init = list(np.log(z1)) if z1 else []
        if z2:
            init += [float(logit(z2[0])), float(np.log(z2[1]))]
        if co_fit_transition:
            init += [transition.mu_h, float(np.log(transition.sigma_h))]
        try:
            res = lm_solve(residual, np.array(init), None if co_fit_transition else jacobian, opts)
        except (ValueError, FloatingPointError) as exc:
            log.warning("dual fit start failed for %s: %s", site_id, exc)
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        model = DualEnvModel(boundary, transition, UMA_DEFAULTS, RMA_DEFAULTS)
        score = stats.rmse(_masked(curve, ok), lambda x: model.mix(x, Fk), weighted)
        return FitResult(site_id, method, _params(model, fixed), score, los_fraction, False, "every start failed")
    d1, d2, d3, d4, tr = unpack(best.params)
    model = DualEnvModel(boundary, tr, SingleEnvParams("UMa", d1, d2), SingleEnvParams("RMa", d3=d3, d4=d4))
    Fbest = fractions(tr)
    score = stats.rmse(_masked(curve, ok), lambda x: model.mix(x, Fbest), weighted)
    return FitResult(site_id, method, _params(model, fixed), score, los_fraction, best.converged, best.message)


def _masked(curve: ProbabilityCurve, ok: np.ndarray) -> ProbabilityCurve:
    return ProbabilityCurve(curve.bin_edges, curve.p_los, np.where(ok, curve.n_pixels, 0))


def _params(model: DualEnvModel, fixed: list) -> dict:
    return {"d1": model.zone1.d1, "d2": model.zone1.d2, "d3": model.zone2.d3, "d4": model.zone2.d4,
            "mu_h": model.transition.mu_h, "sigma_h": model.transition.sigma_h,
            "transition_mode": model.transition.mode, "fixed": fixed}


def dual_model_json(result: FitResult, boundary_ref: str | None = None) -> dict:
    """Export block: boundary reference, transition, zone parameters and rmse."""
    p = result.params
    return {
        "site_id": result.site_id,
        "method": result.method,
        "boundary": boundary_ref,
        "transition": {"mu_h": p["mu_h"], "sigma_h": p["sigma_h"], "mode": p["transition_mode"]},
        "zone1": {"form": "UMa", "d1": p["d1"], "d2": p["d2"]},
        "zone2": {"form": "RMa", "d3": p["d3"], "d4": p["d4"]},
        "fixed": p["fixed"],
        "rmse": result.rmse,
        "converged": result.converged,
    }
