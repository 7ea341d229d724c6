"""Empirical LOS-probability curves and single-environment model fits.

Two distance laws are supported::

    UMa:  p(d) = min(d1/d, 1) * (1 - exp(-d/d2)) + exp(-d/d2)
    RMa:  p(d) = d3 * exp(-d/d4)

Fits run on log-distances (and a logistic amplitude) so every parameter
stays in range without box constraints.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .numerics import LmOptions, lm_solve
from .viewshed import LOS, OUTSIDE, VisibilityMap


@dataclass(frozen=True)
class ProbabilityCurve:
    bin_edges: np.ndarray
    p_los: np.ndarray
    """LOS ratio per bin, NaN where the bin holds no pixels."""
    n_pixels: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        p = np.asarray(self.p_los, dtype=float)
        n = np.asarray(self.n_pixels, dtype=np.int64)
        if len(edges) != len(p) + 1 or len(n) != len(p):
            raise ValueError("need len(bin_edges) == len(p_los) + 1 == len(n_pixels) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must increase")
        ok = n > 0
        if np.any((p[ok] < 0) | (p[ok] > 1)):
            raise ValueError("p_los must lie in [0, 1]")
        p = np.where(ok, p, np.nan)
        for name, arr in (("bin_edges", edges), ("p_los", p), ("n_pixels", n)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def populated(self) -> np.ndarray:
        return self.n_pixels > 0

    @classmethod
    def from_model(cls, model, bin_edges, n_pixels=None) -> "ProbabilityCurve":
        """Curve whose bins hold ``model(bin_center)`` exactly."""
        edges = np.asarray(bin_edges, dtype=float)
        centers = 0.5 * (edges[:-1] + edges[1:])
        n = np.ones(len(centers), dtype=np.int64) if n_pixels is None else n_pixels
        return cls(edges, np.asarray(model(centers), dtype=float), n)


def pixel_bins(vm: VisibilityMap, bin_width: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bin edges plus (bin index, is_los) for every evaluated pixel, row-major order."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    evaluated = vm.states != OUTSIDE
    if not evaluated.any():
        raise ValueError("visibility map has no evaluated pixels")
    n_bins = max(int(np.ceil(vm.radius_m / bin_width - 1e-9)), 1)
    edges = np.arange(n_bins + 1) * float(bin_width)
    d = vm.distances()[evaluated]
    idx = np.minimum((d / bin_width).astype(np.int64), n_bins - 1)
    return edges, idx, vm.states[evaluated] == LOS


def empirical_curve(vm: VisibilityMap, bin_width: float = 10.0) -> ProbabilityCurve:
    """Fraction of LOS pixels per distance ring (rings span 0..radius)."""
    edges, idx, is_los = pixel_bins(vm, bin_width)
    n_bins = len(edges) - 1
    n = np.bincount(idx, minlength=n_bins)
    n_los = np.bincount(idx, weights=is_los.astype(float), minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = n_los / n
    return ProbabilityCurve(edges, p, n)


class FitVariant(str, enum.Enum):
    DEFAULT_3GPP = "Default3gpp"
    FITTED_3GPP = "Fitted3gpp"
    FITTED_3GPP_MIN_LOS = "Fitted3gppMinLos"


@dataclass(frozen=True)
class SingleEnvParams:
    form: str = "UMa"
    d1: float = 18.0
    d2: float = 63.0
    d3: float = 1.0
    d4: float = 1000.0

    def __post_init__(self):
        if self.form not in ("UMa", "RMa"):
            raise ValueError(f"unknown form {self.form!r}")
        if not (self.d1 > 0 and self.d2 > 0 and self.d4 > 0):
            raise ValueError("d1, d2 and d4 must be positive")
        if not 0 < self.d3 <= 1:
            raise ValueError("d3 must lie in (0, 1]")

    def __call__(self, d):
        return eval_uma(self, d) if self.form == "UMa" else eval_rma(self, d)


UMA_DEFAULTS = SingleEnvParams("UMa")
RMA_DEFAULTS = SingleEnvParams("RMa")


def _uma_terms(d1, d2, d):
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        ratio = np.where(d > d1, d1 / np.where(d > 0, d, 1.0), 1.0)
    e = np.exp(-d / d2)
    return d, ratio, e


def uma(d1: float, d2: float, d):
    _, ratio, e = _uma_terms(d1, d2, d)
    return ratio * (1 - e) + e


def eval_uma(params: SingleEnvParams, d):
    return uma(params.d1, params.d2, d)


def eval_rma(params: SingleEnvParams, d):
    d = np.asarray(d, dtype=float)
    return np.clip(params.d3 * np.exp(-d / params.d4), 0.0, 1.0)


def uma_log_jacobian(d1: float, d2: float, d) -> np.ndarray:
    """d p_UMa / d(log d1, log d2) at each distance."""
    d, ratio, e = _uma_terms(d1, d2, d)
    beyond = d > d1
    return np.column_stack([np.where(beyond, ratio * (1 - e), 0.0), (1 - ratio) * e * d / d2])


@dataclass
class FitResult:
    site_id: str
    method: str
    params: dict
    rmse: float
    los_fraction: float = float("nan")
    converged: bool = True
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "method": self.method,
            "params": self.params,
            "rmse": self.rmse,
            "los_fraction": self.los_fraction,
            "converged": self.converged,
            "message": self.message,
            "extra": self.extra,
        }


LOG_DIST_RANGE = (np.log(1e-2), np.log(1e7))
"""Clamp for log-distance parameters during fitting."""


def from_log(u) -> np.ndarray:
    return np.exp(np.clip(u, *LOG_DIST_RANGE))


def curve_weights(curve: ProbabilityCurve, weighted: bool = True):
    ok = curve.populated
    w = curve.n_pixels[ok].astype(float) if weighted else np.ones(int(ok.sum()))
    return ok, np.sqrt(w / w.sum())


def fit_single(curve: ProbabilityCurve, variant: FitVariant | str, site_id: str = "",
               los_fraction: float = float("nan"), defaults: SingleEnvParams = UMA_DEFAULTS,
               weighted: bool = True, opts: LmOptions = LmOptions()) -> FitResult:
    """Fit (or just score) the UMa law against an empirical curve.

    ``Default3gpp`` scores ``defaults`` unchanged, ``Fitted3gpp`` fits d2
    with d1 held at its default, and ``Fitted3gppMinLos`` fits d1 and d2.
    """
    variant = FitVariant(variant)
    ok, sw = curve_weights(curve, weighted)
    d, p = curve.bin_centers[ok], curve.p_los[ok]

    def result(params: SingleEnvParams, converged=True, message=""):
        score = stats.rmse(curve, params, weighted)
        return FitResult(site_id, variant.value, {"d1": params.d1, "d2": params.d2}, score,
                         los_fraction, converged, message)

    if variant is FitVariant.DEFAULT_3GPP:
        return result(defaults)
    free = 1 if variant is FitVariant.FITTED_3GPP else 2
    if len(d) < free:
        raise ValueError(f"curve has {len(d)} populated bins, need at least {free}")

    def unpack(u):
        dist = from_log(u)
        return (defaults.d1, float(dist[0])) if free == 1 else (float(dist[0]), float(dist[1]))

    def residual(u):
        return sw * (uma(*unpack(u), d) - p)

    def jacobian(u):
        d1, d2 = unpack(u)
        jac = uma_log_jacobian(d1, d2, d) * sw[:, None]
        return jac[:, 1:] if free == 1 else jac

    starts = [(defaults.d1, defaults.d2), (defaults.d1, 20.0), (defaults.d1, 300.0)]
    if free == 2:
        # the one-parameter optimum is a feasible point here, so start from it too
        nested = fit_single(curve, FitVariant.FITTED_3GPP, defaults=defaults, weighted=weighted, opts=opts)
        starts.insert(0, (defaults.d1, nested.params["d2"]))
        below = np.flatnonzero(p < 0.98)
        knee = max(float(d[below[0]]) - 5.0, 1.0) if len(below) else float(d[-1])
        starts += [(knee, 30.0), (knee, 300.0)]
    best = None
    for d1, d2 in starts:
        init = np.log([d2]) if free == 1 else np.log([d1, d2])
        try:
            res = lm_solve(residual, init, jacobian, opts)
        except (ValueError, FloatingPointError) as exc:
            return result(defaults, False, f"fit failed: {exc}")
        if best is None or res.cost < best.cost:
            best = res
    return result(SingleEnvParams("UMa", *unpack(best.params)), best.converged, best.message)


def curves_csv(curve: ProbabilityCurve, models: dict | None = None) -> str:
    """CSV with ``bin_center_m,p_los_empirical,n_pixels`` plus one column per model."""
    models = models or {}
    out = io.StringIO()
    out.write(",".join(["bin_center_m", "p_los_empirical", "n_pixels", *models]) + "\n")
    modeled = {name: np.asarray(fn(curve.bin_centers), dtype=float) for name, fn in models.items()}
    for b, center in enumerate(curve.bin_centers):
        p = curve.p_los[b]
        row = [repr(float(center)), "" if np.isnan(p) else repr(float(p)), str(int(curve.n_pixels[b]))]
        row += [repr(float(v[b])) for v in modeled.values()]
        out.write(",".join(row) + "\n")
    return out.getvalue()

