"""Generalized LOS-zone boundaries around a station.

Two representations of the zone-1 (LOS-dense) region are provided:

* a star-shaped radius function ``r_b(theta) = a0 + sum_n a_n cos(n theta) +
  b_n sin(n theta)`` fitted to ray-walk samples of the visibility map with a
  one-sided penalty, and
* the zero level set of a bagged nu-SVC decision function trained on the
  LOS/NLOS labels of the pixel mesh.

Both answer signed-distance queries (positive inside zone 1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geodata import BaseStation, GridSpec
from .numerics import LmOptions, SvcEnsemble, bagging_train, decision_on_grid, lm_solve, nu_max
from .viewshed import LOS, OUTSIDE, VisibilityMap

log = logging.getLogger(__name__)

W0_GRID = (0.1, 0.3, 0.5, 0.7, 1.0)
N_RANGE = (2, 5)
TRIG_LM_OPTIONS = LmOptions(initial_damping=1e-12)
"""The weighted trig problem is linear, so the first LM step starts at
Gauss-Newton. A larger start leaves a residual error whose cost decrease
falls below the rounding noise of the residuals and is never recovered."""
POLYLINE_POINTS = 1024


@dataclass(frozen=True)
class BoundarySamples:
    station: BaseStation
    angles: np.ndarray
    radii: np.ndarray
    radius_m: float

    def points(self) -> np.ndarray:
        return np.column_stack([self.station.x + self.radii * np.cos(self.angles),
                                self.station.y + self.radii * np.sin(self.angles)])


def extract_los_boundary(vm: VisibilityMap, M: int = 100, gap_window_m: float = 20.0) -> BoundarySamples:
    """Sample the LOS extent along ``M`` uniformly spaced rays.

    Each ray is walked outward at half-cell steps. Its radius is the distance
    of the last LOS sample before the first NLOS stretch longer than
    ``gap_window_m``; shorter NLOS gaps are stepped over. A ray that stays
    LOS to the analysis radius gets the full radius; one cut short by the
    raster edge keeps its last LOS distance.
    """
    if M < 8:
        raise ValueError("need at least 8 boundary samples")
    spec = vm.spec
    step = spec.cell_size / 2
    n_steps = int(math.floor(vm.radius_m / step + 1e-9))
    angles = 2 * np.pi * np.arange(M) / M
    dist = step * np.arange(1, n_steps + 1)
    xs = vm.station.x + np.cos(angles)[:, None] * dist[None, :]
    ys = vm.station.y + np.sin(angles)[:, None] * dist[None, :]
    cols = np.floor((xs - spec.origin_x) / spec.cell_size).astype(np.int64)
    rows = np.floor((ys - spec.origin_y) / spec.cell_size).astype(np.int64)
    inside = (cols >= 0) & (cols < spec.n_cols) & (rows >= 0) & (rows < spec.n_rows)
    states = np.full(xs.shape, OUTSIDE, dtype=np.int8)
    states[inside] = vm.states[rows[inside], cols[inside]]

    radii = np.empty(M)
    for m in range(M):
        last_los = 0.0
        radius = None
        all_los = True
        for k in range(n_steps):
            s = states[m, k]
            if s == OUTSIDE:
                break
            if s == LOS:
                last_los = dist[k]
            else:
                all_los = False
                if dist[k] - last_los > gap_window_m:
                    radius = last_los
                    break
        if radius is None:
            # pixels just inside the rim can already be OUTSIDE, hence the one-diagonal allowance
            reached_rim = last_los >= vm.radius_m - math.sqrt(2) * spec.cell_size
            radius = vm.radius_m if all_los and reached_rim else last_los
        radii[m] = radius
    return BoundarySamples(vm.station, angles, radii, vm.radius_m)


def trig_basis(theta, n_order: int) -> np.ndarray:
    """Columns ``[1, cos(theta)..cos(N theta), sin(theta)..sin(N theta)]``."""
    theta = np.asarray(theta, dtype=float).ravel()
    n = np.arange(1, n_order + 1)
    return np.hstack([np.ones((len(theta), 1)), np.cos(np.outer(theta, n)), np.sin(np.outer(theta, n))])


@dataclass(frozen=True)
class TrigBoundary:
    center_x: float
    center_y: float
    a0: float
    a: np.ndarray
    b: np.ndarray
    w0: float = 1.0
    r_min: float = 25.0
    converged: bool = True
    rounds: int = 0

    @property
    def order(self) -> int:
        return len(self.a)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.a0], self.a, self.b])

    def series(self, theta) -> np.ndarray:
        """Unclamped series value."""
        return trig_basis(theta, self.order) @ self.coefficients

    def polyline(self, n: int = POLYLINE_POINTS) -> np.ndarray:
        theta = 2 * np.pi * np.arange(n) / n
        r = eval_trig_radius(self, theta)
        return np.column_stack([self.center_x + r * np.cos(theta), self.center_y + r * np.sin(theta)])

    @cached_property
    def _tree(self):
        return cKDTree(self.polyline())

    def signed_distances(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        px, py = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
        verts = self.polyline()
        n = len(verts)
        _, near = self._tree.query(np.column_stack([px, py]), k=4)
        best = np.full(len(px), np.inf)
        for col in range(near.shape[1]):
            v = near[:, col]
            for a_idx, b_idx in ((v, (v + 1) % n), ((v - 1) % n, v)):
                best = np.minimum(best, _segment_distance(px, py, verts[a_idx], verts[b_idx]))
        dx, dy = px - self.center_x, py - self.center_y
        inside = np.hypot(dx, dy) <= eval_trig_radius(self, np.arctan2(dy, dx))
        return np.where(inside, best, -best).reshape(shape)

    def to_dict(self) -> dict:
        return {"kind": "trig", "center": [self.center_x, self.center_y], "a0": self.a0,
                "a": self.a.tolist(), "b": self.b.tolist(), "order": self.order, "w0": self.w0,
                "r_min": self.r_min, "converged": self.converged}


def _segment_distance(px, py, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    len2 = np.maximum((ab * ab).sum(axis=1), 1e-300)
    t = np.clip(((px - a[:, 0]) * ab[:, 0] + (py - a[:, 1]) * ab[:, 1]) / len2, 0.0, 1.0)
    return np.hypot(px - (a[:, 0] + t * ab[:, 0]), py - (a[:, 1] + t * ab[:, 1]))


def eval_trig_radius(model: TrigBoundary, theta) -> np.ndarray:
    """Boundary radius at polar angle(s), floored at ``r_min``."""
    theta = np.asarray(theta, dtype=float)
    return np.maximum(model.series(theta).reshape(theta.shape), model.r_min)


def penalty_weights(radii: np.ndarray, fitted: np.ndarray, w0: float, mode: str = "normalized") -> np.ndarray:
    """``w0`` where the sample lies beyond the boundary; 1 (or 0 in ``"paper"`` mode) elsewhere."""
    inner = {"normalized": 1.0, "paper": 0.0}[mode]
    return np.where(radii > fitted, w0, inner)


def fit_trig_series(samples: BoundarySamples, n_order: int, w0: float = 1.0, opts: LmOptions = TRIG_LM_OPTIONS,
                    r_min: float = 25.0, mode: str = "normalized", max_rounds: int = 20) -> TrigBoundary:
    """Penalty-weighted least squares fit of one series order.

    Weights depend on which side of the current boundary each sample falls,
    so weight assignment and the LM solve alternate until the set of samples
    beyond the boundary stops changing.
    """
    if len(samples.radii) < 2 * n_order + 1:
        raise ValueError(f"need at least {2 * n_order + 1} samples for order {n_order}")
    if not 0 <= w0 <= 1:
        raise ValueError("w0 must lie in [0, 1]")
    B = trig_basis(samples.angles, n_order)
    r = samples.radii
    coef = np.zeros(B.shape[1])
    coef[0] = float(np.mean(r))
    beyond = None
    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        w = penalty_weights(r, B @ coef, w0, mode)
        res = lm_solve(lambda c: w * (r - B @ c), coef, lambda c: -w[:, None] * B, opts)
        coef = res.params
        now_beyond = r > B @ coef
        if beyond is not None and np.array_equal(now_beyond, beyond):
            converged = True
            break
        beyond = now_beyond
    if not converged:
        log.warning("trig boundary (N=%d, w0=%g) active set did not settle in %d rounds", n_order, w0, max_rounds)
    return TrigBoundary(samples.station.x, samples.station.y, float(coef[0]), coef[1:n_order + 1].copy(),
                        coef[n_order + 1:].copy(), float(w0), float(r_min), converged, rounds)


def penalized_cost(samples: BoundarySamples, model: TrigBoundary, mode: str = "normalized") -> float:
    fitted = model.series(samples.angles)
    w = penalty_weights(samples.radii, fitted, model.w0, mode)
    return float(np.sum((w * (samples.radii - fitted)) ** 2))


def fit_trig_boundary(samples: BoundarySamples, n_range: Sequence[int] = N_RANGE,
                      w0_grid: Sequence[float] = W0_GRID, opts: LmOptions = TRIG_LM_OPTIONS,
                      r_min: float = 25.0, score: Callable[[TrigBoundary], float] | None = None,
                      mode: str = "normalized") -> TrigBoundary:
    """Fit every (order, w0) candidate and keep the best.

    ``score`` ranks candidates (lower is better), normally the RMSE of the
    dual-environment model built on each one. Without it candidates are
    ranked by RMS radial error against the samples. Ties keep the earlier
    candidate (lower order, then lower w0).
    """
    lo, hi = n_range
    best, best_score = None, np.inf
    for n_order in range(lo, hi + 1):
        for w0 in w0_grid:
            cand = fit_trig_series(samples, n_order, w0, opts, r_min, mode)
            if score is not None:
                value = score(cand)
            else:
                value = float(np.sqrt(np.mean((samples.radii - eval_trig_radius(cand, samples.angles)) ** 2)))
            if value < best_score or best is None:
                best, best_score = cand, value
    return best


@dataclass(eq=False)
class SvcBoundary:
    """Zero level set of a bagged nu-SVC decision over the pixel mesh."""

    ensemble: SvcEnsemble
    mesh: GridSpec
    nu: float
    step: float = field(init=False)

    def __post_init__(self):
        self.step = self.mesh.cell_size

    def decision(self, x, y) -> np.ndarray:
        pts, coef, bias = self._expansion
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        px, py = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
        out = np.full(len(px), bias)
        g = self.ensemble.gamma
        for s in range(0, len(px), 2048):
            d2 = (px[s:s + 2048, None] - pts[None, :, 0]) ** 2 + (py[s:s + 2048, None] - pts[None, :, 1]) ** 2
            out[s:s + 2048] += np.exp(-g * d2) @ coef
        return out.reshape(shape)

    @cached_property
    def _expansion(self):
        return self.ensemble.expansion()

    @cached_property
    def grid_decision(self) -> np.ndarray:
        return decision_on_grid(self.ensemble, self.mesh.centers_x(), self.mesh.centers_y())

    @cached_property
    def crossings(self) -> np.ndarray:
        """Zero crossings between 4-neighbour mesh nodes, linearly interpolated."""
        D = self.grid_decision
        xs, ys = self.mesh.centers_x(), self.mesh.centers_y()
        inside = D > 0
        pts = []
        r, c = np.nonzero(inside[:, :-1] != inside[:, 1:])
        if len(r):
            t = D[r, c] / (D[r, c] - D[r, c + 1])
            pts.append(np.column_stack([xs[c] + t * self.step, ys[r]]))
        r, c = np.nonzero(inside[:-1, :] != inside[1:, :])
        if len(r):
            t = D[r, c] / (D[r, c] - D[r + 1, c])
            pts.append(np.column_stack([xs[c], ys[r] + t * self.step]))
        return np.vstack(pts) if pts else np.empty((0, 2))

    @cached_property
    def _tree(self):
        return cKDTree(self.crossings) if len(self.crossings) else None

    def _distance(self, px, py) -> np.ndarray:
        if self._tree is None:
            return np.full(len(px), np.inf)
        dist, _ = self._tree.query(np.column_stack([px, py]))
        return dist

    def signed_distances(self, x, y, decision=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        px, py = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
        d = self.decision(px, py) if decision is None else np.asarray(decision).ravel()
        dist = self._distance(px, py)
        return np.where(d > 0, dist, -dist).reshape(shape)

    def contours(self) -> list[np.ndarray]:
        import contourpy

        gen = contourpy.contour_generator(self.mesh.centers_x(), self.mesh.centers_y(), self.grid_decision)
        return [np.asarray(line) for line in gen.lines(0.0)]

    def to_dict(self) -> dict:
        return {"kind": "svc", "nu": self.nu, "gamma": self.ensemble.gamma,
                "n_estimators": self.ensemble.n_estimators, "subsample_size": self.ensemble.subsample_size,
                "seed": self.ensemble.seed, "grid_step_m": self.step,
                "n_support_points": int(sum(len(m.support_points) for m in self.ensemble.estimators))}


def _window(vm: VisibilityMap) -> tuple[GridSpec, slice, slice]:
    rows, cols = np.nonzero(vm.states != OUTSIDE)
    r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
    spec = vm.spec
    mesh = GridSpec(spec.origin_x + c0 * spec.cell_size, spec.origin_y + r0 * spec.cell_size,
                    spec.cell_size, int(c1 - c0), int(r1 - r0))
    return mesh, slice(r0, r1), slice(c0, c1)


def fit_svc_boundary(vm: VisibilityMap, nu: float = 0.5, gamma: float = 1e-4, n_estimators: int = 20,
                     seed: int = 0, subsample_size: int | None = None) -> SvcBoundary:
    """Bagged nu-SVC on pixel-center coordinates, LOS = +1 and NLOS = -1.

    ``nu`` is lowered to 80% of its feasibility bound when the LOS/NLOS
    balance of the map cannot support it.
    """
    rows, cols = np.nonzero(vm.states != OUTSIDE)
    labels = np.where(vm.states[rows, cols] == LOS, 1.0, -1.0)
    if (labels > 0).all() or (labels < 0).all():
        raise ValueError("visibility map holds a single state; SVC boundary needs both LOS and NLOS")
    pts = np.column_stack([vm.spec.centers_x()[cols], vm.spec.centers_y()[rows]])
    nu_used = min(nu, 0.8 * nu_max(labels))
    if nu_used < nu:
        log.info("nu lowered from %g to %g for class balance", nu, nu_used)
    ensemble = bagging_train(pts, labels, nu_used, gamma, n_estimators, subsample_size, seed)
    mesh, _, _ = _window(vm)
    return SvcBoundary(ensemble, mesh, float(nu_used))


def signed_distance(boundary: TrigBoundary | SvcBoundary, point) -> float:
    """Signed distance (m) from a point to the boundary, positive inside zone 1."""
    return float(boundary.signed_distances(point[0], point[1]))


def pixel_signed_distances(boundary: TrigBoundary | SvcBoundary, vm: VisibilityMap,
                           mask: np.ndarray | None = None) -> np.ndarray:
    """Signed distance for the pixels of ``vm`` selected by ``mask`` (row-major order).

    ``mask`` defaults to every evaluated pixel.
    """
    mask = vm.states != OUTSIDE if mask is None else mask & (vm.states != OUTSIDE)
    if isinstance(boundary, SvcBoundary) and boundary.mesh == _window(vm)[0]:
        _, rs, cs = _window(vm)
        sub = mask[rs, cs]
        rows, cols = np.nonzero(sub)
        xs, ys = boundary.mesh.centers_x()[cols], boundary.mesh.centers_y()[rows]
        return boundary.signed_distances(xs, ys, decision=boundary.grid_decision[rows, cols])
    rows, cols = np.nonzero(mask)
    return boundary.signed_distances(vm.spec.centers_x()[cols], vm.spec.centers_y()[rows])


def boundary_geojson(boundary: TrigBoundary | SvcBoundary) -> dict:
    """Feature with the boundary line(s) and its coefficients/hyper-parameters as properties."""
    if isinstance(boundary, TrigBoundary):
        line = boundary.polyline()
        geometry = {"type": "LineString", "coordinates": np.vstack([line, line[:1]]).tolist()}
    else:
        lines = [ln.tolist() for ln in boundary.contours()]
        geometry = ({"type": "LineString", "coordinates": lines[0]} if len(lines) == 1
                    else {"type": "MultiLineString", "coordinates": lines})
    return {"type": "Feature", "geometry": geometry, "properties": boundary.to_dict()}


__all__ = [
    "BoundarySamples", "TrigBoundary", "SvcBoundary", "extract_los_boundary", "eval_trig_radius",
    "TRIG_LM_OPTIONS", "fit_trig_series", "fit_trig_boundary", "fit_svc_boundary", "signed_distance",
    "pixel_signed_distances", "boundary_geojson", "penalized_cost", "penalty_weights", "trig_basis",
]
