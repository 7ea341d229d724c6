"""Two-class nu-SVC with a Gaussian kernel, plus bootstrap aggregating.

The dual is solved in the scaled form used by LIBSVM::

    min_a  0.5 a^T Q a    s.t.  0 <= a_i <= 1,  y^T a = 0,  e^T a = nu * M

with ``Q_ij = y_i y_j k(x_i, x_j)``, by SMO over same-label pairs
(second-order working-set selection). Models are stored in the unscaled
convention ``alpha = a / M`` so that ``0 <= alpha_i <= 1/M`` and
``sum(alpha) = nu``; the decision function is
``d(x) = sum_i alpha_i y_i k(x, x_i) + b`` and margin errors are training
points with ``y d(x) < rho``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

log = logging.getLogger(__name__)

_TAU = 1e-12


def gaussian_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d2 = (a[:, None, 0] - b[None, :, 0]) ** 2 + (a[:, None, 1] - b[None, :, 1]) ** 2
    return np.exp(-gamma * d2)


@dataclass(frozen=True)
class SvcModel:
    support_points: np.ndarray
    dual_coefficients: np.ndarray
    """``alpha_i * y_i`` for every support point."""
    bias: float
    gamma: float
    nu: float
    rho: float
    n_train: int
    iterations: int = 0
    converged: bool = True

    def decision(self, x) -> np.ndarray:
        return svc_decision(self, x)


def nu_max(labels) -> float:
    """Largest feasible nu for a label vector: ``2 min(n+, n-) / M``."""
    y = np.asarray(labels)
    return 2.0 * min(np.count_nonzero(y > 0), np.count_nonzero(y < 0)) / len(y)


def _check_labels(labels: np.ndarray, nu: float) -> None:
    n_pos, n_neg = np.count_nonzero(labels > 0), np.count_nonzero(labels < 0)
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be +1 or -1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training data must contain both classes")
    if not 0 < nu < 1:
        raise ValueError(f"nu must lie in (0, 1), got {nu}")
    bound = nu_max(labels)
    if nu > bound:
        raise ValueError(f"nu={nu:g} is infeasible: must be <= 2*min(n+, n-)/M = {bound:g}")


@numba.njit(cache=True)
def _smo_nu(Q, y, a, G, tol, max_iter):
    n = len(y)
    it = 0
    while it < max_iter:
        # first index per class: maximal KKT violation
        gmax_p, gmax_n = -np.inf, -np.inf
        ip, in_ = -1, -1
        for t in range(n):
            if y[t] > 0:
                if a[t] < 1.0 and -G[t] >= gmax_p:
                    gmax_p, ip = -G[t], t
            elif a[t] > 0.0 and G[t] >= gmax_n:
                gmax_n, in_ = G[t], t
        # second index: largest second-order decrease within the same class
        gmax_p2, gmax_n2 = -np.inf, -np.inf
        best, j = np.inf, -1
        for t in range(n):
            if y[t] > 0:
                if a[t] > 0.0:
                    diff = gmax_p + G[t]
                    if G[t] >= gmax_p2:
                        gmax_p2 = G[t]
                    if diff > 0 and ip >= 0:
                        quad = Q[ip, ip] + Q[t, t] - 2.0 * Q[ip, t]
                        obj = -diff * diff / (quad if quad > 0 else _TAU)
                        if obj <= best:
                            best, j = obj, t
            elif a[t] < 1.0:
                diff = gmax_n - G[t]
                if -G[t] >= gmax_n2:
                    gmax_n2 = -G[t]
                if diff > 0 and in_ >= 0:
                    quad = Q[in_, in_] + Q[t, t] - 2.0 * Q[in_, t]
                    obj = -diff * diff / (quad if quad > 0 else _TAU)
                    if obj <= best:
                        best, j = obj, t
        if max(gmax_p + gmax_p2, gmax_n + gmax_n2) < tol or j < 0:
            return it, True
        i = ip if y[j] > 0 else in_

        old_i, old_j = a[i], a[j]
        q = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
        delta = (G[i] - G[j]) / (q if q > 0 else _TAU)
        total = old_i + old_j
        ai, aj = old_i - delta, old_j + delta
        if total > 1.0:
            if ai > 1.0:
                ai, aj = 1.0, total - 1.0
        elif aj < 0.0:
            ai, aj = total, 0.0
        if total > 1.0:
            if aj > 1.0:
                ai, aj = total - 1.0, 1.0
        elif ai < 0.0:
            ai, aj = 0.0, total
        a[i], a[j] = ai, aj
        di, dj = ai - old_i, aj - old_j
        for t in range(n):
            G[t] += Q[i, t] * di + Q[j, t] * dj
        it += 1
    return it, False


def _solve_nu_dual(K: np.ndarray, y: np.ndarray, nu: float, tol: float, max_iter: int):
    n = len(y)
    pos = y > 0
    a = np.zeros(n)
    # feasible start: spread nu*M/2 over the leading members of each class
    for mask in (pos, ~pos):
        budget = nu * n / 2
        for i in np.flatnonzero(mask):
            a[i] = min(1.0, budget)
            budget -= a[i]
            if budget <= 0:
                break
    Q = K * np.outer(y, y)
    G = Q @ a
    it, converged = _smo_nu(Q, y, a, G, tol, max_iter)

    def level(mask):
        at_up, at_low = mask & (a >= 1.0), mask & (a <= 0.0)
        free = mask & ~at_up & ~at_low
        if free.any():
            return G[free].mean()
        if not at_low.any():
            return G[at_up].max()
        if not at_up.any():
            return G[at_low].min()
        return (G[at_low].min() + G[at_up].max()) / 2

    r1, r2 = level(pos), level(~pos)
    return a, (r1 + r2) / 2, (r1 - r2) / 2, it, converged


def svc_train(points, labels, nu: float = 0.5, gamma: float = 1e-4, tolerance: float = 1e-3,
              max_iter: int | None = None) -> SvcModel:
    """Train a nu-SVC on 2-D points with labels in {-1, +1}."""
    X = np.asarray(points, dtype=float).reshape(-1, 2)
    y = np.asarray(labels, dtype=float).ravel()
    if len(X) != len(y):
        raise ValueError("points and labels differ in length")
    _check_labels(y, nu)
    n = len(y)
    if max_iter is None:
        max_iter = max(100_000, 100 * n)
    K = gaussian_kernel(X, X, gamma)
    a, r, rho_scaled, it, converged = _solve_nu_dual(K, y, nu, tolerance, max_iter)
    if not converged:
        log.warning("nu-SVC stopped at the iteration limit (%d)", max_iter)
    sv = a > 0
    return SvcModel(
        support_points=X[sv].copy(),
        dual_coefficients=(a[sv] * y[sv]) / n,
        bias=-rho_scaled / n,
        gamma=float(gamma),
        nu=float(nu),
        rho=r / n,
        n_train=n,
        iterations=it,
        converged=converged,
    )


def svc_decision(model: SvcModel, x) -> np.ndarray:
    """Decision value(s) at one point ``(x, y)`` or an ``(n, 2)`` array."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    k = gaussian_kernel(pts.reshape(-1, 2), model.support_points, model.gamma)
    d = k @ model.dual_coefficients + model.bias
    return d[0] if single else d


@dataclass(frozen=True)
class SvcEnsemble:
    estimators: tuple
    subsample_size: int
    seed: int

    def __post_init__(self):
        if len(self.estimators) < 1:
            raise ValueError("ensemble needs at least one estimator")
        if len({m.gamma for m in self.estimators}) != 1:
            raise ValueError("ensemble members must share gamma")

    @property
    def n_estimators(self) -> int:
        return len(self.estimators)

    @property
    def gamma(self) -> float:
        return self.estimators[0].gamma

    def decision(self, x) -> np.ndarray:
        return ensemble_decision(self, x)

    def expansion(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Merged kernel expansion (points, coefficients, bias) of the mean decision."""
        pts = np.vstack([m.support_points for m in self.estimators])
        coef = np.concatenate([m.dual_coefficients for m in self.estimators]) / self.n_estimators
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inverse.ravel(), coef)
        return uniq, merged, float(np.mean([m.bias for m in self.estimators]))


def ensemble_decision(ensemble: SvcEnsemble, x) -> np.ndarray:
    """Mean of the member decision values."""
    values = [svc_decision(m, x) for m in ensemble.estimators]
    return np.mean(values, axis=0)


def decision_on_grid(ensemble: SvcEnsemble, xs: np.ndarray, ys: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Mean decision on the mesh ``ys x xs`` (rows by columns).

    The Gaussian kernel factors over the two axes, so the grid evaluation is
    a sequence of matrix products instead of a point-by-point sum.
    """
    pts, coef, bias = ensemble.expansion()
    g = ensemble.gamma
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    out = np.full((len(ys), len(xs)), bias)
    for s in range(0, len(pts), chunk):
        p, c = pts[s:s + chunk], coef[s:s + chunk]
        ex = np.exp(-g * (xs[:, None] - p[None, :, 0]) ** 2)
        ey = np.exp(-g * (ys[:, None] - p[None, :, 1]) ** 2)
        out += (ey * c) @ ex.T
    return out


def bagging_train(points, labels, nu: float = 0.5, gamma: float = 1e-4, n_estimators: int = 20,
                  subsample_size: int | None = None, seed: int = 0, bootstrap: bool = True,
                  tolerance: float = 1e-3, max_retries: int = 20) -> SvcEnsemble:
    """Bagged nu-SVC; each member trains on its own seeded resample.

    ``subsample_size`` defaults to ``min(2000, M)``. With ``bootstrap=False``
    members draw without replacement (the full set when the subsample covers
    every point).
    """
    X = np.asarray(points, dtype=float).reshape(-1, 2)
    y = np.asarray(labels, dtype=float).ravel()
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    M = len(y)
    m = min(2000, M) if subsample_size is None else int(subsample_size)
    if not bootstrap:
        m = min(m, M)
    members = []
    for e, child in enumerate(np.random.SeedSequence(seed).spawn(n_estimators)):
        rng = np.random.default_rng(child)
        for _ in range(max_retries):
            idx = rng.integers(0, M, m) if bootstrap else np.sort(rng.choice(M, m, replace=False))
            ys = y[idx]
            if (ys > 0).any() and (ys < 0).any() and nu <= nu_max(ys):
                break
        else:
            raise ValueError(f"estimator {e}: no resample with both classes and feasible nu after {max_retries} draws")
        members.append(svc_train(X[idx], ys, nu, gamma, tolerance))
    return SvcEnsemble(tuple(members), m, seed)
