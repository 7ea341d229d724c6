"""Deterministic line-of-sight visibility over a surface raster.

A receiver pixel is visible when the straight ray from the antenna to the
receiver stays at or above the bilinearly interpolated surface at every
sample strictly between the two endpoints. Samples are spaced at most half a
cell apart along the ray (a quarter cell by default).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numba
import numpy as np

from .geodata import BaseStation, GridSpec, Raster, SurfaceRaster, bilinear_sample

LOS, NLOS, OUTSIDE = 1, 0, -1


@dataclass(frozen=True)
class RxSpec:
    rx_height_m: float = 1.5

    def __post_init__(self):
        if self.rx_height_m < 0:
            raise ValueError("rx_height_m must be >= 0")


@dataclass(frozen=True)
class VisibilityMap:
    spec: GridSpec
    station: BaseStation
    radius_m: float
    states: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int8)
        if states.shape != self.spec.shape:
            raise ValueError("states shape does not match grid")
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    def distances(self) -> np.ndarray:
        """Distance (m) from the station to every pixel center."""
        dx = self.spec.centers_x()[None, :] - self.station.x
        dy = self.spec.centers_y()[:, None] - self.station.y
        return np.hypot(dx, dy)

    def to_raster(self) -> Raster:
        return Raster(self.spec, self.states.astype(float))

    def crop(self) -> "VisibilityMap":
        """Same map restricted to the bounding window of its evaluated pixels."""
        rows, cols = np.nonzero(self.states != OUTSIDE)
        if not len(rows):
            return self
        r0, r1, c0, c1 = rows.min(), rows.max() + 1, cols.min(), cols.max() + 1
        s = self.spec
        spec = GridSpec(s.origin_x + c0 * s.cell_size, s.origin_y + r0 * s.cell_size, s.cell_size,
                        int(c1 - c0), int(r1 - r0))
        return VisibilityMap(spec, self.station, self.radius_m, self.states[r0:r1, c0:c1])

    def to_ascii(self) -> str:
        """ASCII grid with 1 (LOS), 0 (NLOS) and -1 (OUTSIDE), north row first."""
        s = self.spec
        out = io.StringIO()
        out.write(f"ncols {s.n_cols}\nnrows {s.n_rows}\n")
        out.write(f"xllcorner {s.origin_x!r}\nyllcorner {s.origin_y!r}\ncellsize {s.cell_size!r}\n")
        np.savetxt(out, self.states[::-1], fmt="%d")
        return out.getvalue()


def _ground_at(surface: SurfaceRaster, x: float, y: float) -> float:
    g = float(bilinear_sample(surface.ground, surface.spec, x, y))
    if math.isnan(g):
        raise ValueError(f"point ({x:g}, {y:g}) lies on NODATA ground")
    return g


SAMPLE_STEP = 0.25
"""Ray sampling interval as a fraction of the cell size."""


def _n_intervals(length, cell_size: float):
    return np.maximum(np.ceil(np.asarray(length) / (SAMPLE_STEP * cell_size)), 1).astype(np.int64)


def is_visible(surface: SurfaceRaster, tx: tuple[float, float, float], rx: tuple[float, float, float]) -> bool:
    """Whether the ray between two points clears the surface.

    ``tx`` and ``rx`` are ``(x, y, height_above_ground)``.
    """
    spec = surface.spec
    for name, (x, y, _) in (("tx", tx), ("rx", rx)):
        if not spec.contains(x, y):
            raise ValueError(f"{name} ({x:g}, {y:g}) is outside the raster extent")
    z0 = _ground_at(surface, tx[0], tx[1]) + tx[2]
    z1 = _ground_at(surface, rx[0], rx[1]) + rx[2]
    n = int(_n_intervals(math.hypot(rx[0] - tx[0], rx[1] - tx[1]), spec.cell_size))
    t = np.arange(1, n) / n
    s = bilinear_sample(surface.surface, spec, tx[0] + t * (rx[0] - tx[0]), tx[1] + t * (rx[1] - tx[1]))
    ray = z0 + t * (z1 - z0)
    return not bool(np.any(s > ray))


@numba.njit(cache=True)
def _march_rays(v, n_cols, n_rows, fx0, fy0, z_tx, dfx, dfy, dz, n):
    """Blocked flag per ray; rays are given in fractional pixel coordinates."""
    blocked = np.zeros(len(n), dtype=np.bool_)
    cmax, rmax = max(n_cols - 2, 0), max(n_rows - 2, 0)
    dc = 1 if n_cols > 1 else 0
    dr = n_cols if n_rows > 1 else 0
    for p in range(len(n)):
        inv = 1.0 / n[p]
        for k in range(1, n[p]):
            t = k * inv
            fx = min(max(fx0 + t * dfx[p], 0.0), n_cols - 1.0)
            fy = min(max(fy0 + t * dfy[p], 0.0), n_rows - 1.0)
            c0 = min(int(fx), cmax)
            r0 = min(int(fy), rmax)
            wx, wy = fx - c0, fy - r0
            i = r0 * n_cols + c0
            bottom = v[i] + wx * (v[i + dc] - v[i])
            i += dr
            top = v[i] + wx * (v[i + dc] - v[i])
            # NaN (NODATA) compares false and never blocks
            if bottom + wy * (top - bottom) > z_tx + t * dz[p]:
                blocked[p] = True
                break
    return blocked


def compute_viewshed(surface: SurfaceRaster, station: BaseStation, radius_m: float,
                     rx: RxSpec = RxSpec()) -> VisibilityMap:
    """Classify every pixel within ``radius_m`` of the station as LOS or NLOS."""
    if not radius_m > 0:
        raise ValueError(f"radius_m must be positive, got {radius_m}")
    spec = surface.spec
    if not spec.contains(station.x, station.y):
        raise ValueError(f"station {station.id} ({station.x:g}, {station.y:g}) is outside the raster extent")
    z_tx = _ground_at(surface, station.x, station.y) + station.antenna_height_m

    states = np.full(spec.shape, OUTSIDE, dtype=np.int8)
    dx_all = spec.centers_x()[None, :] - station.x
    dy_all = spec.centers_y()[:, None] - station.y
    dist = np.hypot(dx_all, dy_all)
    candidate = (dist <= radius_m) & ~surface.nodata_mask
    home = spec.cell_of(station.x, station.y)
    candidate[home] = False
    rows, cols = np.nonzero(candidate)

    n = _n_intervals(dist[rows, cols], spec.cell_size)
    fx0 = (station.x - spec.origin_x) / spec.cell_size - 0.5
    fy0 = (station.y - spec.origin_y) / spec.cell_size - 0.5
    dz = surface.ground[rows, cols] + rx.rx_height_m - z_tx
    blocked = _march_rays(np.ascontiguousarray(surface.surface).ravel(), spec.n_cols, spec.n_rows,
                          fx0, fy0, z_tx, cols - fx0, rows - fy0, dz, n)

    states[rows, cols] = np.where(blocked, NLOS, LOS)
    states[home] = LOS
    return VisibilityMap(spec, station, float(radius_m), states)


def los_fraction(vm: VisibilityMap) -> float:
    """LOS pixels over all evaluated (non-OUTSIDE) pixels."""
    n_los = int(np.count_nonzero(vm.states == LOS))
    n_eval = n_los + int(np.count_nonzero(vm.states == NLOS))
    if n_eval == 0:
        raise ValueError("visibility map has no evaluated pixels")
    return n_los / n_eval
