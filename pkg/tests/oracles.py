"""Independent reference implementations used by the tests.

These are deliberately slow, scalar and written from the definitions, so
they share no code with the package.
"""

import math

import numpy as np

from losfield.geodata import BaseStation, GridSpec, SurfaceRaster


def random_block_scene(seed: int, n: int = 64, cell: float = 2.0):
    """Flat-ish terrain with random rectangular blocks and a station on open ground."""
    rng = np.random.default_rng(seed)
    heights = np.zeros((n, n))
    for _ in range(rng.integers(6, 14)):
        w, d = rng.integers(3, 10, 2)
        r, c = rng.integers(0, n - d), rng.integers(0, n - w)
        heights[r:r + d, c:c + w] = np.maximum(heights[r:r + d, c:c + w], rng.uniform(3, 35))
    ground = rng.uniform(0, 2) + np.zeros((n, n))
    lo, hi = n * 3 // 8, n * 5 // 8
    free = np.argwhere(heights[lo:hi, lo:hi] == 0)
    r, c = free[rng.integers(len(free))] + lo
    station = BaseStation("s", (c + 0.5) * cell, (r + 0.5) * cell, float(rng.uniform(8, 30)))
    return SurfaceRaster(GridSpec(0.0, 0.0, cell, n, n), ground, ground + heights), station


def bilinear(values, spec: GridSpec, x: float, y: float) -> float:
    """Bilinear interpolation between pixel centers, clamped at the grid edge."""
    fx = min(max((x - spec.origin_x) / spec.cell_size - 0.5, 0.0), spec.n_cols - 1.0)
    fy = min(max((y - spec.origin_y) / spec.cell_size - 0.5, 0.0), spec.n_rows - 1.0)
    c0 = min(int(math.floor(fx)), spec.n_cols - 2)
    r0 = min(int(math.floor(fy)), spec.n_rows - 2)
    wx, wy = fx - c0, fy - r0
    return (values[r0][c0] * (1 - wx) * (1 - wy) + values[r0][c0 + 1] * wx * (1 - wy)
            + values[r0 + 1][c0] * (1 - wx) * wy + values[r0 + 1][c0 + 1] * wx * wy)


def brute_force_viewshed(surface: SurfaceRaster, station: BaseStation, radius: float, rx_height: float = 1.5):
    """Per-pixel profile walk at quarter-cell spacing: 1 LOS, 0 NLOS, -1 outside."""
    spec = surface.spec
    S, G = surface.surface.tolist(), surface.ground.tolist()
    out = np.full(spec.shape, -1)
    z0 = bilinear(G, spec, station.x, station.y) + station.antenna_height_m
    home = (int((station.y - spec.origin_y) // spec.cell_size), int((station.x - spec.origin_x) // spec.cell_size))
    for r in range(spec.n_rows):
        for c in range(spec.n_cols):
            x = spec.origin_x + (c + 0.5) * spec.cell_size
            y = spec.origin_y + (r + 0.5) * spec.cell_size
            length = math.hypot(x - station.x, y - station.y)
            if length > radius:
                continue
            if (r, c) == home:
                out[r, c] = 1
                continue
            z1 = G[r][c] + rx_height
            n = max(math.ceil(length / (0.25 * spec.cell_size)), 1)
            visible = 1
            for k in range(1, n):
                t = k / n
                if bilinear(S, spec, station.x + t * (x - station.x), station.y + t * (y - station.y)) > z0 + t * (z1 - z0):
                    visible = 0
                    break
            out[r, c] = visible
    return out


def uma_closed_form(d1: float, d2: float, d: float) -> float:
    if d <= 0:
        return 1.0
    return min(d1 / d, 1.0) * (1 - math.exp(-d / d2)) + math.exp(-d / d2)


def normal_cdf(z: float) -> float:
    return 0.5 * (1 + math.erf(z / math.sqrt(2)))
