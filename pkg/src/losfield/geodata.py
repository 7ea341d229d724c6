"""Terrain, building and station inputs.

Everything here works in planar meters. Rasters are stored with row 0 at the
southern edge, so ``values[row, col]`` covers the pixel whose center is at
``(origin_x + (col + 0.5) * cell_size, origin_y + (row + 0.5) * cell_size)``.
NODATA cells are held as NaN in memory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_NODATA = -9999.0


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based, or None when not applicable."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    n_cols: int
    n_rows: int

    def __post_init__(self):
        for name, kind in (("origin_x", float), ("origin_y", float), ("cell_size", float),
                           ("n_cols", int), ("n_rows", int)):
            object.__setattr__(self, name, kind(getattr(self, name)))
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError(f"grid needs at least one cell, got {self.n_cols}x{self.n_rows}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def x_max(self) -> float:
        return self.origin_x + self.n_cols * self.cell_size

    @property
    def y_max(self) -> float:
        return self.origin_y + self.n_rows * self.cell_size

    def centers_x(self) -> np.ndarray:
        return self.origin_x + (np.arange(self.n_cols) + 0.5) * self.cell_size

    def centers_y(self) -> np.ndarray:
        return self.origin_y + (np.arange(self.n_rows) + 0.5) * self.cell_size

    def contains(self, x: float, y: float) -> bool:
        return self.origin_x <= x <= self.x_max and self.origin_y <= y <= self.y_max

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing a point, clamped to the grid."""
        col = int(math.floor((x - self.origin_x) / self.cell_size))
        row = int(math.floor((y - self.origin_y) / self.cell_size))
        return min(max(row, 0), self.n_rows - 1), min(max(col, 0), self.n_cols - 1)


@dataclass(frozen=True)
class Raster:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != self.spec.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.spec.shape}")
        if np.isinf(values).any():
            raise ValueError("raster values must be finite or NODATA")
        object.__setattr__(self, "values", values)

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(frozen=True)
class BuildingFootprint:
    """A polygon (outer ring plus optional holes) with a height above ground."""

    polygon: tuple
    height_m: float

    def __post_init__(self):
        if not self.height_m >= 0:
            raise ValueError(f"building height must be >= 0, got {self.height_m}")
        rings = []
        for ring in self.polygon:
            ring = np.asarray(ring, dtype=float).reshape(-1, 2)
            if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
                ring = ring[:-1]
            ring.flags.writeable = False
            rings.append(ring)
        object.__setattr__(self, "polygon", tuple(rings))

    def is_degenerate(self) -> bool:
        if not self.polygon:
            return True
        return any(len(np.unique(ring, axis=0)) < 3 for ring in self.polygon)

    def bounds(self) -> tuple[float, float, float, float]:
        pts = np.vstack(self.polygon)
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()


@dataclass(frozen=True)
class SurfaceRaster:
    """Ground and ground-plus-buildings heights on a shared grid."""

    spec: GridSpec
    ground: np.ndarray
    surface: np.ndarray

    def __post_init__(self):
        ground, surface = _frozen(self.ground), _frozen(self.surface)
        if ground.shape != self.spec.shape or surface.shape != self.spec.shape:
            raise ValueError("ground/surface shapes must match the grid")
        ok = ~np.isnan(ground)
        if (surface[ok] < ground[ok]).any():
            raise ValueError("surface must not lie below ground")
        object.__setattr__(self, "ground", ground)
        object.__setattr__(self, "surface", surface)

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.ground)


@dataclass(frozen=True)
class BaseStation:
    id: str
    x: float
    y: float
    antenna_height_m: float

    def __post_init__(self):
        if not self.antenna_height_m > 0:
            raise ValueError(f"antenna height must be positive, got {self.antenna_height_m}")


# ---------------------------------------------------------------------------
# ESRI ASCII grid


_REQUIRED_KEYS = ("ncols", "nrows", "cellsize")
_KNOWN_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
               "cellsize", "nodata_value"}


def _read_text(source: str | TextIO) -> str:
    return source if isinstance(source, str) else source.read()


def parse_ascii_grid(source: str | TextIO) -> Raster:
    """Parse an ESRI ASCII grid.

    The file lists the northernmost row first; the returned raster is flipped
    so that row 0 is the southernmost. Cells equal to ``NODATA_value`` become
    NaN.
    """
    lines = _read_text(source).splitlines()
    header: dict[str, float] = {}
    body_start = len(lines)
    for i, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        if not parts[0][0].isalpha():
            body_start = i
            break
        key = parts[0].lower()
        if key not in _KNOWN_KEYS or len(parts) != 2:
            raise ParseError(f"malformed header entry {line.strip()!r}", i + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(f"non-numeric header value {parts[1]!r}", i + 1) from None

    for key in _REQUIRED_KEYS:
        if key not in header:
            raise ParseError(f"missing header key {key!r}")
    for axis in ("x", "y"):
        if f"{axis}llcorner" not in header and f"{axis}llcenter" not in header:
            raise ParseError(f"missing header key '{axis}llcorner'")
    n_cols, n_rows = int(header["ncols"]), int(header["nrows"])
    cell = header["cellsize"]
    ox = header.get("xllcorner", header.get("xllcenter", 0.0) - cell / 2)
    oy = header.get("yllcorner", header.get("yllcenter", 0.0) - cell / 2)
    try:
        spec = GridSpec(ox, oy, cell, n_cols, n_rows)
    except ValueError as exc:
        raise ParseError(str(exc)) from None

    values = []
    last_line = body_start
    for i in range(body_start, len(lines)):
        for tok in lines[i].split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"non-numeric value {tok!r}", i + 1) from None
            last_line = i + 1
    if len(values) != n_cols * n_rows:
        raise ParseError(
            f"expected {n_cols * n_rows} values ({n_rows} rows x {n_cols} cols), found {len(values)}",
            last_line,
        )
    grid = np.array(values).reshape(n_rows, n_cols)[::-1]
    if "nodata_value" in header:
        grid = np.where(grid == header["nodata_value"], np.nan, grid)
    return Raster(spec, grid)


def write_ascii_grid(raster: Raster, nodata_value: float = DEFAULT_NODATA) -> str:
    """Serialize to ESRI ASCII grid text (north row first, lossless floats).

    If ``nodata_value`` occurs among the valid cells, a sentinel that does not
    (``nodata_value`` with appended nines: -9999, -99999, ...) is written
    instead, so valid data never reads back as NODATA.
    """
    spec = raster.spec
    valid = raster.values[~np.isnan(raster.values)]
    while np.any(valid == nodata_value):
        nodata_value = nodata_value * 10 + math.copysign(9.0, nodata_value)
    out = io.StringIO()
    out.write(f"ncols {spec.n_cols}\nnrows {spec.n_rows}\n")
    out.write(f"xllcorner {spec.origin_x!r}\nyllcorner {spec.origin_y!r}\n")
    out.write(f"cellsize {spec.cell_size!r}\nNODATA_value {format(nodata_value, '.17g')}\n")
    grid = np.where(np.isnan(raster.values), nodata_value, raster.values)
    for row in grid[::-1]:
        out.write(" ".join(format(v, ".17g") for v in row))
        out.write("\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Resampling and rasterization


def bilinear_sample(values: np.ndarray, spec: GridSpec, x, y) -> np.ndarray:
    """Bilinear interpolation between pixel centers.

    Points beyond the outermost centers are clamped to the edge. A result is
    NaN when any neighbour with non-zero weight is NODATA.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fx = np.clip((x - spec.origin_x) / spec.cell_size - 0.5, 0.0, spec.n_cols - 1)
    fy = np.clip((y - spec.origin_y) / spec.cell_size - 0.5, 0.0, spec.n_rows - 1)
    c0 = np.minimum(np.floor(fx).astype(np.intp), max(spec.n_cols - 2, 0))
    r0 = np.minimum(np.floor(fy).astype(np.intp), max(spec.n_rows - 2, 0))
    c1 = np.minimum(c0 + 1, spec.n_cols - 1)
    r1 = np.minimum(r0 + 1, spec.n_rows - 1)
    wx = fx - c0
    wy = fy - r0
    corners = (
        (values[r0, c0], (1 - wx) * (1 - wy)),
        (values[r0, c1], wx * (1 - wy)),
        (values[r1, c0], (1 - wx) * wy),
        (values[r1, c1], wx * wy),
    )
    total = np.zeros(np.broadcast(x, y).shape)
    bad = np.zeros(total.shape, dtype=bool)
    for v, w in corners:
        nan = np.isnan(v)
        total = total + w * np.where(nan, 0.0, v)
        bad |= nan & (w > 0)
    return np.where(bad, np.nan, total)


def points_in_rings(rings: Sequence[np.ndarray], px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Even-odd containment of points over all rings of one polygon."""
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    for ring in rings:
        xs, ys = ring[:, 0], ring[:, 1]
        xn, yn = np.roll(xs, -1), np.roll(ys, -1)
        for x0, y0, x1, y1 in zip(xs, ys, xn, yn):
            if y0 == y1:
                continue
            straddles = (y0 > py) != (y1 > py)
            x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            inside ^= straddles & (px < x_cross)
    return inside


def rasterize_footprints(footprints: Sequence[BuildingFootprint], spec: GridSpec) -> Raster:
    """Burn building heights into a grid by pixel-center sampling.

    Overlapping footprints resolve to the tallest one; uncovered pixels are 0.
    """
    out = np.zeros(spec.shape)
    cs = spec.cell_size
    for index, fp in enumerate(footprints):
        if fp.is_degenerate():
            raise ValueError(f"footprint {index} is degenerate (fewer than 3 distinct vertices)")
        xmin, ymin, xmax, ymax = fp.bounds()
        c0 = max(int(math.floor((xmin - spec.origin_x) / cs - 0.5)), 0)
        c1 = min(int(math.ceil((xmax - spec.origin_x) / cs - 0.5)), spec.n_cols - 1)
        r0 = max(int(math.floor((ymin - spec.origin_y) / cs - 0.5)), 0)
        r1 = min(int(math.ceil((ymax - spec.origin_y) / cs - 0.5)), spec.n_rows - 1)
        if c0 > c1 or r0 > r1:
            continue
        px = spec.origin_x + (np.arange(c0, c1 + 1) + 0.5) * cs
        py = spec.origin_y + (np.arange(r0, r1 + 1) + 0.5) * cs
        inside = points_in_rings(fp.polygon, px[None, :], py[:, None])
        window = out[r0:r1 + 1, c0:c1 + 1]
        np.maximum(window, np.where(inside, fp.height_m, 0.0), out=window)
    return Raster(spec, out)


def _overlaps(fp: BuildingFootprint, spec: GridSpec) -> bool:
    xmin, ymin, xmax, ymax = fp.bounds()
    return xmax > spec.origin_x and xmin < spec.x_max and ymax > spec.origin_y and ymin < spec.y_max


def build_surface(dem: Raster, buildings: Sequence[BuildingFootprint], out_res: float = 2.0) -> SurfaceRaster:
    """Resample a DEM to ``out_res`` and add rasterized building heights."""
    if not out_res > 0:
        raise ValueError(f"out_res must be positive, got {out_res}")
    if dem.values.size == 0 or np.isnan(dem.values).all():
        raise ValueError("DEM is empty (no valid cells)")
    src = dem.spec
    width, height = src.x_max - src.origin_x, src.y_max - src.origin_y
    n_cols = max(int(math.floor(width / out_res + 1e-9)), 1)
    n_rows = max(int(math.floor(height / out_res + 1e-9)), 1)
    spec = GridSpec(src.origin_x, src.origin_y, float(out_res), n_cols, n_rows)
    ground = bilinear_sample(dem.values, src, spec.centers_x()[None, :], spec.centers_y()[:, None])

    inside = [fp for fp in buildings if _overlaps(fp, spec)]
    if len(inside) < len(buildings):
        log.info("clipped %d building footprints outside the DEM extent", len(buildings) - len(inside))
    heights = rasterize_footprints(inside, spec).values
    return SurfaceRaster(spec, ground, ground + heights)


# ---------------------------------------------------------------------------
# Vector and tabular inputs


def load_buildings_geojson(source: str | TextIO, height_property: str = "height") -> list[BuildingFootprint]:
    """Read Polygon/MultiPolygon features; each polygon part becomes one footprint."""
    try:
        doc = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")
    footprints = []
    for index, feature in enumerate(doc.get("features", [])):
        geom = feature.get("geometry") or {}
        props = feature.get("properties") or {}
        if height_property not in props:
            raise ParseError(f"feature {index} has no {height_property!r} property")
        try:
            height = float(props[height_property])
        except (TypeError, ValueError):
            raise ParseError(f"feature {index} has non-numeric height {props[height_property]!r}") from None
        kind = geom.get("type")
        if kind == "Polygon":
            parts = [geom["coordinates"]]
        elif kind == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise ParseError(f"feature {index} has unsupported geometry {kind!r}")
        for part in parts:
            try:
                fp = BuildingFootprint(tuple(np.asarray(r, dtype=float)[:, :2] for r in part), height)
            except (ValueError, IndexError) as exc:
                raise ParseError(f"feature {index}: {exc}") from None
            if fp.is_degenerate():
                raise ParseError(f"feature {index} is degenerate (fewer than 3 distinct vertices)")
            footprints.append(fp)
    return footprints


def footprints_to_geojson(footprints: Iterable[BuildingFootprint], height_property: str = "height") -> dict:
    features = []
    for fp in footprints:
        rings = [np.vstack([r, r[:1]]).tolist() for r in fp.polygon]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": rings},
            "properties": {height_property: fp.height_m},
        })
    return {"type": "FeatureCollection", "features": features}


STATION_COLUMNS = ("station_id", "x_m", "y_m", "antenna_height_m")


def load_stations(source: str | TextIO) -> list[BaseStation]:
    """Read the station CSV (header ``station_id,x_m,y_m,antenna_height_m``)."""
    reader = csv.DictReader(io.StringIO(_read_text(source)))
    missing = [c for c in STATION_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}", 1)
    stations = []
    for row in reader:
        line = reader.line_num
        try:
            x, y, h = (float(row[c]) for c in STATION_COLUMNS[1:])
        except (TypeError, ValueError):
            raise ParseError("non-numeric coordinate or antenna height", line) from None
        if not h > 0:
            raise ParseError(f"antenna_height_m must be positive, got {h:g}", line)
        stations.append(BaseStation(row["station_id"].strip(), x, y, h))
    return stations


def write_stations(stations: Iterable[BaseStation]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(STATION_COLUMNS)
    for s in stations:
        writer.writerow([s.id, repr(s.x), repr(s.y), repr(s.antenna_height_m)])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Synthetic cities


@dataclass(frozen=True)
class SynthCitySpec:
    """Manhattan-style test city on flat ground.

    Buildings are square blocks of side ``block_size_m`` separated by streets
    of ``street_width_m``; street centerlines pass through the extent center.
    The western ``open_area_fraction`` of the extent is kept free of buildings.
    """

    extent_m: float = 1000.0
    block_size_m: float = 60.0
    street_width_m: float = 20.0
    mean_height_m: float = 20.0
    stdev_height_m: float = 5.0
    open_area_fraction: float = 0.0
    seed: int = 0
    cell_size_m: float = 2.0
    dem_cell_m: float = 10.0
    ground_m: float = 0.0
    antenna_height_m: float = 25.0
    station_positions: tuple = field(default=())

    def __post_init__(self):
        if not 0 <= self.street_width_m < self.block_size_m:
            raise ValueError("street_width_m must be in [0, block_size_m)")
        if self.stdev_height_m < 0:
            raise ValueError("stdev_height_m must be >= 0")
        if not 0 <= self.open_area_fraction <= 1:
            raise ValueError("open_area_fraction must be in [0, 1]")
        if self.extent_m < self.block_size_m:
            raise ValueError(f"extent {self.extent_m} m is smaller than one block ({self.block_size_m} m)")


def synth_city_layout(spec: SynthCitySpec) -> tuple[Raster, list[BuildingFootprint], list[BaseStation]]:
    """DEM, footprints and stations of a synthetic city (inputs of ``synth_city``)."""
    ext = spec.extent_m
    n_dem = max(int(round(ext / spec.dem_cell_m)), 1)
    dem = Raster(GridSpec(0.0, 0.0, ext / n_dem, n_dem, n_dem), np.full((n_dem, n_dem), spec.ground_m))

    period = spec.block_size_m + spec.street_width_m
    half_street = spec.street_width_m / 2
    center = ext / 2
    k_lo = int(math.floor(-center / period)) - 1
    k_hi = int(math.ceil(center / period)) + 1
    ks = np.arange(k_lo, k_hi)
    rng = np.random.default_rng(spec.seed)
    heights = np.maximum(rng.normal(spec.mean_height_m, spec.stdev_height_m, (len(ks), len(ks))), 0.0)

    x_open = spec.open_area_fraction * ext
    footprints = []
    for j, ky in enumerate(ks):
        for i, kx in enumerate(ks):
            x0 = max(center + kx * period + half_street, x_open, 0.0)
            x1 = min(center + (kx + 1) * period - half_street, ext)
            y0 = max(center + ky * period + half_street, 0.0)
            y1 = min(center + (ky + 1) * period - half_street, ext)
            if x1 - x0 < spec.cell_size_m or y1 - y0 < spec.cell_size_m or heights[j, i] <= 0:
                continue
            ring = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
            footprints.append(BuildingFootprint((ring,), float(heights[j, i])))

    positions = spec.station_positions or ((center, center),)
    stations = [BaseStation(f"s{i + 1}", float(x), float(y), spec.antenna_height_m)
                for i, (x, y) in enumerate(positions)]
    return dem, footprints, stations


def synth_city(spec: SynthCitySpec) -> tuple[SurfaceRaster, list[BaseStation]]:
    dem, footprints, stations = synth_city_layout(spec)
    return build_surface(dem, footprints, spec.cell_size_m), stations
