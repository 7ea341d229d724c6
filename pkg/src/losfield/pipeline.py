"""Per-site and batch pipeline: viewshed, curve, fits, reports.

Each site runs independently (viewshed -> empirical curve -> every
configured fit) and writes its artifacts under ``<out>/sites/<id>/``. A
batch runs sites on a bounded process pool, waits for all of them, then
aggregates. Per-site seeds derive from the run seed and the site index, so
results do not depend on the pool size.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import stats
from .boundary import (TRIG_LM_OPTIONS, W0_GRID, boundary_geojson, extract_los_boundary, fit_svc_boundary,
                       fit_trig_boundary)
from .dualenv import TransitionParams, dual_model_json, fit_dual, mix, rma, zone_geometry
from .geodata import (BaseStation, SurfaceRaster, SynthCitySpec, build_surface, load_buildings_geojson,
                      load_stations, parse_ascii_grid, synth_city)
from .losmodel import FitResult, FitVariant, ProbabilityCurve, curves_csv, empirical_curve, fit_single, uma
from .numerics import LmOptions
from .viewshed import RxSpec, compute_viewshed, los_fraction

log = logging.getLogger(__name__)

SCORE_STRIDE = 2
"""Pixel-lattice stride used when ranking trig boundary candidates."""


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class RunConfig:
    dem: Path | None = None
    buildings: Path | None = None
    stations: Path | None = None
    synth: SynthCitySpec | None = None
    radius_m: float = 500.0
    res_m: float = 2.0
    rx_height_m: float = 1.5
    bin_m: float = 10.0
    methods: tuple = stats.METHOD_ORDER
    nu: float = 0.5
    gamma: float = 1e-4
    estimators: int = 20
    subsample: int | None = None
    trig_n_max: int = 5
    w0_grid: tuple = W0_GRID
    r_min_m: float = 25.0
    boundary_points: int = 100
    gap_window_m: float = 20.0
    mu_h: float = 0.0
    sigma_h: float = 50.0
    seed: int = 0
    jobs: int = 1
    out: Path = Path("out")
    write_site_files: bool = True

    def validate(self) -> "RunConfig":
        if self.synth is None:
            for name in ("dem", "buildings", "stations"):
                path = getattr(self, name)
                if path is None:
                    raise ConfigError(f"{name}: required when no synthetic city is configured")
                if not Path(path).is_file():
                    raise ConfigError(f"{name}: file not found: {path}")
        positive = ("radius_m", "res_m", "bin_m", "gamma", "estimators", "jobs", "sigma_h", "gap_window_m")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.rx_height_m < 0:
            raise ConfigError("rx_height_m: must be >= 0")
        if not self.methods:
            raise ConfigError("methods: at least one method is required")
        unknown = [m for m in self.methods if m not in stats.METHOD_ORDER]
        if unknown:
            raise ConfigError(f"methods: unknown {unknown}; choose from {list(stats.METHOD_ORDER)}")
        if not 0 < self.nu < 1:
            raise ConfigError("nu: must lie in (0, 1)")
        if not 2 <= self.trig_n_max <= 5:
            raise ConfigError("trig_n_max: must lie in 2..5")
        if not self.w0_grid or any(not 0 <= w <= 1 for w in self.w0_grid):
            raise ConfigError("w0_grid: values must lie in [0, 1]")
        if self.r_min_m < 0:
            raise ConfigError("r_min_m: must be >= 0")
        if self.boundary_points < 2 * self.trig_n_max + 1 or self.boundary_points < 8:
            raise ConfigError("boundary_points: too few for the series order")
        return self

    @property
    def ordered_methods(self) -> tuple:
        return tuple(m for m in stats.METHOD_ORDER if m in self.methods)

    def echo(self) -> dict:
        """JSON-safe view of the parameters that shape the results."""
        keys = ("radius_m", "res_m", "rx_height_m", "bin_m", "nu", "gamma", "estimators", "subsample",
                "trig_n_max", "r_min_m", "boundary_points", "gap_window_m", "mu_h", "sigma_h", "seed")
        out = {k: getattr(self, k) for k in keys}
        out["methods"] = list(self.ordered_methods)
        out["w0_grid"] = list(self.w0_grid)
        return out


def load_inputs(cfg: RunConfig) -> tuple[SurfaceRaster, list[BaseStation]]:
    if cfg.synth is not None:
        return synth_city(replace(cfg.synth, cell_size_m=cfg.res_m))
    dem = parse_ascii_grid(Path(cfg.dem).read_text())
    buildings = load_buildings_geojson(Path(cfg.buildings).read_text())
    stations = load_stations(Path(cfg.stations).read_text())
    if len({s.id for s in stations}) != len(stations):
        raise ConfigError("stations: duplicate station ids")
    return build_surface(dem, buildings, cfg.res_m), stations


def site_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class SiteOutcome:
    site_id: str
    result: stats.SiteResults | None = None
    failure: tuple | None = None
    files: list = field(default_factory=list)
    seconds: float = 0.0


class _Stage:
    """Tracks the current pipeline stage for error reports."""

    def __init__(self):
        self.name = "setup"

    def __call__(self, name: str) -> "_Stage":
        self.name = name
        return self


def run_site(surface: SurfaceRaster, station: BaseStation, index: int, cfg: RunConfig) -> SiteOutcome:
    """Full per-site pipeline; errors are captured with the failing stage."""
    start = time.perf_counter()
    stage = _Stage()
    try:
        outcome = _run_site(surface, station, index, cfg, stage)
    except Exception as exc:  # recorded as a failed row, the batch continues
        log.error("site %s failed at %s: %s", station.id, stage.name, exc)
        outcome = SiteOutcome(station.id, failure=(station.id, stage.name, f"{type(exc).__name__}: {exc}"))
    outcome.seconds = time.perf_counter() - start
    log.info("site %s done in %.2f s", station.id, outcome.seconds)
    return outcome


def _run_site(surface, station, index, cfg, stage) -> SiteOutcome:
    opts = LmOptions()
    vm = compute_viewshed(surface, station, cfg.radius_m, RxSpec(cfg.rx_height_m)).crop()
    frac = los_fraction(vm)
    stage("curve")
    curve = empirical_curve(vm, cfg.bin_m)
    fits: dict[str, FitResult] = {}
    modeled: dict[str, np.ndarray] = {}
    boundaries = {}
    duals = {}
    centers = curve.bin_centers
    transition = TransitionParams(cfg.mu_h, cfg.sigma_h)

    for method in cfg.ordered_methods:
        if method in stats.SINGLE_METHODS:
            stage(f"fit:{method}")
            res = fit_single(curve, FitVariant(method), station.id, frac, opts=opts)
            fits[method] = res
            modeled[method] = uma(res.params["d1"], res.params["d2"], centers)
            continue
        if method == "DualTrig":
            stage("boundary:trig")
            samples = extract_los_boundary(vm, cfg.boundary_points, cfg.gap_window_m)

            def score(candidate):
                F = zone_geometry(candidate, vm, cfg.bin_m, SCORE_STRIDE).fractions(transition)
                return fit_dual(curve, F, station.id, frac, method, opts, transition=transition).rmse

            boundary = fit_trig_boundary(samples, (2, cfg.trig_n_max), cfg.w0_grid, TRIG_LM_OPTIONS, cfg.r_min_m, score)
        else:
            stage("boundary:svc")
            boundary = fit_svc_boundary(vm, cfg.nu, cfg.gamma, cfg.estimators, site_seed(cfg.seed, index),
                                        cfg.subsample)
        stage(f"fit:{method}")
        F = zone_geometry(boundary, vm, cfg.bin_m).fractions(transition)
        res = fit_dual(curve, F, station.id, frac, method, opts, transition=transition)
        res.extra.update({k: v for k, v in boundary.to_dict().items() if k in ("order", "w0", "nu")})
        fits[method] = res
        boundaries[method] = boundary
        p = res.params
        modeled[method] = mix(uma(p["d1"], p["d2"], centers), rma(p["d3"], p["d4"], centers), F)
        duals[method] = dual_model_json(res, f"boundary_{method}.geojson")

    outcome = SiteOutcome(station.id, stats.SiteResults(station.id, frac, fits))
    if cfg.write_site_files:
        stage("write")
        outcome.files = write_site_files(Path(cfg.out), station.id, vm, curve, fits, modeled, boundaries, duals)
    return outcome


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n"


def write_site_files(out: Path, site_id: str, vm, curve: ProbabilityCurve, fits: dict, modeled: dict,
                     boundaries: dict, duals: dict) -> list[str]:
    site_dir = out / "sites" / site_id
    site_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "visibility.asc": vm.to_ascii(),
        "curve.csv": curves_csv(curve, {m: (lambda d, v=v: v) for m, v in modeled.items()}),
        "fits.json": _dump_json({"site_id": site_id, "los_fraction": los_fraction(vm),
                                 "fits": [fits[m].to_dict() for m in fits], "dual_models": duals}),
    }
    for method, boundary in boundaries.items():
        files[f"boundary_{method}.geojson"] = _dump_json(boundary_geojson(boundary))
    for name, text in files.items():
        (site_dir / name).write_text(text)
    from .report import plot_site_curve

    plot_site_curve(curve, modeled, site_id, site_dir / "curve.svg")
    return sorted(str((site_dir / n).relative_to(out)) for n in [*files, "curve.svg"])


_WORKER: dict = {}


def _init_worker(surface: SurfaceRaster, cfg: RunConfig) -> None:
    _WORKER["surface"] = surface
    _WORKER["cfg"] = cfg


def _worker_site(index: int, station: BaseStation) -> SiteOutcome:
    return run_site(_WORKER["surface"], station, index, _WORKER["cfg"])


def run_sites(cfg: RunConfig, surface: SurfaceRaster, stations: list[BaseStation]) -> list[SiteOutcome]:
    """Run every site, in station order regardless of completion order."""
    if cfg.jobs == 1 or len(stations) <= 1:
        return [run_site(surface, st, i, cfg) for i, st in enumerate(stations)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker,
                                                initargs=(surface, cfg)) as pool:
        futures = [pool.submit(_worker_site, i, st) for i, st in enumerate(stations)]
        return [f.result() for f in futures]


def collect(outcomes: list[SiteOutcome]) -> stats.BatchResults:
    batch = stats.BatchResults()
    for o in outcomes:
        if o.result is not None:
            batch.sites.append(o.result)
        else:
            batch.failed.append(o.failure)
    return batch


EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_PARTIAL, EXIT_TOTAL = 0, 2, 3, 4, 5


def batch_exit_code(batch: stats.BatchResults) -> int:
    if not batch.sites:
        return EXIT_TOTAL
    return EXIT_PARTIAL if batch.failed else EXIT_OK


def ensure_writable(out: Path) -> None:
    """Create ``out`` and confirm files can be written there."""
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc


def write_manifest(out: Path) -> Path:
    """``manifest.json`` listing every file under ``out`` with its sha256."""
    entries = []
    for path in sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"):
        entries.append({"path": str(path.relative_to(out)), "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
                        "bytes": path.stat().st_size})
    target = out / "manifest.json"
    target.write_text(_dump_json({"files": entries}))
    return target


def run_batch(cfg: RunConfig) -> tuple[stats.BatchResults, int]:
    """Whole pipeline: sites, aggregation, report and manifest. Returns the exit code too."""
    from .report import render_report

    cfg.validate()
    out = Path(cfg.out)
    ensure_writable(out)
    surface, stations = load_inputs(cfg)
    outcomes = run_sites(cfg, surface, stations)
    batch = collect(outcomes)
    log.info("%d sites done, %d failed, %.1f s site time", len(batch.sites), len(batch.failed),
             math.fsum(o.seconds for o in outcomes))
    if batch.sites:
        render_report(batch, out, cfg.ordered_methods, config=cfg.echo())
    else:
        (out / "summary.json").write_text(_dump_json({"config": cfg.echo(), "sites": [],
                                                      "failed": [list(f) for f in batch.failed]}))
    write_manifest(out)
    return batch, batch_exit_code(batch)


__all__ = ["RunConfig", "ConfigError", "SiteOutcome", "run_site", "run_sites", "run_batch", "load_inputs",
           "collect", "write_manifest", "ensure_writable", "site_seed", "batch_exit_code", "EXIT_OK",
           "EXIT_CONFIG", "EXIT_PARSE", "EXIT_PARTIAL", "EXIT_TOTAL"]
