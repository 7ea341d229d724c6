"""Command-line front end.

Subcommands::

    synth     write a synthetic city (DEM, buildings, stations)
    viewshed  visibility grids per station
    curve     visibility grids plus empirical LOS-probability curves
    fit       per-site fits (curves, fit JSON, boundaries, SVG overlays)
    batch     every site plus the batch report (summary, CDF, quantiles)
    report    re-render the batch report from a summary.json

Options may also come from a ``--config`` file of ``key = value`` lines
(keys are flag names without the leading dashes); flags on the command line
win. ``LOSFIELD_LOG`` sets the log level (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import stats
from .geodata import (ParseError, SynthCitySpec, footprints_to_geojson, synth_city_layout, write_ascii_grid,
                      write_stations)
from .pipeline import (EXIT_CONFIG, EXIT_OK, EXIT_PARSE, EXIT_PARTIAL, EXIT_TOTAL, ConfigError, RunConfig,
                       batch_exit_code, collect, ensure_writable, load_inputs, run_batch, run_sites, write_manifest)

log = logging.getLogger("losfield")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _pair(text: str) -> tuple:
    parts = _float_list(text)
    if len(parts) != 2:
        raise ValueError(f"expected X,Y but got {text!r}")
    return parts


# flag -> (type, RunConfig field or None, help)
RUN_OPTIONS = {
    "dem": (Path, "dem", "DEM as ESRI ASCII grid"),
    "buildings": (Path, "buildings", "building footprints as GeoJSON with a height property"),
    "stations": (Path, "stations", "stations CSV (station_id,x_m,y_m,antenna_height_m)"),
    "radius-m": (float, "radius_m", "analysis radius around each station (default 500)"),
    "res-m": (float, "res_m", "surface raster resolution (default 2)"),
    "rx-height-m": (float, "rx_height_m", "receiver height above ground (default 1.5)"),
    "bin-m": (float, "bin_m", "distance bin width of LOS curves (default 10)"),
    "methods": (_str_list, "methods", "comma list from " + ",".join(stats.METHOD_ORDER)),
    "nu": (float, "nu", "nu-SVC parameter (default 0.5)"),
    "gamma": (float, "gamma", "Gaussian kernel width in 1/m^2 (default 1e-4)"),
    "estimators": (int, "estimators", "bagged SVC members (default 20)"),
    "trig-n-max": (int, "trig_n_max", "highest trig series order, 2..5 (default 5)"),
    "w0-grid": (_float_list, "w0_grid", "comma list of penalty weights (default 0.1,0.3,0.5,0.7,1.0)"),
    "r-min-m": (float, "r_min_m", "minimum trig boundary radius (default 25)"),
    "seed": (int, "seed", "run seed (default 0)"),
    "jobs": (int, "jobs", "worker processes (default 1)"),
    "out": (Path, "out", "output directory (default ./out)"),
}

SYNTH_OPTIONS = {
    "extent-m": (float, "extent_m", "city side length (default 1000)"),
    "block-m": (float, "block_size_m", "building block side (default 60)"),
    "street-m": (float, "street_width_m", "street width (default 20)"),
    "mean-height-m": (float, "mean_height_m", "mean building height (default 20)"),
    "stdev-height-m": (float, "stdev_height_m", "building height spread (default 5)"),
    "open-fraction": (float, "open_area_fraction", "building-free western share of the city (default 0)"),
    "antenna-height-m": (float, "antenna_height_m", "station antenna height (default 25)"),
    "dem-cell-m": (float, "dem_cell_m", "DEM cell size (default 10)"),
}

_COMMANDS = {
    "synth": "write a synthetic city (dem.asc, buildings.geojson, stations.csv)",
    "viewshed": "compute visibility grids",
    "curve": "compute visibility grids and empirical LOS curves",
    "fit": "run per-site fits",
    "batch": "run every site and the batch report",
    "report": "re-render the batch report from summary.json",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="losfield", description="LOS probability modelling around base stations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", type=Path, help="key=value file; command-line flags win")
        for flag, (kind, _, help_opt) in RUN_OPTIONS.items():
            p.add_argument(f"--{flag}", type=kind, help=help_opt)
        if name in ("viewshed", "curve", "fit"):
            p.add_argument("--station", type=_str_list, help="comma list of station ids (default all)")
        if name == "synth":
            for flag, (kind, _, help_opt) in SYNTH_OPTIONS.items():
                p.add_argument(f"--{flag}", type=kind, help=help_opt)
            p.add_argument("--site", type=_pair, action="append", help="station position X,Y (repeatable)")
            p.add_argument("--benchmark", type=_pair, metavar="MIXED,DENSE",
                           help="benchmark layout with MIXED divide-side and DENSE grid stations")
        if name == "report":
            p.add_argument("--results", type=Path, help="summary.json of a finished batch")
    return parser


def read_config_file(path: Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    known = {**RUN_OPTIONS, **SYNTH_OPTIONS, "station": (_str_list, None, ""), "results": (Path, None, ""),
             "benchmark": (_pair, None, "")}
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key.replace("-", "_")] = known[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from None
    return values


def merged_options(args: argparse.Namespace) -> dict:
    opts = read_config_file(args.config) if getattr(args, "config", None) else {}
    opts.update({k: v for k, v in vars(args).items() if k not in ("command", "config")})
    return opts


def run_config(opts: dict, require_inputs: bool = True) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    kwargs = {}
    for flag, (_, attr, _) in RUN_OPTIONS.items():
        key = flag.replace("-", "_")
        if key in opts and attr in names:
            kwargs[attr] = opts[key]
    cfg = RunConfig(**kwargs)
    return cfg.validate() if require_inputs else cfg


def _configure_logging() -> None:
    level_name = os.environ.get("LOSFIELD_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(level_name, logging.WARNING)
    root = logging.getLogger("losfield")
    root.handlers[:] = []
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
    if level_name not in _LOG_LEVELS:
        root.warning("unknown LOSFIELD_LOG value %r, using warn", level_name)


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def cmd_synth(opts: dict) -> int:
    from dataclasses import replace

    from .scenarios import benchmark_city

    out = Path(opts.get("out", "out"))
    city_kwargs = {attr: opts[flag.replace("-", "_")] for flag, (_, attr, _) in SYNTH_OPTIONS.items()
                   if flag.replace("-", "_") in opts}
    if "seed" in opts:
        city_kwargs["seed"] = opts["seed"]
    if "res_m" in opts:
        city_kwargs["cell_size_m"] = opts["res_m"]
    try:
        if "benchmark" in opts:
            n_mixed, n_dense = (int(v) for v in opts["benchmark"])
            layout = benchmark_city(n_mixed, n_dense, opts.get("seed", 0), opts.get("radius_m", 500.0),
                                    **{k: v for k, v in city_kwargs.items() if k != "seed"})
            spec = layout.city
        else:
            spec = SynthCitySpec(**city_kwargs)
        if "site" in opts:
            spec = replace(spec, station_positions=tuple(opts["site"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from None
    ensure_writable(out)
    dem, footprints, stations = synth_city_layout(spec)
    (out / "dem.asc").write_text(write_ascii_grid(dem))
    (out / "buildings.geojson").write_text(json.dumps(footprints_to_geojson(footprints)) + "\n")
    (out / "stations.csv").write_text(write_stations(stations))
    write_manifest(out)
    print(json.dumps({"dem": str(out / "dem.asc"), "buildings": str(out / "buildings.geojson"),
                      "stations": str(out / "stations.csv"), "n_buildings": len(footprints),
                      "n_stations": len(stations)}))
    return EXIT_OK


def _select(stations, wanted):
    if not wanted:
        return stations
    by_id = {s.id: s for s in stations}
    missing = [w for w in wanted if w not in by_id]
    if missing:
        raise ConfigError(f"station: unknown ids {missing}")
    return [by_id[w] for w in wanted]


def cmd_sites(command: str, opts: dict) -> int:
    """``viewshed``, ``curve`` and ``fit``: per-site work without the batch report."""
    from .losmodel import curves_csv, empirical_curve
    from .viewshed import RxSpec, compute_viewshed, los_fraction

    cfg = run_config(opts)
    out = Path(cfg.out)
    ensure_writable(out)
    surface, stations = load_inputs(cfg)
    stations = _select(stations, opts.get("station"))
    if command == "fit":
        outcomes = run_sites(cfg, surface, stations)
        batch = collect(outcomes)
        for f in batch.failed:
            print(json.dumps({"site_id": f[0], "stage": f[1], "message": f[2]}), file=sys.stderr)
        write_manifest(out)
        return batch_exit_code(batch)
    failed = 0
    for st in stations:
        try:
            vm = compute_viewshed(surface, st, cfg.radius_m, RxSpec(cfg.rx_height_m)).crop()
            site_dir = out / "sites" / st.id
            site_dir.mkdir(parents=True, exist_ok=True)
            (site_dir / "visibility.asc").write_text(vm.to_ascii())
            if command == "curve":
                (site_dir / "curve.csv").write_text(curves_csv(empirical_curve(vm, cfg.bin_m)))
            print(json.dumps({"site_id": st.id, "los_fraction": los_fraction(vm)}))
        except ValueError as exc:
            failed += 1
            print(json.dumps({"site_id": st.id, "stage": command, "message": str(exc)}), file=sys.stderr)
    write_manifest(out)
    if failed == len(stations) and stations:
        return EXIT_TOTAL
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_batch(opts: dict) -> int:
    cfg = run_config(opts)
    batch, code = run_batch(cfg)
    print(json.dumps({"sites": len(batch.sites), "failed": len(batch.failed),
                      "summary": str(Path(cfg.out) / "summary.json")}))
    return code


def cmd_report(opts: dict) -> int:
    from .report import load_batch, render_report

    if "results" not in opts:
        raise ConfigError("results: path to summary.json is required")
    out = Path(opts.get("out", "out"))
    try:
        batch, data = load_batch(opts["results"])
    except FileNotFoundError:
        raise ConfigError(f"results: file not found: {opts['results']}") from None
    except (KeyError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed summary {opts['results']}: {exc}") from None
    methods = opts.get("methods") or data.get("methods")
    render_report(batch, out, methods, config=data.get("config"))
    write_manifest(out)
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = merged_options(args)
        if args.command == "synth":
            return cmd_synth(opts)
        if args.command in ("viewshed", "curve", "fit"):
            return cmd_sites(args.command, opts)
        if args.command == "batch":
            return cmd_batch(opts)
        return cmd_report(opts)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except ParseError as exc:
        return _error("parse", str(exc), EXIT_PARSE)
    except OSError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except ValueError as exc:
        return _error("input", str(exc), EXIT_PARSE)


if __name__ == "__main__":
    sys.exit(main())
