"""Batch summaries and SVG plots.

Plots are written as self-contained SVG (glyphs as paths, inline styles) with
a fixed hash salt and no timestamp, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import stats  # noqa: E402
from .losmodel import FitResult  # noqa: E402

_RC = {"svg.hashsalt": "losfield", "svg.fonttype": "path", "font.size": 9}
_COLORS = {"Default3gpp": "#8c8c8c", "Fitted3gpp": "#1f77b4", "Fitted3gppMinLos": "#17becf",
           "DualTrig": "#d62728", "DualSvc": "#ff7f0e"}
_MARKERS = {"Default3gpp": "x", "Fitted3gpp": "o", "Fitted3gppMinLos": "s", "DualTrig": "^", "DualSvc": "D"}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _methods(batch: stats.BatchResults, methods: Sequence[str] | None) -> list[str]:
    if methods is None:
        return batch.methods()
    methods = [m for m in stats.METHOD_ORDER if m in methods] + [m for m in methods if m not in stats.METHOD_ORDER]
    if not methods:
        raise ValueError("methods: empty method subset")
    return methods


def summary_dict(batch: stats.BatchResults, methods: Sequence[str] | None = None, config: dict | None = None) -> dict:
    methods = _methods(batch, methods)
    best = stats.best_model_per_site(batch, methods)
    k = min(5, len(batch.sites))
    groups = stats.quantile_groups(batch, k, methods)
    singles = [m for m in methods if m in stats.SINGLE_METHODS]
    duals = [m for m in methods if m in stats.DUAL_METHODS]
    means = {m: float(np.mean(batch.rmse_values(m))) for m in methods}
    if singles:
        means["best_single"] = stats.mean_rmse(batch, singles)
    if duals:
        means["best_dual"] = stats.mean_rmse(batch, duals)
    cdf = {}
    for m in methods:
        values, frac = stats.rmse_cdf(batch, m)
        cdf[m] = {"rmse": values.tolist(), "fraction": frac.tolist()}
    sites = []
    for site, (_, winner, best_rmse) in zip(batch.sites, best):
        sites.append({
            "site_id": site.site_id,
            "los_fraction": site.los_fraction,
            "best_method": winner,
            "best_rmse": best_rmse,
            "rmse": {m: site.fits[m].rmse for m in methods},
            "params": {m: site.fits[m].params for m in methods},
            "converged": {m: site.fits[m].converged for m in methods},
        })
    return {
        "config": config or {},
        "methods": methods,
        "sites": sites,
        "failed": [{"site_id": f[0], "stage": f[1], "message": f[2]} for f in batch.failed],
        "mean_rmse": means,
        "cdf": cdf,
        "quantile_groups": [{
            "index": g.index, "count": g.count, "site_ids": list(g.site_ids), "rmse_range": list(g.rmse_range),
            "los_fraction_range": list(g.los_fraction_range), "winners": g.winners} for g in groups],
    }


def summary_csv(summary: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    methods = summary["methods"]
    writer.writerow(["site_id", "los_fraction", *[f"rmse_{m}" for m in methods], "best_method", "best_rmse"])
    for row in summary["sites"]:
        writer.writerow([row["site_id"], repr(row["los_fraction"]), *[repr(row["rmse"][m]) for m in methods],
                         row["best_method"], repr(row["best_rmse"])])
    return out.getvalue()


def plot_cdf(summary: dict, path: Path) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for m in summary["methods"]:
            values = np.asarray(summary["cdf"][m]["rmse"])
            frac = np.asarray(summary["cdf"][m]["fraction"])
            xs = np.concatenate([[0.0], values])
            ys = np.concatenate([[0.0], frac])
            ax.step(xs, ys, where="post", label=m, color=_COLORS.get(m))
        ax.set_xlabel("RMSE of LOS probability")
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_quantiles(summary: dict, path: Path) -> None:
    """Best RMSE against LOS fraction, one band per quantile group."""
    rows = {r["site_id"]: r for r in summary["sites"]}
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for g in summary["quantile_groups"]:
            lo, hi = g["rmse_range"]
            ax.axhspan(lo, hi, alpha=0.12, color=f"C{g['index']}")
            ax.text(1.0, hi, f" Q{g['index'] + 1} (n={g['count']})", va="top", ha="left", fontsize=7,
                    transform=ax.get_yaxis_transform())
        for m in summary["methods"]:
            pts = [(rows[s]["los_fraction"], rows[s]["best_rmse"]) for s in rows if rows[s]["best_method"] == m]
            if pts:
                x, y = zip(*pts)
                ax.scatter(x, y, label=m, marker=_MARKERS.get(m, "o"), color=_COLORS.get(m), s=18)
        ax.set_xlabel("LOS fraction")
        ax.set_ylabel("best-method RMSE")
        ax.set_xlim(0, 1)
        ax.grid(alpha=0.3)
        ax.legend(loc="upper left", fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def plot_site_curve(curve, modeled: dict, site_id: str, path: Path) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ok = curve.populated
        ax.plot(curve.bin_centers[ok], curve.p_los[ok], "k.", label="empirical")
        for m, values in modeled.items():
            ax.plot(curve.bin_centers, values, label=m, color=_COLORS.get(m))
        ax.set_xlabel("distance (m)")
        ax.set_ylabel("LOS probability")
        ax.set_ylim(0, 1.02)
        ax.set_title(site_id)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def render_report(batch: stats.BatchResults, out_dir, methods: Sequence[str] | None = None,
                  config: dict | None = None) -> list[Path]:
    """Write ``cdf.svg``, ``quantiles.svg``, ``summary.csv`` and ``summary.json``."""
    from .pipeline import ensure_writable

    if not batch.sites:
        raise ValueError("batch has no completed sites")
    summary = summary_dict(batch, methods, config)
    out = Path(out_dir)
    ensure_writable(out)
    paths = [out / "summary.json", out / "summary.csv", out / "cdf.svg", out / "quantiles.svg"]
    paths[0].write_text(json.dumps(summary, indent=2) + "\n")
    paths[1].write_text(summary_csv(summary))
    plot_cdf(summary, paths[2])
    plot_quantiles(summary, paths[3])
    return paths


def load_batch(summary_path) -> tuple[stats.BatchResults, dict]:
    """Rebuild batch results (scores and parameters) from a ``summary.json``."""
    data = json.loads(Path(summary_path).read_text())
    batch = stats.BatchResults()
    for row in data["sites"]:
        fits = {m: FitResult(row["site_id"], m, row["params"][m], row["rmse"][m], row["los_fraction"],
                             row["converged"][m]) for m in data["methods"]}
        batch.sites.append(stats.SiteResults(row["site_id"], row["los_fraction"], fits))
    batch.failed = [(f["site_id"], f["stage"], f["message"]) for f in data.get("failed", [])]
    return batch, data
