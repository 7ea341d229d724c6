"""LOS probability modelling around base stations.

Visibility maps from terrain and building heights, empirical LOS-probability
curves, single-environment (UMa) fits, and dual-environment models built on
a trigonometric-series or bagged nu-SVC zone boundary.
"""

from .boundary import (BoundarySamples, SvcBoundary, TrigBoundary, eval_trig_radius, extract_los_boundary,
                       fit_svc_boundary, fit_trig_boundary, signed_distance)
from .dualenv import DualEnvModel, TransitionParams, fit_dual, transition_f, zone_fraction_curve, zone_geometry
from .geodata import (BaseStation, BuildingFootprint, GridSpec, ParseError, Raster, SurfaceRaster, SynthCitySpec,
                      build_surface, load_buildings_geojson, load_stations, parse_ascii_grid, synth_city)
from .losmodel import (FitResult, FitVariant, ProbabilityCurve, SingleEnvParams, empirical_curve, eval_rma,
                       eval_uma, fit_single)
from .pipeline import RunConfig, run_batch, run_site
from .stats import BatchResults, best_model_per_site, quantile_groups, rmse, rmse_cdf
from .viewshed import LOS, NLOS, OUTSIDE, RxSpec, VisibilityMap, compute_viewshed, is_visible, los_fraction

__version__ = "0.1.0"
