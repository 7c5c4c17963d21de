"""Doubly robust local-projections difference-in-differences for staggered adoption."""

from .aggregation import aggregate, cell_stats, pooled_lpdid_coefficient, rw_weights, vw_weights
from .errors import DrlpdidError
from .estimators import NAMES, EventStudy, HorizonEstimate, estimate, event_study
from .inference import Band, InfluenceArray, cluster_se, linear_contrast, multiplier_bootstrap
from .io import ingest_csv, write_panel_csv
from .kernels import NEVER
from .nuisance import build_basis, fit_ipt, fit_nuisance
from .panel import LAST_PRE, BaseRule, Panel, Stack, build_stack, clean_control_set, long_diff
from .simulation import McDesign, McReport, run_campaign, simulate

__version__ = "0.1.0"

__all__ = [
    "NEVER", "LAST_PRE", "NAMES", "Panel", "BaseRule", "Stack", "build_stack",
    "clean_control_set", "long_diff", "cell_stats", "vw_weights", "rw_weights", "aggregate",
    "pooled_lpdid_coefficient", "build_basis", "fit_ipt", "fit_nuisance", "estimate",
    "event_study", "HorizonEstimate", "EventStudy", "InfluenceArray", "Band", "cluster_se",
    "linear_contrast", "multiplier_bootstrap", "McDesign", "McReport", "simulate",
    "run_campaign", "ingest_csv", "write_panel_csv", "DrlpdidError",
]
