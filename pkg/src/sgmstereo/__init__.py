"""Dense two-view stereo matching: SGM, MGM and their hierarchical variants."""

from sgmstereo.imgio import INVALID, load_gray, read_pfm, write_pfm
from sgmstereo.aggregate import PenaltySchedule
from sgmstereo.hierarchy import (
    ALGORITHMS,
    HierarchyConfig,
    SearchBounds,
    match_pair,
    run_flat,
    run_hierarchical,
)
from sgmstereo.postproc import RefineConfig
from sgmstereo.metrics import EvalReport, aggregate_reports, evaluate

__all__ = [
    "ALGORITHMS",
    "INVALID",
    "EvalReport",
    "HierarchyConfig",
    "PenaltySchedule",
    "RefineConfig",
    "SearchBounds",
    "aggregate_reports",
    "evaluate",
    "load_gray",
    "match_pair",
    "read_pfm",
    "run_flat",
    "run_hierarchical",
    "write_pfm",
]

__version__ = "0.1.0"
