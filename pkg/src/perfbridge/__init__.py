"""Predict system-level performance regressions from component benchmarks.

Local benchmark deviations are lifted through the call-dependency graph to
subsystem-level changes, applied to a queueing Petri net model of the
deployed system, and judged by simulating both model versions.
"""

from .detector import RegressionVerdict, classify_outcome, render_report, run_pipeline
from .errors import (
    GraphError,
    InputError,
    ModelValidationError,
    ParseError,
    PerfBridgeError,
    StageError,
)
from .graph import DeviationMap, SubsystemDeviation
from .perfdata import ComponentId, DependencyGraph, MeasurementCatalog, TraceEvent
from .stats import DeviationReport, cliffs_delta, compare, wilcoxon_rank_sum

__version__ = "0.1.0"

__all__ = [
    "ComponentId",
    "DependencyGraph",
    "DeviationMap",
    "DeviationReport",
    "GraphError",
    "InputError",
    "MeasurementCatalog",
    "ModelValidationError",
    "ParseError",
    "PerfBridgeError",
    "RegressionVerdict",
    "StageError",
    "SubsystemDeviation",
    "TraceEvent",
    "classify_outcome",
    "cliffs_delta",
    "compare",
    "render_report",
    "run_pipeline",
    "wilcoxon_rank_sum",
    "__version__",
]
