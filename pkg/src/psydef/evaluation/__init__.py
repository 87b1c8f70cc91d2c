from .analytics import (
    CdiPoint, Transition, TransitionStats, cdi_curve, default_cdi_components, defense_trajectory,
    latency_by_label, latency_summary, opening_up_turn, pearson, transition_stats,
)
from .metrics import MetricsReport, SinkReport, confusion_matrix, evaluate, off_diagonal, sink_analysis
from .report import emit_analysis, emit_report, mechanism_activation_rows

__all__ = [
    "CdiPoint", "MetricsReport", "SinkReport", "Transition", "TransitionStats", "cdi_curve",
    "confusion_matrix", "default_cdi_components", "defense_trajectory", "emit_analysis", "emit_report",
    "evaluate", "latency_by_label", "latency_summary", "mechanism_activation_rows", "off_diagonal",
    "opening_up_turn", "pearson", "sink_analysis", "transition_stats",
]
