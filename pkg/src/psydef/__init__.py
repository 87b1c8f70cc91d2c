"""Psychological defense-mechanism classification with stressor-anchored augmentation."""

from .config import PipelineConfig
from .corpus import LABEL_NAMES, LABELS, Dialogue, Turn, load_corpus
from .pipeline import STAGES, run_pipeline

__version__ = "0.1.0"

__all__ = ["LABELS", "LABEL_NAMES", "Dialogue", "PipelineConfig", "STAGES", "Turn", "load_corpus",
           "run_pipeline", "__version__"]
