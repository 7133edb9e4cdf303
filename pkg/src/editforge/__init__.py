"""Tooling for instruction-based image editing data: a taxonomy of edit sub-tasks,
a checkpointed curation pipeline, closed-form scores and a judge-driven benchmark."""
from .models import ImageRef, MetricVector, PreferencePair, Status, Triplet
from .taxonomy import Category, Metric, SubTask, Taxonomy, classify_subtask, default_taxonomy, metric_set_for

__version__ = "0.1.0"

__all__ = [
    "Category",
    "ImageRef",
    "Metric",
    "MetricVector",
    "PreferencePair",
    "Status",
    "SubTask",
    "Taxonomy",
    "Triplet",
    "classify_subtask",
    "default_taxonomy",
    "metric_set_for",
]
