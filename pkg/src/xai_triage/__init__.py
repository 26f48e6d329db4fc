"""Insulator-shell anomaly triage toolkit.

Crop detector boxes, classify shell condition with a small traced
network, correct class imbalance by retraining the head on balanced
partitions, explain predictions with pixel-wise relevance heatmaps,
gate blurry images by Laplacian sharpness, and score localization
quality against segmentation masks.
"""

from .errors import XaiTriageError
from .lrp import Heatmap, RuleConfig, relevance
from .manifest import CLASSES, Box, SampleRecord, crop, ingest_manifest
from .model_io import load_model, save_model
from .nn import ActivationTrace, Network, forward, predict_class
from .rebalance import HeadWeights, rebalance_head, replace_head

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace",
    "Box",
    "CLASSES",
    "Heatmap",
    "HeadWeights",
    "Network",
    "RuleConfig",
    "SampleRecord",
    "XaiTriageError",
    "crop",
    "forward",
    "ingest_manifest",
    "load_model",
    "predict_class",
    "rebalance_head",
    "relevance",
    "replace_head",
    "save_model",
    "__version__",
]
