"""Multi-view normalizing-flow anomaly detection on feature tensors.

A chain of affine coupling blocks maps per-view feature maps to a standard
normal latent.  Each coupling's scale/translation network mixes information
between camera views along a fixed topology (top view plus a ring of side
views).  Per-pixel negative log-likelihood is the anomaly score; image and
sample scores are maxima over foreground pixels.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import MultiFlowDetector
from .evaluation import EvaluationResult, evaluate
from .exceptions import (ConfigurationError, DataError, FormatError, MetricError,
                         MultiFlowError, NumericError, UsageError)
from .flow import FlowModel, coupling_forward, coupling_inverse, flow_forward, flow_inverse, soft_clamp
from .manifest import DatasetManifest
from .morphology import mask_postprocess, resize_mask
from .multiview import ViewTopology, build_view_topology, cross_view_aggregate, st_network
from .scoring import anomaly_map, aupro, auroc, image_score, sample_score, upsample_map
from .synth import SynthConfig, generate_synthetic
from .tensorfile import read_tensor, write_tensor
from .training import Checkpoint, NoiseScheme, TrainConfig, fit_flow, nll_loss, sample_noise, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ConfigurationError", "DataError", "DatasetManifest", "EvaluationResult",
    "FlowModel", "FormatError", "MetricError", "MultiFlowDetector", "MultiFlowError",
    "NoiseScheme", "NumericError", "SynthConfig", "TrainConfig", "UsageError", "ViewTopology",
    "anomaly_map", "aupro", "auroc", "build_view_topology", "coupling_forward",
    "coupling_inverse", "cross_view_aggregate", "evaluate", "fit_flow", "flow_forward",
    "flow_inverse", "generate_synthetic", "image_score", "load_checkpoint", "mask_postprocess",
    "nll_loss", "read_tensor", "resize_mask", "sample_noise", "sample_score", "save_checkpoint",
    "soft_clamp", "st_network", "train", "upsample_map", "write_tensor",
]
