"""Depth-aware hyper-involution detector on a self-contained autodiff core."""

from .depth_weighting import (DepthMap, WeightingFunction, WeightingKind,
                              weight, weight_field, weight_field_batch,
                              weight_values)
from .detector import Detection, Detector, ModelConfig, kmeans_anchors, nms
from .fusion import FusionStage
from .loss import (LossWeights, build_targets, decode_head, detection_loss,
                   total_loss)
from .metrics import average_precision, iou, mean_average_precision
from .operators import (HyperNetwork, InvolutionGenerator, count_params,
                        depth_aware_hyper_involution_forward, generate_kernels,
                        hyper_involution_forward, involution_apply,
                        involution_forward)
from .optim import Adam
from .tensor import BatchNormState, Tensor
from .training import evaluate_model, train_model
from .weights_io import load_tensors, save_tensors

__version__ = "0.1.0"

__all__ = [
    "Adam", "BatchNormState", "DepthMap", "Detection", "Detector",
    "FusionStage", "HyperNetwork", "InvolutionGenerator", "LossWeights",
    "ModelConfig", "Tensor", "WeightingFunction", "WeightingKind",
    "average_precision", "build_targets", "count_params", "decode_head",
    "depth_aware_hyper_involution_forward", "detection_loss", "evaluate_model",
    "generate_kernels", "hyper_involution_forward", "involution_apply",
    "involution_forward", "iou", "kmeans_anchors", "load_tensors",
    "mean_average_precision", "nms", "save_tensors", "total_loss",
    "train_model", "weight", "weight_field", "weight_field_batch",
    "weight_values",
]
