"""Centroid-based fairness post-processing for face verification embeddings."""

__version__ = "0.1.0"

from cfair.centroids import CentroidSet, estimate_centroids, pseudo_blocks, pseudo_score
from cfair.cftrain import TrainConfig, TrainingTables, batch_loss_grad, compute_weights, train
from cfair.curves import StepCurve, bias_metrics, fairness_report, far_inverse, frr_inverse, roc_point
from cfair.dataset import DatasetError, EmbeddingDataset, load_dataset, save_dataset
from cfair.fairmodule import ModuleParams, NumericalError, forward, init_from_pretrained
from cfair.kernels import BACKEND
from cfair.synth import SynthConfig, generate
from cfair.transform import alignment_report, build_target_table

__all__ = [
    "BACKEND",
    "CentroidSet",
    "DatasetError",
    "EmbeddingDataset",
    "ModuleParams",
    "NumericalError",
    "StepCurve",
    "SynthConfig",
    "TrainConfig",
    "TrainingTables",
    "alignment_report",
    "batch_loss_grad",
    "bias_metrics",
    "build_target_table",
    "compute_weights",
    "estimate_centroids",
    "fairness_report",
    "far_inverse",
    "forward",
    "frr_inverse",
    "generate",
    "init_from_pretrained",
    "load_dataset",
    "pseudo_blocks",
    "pseudo_score",
    "roc_point",
    "save_dataset",
    "train",
]
