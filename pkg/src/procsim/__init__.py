"""Confidence-aware deep metric learning under label noise, at desk scale."""

__version__ = "0.1.0"

from .confidence import ConfidenceConfig, ThresholdStrategy, batch_confidences, sample_confidence
from .data import FeatureDataset, read_dataset, write_dataset
from .evaluation import nmi, noisy_identification, recall_at_k
from .losses import LossConfig, ms_loss_per_sample, proxy_nca_per_sample, semantic_regularizer_per_sample
from .model import Embedder, ProxyBank, TrainConfig, benchmark_config, train
from .noise import NoiseModel, NoiseSpec, audit, corrupt
from .numerics import DomainError, lambert_w0, otsu_threshold
from .synth import SynthSpec, generate
from .taxonomy import LexicalGraph, Taxonomy, build_hierarchy

__all__ = [
    "ConfidenceConfig",
    "DomainError",
    "Embedder",
    "FeatureDataset",
    "LexicalGraph",
    "LossConfig",
    "NoiseModel",
    "NoiseSpec",
    "ProxyBank",
    "SynthSpec",
    "Taxonomy",
    "ThresholdStrategy",
    "TrainConfig",
    "audit",
    "batch_confidences",
    "benchmark_config",
    "build_hierarchy",
    "corrupt",
    "generate",
    "lambert_w0",
    "ms_loss_per_sample",
    "nmi",
    "noisy_identification",
    "otsu_threshold",
    "proxy_nca_per_sample",
    "read_dataset",
    "recall_at_k",
    "sample_confidence",
    "semantic_regularizer_per_sample",
    "train",
    "write_dataset",
]
