"""Hierarchical CNN classification of encrypted network packets."""

__version__ = "0.1.0"

from .cnn import CnnModel, ConvLayer, DenseLayer, backward, forward, predict, predict_proba, softmax
from .dataset import EncodedDataset, load_dataset, save_dataset
from .encoder import EncoderConfig, downsample, encode_full, encode_reduced
from .evaluation import bench_timing, compare_app_level, evaluate
from .pcap import LabeledDataset, RawPacket, SplitSpec, merge, parse_pcap, split
from .pipeline import Catalog, HierarchicalClassifier, classify_batch, classify_full, classify_service, load_catalog
from .trainer import TrainConfig, load_model, save_model, train

__all__ = [
    "CnnModel",
    "ConvLayer",
    "DenseLayer",
    "backward",
    "forward",
    "predict",
    "predict_proba",
    "softmax",
    "EncodedDataset",
    "load_dataset",
    "save_dataset",
    "EncoderConfig",
    "downsample",
    "encode_full",
    "encode_reduced",
    "bench_timing",
    "compare_app_level",
    "evaluate",
    "LabeledDataset",
    "RawPacket",
    "SplitSpec",
    "merge",
    "parse_pcap",
    "split",
    "Catalog",
    "HierarchicalClassifier",
    "classify_batch",
    "classify_full",
    "classify_service",
    "load_catalog",
    "TrainConfig",
    "load_model",
    "save_model",
    "train",
]
