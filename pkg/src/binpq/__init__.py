"""Binarization-regularized training and product quantization of small MLPs."""

from .errors import BinPQError
from .nn import Dataset, Layer, Network, TrainConfig, evaluate, forward, init_network, train
from .pq import compression_rate, kmeans, quantize_layer, quantize_network, reconstruct
from .regularizer import binarization_progress, harden, penalty, train_regularized
from .store import load_model, save_model

__all__ = [
    "BinPQError", "Dataset", "Layer", "Network", "TrainConfig", "evaluate", "forward",
    "init_network", "train", "compression_rate", "kmeans", "quantize_layer",
    "quantize_network", "reconstruct", "binarization_progress", "harden", "penalty",
    "train_regularized", "load_model", "save_model",
]
__version__ = "0.1.0"
