"""Normal Similarity Network: hard-EM Gaussian filter banks with a top-down image sampler."""

from .data import Dataset, PixelNormalizer, ZCAWhitening, load_idx, load_image_dir
from .estimator import HardEMFilterBank, NormalSimilarityNetwork
from .filters import FilterBank, GaussianFilter
from .generation import GenConfig, generate
from .network import ARCHITECTURES, LayerSpec, Network, forward
from .persistence import load_model, save_model
from .training import EmConfig, train_network

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES", "Dataset", "EmConfig", "FilterBank", "GaussianFilter", "GenConfig",
    "HardEMFilterBank", "LayerSpec", "Network", "NormalSimilarityNetwork", "PixelNormalizer",
    "ZCAWhitening", "forward", "generate", "load_idx", "load_image_dir", "load_model",
    "save_model", "train_network",
]
