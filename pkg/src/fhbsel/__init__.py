"""Self-supervised top-k band selection for mild/serious FHB detection from hyperspectral cubes."""

__version__ = "0.1.0"

from .hsi_core import ClassLabel, Dataset, HsiCube, Spectrum, load_cube, save_cube  # noqa: E402
from .preprocess import FeatureMatrix, build_features  # noqa: E402
from .cluster import KMeansPseudoLabeler, kmeans_fit, select_k  # noqa: E402
from .classify import BoostedTreesClassifier, LinearSVMClassifier  # noqa: E402
from .bandselect import TopKBandSelector  # noqa: E402

__all__ = [
    "BoostedTreesClassifier",
    "ClassLabel",
    "Dataset",
    "FeatureMatrix",
    "HsiCube",
    "KMeansPseudoLabeler",
    "LinearSVMClassifier",
    "Spectrum",
    "TopKBandSelector",
    "build_features",
    "kmeans_fit",
    "load_cube",
    "save_cube",
    "select_k",
]
