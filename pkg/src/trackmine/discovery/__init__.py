"""Track embeddings and clustering: representative crops, KMeans and HDBSCAN."""
from ._backend import BACKEND
from .embedding import TrackEmbedding, distance_to_center_outlier_scores, representative_embedding
from .hdbscan import CondensedTree, HdbscanParams, HdbscanResult, core_distances, hdbscan, mutual_reachability
from .kmeans import KMeansResult, kmeans

__all__ = [
    "BACKEND",
    "CondensedTree",
    "HdbscanParams",
    "HdbscanResult",
    "KMeansResult",
    "TrackEmbedding",
    "core_distances",
    "distance_to_center_outlier_scores",
    "hdbscan",
    "kmeans",
    "mutual_reachability",
    "representative_embedding",
]
