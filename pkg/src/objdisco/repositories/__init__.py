"""Repository layer: datasets and stage artifacts on disk."""

from .artifact_repository import ArtifactRepository
from .base import BaseRepository
from .dataset_repository import DatasetRepository

__all__ = [
    "ArtifactRepository",
    "BaseRepository",
    "DatasetRepository",
]
