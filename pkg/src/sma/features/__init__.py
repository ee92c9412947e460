from .embeddings import pseudo_text_embedding
from .instances import (
    Instance,
    InstanceFormatError,
    NodeFeatures,
    ObjectRecord,
    TextRecord,
    load_instances,
    node_features,
    save_instances,
)
from .phoc import PHOC_DIM, phoc
from .synthetic import RULES, answer_from_geometry, generate_dataset, generate_synthetic_scene

__all__ = [
    "PHOC_DIM",
    "RULES",
    "Instance",
    "InstanceFormatError",
    "NodeFeatures",
    "ObjectRecord",
    "TextRecord",
    "answer_from_geometry",
    "generate_dataset",
    "generate_synthetic_scene",
    "load_instances",
    "node_features",
    "phoc",
    "pseudo_text_embedding",
    "save_instances",
]
