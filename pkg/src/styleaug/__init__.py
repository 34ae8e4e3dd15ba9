"""Data augmentation for stylized image captioning: mine style phrases from a
small stylized corpus and graft them onto similar scenes from a large factual
one, with quality filtering."""

from .data import (
    AnnotatedStylizedSample,
    AugmentedPair,
    Caption,
    FactualPair,
    ImageRef,
    LabelSet,
    StylizedSample,
    load_corpus,
    save_corpus,
    tokenize,
)
from .extractor import AttentionProfile, ExtractorConfig, HeadLayerId
from .pipeline import PipelineConfig, augment, config_from_toml
from .retriever import EmbeddingVector, Neighbor, RetrievalMode, SceneIndex

__version__ = "0.1.0"

__all__ = [
    "AnnotatedStylizedSample",
    "AttentionProfile",
    "AugmentedPair",
    "Caption",
    "EmbeddingVector",
    "ExtractorConfig",
    "FactualPair",
    "HeadLayerId",
    "ImageRef",
    "LabelSet",
    "Neighbor",
    "PipelineConfig",
    "RetrievalMode",
    "SceneIndex",
    "StylizedSample",
    "augment",
    "config_from_toml",
    "load_corpus",
    "save_corpus",
    "tokenize",
]
