"""Backend contracts for the classifier, embedder, and generator roles.

Every pipeline stage talks to backends through these interfaces only, so an
in-process reference double and an out-of-process neural adapter are
interchangeable. Capabilities are negotiated, never assumed: a backend that
advertises the wrong label set or embedding dimension is rejected before any
work happens.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from ..errors import (  # re-exported for callers  # noqa: F401
    BackendError,
    BackendUnavailableError,
    CapabilityMismatchError,
    WireProtocolError,
)

if TYPE_CHECKING:
    from ..data import ImageRef, StyleLabel
    from ..extractor import AttentionProfile
    from ..generator import EmotionPrompt, FineTunePair
    from ..retriever import EmbeddingVector


@dataclass(frozen=True)
class ClassifierCapabilities:
    labels: tuple[str, ...]
    head_count: int
    layer_count: int


@dataclass(frozen=True)
class EmbedderCapabilities:
    dimension: int
    modalities: tuple[str, ...] = ("text", "image")


@dataclass(frozen=True)
class GeneratorCapabilities:
    deterministic: bool
    seedable: bool


class ClassifierBackend(ABC):
    """Style classifier exposing label probabilities and anchor attention."""

    capabilities: ClassifierCapabilities

    @abstractmethod
    def classify(self, tokens: Sequence[str]) -> dict["StyleLabel", float]:
        """Distribution over the advertised labels; sums to 1 within 1e-6."""

    @abstractmethod
    def attention(self, tokens: Sequence[str]) -> "AttentionProfile":
        """Anchor-to-word attention; one distribution per (head, layer)."""

    def close(self) -> None:
        pass


class EmbedderBackend(ABC):
    """Shared-space encoder for captions and images."""

    capabilities: EmbedderCapabilities

    @abstractmethod
    def embed_text(self, tokens: Sequence[str]) -> "EmbeddingVector":
        ...

    @abstractmethod
    def embed_image(self, image: "ImageRef") -> "EmbeddingVector":
        ...

    def close(self) -> None:
        pass


class GeneratorBackend(ABC):
    """Conditional caption generator."""

    capabilities: GeneratorCapabilities

    @abstractmethod
    def generate(self, prompt: "EmotionPrompt", seed: int) -> list[str]:
        """Token list for the stylized caption; deterministic backends must
        return identical output for identical (prompt, seed)."""

    def finetune(self, pairs: Sequence["FineTunePair"]) -> dict:
        """Adapter-only hook; reference backends acknowledge without training."""
        return {"trained": False, "items": len(pairs)}

    def close(self) -> None:
        pass
