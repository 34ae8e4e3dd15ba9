"""Deterministic in-process reference backends.

These doubles make the whole pipeline runnable and testable without model
weights: a lexicon bag-of-words classifier with a synthetic attention profile,
a seeded-hash bag-of-tokens embedder, and a template-splicing generator. All
three are pure functions of (input, seed) and reproduce bit-identically across
runs and platforms.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..data import ImageRef
from ..extractor import AttentionProfile, HeadLayerId
from ..generator import EmotionPrompt
from ..retriever import EmbeddingVector
from .base import (
    ClassifierBackend,
    ClassifierCapabilities,
    EmbedderBackend,
    EmbedderCapabilities,
    GeneratorBackend,
    GeneratorCapabilities,
)

# Attention weight levels at the designated style head/layer. Lexicon words
# sit at >= 12x the non-lexicon ceiling, comfortably above the documented
# 10:1 ratio even after jitter.
_STAR_LEXICON_BASE = 12.0
_STAR_OTHER_BASE = 1.0
_STAR_OTHER_JITTER = 0.1
_UNIFORM_JITTER = 0.05


def _seed_from(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


class ReferenceClassifier(ClassifierBackend):
    """Additive-smoothed lexicon scorer with a constructed attention profile.

    One designated (head, layer) concentrates attention on lexicon words; all
    other positions are near-uniform with jitter seeded per caption, so
    head/layer selection is exactly reproducible.
    """

    def __init__(
        self,
        lexicons: Mapping[str, Iterable[str]],
        head_count: int = 4,
        layer_count: int = 4,
        star: HeadLayerId | tuple[int, int] = (1, 2),
        seed: int = 0,
        alpha: float = 0.5,
    ):
        if not lexicons:
            raise ValueError("at least one lexicon is required")
        self.lexicons = {label: frozenset(words) for label, words in lexicons.items()}
        for label, words in self.lexicons.items():
            if not words:
                raise ValueError(f"lexicon for {label!r} is empty")
        flat = [w for words in self.lexicons.values() for w in words]
        if len(flat) != len(set(flat)):
            raise ValueError("lexicons must be disjoint")
        self.union = frozenset(flat)
        if isinstance(star, tuple):
            star = HeadLayerId(*star)
        if not (0 <= star.head < head_count and 0 <= star.layer < layer_count):
            raise ValueError(f"star {star} outside {head_count}x{layer_count}")
        self.star = star
        self.seed = int(seed)
        self.alpha = float(alpha)
        self.capabilities = ClassifierCapabilities(
            labels=tuple(self.lexicons),
            head_count=int(head_count),
            layer_count=int(layer_count),
        )

    def classify(self, tokens: Sequence[str]) -> dict[str, float]:
        scores = {
            label: sum(1 for tok in tokens if tok in words) + self.alpha
            for label, words in self.lexicons.items()
        }
        total = sum(scores.values())
        return {label: score / total for label, score in scores.items()}

    def attention(self, tokens: Sequence[str]) -> AttentionProfile:
        if not tokens:
            raise ValueError("cannot build an attention profile for no tokens")
        heads, layers, t = self.capabilities.head_count, self.capabilities.layer_count, len(tokens)
        rng = _seed_from(str(self.seed), "attention", " ".join(tokens))
        jitter = rng.random((heads, layers, t))
        weights = _STAR_OTHER_BASE + _UNIFORM_JITTER * jitter
        in_lexicon = np.array([tok in self.union for tok in tokens])
        star_row = np.where(
            in_lexicon,
            _STAR_LEXICON_BASE + jitter[self.star.head, self.star.layer],
            _STAR_OTHER_BASE + _STAR_OTHER_JITTER * jitter[self.star.head, self.star.layer],
        )
        weights[self.star.head, self.star.layer] = star_row
        weights /= weights.sum(axis=2, keepdims=True)
        return AttentionProfile(weights)


class ReferenceEmbedder(EmbedderBackend):
    """Unit-normalized seeded-hash bag-of-tokens embeddings.

    Image uris of the form ``tags:a,b,c`` embed their tag list in the same
    hash space as caption words, so cross-modal similarity reflects tag/word
    overlap. Any other uri falls back to hashing the image id.
    """

    def __init__(self, dimension: int = 768, seed: int = 0):
        if dimension < 2:
            raise ValueError("dimension must be at least 2")
        self.seed = int(seed)
        self.capabilities = EmbedderCapabilities(dimension=int(dimension))
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            rng = _seed_from(str(self.seed), "tok", token)
            vec = rng.standard_normal(self.capabilities.dimension)
            self._token_cache[token] = vec
        return vec

    def _bag(self, tokens: Sequence[str]) -> EmbeddingVector:
        total = np.zeros(self.capabilities.dimension)
        for tok in tokens:
            total += self._token_vector(tok)
        norm = float(np.linalg.norm(total))
        if norm < 1e-12:
            raise ValueError("degenerate embedding (token vectors cancelled)")
        return EmbeddingVector.of(total / norm)

    def embed_text(self, tokens: Sequence[str]) -> EmbeddingVector:
        if not tokens:
            raise ValueError("cannot embed an empty token list")
        return self._bag(tokens)

    def embed_image(self, image: ImageRef) -> EmbeddingVector:
        if image.uri.startswith("tags:"):
            tags = [t.strip() for t in image.uri[len("tags:") :].split(",") if t.strip()]
            if tags:
                return self._bag(tags)
        return self._bag([f"image-id:{image.id}"])


class ReferenceGenerator(GeneratorBackend):
    """Splices the style phrase into the content tokens.

    Default behavior appends the phrase as a trailing clause. When an anchor
    lexicon is configured and a long-enough content contains an anchor word,
    the phrase replaces that word instead. Either way the output keeps every
    phrase token and at least 80% of the content tokens, identically for
    identical (prompt, seed).
    """

    def __init__(self, anchor_lexicon: Iterable[str] = (), seed: int = 0):
        self.anchors = frozenset(anchor_lexicon)
        self.seed = int(seed)
        self.capabilities = GeneratorCapabilities(deterministic=True, seedable=True)

    def generate(self, prompt: EmotionPrompt, seed: int) -> list[str]:
        content = list(prompt.content)
        phrase = list(prompt.style_phrase)
        if self.anchors and len(content) >= 5:
            for i, tok in enumerate(content):
                if tok in self.anchors:
                    return content[:i] + phrase + content[i + 1 :]
        return content + phrase
