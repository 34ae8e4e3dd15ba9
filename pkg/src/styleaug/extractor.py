"""Style-signal extraction from classifier attention.

Given per-head, per-layer attention weights from the classification anchor
token to each caption word, the extractor ranks words by attention, picks the
head/layer whose top-word removal most confuses the classifier across the
corpus, and splits each caption into a style phrase and a residual.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .data import AnnotatedStylizedSample, Caption, StyleLabel, StylizedSample
from .errors import BackendError, BackendUnavailableError

if TYPE_CHECKING:
    from .backends.base import ClassifierBackend

logger = logging.getLogger(__name__)

_ROW_SUM_TOL = 1e-6
_DENOMINATOR_FLOOR = 1e-12


class CaptionTooShortError(ValueError):
    """Captions need at least two tokens to split into phrase and residual."""


class AttentionProfile:
    """Anchor-token attention weights indexed [head][layer][token].

    Each (head, layer) row is a distribution over the caption's tokens
    (non-negative, summing to 1 within 1e-6).
    """

    def __init__(self, weights):
        arr = np.asarray(weights, dtype=float)
        if arr.ndim != 3:
            raise ValueError(f"attention weights must be 3-d, got shape {arr.shape}")
        if arr.shape[2] < 1:
            raise ValueError("attention profile needs at least one token")
        if np.any(arr < 0):
            raise ValueError("attention weights must be non-negative")
        sums = arr.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(f"attention rows must sum to 1 (worst deviation {worst:.3g})")
        self.weights = arr

    @property
    def head_count(self) -> int:
        return self.weights.shape[0]

    @property
    def layer_count(self) -> int:
        return self.weights.shape[1]

    @property
    def token_count(self) -> int:
        return self.weights.shape[2]

    def weights_at(self, hl: "HeadLayerId") -> np.ndarray:
        if not (0 <= hl.head < self.head_count and 0 <= hl.layer < self.layer_count):
            raise IndexError(f"{hl} out of range for {self.head_count}x{self.layer_count}")
        return self.weights[hl.head, hl.layer]


@dataclass(frozen=True, order=True)
class HeadLayerId:
    head: int
    layer: int


@dataclass(frozen=True)
class ExtractorConfig:
    """Extraction proportion and related knobs (proportion defaults to 0.25)."""

    epsilon: float = 0.25
    min_phrase_len: int = 1
    # Labels excluded from the confidence denominator (typically the factual
    # label when the classifier was trained against factual sentences).
    denominator_excludes: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.min_phrase_len < 1:
            raise ValueError("min_phrase_len must be positive")


@dataclass(frozen=True)
class ConfidenceRecord:
    head_layer: HeadLayerId
    mean_confidence: float


def phrase_size(epsilon: float, token_count: int, min_phrase_len: int = 1) -> int:
    """Number of words to extract: round-half-up of epsilon*T, clamped so both
    the phrase and the residual stay non-empty."""
    if token_count < 2:
        raise CaptionTooShortError(f"need at least 2 tokens, got {token_count}")
    n = math.floor(epsilon * token_count + 0.5)
    return max(max(1, min_phrase_len), min(n, token_count - 1))


def top_epsilon_tokens(
    profile: AttentionProfile,
    hl: HeadLayerId,
    epsilon: float,
    min_phrase_len: int = 1,
) -> set[int]:
    """Indices of the highest-attention words at (head, layer).

    Exactly phrase_size(...) indices; ties broken toward the smaller token
    index. Ranking depends only on weight order, so any positive rescaling of
    the row leaves the result unchanged.
    """
    row = profile.weights_at(hl)
    n = phrase_size(epsilon, profile.token_count, min_phrase_len)
    order = sorted(range(profile.token_count), key=lambda i: (-row[i], i))
    return set(order[:n])


def reduce_caption(caption: Caption, removed: set[int]) -> Caption:
    """Drop the given token positions, preserving the order of the rest."""
    if not removed:
        raise ValueError("removed set must be non-empty")
    if not all(0 <= i < len(caption.tokens) for i in removed):
        raise IndexError("removed indices out of range")
    remaining = [tok for i, tok in enumerate(caption.tokens) if i not in removed]
    if not remaining:
        raise ValueError("cannot remove every token from a caption")
    return Caption.from_tokens(remaining)


def confidence_score(
    probs: Mapping[StyleLabel, float],
    style: StyleLabel,
    excluded: Iterable[StyleLabel] = (),
) -> float:
    """Ratio of the target style's probability to the other styles' total.

    Low values mean removing the candidate words destroyed the style signal.
    The denominator is floored at 1e-12 so an unmoved classifier (p(style)=1)
    yields a huge-but-finite score.
    """
    if style not in probs:
        raise ValueError(f"style {style!r} not in classifier distribution {sorted(probs)}")
    total = sum(probs.values())
    if abs(total - 1.0) > _ROW_SUM_TOL:
        raise ValueError(f"probabilities sum to {total}, expected 1")
    excluded = set(excluded)
    denom = sum(p for label, p in probs.items() if label != style and label not in excluded)
    return probs[style] / max(denom, _DENOMINATOR_FLOOR)


def confidence_sweep(
    corpus: Sequence[StylizedSample],
    classifier: "ClassifierBackend",
    cfg: ExtractorConfig,
) -> list[ConfidenceRecord]:
    """Mean confidence per (head, layer) after removing each caption's
    top-epsilon words there. One attention call per caption, one classify call
    per caption per (head, layer)."""
    if not corpus:
        raise ValueError("cannot sweep an empty corpus")
    caps = classifier.capabilities
    sums = np.zeros((caps.head_count, caps.layer_count))
    counted = 0
    for sample in corpus:
        if len(sample.caption) < 2:
            logger.warning("skipping %s in head/layer sweep: caption too short", sample.image.id)
            continue
        profile = _profile_for(classifier, sample)
        counted += 1
        for head in range(caps.head_count):
            for layer in range(caps.layer_count):
                hl = HeadLayerId(head, layer)
                removed = top_epsilon_tokens(profile, hl, cfg.epsilon, cfg.min_phrase_len)
                reduced = reduce_caption(sample.caption, removed)
                probs = classifier.classify(list(reduced.tokens))
                sums[head, layer] += confidence_score(
                    probs, sample.style, cfg.denominator_excludes
                )
    if counted == 0:
        raise CaptionTooShortError("no caption in the corpus has at least 2 tokens")
    return [
        ConfidenceRecord(HeadLayerId(h, l), float(sums[h, l] / counted))
        for h in range(caps.head_count)
        for l in range(caps.layer_count)
    ]


def select_head_layer(
    corpus: Sequence[StylizedSample],
    classifier: "ClassifierBackend",
    cfg: ExtractorConfig,
) -> HeadLayerId:
    """The (head, layer) minimizing mean confidence over the corpus.

    Ties break toward the smaller layer, then the smaller head.
    """
    records = confidence_sweep(corpus, classifier, cfg)
    best = min(records, key=lambda r: (r.mean_confidence, r.head_layer.layer, r.head_layer.head))
    return best.head_layer


def extract_phrase(
    sample: StylizedSample,
    hl: HeadLayerId,
    classifier: "ClassifierBackend",
    cfg: ExtractorConfig,
) -> AnnotatedStylizedSample:
    """Split one caption into its style phrase and residual at (head, layer)."""
    if len(sample.caption) < 2:
        raise CaptionTooShortError(
            f"caption of {sample.image.id} has {len(sample.caption)} token(s)"
        )
    profile = _profile_for(classifier, sample)
    removed = top_epsilon_tokens(profile, hl, cfg.epsilon, cfg.min_phrase_len)
    tokens = sample.caption.tokens
    phrase = tuple(tok for i, tok in enumerate(tokens) if i in removed)
    residual = tuple(tok for i, tok in enumerate(tokens) if i not in removed)
    return AnnotatedStylizedSample(base=sample, style_phrase=phrase, residual=residual)


@dataclass
class AnnotationResult:
    annotated: list[AnnotatedStylizedSample]
    head_layer: HeadLayerId
    report: list[ConfidenceRecord]
    skipped: list[tuple[str, str]] = field(default_factory=list)


def annotate_corpus(
    corpus: Sequence[StylizedSample],
    classifier: "ClassifierBackend",
    cfg: ExtractorConfig,
) -> AnnotationResult:
    """Select the style head/layer on the full corpus, then annotate every
    caption with its extracted phrase. Per-sample failures are logged and
    skipped; an empty corpus fails before any backend call."""
    if not corpus:
        raise ValueError("cannot annotate an empty corpus")
    report = confidence_sweep(corpus, classifier, cfg)
    head_layer = min(
        report, key=lambda r: (r.mean_confidence, r.head_layer.layer, r.head_layer.head)
    ).head_layer
    annotated = []
    skipped = []
    for sample in corpus:
        try:
            annotated.append(extract_phrase(sample, head_layer, classifier, cfg))
        except CaptionTooShortError as exc:
            logger.warning("skipping %s: %s", sample.image.id, exc)
            skipped.append((sample.image.id, str(exc)))
    return AnnotationResult(
        annotated=annotated, head_layer=head_layer, report=report, skipped=skipped
    )


def _profile_for(classifier: "ClassifierBackend", sample: StylizedSample) -> AttentionProfile:
    try:
        return classifier.attention(list(sample.caption.tokens))
    except BackendUnavailableError as exc:
        raise BackendUnavailableError(
            f"attention backend lost on caption {sample.image.id}: {exc}"
        ) from exc
    except Exception as exc:
        raise BackendError(f"attention backend failed on caption {sample.image.id}: {exc}") from exc
