"""Quality gate over generation candidates.

A candidate enters the augmented corpus only when all three checks pass:
the style classifier's argmax label is the target style, trigram perplexity
is strictly below the ceiling, and the recorded retrieval similarity is
strictly above the floor. Failures are data (logged with their reports),
never errors; backend failures leave a candidate unevaluated rather than
silently passed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from . import ngram
from .data import AugmentedPair, Provenance, StyleLabel
from .generator import GenerationCandidate

if TYPE_CHECKING:
    from .backends.base import ClassifierBackend

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QualityCriteria:
    """Thresholds for the three checks. target_style None means each
    candidate is judged against its own style label."""

    target_style: StyleLabel | None = None
    max_perplexity: float = 80.0
    min_similarity: float = 0.6
    dedupe: bool = True

    def __post_init__(self):
        if self.max_perplexity <= 0:
            raise ValueError("max_perplexity must be positive")
        if not -1.0 <= self.min_similarity <= 1.0:
            raise ValueError("min_similarity must be within [-1, 1]")


@dataclass(frozen=True)
class QualityReport:
    cls_probs: dict[StyleLabel, float]
    cls_pass: bool
    ppl: float
    ppl_pass: bool
    sim: float
    sim_pass: bool

    @property
    def accepted(self) -> bool:
        return self.cls_pass and self.ppl_pass and self.sim_pass

    def reasons(self) -> list[str]:
        out = []
        if not self.cls_pass:
            out.append("cls")
        if not self.ppl_pass:
            out.append("ppl")
        if not self.sim_pass:
            out.append("sim")
        return out


@dataclass
class FilterResult:
    accepted: list[AugmentedPair]
    rejected: list[tuple[GenerationCandidate, QualityReport]]
    unevaluated: list[tuple[GenerationCandidate, str]]
    deduped: int = 0
    reason_counts: dict[str, int] = field(default_factory=dict)


def _argmax_label(probs: Mapping[StyleLabel, float], label_order: Sequence[StyleLabel]) -> StyleLabel:
    # max() keeps the first maximal element, so ties resolve to the earliest
    # label in the classifier's declared order.
    ordered = [label for label in label_order if label in probs]
    ordered += [label for label in probs if label not in ordered]
    return max(ordered, key=lambda label: probs[label])


def evaluate_candidate(
    candidate: GenerationCandidate,
    classifier: "ClassifierBackend",
    lm: ngram.TrigramModel,
    criteria: QualityCriteria,
) -> QualityReport:
    """Score one candidate against all three criteria, recording raw values."""
    target = criteria.target_style or candidate.style
    probs = classifier.classify(list(candidate.text.tokens))
    winner = _argmax_label(probs, classifier.capabilities.labels)
    ppl = ngram.perplexity(lm, [list(candidate.text.tokens)])
    sim = candidate.neighbor.similarity
    return QualityReport(
        cls_probs=dict(probs),
        cls_pass=winner == target,
        ppl=ppl,
        ppl_pass=ppl < criteria.max_perplexity,
        sim=sim,
        sim_pass=sim > criteria.min_similarity,
    )


def filter_batch(
    candidates: Sequence[GenerationCandidate],
    classifier: "ClassifierBackend",
    lm: ngram.TrigramModel | Mapping[StyleLabel, ngram.TrigramModel],
    criteria: QualityCriteria,
) -> FilterResult:
    """Partition candidates into accepted / rejected / unevaluated.

    ``lm`` may be a single style model or a per-style mapping. Deduplication
    (on by default) keeps one record per (image id, generated text), favoring
    the highest similarity, then input order.
    """
    accepted: list[tuple[int, AugmentedPair]] = []
    rejected: list[tuple[GenerationCandidate, QualityReport]] = []
    unevaluated: list[tuple[GenerationCandidate, str]] = []
    reason_counts: dict[str, int] = {}
    for position, candidate in enumerate(candidates):
        style = criteria.target_style or candidate.style
        model = lm.get(style) if isinstance(lm, Mapping) else lm
        if model is None:
            unevaluated.append((candidate, f"no language model for style {style!r}"))
            continue
        try:
            report = evaluate_candidate(candidate, classifier, model, criteria)
        except Exception as exc:
            logger.warning("candidate %s unevaluated: %s", candidate.image.id, exc)
            unevaluated.append((candidate, str(exc)))
            continue
        if report.accepted:
            accepted.append((position, _to_augmented(candidate, report)))
        else:
            for reason in report.reasons():
                reason_counts[reason] = reason_counts.get(reason, 0) + 1
            rejected.append((candidate, report))

    deduped = 0
    if criteria.dedupe:
        best: dict[tuple[str, str], tuple[int, AugmentedPair]] = {}
        for position, pair in accepted:
            key = (pair.image.id, pair.generated_caption.raw_text)
            held = best.get(key)
            if held is None or pair.provenance.similarity > held[1].provenance.similarity:
                best[key] = (position, pair)
        deduped = len(accepted) - len(best)
        accepted = sorted(best.values(), key=lambda item: item[0])

    return FilterResult(
        accepted=[pair for _, pair in accepted],
        rejected=rejected,
        unevaluated=unevaluated,
        deduped=deduped,
        reason_counts=reason_counts,
    )


def _to_augmented(candidate: GenerationCandidate, report: QualityReport) -> AugmentedPair:
    target_prob = report.cls_probs.get(candidate.style, 0.0)
    return AugmentedPair(
        image=candidate.image,
        generated_caption=candidate.text,
        style=candidate.style,
        provenance=Provenance(
            mode=candidate.neighbor.mode.value,
            neighbor_id=candidate.neighbor.sample_id,
            similarity=candidate.neighbor.similarity,
            style_phrase=candidate.neighbor.style_phrase,
            source_caption=candidate.source_caption,
            cls_prob=target_prob,
            ppl=report.ppl,
        ),
    )


def augmented_as_candidate(pair: AugmentedPair) -> GenerationCandidate:
    """View an augmented record as a candidate, e.g. to re-run the filter."""
    from .retriever import Neighbor, RetrievalMode

    return GenerationCandidate(
        image=pair.image,
        text=pair.generated_caption,
        style=pair.style,
        neighbor=Neighbor(
            sample_id=pair.provenance.neighbor_id,
            similarity=pair.provenance.similarity,
            mode=RetrievalMode(pair.provenance.mode),
            style_phrase=pair.provenance.style_phrase,
            style=pair.style,
        ),
        source_caption=pair.provenance.source_caption,
    )
