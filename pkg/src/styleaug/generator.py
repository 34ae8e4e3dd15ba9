"""Prompt assembly and candidate generation.

A generation prompt pairs a retrieved style phrase with content words in the
fixed format ``[CLS] <phrase> [SEP] <content>``. The marker strings are
literals at this layer; adapters may translate them to model-native special
tokens. Fine-tune pairs reuse the same format with the annotated residual as
content and the original caption as target.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

from .data import AnnotatedStylizedSample, Caption, FactualPair, ImageRef, StyleLabel
from .errors import BackendError, BackendUnavailableError
from .retriever import Neighbor, RetrievalMode, SceneIndex, retrieve_scene

if TYPE_CHECKING:
    from .backends.base import EmbedderBackend, GeneratorBackend

logger = logging.getLogger(__name__)

CLS_MARKER = "[CLS]"
SEP_MARKER = "[SEP]"


@dataclass(frozen=True)
class EmotionPrompt:
    style_phrase: tuple[str, ...]
    content: tuple[str, ...]
    rendered: str


@dataclass(frozen=True)
class FineTunePair:
    prompt: EmotionPrompt
    target: Caption


@dataclass(frozen=True)
class GenerationCandidate:
    image: ImageRef
    text: Caption
    style: StyleLabel
    neighbor: Neighbor
    source_caption: str


def assemble_prompt(style_phrase: Sequence[str], content: Sequence[str]) -> EmotionPrompt:
    """Render the canonical prompt string from phrase and content tokens."""
    if not style_phrase:
        raise ValueError("style phrase must be non-empty")
    if not content:
        raise ValueError("content must be non-empty")
    rendered = f"{CLS_MARKER} {' '.join(style_phrase)} {SEP_MARKER} {' '.join(content)}"
    return EmotionPrompt(
        style_phrase=tuple(style_phrase), content=tuple(content), rendered=rendered
    )


def make_finetune_pairs(corpus: Iterable[AnnotatedStylizedSample]) -> list[FineTunePair]:
    """One reconstruction pair per annotated sample: (phrase, residual) -> caption."""
    pairs = []
    for sample in corpus:
        prompt = assemble_prompt(sample.style_phrase, sample.residual)
        pairs.append(FineTunePair(prompt=prompt, target=sample.base.caption))
    return pairs


def iter_generation(
    factual: Sequence[FactualPair],
    index: SceneIndex,
    embedder: "EmbedderBackend",
    generator: "GeneratorBackend",
    modes: Iterable[RetrievalMode],
    threshold: float,
    seed_for: "callable" = lambda offset: 0,
    start: int = 0,
) -> Iterator[tuple[int, list[GenerationCandidate]]]:
    """Yield (offset, candidates) per factual pair, in input order.

    Retrieval happens first, so generation only ever sees neighbors above the
    similarity threshold. Per-item backend errors are logged and skipped; a
    lost backend propagates so the caller can checkpoint.
    """
    modes = list(modes)
    for offset in range(start, len(factual)):
        pair = factual[offset]
        neighbors = retrieve_scene(index, pair, embedder, modes, threshold)
        candidates = []
        for neighbor in neighbors:
            prompt = assemble_prompt(neighbor.style_phrase, pair.caption.tokens)
            try:
                tokens = generator.generate(prompt, seed_for(offset))
            except BackendUnavailableError as exc:
                raise BackendUnavailableError(
                    f"generator lost on {pair.image.id} ({neighbor.mode.value}): {exc}"
                ) from exc
            except Exception as exc:
                logger.warning(
                    "generator failed on %s (%s): %s", pair.image.id, neighbor.mode.value, exc
                )
                continue
            if not tokens:
                logger.warning("generator returned no tokens for %s", pair.image.id)
                continue
            candidates.append(
                GenerationCandidate(
                    image=pair.image,
                    text=Caption.from_tokens(tokens),
                    style=neighbor.style,
                    neighbor=neighbor,
                    source_caption=pair.caption.raw_text,
                )
            )
        if not candidates:
            logger.info("no surviving neighbors for %s", pair.image.id)
        yield offset, candidates


def generate_candidates(
    factual: Sequence[FactualPair],
    index: SceneIndex,
    embedder: "EmbedderBackend",
    generator: "GeneratorBackend",
    modes: Iterable[RetrievalMode],
    threshold: float,
    seed_for: "callable" = lambda offset: 0,
) -> list[GenerationCandidate]:
    """Collect candidates for the whole factual corpus."""
    out: list[GenerationCandidate] = []
    for _, candidates in iter_generation(
        factual, index, embedder, generator, modes, threshold, seed_for
    ):
        out.extend(candidates)
    return out


# ---------------------------------------------------------------------------
# Candidate and fine-tune JSONL formats


def candidate_record(c: GenerationCandidate) -> dict:
    return {
        "image_id": c.image.id,
        "image_uri": c.image.uri,
        "style": c.style,
        "text_tokens": list(c.text.tokens),
        "provenance": {
            "mode": c.neighbor.mode.value,
            "neighbor_id": c.neighbor.sample_id,
            "similarity": c.neighbor.similarity,
            "style_phrase": list(c.neighbor.style_phrase),
            "source_caption": c.source_caption,
        },
    }


def candidate_from_record(record: dict) -> GenerationCandidate:
    prov = record["provenance"]
    neighbor = Neighbor(
        sample_id=prov["neighbor_id"],
        similarity=float(prov["similarity"]),
        mode=RetrievalMode(prov["mode"]),
        style_phrase=tuple(prov["style_phrase"]),
        style=record["style"],
    )
    return GenerationCandidate(
        image=ImageRef(id=record["image_id"], uri=record["image_uri"]),
        text=Caption.from_tokens(record["text_tokens"]),
        style=record["style"],
        neighbor=neighbor,
        source_caption=prov["source_caption"],
    )


def save_candidates(candidates: Iterable[GenerationCandidate], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for c in candidates:
            fh.write(json.dumps(candidate_record(c), ensure_ascii=False) + "\n")


def load_candidates(path: str | Path) -> list[GenerationCandidate]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(candidate_from_record(json.loads(line)))
    return out


def save_finetune_pairs(pairs: Iterable[FineTunePair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            record = {
                "prompt": {
                    "style_phrase": list(pair.prompt.style_phrase),
                    "content": list(pair.prompt.content),
                    "rendered": pair.prompt.rendered,
                },
                "target": list(pair.target.tokens),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_finetune_pairs(path: str | Path) -> list[FineTunePair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            prompt = assemble_prompt(record["prompt"]["style_phrase"], record["prompt"]["content"])
            pairs.append(FineTunePair(prompt=prompt, target=Caption.from_tokens(record["target"])))
    return pairs
