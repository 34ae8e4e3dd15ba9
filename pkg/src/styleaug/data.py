"""Domain types shared by all pipeline stages, plus corpus serialization.

Corpora are line-delimited JSON (one record per line, UTF-8). Field layouts:

    stylized   {image_id, image_uri, caption, style}
    factual    {image_id, image_uri, caption}
    annotated  stylized + {style_phrase: [tokens], residual: [tokens]}
    augmented  {image_id, image_uri, generated_caption, style,
                provenance: {mode, neighbor_id, similarity, style_phrase,
                             source_caption, cls_prob, ppl}}

Captions are stored as raw text; tokens are re-derived at load time by the
word tokenizer below, so a saved corpus round-trips field-by-field.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

# Labels are plain strings; LabelSet carries the configured set.
StyleLabel = str

CORPUS_KINDS = ("stylized", "factual", "annotated", "augmented")

# Punctuation stripped from token edges. Brackets are removed anywhere in the
# token so the prompt markers "[CLS]"/"[SEP]" can never appear as caption words.
_BRACKET_TABLE = str.maketrans("", "", "[]")
_EDGE_PUNCT = ".,!?;:\"'`()_{}<>-*~|/\\"


class EmptyCaptionError(ValueError):
    """Raised when a caption has no tokens left after tokenization."""


class CorpusFormatError(ValueError):
    """A corpus file violated the documented record schema."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if path is not None:
            where = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + where)


def tokenize(raw_text: str) -> list[str]:
    """Split raw text into lowercase word tokens.

    Lowercase, split on whitespace, drop bracket characters, strip punctuation
    from token edges (inner hyphens/apostrophes survive, so "snow-covered"
    stays one word). Deterministic, and idempotent on its own joined output.
    Raises EmptyCaptionError when nothing survives.
    """
    tokens = []
    for piece in raw_text.lower().split():
        piece = piece.translate(_BRACKET_TABLE).strip(_EDGE_PUNCT)
        if piece:
            tokens.append(piece)
    if not tokens:
        raise EmptyCaptionError(f"caption is empty after tokenization: {raw_text!r}")
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Caption:
    """A caption as raw text plus its derived word tokens."""

    raw_text: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise EmptyCaptionError("caption has no tokens")

    @classmethod
    def from_raw(cls, raw_text: str) -> "Caption":
        return cls(raw_text=raw_text, tokens=tuple(tokenize(raw_text)))

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Caption":
        """Build a caption from backend-produced tokens, renormalizing them."""
        return cls.from_raw(detokenize(tokens))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ImageRef:
    """Locator for an image or its precomputed feature record.

    The pipeline never decodes image content; backends resolve the uri
    (reference backends read ``tags:`` uris, neural adapters read feature
    files).
    """

    id: str
    uri: str


@dataclass(frozen=True)
class LabelSet:
    """The configured style labels, with an optional factual label."""

    styles: tuple[str, ...]
    factual: str | None = None

    def __post_init__(self):
        if not self.styles:
            raise ValueError("label set must contain at least one style")
        if len(set(self.styles)) != len(self.styles):
            raise ValueError("duplicate style labels")
        if self.factual is not None and self.factual in self.styles:
            raise ValueError("factual label must not double as a style label")

    @property
    def all_labels(self) -> tuple[str, ...]:
        return self.styles + ((self.factual,) if self.factual else ())

    def require_style(self, label: str) -> str:
        if label not in self.styles:
            raise ValueError(f"unknown style label {label!r} (configured: {self.styles})")
        return label


@dataclass(frozen=True)
class StylizedSample:
    image: ImageRef
    caption: Caption
    style: StyleLabel


@dataclass(frozen=True)
class FactualPair:
    image: ImageRef
    caption: Caption


@dataclass(frozen=True)
class AnnotatedStylizedSample:
    """A stylized sample with its extracted style phrase and residual.

    style_phrase and residual both preserve the caption's token order and
    together form exactly the caption's token multiset.
    """

    base: StylizedSample
    style_phrase: tuple[str, ...]
    residual: tuple[str, ...]

    def __post_init__(self):
        if not self.style_phrase:
            raise ValueError("style phrase must be non-empty")
        tokens = self.base.caption.tokens
        if Counter(self.style_phrase) + Counter(self.residual) != Counter(tokens):
            raise ValueError(
                f"style_phrase + residual must equal caption tokens for {self.base.image.id}"
            )
        if not _is_subsequence(self.style_phrase, tokens) or not _is_subsequence(
            self.residual, tokens
        ):
            raise ValueError("style_phrase and residual must preserve token order")


@dataclass(frozen=True)
class Provenance:
    """How an augmented record was produced, plus its filter evidence."""

    mode: str
    neighbor_id: str
    similarity: float
    style_phrase: tuple[str, ...]
    source_caption: str
    cls_prob: float
    ppl: float

    def __post_init__(self):
        if not -1.0 - 1e-6 <= self.similarity <= 1.0 + 1e-6:
            raise ValueError(f"similarity {self.similarity} outside [-1, 1]")


@dataclass(frozen=True)
class AugmentedPair:
    image: ImageRef
    generated_caption: Caption
    style: StyleLabel
    provenance: Provenance


def _is_subsequence(part: Sequence[str], whole: Sequence[str]) -> bool:
    it = iter(whole)
    return all(tok in it for tok in part)


# ---------------------------------------------------------------------------
# Corpus I/O


def _require(record: dict, key: str, path, line_no: int):
    if key not in record:
        raise CorpusFormatError(f"missing field {key!r}", path, line_no)
    return record[key]


def _parse_caption(text, path, line_no: int) -> Caption:
    if not isinstance(text, str):
        raise CorpusFormatError("caption must be a string", path, line_no)
    try:
        return Caption.from_raw(text)
    except EmptyCaptionError as exc:
        raise CorpusFormatError(str(exc), path, line_no) from exc


def _parse_stylized(record: dict, path, line_no: int, label_set: LabelSet | None) -> StylizedSample:
    image = ImageRef(
        id=str(_require(record, "image_id", path, line_no)),
        uri=str(_require(record, "image_uri", path, line_no)),
    )
    caption = _parse_caption(_require(record, "caption", path, line_no), path, line_no)
    style = str(_require(record, "style", path, line_no))
    if label_set is not None:
        try:
            label_set.require_style(style)
        except ValueError as exc:
            raise CorpusFormatError(str(exc), path, line_no) from exc
    return StylizedSample(image=image, caption=caption, style=style)


def _parse_factual(record: dict, path, line_no: int) -> FactualPair:
    image = ImageRef(
        id=str(_require(record, "image_id", path, line_no)),
        uri=str(_require(record, "image_uri", path, line_no)),
    )
    caption = _parse_caption(_require(record, "caption", path, line_no), path, line_no)
    return FactualPair(image=image, caption=caption)


def _parse_token_list(value, name: str, path, line_no: int) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise CorpusFormatError(f"{name} must be a list of strings", path, line_no)
    return tuple(value)


def _parse_annotated(record, path, line_no, label_set) -> AnnotatedStylizedSample:
    base = _parse_stylized(record, path, line_no, label_set)
    phrase = _parse_token_list(_require(record, "style_phrase", path, line_no), "style_phrase", path, line_no)
    residual = _parse_token_list(_require(record, "residual", path, line_no), "residual", path, line_no)
    try:
        return AnnotatedStylizedSample(base=base, style_phrase=phrase, residual=residual)
    except ValueError as exc:
        raise CorpusFormatError(str(exc), path, line_no) from exc


def _parse_augmented(record, path, line_no, label_set) -> AugmentedPair:
    image = ImageRef(
        id=str(_require(record, "image_id", path, line_no)),
        uri=str(_require(record, "image_uri", path, line_no)),
    )
    caption = _parse_caption(_require(record, "generated_caption", path, line_no), path, line_no)
    style = str(_require(record, "style", path, line_no))
    if label_set is not None:
        try:
            label_set.require_style(style)
        except ValueError as exc:
            raise CorpusFormatError(str(exc), path, line_no) from exc
    prov = _require(record, "provenance", path, line_no)
    if not isinstance(prov, dict):
        raise CorpusFormatError("provenance must be an object", path, line_no)
    try:
        provenance = Provenance(
            mode=str(_require(prov, "mode", path, line_no)),
            neighbor_id=str(_require(prov, "neighbor_id", path, line_no)),
            similarity=float(_require(prov, "similarity", path, line_no)),
            style_phrase=_parse_token_list(
                _require(prov, "style_phrase", path, line_no), "style_phrase", path, line_no
            ),
            source_caption=str(_require(prov, "source_caption", path, line_no)),
            cls_prob=float(_require(prov, "cls_prob", path, line_no)),
            ppl=float(_require(prov, "ppl", path, line_no)),
        )
    except ValueError as exc:
        raise CorpusFormatError(str(exc), path, line_no) from exc
    return AugmentedPair(image=image, generated_caption=caption, style=style, provenance=provenance)


def record_for(sample) -> dict:
    """Serialize one corpus record with stable field ordering."""
    if isinstance(sample, AnnotatedStylizedSample):
        rec = record_for(sample.base)
        rec["style_phrase"] = list(sample.style_phrase)
        rec["residual"] = list(sample.residual)
        return rec
    if isinstance(sample, StylizedSample):
        return {
            "image_id": sample.image.id,
            "image_uri": sample.image.uri,
            "caption": sample.caption.raw_text,
            "style": sample.style,
        }
    if isinstance(sample, FactualPair):
        return {
            "image_id": sample.image.id,
            "image_uri": sample.image.uri,
            "caption": sample.caption.raw_text,
        }
    if isinstance(sample, AugmentedPair):
        return {
            "image_id": sample.image.id,
            "image_uri": sample.image.uri,
            "generated_caption": sample.generated_caption.raw_text,
            "style": sample.style,
            "provenance": {
                "mode": sample.provenance.mode,
                "neighbor_id": sample.provenance.neighbor_id,
                "similarity": sample.provenance.similarity,
                "style_phrase": list(sample.provenance.style_phrase),
                "source_caption": sample.provenance.source_caption,
                "cls_prob": sample.provenance.cls_prob,
                "ppl": sample.provenance.ppl,
            },
        }
    raise TypeError(f"not a corpus record type: {type(sample)!r}")


_PARSERS = {
    "stylized": lambda rec, path, n, ls: _parse_stylized(rec, path, n, ls),
    "factual": lambda rec, path, n, ls: _parse_factual(rec, path, n),
    "annotated": _parse_annotated,
    "augmented": _parse_augmented,
}

# Augmented corpora may repeat an image (several modes per factual pair);
# source corpora must not.
_UNIQUE_ID_KINDS = ("stylized", "factual", "annotated")


def load_corpus(path: str | Path, kind: str, label_set: LabelSet | None = None) -> list:
    """Load and validate a line-delimited corpus of the given kind."""
    if kind not in CORPUS_KINDS:
        raise ValueError(f"unknown corpus kind {kind!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    parser = _PARSERS[kind]
    samples = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc}", path, line_no) from exc
            if not isinstance(record, dict):
                raise CorpusFormatError("record must be a JSON object", path, line_no)
            sample = parser(record, path, line_no, label_set)
            if kind in _UNIQUE_ID_KINDS:
                image_id = sample.image.id if kind != "annotated" else sample.base.image.id
                if image_id in seen_ids:
                    raise CorpusFormatError(f"duplicate image id {image_id!r}", path, line_no)
                seen_ids.add(image_id)
            samples.append(sample)
    return samples


def save_corpus(samples: Iterable, path: str | Path) -> None:
    """Write corpus records one JSON object per line, UTF-8."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(record_for(sample), ensure_ascii=False))
            fh.write("\n")
