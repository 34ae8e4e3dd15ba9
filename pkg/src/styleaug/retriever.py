"""Cosine-similarity scene index over the annotated stylized corpus.

Every annotated sample contributes one image embedding and one caption
embedding. Vectors are unit-normalized at ingest so similarity is a plain dot
product, and queries run as an exact scan (desk-scale corpora do not need an
approximate structure). Four query modes pair the query modality with the
target side:

    i2i  factual image   -> stylized images
    t2t  factual caption -> stylized captions
    i2t  factual image   -> stylized captions
    t2i  factual caption -> stylized images
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .data import AnnotatedStylizedSample, FactualPair, StyleLabel
from .errors import BackendError, BackendUnavailableError

if TYPE_CHECKING:
    from .backends.base import EmbedderBackend

_UNIT_TOL = 1e-6
_ZERO_NORM = 1e-12

INDEX_SCHEMA = "styleaug-scene-index/1"


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


class DimensionMismatchError(ValueError):
    pass


class EmptyIndexError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension embedding with its norm recorded at construction."""

    values: np.ndarray
    norm: float

    @classmethod
    def of(cls, values) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=float).reshape(-1)
        return cls(values=arr, norm=float(np.linalg.norm(arr)))

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    def unit(self) -> np.ndarray:
        if self.norm < _ZERO_NORM:
            raise ZeroVectorError("cannot normalize a zero vector")
        return self.values / self.norm


class RetrievalMode(Enum):
    I2I = "i2i"
    T2T = "t2t"
    I2T = "i2t"
    T2I = "t2i"

    @property
    def query_is_image(self) -> bool:
        return self in (RetrievalMode.I2I, RetrievalMode.I2T)

    @property
    def targets_images(self) -> bool:
        return self in (RetrievalMode.I2I, RetrievalMode.T2I)


# Canonical iteration order for multi-mode retrieval.
MODE_ORDER = (RetrievalMode.I2I, RetrievalMode.T2T, RetrievalMode.I2T, RetrievalMode.T2I)


@dataclass(frozen=True)
class Neighbor:
    """One retrieved scene: the matched sample plus the evidence for it."""

    sample_id: str
    similarity: float
    mode: RetrievalMode
    style_phrase: tuple[str, ...]
    style: StyleLabel


@dataclass(frozen=True)
class SampleMeta:
    style: StyleLabel
    style_phrase: tuple[str, ...]


class SceneIndex:
    """Unit-normalized image and caption embeddings, queryable by mode."""

    def __init__(
        self,
        dimension: int,
        image_ids: Sequence[str],
        image_matrix: np.ndarray,
        caption_ids: Sequence[str],
        caption_matrix: np.ndarray,
        meta: dict[str, SampleMeta],
    ):
        self.dimension = int(dimension)
        self.image_ids = list(image_ids)
        self.image_matrix = np.asarray(image_matrix, dtype=float)
        self.caption_ids = list(caption_ids)
        self.caption_matrix = np.asarray(caption_matrix, dtype=float)
        self.meta = dict(meta)
        for name, ids, matrix in (
            ("image", self.image_ids, self.image_matrix),
            ("caption", self.caption_ids, self.caption_matrix),
        ):
            if matrix.shape != (len(ids), self.dimension):
                raise ValueError(f"{name} matrix shape {matrix.shape} inconsistent with index")
            if len(ids) and np.any(np.abs(np.linalg.norm(matrix, axis=1) - 1.0) > _UNIT_TOL):
                raise ValueError(f"{name} entries must be unit-normalized")

    def side(self, mode: RetrievalMode) -> tuple[list[str], np.ndarray]:
        if mode.targets_images:
            return self.image_ids, self.image_matrix
        return self.caption_ids, self.caption_matrix

    def __len__(self) -> int:
        return len(self.image_ids)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings; symmetric, in [-1, 1]."""
    if a.dimension != b.dimension:
        raise DimensionMismatchError(f"dimensions differ: {a.dimension} vs {b.dimension}")
    if a.norm < _ZERO_NORM or b.norm < _ZERO_NORM:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(np.dot(a.values, b.values) / (a.norm * b.norm))


def build_index(
    corpus: Sequence[AnnotatedStylizedSample],
    embedder: "EmbedderBackend",
) -> SceneIndex:
    """Embed every annotated sample's image and caption into one index."""
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    dimension = embedder.capabilities.dimension
    image_rows, caption_rows, ids = [], [], []
    meta: dict[str, SampleMeta] = {}
    for sample in corpus:
        sid = sample.base.image.id
        try:
            image_vec = embedder.embed_image(sample.base.image)
            caption_vec = embedder.embed_text(list(sample.base.caption.tokens))
        except BackendUnavailableError as exc:
            raise BackendUnavailableError(f"embedder lost while indexing {sid}: {exc}") from exc
        except Exception as exc:
            raise BackendError(f"embedder failed on sample {sid}: {exc}") from exc
        for name, vec in (("image", image_vec), ("caption", caption_vec)):
            if vec.dimension != dimension:
                raise DimensionMismatchError(
                    f"{name} embedding of {sid} has dimension {vec.dimension}, index expects {dimension}"
                )
        image_rows.append(image_vec.unit())
        caption_rows.append(caption_vec.unit())
        ids.append(sid)
        meta[sid] = SampleMeta(style=sample.base.style, style_phrase=sample.style_phrase)
    return SceneIndex(
        dimension=dimension,
        image_ids=ids,
        image_matrix=np.vstack(image_rows),
        caption_ids=list(ids),
        caption_matrix=np.vstack(caption_rows),
        meta=meta,
    )


def retrieve_topk(
    index: SceneIndex,
    query: EmbeddingVector,
    mode: RetrievalMode,
    k: int,
) -> list[Neighbor]:
    """The k most similar entries on the mode's target side, descending,
    ties broken by smaller sample id. Returns all entries when k exceeds
    the side's size."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ids, matrix = index.side(mode)
    if not ids:
        raise EmptyIndexError("index side is empty")
    if query.dimension != index.dimension:
        raise DimensionMismatchError(
            f"query dimension {query.dimension} != index dimension {index.dimension}"
        )
    unit = query.unit()
    # Row-wise dots rather than one gemv: BLAS blocking can give bit-identical
    # duplicate rows different last-ulp sums, which would scramble tie order.
    sims = np.fromiter((np.dot(row, unit) for row in matrix), dtype=float, count=len(ids))
    id_arr = np.asarray(ids)
    order = np.lexsort((id_arr, -sims))[: min(k, len(ids))]
    return [
        Neighbor(
            sample_id=ids[i],
            similarity=float(sims[i]),
            mode=mode,
            style_phrase=index.meta[ids[i]].style_phrase,
            style=index.meta[ids[i]].style,
        )
        for i in order
    ]


def retrieve_scene(
    index: SceneIndex,
    pair: FactualPair,
    embedder: "EmbedderBackend",
    modes: Iterable[RetrievalMode],
    threshold: float,
) -> list[Neighbor]:
    """Top-1 neighbor per enabled mode with similarity strictly above the
    threshold. An empty result just means nothing was similar enough."""
    enabled = set(modes)
    if not enabled:
        raise ValueError("at least one retrieval mode is required")
    image_query = caption_query = None
    try:
        if any(m.query_is_image for m in enabled):
            image_query = embedder.embed_image(pair.image)
        if any(not m.query_is_image for m in enabled):
            caption_query = embedder.embed_text(list(pair.caption.tokens))
    except BackendUnavailableError as exc:
        raise BackendUnavailableError(f"embedder lost on {pair.image.id}: {exc}") from exc
    except Exception as exc:
        raise BackendError(f"embedder failed on {pair.image.id}: {exc}") from exc
    neighbors = []
    for mode in MODE_ORDER:
        if mode not in enabled:
            continue
        query = image_query if mode.query_is_image else caption_query
        top = retrieve_topk(index, query, mode, k=1)
        if top and top[0].similarity > threshold:
            neighbors.append(top[0])
    return neighbors


# ---------------------------------------------------------------------------
# Index serialization: header line, then one sample record per line carrying
# both side vectors and the retrieval metadata.


def save_index(index: SceneIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": INDEX_SCHEMA, "dimension": index.dimension}) + "\n")
        for i, sid in enumerate(index.image_ids):
            record = {
                "id": sid,
                "style": index.meta[sid].style,
                "style_phrase": list(index.meta[sid].style_phrase),
                "image_vector": index.image_matrix[i].tolist(),
                "caption_vector": index.caption_matrix[i].tolist(),
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_index(path: str | Path) -> SceneIndex:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != INDEX_SCHEMA:
            raise ValueError(f"not a {INDEX_SCHEMA} file: {path}")
        dimension = int(header["dimension"])
        ids, image_rows, caption_rows = [], [], []
        meta = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            ids.append(record["id"])
            image_rows.append(record["image_vector"])
            caption_rows.append(record["caption_vector"])
            meta[record["id"]] = SampleMeta(
                style=record["style"], style_phrase=tuple(record["style_phrase"])
            )
    if not ids:
        raise EmptyIndexError(f"index file has no entries: {path}")
    return SceneIndex(
        dimension=dimension,
        image_ids=ids,
        image_matrix=np.asarray(image_rows, dtype=float),
        caption_ids=list(ids),
        caption_matrix=np.asarray(caption_rows, dtype=float),
        meta=meta,
    )
