"""Interpolated trigram language model with perplexity scoring.

Probability of a sentence [w_1..w_T] padded to <s> <s> w_1 .. w_T </s>:

    p(w | u, v) = l3 * p3 + l2 * p2 + l1 * p1
    p3(w | u,v) = c3(u,v,w) / ctx2(u,v)      (0 when the context is unseen)
    p2(w | v)   = c2(v,w)   / ctx1(v)        (0 when the context is unseen)
    p1(w)       = (c1(w) + 1) / (N + |V|)    (add-one over the vocabulary)

Scored positions are w_1..w_T plus </s>; the <s> pads are context only.
Training tokens with count < unk_threshold map to <unk>, as does any
out-of-vocabulary token at scoring time, so the mixture is strictly
positive whenever l1 > 0. All arithmetic is natural-log.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

DEFAULT_LAMBDAS = (0.6, 0.3, 0.1)

MODEL_SCHEMA = "styleaug-trigram/1"


@dataclass(frozen=True)
class TrigramModel:
    """Counts and interpolation weights; immutable once trained."""

    vocab: frozenset[str]
    unigrams: dict[str, int]
    bigrams: dict[tuple[str, str], int]
    trigrams: dict[tuple[str, str, str], int]
    context1: dict[str, int]
    context2: dict[tuple[str, str], int]
    positions: int
    lambdas: tuple[float, float, float]
    unk_threshold: int
    kept_tokens: frozenset[str] = field(repr=False)

    def map_token(self, token: str) -> str:
        return token if token in self.kept_tokens else UNK


def _validate_lambdas(lambdas: Sequence[float]) -> tuple[float, float, float]:
    l3, l2, l1 = (float(x) for x in lambdas)
    if min(l3, l2, l1) < 0:
        raise ValueError("interpolation weights must be non-negative")
    if abs(l3 + l2 + l1 - 1.0) > 1e-9:
        raise ValueError("interpolation weights must sum to 1")
    return (l3, l2, l1)


def train(
    sentences: Iterable[Sequence[str]],
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    unk_threshold: int = 1,
) -> TrigramModel:
    """Count n-grams over sentences padded with two <s> and one </s>."""
    lambdas = _validate_lambdas(lambdas)
    sents = [list(s) for s in sentences if s]
    if not sents:
        raise ValueError("cannot train a language model on an empty corpus")

    raw = Counter(tok for s in sents for tok in s)
    kept = frozenset(tok for tok, n in raw.items() if n >= unk_threshold)
    mapped = [[tok if tok in kept else UNK for tok in s] for s in sents]

    unigrams: Counter = Counter()
    bigrams: Counter = Counter()
    trigrams: Counter = Counter()
    context1: Counter = Counter()
    context2: Counter = Counter()
    positions = 0
    for s in mapped:
        padded = [BOS, BOS] + s + [EOS]
        for tok in s:
            unigrams[tok] += 1
        unigrams[EOS] += 1
        positions += len(s) + 1
        for i in range(len(padded) - 1):
            context1[padded[i]] += 1
            bigrams[(padded[i], padded[i + 1])] += 1
        for i in range(len(padded) - 2):
            context2[(padded[i], padded[i + 1])] += 1
            trigrams[(padded[i], padded[i + 1], padded[i + 2])] += 1

    vocab = frozenset(kept) | {UNK, EOS}
    return TrigramModel(
        vocab=vocab,
        unigrams=dict(unigrams),
        bigrams=dict(bigrams),
        trigrams=dict(trigrams),
        context1=dict(context1),
        context2=dict(context2),
        positions=positions,
        lambdas=lambdas,
        unk_threshold=int(unk_threshold),
        kept_tokens=kept,
    )


def _interpolated(model: TrigramModel, u: str, v: str, w: str) -> float:
    l3, l2, l1 = model.lambdas
    ctx2 = model.context2.get((u, v), 0)
    p3 = model.trigrams.get((u, v, w), 0) / ctx2 if ctx2 else 0.0
    ctx1 = model.context1.get(v, 0)
    p2 = model.bigrams.get((v, w), 0) / ctx1 if ctx1 else 0.0
    p1 = (model.unigrams.get(w, 0) + 1) / (model.positions + len(model.vocab))
    return l3 * p3 + l2 * p2 + l1 * p1


def log_prob(model: TrigramModel, sentence: Sequence[str]) -> float:
    """Natural-log probability of the sentence including its </s>."""
    if not sentence:
        raise ValueError("cannot score an empty sentence")
    mapped = [model.map_token(tok) for tok in sentence]
    padded = [BOS, BOS] + mapped + [EOS]
    total = 0.0
    for i in range(2, len(padded)):
        p = _interpolated(model, padded[i - 2], padded[i - 1], padded[i])
        if p <= 0.0:
            # Only reachable with a zero unigram weight on unseen data.
            return float("-inf")
        total += math.log(p)
    return total


def perplexity(model: TrigramModel, sentences: Iterable[Sequence[str]]) -> float:
    """exp(-mean log-prob) over all scored positions (tokens plus </s>)."""
    total = 0.0
    positions = 0
    for sentence in sentences:
        total += log_prob(model, sentence)
        positions += len(sentence) + 1
    if positions == 0:
        raise ValueError("no sentences to score")
    return math.exp(-total / positions)


# ---------------------------------------------------------------------------
# Serialization


def save_model(model: TrigramModel, path: str | Path) -> None:
    payload = {
        "schema": MODEL_SCHEMA,
        "lambdas": list(model.lambdas),
        "unk_threshold": model.unk_threshold,
        "positions": model.positions,
        "kept_tokens": sorted(model.kept_tokens),
        "unigrams": {tok: n for tok, n in sorted(model.unigrams.items())},
        "bigrams": {" ".join(k): n for k, n in sorted(model.bigrams.items())},
        "trigrams": {" ".join(k): n for k, n in sorted(model.trigrams.items())},
        "context1": {tok: n for tok, n in sorted(model.context1.items())},
        "context2": {" ".join(k): n for k, n in sorted(model.context2.items())},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_model(path: str | Path) -> TrigramModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"not a {MODEL_SCHEMA} model file: {path}")
    kept = frozenset(payload["kept_tokens"])
    return TrigramModel(
        vocab=kept | {UNK, EOS},
        unigrams={tok: int(n) for tok, n in payload["unigrams"].items()},
        bigrams={tuple(k.split(" ")): int(n) for k, n in payload["bigrams"].items()},
        trigrams={tuple(k.split(" ")): int(n) for k, n in payload["trigrams"].items()},
        context1={tok: int(n) for tok, n in payload["context1"].items()},
        context2={tuple(k.split(" ")): int(n) for k, n in payload["context2"].items()},
        positions=int(payload["positions"]),
        lambdas=_validate_lambdas(payload["lambdas"]),
        unk_threshold=int(payload["unk_threshold"]),
        kept_tokens=kept,
    )
