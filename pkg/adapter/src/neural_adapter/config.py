"""Adapter configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class FinetuneParams:
    learning_rate: float = 5e-5
    epochs: int = 1
    batch_size: int = 8


@dataclass
class GenerationParams:
    max_new_tokens: int = 24
    min_new_tokens: int = 2
    do_sample: bool = False


@dataclass
class AdapterConfig:
    """Model locations plus serving knobs.

    The advertised capabilities (label set, head/layer counts, embedding
    dimension) are read from the loaded model configs and validated against
    `expected_dimension` at startup, so a mismatched checkpoint fails before
    any request is answered.
    """

    classifier_dir: Path | None = None
    encoder_dir: Path | None = None
    generator_dir: Path | None = None
    device: str = "cpu"
    expected_dimension: int = 768
    subword_aggregation: str = "max"
    generation: GenerationParams = field(default_factory=GenerationParams)
    finetune: FinetuneParams = field(default_factory=FinetuneParams)

    @classmethod
    def load(cls, path: str | Path) -> "AdapterConfig":
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent

        def resolve(key):
            value = raw.get(key)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base / p

        generation = GenerationParams(**raw.get("generation", {}))
        finetune = FinetuneParams(**raw.get("finetune", {}))
        return cls(
            classifier_dir=resolve("classifier_dir"),
            encoder_dir=resolve("encoder_dir"),
            generator_dir=resolve("generator_dir"),
            device=raw.get("device", "cpu"),
            expected_dimension=int(raw.get("expected_dimension", 768)),
            subword_aggregation=raw.get("subword_aggregation", "max"),
            generation=generation,
            finetune=finetune,
        )
