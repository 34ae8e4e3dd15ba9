"""Backend contract checks.

Any backend that comes back violation-free from these checks is usable by
every pipeline stage without stage-specific code, whether it runs in-process
or behind the wire. Each function returns a list of human-readable violation
strings (empty means the contract holds).
"""

from __future__ import annotations

import numpy as np

from ..data import ImageRef
from ..generator import assemble_prompt

_TOL = 1e-6


def classifier_violations(backend, captions: list[list[str]]) -> list[str]:
    problems = []
    caps = backend.capabilities
    if not caps.labels:
        problems.append("no labels advertised")
    for tokens in captions:
        probs = backend.classify(tokens)
        if set(probs) != set(caps.labels):
            problems.append(f"classify labels {sorted(probs)} != advertised {sorted(caps.labels)}")
        total = sum(probs.values())
        if abs(total - 1.0) > _TOL:
            problems.append(f"classify distribution sums to {total}")
        if any(p < 0 for p in probs.values()):
            problems.append("negative probability")
        profile = backend.attention(tokens)
        if profile.head_count != caps.head_count or profile.layer_count != caps.layer_count:
            problems.append(
                f"profile {profile.head_count}x{profile.layer_count} != advertised "
                f"{caps.head_count}x{caps.layer_count}"
            )
        if profile.token_count != len(tokens):
            problems.append(
                f"profile token_count {profile.token_count} != word count {len(tokens)}"
            )
        sums = profile.weights.sum(axis=2)
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > _TOL:
            problems.append(f"attention rows deviate from 1 by {worst}")
    return problems


def embedder_violations(backend, captions: list[list[str]], images: list[ImageRef]) -> list[str]:
    problems = []
    dimension = backend.capabilities.dimension
    for tokens in captions:
        vec = backend.embed_text(tokens)
        if vec.dimension != dimension:
            problems.append(f"text embedding dimension {vec.dimension} != {dimension}")
        if not np.all(np.isfinite(vec.values)):
            problems.append("non-finite text embedding")
    for image in images:
        vec = backend.embed_image(image)
        if vec.dimension != dimension:
            problems.append(f"image embedding dimension {vec.dimension} != {dimension}")
        if not np.all(np.isfinite(vec.values)):
            problems.append("non-finite image embedding")
    return problems


def generator_violations(backend, prompts: list[tuple[list[str], list[str]]]) -> list[str]:
    problems = []
    for phrase, content in prompts:
        prompt = assemble_prompt(phrase, content)
        first = backend.generate(prompt, seed=7)
        if not isinstance(first, list) or not all(isinstance(t, str) for t in first):
            problems.append("generate must return a list of strings")
            continue
        if backend.capabilities.deterministic and backend.generate(prompt, seed=7) != first:
            problems.append("declared deterministic but output changed for identical input")
    return problems
