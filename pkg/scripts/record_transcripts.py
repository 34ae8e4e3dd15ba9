#!/usr/bin/env python3
"""Regenerate the golden wire transcripts under docs/transcripts/.

Each session drives a fixed request sequence against a reference backend and
records the exact request and response lines. The test suite replays these
files byte-for-byte, so regenerate them only when the protocol itself
changes.
"""

from __future__ import annotations

import io
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from styleaug.backends.reference import (  # noqa: E402
    ReferenceClassifier,
    ReferenceEmbedder,
    ReferenceGenerator,
)
from styleaug.backends.wire import PROTOCOL_VERSION, canonical_encode, serve_backend  # noqa: E402

TRANSCRIPT_DIR = REPO / "docs" / "transcripts"

# Fixed session material; the backends are pure functions of (input, seed) so
# the resulting transcripts are stable across runs and platforms.
TRANSCRIPT_LEXICONS = {"humor": ["goofy", "clown"], "roman": ["tender", "loving"]}


def build_backend(kind: str):
    if kind == "classifier":
        return ReferenceClassifier(
            TRANSCRIPT_LEXICONS, head_count=2, layer_count=2, star=(1, 1), seed=5
        )
    if kind == "embedder":
        return ReferenceEmbedder(dimension=8, seed=5)
    if kind == "generator":
        return ReferenceGenerator(seed=5)
    raise ValueError(kind)


def session_requests(kind: str) -> list[tuple[str, dict]]:
    hello = ("hello", {"protocol": PROTOCOL_VERSION})
    if kind == "classifier":
        return [
            hello,
            ("classify", {"tokens": ["a", "goofy", "dog"]}),
            ("attention", {"tokens": ["a", "goofy", "dog"]}),
        ]
    if kind == "embedder":
        return [
            hello,
            ("embed_text", {"tokens": ["a", "goofy", "dog"]}),
            ("embed_image", {"image": {"id": "img1", "uri": "tags:dog,park"}}),
        ]
    if kind == "generator":
        prompt = {
            "style_phrase": ["like", "a", "boss"],
            "content": ["a", "man", "rides", "a", "bike"],
            "rendered": "[CLS] like a boss [SEP] a man rides a bike",
        }
        return [
            hello,
            ("generate", {**prompt, "seed": 7}),
            ("finetune_begin", {"count": 1}),
            (
                "finetune_item",
                {
                    "prompt": {
                        "style_phrase": ["goofy"],
                        "content": ["a", "dog", "runs"],
                        "rendered": "[CLS] goofy [SEP] a dog runs",
                    },
                    "target": ["a", "goofy", "dog", "runs"],
                },
            ),
            ("finetune_end", {}),
        ]
    raise ValueError(kind)


def record_session(kind: str) -> list[dict]:
    request_lines = [
        canonical_encode({"id": i + 1, "method": method, "params": params})
        for i, (method, params) in enumerate(session_requests(kind))
    ]
    reader = io.StringIO("".join(line + "\n" for line in request_lines))
    writer = io.StringIO()
    serve_backend(build_backend(kind), kind, reader, writer)
    response_lines = writer.getvalue().splitlines()
    assert len(response_lines) == len(request_lines)
    entries = []
    for request, response in zip(request_lines, response_lines):
        entries.append({"dir": "request", "line": request})
        entries.append({"dir": "response", "line": response})
    return entries


def main() -> int:
    TRANSCRIPT_DIR.mkdir(parents=True, exist_ok=True)
    for kind in ("classifier", "embedder", "generator"):
        path = TRANSCRIPT_DIR / f"{kind}.jsonl"
        entries = record_session(kind)
        path.write_text("".join(json.dumps(e) + "\n" for e in entries), encoding="utf-8")
        print(f"wrote {path} ({len(entries)} lines)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
