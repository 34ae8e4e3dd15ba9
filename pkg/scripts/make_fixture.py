#!/usr/bin/env python3
"""Generate the bundled demo fixture under fixtures/.

Produces a small parallel stylized corpus (50 pairs, two styles), a larger
factual corpus (500 pairs) drawn from the same scene templates, the reference
classifier's lexicon config, and a pipeline TOML wired to the reference
backends. The corpora are committed; rerun this script only to change their
shape.

Layout notes that the pipeline depends on:
  - every stylized caption is a 7-or-8-token scene body plus a 3-word style
    phrase whose words all belong to that style's lexicon, so a 0.25
    extraction recovers exactly the phrase;
  - factual captions reuse the same body templates and pools, so retrieval
    similarities straddle the 0.6 threshold and generated candidates stay
    in-vocabulary for the trigram filter;
  - image uris carry scene tags (content words) understood by the reference
    embedder.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO / "fixtures"

ADJS = ["small", "big", "old"]
NOUNS = ["dog", "cat", "boy", "girl"]
VERBS = ["runs", "jumps", "sits", "plays"]
PREPS = ["in", "near"]
PLACES = ["park", "beach", "yard", "field"]

HUMOR_PHRASES = [
    ["plotting", "silly", "mischief"],
    ["goofy", "clown", "antics"],
    ["absurdly", "zany", "slapstick"],
    ["hilariously", "joking", "comedian"],
    ["wacky", "prank", "giggling"],
]
ROMAN_PHRASES = [
    ["dreaming", "true", "love"],
    ["tender", "blissful", "devotion"],
    ["sweetly", "cherished", "romance"],
    ["adoring", "beloved", "soulmates"],
    ["gently", "longing", "hearts"],
]

LEXICONS = {
    "humor": sorted({w for p in HUMOR_PHRASES for w in p}),
    "roman": sorted({w for p in ROMAN_PHRASES for w in p}),
}

STYLIZED_PER_STYLE = 25
FACTUAL_COUNT = 500
SEED = 20240731


def body(rng: random.Random) -> tuple[list[str], list[str]]:
    """A scene description plus the tags its image would carry."""
    adj = rng.choice(ADJS)
    noun = rng.choice(NOUNS)
    verb = rng.choice(VERBS)
    prep = rng.choice(PREPS)
    place = rng.choice(PLACES)
    tokens = ["a", adj, noun, verb, prep, "the", place]
    tags = [noun, place, adj]
    if rng.random() < 0.5:
        extra = rng.choice(ADJS)
        tokens = ["a", adj, noun, verb, prep, "the", extra, place]
        tags.append(extra)
    return tokens, tags


def write_fixture(
    out_dir: Path,
    stylized_per_style: int = STYLIZED_PER_STYLE,
    factual_count: int = FACTUAL_COUNT,
    seed: int = SEED,
) -> tuple[int, int]:
    rng = random.Random(seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    stylized_lines = []
    for style, phrases in (("humor", HUMOR_PHRASES), ("roman", ROMAN_PHRASES)):
        for i in range(stylized_per_style):
            tokens, tags = body(rng)
            caption = " ".join(tokens + rng.choice(phrases))
            stylized_lines.append(
                {
                    "image_id": f"{style[0]}{i:03d}",
                    "image_uri": "tags:" + ",".join(tags),
                    "caption": caption,
                    "style": style,
                }
            )
    factual_lines = []
    for i in range(factual_count):
        tokens, tags = body(rng)
        factual_lines.append(
            {
                "image_id": f"f{i:04d}",
                "image_uri": "tags:" + ",".join(tags),
                "caption": " ".join(tokens),
            }
        )

    (out_dir / "stylized.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in stylized_lines), encoding="utf-8"
    )
    (out_dir / "factual.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in factual_lines), encoding="utf-8"
    )
    (out_dir / "classifier.json").write_text(
        json.dumps(
            {
                "lexicons": LEXICONS,
                "head_count": 4,
                "layer_count": 4,
                "star": [1, 2],
                "seed": 13,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    (out_dir / "pipeline.toml").write_text(
        """\
[paths]
stylized = "stylized.jsonl"
factual = "factual.jsonl"
out_dir = "out"

[labels]
styles = ["humor", "roman"]

[extract]
epsilon = 0.25

[retrieve]
modes = ["i2i", "t2t", "i2t", "t2i"]

[filter]
min_similarity = 0.6
max_perplexity = 80.0
dedupe = true

[lm]
lambdas = [0.6, 0.3, 0.1]
unk_threshold = 1

[backends]
classifier = "ref:classifier:config=classifier.json"
embedder = "ref:embedder:dim=768,seed=7"
generator = "ref:generator:seed=7"
dimension = 768

[run]
seed = 7
workers = 1
""",
        encoding="utf-8",
    )
    return len(stylized_lines), len(factual_lines)


def main() -> int:
    stylized, factual = write_fixture(FIXTURE_DIR)
    print(f"wrote {stylized} stylized + {factual} factual records")
    return 0


if __name__ == "__main__":
    sys.exit(main())
