import json

from neural_adapter.fixtures import build_classifier
from neural_adapter.models import StyleClassifier
from neural_adapter.train import train_classifier

HUMOR_WORDS = ["goofy", "clown", "silly", "prank", "wacky"]
ROMAN_WORDS = ["tender", "loving", "romance", "devotion", "cherished"]
BODIES = [
    ["a", "dog", "runs", "in", "the", "park"],
    ["the", "cat", "sits", "near", "the", "yard"],
    ["a", "boy", "plays", "at", "the", "beach"],
    ["the", "girl", "walks", "by", "the", "lake"],
]


def make_corpus(path):
    rows = []
    i = 0
    for style, words in (("humor", HUMOR_WORDS), ("roman", ROMAN_WORDS)):
        for body in BODIES:
            for word in words:
                rows.append(
                    {
                        "image_id": f"s{i:03d}",
                        "image_uri": "none",
                        "caption": " ".join(body + [word, words[(words.index(word) + 1) % 5]]),
                        "style": style,
                    }
                )
                i += 1
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return len(rows)


def test_classifier_finetune_smoke(tmp_path):
    """Fine-tuning on separable data reaches >= 95% held-in accuracy.

    The tiny model starts from random weights, so the epoch count and
    learning rate are raised well above the serving defaults.
    """
    base = build_classifier(tmp_path / "base", labels=("humor", "roman"), seed=5)
    corpus = tmp_path / "corpus.jsonl"
    count = make_corpus(corpus)
    summary = train_classifier(
        base,
        corpus,
        tmp_path / "tuned",
        learning_rate=5e-4,
        epochs=30,
        batch_size=16,
        seed=3,
    )
    assert summary["examples"] == count
    assert summary["held_in_accuracy"] >= 0.95

    tuned = StyleClassifier(tmp_path / "tuned", device="cpu")
    probs = tuned.classify(["a", "dog", "runs", "in", "the", "park", "goofy", "clown"])
    assert max(probs, key=probs.get) == "humor"
    probs = tuned.classify(["the", "girl", "walks", "by", "the", "lake", "tender", "loving"])
    assert max(probs, key=probs.get) == "roman"
