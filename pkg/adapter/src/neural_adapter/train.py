"""Classifier fine-tuning on a stylized JSONL corpus.

Input records need `caption` and `style` fields (the pipeline's stylized
corpus format). Defaults follow the serving configuration's batch/learning
rate; tests and small runs typically raise the epoch count since they start
from random weights rather than a pre-trained checkpoint.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import torch
from transformers import AutoModelForSequenceClassification, AutoTokenizer

logger = logging.getLogger(__name__)


def load_labeled_captions(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            rows.append((record["caption"], record["style"]))
    if not rows:
        raise ValueError(f"no labeled captions in {path}")
    return rows


def train_classifier(
    model_dir: str | Path,
    corpus_path: str | Path,
    out_dir: str | Path,
    learning_rate: float = 2e-5,
    epochs: int = 3,
    batch_size: int = 32,
    device: str = "cpu",
    seed: int = 0,
) -> dict:
    """Fine-tune the classifier in-place style: load, train, save to out_dir."""
    torch.manual_seed(seed)
    tokenizer = AutoTokenizer.from_pretrained(model_dir)
    model = AutoModelForSequenceClassification.from_pretrained(
        model_dir, attn_implementation="eager"
    )
    model.to(device)
    label2id = model.config.label2id
    rows = load_labeled_captions(corpus_path)
    unknown = sorted({style for _, style in rows if style not in label2id})
    if unknown:
        raise ValueError(f"styles {unknown} not in the model's label set {sorted(label2id)}")

    optimizer = torch.optim.AdamW(model.parameters(), lr=learning_rate)
    model.train()
    steps = 0
    for _ in range(epochs):
        for start in range(0, len(rows), batch_size):
            batch = rows[start : start + batch_size]
            enc = tokenizer(
                [caption for caption, _ in batch],
                return_tensors="pt",
                padding=True,
                truncation=True,
            ).to(device)
            labels = torch.tensor([label2id[style] for _, style in batch], device=device)
            loss = model(**enc, labels=labels).loss
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            steps += 1
    model.eval()

    correct = 0
    with torch.no_grad():
        for caption, style in rows:
            enc = tokenizer(caption, return_tensors="pt", truncation=True).to(device)
            predicted = int(model(**enc).logits.argmax(dim=-1))
            correct += int(predicted == label2id[style])
    accuracy = correct / len(rows)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenizer.save_pretrained(out_dir)
    model.save_pretrained(out_dir)
    for extra in ("projection.pt",):
        source = Path(model_dir) / extra
        if source.exists():
            (out_dir / extra).write_bytes(source.read_bytes())
    logger.info("trained %d steps, held-in accuracy %.3f", steps, accuracy)
    return {"steps": steps, "examples": len(rows), "held_in_accuracy": accuracy}
