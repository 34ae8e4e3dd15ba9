"""Build small randomly-initialized model bundles for tests and demos.

Real deployments point the adapter at fine-tuned checkpoints; these bundles
have the same file layout (tokenizer + config + weights + projection) but tiny
shapes and seeded random weights, so the full serving path runs in seconds on
CPU with no downloads.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers
from transformers import (
    BertConfig,
    BertForSequenceClassification,
    BertModel,
    BertTokenizerFast,
    GPT2Config,
    GPT2LMHeadModel,
    PreTrainedTokenizerFast,
)

DEFAULT_WORDS = [
    "a", "an", "the", "dog", "cat", "boy", "girl", "man", "woman", "horse",
    "runs", "jumps", "sits", "plays", "sleeps", "walks", "stands", "waits",
    "in", "near", "by", "at", "on", "with", "park", "beach", "yard", "field",
    "street", "lake", "small", "big", "old", "young", "brown", "white",
    "goofy", "clown", "silly", "mischief", "prank", "wacky", "hilarious",
    "tender", "loving", "romance", "devotion", "cherished", "dreamy", "beloved",
    "snow", "ground", "air", "kids", "jumping", "over",
]

# Continuation pieces so some words genuinely split into subwords and the
# word-level aggregation path gets exercised.
SUBWORD_PIECES = ["good", "##ness", "snow", "##y", "play", "##ful"]

REGION_FEATURE_DIM = 64


def _write_bert_vocab(path: Path, words) -> Path:
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    seen = list(dict.fromkeys(list(words) + SUBWORD_PIECES))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(specials + seen) + "\n", encoding="utf-8")
    return path


def build_classifier(out_dir: Path, labels=("humor", "roman"), seed=1, hidden=64,
                     layers=2, heads=2, words=DEFAULT_WORDS) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_file = _write_bert_vocab(out_dir / "vocab.txt", words)
    tokenizer = BertTokenizerFast(str(vocab_file), do_lower_case=True)
    tokenizer.save_pretrained(out_dir)
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=tokenizer.vocab_size,
        hidden_size=hidden,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=hidden * 2,
        max_position_embeddings=128,
        num_labels=len(labels),
        id2label={i: label for i, label in enumerate(labels)},
        label2id={label: i for i, label in enumerate(labels)},
    )
    BertForSequenceClassification(config).save_pretrained(out_dir)
    return out_dir


def build_encoder(out_dir: Path, seed=2, dimension=768, layers=2, heads=4,
                  words=DEFAULT_WORDS) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_file = _write_bert_vocab(out_dir / "vocab.txt", words)
    tokenizer = BertTokenizerFast(str(vocab_file), do_lower_case=True)
    tokenizer.save_pretrained(out_dir)
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=tokenizer.vocab_size,
        hidden_size=dimension,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=256,
        max_position_embeddings=128,
    )
    BertModel(config).save_pretrained(out_dir)
    projection = torch.nn.Linear(REGION_FEATURE_DIM, dimension)
    torch.save(
        {
            "in_features": REGION_FEATURE_DIM,
            "state_dict": projection.state_dict(),
        },
        out_dir / "projection.pt",
    )
    return out_dir


def build_generator(out_dir: Path, seed=3, width=64, layers=2, heads=2) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    vocab = {symbol: i for i, symbol in enumerate(alphabet)}
    vocab["<|endoftext|>"] = len(vocab)
    raw = Tokenizer(models.BPE(vocab=vocab, merges=[]))
    raw.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    raw.decoder = decoders.ByteLevel()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=raw, eos_token="<|endoftext|>", pad_token="<|endoftext|>"
    )
    # Bake the prompt markers in so serving never has to resize embeddings.
    tokenizer.add_special_tokens({"additional_special_tokens": ["[CLS]", "[SEP]", "[GEN]"]})
    tokenizer.save_pretrained(out_dir)
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=512,
        n_embd=width,
        n_layer=layers,
        n_head=heads,
        bos_token_id=tokenizer.eos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    GPT2LMHeadModel(config).save_pretrained(out_dir)
    return out_dir


def build_region_features(path: Path, seed: int, regions: int = 8) -> Path:
    rng = np.random.default_rng(seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, rng.standard_normal((regions, REGION_FEATURE_DIM)).astype(np.float32))
    return path


def build_bundle(root: Path, dimension: int = 768, labels=("humor", "roman"), seed=0) -> Path:
    """Classifier + encoder + generator + adapter.json under one directory."""
    build_classifier(root / "classifier", labels=labels, seed=seed + 1)
    build_encoder(root / "encoder", seed=seed + 2, dimension=dimension)
    build_generator(root / "generator", seed=seed + 3)
    config_path = root / "adapter.json"
    config_path.write_text(
        json.dumps(
            {
                "classifier_dir": "classifier",
                "encoder_dir": "encoder",
                "generator_dir": "generator",
                "device": "cpu",
                "expected_dimension": dimension,
                "subword_aggregation": "max",
                "generation": {"max_new_tokens": 16, "min_new_tokens": 2, "do_sample": False},
                "finetune": {"learning_rate": 5e-5, "epochs": 1, "batch_size": 8},
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return config_path
