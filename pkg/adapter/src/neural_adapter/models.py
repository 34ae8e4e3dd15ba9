"""Model wrappers: attention-exposing classifier, multimodal encoder,
prompt-conditioned generator.

The pipeline tokenizes captions into whole words; these wrappers feed the
words as pre-split input, track the subword-to-word alignment, and aggregate
attention back to whole words (max over pieces, renormalized) so every
response lines up with the pipeline's token counts.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from transformers import (
    AutoModel,
    AutoModelForSequenceClassification,
    AutoTokenizer,
    GPT2LMHeadModel,
    PreTrainedTokenizerFast,
)

from .config import AdapterConfig
from .protocol import RequestError

logger = logging.getLogger(__name__)

CLS_MARKER = "[CLS]"
SEP_MARKER = "[SEP]"
GEN_MARKER = "[GEN]"


class StyleClassifier:
    """Sequence classifier that also exposes anchor-token attention."""

    def __init__(self, model_dir: Path, device: str, aggregation: str = "max"):
        if aggregation != "max":
            raise ValueError(f"unsupported subword aggregation {aggregation!r}")
        self.tokenizer = AutoTokenizer.from_pretrained(model_dir)
        self.model = AutoModelForSequenceClassification.from_pretrained(
            model_dir, attn_implementation="eager"
        )
        self.model.to(device)
        self.model.eval()
        self.device = device
        id2label = self.model.config.id2label
        self.labels = tuple(id2label[i] for i in sorted(id2label))
        self.head_count = self.model.config.num_attention_heads
        self.layer_count = self.model.config.num_hidden_layers

    def _encode(self, words: Sequence[str]):
        if not words:
            raise RequestError("bad_request", "token list must be non-empty")
        return self.tokenizer(
            list(words), is_split_into_words=True, return_tensors="pt", truncation=True
        ).to(self.device)

    def classify(self, words: Sequence[str]) -> dict[str, float]:
        enc = self._encode(words)
        with torch.no_grad():
            logits = self.model(**enc).logits[0]
        probs = torch.softmax(logits, dim=-1).tolist()
        return dict(zip(self.labels, probs))

    def attention(self, words: Sequence[str]) -> np.ndarray:
        """(heads, layers, words) array; each (h, l) row sums to 1.

        Rows are the [CLS] query's attention over the caption's subword keys,
        aggregated to whole words by max and renormalized.
        """
        enc = self._encode(words)
        with torch.no_grad():
            out = self.model(**enc, output_attentions=True)
        word_ids = enc.word_ids(0)
        pieces_per_word: dict[int, list[int]] = {}
        for position, word_id in enumerate(word_ids):
            if word_id is not None:
                pieces_per_word.setdefault(word_id, []).append(position)
        if len(pieces_per_word) != len(words):
            raise RequestError(
                "backend_error",
                f"alignment failure: {len(words)} words became {len(pieces_per_word)} groups",
            )
        weights = np.zeros((self.head_count, self.layer_count, len(words)))
        for layer, layer_attention in enumerate(out.attentions):
            # (batch, heads, query, key); anchor token sits at position 0
            anchor = layer_attention[0, :, 0, :].cpu().numpy()
            for word_id in range(len(words)):
                pieces = pieces_per_word[word_id]
                weights[:, layer, word_id] = anchor[:, pieces].max(axis=1)
        sums = weights.sum(axis=2, keepdims=True)
        if np.any(sums <= 0):
            raise RequestError("backend_error", "degenerate attention row")
        return weights / sums


class MultiModalEncoder:
    """Shared-space encoder: caption words or region features to one vector.

    Both modalities pass through the same transformer; the final hidden state
    of the anchor token is the embedding. Images arrive as precomputed region
    feature files referenced by the ImageRef uri (`.npy`/`.npz`, optionally
    prefixed with `feat:`), projected into the model width by the bundled
    projection layer.
    """

    def __init__(self, model_dir: Path, device: str, expected_dimension: int):
        self.tokenizer = AutoTokenizer.from_pretrained(model_dir)
        self.model = AutoModel.from_pretrained(model_dir)
        self.model.to(device)
        self.model.eval()
        self.device = device
        self.dimension = self.model.config.hidden_size
        if self.dimension != expected_dimension:
            raise ValueError(
                f"encoder hidden size {self.dimension} != expected dimension {expected_dimension}"
            )
        projection_path = Path(model_dir) / "projection.pt"
        self.projection = None
        if projection_path.exists():
            payload = torch.load(projection_path, map_location=device, weights_only=True)
            self.projection = torch.nn.Linear(payload["in_features"], self.dimension)
            self.projection.load_state_dict(payload["state_dict"])
            self.projection.to(device)
            self.projection.eval()

    def embed_text(self, words: Sequence[str]) -> np.ndarray:
        if not words:
            raise RequestError("bad_request", "token list must be non-empty")
        enc = self.tokenizer(
            list(words), is_split_into_words=True, return_tensors="pt", truncation=True
        ).to(self.device)
        with torch.no_grad():
            hidden = self.model(**enc).last_hidden_state
        return hidden[0, 0].cpu().numpy()

    def _region_features(self, uri: str) -> np.ndarray:
        path = uri[len("feat:") :] if uri.startswith("feat:") else uri
        if not Path(path).exists():
            raise RequestError("bad_request", f"feature file not found: {path}")
        if path.endswith(".npz"):
            with np.load(path) as bundle:
                features = bundle["features"]
        else:
            features = np.load(path)
        if features.ndim != 2:
            raise RequestError("bad_request", f"region features must be 2-d, got {features.shape}")
        return features

    def embed_image(self, image_id: str, uri: str) -> np.ndarray:
        features = torch.as_tensor(
            self._region_features(uri), dtype=torch.float32, device=self.device
        ).unsqueeze(0)
        if features.shape[-1] != self.dimension:
            if self.projection is None or features.shape[-1] != self.projection.in_features:
                raise RequestError(
                    "bad_request",
                    f"region feature width {features.shape[-1]} needs a matching projection",
                )
            with torch.no_grad():
                features = self.projection(features)
        cls_id = torch.tensor([[self.tokenizer.cls_token_id]], device=self.device)
        with torch.no_grad():
            cls_embedding = self.model.embeddings.word_embeddings(cls_id)
            sequence = torch.cat([cls_embedding, features], dim=1)
            hidden = self.model(inputs_embeds=sequence).last_hidden_state
        return hidden[0, 0].cpu().numpy()


class CaptionGenerator:
    """Causal LM conditioned on `[CLS] phrase [SEP] content [GEN]`.

    The pipeline's marker strings are registered as special tokens, so they
    survive tokenization as single units. Fine-tuning minimizes the target's
    token loss given the prompt, per request over the wire.
    """

    def __init__(self, model_dir: Path, device: str, generation, finetune):
        self.tokenizer: PreTrainedTokenizerFast = AutoTokenizer.from_pretrained(model_dir)
        self.model = GPT2LMHeadModel.from_pretrained(model_dir)
        added = self.tokenizer.add_special_tokens(
            {"additional_special_tokens": [CLS_MARKER, SEP_MARKER, GEN_MARKER]}
        )
        if self.tokenizer.pad_token is None:
            self.tokenizer.pad_token = self.tokenizer.eos_token
        if added:
            # Seed the new-row init so two serve processes agree exactly.
            torch.manual_seed(0)
            self.model.resize_token_embeddings(len(self.tokenizer))
        self.model.to(device)
        self.model.eval()
        self.device = device
        self.generation = generation
        self.finetune_params = finetune

    def _prompt_text(self, style_phrase: Sequence[str], content: Sequence[str]) -> str:
        if not style_phrase or not content:
            raise RequestError("bad_request", "style_phrase and content must be non-empty")
        return f"{CLS_MARKER} {' '.join(style_phrase)} {SEP_MARKER} {' '.join(content)} {GEN_MARKER}"

    def generate(self, style_phrase: Sequence[str], content: Sequence[str], seed: int) -> list[str]:
        text = self._prompt_text(style_phrase, content)
        enc = self.tokenizer(text, return_tensors="pt").to(self.device)
        torch.manual_seed(seed)
        with torch.no_grad():
            out = self.model.generate(
                **enc,
                max_new_tokens=self.generation.max_new_tokens,
                min_new_tokens=self.generation.min_new_tokens,
                do_sample=self.generation.do_sample,
                pad_token_id=self.tokenizer.pad_token_id,
            )
        new_tokens = out[0][enc["input_ids"].shape[1] :]
        decoded = self.tokenizer.decode(new_tokens, skip_special_tokens=True)
        return decoded.split()

    def finetune(self, pairs: list[dict]) -> dict:
        """Reconstruction tuning: prompt tokens are masked out of the loss."""
        if not pairs:
            return {"trained": False, "items": 0}
        params = self.finetune_params
        examples = []
        for pair in pairs:
            prompt = self._prompt_text(
                pair["prompt"]["style_phrase"], pair["prompt"]["content"]
            )
            target = " ".join(pair["target"])
            examples.append((prompt, f"{prompt} {target}{self.tokenizer.eos_token}"))
        self.model.train()
        optimizer = torch.optim.AdamW(self.model.parameters(), lr=params.learning_rate)
        steps = 0
        for _ in range(params.epochs):
            for start in range(0, len(examples), params.batch_size):
                batch = examples[start : start + params.batch_size]
                full = self.tokenizer(
                    [text for _, text in batch],
                    return_tensors="pt",
                    padding=True,
                    truncation=True,
                ).to(self.device)
                labels = full["input_ids"].clone()
                labels[full["attention_mask"] == 0] = -100
                for row, (prompt, _) in enumerate(batch):
                    prompt_len = len(self.tokenizer(prompt)["input_ids"])
                    labels[row, :prompt_len] = -100
                loss = self.model(**full, labels=labels).loss
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                steps += 1
        self.model.eval()
        return {
            "trained": True,
            "items": len(pairs),
            "epochs": params.epochs,
            "steps": steps,
        }


def load_role(config: AdapterConfig, role: str):
    if role == "classifier":
        if config.classifier_dir is None:
            raise ValueError("config has no classifier_dir")
        return StyleClassifier(config.classifier_dir, config.device, config.subword_aggregation)
    if role == "embedder":
        if config.encoder_dir is None:
            raise ValueError("config has no encoder_dir")
        return MultiModalEncoder(config.encoder_dir, config.device, config.expected_dimension)
    if role == "generator":
        if config.generator_dir is None:
            raise ValueError("config has no generator_dir")
        return CaptionGenerator(
            config.generator_dir, config.device, config.generation, config.finetune
        )
    raise ValueError(f"unknown role {role!r}")
