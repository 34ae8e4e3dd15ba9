"""Request dispatch for one adapter role over the wire."""

from __future__ import annotations

import logging
from typing import IO

from .config import AdapterConfig
from .models import CaptionGenerator, MultiModalEncoder, StyleClassifier, load_role
from .protocol import PROTOCOL_VERSION, RequestError, floats_to_b64, serve_lines

logger = logging.getLogger(__name__)


def serve(
    config: AdapterConfig,
    role: str,
    reader: IO[str] | None = None,
    writer: IO[str] | None = None,
) -> None:
    backend = load_role(config, role)
    finetune_buffer: list[dict] | None = None

    def hello() -> dict:
        if isinstance(backend, StyleClassifier):
            capabilities = {
                "labels": list(backend.labels),
                "head_count": backend.head_count,
                "layer_count": backend.layer_count,
            }
        elif isinstance(backend, MultiModalEncoder):
            capabilities = {"dimension": backend.dimension, "modalities": ["text", "image"]}
        else:
            capabilities = {"deterministic": not config.generation.do_sample, "seedable": True}
        return {
            "protocol": PROTOCOL_VERSION,
            "kind": role,
            "pipelining": 1,
            "capabilities": capabilities,
        }

    def handle(method: str, params: dict) -> dict:
        nonlocal finetune_buffer
        if method == "classify" and isinstance(backend, StyleClassifier):
            probs = backend.classify(list(params["tokens"]))
            return {"labels": list(backend.labels), "probs": [probs[l] for l in backend.labels]}
        if method == "attention" and isinstance(backend, StyleClassifier):
            weights = backend.attention(list(params["tokens"]))
            return {
                "head_count": weights.shape[0],
                "layer_count": weights.shape[1],
                "token_count": weights.shape[2],
                "weights_b64": floats_to_b64(weights),
            }
        if method == "embed_text" and isinstance(backend, MultiModalEncoder):
            vector = backend.embed_text(list(params["tokens"]))
            return {"dimension": int(vector.shape[0]), "vector_b64": floats_to_b64(vector)}
        if method == "embed_image" and isinstance(backend, MultiModalEncoder):
            image = params["image"]
            vector = backend.embed_image(str(image["id"]), str(image["uri"]))
            return {"dimension": int(vector.shape[0]), "vector_b64": floats_to_b64(vector)}
        if method == "generate" and isinstance(backend, CaptionGenerator):
            tokens = backend.generate(
                list(params["style_phrase"]), list(params["content"]), int(params.get("seed", 0))
            )
            return {"tokens": tokens}
        if method == "finetune_begin" and isinstance(backend, CaptionGenerator):
            finetune_buffer = []
            return {"ok": True}
        if method == "finetune_item" and isinstance(backend, CaptionGenerator):
            if finetune_buffer is None:
                raise RequestError("bad_request", "finetune_item before finetune_begin")
            finetune_buffer.append({"prompt": params["prompt"], "target": params["target"]})
            return {"ok": True, "buffered": len(finetune_buffer)}
        if method == "finetune_end" and isinstance(backend, CaptionGenerator):
            if finetune_buffer is None:
                raise RequestError("bad_request", "finetune_end before finetune_begin")
            ack = backend.finetune(finetune_buffer)
            finetune_buffer = None
            return ack
        raise RequestError(
            "unknown_method", f"method {method!r} not supported by a {role} backend"
        )

    serve_lines(handle, hello, reader, writer)
