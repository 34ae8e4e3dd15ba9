"""Line-delimited JSON wire protocol for out-of-process backends.

One JSON object per line, UTF-8, canonical encoding (sorted keys, compact
separators, ASCII escapes) so identical traffic is byte-identical. Requests
carry a correlation id, a method, and params; every request is answered
exactly once with either a result or an error, and responses may arrive out
of order. The first exchange on a connection must be ``hello``, which returns
the backend kind and its capabilities.

Methods: hello, classify, attention, embed_text, embed_image, generate,
finetune_begin, finetune_item, finetune_end. Embedding vectors and attention
tensors travel as base64 little-endian float64. The full schema with golden
transcripts lives in docs/wire-protocol.md.
"""

from __future__ import annotations

import base64
import json
import select
import shlex
import socket
import subprocess
import sys
from typing import IO, Sequence

import numpy as np

from ..data import ImageRef
from ..errors import BackendError, BackendUnavailableError, WireProtocolError
from ..extractor import AttentionProfile
from ..generator import EmotionPrompt, FineTunePair, assemble_prompt
from ..retriever import EmbeddingVector
from .base import (
    ClassifierBackend,
    ClassifierCapabilities,
    EmbedderBackend,
    EmbedderCapabilities,
    GeneratorBackend,
    GeneratorCapabilities,
)

PROTOCOL_VERSION = 1

HELLO_TIMEOUT = 10.0


def canonical_encode(obj: dict) -> str:
    """Byte-stable one-line JSON for wire messages."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def floats_to_b64(values: np.ndarray) -> str:
    return base64.b64encode(np.asarray(values, dtype="<f8").tobytes()).decode("ascii")


def b64_to_floats(payload: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(payload), dtype="<f8").copy()


# ---------------------------------------------------------------------------
# Server side


def serve_backend(backend, kind: str, reader: IO[str] | None = None, writer: IO[str] | None = None):
    """Answer wire requests for an in-process backend until EOF.

    ``kind`` is one of classifier/embedder/generator and selects the method
    table. Per-request failures become error responses; only EOF stops the
    loop.
    """
    reader = reader if reader is not None else sys.stdin
    writer = writer if writer is not None else sys.stdout
    finetune_buffer: list[FineTunePair] | None = None

    def respond(obj: dict):
        writer.write(canonical_encode(obj) + "\n")
        writer.flush()

    for line in reader:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            respond({"id": None, "error": {"code": "bad_request", "message": f"invalid JSON: {exc}"}})
            continue
        req_id = message.get("id")
        method = message.get("method")
        params = message.get("params") or {}
        try:
            if method == "hello":
                result = {
                    "protocol": PROTOCOL_VERSION,
                    "kind": kind,
                    "pipelining": 1,
                    "capabilities": _capabilities_payload(backend, kind),
                }
            elif method == "classify" and kind == "classifier":
                probs = backend.classify(list(params["tokens"]))
                labels = list(backend.capabilities.labels)
                result = {"labels": labels, "probs": [probs[label] for label in labels]}
            elif method == "attention" and kind == "classifier":
                profile = backend.attention(list(params["tokens"]))
                result = {
                    "head_count": profile.head_count,
                    "layer_count": profile.layer_count,
                    "token_count": profile.token_count,
                    "weights_b64": floats_to_b64(profile.weights),
                }
            elif method == "embed_text" and kind == "embedder":
                vec = backend.embed_text(list(params["tokens"]))
                result = {"dimension": vec.dimension, "vector_b64": floats_to_b64(vec.values)}
            elif method == "embed_image" and kind == "embedder":
                image = params["image"]
                vec = backend.embed_image(ImageRef(id=str(image["id"]), uri=str(image["uri"])))
                result = {"dimension": vec.dimension, "vector_b64": floats_to_b64(vec.values)}
            elif method == "generate" and kind == "generator":
                prompt = assemble_prompt(params["style_phrase"], params["content"])
                tokens = backend.generate(prompt, int(params.get("seed", 0)))
                result = {"tokens": list(tokens)}
            elif method == "finetune_begin" and kind == "generator":
                finetune_buffer = []
                result = {"ok": True}
            elif method == "finetune_item" and kind == "generator":
                if finetune_buffer is None:
                    raise ValueError("finetune_item before finetune_begin")
                prompt = assemble_prompt(
                    params["prompt"]["style_phrase"], params["prompt"]["content"]
                )
                from ..data import Caption

                finetune_buffer.append(
                    FineTunePair(prompt=prompt, target=Caption.from_tokens(params["target"]))
                )
                result = {"ok": True, "buffered": len(finetune_buffer)}
            elif method == "finetune_end" and kind == "generator":
                if finetune_buffer is None:
                    raise ValueError("finetune_end before finetune_begin")
                result = dict(backend.finetune(finetune_buffer))
                finetune_buffer = None
            else:
                respond(
                    {
                        "id": req_id,
                        "error": {
                            "code": "unknown_method",
                            "message": f"method {method!r} not supported by a {kind} backend",
                        },
                    }
                )
                continue
        except (KeyError, TypeError, ValueError) as exc:
            respond({"id": req_id, "error": {"code": "bad_request", "message": str(exc)}})
            continue
        except Exception as exc:  # pragma: no cover - defensive
            respond({"id": req_id, "error": {"code": "backend_error", "message": str(exc)}})
            continue
        respond({"id": req_id, "result": result})


def _capabilities_payload(backend, kind: str) -> dict:
    caps = backend.capabilities
    if kind == "classifier":
        return {
            "labels": list(caps.labels),
            "head_count": caps.head_count,
            "layer_count": caps.layer_count,
        }
    if kind == "embedder":
        return {"dimension": caps.dimension, "modalities": list(caps.modalities)}
    if kind == "generator":
        return {"deterministic": caps.deterministic, "seedable": caps.seedable}
    raise ValueError(f"unknown backend kind {kind!r}")


# ---------------------------------------------------------------------------
# Client side


class WireClient:
    """Request/response client over a pair of text streams.

    Correlates responses by id, so out-of-order replies are fine; pending
    replies for other ids are buffered.
    """

    def __init__(self, reader: IO[str], writer: IO[str], describe: str = "wire", on_close=None):
        self._reader = reader
        self._writer = writer
        self._describe = describe
        self._on_close = on_close
        self._next_id = 1
        self._pending: dict[int, dict] = {}
        self.hello_info: dict | None = None

    # -- transport ---------------------------------------------------------

    @classmethod
    def spawn(cls, command: str | Sequence[str]) -> "WireClient":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BackendUnavailableError(f"cannot start backend {argv!r}: {exc}") from exc

        def close():
            if proc.poll() is None:
                proc.terminate()
                try:
                    proc.wait(timeout=3)
                except subprocess.TimeoutExpired:
                    proc.kill()

        return cls(proc.stdout, proc.stdin, describe=f"proc:{argv[0]}", on_close=close)

    @classmethod
    def connect_tcp(cls, host: str, port: int) -> "WireClient":
        try:
            sock = socket.create_connection((host, port), timeout=HELLO_TIMEOUT)
        except OSError as exc:
            raise BackendUnavailableError(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.settimeout(None)
        reader = sock.makefile("r", encoding="utf-8")
        writer = sock.makefile("w", encoding="utf-8")
        return cls(reader, writer, describe=f"tcp:{host}:{port}", on_close=sock.close)

    def close(self):
        if self._on_close is not None:
            self._on_close()
            self._on_close = None

    # -- protocol ----------------------------------------------------------

    def encode_request(self, req_id: int, method: str, params: dict) -> str:
        return canonical_encode({"id": req_id, "method": method, "params": params})

    def request(self, method: str, params: dict, timeout: float | None = None):
        req_id = self._next_id
        self._next_id += 1
        line = self.encode_request(req_id, method, params)
        try:
            self._writer.write(line + "\n")
            self._writer.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise BackendUnavailableError(f"{self._describe}: connection lost on send") from exc
        response = self._read_response(req_id, timeout)
        if "error" in response:
            err = response["error"] or {}
            raise BackendError(
                f"{self._describe}: {err.get('code', 'error')}: {err.get('message', '')}"
            )
        return response.get("result")

    def _read_response(self, req_id: int, timeout: float | None) -> dict:
        if req_id in self._pending:
            return self._pending.pop(req_id)
        while True:
            if timeout is not None:
                ready, _, _ = select.select([self._reader], [], [], timeout)
                if not ready:
                    raise BackendUnavailableError(
                        f"{self._describe}: no response within {timeout}s"
                    )
            line = self._reader.readline()
            if not line:
                raise BackendUnavailableError(f"{self._describe}: connection closed")
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except json.JSONDecodeError as exc:
                raise WireProtocolError(f"{self._describe}: invalid response line: {exc}") from exc
            if message.get("id") == req_id:
                return message
            if message.get("id") is not None:
                self._pending[message["id"]] = message
            else:
                raise WireProtocolError(f"{self._describe}: unsolicited message: {line[:200]}")

    def hello(self, timeout: float = HELLO_TIMEOUT) -> dict:
        info = self.request("hello", {"protocol": PROTOCOL_VERSION}, timeout=timeout)
        if not isinstance(info, dict) or "kind" not in info or "capabilities" not in info:
            raise WireProtocolError(f"{self._describe}: malformed hello response")
        self.hello_info = info
        return info


# ---------------------------------------------------------------------------
# Client-side backend wrappers


class WireClassifierBackend(ClassifierBackend):
    def __init__(self, client: WireClient, capabilities: ClassifierCapabilities):
        self.client = client
        self.capabilities = capabilities

    def classify(self, tokens: Sequence[str]) -> dict[str, float]:
        result = self.client.request("classify", {"tokens": list(tokens)})
        return dict(zip(result["labels"], result["probs"]))

    def attention(self, tokens: Sequence[str]) -> AttentionProfile:
        result = self.client.request("attention", {"tokens": list(tokens)})
        shape = (result["head_count"], result["layer_count"], result["token_count"])
        return AttentionProfile(b64_to_floats(result["weights_b64"]).reshape(shape))

    def close(self):
        self.client.close()


class WireEmbedderBackend(EmbedderBackend):
    def __init__(self, client: WireClient, capabilities: EmbedderCapabilities):
        self.client = client
        self.capabilities = capabilities

    def _vector(self, result: dict) -> EmbeddingVector:
        vec = b64_to_floats(result["vector_b64"])
        if vec.shape[0] != result.get("dimension", vec.shape[0]):
            raise WireProtocolError("embedding payload length disagrees with dimension")
        return EmbeddingVector.of(vec)

    def embed_text(self, tokens: Sequence[str]) -> EmbeddingVector:
        return self._vector(self.client.request("embed_text", {"tokens": list(tokens)}))

    def embed_image(self, image: ImageRef) -> EmbeddingVector:
        return self._vector(
            self.client.request("embed_image", {"image": {"id": image.id, "uri": image.uri}})
        )

    def close(self):
        self.client.close()


class WireGeneratorBackend(GeneratorBackend):
    def __init__(self, client: WireClient, capabilities: GeneratorCapabilities):
        self.client = client
        self.capabilities = capabilities

    def generate(self, prompt: EmotionPrompt, seed: int) -> list[str]:
        result = self.client.request(
            "generate",
            {
                "style_phrase": list(prompt.style_phrase),
                "content": list(prompt.content),
                "rendered": prompt.rendered,
                "seed": int(seed),
            },
        )
        return list(result["tokens"])

    def finetune(self, pairs: Sequence[FineTunePair]) -> dict:
        self.client.request("finetune_begin", {"count": len(pairs)})
        for pair in pairs:
            self.client.request(
                "finetune_item",
                {
                    "prompt": {
                        "style_phrase": list(pair.prompt.style_phrase),
                        "content": list(pair.prompt.content),
                        "rendered": pair.prompt.rendered,
                    },
                    "target": list(pair.target.tokens),
                },
            )
        return self.client.request("finetune_end", {})

    def close(self):
        self.client.close()


def wrap_client(client: WireClient, hello: dict):
    """Build the typed backend wrapper matching the hello's declared kind."""
    kind = hello["kind"]
    caps = hello["capabilities"]
    if kind == "classifier":
        return WireClassifierBackend(
            client,
            ClassifierCapabilities(
                labels=tuple(caps["labels"]),
                head_count=int(caps["head_count"]),
                layer_count=int(caps["layer_count"]),
            ),
        )
    if kind == "embedder":
        return WireEmbedderBackend(
            client,
            EmbedderCapabilities(
                dimension=int(caps["dimension"]),
                modalities=tuple(caps.get("modalities", ("text", "image"))),
            ),
        )
    if kind == "generator":
        return WireGeneratorBackend(
            client,
            GeneratorCapabilities(
                deterministic=bool(caps["deterministic"]),
                seedable=bool(caps.get("seedable", False)),
            ),
        )
    raise WireProtocolError(f"backend announced unknown kind {kind!r}")
