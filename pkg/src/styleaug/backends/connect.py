"""Backend descriptor strings and connection establishment.

Descriptors name either an in-process reference backend or an out-of-process
wire endpoint:

    ref:classifier:config=PATH[,seed=N]      lexicon JSON file (see below)
    ref:embedder:dim=768,seed=7
    ref:generator:[seed=N][,anchors=PATH]    anchors: JSON list of words
    proc:COMMAND LINE                        subprocess speaking the protocol
    tcp:HOST:PORT                            socket speaking the protocol

The classifier config JSON holds {"lexicons": {label: [words]}, "head_count",
"layer_count", "star": [head, layer], "seed", "alpha"}; field defaults match
the ReferenceClassifier constructor.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import CapabilityMismatchError
from ..extractor import HeadLayerId
from .base import ClassifierBackend, EmbedderBackend, GeneratorBackend
from .reference import ReferenceClassifier, ReferenceEmbedder, ReferenceGenerator
from .wire import WireClient, wrap_client

_REF_KINDS = ("classifier", "embedder", "generator")


def _parse_kv(spec: str) -> dict[str, str]:
    out = {}
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ValueError(f"expected key=value, got {chunk!r}")
        key, value = chunk.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_reference(kind: str, spec: str):
    """Instantiate a reference backend from the descriptor tail."""
    opts = _parse_kv(spec)
    if kind == "classifier":
        config_path = opts.pop("config", None)
        if config_path is None:
            raise ValueError("ref:classifier requires config=PATH with the lexicons")
        config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        star = config.get("star", [1, 2])
        return ReferenceClassifier(
            lexicons=config["lexicons"],
            head_count=int(config.get("head_count", 4)),
            layer_count=int(config.get("layer_count", 4)),
            star=HeadLayerId(int(star[0]), int(star[1])),
            seed=int(opts.pop("seed", config.get("seed", 0))),
            alpha=float(config.get("alpha", 0.5)),
        )
    if kind == "embedder":
        return ReferenceEmbedder(
            dimension=int(opts.pop("dim", 768)), seed=int(opts.pop("seed", 0))
        )
    if kind == "generator":
        anchors: list[str] = []
        anchors_path = opts.pop("anchors", None)
        if anchors_path:
            anchors = json.loads(Path(anchors_path).read_text(encoding="utf-8"))
        return ReferenceGenerator(anchor_lexicon=anchors, seed=int(opts.pop("seed", 0)))
    raise ValueError(f"unknown reference backend kind {kind!r}")


def connect(
    descriptor: str,
    expect_kind: str | None = None,
    expected_labels: tuple[str, ...] | None = None,
    expected_dimension: int | None = None,
):
    """Resolve a descriptor to a live backend handle.

    For wire endpoints this performs the hello handshake; advertised
    capabilities are validated against the pipeline's expectations before any
    work is dispatched, and mismatches are fatal.
    """
    if descriptor.startswith("ref:"):
        rest = descriptor[len("ref:") :]
        kind, _, spec = rest.partition(":")
        if kind not in _REF_KINDS:
            raise ValueError(f"unknown reference kind in descriptor {descriptor!r}")
        backend = build_reference(kind, spec)
    elif descriptor.startswith("proc:"):
        client = WireClient.spawn(descriptor[len("proc:") :])
        backend = wrap_client(client, client.hello())
        kind = client.hello_info["kind"]
    elif descriptor.startswith("tcp:"):
        rest = descriptor[len("tcp:") :]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp descriptor must be tcp:HOST:PORT, got {descriptor!r}")
        client = WireClient.connect_tcp(host, int(port))
        backend = wrap_client(client, client.hello())
        kind = client.hello_info["kind"]
    else:
        raise ValueError(f"unrecognized backend descriptor {descriptor!r}")

    if expect_kind is not None and kind != expect_kind:
        backend.close()
        raise CapabilityMismatchError(
            f"{descriptor!r} is a {kind} backend, pipeline needs a {expect_kind}"
        )
    validate_capabilities(backend, descriptor, expected_labels, expected_dimension)
    return backend


def validate_capabilities(
    backend,
    descriptor: str,
    expected_labels: tuple[str, ...] | None = None,
    expected_dimension: int | None = None,
):
    if expected_labels is not None and isinstance(backend, ClassifierBackend):
        missing = [label for label in expected_labels if label not in backend.capabilities.labels]
        if missing:
            backend.close()
            raise CapabilityMismatchError(
                f"{descriptor!r} lacks labels {missing}; advertises {backend.capabilities.labels}"
            )
    if expected_dimension is not None and isinstance(backend, EmbedderBackend):
        if backend.capabilities.dimension != expected_dimension:
            backend.close()
            raise CapabilityMismatchError(
                f"{descriptor!r} advertises dimension {backend.capabilities.dimension}, "
                f"pipeline expects {expected_dimension}"
            )
