"""Wire protocol plumbing: line-delimited JSON with canonical encoding.

This mirrors the pipeline's documented protocol (docs/wire-protocol.md in the
pipeline repository): one JSON object per line, sorted keys, compact
separators, ASCII escapes; requests carry id/method/params and are answered
exactly once with result or error. The adapter only depends on the documented
wire format, never on the pipeline's code.
"""

from __future__ import annotations

import base64
import json
import sys
from typing import IO, Callable

import numpy as np

PROTOCOL_VERSION = 1


def canonical_encode(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def floats_to_b64(values: np.ndarray) -> str:
    return base64.b64encode(np.asarray(values, dtype="<f8").tobytes()).decode("ascii")


class RequestError(Exception):
    """Maps to an error response with the given code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def serve_lines(
    handle: Callable[[str, dict], dict],
    hello: Callable[[], dict],
    reader: IO[str] | None = None,
    writer: IO[str] | None = None,
) -> None:
    """Answer requests until EOF. `handle(method, params)` returns the result
    payload; `hello()` returns the capabilities payload."""
    reader = reader if reader is not None else sys.stdin
    writer = writer if writer is not None else sys.stdout

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
                result = hello()
            else:
                result = handle(method, params)
        except RequestError as exc:
            respond({"id": req_id, "error": {"code": exc.code, "message": str(exc)}})
            continue
        except (KeyError, TypeError, ValueError) as exc:
            respond({"id": req_id, "error": {"code": "bad_request", "message": str(exc)}})
            continue
        except Exception as exc:
            respond({"id": req_id, "error": {"code": "backend_error", "message": str(exc)}})
            continue
        respond({"id": req_id, "result": result})
