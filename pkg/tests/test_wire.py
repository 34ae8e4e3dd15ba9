import importlib.util
import io
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from styleaug.backends.connect import connect
from styleaug.backends.reference import ReferenceClassifier, ReferenceEmbedder
from styleaug.backends.wire import (
    WireClient,
    b64_to_floats,
    canonical_encode,
    floats_to_b64,
    serve_backend,
)
from styleaug.data import ImageRef
from styleaug.errors import BackendError, BackendUnavailableError, WireProtocolError
from styleaug.generator import assemble_prompt

REPO = Path(__file__).resolve().parent.parent
TRANSCRIPTS = REPO / "docs" / "transcripts"


def load_recorder():
    spec = importlib.util.spec_from_file_location(
        "record_transcripts", REPO / "scripts" / "record_transcripts.py"
    )
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def read_transcript(kind):
    entries = [
        json.loads(line)
        for line in (TRANSCRIPTS / f"{kind}.jsonl").read_text(encoding="utf-8").splitlines()
    ]
    requests = [e["line"] for e in entries if e["dir"] == "request"]
    responses = [e["line"] for e in entries if e["dir"] == "response"]
    return requests, responses


class ScriptedReader(io.StringIO):
    """Feeds pre-recorded response lines to a WireClient."""

    def __init__(self, lines):
        super().__init__("".join(line + "\n" for line in lines))


class TestBase64Payloads:
    def test_round_trip_exact(self):
        values = np.random.default_rng(0).standard_normal(17)
        assert np.array_equal(b64_to_floats(floats_to_b64(values)), values)


class TestServeLoop:
    def _serve(self, backend, kind, request_lines):
        reader = io.StringIO("".join(line + "\n" for line in request_lines))
        writer = io.StringIO()
        serve_backend(backend, kind, reader, writer)
        return [json.loads(line) for line in writer.getvalue().splitlines()]

    def test_every_request_answered_once_with_matching_id(self):
        backend = ReferenceEmbedder(dimension=8, seed=1)
        requests = [
            canonical_encode({"id": 1, "method": "hello", "params": {"protocol": 1}}),
            canonical_encode({"id": 2, "method": "embed_text", "params": {"tokens": ["a"]}}),
            canonical_encode({"id": 3, "method": "embed_text", "params": {"tokens": ["b"]}}),
        ]
        responses = self._serve(backend, "embedder", requests)
        assert [r["id"] for r in responses] == [1, 2, 3]
        assert all("result" in r for r in responses)

    def test_unknown_method_is_an_error_response(self):
        backend = ReferenceEmbedder(dimension=8, seed=1)
        responses = self._serve(
            backend,
            "embedder",
            [canonical_encode({"id": 5, "method": "classify", "params": {"tokens": ["a"]}})],
        )
        assert responses[0]["error"]["code"] == "unknown_method"

    def test_bad_params_is_an_error_response(self):
        backend = ReferenceEmbedder(dimension=8, seed=1)
        responses = self._serve(
            backend,
            "embedder",
            [canonical_encode({"id": 6, "method": "embed_text", "params": {}})],
        )
        assert responses[0]["error"]["code"] == "bad_request"

    def test_invalid_json_answered_with_null_id(self):
        backend = ReferenceEmbedder(dimension=8, seed=1)
        reader = io.StringIO("this is not json\n")
        writer = io.StringIO()
        serve_backend(backend, "embedder", reader, writer)
        response = json.loads(writer.getvalue())
        assert response["id"] is None
        assert response["error"]["code"] == "bad_request"


class TestGoldenTranscripts:
    @pytest.mark.parametrize("kind", ["classifier", "embedder", "generator"])
    def test_server_replay_byte_identical(self, kind):
        recorder = load_recorder()
        requests, expected_responses = read_transcript(kind)
        reader = io.StringIO("".join(line + "\n" for line in requests))
        writer = io.StringIO()
        serve_backend(recorder.build_backend(kind), kind, reader, writer)
        assert writer.getvalue().splitlines() == expected_responses

    @pytest.mark.parametrize("kind", ["classifier", "embedder", "generator"])
    def test_client_requests_byte_identical_against_mock_endpoint(self, kind):
        recorder = load_recorder()
        requests, responses = read_transcript(kind)
        writer = io.StringIO()
        client = WireClient(ScriptedReader(responses), writer)
        client.hello(timeout=None)
        for method, params in recorder.session_requests(kind)[1:]:
            client.request(method, params)
        assert writer.getvalue().splitlines() == requests

    def test_transcripts_are_fresh(self):
        recorder = load_recorder()
        for kind in ("classifier", "embedder", "generator"):
            requests, responses = read_transcript(kind)
            regenerated = recorder.record_session(kind)
            got_requests = [e["line"] for e in regenerated if e["dir"] == "request"]
            got_responses = [e["line"] for e in regenerated if e["dir"] == "response"]
            assert got_requests == requests
            assert got_responses == responses


class TestClientCorrelation:
    def test_out_of_order_responses_recorrelated(self):
        hello_result = {
            "protocol": 1,
            "kind": "embedder",
            "pipelining": 1,
            "capabilities": {"dimension": 4, "modalities": ["text", "image"]},
        }
        vec = floats_to_b64(np.array([1.0, 0.0, 0.0, 0.0]))
        lines = [
            canonical_encode({"id": 1, "result": hello_result}),
            # id 3 arrives before id 2
            canonical_encode({"id": 3, "result": {"dimension": 4, "vector_b64": vec}}),
            canonical_encode({"id": 2, "result": {"dimension": 4, "vector_b64": vec}}),
        ]
        client = WireClient(ScriptedReader(lines), io.StringIO())
        client.hello(timeout=None)
        first = client.request("embed_text", {"tokens": ["a"]})
        second = client.request("embed_text", {"tokens": ["b"]})
        assert first["vector_b64"] == second["vector_b64"] == vec

    def test_error_response_raises_backend_error(self):
        lines = [
            canonical_encode({"id": 1, "error": {"code": "backend_error", "message": "boom"}})
        ]
        client = WireClient(ScriptedReader(lines), io.StringIO())
        with pytest.raises(BackendError, match="boom"):
            client.request("classify", {"tokens": []})

    def test_eof_raises_unavailable(self):
        client = WireClient(ScriptedReader([]), io.StringIO())
        with pytest.raises(BackendUnavailableError):
            client.request("classify", {"tokens": ["a"]})

    def test_garbage_line_raises_protocol_error(self):
        client = WireClient(io.StringIO("not json\n"), io.StringIO())
        with pytest.raises(WireProtocolError):
            client.request("classify", {"tokens": ["a"]})


@pytest.fixture(scope="module")
def classifier_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("wire") / "classifier.json"
    path.write_text(
        json.dumps(
            {
                "lexicons": {"humor": ["goofy", "clown"], "roman": ["tender", "loving"]},
                "head_count": 2,
                "layer_count": 2,
                "star": [1, 1],
                "seed": 5,
            }
        ),
        encoding="utf-8",
    )
    return path


class TestSubprocessBackends:
    def test_proc_classifier_matches_in_process(self, classifier_config):
        descriptor = f"proc:{sys.executable} -m styleaug serve ref:classifier:config={classifier_config}"
        wire = connect(descriptor, expect_kind="classifier")
        local = ReferenceClassifier(
            {"humor": ["goofy", "clown"], "roman": ["tender", "loving"]},
            head_count=2,
            layer_count=2,
            star=(1, 1),
            seed=5,
        )
        try:
            tokens = ["a", "goofy", "dog"]
            assert wire.capabilities.labels == ("humor", "roman")
            assert wire.classify(tokens) == pytest.approx(local.classify(tokens))
            wire_profile = wire.attention(tokens)
            assert np.array_equal(wire_profile.weights, local.attention(tokens).weights)
        finally:
            wire.close()

    def test_proc_embedder_round_trip_exact(self):
        descriptor = f"proc:{sys.executable} -m styleaug serve ref:embedder:dim=16,seed=9"
        wire = connect(descriptor, expect_kind="embedder", expected_dimension=16)
        local = ReferenceEmbedder(dimension=16, seed=9)
        try:
            got = wire.embed_text(["dog", "park"]).values
            assert np.array_equal(got, local.embed_text(["dog", "park"]).values)
            image = ImageRef("i1", "tags:dog,park")
            assert np.array_equal(
                wire.embed_image(image).values, local.embed_image(image).values
            )
        finally:
            wire.close()

    def test_proc_generator_and_finetune(self):
        descriptor = f"proc:{sys.executable} -m styleaug serve ref:generator:seed=2"
        wire = connect(descriptor, expect_kind="generator")
        try:
            prompt = assemble_prompt(["like", "a", "boss"], ["a", "man", "rides", "a", "bike"])
            assert wire.generate(prompt, 7) == ["a", "man", "rides", "a", "bike", "like", "a", "boss"]
            from styleaug.data import Caption
            from styleaug.generator import FineTunePair

            ack = wire.finetune(
                [FineTunePair(prompt=prompt, target=Caption.from_raw("a man rides a bike like a boss"))]
            )
            assert ack["items"] == 1
        finally:
            wire.close()

    def test_dead_command_is_unavailable(self):
        with pytest.raises((BackendUnavailableError, WireProtocolError)):
            backend = connect(f"proc:{sys.executable} -c 'import sys; sys.exit(3)'")
            backend.close()

    def test_handshake_timeout(self):
        client = WireClient.spawn([sys.executable, "-c", "import time; time.sleep(30)"])
        try:
            with pytest.raises(BackendUnavailableError, match="no response"):
                client.hello(timeout=0.4)
        finally:
            client.close()


class TestTcpBackend:
    def test_tcp_descriptor_round_trip(self):
        import socket
        import threading

        server = socket.create_server(("127.0.0.1", 0))
        port = server.getsockname()[1]

        def serve_one():
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8")
                writer = conn.makefile("w", encoding="utf-8")
                serve_backend(ReferenceEmbedder(dimension=8, seed=2), "embedder", reader, writer)

        thread = threading.Thread(target=serve_one, daemon=True)
        thread.start()
        backend = connect(f"tcp:127.0.0.1:{port}", expect_kind="embedder", expected_dimension=8)
        try:
            local = ReferenceEmbedder(dimension=8, seed=2)
            assert np.array_equal(
                backend.embed_text(["dog"]).values, local.embed_text(["dog"]).values
            )
        finally:
            backend.close()
            server.close()
