import json
import subprocess
import sys
from pathlib import Path

import pytest

from neural_adapter.fixtures import build_bundle, build_region_features


class WireSession:
    """Drives one serve subprocess with raw protocol lines."""

    def __init__(self, config_path: Path, role: str):
        self.proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "neural_adapter",
                "serve",
                "--config",
                str(config_path),
                "--role",
                role,
            ],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self.next_id = 1

    def send_line(self, line: str) -> str:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        response = self.proc.stdout.readline()
        assert response.endswith("\n"), "response must be one newline-terminated line"
        return response.rstrip("\n")

    def request(self, method: str, params: dict) -> dict:
        req_id = self.next_id
        self.next_id += 1
        line = json.dumps(
            {"id": req_id, "method": method, "params": params},
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=True,
        )
        response = json.loads(self.send_line(line))
        assert response["id"] == req_id
        return response

    def result(self, method: str, params: dict) -> dict:
        response = self.request(method, params)
        assert "error" not in response, response
        return response["result"]

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    config_path = build_bundle(root, dimension=768, seed=0)
    features = [build_region_features(root / f"img{i}.npy", seed=50 + i) for i in range(3)]
    return config_path, features


@pytest.fixture
def classifier_session(bundle):
    session = WireSession(bundle[0], "classifier")
    yield session
    session.close()


@pytest.fixture
def embedder_session(bundle):
    session = WireSession(bundle[0], "embedder")
    yield session
    session.close()


@pytest.fixture
def generator_session(bundle):
    session = WireSession(bundle[0], "generator")
    yield session
    session.close()
