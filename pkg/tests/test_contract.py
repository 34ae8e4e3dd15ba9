"""The backend contract suite, run over in-process references and the same
references served across the wire. The neural adapter runs this exact suite in
tests/test_adapter_integration.py when it is installed."""

import json
import sys

import pytest

from styleaug.backends.connect import connect
from styleaug.backends.contract import (
    classifier_violations,
    embedder_violations,
    generator_violations,
)
from styleaug.data import ImageRef
from tests.conftest import LEXICONS

CAPTIONS = [
    ["a", "goofy", "dog", "runs", "in", "the", "park"],
    ["the", "tender", "couple", "walks", "the", "beach"],
    ["one"],
    ["a", "snow-covered", "hill", "at", "dawn"],
]

IMAGES = [
    ImageRef("i1", "tags:dog,park"),
    ImageRef("i2", "tags:beach,sunset"),
    ImageRef("i3", "file:///not-tagged.jpg"),
]

PROMPTS = [
    (["like", "a", "boss"], ["a", "man", "rides", "a", "bike"]),
    (["goofy"], ["a", "dog"]),
]


@pytest.fixture(scope="module")
def classifier_descriptor(tmp_path_factory):
    config = tmp_path_factory.mktemp("contract") / "classifier.json"
    config.write_text(
        json.dumps({"lexicons": LEXICONS, "head_count": 3, "layer_count": 2, "star": [1, 1]}),
        encoding="utf-8",
    )
    return f"ref:classifier:config={config}"


def wire(descriptor: str) -> str:
    return f"proc:{sys.executable} -m styleaug serve {descriptor}"


class TestReferenceContract:
    def test_classifier(self, classifier_descriptor):
        backend = connect(classifier_descriptor, expect_kind="classifier")
        assert classifier_violations(backend, CAPTIONS) == []

    def test_embedder(self):
        backend = connect("ref:embedder:dim=96,seed=4", expect_kind="embedder")
        assert embedder_violations(backend, CAPTIONS, IMAGES) == []

    def test_generator(self):
        backend = connect("ref:generator:seed=4", expect_kind="generator")
        assert generator_violations(backend, PROMPTS) == []


class TestWireContract:
    def test_classifier_over_wire(self, classifier_descriptor):
        backend = connect(wire(classifier_descriptor), expect_kind="classifier")
        try:
            assert classifier_violations(backend, CAPTIONS) == []
        finally:
            backend.close()

    def test_embedder_over_wire(self):
        backend = connect(wire("ref:embedder:dim=96,seed=4"), expect_kind="embedder")
        try:
            assert embedder_violations(backend, CAPTIONS, IMAGES) == []
        finally:
            backend.close()

    def test_generator_over_wire(self):
        backend = connect(wire("ref:generator:seed=4"), expect_kind="generator")
        try:
            assert generator_violations(backend, PROMPTS) == []
        finally:
            backend.close()
