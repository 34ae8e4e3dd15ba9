import json
import subprocess
import sys

import numpy as np
import pytest

from styleaug.backends.connect import connect
from styleaug.backends.reference import (
    ReferenceClassifier,
    ReferenceEmbedder,
    ReferenceGenerator,
)
from styleaug.data import ImageRef
from styleaug.errors import CapabilityMismatchError
from styleaug.extractor import ExtractorConfig, HeadLayerId, select_head_layer
from styleaug.generator import assemble_prompt
from styleaug.retriever import cosine_similarity
from tests.conftest import LEXICONS, STAR, make_sample


class TestReferenceClassifier:
    def test_lexicon_hits_win(self, reference_classifier):
        probs = reference_classifier.classify(["a", "goofy", "clown", "dog"])
        assert max(probs, key=probs.get) == "humor"
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)

    def test_star_attention_dominates_on_lexicon_token(self, reference_classifier):
        tokens = ["a", "dog", "with", "tender", "eyes"]
        profile = reference_classifier.attention(tokens)
        row = profile.weights_at(STAR)
        lex = tokens.index("tender")
        others = [row[i] for i in range(len(tokens)) if i != lex]
        assert row[lex] > max(others) * 10

    def test_rows_normalized_everywhere(self, reference_classifier):
        profile = reference_classifier.attention(["one", "two", "three"])
        sums = profile.weights.sum(axis=2)
        assert np.allclose(sums, 1.0, atol=1e-9)

    def test_selection_lands_on_star(self, six_caption_corpus, reference_classifier):
        chosen = select_head_layer(six_caption_corpus, reference_classifier, ExtractorConfig())
        assert chosen == STAR

    def test_empty_lexicon_rejected(self):
        with pytest.raises(ValueError):
            ReferenceClassifier({"humor": []})

    def test_overlapping_lexicons_rejected(self):
        with pytest.raises(ValueError):
            ReferenceClassifier({"a": ["word"], "b": ["word"]})

    def test_attention_deterministic_per_caption(self, reference_classifier):
        a = reference_classifier.attention(["a", "goofy", "dog"])
        b = reference_classifier.attention(["a", "goofy", "dog"])
        assert np.array_equal(a.weights, b.weights)
        c = reference_classifier.attention(["a", "goofy", "cat"])
        assert not np.array_equal(a.weights, c.weights)


class TestReferenceEmbedder:
    def test_identical_token_lists_cosine_one(self, reference_embedder):
        a = reference_embedder.embed_text(["dog", "park"])
        b = reference_embedder.embed_text(["dog", "park"])
        assert cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_vocabulary_low_cosine(self):
        # At the default 768 dimensions every one of 1000 seeded disjoint
        # pairs stays below 0.2; at 64 dimensions the spread is wider and the
        # bound holds in the mean.
        rng = np.random.default_rng(123)
        for dimension, check in ((64, "mean"), (768, "all")):
            emb = ReferenceEmbedder(dimension=dimension, seed=9)
            sims = []
            for i in range(1000):
                na, nb = rng.integers(3, 11, size=2)
                left = [f"a{i}_{j}" for j in range(na)]
                right = [f"b{i}_{j}" for j in range(nb)]
                sims.append(abs(cosine_similarity(emb.embed_text(left), emb.embed_text(right))))
            if check == "all":
                assert max(sims) < 0.2
            else:
                assert float(np.mean(sims)) < 0.2

    def test_shared_vocabulary_raises_cosine(self, reference_embedder):
        base = ["a", "dog", "runs", "in", "the", "park"]
        near = ["a", "dog", "sits", "in", "the", "park"]
        far = ["p", "q", "r", "s", "t", "u"]
        sim_near = cosine_similarity(
            reference_embedder.embed_text(base), reference_embedder.embed_text(near)
        )
        sim_far = cosine_similarity(
            reference_embedder.embed_text(base), reference_embedder.embed_text(far)
        )
        assert sim_near > 0.6 > sim_far

    def test_image_tags_share_text_space(self, reference_embedder):
        image = ImageRef(id="x", uri="tags:dog,park")
        text = reference_embedder.embed_text(["dog", "park"])
        assert cosine_similarity(reference_embedder.embed_image(image), text) == pytest.approx(
            1.0, abs=1e-12
        )

    def test_untagged_image_falls_back_to_id_hash(self, reference_embedder):
        a = reference_embedder.embed_image(ImageRef(id="img9", uri="file:///img9.jpg"))
        b = reference_embedder.embed_image(ImageRef(id="img9", uri="file:///elsewhere.jpg"))
        assert cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_cross_process_determinism(self):
        script = (
            "from styleaug.backends.reference import ReferenceEmbedder;"
            "import json;"
            "e = ReferenceEmbedder(dimension=32, seed=5);"
            "print(json.dumps(e.embed_text(['dog','park']).values.tolist()))"
        )
        out = subprocess.run(
            [sys.executable, "-c", script], capture_output=True, text=True, check=True
        )
        child = np.array(json.loads(out.stdout))
        local = ReferenceEmbedder(dimension=32, seed=5).embed_text(["dog", "park"]).values
        assert np.array_equal(child, local)

    def test_dimension_floor(self):
        with pytest.raises(ValueError):
            ReferenceEmbedder(dimension=1)


class TestReferenceGenerator:
    def test_append_rule(self, reference_generator):
        prompt = assemble_prompt(["like", "a", "boss"], ["a", "man", "rides", "a", "bike"])
        assert reference_generator.generate(prompt, seed=0) == [
            "a", "man", "rides", "a", "bike", "like", "a", "boss",
        ]

    def test_deterministic(self, reference_generator):
        prompt = assemble_prompt(["goofy"], ["a", "dog", "runs"])
        assert reference_generator.generate(prompt, 1) == reference_generator.generate(prompt, 1)

    def test_anchor_replacement_keeps_80_percent(self):
        gen = ReferenceGenerator(anchor_lexicon=["nice"])
        prompt = assemble_prompt(["hilarious"], ["a", "nice", "dog", "runs", "fast"])
        out = gen.generate(prompt, 0)
        assert out == ["a", "hilarious", "dog", "runs", "fast"]
        kept = sum(1 for tok in ["a", "nice", "dog", "runs", "fast"] if tok in out)
        assert kept / 5 >= 0.8

    def test_short_content_never_replaced(self):
        gen = ReferenceGenerator(anchor_lexicon=["nice"])
        prompt = assemble_prompt(["wacky"], ["nice", "dog"])
        assert gen.generate(prompt, 0) == ["nice", "dog", "wacky"]

    def test_contract_sweep_all_phrase_tokens_present(self, reference_generator):
        rng = np.random.default_rng(0)
        vocab = [f"w{i}" for i in range(30)]
        for _ in range(100):
            phrase = list(rng.choice(vocab, size=rng.integers(1, 4), replace=False))
            content = list(rng.choice(vocab, size=rng.integers(1, 8), replace=False))
            out = reference_generator.generate(assemble_prompt(phrase, content), 3)
            assert all(tok in out for tok in phrase)
            kept = sum(1 for tok in content if tok in out)
            assert kept / len(content) >= 0.8


class TestConnect:
    def test_ref_descriptors(self, tmp_path):
        config = tmp_path / "classifier.json"
        config.write_text(
            json.dumps(
                {"lexicons": LEXICONS, "head_count": 3, "layer_count": 4, "star": [1, 2]}
            ),
            encoding="utf-8",
        )
        classifier = connect(f"ref:classifier:config={config}", expect_kind="classifier")
        assert classifier.capabilities.labels == ("humor", "roman")
        embedder = connect("ref:embedder:dim=32,seed=3", expect_kind="embedder")
        assert embedder.capabilities.dimension == 32
        generator = connect("ref:generator:seed=3", expect_kind="generator")
        assert generator.capabilities.deterministic

    def test_kind_mismatch(self):
        with pytest.raises(CapabilityMismatchError):
            connect("ref:embedder:dim=8", expect_kind="classifier")

    def test_dimension_mismatch_fatal(self):
        with pytest.raises(CapabilityMismatchError, match="dimension"):
            connect("ref:embedder:dim=512", expect_kind="embedder", expected_dimension=768)

    def test_label_mismatch_fatal(self, tmp_path):
        config = tmp_path / "classifier.json"
        config.write_text(json.dumps({"lexicons": {"humor": ["goofy"]}}), encoding="utf-8")
        with pytest.raises(CapabilityMismatchError, match="labels"):
            connect(
                f"ref:classifier:config={config}",
                expect_kind="classifier",
                expected_labels=("humor", "roman"),
            )

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            connect("carrier-pigeon:coop", expect_kind="classifier")
