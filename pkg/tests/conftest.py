import pytest

from styleaug.backends.reference import (
    ReferenceClassifier,
    ReferenceEmbedder,
    ReferenceGenerator,
)
from styleaug.data import Caption, ImageRef, StylizedSample
from styleaug.errors import BackendUnavailableError
from styleaug.extractor import HeadLayerId


class FlakyGenerator:
    """Wraps a generator backend and loses the connection after N calls."""

    def __init__(self, inner, fail_after: int):
        self.inner = inner
        self.capabilities = inner.capabilities
        self.remaining = fail_after

    def generate(self, prompt, seed):
        if self.remaining <= 0:
            raise BackendUnavailableError("connection torn down (injected)")
        self.remaining -= 1
        return self.inner.generate(prompt, seed)

    def finetune(self, pairs):
        return self.inner.finetune(pairs)

    def close(self):
        pass

HUMOR_LEXICON = [
    "hilarious",
    "goofy",
    "clown",
    "silly",
    "wacky",
    "prank",
    "mischief",
    "joking",
    "comedian",
    "absurd",
]

ROMAN_LEXICON = [
    "tender",
    "loving",
    "romance",
    "dreamy",
    "sweetheart",
    "cherished",
    "devotion",
    "beloved",
    "adoring",
    "longing",
]

LEXICONS = {"humor": HUMOR_LEXICON, "roman": ROMAN_LEXICON}

STAR = HeadLayerId(head=1, layer=2)

# Six stylized captions, three per style, each with exactly three own-lexicon
# words so a 0.25 extraction removes the full style vocabulary at the star
# head/layer.
SIX_CAPTIONS = [
    ("s1", "a goofy clown dog runs in the park causing silly trouble", "humor"),
    ("s2", "the wacky boy tells a hilarious prank near the old barn", "humor"),
    ("s3", "an absurd comedian cat naps on the porch full of mischief", "humor"),
    ("s4", "a tender loving couple walks the beach at their cherished sunset", "roman"),
    ("s5", "the dreamy girl holds her beloved flowers with quiet devotion", "roman"),
    ("s6", "an adoring sweetheart waits by the lake full of longing", "roman"),
]


def make_sample(image_id: str, text: str, style: str) -> StylizedSample:
    # Image tags mirror the caption's opening words so cross-modal retrieval
    # has signal, the way a shared embedding space would.
    caption = Caption.from_raw(text)
    tags = ",".join(caption.tokens[:6])
    return StylizedSample(
        image=ImageRef(id=image_id, uri=f"tags:{tags}"),
        caption=caption,
        style=style,
    )


@pytest.fixture
def six_caption_corpus():
    return [make_sample(*row) for row in SIX_CAPTIONS]


@pytest.fixture
def reference_classifier():
    return ReferenceClassifier(LEXICONS, head_count=3, layer_count=4, star=STAR, seed=11)


@pytest.fixture
def reference_embedder():
    return ReferenceEmbedder(dimension=64, seed=11)


@pytest.fixture
def reference_generator():
    return ReferenceGenerator(seed=11)
