import numpy as np
import pytest

from ovtracker.core import BoundingBox, Detection


def make_detection(box, conf=0.9, dim=4, label=0, rng=None):
    """Detection with placeholder unit embeddings for geometry-only tests."""
    if rng is None:
        text = np.zeros(dim)
        text[0] = 1.0
        img = text.copy()
        raw = text.copy()
    else:
        text = rng.normal(size=dim)
        text /= np.linalg.norm(text)
        img = rng.normal(size=dim)
        img /= np.linalg.norm(img)
        raw = rng.normal(size=dim)
    return Detection(box=box, confidence=conf, text_embedding=text,
                     image_embedding=img, raw_feature=raw, class_label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_box(rng, extent=100.0):
    return BoundingBox(
        x=float(rng.uniform(0, extent)),
        y=float(rng.uniform(0, extent)),
        w=float(rng.uniform(1.0, extent / 2)),
        h=float(rng.uniform(1.0, extent / 2)),
    )
