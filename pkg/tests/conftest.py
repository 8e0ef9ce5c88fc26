import numpy as np
import pytest

from xscl.corpus import CASIA_LABELS, IEMOCAP_LABELS, SyntheticSpec, assign_folds, generate_synthetic
from xscl.encoder import ModelConfig

# tiny stack: 64 samples -> 4 frames of width 8
TINY_MODEL = ModelConfig(
    conv_layers=((4, 4, 8), (4, 4, 8)),
    d_model=8,
    n_layers=2,
    n_heads=2,
    ffn_dim=16,
    classifier_hidden=16,
    n_classes=4,
    input_samples=64,
    seed=3,
)


def small_corpus(corpus_id, labels, per_label, seed, duration=64, **kw):
    spec = SyntheticSpec(corpus_id, labels, per_label, seed=seed, duration_samples=duration, **kw)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def tiny_model():
    return TINY_MODEL


@pytest.fixture(scope="session")
def small_pair():
    """A 6-label and a 4-label corpus with folds, short enough for the tiny model."""
    a = assign_folds(small_corpus("six", CASIA_LABELS, 10, seed=11, tilt=0.3), 5, seed=1)
    b = assign_folds(small_corpus("four", IEMOCAP_LABELS, 10, seed=12, tilt=-0.3), 5, seed=2)
    return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
