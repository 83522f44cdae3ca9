import numpy as np
import pytest

from tripletsr.datasets import build_resolution_sets
from tripletsr.synthetic import build_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """8 identities x 4 images, 112x112."""
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(root, n_identities=8, images_per_identity=4, seed=123)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_corpus, tmp_path_factory):
    """Prepared dataset over the tiny corpus at 14/28/112."""
    out = tmp_path_factory.mktemp("dataset")
    return build_resolution_sets(
        tiny_corpus, out, [14, 28, 112], seed=5, test_fraction=0.25
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
