import numpy as np
import pytest

from dcl.data import CorpusSpec, ManipKind, generate_corpus, load_dataset


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 real + 4 fake videos, 3 frames each, SPLICE_RECT."""
    spec = CorpusSpec(
        n_videos=4, frames_per_video=3, image_size=96,
        manipulation_families=[ManipKind.SPLICE_RECT], seed=7,
    )
    root = tmp_path_factory.mktemp("corpus") / "c"
    generate_corpus(spec, root)
    return spec, root


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    _, root = small_corpus
    return load_dataset(root)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
