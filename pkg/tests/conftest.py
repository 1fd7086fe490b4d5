import numpy as np
import pytest
import torch

from tastas.mixgen import ToyCorpus, build_split_manifests
from tastas.model import ModelDims

torch.set_num_threads(1)


TINY_DIMS = ModelDims(
    n_basis=16, kernel=4, feature=8, chunk=6, hidden=8, embed_dim=8, idnet_hidden=8
)


@pytest.fixture(scope="session")
def tiny_corpus():
    return ToyCorpus(n_speakers=6, utt_per_speaker=4, duration_s=1.0, seed=5)


@pytest.fixture(scope="session")
def tiny_manifests(tiny_corpus):
    return build_split_manifests(
        tiny_corpus, s=2, counts={"train": 8, "valid": 4, "test": 4}, seed=5
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
