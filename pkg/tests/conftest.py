import numpy as np
import pytest
import torch

from isg.config import DataConfig, SyntheticConfig
from isg.corpus import generate_synthetic_corpus, prepare_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Small deterministic synthetic corpus shared across tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic_corpus(123, 12, SyntheticConfig(), root)
    return root, manifest


@pytest.fixture(scope="session")
def prepared_manifest(corpus_dir, tmp_path_factory):
    root, manifest = corpus_dir
    out = tmp_path_factory.mktemp("prepared")
    prepared = prepare_corpus(manifest, DataConfig(), out / "prepared.jsonl")
    return out / "prepared.jsonl", prepared


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
