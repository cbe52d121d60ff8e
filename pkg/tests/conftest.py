"""Shared fixtures: bundled corpus/lexicons plus a generated embedding file."""

from pathlib import Path

import numpy as np
import pytest

from mtensemble import data as D
from mtensemble.synthetic import corpus_vocab, random_embeddings, write_embeddings

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def emoint_dir() -> Path:
    return FIXTURES / "emoint"


@pytest.fixture(scope="session")
def lexicon_manifest() -> Path:
    return FIXTURES / "lexicons" / "manifest.tsv"


@pytest.fixture(scope="session")
def fixture_instances(emoint_dir):
    out = []
    for name in ("train", "dev", "test"):
        rows, skipped = D.load_dataset(emoint_dir / f"{name}.tsv", D.EMOINT)
        assert skipped == 0
        out.append(rows)
    return out


@pytest.fixture(scope="session")
def embeddings_file(tmp_path_factory, fixture_instances) -> Path:
    """GloVe-layout vectors for the fixture vocabulary (minus one word, to exercise OOV)."""
    vocab = corpus_vocab([i for part in fixture_instances for i in part])
    vocab = [w for w in vocab if w != "weather"]
    path = tmp_path_factory.mktemp("emb") / "vectors.txt"
    write_embeddings(path, random_embeddings(vocab, seed=0))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(42)
