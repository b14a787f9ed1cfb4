import pathlib

import numpy as np
import pytest

from acp import build_bank, build_cooc, load_corpus

DATA_DIR = pathlib.Path(__file__).parent / "data"
TOY_CORPUS_PATH = DATA_DIR / "toy_corpus.json"

# Hand-enumerated statistics of the 4-image toy corpus
# (occurrence sets {0,1}, {1}, {0,2}, {2} over hold/ride/wash).
TOY_SETS = [{0, 1}, {1}, {0, 2}, {2}]
TOY_C = np.array(
    [
        [1.0, 0.5, 0.5],
        [0.5, 1.0, 0.0],
        [0.5, 0.0, 1.0],
    ]
)
TOY_C_COMP = np.array(
    [
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 1.0],
        [0.5, 1.0, 0.0],
    ]
)


@pytest.fixture
def toy_corpus():
    return load_corpus(TOY_CORPUS_PATH)


@pytest.fixture
def toy_pair():
    return build_cooc(TOY_SETS, 3)


@pytest.fixture
def toy_bank(toy_corpus):
    return build_bank(toy_corpus)
