"""Shared fixtures.

The training tests want a corpus around a megabyte whose byte statistics
sit well below the uniform 8 bits/byte, so a small model has something to
learn quickly.  Downloading text is off the table (tests must run
offline), so we synthesize one: a fixed vocabulary of pseudo-words drawn
with Zipf-like weights, joined into sentence-ish lines.  Every byte is
deterministic in the seed.
"""

import numpy as np
import pytest

CORPUS_SEED = 1317
CORPUS_TARGET_BYTES = 1_000_000


def build_corpus(target_bytes: int = CORPUS_TARGET_BYTES, seed: int = CORPUS_SEED) -> bytes:
    rng = np.random.default_rng(seed)
    letters = list("abcdefghijklmnopqrstuvwxyz")
    words = ["".join(rng.choice(letters, size=int(rng.integers(2, 9)))) for _ in range(320)]
    weights = 1.0 / np.arange(1, len(words) + 1)
    weights /= weights.sum()

    pieces = []
    total = 0
    sentence = 0
    while total < target_bytes:
        count = int(rng.integers(6, 14))
        picked = rng.choice(len(words), size=count, p=weights)
        text = " ".join(words[i] for i in picked)
        text += "\n" if sentence % 5 == 4 else ". "
        sentence += 1
        pieces.append(text)
        total += len(text)
    return "".join(pieces).encode("ascii")[:target_bytes]


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.txt"
    path.write_bytes(build_corpus())
    return path
