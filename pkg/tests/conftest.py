"""Shared test helpers: scripted RNG and small batch builders."""

import numpy as np
import pytest

from xmrt import PairBatch, init_params


class ScriptedRng:
    """Generator stand-in that replays queued draws.

    Lets a test force a specific augmentation branch without hunting
    for a seed: uniform() pops from one queue, integers() from another.
    """

    def __init__(self, uniforms=(), ints=()):
        self._uniforms = list(uniforms)
        self._ints = list(ints)

    def uniform(self):
        return self._uniforms.pop(0)

    def integers(self, low, high):
        value = self._ints.pop(0)
        assert low <= value < high, f"scripted draw {value} outside [{low}, {high})"
        return value


@pytest.fixture
def scripted_rng():
    return ScriptedRng


def random_batch(n, d_audio, d_text, seed):
    rng = np.random.default_rng(seed)
    return PairBatch(rng.standard_normal((n, d_audio)),
                     rng.standard_normal((n, d_text)))


@pytest.fixture
def small_batch():
    return random_batch(4, 6, 5, seed=3)


@pytest.fixture
def small_params():
    return init_params(6, 5, 4, seed=0)


@pytest.fixture
def head_params():
    return init_params(6, 5, 4, n_clusters=3, seed=0)
