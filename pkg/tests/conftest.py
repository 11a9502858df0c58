import functools

import numpy as np
import pytest

from nsamg.problems import ProblemSpec, generate, prepare
from nsamg.report import level0_builders


@functools.lru_cache(maxsize=None)
def system(disc="upwind_fv", n=8, tau=1.0):
    return prepare(generate(ProblemSpec(disc=disc, n=n, tau=tau)))


@functools.lru_cache(maxsize=None)
def builders(disc="upwind_fv", n=8):
    """Dense level-0 interpolation and restriction candidates."""
    return level0_builders(system(disc, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit_system(n, seed, cond=50.0):
    """Dense nonsymmetric matrix with sigma_max = 1 and prescribed conditioning."""
    r = np.random.default_rng(seed)
    U, _ = np.linalg.qr(r.standard_normal((n, n)))
    V, _ = np.linalg.qr(r.standard_normal((n, n)))
    s = np.geomspace(1.0 / cond, 1.0, n)
    return U @ np.diag(s) @ V.T
