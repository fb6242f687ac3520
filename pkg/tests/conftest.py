import numpy as np
import pytest

from endotree.model import BUILTINS, RtpModel, builtin, checked

BUILTIN_NAMES = sorted(BUILTINS)


def xor_fresh(p_xor=0.5):
    """XOR on {0,1} with probability ``p_xor``, otherwise a fresh fair bit.

    Symmetric; ``P(-)`` is the all-``p_xor/2`` 2x2 matrix, so ``rho = p_xor``
    and ``p_xor = 1/2`` is critical.
    """
    phi = np.zeros((2, 2, 3), dtype=int)
    for a in range(2):
        for b in range(2):
            phi[a, b] = (a ^ b, 0, 1)
    q = (1 - p_xor) / 2
    return RtpModel(("0", "1"), ("xor", "fresh0", "fresh1"), [0.5, 0.5], [p_xor, q, q], phi)


def left_or_fresh(p_left=0.25):
    """Non-symmetric: copy the first input with probability ``p_left``, else a fresh bit."""
    phi = np.zeros((2, 2, 3), dtype=int)
    for a in range(2):
        for b in range(2):
            phi[a, b] = (a, 0, 1)
    q = (1 - p_left) / 2
    return RtpModel(("0", "1"), ("left", "fresh0", "fresh1"), [0.5, 0.5], [p_left, q, q], phi)


@pytest.fixture(params=BUILTIN_NAMES)
def any_builtin(request):
    return checked(builtin(request.param))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
