import itertools

import numpy as np
import pytest
from scipy.linalg import expm

from qtbias.collision import ModelParams


@pytest.fixture
def operating_point():
    """omega = 10 gamma, gamma = 1 / dt = 1, N = 20, start in |g>."""
    return ModelParams()


def expm_oracle(h, t):
    """exp(-i h t) by scaling and squaring (independent of the eigensolver)."""
    return expm(-1j * t * np.asarray(h, dtype=complex))


def raw_probability(pair, m, psi0):
    """Born probability of a whole outcome string from the untilted pair."""
    psi = np.asarray(psi0, dtype=complex)
    for bit in m:
        psi = (pair.k1 if bit else pair.k0) @ psi
    return float(np.vdot(psi, psi).real)


def all_strings(n):
    return [tuple(m) for m in itertools.product((0, 1), repeat=n)]


def random_psd(rng, scale=1.0):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return scale * (a @ a.conj().T)


def random_density(rng):
    rho = random_psd(rng)
    return rho / np.trace(rho).real
