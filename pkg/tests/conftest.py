import numpy as np
import pytest

from optomech.fock import FockSpace, fock_ket, ket_to_density


@pytest.fixture
def linear_space():
    return FockSpace(2, 2)


def random_density(rng, dim, rank=None):
    """Ginibre-random density matrix."""
    rank = rank or dim
    x = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


def bell_density(space):
    """(|10> + |01>) / sqrt(2) as a density matrix."""
    psi = fock_ket(space, 1, 0) + fock_ket(space, 0, 1)
    return ket_to_density(psi)
