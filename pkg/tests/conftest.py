import numpy as np
import pytest

from bsarray.beamsplitter import BeamSplitterParams
from bsarray.fock import DensityMatrix, make_state


def random_params(rng, complex_phases=True, t2_range=(0.3, 0.9)):
    t2 = rng.uniform(*t2_range)
    if complex_phases:
        return BeamSplitterParams.from_transmissivity(t2, rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi, np.pi))
    return BeamSplitterParams.from_transmissivity(t2)


def random_state(rng, photons):
    amps = rng.normal(size=photons + 1) + 1j * rng.normal(size=photons + 1)
    return make_state(amps, normalize=True)


def random_density(rng, cutoff, rank=None):
    rank = cutoff + 1 if rank is None else rank
    a = rng.normal(size=(cutoff + 1, rank)) + 1j * rng.normal(size=(cutoff + 1, rank))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
