import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from bsarray.errors import NullStateError
from bsarray.fock import (
    DensityMatrix,
    FockVector,
    ModeOperator,
    coherent_state,
    displace_vector,
    displacement_operator,
    fidelity,
    fock_state,
    ladder_and_attenuation,
    make_state,
    number_operator,
    overlap,
    ray_fidelity,
)

small = st.floats(-1.5, 1.5, allow_nan=False)
amplitude = st.builds(complex, small, small)


def test_make_state_examples():
    vac = make_state([1, 0])
    assert vac.cutoff == 1
    assert np.allclose(vac.amplitudes, [1, 0])
    assert np.allclose(make_state([0, 1]).amplitudes, [0, 1])
    assert np.allclose(make_state([1, 1], normalize=True).amplitudes, [2 ** -0.5] * 2, atol=1e-15)


def test_make_state_rejects_null_and_empty():
    with pytest.raises(NullStateError, match="null state"):
        make_state([0, 0, 0], normalize=True)
    with pytest.raises(ValueError):
        make_state([])


@given(st.lists(amplitude, min_size=1, max_size=8).filter(lambda v: any(abs(z) > 1e-3 for z in v)))
def test_normalized_round_trip(values):
    v = make_state(values, normalize=True)
    assert abs(v.norm() - 1) < 1e-12
    again = make_state(v.amplitudes)
    assert np.array_equal(again.amplitudes, v.amplitudes)


def test_amplitudes_are_read_only():
    v = make_state([1, 2])
    with pytest.raises(ValueError):
        v.amplitudes[0] = 3


def test_coherent_state_examples():
    assert np.array_equal(coherent_state(0, 5).amplitudes, fock_state(0, 5).amplitudes)
    c = coherent_state(1.0, 20)
    assert c.amplitudes[0] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert c.amplitudes[1] == pytest.approx(math.exp(-0.5), abs=1e-12)


@given(amplitude, st.integers(0, 30))
def test_coherent_amplitudes_match_direct_formula(alpha, cutoff):
    c = coherent_state(alpha, cutoff)
    direct = [math.exp(-abs(alpha) ** 2 / 2) * alpha ** n / math.sqrt(math.factorial(n)) for n in range(cutoff + 1)]
    assert np.allclose(c.amplitudes, direct, atol=1e-13)
    assert c.leakage == pytest.approx(1 - np.sum(np.abs(direct) ** 2), abs=1e-13)


def test_large_coherent_amplitude_does_not_overflow():
    c = coherent_state(30.0, 1400)
    assert np.all(np.isfinite(c.amplitudes))
    assert c.norm() == pytest.approx(1.0, abs=1e-10)


def test_displacement_examples():
    assert np.array_equal(displacement_operator(0, 4).elements, np.eye(5))
    d = displacement_operator(1.0, 20)
    assert d.elements[0, 0] == pytest.approx(math.exp(-0.5), abs=1e-12)
    # the product needs room above the lower half for the intermediate state
    prod = displacement_operator(1.0, 40).elements @ displacement_operator(-1.0, 40).elements
    assert np.allclose(prod[:11, :11], np.eye(11), atol=1e-8)


def test_cropped_displacement_product_degrades_near_the_edge():
    prod = displacement_operator(1.0, 20).elements @ displacement_operator(-1.0, 20).elements
    err = [np.abs(prod[: n + 1, : n + 1] - np.eye(n + 1)).max() for n in range(11)]
    assert max(err[:6]) < 1e-8
    assert err[10] > 1e-5


@settings(deadline=None, max_examples=40)
@given(amplitude, st.integers(0, 25))
def test_displacement_column_is_coherent_state(alpha, cutoff):
    d = displacement_operator(alpha, cutoff)
    assert np.allclose(d.elements[:, 0], coherent_state(alpha, cutoff).amplitudes, atol=1e-10)


@settings(deadline=None, max_examples=40)
@given(amplitude, amplitude)
def test_displacement_composition(alpha, beta):
    # D(a) D(b) = exp((a b* - a* b)/2) D(a + b)
    cutoff = 12
    lhs = displacement_operator(alpha, 60).elements @ displacement_operator(beta, 60).elements
    phase = np.exp((alpha * np.conj(beta) - np.conj(alpha) * beta) / 2)
    rhs = phase * displacement_operator(alpha + beta, cutoff).elements
    assert np.allclose(lhs[:7, :7], rhs[:7, :7], atol=1e-8)


def test_displacement_matches_untruncated_exponential():
    # oracle: exponentiate at a much larger dimension than the guard band uses
    alpha, cutoff = 1.3 - 0.7j, 15
    big = 200
    a = np.diag(np.sqrt(np.arange(1, big + 1)), 1)
    ref = scipy.linalg.expm(alpha * a.T - np.conj(alpha) * a)[: cutoff + 1, : cutoff + 1]
    assert np.allclose(displacement_operator(alpha, cutoff).elements, ref, atol=1e-12)


@settings(deadline=None, max_examples=30)
@given(amplitude, st.integers(0, 6))
def test_displace_vector_agrees_with_matrix(alpha, n):
    work = 80
    v = np.zeros(work + 1, dtype=complex)
    v[n] = 1
    out = displace_vector(v, alpha)[:21]
    assert np.allclose(out, displacement_operator(alpha, 20).elements[:, n], atol=1e-10)


def test_ladder_operators():
    a = ladder_and_attenuation("annihilate", cutoff=4)
    ad = ladder_and_attenuation("create", cutoff=4)
    assert np.allclose((a @ fock_state(1, 4)).amplitudes, fock_state(0, 4).amplitudes)
    n = (ad @ a).elements
    assert np.allclose(n, number_operator(4).elements)
    comm = (a @ ad).elements - n
    assert np.allclose(comm[:4, :4], np.eye(4))
    assert ad.elements[3, 2] == pytest.approx(math.sqrt(3))


def test_attenuation():
    assert np.allclose(ladder_and_attenuation("attenuate", 1.0, 6).elements, np.eye(7))
    with pytest.raises(ValueError, match="singular attenuation"):
        ladder_and_attenuation("attenuate", 0.0, 3)
    with pytest.raises(ValueError):
        ladder_and_attenuation("squeeze", 1.0, 3)
    gamma, T = 0.8 + 0.4j, 2 ** -0.5
    out = ladder_and_attenuation("attenuate", T, 30) @ coherent_state(gamma, 30)
    assert ray_fidelity(out, coherent_state(T * gamma, 30)) == pytest.approx(1.0, abs=1e-8)


def test_overlap_and_fidelity():
    assert overlap(fock_state(0, 1), fock_state(1, 1)) == 0
    psi = make_state([1, 1j, -0.5], normalize=True)
    assert fidelity(psi, DensityMatrix.from_pure(psi)) == pytest.approx(1.0, abs=1e-12)
    a, b = 0.7 + 0.2j, -0.4 + 0.9j
    expect = np.exp(-(abs(a) ** 2 + abs(b) ** 2) / 2 + np.conj(a) * b)
    assert overlap(coherent_state(a, 40), coherent_state(b, 40)) == pytest.approx(expect, abs=1e-8)


def test_overlap_pads_shorter_vector():
    assert overlap(make_state([1, 0]), make_state([1, 0, 5])) == 1


@given(st.floats(0, 2 * np.pi))
def test_fidelity_ignores_global_phase(phi):
    psi = make_state([0.3, 0.5j, -0.2, 0.1], normalize=True)
    rho = DensityMatrix(np.diag([0.1, 0.2, 0.3, 0.4]) + 0j)
    rotated = FockVector(np.exp(1j * phi) * psi.amplitudes)
    assert fidelity(rotated, rho) == pytest.approx(fidelity(psi, rho), abs=1e-12)


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.array([[0.5, 0.1], [0.2, 0.5]]))
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.2, -0.2]))
    with pytest.raises(ValueError):
        DensityMatrix(np.zeros((2, 2)))
    sub = DensityMatrix(np.diag([0.3, 0.2]))
    assert sub.trace() == pytest.approx(0.5)


def test_mode_operator_algebra():
    a = ladder_and_attenuation("annihilate", cutoff=3)
    assert np.allclose(a.dagger.elements, ladder_and_attenuation("create", cutoff=3).elements)
    assert np.allclose((a * 2).elements, 2 * a.elements)
    assert isinstance(a @ a, ModeOperator)
