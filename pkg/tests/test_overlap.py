import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsarray.beamsplitter import BeamSplitterParams, conditional_operator
from bsarray.errors import ZeroProbabilityError
from bsarray.fock import (
    DensityMatrix,
    coherent_state,
    fidelity,
    fock_state,
    make_state,
    ray_fidelity,
)
from bsarray.overlap import (
    MeasurementScheme,
    OutcomeCounts,
    joint_probability,
    measure_overlap,
    measured_state,
    measurement_fidelity,
    measurement_fidelity_closed_form,
    measurement_operator,
    overlap_alphas,
    plan_measurement,
    sample_outcomes,
    scheme_from_roots,
    subtraction_operator,
)
from bsarray.synthesis import plan_synthesis, run_generation, state_from_roots

from conftest import random_density, random_params, random_state

HALF = BeamSplitterParams(2 ** -0.5, 2 ** -0.5)
TILTED = BeamSplitterParams.from_transmissivity(0.7, 0.5, -1.2)


def test_alpha_examples():
    assert overlap_alphas([0], HALF) == [0]
    assert overlap_alphas([0, 0, 0], TILTED) == [0, 0, 0]
    assert overlap_alphas([-1], HALF) == [pytest.approx(-1)]
    assert overlap_alphas([-1], HALF, paper_literal=True) == [pytest.approx(-(2 ** -0.5))]
    with pytest.raises(ValueError):
        overlap_alphas([1], BeamSplitterParams(0, 1))


def test_literal_alphas_miss_the_target():
    # with |T|^(2l-1) weights Y^dag|0> is not the superposition (|0>+|1>)/sqrt2
    literal = scheme_from_roots([-1], HALF, paper_literal=True)
    assert literal.constructor_fidelity == pytest.approx(0.9714, abs=1e-4)
    assert scheme_from_roots([-1], HALF).constructor_fidelity == pytest.approx(1, abs=1e-14)


def test_literal_scheme_still_estimates_its_own_state():
    literal = scheme_from_roots([-1], HALF, paper_literal=True)
    phi = measured_state(literal, 30)[0]
    rho = DensityMatrix.from_pure(phi)
    assert measure_overlap(rho, literal, 30) == pytest.approx(1, abs=1e-8)


def test_single_photon_operator():
    scheme = plan_measurement(fock_state(1), TILTED)
    c = 6
    Y = measurement_operator(scheme, c).elements
    T, R = TILTED.T, TILTED.R
    expect = -np.conj(R) * np.diag(T ** np.arange(c + 1)) @ np.diag(np.sqrt(np.arange(1, c + 1)), 1)
    assert np.abs(Y - expect).max() < 1e-12
    out = measurement_operator(scheme, c) @ fock_state(1, c)
    assert np.allclose(out.amplitudes, -np.conj(R) * fock_state(0, c).amplitudes, atol=1e-12)
    assert ray_fidelity(measured_state(scheme, c)[0], fock_state(1, c)) == pytest.approx(1, abs=1e-10)


def test_stage_operator_matches_beam_splitter(rng):
    for _ in range(5):
        params = random_params(rng)
        alpha = complex(*rng.normal(scale=0.5, size=2))
        d = int(rng.integers(1, 3))
        Y = subtraction_operator(params, alpha, d, 60).resized(8).elements
        K = conditional_operator(coherent_state(alpha, 40), fock_state(d, 40), params, 60).resized(8).elements
        assert np.abs(Y - K).max() < 1e-10


def test_joint_probability_examples():
    scheme = plan_measurement(fock_state(1), TILTED)
    vac = DensityMatrix.from_pure(fock_state(0, 3))
    one = DensityMatrix.from_pure(fock_state(1, 3))
    assert joint_probability(vac, scheme) == 0
    assert joint_probability(one, scheme) == pytest.approx(abs(TILTED.R) ** 2, rel=1e-12)
    assert measurement_fidelity(scheme) == pytest.approx(abs(TILTED.R) ** 2, rel=1e-12)


def test_state_and_operator_routes_agree(rng):
    for _ in range(6):
        params = random_params(rng)
        scheme = plan_measurement(random_state(rng, int(rng.integers(1, 4))), params)
        rho = random_density(rng, 5, 3)
        a = joint_probability(rho, scheme, method="state")
        b = joint_probability(rho, scheme, method="operator")
        assert 0 <= a <= 1
        assert a == pytest.approx(b, abs=1e-10)
    with pytest.raises(ValueError):
        joint_probability(rho, scheme, method="trace")


def test_vacuum_target():
    scheme = plan_measurement(fock_state(0, 2), HALF)
    assert scheme.alphas == () and scheme.pattern == (0,)
    assert measurement_fidelity(scheme) == 1
    assert measurement_fidelity_closed_form(scheme) == 1
    rho = DensityMatrix.from_diagonal([0.3, 0.7])
    assert measure_overlap(rho, scheme) == pytest.approx(0.3)


def test_overlap_examples():
    scheme = plan_measurement(fock_state(1), HALF)
    assert measure_overlap(DensityMatrix.from_pure(fock_state(0, 2)), scheme) == 0
    assert measure_overlap(DensityMatrix.from_diagonal([0.6, 0.4]), scheme) == pytest.approx(0.4, abs=1e-12)
    target = make_state([1, 1], normalize=True)
    sup = plan_measurement(target, HALF)
    assert measure_overlap(DensityMatrix.from_pure(target), sup) == pytest.approx(1, abs=1e-10)


def test_estimator_matches_direct_fidelity(rng):
    for i in range(40):
        params = random_params(rng, complex_phases=bool(i % 2))
        target = random_state(rng, int(rng.integers(1, 5)))
        rho = random_density(rng, 6, int(rng.integers(1, 4)))
        scheme = plan_measurement(target, params)
        assert measure_overlap(rho, scheme) == pytest.approx(fidelity(target, rho), abs=1e-8)


def test_self_coincidence(rng):
    for _ in range(20):
        params = random_params(rng)
        target = random_state(rng, int(rng.integers(1, 5)))
        scheme = plan_measurement(target, params)
        rho = DensityMatrix.from_pure(target)
        assert joint_probability(rho, scheme) == pytest.approx(measurement_fidelity(scheme), abs=1e-10)


def test_closed_form_fidelity(rng):
    for _ in range(30):
        params = random_params(rng)
        scheme = plan_measurement(random_state(rng, int(rng.integers(1, 6))), params)
        assert measurement_fidelity_closed_form(scheme) == pytest.approx(measurement_fidelity(scheme), rel=1e-8)


@pytest.mark.parametrize("roots", [[0.4j] * 2 + [1 - 0.5j], [0.3] * 3, [-0.6 + 0.2j] * 2 + [0.1] * 2])
def test_grouped_scheme(roots):
    target = state_from_roots(roots, len(roots) + 2)
    grouped = plan_measurement(target, TILTED, group_equal_roots=True)
    assert len(grouped.multiplicities) < len(roots)
    assert grouped.constructor_fidelity >= 1 - 1e-8
    assert measurement_fidelity_closed_form(grouped) == pytest.approx(measurement_fidelity(grouped), rel=1e-8)
    rho = random_density(np.random.default_rng(3), len(roots) + 2, 2)
    assert measure_overlap(rho, grouped) == pytest.approx(fidelity(target, rho), abs=1e-8)


def test_measurement_fidelity_equals_synthesis_probability(rng):
    for group in (False, True):
        for _ in range(10):
            params = random_params(rng)
            roots = list(rng.normal(size=3) + 1j * rng.normal(size=3))
            roots = roots + roots[:1]
            target = state_from_roots(roots)
            _, prob, _ = run_generation(plan_synthesis(target, params, group), 20)
            fid = measurement_fidelity(plan_measurement(target, params, group))
            assert fid == pytest.approx(prob, rel=1e-8)


def test_offset_scheme_measures_displaced_target():
    c = 0.3 - 0.6j
    scheme = scheme_from_roots([0.5, -0.2j], TILTED, offset=c)
    plain = scheme_from_roots([0.5, -0.2j], TILTED)
    target = measured_state(scheme, 30)[0]
    rho = random_density(np.random.default_rng(5), 12, 3)
    assert measure_overlap(rho, scheme, 30) == pytest.approx(fidelity(target, rho.resized(30)), abs=1e-8)
    assert measurement_fidelity(scheme, 30) == pytest.approx(measurement_fidelity(plain), rel=1e-10)


def test_scheme_validation():
    with pytest.raises(ValueError):
        MeasurementScheme((0j,), (1, 1), HALF, (0j, 0j))
    with pytest.raises(ValueError):
        MeasurementScheme((0j,), (2,), HALF, (0j,))
    with pytest.raises(ValueError):
        OutcomeCounts(10, 11, 0)
    with pytest.raises(ValueError):
        sample_outcomes(DensityMatrix.from_diagonal([1.0]), plan_measurement(fock_state(1), HALF), 0, 1)


def test_vanishing_fidelity_raises():
    scheme = scheme_from_roots([40.0, -40.0, 40j, -40j], HALF, verify=False)
    with pytest.raises(ZeroProbabilityError):
        measure_overlap(DensityMatrix.from_diagonal([1.0]), scheme)


def test_sampling_vacuum_gives_no_coincidences():
    scheme = plan_measurement(fock_state(1), HALF)
    counts = sample_outcomes(DensityMatrix.from_pure(fock_state(0, 3)), scheme, 5000, 11)
    assert counts.coincidence_count == 0 and counts.path_probability == 0


def test_sampling_is_deterministic_and_worker_independent():
    target = make_state([1, 0.5j, -0.3], normalize=True)
    scheme = plan_measurement(target, TILTED)
    rho = random_density(np.random.default_rng(8), 4, 2)
    a = sample_outcomes(rho, scheme, 150_000, 42)
    b = sample_outcomes(rho, scheme, 150_000, 42, workers=4)
    assert a == b
    assert sample_outcomes(rho, scheme, 150_000, 43) != a


def test_sampling_frequency_within_binomial_bounds(rng):
    shots = 100_000
    for seed in range(3):
        params = random_params(rng)
        scheme = plan_measurement(random_state(rng, int(rng.integers(1, 4))), params)
        rho = random_density(rng, 5, 2)
        p = joint_probability(rho, scheme)
        counts = sample_outcomes(rho, scheme, shots, seed)
        assert counts.path_probability == pytest.approx(p, rel=1e-8, abs=1e-14)
        assert abs(counts.frequency - p) <= 4 * math.sqrt(p * (1 - p) / shots)


def test_histograms_are_consistent():
    scheme = plan_measurement(make_state([0.6, 0.8]), HALF)
    rho = DensityMatrix.from_diagonal([0.5, 0.3, 0.2])
    counts = sample_outcomes(rho, scheme, 20_000, 3)
    first, last = counts.histograms
    assert sum(first) == counts.shots
    assert sum(last) == first[scheme.pattern[0]]
    assert last[0] == counts.coincidence_count


@settings(deadline=None, max_examples=30)
@given(st.integers(1, 4), st.integers(0, 2 ** 31), st.booleans())
def test_estimator_property(photons, seed, phases):
    rng = np.random.default_rng(seed)
    params = random_params(rng, complex_phases=phases)
    target = random_state(rng, photons)
    rho = random_density(rng, 6, 2)
    estimate = measure_overlap(rho, plan_measurement(target, params))
    assert estimate == pytest.approx(fidelity(target, rho), abs=1e-8)
