"""Overlap measurement ``<psi|rho|psi>`` by conditional photon subtraction.

The signal meets coherent references ``|alpha_k>`` at a chain of identical
beam splitters. Detector ``k`` must register ``d_k`` photons and a final
detector on the signal must register none. The coincidence probability
divided by the largest value it can take gives the overlap.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .beamsplitter import BeamSplitterParams, chain, conditional_operators_by_outcome
from .errors import ZeroProbabilityError
from .fock import (
    DensityMatrix,
    FockVector,
    ModeOperator,
    _resize_matrix,
    annihilation_matrix,
    coherent_leakage,
    coherent_state,
    displaced_attenuate,
    displaced_create,
    displaced_shift,
    displacement_operator,
    materialize,
    ray_fidelity,
)
from .synthesis import (
    _degree_weights,
    _magnitude_key,
    _polynomial_coefficients,
    cluster_roots,
    roots_of_state,
    state_from_roots,
)

CHUNK_SHOTS = 1 << 16
CONSTRUCTOR_TOLERANCE = 1e-8

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeasurementScheme:
    """Reference amplitudes and detection pattern of an overlap measurement.

    ``target_roots`` lists the zeros of the measured state with multiplicity
    in stage order; stage ``k`` subtracts ``multiplicities[k]`` photons.
    ``offset`` pre-displaces the signal by ``-offset`` so that targets of the
    form ``D(offset)|finite superposition>`` can be measured too.
    ``constructor_fidelity`` records how well ``Y^dag|0>`` reproduces the
    target when the scheme was built (``None`` if unchecked).
    """

    alphas: tuple[complex, ...]
    multiplicities: tuple[int, ...]
    params: BeamSplitterParams
    target_roots: tuple[complex, ...]
    leading_amplitude: complex = 1.0
    offset: complex = 0j
    constructor_fidelity: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.alphas) != len(self.multiplicities):
            raise ValueError("one reference amplitude per stage")
        if sum(self.multiplicities) != len(self.target_roots):
            raise ValueError("multiplicities must add up to the number of roots")
        if self.params.R == 0:
            raise ValueError("R must be nonzero")

    @property
    def pattern(self) -> tuple[int, ...]:
        """Required detector counts, the final signal detector included."""
        return tuple(self.multiplicities) + (0,)

    @property
    def stage_roots(self) -> tuple[complex, ...]:
        starts = np.cumsum((0,) + self.multiplicities[:-1]) if self.multiplicities else []
        return tuple(self.target_roots[int(i)] for i in starts)


@dataclass(frozen=True)
class OutcomeCounts:
    """Monte Carlo tally of the detection pattern.

    ``histograms[k][q]`` counts shots in which detector ``k`` registered ``q``
    photons, among the shots whose earlier detectors all matched the pattern
    (the last bin collects counts above the tracked range). The final entry
    belongs to the signal detector.
    """

    shots: int
    coincidence_count: int
    seed: int
    pattern: tuple[int, ...] = ()
    histograms: tuple[tuple[int, ...], ...] = ()
    path_probability: float = float("nan")

    def __post_init__(self):
        if self.shots < 1 or not 0 <= self.coincidence_count <= self.shots:
            raise ValueError("inconsistent counts")

    @property
    def frequency(self) -> float:
        return self.coincidence_count / self.shots


def overlap_alphas(target_roots: Sequence[complex], params: BeamSplitterParams,
                   paper_literal: bool = False) -> list[complex]:
    """Reference amplitudes for stage roots ``beta_1 .. beta_N`` (``beta_0 = 0``).

    ``alpha_k = R^*/conj(T)^k * sum_{l<=k} |T|^(2l-2) (beta_l - beta_{l-1})``.
    With ``paper_literal`` the weights are ``|T|^(2l-1)``; that variant makes
    ``Y^dag|0>`` miss the target whenever ``|T| < 1`` and some root is nonzero.
    """
    T, R = params.T, params.R
    if T == 0:
        raise ValueError("T must be nonzero")
    shift = 1 if paper_literal else 2
    beta = [0j] + [complex(b) for b in target_roots]
    out = []
    for k in range(1, len(beta)):
        acc = sum(abs(T) ** (2 * l - shift) * (beta[l] - beta[l - 1]) for l in range(1, k + 1))
        out.append(R.conjugate() / T.conjugate() ** k * acc)
    return out


def scheme_from_roots(roots: Sequence[complex], params: BeamSplitterParams,
                      multiplicities: Sequence[int] | None = None,
                      leading_amplitude: complex | None = None, offset: complex = 0j,
                      paper_literal: bool = False, verify: bool = True) -> MeasurementScheme:
    """Scheme for roots already in stage order."""
    roots = tuple(complex(r) for r in roots)
    mult = tuple(multiplicities) if multiplicities is not None else (1,) * len(roots)
    if leading_amplitude is None:
        leading_amplitude = complex(state_from_roots(roots).amplitudes[-1])
    starts = np.cumsum((0,) + mult[:-1]) if mult else []
    stage = [roots[int(s)] for s in starts]
    scheme = MeasurementScheme(tuple(overlap_alphas(stage, params, paper_literal)), mult, params, roots,
                               complex(leading_amplitude), complex(offset))
    if not verify:
        return scheme
    # the offset displacement is unitary, so the polynomial part is checked alone
    cutoff = len(roots) + 5
    phi, _, _ = measured_state(MeasurementScheme(scheme.alphas, mult, params, roots), cutoff)
    target = state_from_roots(roots, cutoff)
    fid = ray_fidelity(phi, target)
    if fid < 1 - CONSTRUCTOR_TOLERANCE:
        if not paper_literal:
            raise ArithmeticError(f"measured state misses the target (fidelity {fid:.3g})")
        log.warning("literal reference amplitudes: Y^dag|0> has fidelity %.6g with the target", fid)
    return MeasurementScheme(scheme.alphas, mult, params, roots, scheme.leading_amplitude, scheme.offset, fid)


def plan_measurement(target: FockVector, params: BeamSplitterParams, group_equal_roots: bool = False,
                     root_tolerance: float = 1e-8, paper_literal: bool = False) -> MeasurementScheme:
    """Scheme measuring the overlap with a normalized finite superposition.

    Stages run in increasing root magnitude, the reverse of the synthesis
    order, so the measurement fidelity equals the synthesis probability.
    """
    roots, lead = roots_of_state(target)
    if group_equal_roots:
        coeffs = _polynomial_coefficients(target.amplitudes[: len(roots) + 1])
        groups = cluster_roots(roots, root_tolerance, coeffs)
    else:
        groups = [(r, 1) for r in roots]
    groups = sorted(groups, key=lambda g: _magnitude_key(g[0]), reverse=True)
    ordered = [r for r, d in groups for _ in range(d)]
    return scheme_from_roots(ordered, params, [d for _, d in groups], lead, paper_literal=paper_literal)


# ------------------------------------------------------------ operators


def scheme_work_cutoff(scheme: MeasurementScheme, cutoff: int) -> int:
    R = scheme.params.R
    amax = max([abs(a / R.conjugate()) for a in scheme.alphas] + [abs(scheme.offset), 0.0])
    N = len(scheme.target_roots)
    reach = math.sqrt(cutoff + N) + amax
    return max(cutoff, N) + int(math.ceil(reach ** 2 + 8 * reach - cutoff)) + 10


def subtraction_operator(params: BeamSplitterParams, alpha: complex, d: int, cutoff: int,
                         guard: int | None = None) -> ModeOperator:
    """One stage: ``(-R^*)^d/sqrt(d!) D(alpha/R^*) T^n a^d D(-T^* alpha/R^*)``."""
    T, R = params.T, params.R
    if R == 0:
        raise ValueError("R must be nonzero")
    left = displacement_operator(alpha / R.conjugate(), cutoff, guard).elements
    right = displacement_operator(-T.conjugate() * alpha / R.conjugate(), cutoff, guard).elements
    core = (T ** np.arange(cutoff + 1))[:, None] * np.linalg.matrix_power(annihilation_matrix(cutoff), d)
    scale = (-R.conjugate()) ** d / math.sqrt(math.factorial(d))
    return ModeOperator(scale * left @ core @ right)


def measurement_operator(scheme: MeasurementScheme, cutoff: int) -> ModeOperator:
    """``Y = Y_M ... Y_1 D(-offset)`` as a matrix, built at a guarded cutoff."""
    work = scheme_work_cutoff(scheme, cutoff)
    ops = [displacement_operator(-scheme.offset, work)]
    for alpha, d in zip(scheme.alphas, scheme.multiplicities):
        ops.append(subtraction_operator(scheme.params, alpha, d, work))
    return chain(ops).resized(cutoff)


def measured_state(scheme: MeasurementScheme, cutoff: int) -> tuple[FockVector, float, float]:
    """``Y^dag|0>`` as (normalized state, log of its squared norm, leakage).

    ``Y_k^dag = (-R)^d/sqrt(d!) D(T^* u) (a^dag)^d conj(T)^n D(-u)`` with
    ``u = alpha_k/R^*``; stage ``M`` acts first on the vacuum.
    """
    T, R = scheme.params.T, scheme.params.R
    phi, z = np.ones(1, dtype=complex), 0j
    log_norm = 0.0
    for alpha, d in reversed(list(zip(scheme.alphas, scheme.multiplicities))):
        u = alpha / R.conjugate()
        phi, z = displaced_shift(phi, z, -u)
        phi, z, log_scale = displaced_attenuate(phi, z, T.conjugate())
        phi = displaced_create(phi, z, d) * ((-R) ** d / math.sqrt(math.factorial(d)))
        nrm = np.linalg.norm(phi)
        if nrm == 0.0:
            raise ZeroProbabilityError("measurement fidelity vanishes")
        log_norm += 2.0 * (log_scale + math.log(nrm))
        phi, z = displaced_shift(phi / nrm, z, T.conjugate() * u)
    phi, z = displaced_shift(phi, z, scheme.offset)
    kept, leakage = materialize(phi, z, cutoff)
    return FockVector(kept, leakage).normalized(), log_norm, leakage


def _signal_cutoff(rho: DensityMatrix, scheme: MeasurementScheme, cutoff: int | None) -> int:
    base = max(rho.cutoff, len(scheme.target_roots))
    return base if cutoff is None else max(cutoff, base)


def joint_probability(rho_in: DensityMatrix, scheme: MeasurementScheme, cutoff: int | None = None,
                      method: str = "state") -> float:
    """Probability of the full detection pattern, ``<0|Y rho Y^dag|0>``.

    ``method="state"`` contracts ``rho`` with ``Y^dag|0>``; ``"operator"``
    forms ``Y rho Y^dag`` from the matrix of ``Y``.
    """
    size = _signal_cutoff(rho_in, scheme, cutoff)
    rho = _resize_matrix(rho_in.elements, size)
    if method == "state":
        phi, log_norm, leakage = measured_state(scheme, size)
        v = phi.amplitudes
        # phi was renormalized after truncation; rho has no weight above size
        value = math.exp(log_norm) * (1.0 - leakage) * float(np.vdot(v, rho @ v).real)
    elif method == "operator":
        y = measurement_operator(scheme, size).elements
        value = float((y[0] @ rho @ y[0].conj()).real)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(np.clip(value, 0.0, 1.0))


def measurement_fidelity(scheme: MeasurementScheme, cutoff: int | None = None) -> float:
    """``||Y^dag|0>||^2``, the coincidence probability for a signal equal to the target."""
    size = len(scheme.target_roots) if cutoff is None else max(cutoff, len(scheme.target_roots))
    return math.exp(measured_state(scheme, size)[1])


def measurement_fidelity_closed_form(scheme: MeasurementScheme) -> float:
    """Closed form of ``||Y^dag|0>||^2`` for the scheme's target.

    With one photon per stage: the synthesis-probability expression with the
    root differences taken in forward order, ``(beta_l - beta_{l-1})``.
    Valid for reference amplitudes from :func:`overlap_alphas` with default
    weights.
    """
    T, R = scheme.params.T, scheme.params.R
    roots = scheme.target_roots
    mult = scheme.multiplicities
    N = len(roots)
    if N == 0:
        return 1.0 / abs(scheme.leading_amplitude) ** 2
    b = [0j] + list(roots)
    if all(d == 1 for d in mult):
        total = 0.0
        for k in range(1, N + 1):
            inner = sum(abs(T) ** (2 * l) * (b[l] - b[l - 1]) for l in range(1, k + 1))
            total += abs(inner / T ** (k + 2)) ** 2
        log_p = (math.lgamma(N + 1) - 2 * math.log(abs(scheme.leading_amplitude))
                 + 2 * N * math.log(abs(R)) + N * (N - 1) * math.log(abs(T)) - abs(R) ** 2 * total)
        return math.exp(log_p)
    u = [a / R.conjugate() for a in overlap_alphas(scheme.stage_roots, scheme.params)]
    # stage M acts first on the vacuum, so earlier-acting stages are the later ones
    log_p = (math.lgamma(N + 1) - 2 * math.log(abs(scheme.leading_amplitude))
             + 2 * N * math.log(abs(R)) - sum(math.lgamma(d + 1) for d in mult)
             + 2 * _degree_weights(mult[::-1]) * math.log(abs(T))
             - abs(R) ** 2 * sum(abs(x) ** 2 for x in u))
    return math.exp(log_p)


def measure_overlap(rho_in: DensityMatrix, scheme: MeasurementScheme, cutoff: int | None = None) -> float:
    """Overlap estimate: joint probability over measurement fidelity."""
    fid = measurement_fidelity(scheme, cutoff)
    if fid < 1e-300:
        raise ZeroProbabilityError("measurement fidelity vanishes")
    value = joint_probability(rho_in, scheme, cutoff) / fid
    if value < -1e-10:
        raise ArithmeticError("negative overlap estimate")
    return float(min(max(value, 0.0), 1.0))


# ------------------------------------------------------------- sampling


@dataclass(frozen=True)
class _PathStage:
    probabilities: np.ndarray  # per detected count, overflow bin last
    required: int


def _reference_cutoff(alpha: complex, tail: float = 1e-15) -> int:
    cutoff = int(abs(alpha) ** 2)
    while coherent_leakage(alpha, cutoff) > tail:
        cutoff += 1
    return cutoff


def path_cutoff(scheme: MeasurementScheme, cutoff: int, limit: int = 160) -> int:
    """Signal cutoff holding every photon the references can feed in."""
    return min(cutoff + sum(_reference_cutoff(a) for a in scheme.alphas), max(limit, cutoff))


def pattern_path(rho_in: DensityMatrix, scheme: MeasurementScheme, cutoff: int,
                 max_count: int | None = None) -> list[_PathStage]:
    """Exact count distributions met by a shot that keeps matching the pattern.

    Each stage is simulated from the two-mode beam splitter with the coherent
    reference; the conditional signal state is carried along the pattern.
    """
    rho = _resize_matrix(rho_in.elements, cutoff)
    if scheme.offset != 0:
        d = displacement_operator(-scheme.offset, cutoff).elements
        rho = d @ rho @ d.conj().T
    path = []
    for alpha, need in zip(scheme.alphas, scheme.multiplicities):
        ref = coherent_state(alpha, _reference_cutoff(alpha))
        qmax = max(need, ref.cutoff + cutoff) if max_count is None else max(need, max_count)
        kraus = np.array([k.elements for k in conditional_operators_by_outcome(ref, scheme.params, cutoff, qmax)])
        probs = np.einsum("qij,jk,qik->q", kraus, rho, kraus.conj()).real
        probs = np.clip(probs, 0.0, None)
        overflow = max(0.0, 1.0 - probs.sum())
        path.append(_PathStage(np.append(probs, overflow), need))
        if probs[need] <= 0.0:
            return path
        rho = kraus[need] @ rho @ kraus[need].conj().T / probs[need]
    final = np.clip(np.diag(rho).real, 0.0, None)
    path.append(_PathStage(np.append(final, max(0.0, 1.0 - final.sum())), 0))
    return path


def _normalized(p: np.ndarray) -> np.ndarray:
    return p / p.sum()


def _sample_chunk(path: list[_PathStage], shots: int, seed_seq: np.random.SeedSequence):
    rng = np.random.default_rng(seed_seq)
    alive = shots
    hists = []
    for stage in path:
        counts = rng.multinomial(alive, _normalized(stage.probabilities))
        hists.append(counts)
        alive = int(counts[stage.required])
    # a path cut short by an impossible stage leaves no coincidences
    hit = alive if len(hists) == len(path) and path[-1].required == 0 else 0
    return hit, hists


def sample_outcomes(rho_in: DensityMatrix, scheme: MeasurementScheme, shots: int, seed: int,
                    cutoff: int | None = None, workers: int = 1) -> OutcomeCounts:
    """Simulate ``shots`` runs of the detection cascade.

    Shots are split into fixed chunks, each with its own stream spawned from
    ``seed``; the result does not depend on ``workers``.
    """
    if shots < 1:
        raise ValueError("shots must be positive")
    size = path_cutoff(scheme, _signal_cutoff(rho_in, scheme, cutoff))
    path = pattern_path(rho_in, scheme, size)
    complete = len(path) == len(scheme.multiplicities) + 1
    n_chunks = -(-shots // CHUNK_SHOTS)
    sizes = [CHUNK_SHOTS] * (n_chunks - 1) + [shots - CHUNK_SHOTS * (n_chunks - 1)]
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sample_chunk, [path] * n_chunks, sizes, streams))
    else:
        results = [_sample_chunk(path, n, s) for n, s in zip(sizes, streams)]
    hits = sum(r[0] for r in results) if complete else 0
    hists = tuple(tuple(int(x) for x in sum(r[1][k] for r in results)) for k in range(len(path)))
    exact = math.prod(stage.probabilities[stage.required] for stage in path) if complete else 0.0
    return OutcomeCounts(shots, int(hits), seed, scheme.pattern, hists, float(exact))
