"""State synthesis from the vacuum by alternating displacement and photon adding.

A target with finitely many Fock components is factored as

    |psi> = psi_N / sqrt(N!) * prod_k (a^dag - conj(beta_k)) |0>

where ``beta_k`` are the zeros of ``<psi|beta>``. Each factor is produced by
one beam splitter fed with a one-photon Fock state whose reference output
registers no photon; the factors are positioned by coherent displacements
between the stages.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .beamsplitter import BeamSplitterParams, chain
from .errors import NullStateError, ZeroProbabilityError
from .fock import (
    FockVector,
    ModeOperator,
    creation_matrix,
    displacement_operator,
    displaced_attenuate,
    displaced_create,
    displaced_shift,
    materialize,
    ray_fidelity,
)

log = logging.getLogger(__name__)

ZERO_AMPLITUDE = 1e-14
LOG_TINY = math.log(1e-300)


@dataclass(frozen=True)
class SynthesisPlan:
    """Executable description of a synthesis cascade.

    ``roots`` lists every ``beta`` with multiplicity in stage order;
    consecutive equal roots form one stage when ``multiplicities`` groups
    them. ``displacements`` has one entry more than there are stages: the
    first acts on the vacuum, entry ``k`` follows stage ``k``. ``offset`` is
    an extra final displacement, so a plan can also target ``D(offset)``
    applied to a finite superposition.
    """

    roots: tuple[complex, ...]
    multiplicities: tuple[int, ...]
    displacements: tuple[complex, ...]
    params: BeamSplitterParams
    leading_amplitude: complex
    offset: complex = 0j

    def __post_init__(self):
        if len(self.displacements) != len(self.multiplicities) + 1:
            raise ValueError("need exactly one more displacement than stages")
        if sum(self.multiplicities) != len(self.roots):
            raise ValueError("multiplicities must add up to the number of roots")
        if any(d < 1 for d in self.multiplicities):
            raise ValueError("multiplicities must be positive")

    @property
    def photons(self) -> int:
        return len(self.roots)

    @property
    def stage_roots(self) -> tuple[complex, ...]:
        starts = np.cumsum((0,) + self.multiplicities[:-1]) if self.multiplicities else []
        return tuple(self.roots[int(i)] for i in starts)


@dataclass(frozen=True)
class GenerationReport:
    """``final_displacement`` is the frame ``z`` of the output ``D(z)|phi>``;
    it should equal the plan offset."""

    fidelity: float
    leakage: float
    closed_form_probability: float
    final_displacement: complex


# ---------------------------------------------------------------- roots


def _polynomial_coefficients(amplitudes: np.ndarray) -> np.ndarray:
    n = np.arange(amplitudes.size)
    return amplitudes.conj() / np.sqrt(np.exp(np.cumsum(np.log(np.maximum(n, 1)))))


def _companion_roots(coeffs: np.ndarray) -> np.ndarray:
    """Zeros of ``sum_n coeffs[n] z**n`` from the companion matrix spectrum."""
    degree = coeffs.size - 1
    if degree == 0:
        return np.zeros(0, dtype=complex)
    monic = coeffs[:-1] / coeffs[-1]
    companion = np.zeros((degree, degree), dtype=complex)
    companion[1:, :-1] = np.eye(degree - 1)
    companion[:, -1] = -monic
    return np.linalg.eigvals(companion)


def _polish(roots: np.ndarray, coeffs: np.ndarray, steps: int = 3) -> np.ndarray:
    poly = np.polynomial.Polynomial(coeffs)
    deriv = poly.deriv()
    out = roots.copy()
    for i, z in enumerate(out):
        for _ in range(steps):
            d = deriv(z)
            if d == 0:
                break
            trial = z - poly(z) / d
            if abs(poly(trial)) < abs(poly(z)):
                z = trial
            else:
                break
        out[i] = z
    return out


def roots_of_state(target: FockVector) -> tuple[list[complex], complex]:
    """Zeros ``beta_k`` of ``<target|beta>`` and the top amplitude ``psi_N``.

    Trailing (numerically) zero amplitudes are dropped first, so ``N`` is the
    largest occupied photon number.
    """
    amps = target.amplitudes
    scale = np.max(np.abs(amps))
    if scale == 0:
        raise NullStateError("null state")
    occupied = np.flatnonzero(np.abs(amps) > ZERO_AMPLITUDE * scale)
    top = int(occupied.max())
    coeffs = _polynomial_coefficients(amps[: top + 1])
    # exact zero roots from vanishing low-order coefficients
    low = int(occupied.min())
    reduced = coeffs[low:]
    roots = _polish(_companion_roots(reduced), reduced)
    roots = np.concatenate([roots, np.zeros(low, dtype=complex)])
    return [complex(r) for r in roots], complex(amps[top])


def state_from_roots(roots: Sequence[complex], cutoff: int | None = None) -> FockVector:
    """Normalized ``prod_k (a^dag - conj(beta_k))|0>``."""
    roots = np.asarray(roots, dtype=complex)
    N = roots.size
    cutoff = N if cutoff is None else cutoff
    if cutoff < N:
        raise ValueError("cutoff below the number of roots")
    monic = np.poly(roots.conj())[::-1] if N else np.ones(1, dtype=complex)
    n = np.arange(N + 1)
    amps = np.zeros(cutoff + 1, dtype=complex)
    # scale by 1/sqrt(N!) before normalizing to keep large N finite
    log_ratio = 0.5 * (np.cumsum(np.log(np.maximum(n, 1))) - np.sum(np.log(np.maximum(n, 1))))
    amps[: N + 1] = monic * np.exp(log_ratio)
    return FockVector(amps).normalized()


def cluster_roots(roots: Sequence[complex], tolerance: float = 1e-8,
                  coefficients: np.ndarray | None = None) -> list[tuple[complex, int]]:
    """Group numerically split multiple roots.

    A coefficient error ``tolerance`` spreads an ``m``-fold root over a
    radius of about ``tolerance**(1/m)``, so ``m`` roots are merged when they
    all lie within ``tolerance**(1/m) * max(1, |centre|)`` of their mean.
    Given the polynomial ``coefficients`` (lowest order first), each merged
    centre is refined by Newton steps on the ``(m-1)``-th derivative, where
    the root is simple.
    """
    remaining = [complex(r) for r in roots]
    groups = []
    while remaining:
        seed = remaining.pop(0)
        remaining.sort(key=lambda r: abs(r - seed))
        members = [seed]
        # largest group first: pairs inside a split m-fold root sit further
        # apart than a double root would
        for m in range(len(remaining) + 1, 1, -1):
            trial = [seed] + remaining[: m - 1]
            centre = sum(trial) / m
            if max(abs(x - centre) for x in trial) <= tolerance ** (1.0 / m) * max(1.0, abs(centre)):
                members = trial
                break
        remaining = remaining[len(members) - 1:]
        centre = sum(members) / len(members)
        if coefficients is not None and len(members) > 1:
            poly = np.polynomial.Polynomial(coefficients).deriv(len(members) - 1)
            centre = complex(_polish(np.array([centre]), poly.coef, steps=5)[0])
        groups.append((complex(centre), len(members)))
    return groups


def _magnitude_key(root: complex):
    return (-round(abs(root), 12), round(math.atan2(root.imag, root.real), 12))


# --------------------------------------------------------- schedule & odds


def displacement_schedule(roots: Sequence[complex], T: complex, offset: complex = 0j) -> list[complex]:
    """Displacements ``alpha_1 .. alpha_{N+1}`` for stage roots in order.

    ``alpha_k = conj(T)**(N+1-k) (beta_{k-1} - beta_k)`` for ``k >= 2`` with
    ``beta_{N+1} = 0``, and ``alpha_1 = -sum_l T**(-l) alpha_{l+1}``.
    ``offset`` is added to the last displacement after ``alpha_1`` is fixed.
    """
    if T == 0:
        raise ValueError("T must be nonzero")
    T = complex(T)
    beta = list(roots) + [0j]
    N = len(roots)
    alphas = [0j] * (N + 2)
    for k in range(2, N + 2):
        alphas[k] = T.conjugate() ** (N + 1 - k) * (beta[k - 2] - beta[k - 1])
    alphas[1] = -sum(T ** (-l) * alphas[l + 1] for l in range(1, N + 1))
    alphas[N + 1] += offset
    return alphas[1:]


def _stage_exponents(displacements: Sequence[complex], T: complex) -> list[complex]:
    """Coherent amplitude ``e_k`` carried by the state right after ``D(alpha_k)``."""
    c, out = 0j, []
    for k, a in enumerate(displacements):
        e = c + a
        out.append(e)
        c = T * e
    return out


def _degree_weights(multiplicities: Sequence[int]) -> int:
    # each stage attenuates the photons already present once: sum_k D_{k-1}
    done, total = 0, 0
    for d in multiplicities:
        total += done
        done += d
    return total


def log_generation_probability(roots: Sequence[complex], leading_amplitude: complex,
                               params: BeamSplitterParams,
                               multiplicities: Sequence[int] | None = None) -> float:
    """Natural log of the success probability, for any grouping of the roots."""
    T, R = params.T, params.R
    if T == 0:
        raise ValueError("T must be nonzero")
    N = len(roots)
    mult = list(multiplicities) if multiplicities is not None else [1] * N
    if N == 0:
        return -2.0 * math.log(abs(leading_amplitude))
    if R == 0:
        return -math.inf
    starts = np.cumsum([0] + mult[:-1])
    stage = [roots[int(i)] for i in starts]
    exps = _stage_exponents(displacement_schedule(stage, T), T)
    value = (math.lgamma(N + 1) - 2.0 * math.log(abs(leading_amplitude))
             + 2.0 * N * math.log(abs(R)) - sum(math.lgamma(d + 1) for d in mult)
             + 2.0 * _degree_weights(mult) * math.log(abs(T))
             - abs(R) ** 2 * sum(abs(e) ** 2 for e in exps[:-1]))
    return value


def generation_probability_closed_form(roots: Sequence[complex], leading_amplitude: complex,
                                       params: BeamSplitterParams,
                                       multiplicities: Sequence[int] | None = None) -> float:
    """Success probability of a synthesis cascade in closed form.

    With one photon per stage (``multiplicities`` omitted or all ones) this is
    the literal expression

        N!/|psi_N|^2 |R|^(2N) / |T|^(N(1-N))
            * exp(-|R|^2 sum_k |sum_{l<=k} |T|^(2l) (b_{N+2-l} - b_{N+1-l}) / T^(k+2)|^2)

    with ``b_{N+1} = 0``. For grouped stages the general form is used, with
    the ``d!`` factors and the attenuation of photons added in earlier stages.
    """
    T, R = params.T, params.R
    N = len(roots)
    if multiplicities is not None and any(d != 1 for d in multiplicities):
        return math.exp(log_generation_probability(roots, leading_amplitude, params, multiplicities))
    if T == 0:
        raise ValueError("T must be nonzero")
    if N == 0:
        return 1.0 / abs(leading_amplitude) ** 2
    b = [None] + list(roots) + [0j]  # 1-based, b[N+1] = 0
    total = 0.0
    for k in range(1, N + 1):
        inner = sum(abs(T) ** (2 * l) * (b[N + 2 - l] - b[N + 1 - l]) for l in range(1, k + 1))
        total += abs(inner / T ** (k + 2)) ** 2
    log_p = (math.lgamma(N + 1) - 2.0 * math.log(abs(leading_amplitude))
             + 2.0 * N * math.log(abs(R)) - N * (1 - N) * math.log(abs(T))
             - abs(R) ** 2 * total) if R != 0 else -math.inf
    return math.exp(log_p)


# --------------------------------------------------------------- planning


def _order_groups(groups: list[tuple[complex, int]], params: BeamSplitterParams, order: str):
    groups = sorted(groups, key=lambda g: _magnitude_key(g[0]))
    if order == "magnitude" or len(groups) < 2:
        return groups
    if order != "probability":
        raise ValueError(f"unknown root order {order!r}")
    if len(groups) > 7:
        log.info("too many distinct roots for an exhaustive order search; using magnitude order")
        return groups

    def score(perm):
        roots = [r for r, d in perm for _ in range(d)]
        return log_generation_probability(roots, 1.0, params, [d for _, d in perm])

    # max() keeps the first best permutation, i.e. the magnitude order on ties
    return list(max(itertools.permutations(groups), key=score))


def plan_from_roots(roots: Sequence[complex], params: BeamSplitterParams,
                    multiplicities: Sequence[int] | None = None,
                    leading_amplitude: complex | None = None,
                    offset: complex = 0j) -> SynthesisPlan:
    """Plan for roots already in stage order (no reordering or clustering)."""
    roots = tuple(complex(r) for r in roots)
    mult = tuple(multiplicities) if multiplicities is not None else (1,) * len(roots)
    if leading_amplitude is None:
        leading_amplitude = complex(state_from_roots(roots).amplitudes[-1])
    if not roots:
        return SynthesisPlan((), (), (complex(offset),), params, complex(leading_amplitude), complex(offset))
    starts = np.cumsum((0,) + mult[:-1])
    for s, d in zip(starts, mult):
        group = roots[s:s + d]
        if any(abs(g - group[0]) > 1e-8 * max(1.0, abs(group[0])) for g in group):
            raise ValueError("roots grouped into one stage must be equal")
    stage = [roots[int(s)] for s in starts]
    alphas = displacement_schedule(stage, params.T, offset)
    return SynthesisPlan(roots, mult, tuple(alphas), params, complex(leading_amplitude), complex(offset))


def plan_synthesis(target: FockVector, params: BeamSplitterParams, group_equal_roots: bool = False,
                   root_tolerance: float = 1e-8, root_order: str = "magnitude") -> SynthesisPlan:
    """Roots, stage grouping and displacements that generate ``target``.

    ``root_order="magnitude"`` orders stages by decreasing root magnitude
    (then phase), which keeps the first displacement small;
    ``"probability"`` searches all stage orders for the most probable one.
    """
    if params.T == 0:
        raise ValueError("T must be nonzero")
    roots, lead = roots_of_state(target)
    if not roots:
        return SynthesisPlan((), (), (0j,), params, lead)
    coeffs = _polynomial_coefficients(target.amplitudes[: len(roots) + 1])
    if all(r == 0 for r in roots):
        N = len(roots)
        mult = (N,) if group_equal_roots else (1,) * N
        return SynthesisPlan((0j,) * N, mult, (0j,) * (len(mult) + 1), params, lead)
    if group_equal_roots:
        groups = cluster_roots(roots, root_tolerance, coeffs)
    else:
        groups = [(r, 1) for r in roots]
    groups = _order_groups(groups, params, root_order)
    ordered = [r for r, d in groups for _ in range(d)]
    return plan_from_roots(ordered, params, [d for _, d in groups], lead)


# -------------------------------------------------------------- execution


def plan_work_cutoff(plan: SynthesisPlan, cutoff: int) -> int:
    """Internal truncation that keeps every intermediate state clear of the edge."""
    exps = _stage_exponents(plan.displacements, plan.params.T)
    amax = max([abs(a) for a in plan.displacements] + [abs(e) for e in exps] + [0.0])
    reach = math.sqrt(cutoff + plan.photons) + amax
    return max(cutoff, plan.photons) + int(math.ceil(reach ** 2 + 8 * reach - cutoff)) + 10


def _stage_matrix(params: BeamSplitterParams, d: int, cutoff: int) -> np.ndarray:
    adag = creation_matrix(cutoff)
    add = np.linalg.matrix_power(params.R * adag, d) / math.sqrt(math.factorial(d))
    return add * (params.T ** np.arange(cutoff + 1))[None, :]


def photon_adding_operator(params: BeamSplitterParams, d: int, cutoff: int) -> ModeOperator:
    """``(R a^dag)^d / sqrt(d!) T^n``: one adding stage conditioned on a dark detector."""
    return ModeOperator(_stage_matrix(params, d, cutoff))


def generation_operator(plan: SynthesisPlan, cutoff: int) -> ModeOperator:
    """Full cascade operator as a matrix (dense chain at a guarded cutoff)."""
    work = plan_work_cutoff(plan, cutoff)
    ops = [displacement_operator(plan.displacements[0], work)]
    for d, alpha in zip(plan.multiplicities, plan.displacements[1:]):
        ops.append(photon_adding_operator(plan.params, d, work))
        ops.append(displacement_operator(alpha, work))
    return chain(ops).resized(cutoff)


def plan_target(plan: SynthesisPlan, cutoff: int) -> FockVector:
    """Normalized state the plan is meant to produce."""
    poly = state_from_roots(plan.roots, plan.photons).amplitudes
    return FockVector(materialize(poly, plan.offset, cutoff)[0]).normalized()


def _propagate(plan: SynthesisPlan) -> tuple[np.ndarray, complex, float]:
    # The state is kept as D(z)|phi> with phi holding only the added
    # photons; renormalizing phi after every stage keeps its relative
    # precision and the discarded norms are accumulated in log form.
    T, R = plan.params.T, plan.params.R
    phi, z = np.ones(1, dtype=complex), complex(plan.displacements[0])
    log_p = 0.0
    for d, alpha in zip(plan.multiplicities, plan.displacements[1:]):
        phi, z, log_scale = displaced_attenuate(phi, z, T)
        phi = displaced_create(phi, z, d) * (R ** d / math.sqrt(math.factorial(d)))
        nrm = np.linalg.norm(phi)
        if nrm == 0.0:
            raise ZeroProbabilityError("event has zero probability")
        log_p += 2.0 * (log_scale + math.log(nrm))
        phi, z = displaced_shift(phi / nrm, z, alpha)
    return phi, z, log_p


def run_generation(plan: SynthesisPlan, cutoff: int) -> tuple[FockVector, float, GenerationReport]:
    """Run the cascade on the vacuum.

    Returns the normalized conditional output truncated at ``cutoff``, the
    probability that every detector stays dark, and a report with the
    fidelity to the intended state and the truncation leakage.
    """
    if cutoff < plan.photons:
        raise ValueError("cutoff below the number of added photons")
    phi, z, log_p = _propagate(plan)
    if log_p < LOG_TINY:
        raise ZeroProbabilityError(f"probability underflows (log p = {log_p:.1f})")
    kept, leakage = materialize(phi, z, cutoff)
    state = FockVector(kept, leakage).normalized()
    # compare in the frame of the offset, where the target is a polynomial state
    relative, _ = materialize(phi, z - plan.offset, plan.photons + 10)
    fid = ray_fidelity(FockVector(relative), state_from_roots(plan.roots, plan.photons + 10))
    closed = math.exp(log_generation_probability(plan.roots, plan.leading_amplitude, plan.params,
                                                 plan.multiplicities))
    report = GenerationReport(fidelity=fid, leakage=leakage, closed_form_probability=closed,
                              final_displacement=z)
    return state, math.exp(log_p), report
