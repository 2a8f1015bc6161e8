"""Cat-like states built by two rounds of multi-photon adding.

``|Psi_n> ~ D(g3) (a^dag)^n D(g2) (a^dag)^n D(g1) |0>`` with

    g1 = i(beta - alpha)/2,  g2 = i(alpha - beta),  g3 = ((1-i)alpha + (1+i)beta)/2

approaches the superposition ``|alpha> + |beta>`` as ``n = |alpha - beta|^2/4``
grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .beamsplitter import BeamSplitterParams
from .fock import FockVector, coherent_state, create_vector, displace_vector, ray_fidelity
from .overlap import MeasurementScheme, scheme_from_roots
from .synthesis import SynthesisPlan, plan_from_roots, run_generation


@dataclass(frozen=True)
class CatParams:
    n: int
    alpha: complex
    beta: complex

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")

    @property
    def gammas(self) -> tuple[complex, complex, complex]:
        a, b = complex(self.alpha), complex(self.beta)
        return 1j * (b - a) / 2, 1j * (a - b), ((1 - 1j) * a + (1 + 1j) * b) / 2

    @property
    def centre(self) -> complex:
        """``g1 + g2 + g3 = (alpha + beta)/2``."""
        return (complex(self.alpha) + complex(self.beta)) / 2


def default_cutoff(p: CatParams) -> int:
    return 2 * p.n + int(math.ceil(abs(p.alpha) ** 2 + abs(p.beta) ** 2)) + 20


def _raw_vector(p: CatParams, work: int) -> np.ndarray:
    g1, g2, g3 = p.gammas
    vec = np.zeros(work + 1, dtype=complex)
    vec[0] = 1.0
    vec = displace_vector(vec, g1)
    vec = create_vector(vec, p.n)
    vec = displace_vector(vec, g2)
    vec = create_vector(vec, p.n)
    return displace_vector(vec, g3)


def _work_cutoff(p: CatParams, cutoff: int) -> int:
    reach = math.sqrt(cutoff) + max(abs(g) for g in p.gammas) + abs(p.centre)
    return max(cutoff, 2 * p.n) + int(math.ceil(reach ** 2 + 8 * reach)) + 10


def cat_like_state(p: CatParams, cutoff: int | None = None) -> FockVector:
    """Normalized cat-like state truncated at ``cutoff``; the truncated
    weight is reported as leakage."""
    cutoff = default_cutoff(p) if cutoff is None else cutoff
    vec = _raw_vector(p, _work_cutoff(p, cutoff))
    total = float(np.vdot(vec, vec).real)
    kept = vec[: cutoff + 1]
    leakage = max(0.0, 1.0 - float(np.vdot(kept, kept).real) / total)
    return FockVector(kept, leakage).normalized()


def cat_norm_numerical(p: CatParams, cutoff: int | None = None) -> float:
    """Squared norm of the unnormalized construction."""
    cutoff = default_cutoff(p) if cutoff is None else cutoff
    vec = _raw_vector(p, _work_cutoff(p, cutoff))
    return float(np.vdot(vec, vec).real)


def hypergeometric_1f2(a: float, b1: float, b2: float, x: float, terms: int) -> float:
    """Partial sum ``sum_{k<=terms} (a)_k / ((b1)_k (b2)_k) x^k / k!``.

    Exact when ``a`` is a nonpositive integer ``-m`` and ``terms >= m``.
    """
    total, term = 0.0, 1.0
    for k in range(terms + 1):
        total += term
        term *= (a + k) / ((b1 + k) * (b2 + k)) * x / (k + 1)
    return total


def cat_normalization_closed_form(p: CatParams) -> float:
    """``4^n n!/sqrt(pi) Gamma(n+1/2) 1F2(-n; 1/2-n, 1; |alpha-beta|^4/64)``.

    The hypergeometric has upper parameter ``-n`` and lower parameters
    ``1/2 - n`` and ``1``; this grouping reproduces the numerical norm
    (see ``test_cats.py::test_normalization_matches_numerical_norm``).
    """
    n = p.n
    x = abs(complex(p.alpha) - complex(p.beta)) ** 4 / 64
    log_pre = n * math.log(4) + gammaln(n + 1) + gammaln(n + 0.5) - 0.5 * math.log(math.pi)
    return math.exp(log_pre) * hypergeometric_1f2(-n, 0.5 - n, 1.0, x, n)


def coherent_superposition(alpha: complex, beta: complex, cutoff: int, phase: float = 0.0) -> FockVector:
    """``|alpha> + exp(i phase)|beta>`` normalized with the exact cross term."""
    if alpha == beta:
        return coherent_state(alpha, cutoff)
    a = coherent_state(alpha, cutoff)
    b = coherent_state(beta, cutoff)
    return FockVector(a.amplitudes + np.exp(1j * phase) * b.amplitudes, max(a.leakage, b.leakage)).normalized()


def limit_phase(alpha: complex, beta: complex) -> float:
    """Relative phase ``Im(alpha beta^*)`` of the superposition the cat-like
    states approach, ``D(c)(|d> + |-d>) ~ |alpha> + exp(i phase)|beta>``.

    It vanishes when ``alpha`` and ``beta`` are collinear with the origin.
    """
    return float((complex(alpha) * complex(beta).conjugate()).imag)


def cat_fidelity(n: int, alpha: complex, beta: complex, cutoff: int | None = None,
                 phase_matched: bool = False) -> float:
    """Fidelity of the cat-like state with ``|alpha> + |beta>``, or with the
    phase-matched superposition (see :func:`limit_phase`)."""
    p = CatParams(n, alpha, beta)
    cutoff = default_cutoff(p) if cutoff is None else cutoff
    phase = limit_phase(alpha, beta) if phase_matched else 0.0
    return ray_fidelity(cat_like_state(p, cutoff), coherent_superposition(alpha, beta, cutoff, phase))


# ------------------------------------------------------- beam splitter route


def cat_roots(p: CatParams) -> tuple[complex, complex]:
    """Roots of the polynomial part, first-added group first.

    ``|Psi_n> = D(c) prod (a^dag - conj(b))|0>`` with ``c = (alpha+beta)/2``.
    """
    g1, g2, g3 = p.gammas
    c = p.centre
    return g2 + g3 - c, g3 - c


def cat_plan(p: CatParams, params: BeamSplitterParams) -> SynthesisPlan:
    """Two stages adding ``n`` photons each, then a displacement by ``c``.

    For ``T -> 1`` the displacements tend to ``g1, g2, g3``.
    """
    if p.n < 1:
        raise ValueError("n must be positive")
    first, second = cat_roots(p)
    roots = [first] * p.n + [second] * p.n
    return plan_from_roots(roots, params, (p.n, p.n), offset=p.centre)


def cat_scheme(p: CatParams, params: BeamSplitterParams) -> MeasurementScheme:
    """Overlap scheme for ``|Psi_n>``, stages in reverse synthesis order."""
    if p.n < 1:
        raise ValueError("n must be positive")
    first, second = cat_roots(p)
    roots = [second] * p.n + [first] * p.n
    return scheme_from_roots(roots, params, (p.n, p.n), offset=p.centre)


def cat_probability_exact(n: int, alpha: complex, beta: complex, params: BeamSplitterParams,
                          cutoff: int | None = None) -> float:
    """Success probability of the two-stage cascade, by propagation."""
    p = CatParams(n, alpha, beta)
    cutoff = default_cutoff(p) if cutoff is None else cutoff
    return run_generation(cat_plan(p, params), cutoff)[1]


def cat_probability_asymptotic(n: int, params: BeamSplitterParams) -> float:
    """Large-``n`` success probability along ``|alpha - beta|^2 = 4n``."""
    if n < 1:
        raise ValueError("n must be positive")
    t, r = abs(params.T), abs(params.R)
    if t == 0 or r == 0:
        raise ValueError("T and R must be nonzero")
    exponent = n * (1 - (r / t) ** 2 * (1 + (1 - 2 * t * t) ** 2 / t ** 2))
    return math.exp(2 * n * math.log(2 * r * r * t) + exponent) / (n * math.pi)
