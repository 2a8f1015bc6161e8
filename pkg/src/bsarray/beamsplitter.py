"""Lossless beam splitter in the Fock basis and the conditional operators it
induces on the signal mode.

The two-mode unitary is

    U = T**n  exp(-R^* a_k^dag a)  exp(R a^dag a_k)  T**(-n_k)

with ``a`` the signal mode and ``a_k`` the reference mode. It conserves the
total photon number, so it is stored as a list of finite blocks; block ``N``
has entries ``<m, N-m| U |n, N-n>`` (first label: signal photons) and is
evaluated from the equivalent SU(2) rotation form.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
import threading
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import ZeroProbabilityError
from .fock import (
    DensityMatrix,
    FockVector,
    ModeOperator,
    _resize_matrix,
    coherent_state,
    displacement_columns,
    displacement_guard,
)


@dataclass(frozen=True)
class BeamSplitterParams:
    """Complex transmittance ``T`` and reflectance ``R``, ``|T|^2 + |R|^2 = 1``."""

    T: complex
    R: complex

    def __post_init__(self):
        T, R = complex(self.T), complex(self.R)
        if abs(abs(T) ** 2 + abs(R) ** 2 - 1.0) > 1e-12:
            raise ValueError("|T|^2 + |R|^2 must equal 1")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "R", R)

    @classmethod
    def from_angles(cls, theta: float, phi_T: float = 0.0, phi_R: float = 0.0) -> "BeamSplitterParams":
        """``T = cos(theta) e^{i phi_T}``, ``R = sin(theta) e^{i phi_R}``."""
        return cls(math.cos(theta) * cmath.exp(1j * phi_T), math.sin(theta) * cmath.exp(1j * phi_R))

    @classmethod
    def from_transmissivity(cls, t2: float, phi_T: float = 0.0, phi_R: float = 0.0) -> "BeamSplitterParams":
        if not 0.0 <= t2 <= 1.0:
            raise ValueError("transmissivity must lie in [0, 1]")
        return cls.from_angles(math.acos(math.sqrt(t2)), phi_T, phi_R)

    @property
    def angles(self) -> tuple[float, float, float]:
        theta = math.atan2(abs(self.R), abs(self.T))
        phi_T = cmath.phase(self.T) if self.T != 0 else 0.0
        phi_R = cmath.phase(self.R) if self.R != 0 else 0.0
        return theta, phi_T, phi_R

    @property
    def s(self) -> float:
        return ordering_parameter(self)


@dataclass(frozen=True)
class TwoModeBlock:
    total_photons: int
    elements: np.ndarray


def ordering_parameter(params: BeamSplitterParams) -> float:
    """Operator-ordering parameter ``s = 2/|R|^2 - 1`` of the conditional map."""
    if params.R == 0:
        raise ValueError("no reflection: s undefined")
    return 2.0 / abs(params.R) ** 2 - 1.0


_BLOCK_CACHE: dict[tuple[complex, complex], list[np.ndarray]] = {}
_BLOCK_LOCK = threading.Lock()


def _block(N: int, T: complex, R: complex) -> np.ndarray:
    # SU(2) form: U = exp(i(phi_T+phi_R)L_z) exp(2i theta L_y) exp(i(phi_T-phi_R)L_z)
    # with L_z = (n - n_k)/2 and L_y = i(a_k^dag a - a^dag a_k)/2. L_y is
    # diagonalized on the block, which stays accurate for large N.
    theta = math.atan2(abs(R), abs(T))
    phi_T = cmath.phase(T) if T != 0 else 0.0
    phi_R = cmath.phase(R) if R != 0 else 0.0
    j = np.arange(N + 1)
    lz = j - N / 2.0
    # <j-1| a_k^dag a |j> = sqrt(j (N - j + 1))
    down = np.sqrt(j[1:] * (N - j[1:] + 1.0))
    ly = np.zeros((N + 1, N + 1), dtype=complex)
    ly[j[:-1], j[1:]] = 0.5j * down
    ly[j[1:], j[:-1]] = -0.5j * down
    w, v = np.linalg.eigh(ly)
    rot = (v * np.exp(2j * theta * w)) @ v.conj().T
    block = np.exp(1j * (phi_T + phi_R) * lz)[:, None] * rot * np.exp(1j * (phi_T - phi_R) * lz)[None, :]
    block.setflags(write=False)
    return block


def unitary_blocks(params: BeamSplitterParams, nmax: int) -> tuple[np.ndarray, ...]:
    """All blocks with total photon number ``0..nmax`` (cached per ``(T, R)``)."""
    key = (params.T, params.R)
    with _BLOCK_LOCK:
        blocks = _BLOCK_CACHE.setdefault(key, [np.ones((1, 1), dtype=complex)])
        while len(blocks) <= nmax:
            blocks.append(_block(len(blocks), params.T, params.R))
        if len(_BLOCK_CACHE) > 32:
            _BLOCK_CACHE.pop(next(iter(_BLOCK_CACHE)))
        return tuple(blocks[: nmax + 1])


def bs_unitary_block(params: BeamSplitterParams, total_photons: int) -> TwoModeBlock:
    if total_photons < 0:
        raise ValueError("total_photons must be nonnegative")
    return TwoModeBlock(total_photons, unitary_blocks(params, total_photons)[total_photons])


def bs_element(params: BeamSplitterParams, m: int, q: int, n: int, p: int) -> complex:
    """``<m, q| U |n, p>`` (signal label first)."""
    if min(m, q, n, p) < 0:
        raise ValueError("photon numbers must be nonnegative")
    if m + q != n + p:
        return 0j
    return complex(unitary_blocks(params, n + p)[n + p][m, n])


# References with at most this many photons use the explicit binomial sum.
_FEW_PHOTONS = 4


def _logpow(k, log_base):
    # k * log|x| with the convention x**0 == 1 even for x == 0
    k = np.asarray(k)
    if np.isfinite(log_base):
        return k * log_base
    return np.where(k == 0, 0.0, log_base)


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _few_photon_column(n: int, p: int, q: np.ndarray, params: BeamSplitterParams) -> np.ndarray:
    """``<n+p-q, q| U |n, p>`` for an array of reference counts ``q``.

    Expands ``(T a^dag - R^* a_k^dag)^n (R a^dag + T^* a_k^dag)^p |0,0>``;
    ``i`` reference photons come from the first factor, so at most
    ``min(p, q) + 1`` terms contribute.
    """
    T, R = params.T, params.R
    m = n + p - q
    with np.errstate(divide="ignore"):
        lt, lr = np.log(abs(T)), np.log(abs(R))
    ph_t, ph_r = np.angle(T), np.angle(R)
    norm = 0.5 * (gammaln(m + 1) + gammaln(q + 1) - gammaln(n + 1) - gammaln(p + 1))
    out = np.zeros(q.shape, dtype=complex)
    for i in range(int(q.max()) + 1 if q.size else 0):
        j_ref = q - i  # reference photons taken from the second factor
        ok = (i <= n) & (j_ref >= 0) & (j_ref <= p) & (i <= q)
        if not np.any(ok):
            continue
        a_sig = n - i
        j_sig = p - j_ref
        jr = np.where(ok, j_ref, 0)
        js = np.where(ok, j_sig, 0)
        logmag = (_log_binom(n, i) + _log_binom(p, jr) + _logpow(a_sig + jr, lt)
                  + _logpow(i + js, lr) + norm)
        phase = a_sig * ph_t + i * (np.pi - ph_r) + js * ph_r - jr * ph_t
        out += np.where(ok, np.exp(np.where(ok, logmag, -np.inf) + 1j * phase), 0.0)
    return out


def _conditional_stack(psi_in: np.ndarray, params: BeamSplitterParams, cutoff: int, qmax: int) -> np.ndarray:
    """Matrices ``<q|_k U |psi_in>_k`` for every detected count ``q <= qmax``."""
    nonzero = np.flatnonzero(psi_in)
    pmax = int(nonzero.max()) if nonzero.size else 0
    few = min(pmax, qmax) <= _FEW_PHOTONS
    blocks = None if few else unitary_blocks(params, cutoff + min(pmax, qmax))
    out = np.zeros((qmax + 1, cutoff + 1, cutoff + 1), dtype=complex)
    for n in range(cutoff + 1):
        for p in nonzero:
            N = n + p
            # signal index m = N - q must stay inside both truncations
            m_lo = max(0, N - qmax)
            m_hi = min(cutoff, N)
            if m_lo > m_hi:
                continue
            m = np.arange(m_lo, m_hi + 1)
            if few:
                col = _few_photon_column(n, int(p), N - m, params)
            else:
                col = blocks[N][m, n]
            out[N - m, m, n] += psi_in[p] * col
    return out


def conditional_operator(psi_in: FockVector, psi_out: FockVector, params: BeamSplitterParams,
                         cutoff: int) -> ModeOperator:
    """Signal operator ``<psi_out|_k U |psi_in>_k`` from exact photon-number blocks."""
    stack = _conditional_stack(psi_in.amplitudes, params, cutoff, psi_out.cutoff)
    return ModeOperator(np.tensordot(psi_out.amplitudes.conj(), stack, axes=1))


def conditional_operators_by_outcome(psi_in: FockVector, params: BeamSplitterParams, cutoff: int,
                                     max_count: int) -> list[ModeOperator]:
    """Kraus operators for detecting ``q = 0..max_count`` photons in the reference output."""
    stack = _conditional_stack(psi_in.amplitudes, params, cutoff, max_count)
    return [ModeOperator(y) for y in stack]


def displaced_conditional(alpha: complex, beta: complex, F_state: FockVector, G_state: FockVector,
                          params: BeamSplitterParams, cutoff: int, guard: int | None = None) -> ModeOperator:
    """Conditional operator for displaced references ``D(alpha)F|0>`` in and
    ``D(beta)G|0>`` out, written as signal displacements around the undisplaced one."""
    T, R = params.T, params.R
    if R == 0:
        raise ValueError("displacement absorption undefined")
    left = (alpha - T * beta) / R.conjugate()
    right = (beta - T.conjugate() * alpha) / R.conjugate()
    if guard is None:
        guard = max(displacement_guard(left, cutoff), displacement_guard(right, cutoff))
    work = cutoff + guard
    core = conditional_operator(F_state, G_state, params, work).elements
    # <m|D(left) = (D(-left)|m>)^dag, so only cutoff+1 columns are ever needed
    rows = displacement_columns(-left, cutoff, work).conj().T
    cols = displacement_columns(right, cutoff, work)
    return ModeOperator(rows @ core @ cols)


def chain(operators: Sequence[ModeOperator]) -> ModeOperator:
    """Product ``Y_N ... Y_2 Y_1``; the first list element acts first."""
    if not operators:
        raise ValueError("empty operator list")
    cutoff = operators[0].cutoff
    if any(op.cutoff != cutoff for op in operators):
        raise ValueError("mismatched cutoffs in chain")
    result = operators[0]
    for op in operators[1:]:
        result = op @ result
    return result


def apply_conditional(rho_in: DensityMatrix, Y: ModeOperator) -> tuple[DensityMatrix, float]:
    """Post-selected output state and the probability of the conditioning event."""
    if abs(rho_in.trace() - 1.0) > 1e-10:
        raise ValueError("input state must have unit trace")
    rho = _resize_matrix(rho_in.elements, Y.cutoff)
    y = Y.elements
    out = y @ rho @ y.conj().T
    p = float(np.trace(out).real)
    if p < 1e-300:
        raise ZeroProbabilityError("event has zero probability")
    out = out / p
    return DensityMatrix(0.5 * (out + out.conj().T)), p


def bs_displacement_channel(rho: DensityMatrix, alpha: complex, T_prime: float, cutoff: int,
                            tail: float = 1e-13) -> DensityMatrix:
    """Signal state after mixing with ``|alpha/R'>`` at a real beam splitter of
    transmittance ``T_prime`` and discarding the reference output.

    Approaches ``D(alpha) rho D(alpha)^dag`` as ``T_prime -> 1``. Used only to
    validate modelling displacements as exact ``D(alpha)``.
    """
    params = BeamSplitterParams(T_prime, math.sqrt(1.0 - T_prime ** 2))
    amp = alpha / params.R
    mean = abs(amp) ** 2
    ref_cut = int(math.ceil(mean + 12 * math.sqrt(mean) + 20))
    ref = coherent_state(amp, ref_cut)
    if ref.leakage > tail:
        raise ValueError("reference truncation too coarse")
    qmax = ref_cut + rho.cutoff
    kraus = conditional_operators_by_outcome(ref, params, cutoff, qmax)
    r = _resize_matrix(rho.elements, cutoff)
    out = sum(k.elements @ r @ k.elements.conj().T for k in kraus)
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(out / max(1.0, float(np.trace(out).real)))
