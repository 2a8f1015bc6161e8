"""Truncated single-mode Fock space: states, density matrices and operators.

All containers are immutable. Index ``n`` of an amplitude array or matrix
refers to the photon-number state ``|n>``; the largest represented photon
number is the ``cutoff``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.special
from scipy.sparse.linalg import expm_multiply

from .errors import NullStateError



def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=complex)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FockVector:
    """Pure state (or unnormalized ket) truncated at ``cutoff`` photons.

    ``leakage`` is the squared norm the exact state carries above the cutoff,
    when the constructing routine can estimate it.
    """

    amplitudes: np.ndarray
    leakage: float = 0.0

    def __post_init__(self):
        amps = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if amps.ndim != 1 or amps.size == 0:
            raise ValueError("amplitudes must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @property
    def cutoff(self) -> int:
        return self.amplitudes.size - 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "FockVector":
        nrm = self.norm()
        if nrm == 0.0:
            raise NullStateError("null state")
        return FockVector(self.amplitudes / nrm, self.leakage)

    def resized(self, cutoff: int) -> "FockVector":
        """Zero-pad or crop to a new cutoff."""
        return FockVector(_resize_vector(self.amplitudes, cutoff), self.leakage)

    def photon_distribution(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __len__(self):
        return self.amplitudes.size


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian positive semidefinite matrix with 0 < trace <= 1."""

    elements: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.elements, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] == 0:
            raise ValueError("density matrix must be square and nonempty")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
            raise ValueError("density matrix is not Hermitian")
        tr = float(np.trace(rho).real)
        if not 0.0 < tr <= 1.0 + 1e-12:
            raise ValueError(f"density matrix trace {tr} outside (0, 1]")
        if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
            raise ValueError("density matrix is not positive semidefinite")
        object.__setattr__(self, "elements", _frozen(rho))

    @classmethod
    def from_pure(cls, state: FockVector) -> "DensityMatrix":
        v = state.amplitudes
        return cls(np.outer(v, v.conj()))

    @classmethod
    def from_diagonal(cls, populations: Sequence[float]) -> "DensityMatrix":
        return cls(np.diag(np.asarray(populations, dtype=complex)))

    @property
    def cutoff(self) -> int:
        return self.elements.shape[0] - 1

    def trace(self) -> float:
        return float(np.trace(self.elements).real)

    def resized(self, cutoff: int) -> "DensityMatrix":
        return DensityMatrix(_resize_matrix(self.elements, cutoff))


@dataclass(frozen=True)
class ModeOperator:
    """Linear (not necessarily unitary) operator on the truncated space."""

    elements: np.ndarray
    leakage: float = field(default=0.0, compare=False)

    def __post_init__(self):
        op = np.asarray(self.elements, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1] or op.shape[0] == 0:
            raise ValueError("operator matrix must be square and nonempty")
        if not np.all(np.isfinite(op)):
            raise ValueError("operator entries must be finite")
        object.__setattr__(self, "elements", _frozen(op))

    @property
    def cutoff(self) -> int:
        return self.elements.shape[0] - 1

    @property
    def dagger(self) -> "ModeOperator":
        return ModeOperator(self.elements.conj().T, self.leakage)

    def resized(self, cutoff: int) -> "ModeOperator":
        return ModeOperator(_resize_matrix(self.elements, cutoff), self.leakage)

    def __matmul__(self, other):
        if isinstance(other, ModeOperator):
            if other.cutoff != self.cutoff:
                raise ValueError("operator cutoffs differ")
            return ModeOperator(self.elements @ other.elements,
                                max(self.leakage, other.leakage))
        if isinstance(other, FockVector):
            vec = _resize_vector(other.amplitudes, self.cutoff)
            return FockVector(self.elements @ vec)
        return NotImplemented

    def __mul__(self, scalar):
        return ModeOperator(self.elements * scalar, self.leakage)

    __rmul__ = __mul__


def _resize_vector(vec: np.ndarray, cutoff: int) -> np.ndarray:
    out = np.zeros(cutoff + 1, dtype=complex)
    k = min(cutoff + 1, vec.size)
    out[:k] = vec[:k]
    return out


def _resize_matrix(mat: np.ndarray, cutoff: int) -> np.ndarray:
    out = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    k = min(cutoff + 1, mat.shape[0])
    out[:k, :k] = mat[:k, :k]
    return out


def make_state(amplitudes: Sequence[complex], normalize: bool = False) -> FockVector:
    """Build a FockVector with ``cutoff = len(amplitudes) - 1``."""
    amps = np.asarray(amplitudes, dtype=complex)
    if amps.size == 0:
        raise ValueError("empty amplitude list")
    state = FockVector(amps)
    if normalize:
        if not np.any(amps != 0):
            raise NullStateError("null state")
        state = state.normalized()
    return state


def fock_state(n: int, cutoff: int | None = None) -> FockVector:
    cutoff = n if cutoff is None else cutoff
    if not 0 <= n <= cutoff:
        raise ValueError("photon number outside truncated space")
    amps = np.zeros(cutoff + 1, dtype=complex)
    amps[n] = 1.0
    return FockVector(amps)


def coherent_leakage(alpha: complex, cutoff: int) -> float:
    """Poisson weight of a coherent state above ``cutoff`` photons."""
    mean = abs(alpha) ** 2
    if mean == 0.0:
        return 0.0
    # P(N > cutoff) for N ~ Poisson(mean) is the regularized lower gamma.
    return float(scipy.special.gammainc(cutoff + 1, mean))


def coherent_amplitudes(alpha: complex, cutoff: int) -> np.ndarray:
    n = np.arange(cutoff + 1)
    amps = np.zeros(cutoff + 1, dtype=complex)
    if alpha == 0:
        amps[0] = 1.0
        return amps
    # log space keeps large |alpha| from overflowing alpha**n / sqrt(n!)
    log_mag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * scipy.special.gammaln(n + 1)
    return np.exp(log_mag + 1j * n * np.angle(alpha))


def coherent_state(alpha: complex, cutoff: int) -> FockVector:
    """Coherent state truncated at ``cutoff``; ``leakage`` holds the lost tail."""
    return FockVector(coherent_amplitudes(complex(alpha), cutoff),
                      coherent_leakage(alpha, cutoff))


def annihilation_matrix(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1).astype(complex)


def creation_matrix(cutoff: int) -> np.ndarray:
    return annihilation_matrix(cutoff).T.copy()


def number_operator(cutoff: int) -> ModeOperator:
    return ModeOperator(np.diag(np.arange(cutoff + 1, dtype=complex)))


def identity(cutoff: int) -> ModeOperator:
    return ModeOperator(np.eye(cutoff + 1, dtype=complex))


def ladder_and_attenuation(kind: str, T: complex = 1.0, cutoff: int = 0) -> ModeOperator:
    """Creation, annihilation, or the attenuation operator ``T**n``.

    Args:
        kind: one of ``"create"``, ``"annihilate"``, ``"attenuate"``.
        T: attenuation factor, only used for ``"attenuate"``.
        cutoff: largest photon number represented.
    """
    if kind == "create":
        return ModeOperator(creation_matrix(cutoff))
    if kind == "annihilate":
        return ModeOperator(annihilation_matrix(cutoff))
    if kind == "attenuate":
        if T == 0:
            raise ValueError("singular attenuation")
        return ModeOperator(np.diag(complex(T) ** np.arange(cutoff + 1)))
    raise ValueError(f"unknown operator kind {kind!r}")


def displacement_guard(alpha: complex, cutoff: int = 0) -> int:
    """Extra Fock levels needed so that displacing states up to ``cutoff`` by
    ``alpha`` stays clear of the truncation edge."""
    mag = abs(alpha)
    reach = math.sqrt(cutoff) + mag
    default = 2 * math.ceil(mag ** 2) + 10
    return max(default, math.ceil(reach ** 2 + 8 * reach) + 10 - cutoff)


def displacement_operator(alpha: complex, cutoff: int, guard: int | None = None) -> ModeOperator:
    """Truncation of ``D(alpha) = exp(alpha a^dag - alpha^* a)``.

    The generator is exponentiated at ``cutoff + guard`` and the result is
    cropped, so every retained column is accurate. ``leakage`` reports the
    coherent tail of ``D(alpha)|0>`` above the cutoff.
    """
    alpha = complex(alpha)
    if alpha == 0:
        return identity(cutoff)
    guard = displacement_guard(alpha, cutoff) if guard is None else guard
    big = cutoff + guard
    a = annihilation_matrix(big)
    gen = alpha * a.conj().T - alpha.conjugate() * a
    full = scipy.linalg.expm(gen)
    return ModeOperator(full[: cutoff + 1, : cutoff + 1], coherent_leakage(alpha, cutoff))


def _sparse_generator(alpha: complex, dim: int):
    sq = np.sqrt(np.arange(1, dim, dtype=float))
    return scipy.sparse.diags(
        [-np.conj(alpha) * sq, alpha * sq], offsets=[1, -1], shape=(dim, dim), format="csr", dtype=complex
    )


def displace_vector(vec: np.ndarray, alpha: complex) -> np.ndarray:
    """Apply ``D(alpha)`` to a raw amplitude array within its own dimension.

    The caller is responsible for padding ``vec`` far enough above its
    support; weight pushed past the last level is lost.
    """
    if alpha == 0:
        return np.array(vec, dtype=complex)
    return expm_multiply(_sparse_generator(complex(alpha), vec.size), np.asarray(vec, dtype=complex))


def displacement_columns(alpha: complex, cutoff: int, work: int) -> np.ndarray:
    """``D(alpha)|n>`` for ``n <= cutoff`` as columns of a ``(work+1, cutoff+1)`` array."""
    basis = np.eye(work + 1, cutoff + 1, dtype=complex)
    if alpha == 0:
        return basis
    return expm_multiply(_sparse_generator(complex(alpha), work + 1), basis)


def create_vector(vec: np.ndarray, times: int = 1) -> np.ndarray:
    """``(a^dag)**times`` on a raw amplitude array; top levels fall off the edge."""
    out = np.asarray(vec, dtype=complex)
    n = np.arange(out.size)
    for _ in range(times):
        shifted = np.zeros_like(out)
        shifted[1:] = np.sqrt(n[1:]) * out[:-1]
        out = shifted
    return out


def annihilate_vector(vec: np.ndarray, times: int = 1) -> np.ndarray:
    out = np.asarray(vec, dtype=complex)
    n = np.arange(out.size)
    for _ in range(times):
        shifted = np.zeros_like(out)
        shifted[:-1] = np.sqrt(n[1:]) * out[1:]
        out = shifted
    return out


def attenuate_vector(vec: np.ndarray, T: complex) -> np.ndarray:
    return np.asarray(vec, dtype=complex) * complex(T) ** np.arange(len(vec))


def exp_annihilate_vector(vec: np.ndarray, x: complex) -> np.ndarray:
    """``exp(x a)`` on a raw amplitude array (a finite sum)."""
    vec = np.asarray(vec, dtype=complex)
    out = vec.copy()
    term = vec
    for k in range(1, vec.size):
        term = annihilate_vector(term) * (x / k)
        out = out + term
    return out


# A state ``D(z)|phi>`` is carried as the pair (phi, z). Attenuation and
# photon adding act on ``phi`` through the normal-ordering identities
#   T^n D(z) = exp(-(1-|T|^2)|z|^2/2) D(Tz) T^n exp(-(1-|T|^2) z^* a),
#   a^dag D(z) = D(z) (a^dag + z^*),
# so ``phi`` never holds more photons than were added and large
# displacements cost no precision.


def displaced_attenuate(phi: np.ndarray, z: complex, T: complex) -> tuple[np.ndarray, complex, float]:
    """``T^n D(z)|phi> = exp(log_scale) D(z')|phi'>``; returns ``(phi', z', log_scale)``."""
    loss = 1.0 - abs(T) ** 2
    phi = attenuate_vector(exp_annihilate_vector(phi, -loss * complex(z).conjugate()), T)
    return phi, complex(T) * z, -loss * abs(z) ** 2 / 2


def displaced_create(phi: np.ndarray, z: complex, times: int = 1) -> np.ndarray:
    """``(a^dag)^times D(z)|phi> = D(z)|phi'>``; ``phi'`` grows by ``times`` levels."""
    out = np.asarray(phi, dtype=complex)
    for _ in range(times):
        out = np.append(out, 0)
        out = create_vector(out) + complex(z).conjugate() * out
    return out


def displaced_shift(phi: np.ndarray, z: complex, alpha: complex) -> tuple[np.ndarray, complex]:
    """``D(alpha) D(z)|phi>`` with the composition phase folded into ``phi``."""
    z, alpha = complex(z), complex(alpha)
    phase = np.exp((alpha * z.conjugate() - alpha.conjugate() * z) / 2)
    return np.asarray(phi, dtype=complex) * phase, z + alpha


def materialize(phi: np.ndarray, z: complex, cutoff: int) -> tuple[np.ndarray, float]:
    """Amplitudes of ``D(z)|phi>`` up to ``cutoff`` and the weight above it (relative)."""
    phi = np.asarray(phi, dtype=complex)
    top = max(cutoff, phi.size - 1)
    reach = math.sqrt(top) + abs(z)
    work = top + (math.ceil(reach ** 2 + 8 * reach) + 10 if z != 0 else 0)
    vec = displace_vector(_resize_vector(phi, work), z)
    total = float(np.vdot(vec, vec).real)
    kept = vec[: cutoff + 1]
    leakage = max(0.0, 1.0 - float(np.vdot(kept, kept).real) / total) if total > 0 else 0.0
    return kept, leakage


def overlap(a: FockVector, b: FockVector) -> complex:
    """``<a|b>``; the shorter vector is zero-padded."""
    size = max(a.cutoff, b.cutoff)
    return complex(np.vdot(_resize_vector(a.amplitudes, size), _resize_vector(b.amplitudes, size)))


def fidelity(a: FockVector, rho: DensityMatrix) -> float:
    """``<a|rho|a>`` clipped to [0, 1]."""
    size = max(a.cutoff, rho.cutoff)
    v = _resize_vector(a.amplitudes, size)
    value = np.vdot(v, _resize_matrix(rho.elements, size) @ v)
    return float(np.clip(value.real, 0.0, 1.0))


def ray_fidelity(a: FockVector, b: FockVector) -> float:
    """Squared overlap of the normalized rays through ``a`` and ``b``."""
    denom = a.norm() ** 2 * b.norm() ** 2
    if denom == 0.0:
        raise NullStateError("null state")
    return float(min(1.0, abs(overlap(a, b)) ** 2 / denom))
