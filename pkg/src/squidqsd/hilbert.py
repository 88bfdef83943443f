"""Dense linear algebra on truncated bosonic Fock spaces.

Operators and states are plain ``numpy`` arrays (complex128). Composite
spaces are ordered with factor 0 as the slowest-varying index, which is the
ordering produced by ``np.kron`` and by ``psi.reshape(dims)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateStateError, HermiticityError, InvalidDimensionError, TruncationError

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
OCCUPANCY_WARN = 1e-6
OCCUPANCY_ABORT = 1e-3


@dataclass(frozen=True)
class FockSpace:
    """A single bosonic mode truncated to ``dim`` levels (0 .. dim-1)."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise InvalidDimensionError(f"Fock dimension must be an integer >= 2, got {self.dim!r}")


def _dim(space) -> int:
    if isinstance(space, FockSpace):
        return space.dim
    return FockSpace(int(space)).dim


def annihilation(space) -> np.ndarray:
    """Lowering operator with ``a[n, n+1] = sqrt(n+1)``."""
    n = _dim(space)
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1).astype(complex)


def creation(space) -> np.ndarray:
    return annihilation(space).conj().T


def number(space) -> np.ndarray:
    n = _dim(space)
    return np.diag(np.arange(n, dtype=float)).astype(complex)


def quadratures(space) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x, p)`` with x = (a + a†)/√2 and p = i(a† − a)/√2."""
    a = annihilation(space)
    ad = a.conj().T
    return (a + ad) / math.sqrt(2.0), 1j * (ad - a) / math.sqrt(2.0)


def identity(dims: Sequence[int] | int) -> np.ndarray:
    if np.isscalar(dims):
        dims = [int(dims)]
    return np.eye(int(np.prod(dims)), dtype=complex)


def hermiticity_error(op: np.ndarray) -> float:
    op = np.asarray(op)
    return float(np.max(np.abs(op - op.conj().T))) if op.size else 0.0


def is_hermitian(op: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return hermiticity_error(op) <= tol


def _check_square(op: np.ndarray) -> None:
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise InvalidDimensionError(f"operator must be a square matrix, got shape {op.shape}")


def hermitian_function(op: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a real scalar function to a Hermitian matrix via ``eigh``.

    Raises
    ------
    HermiticityError
        If ``op`` deviates from its adjoint by more than 1e-10 in max-norm.
    """
    op = np.asarray(op, dtype=complex)
    _check_square(op)
    err = hermiticity_error(op)
    if err > HERMITIAN_TOL:
        raise HermiticityError(f"operator is not Hermitian (max |A - A†| = {err:.3e})")
    evals, evecs = np.linalg.eigh(0.5 * (op + op.conj().T))
    out = (evecs * np.asarray(f(evals), dtype=float)) @ evecs.conj().T
    return 0.5 * (out + out.conj().T)


def embed(op: np.ndarray, slot: int, dims: Sequence[int]) -> np.ndarray:
    """Kronecker-embed a single-factor operator at position ``slot``."""
    op = np.asarray(op, dtype=complex)
    _check_square(op)
    dims = [int(d) for d in dims]
    if not 0 <= slot < len(dims):
        raise InvalidDimensionError(f"slot {slot} out of range for {len(dims)} factors")
    if op.shape[0] != dims[slot]:
        raise InvalidDimensionError(
            f"operator of size {op.shape[0]} does not match factor dimension {dims[slot]}"
        )
    left = int(np.prod(dims[:slot], dtype=int))
    right = int(np.prod(dims[slot + 1:], dtype=int))
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def expectation(state: np.ndarray, op: np.ndarray) -> complex:
    """⟨ψ|op|ψ⟩ (no normalisation is applied)."""
    state = np.asarray(state)
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[1] != state.shape[-1]:
        raise InvalidDimensionError(
            f"operator shape {op.shape} incompatible with state length {state.shape[-1]}"
        )
    return complex(np.vdot(state, op @ state))


def norm(state: np.ndarray) -> float:
    return float(np.linalg.norm(state))


def normalize(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    nrm = np.linalg.norm(state)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise DegenerateStateError("cannot normalise a zero-norm or non-finite state")
    return state / nrm


def basis_state(dims: Sequence[int] | int, levels: Sequence[int] | int) -> np.ndarray:
    """Product Fock state |n0⟩⊗|n1⟩⊗… as a flat amplitude vector."""
    if np.isscalar(dims):
        dims, levels = [int(dims)], [int(levels)]
    psi = np.zeros(tuple(dims), dtype=complex)
    psi[tuple(levels)] = 1.0
    return psi.ravel()


def coherent_state(space, alpha: complex) -> np.ndarray:
    """Normalised truncated coherent state with amplitude ``alpha``."""
    n = _dim(space)
    if alpha == 0:
        return basis_state(n, 0)
    k = np.arange(n)
    log_fact = np.array([math.lgamma(j + 1.0) for j in k])
    log_mag = -0.5 * abs(alpha) ** 2 + k * math.log(abs(alpha)) - 0.5 * log_fact
    return normalize(np.exp(log_mag + 1j * k * np.angle(alpha)))


def padded_block(builder: Callable[[int], np.ndarray], dim: int, pad: int) -> np.ndarray:
    """Evaluate ``builder`` on a larger space and keep the leading ``dim`` block.

    Products of truncated ladder operators are wrong near the top of the
    space; building in ``dim + pad`` levels gives exact matrix elements for
    polynomials of degree <= pad.
    """
    big = np.asarray(builder(dim + pad))
    return np.ascontiguousarray(big[:dim, :dim])


def truncation_occupancy(state: np.ndarray, dims: Sequence[int], top: int = 2) -> np.ndarray:
    """Population in the highest ``top`` Fock levels of each factor."""
    psi = np.abs(np.asarray(state).reshape(tuple(dims))) ** 2
    out = np.empty(len(dims))
    for k in range(len(dims)):
        marginal = psi.sum(axis=tuple(j for j in range(len(dims)) if j != k))
        out[k] = marginal[-top:].sum()
    return out


def check_truncation(occupancy, warn: float = OCCUPANCY_WARN, abort: float = OCCUPANCY_ABORT) -> None:
    worst = float(np.max(occupancy))
    if worst > abort:
        raise TruncationError(
            f"top-level Fock population {worst:.3e} exceeds {abort:g}; increase fock_dim"
        )
    if worst > warn:
        logger.warning("top-level Fock population %.3e exceeds %g", worst, warn)


def dump_matrix(path, array: np.ndarray) -> None:
    """Write a matrix (or column vector) in the ``rows cols`` + ``re im`` text format."""
    arr = np.asarray(array, dtype=complex)
    if arr.ndim == 1:
        arr = arr[:, None]
    rows, cols = arr.shape
    pairs = np.column_stack([arr.real.ravel(), arr.imag.ravel()])
    with open(path, "w") as fh:
        fh.write(f"{rows} {cols}\n")
        np.savetxt(fh, pairs, fmt="%.17g")


def load_matrix(path) -> np.ndarray:
    with open(path) as fh:
        rows, cols = (int(v) for v in fh.readline().split())
        data = np.array(fh.read().split(), dtype=float)
    if data.size != 2 * rows * cols:
        raise InvalidDimensionError(f"{path}: expected {2 * rows * cols} numbers, found {data.size}")
    return (data[0::2] + 1j * data[1::2]).reshape(rows, cols)
