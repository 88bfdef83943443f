"""Reduced density matrices and entropy of entanglement for two-factor pure states."""

from __future__ import annotations

import logging

import numpy as np

from .errors import InvalidDensityMatrixError, InvalidDimensionError

logger = logging.getLogger(__name__)

DENSITY_TOL = 1e-10
CLAMP_REPORT = 1e-8

# eigenvalue clamping audit: number of clamps above CLAMP_REPORT and the largest one seen
clamp_audit = {"count": 0, "max": 0.0}


def partial_trace(state, keep: int, dims) -> np.ndarray:
    """Reduced density matrix of factor ``keep`` for a pure state on two factors."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 2:
        raise InvalidDimensionError(f"partial_trace needs exactly two factors, got dims={dims}")
    if keep not in (0, 1):
        raise InvalidDimensionError(f"keep must be 0 or 1, got {keep!r}")
    psi = np.asarray(state, dtype=complex).reshape(dims)
    if keep == 1:
        psi = psi.T
    rho = psi @ psi.conj().T
    return 0.5 * (rho + rho.conj().T)


def check_density_matrix(rho, tol: float = DENSITY_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidDensityMatrixError(f"density matrix must be square, got {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > tol:
        raise InvalidDensityMatrixError(f"density matrix not Hermitian (deviation {herm:.3e})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise InvalidDensityMatrixError(f"density matrix trace is {tr!r}")
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if evals.min() < -tol:
        raise InvalidDensityMatrixError(f"negative eigenvalue {evals.min():.3e}")
    return evals


def von_neumann_entropy(rho) -> float:
    """-Tr[rho ln rho] with eigenvalues clamped to [0, 1] and 0 ln 0 = 0."""
    evals = check_density_matrix(rho)
    clamped = np.clip(evals, 0.0, 1.0)
    excess = float(np.max(np.abs(clamped - evals)))
    if excess > CLAMP_REPORT:
        clamp_audit["count"] += 1
        clamp_audit["max"] = max(clamp_audit["max"], excess)
        logger.debug("clamped density-matrix eigenvalue by %.3e", excess)
    nz = clamped[clamped > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def entanglement_entropy(state, dims) -> float:
    return von_neumann_entropy(partial_trace(state, 0, dims))
