"""Circuit parameters, dimensionless groups, Hamiltonians and Lindblad operators.

Two coupled systems are modelled:

* identical driven SQUID rings, flux quadrature ``x`` and charge quadrature
  ``p`` in harmonic-oscillator units of the bare LC circuit;
* identical driven double-well Duffing oscillators in ħ-scaled units.

Besides the plain dense builders, each system exposes a *local expansion*
around a phase-space centre ``(xc, pc)``. The trajectory engine uses it to
evolve the state in a displaced Fock basis that follows the wave packet, so
packets far from the origin (large capacitance, small β) stay representable in
a handful of Fock levels.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import hilbert
from .constants import ELEMENTARY_CHARGE, FLUX_QUANTUM, HBAR
from .errors import ConfigError

logger = logging.getLogger(__name__)

SQUID = 0
DUFFING = 1


@dataclass(frozen=True)
class CircuitParams:
    """Physical constants of one SQUID ring (SI units).

    ``Phi_x_dc`` is the static flux bias; the drive enters as a flux
    modulation of amplitude ``L * I_d`` at angular frequency ``omega_d``.
    """

    C: float
    L: float
    R: float
    I_c: float
    I_d: float
    omega_d: float
    Phi_x_dc: float

    def __post_init__(self):
        for name in ("C", "L", "R", "I_c"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ConfigError(f"{name} must be strictly positive, got {val!r}")
        if not self.I_d >= 0:
            raise ConfigError(f"I_d must be non-negative, got {self.I_d!r}")
        if not self.omega_d > 0:
            raise ConfigError(f"omega_d must be positive, got {self.omega_d!r}")

    @classmethod
    def from_dimensionless(cls, C=1e-13, L=3e-10, R=100.0, I_d=0.9e-6, beta_squid=2.0,
                           omega_d_ratio=1.0, phi_x=0.5) -> "CircuitParams":
        """Build from the convenient mixed set used in configuration files."""
        I_c = beta_squid * FLUX_QUANTUM / (2.0 * math.pi * L)
        omega0 = 1.0 / math.sqrt(L * C)
        return cls(C=C, L=L, R=R, I_c=I_c, I_d=I_d, omega_d=omega_d_ratio * omega0,
                   Phi_x_dc=phi_x * FLUX_QUANTUM)

    @classmethod
    def baseline(cls) -> "CircuitParams":
        return cls.from_dimensionless()


@dataclass(frozen=True)
class NormalizedParams:
    omega0: float
    beta_squid: float
    zeta: float
    phi_d: float
    omega: float
    phi_x: float
    Omega: float
    cos_prefactor: float
    # x = flux_to_x * Phi / Phi0
    flux_to_x: float


def derive_dimensionless(p: CircuitParams) -> NormalizedParams:
    omega0 = 1.0 / math.sqrt(p.L * p.C)
    return NormalizedParams(
        omega0=omega0,
        beta_squid=2.0 * math.pi * p.L * p.I_c / FLUX_QUANTUM,
        zeta=1.0 / (2.0 * omega0 * p.R * p.C),
        phi_d=p.I_d * p.L / FLUX_QUANTUM,
        omega=p.omega_d / omega0,
        phi_x=p.Phi_x_dc / FLUX_QUANTUM,
        Omega=math.sqrt((4.0 * ELEMENTARY_CHARGE**2 / HBAR) * math.sqrt(p.L / p.C)),
        cos_prefactor=p.I_c / (2.0 * ELEMENTARY_CHARGE * omega0),
        flux_to_x=math.sqrt(p.C * omega0 / HBAR) * FLUX_QUANTUM,
    )


def scale_params(p: CircuitParams, a: float, b: float = 1.0) -> CircuitParams:
    """Rescale C -> aC and L -> bL with the compensating circuit changes.

    R -> sqrt(b/a) R, I_d -> I_d/sqrt(b), omega_d -> omega_d/sqrt(ab) and
    I_c -> I_c/b. For b != 1 the I_d rule does not keep phi_d fixed (it
    becomes sqrt(b) phi_d); a warning is emitted in that case.
    """
    if not (a > 0 and b > 0):
        raise ConfigError(f"scale factors must be positive, got a={a!r}, b={b!r}")
    if b != 1.0:
        warnings.warn(
            "scale_params with b != 1: the I_d -> I_d/sqrt(b) rule changes phi_d by sqrt(b)",
            stacklevel=2,
        )
    return replace(
        p,
        C=a * p.C,
        L=b * p.L,
        R=math.sqrt(b / a) * p.R,
        I_c=p.I_c / b,
        I_d=p.I_d / math.sqrt(b),
        omega_d=p.omega_d / math.sqrt(a * b),
    )


@dataclass(frozen=True)
class DuffingParams:
    beta: float = 0.25
    g: float = 0.3
    Gamma: float = 0.125
    mu: float = 0.2

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"Duffing beta must be positive, got {self.beta!r}")
        if not self.Gamma >= 0:
            raise ConfigError(f"Duffing Gamma must be non-negative, got {self.Gamma!r}")


def squid_drive_flux(np_: NormalizedParams, tau) -> float:
    """External flux (in units of Phi0) seen by each ring at time ``tau``."""
    return np_.phi_x + np_.phi_d * np.sin(np_.omega * tau)


def squid_drive_x(np_: NormalizedParams, tau) -> float:
    return np_.flux_to_x * squid_drive_flux(np_, tau)


@dataclass(frozen=True, eq=False)
class ModeOperators:
    """Single-mode operator blocks with exact truncated matrix elements."""

    dim: int
    a: np.ndarray
    n: np.ndarray
    x: np.ndarray
    p: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    p2: np.ndarray
    sym_xp: np.ndarray  # p x + x p

    def cos_sin(self, Omega: float) -> tuple[np.ndarray, np.ndarray]:
        return _cos_sin_blocks(self.dim, float(Omega))


@functools.lru_cache(maxsize=64)
def mode_operators(dim: int) -> ModeOperators:
    dim = hilbert.FockSpace(dim).dim
    pad = 6

    def poly(fn):
        def build(m):
            x, p = hilbert.quadratures(m)
            return fn(x, p)
        out = hilbert.padded_block(build, dim, pad)
        out = 0.5 * (out + out.conj().T)
        out.setflags(write=False)
        return out

    x, p = hilbert.quadratures(dim)
    ops = dict(
        a=hilbert.annihilation(dim),
        n=hilbert.number(dim),
        x=x,
        p=p,
        x2=poly(lambda x, p: x @ x),
        x3=poly(lambda x, p: x @ x @ x),
        x4=poly(lambda x, p: x @ x @ x @ x),
        p2=poly(lambda x, p: p @ p),
        sym_xp=poly(lambda x, p: p @ x + x @ p),
    )
    for arr in ops.values():
        arr.setflags(write=False)
    return ModeOperators(dim=dim, **ops)


@functools.lru_cache(maxsize=64)
def _cos_sin_blocks(dim: int, Omega: float) -> tuple[np.ndarray, np.ndarray]:
    # cos/sin of a truncated x converge in the leading block as the
    # truncation grows; compute in a generously padded space.
    big = dim + max(40, dim)
    x, _ = hilbert.quadratures(big)
    c = hilbert.hermitian_function(Omega * x, np.cos)[:dim, :dim].copy()
    s = hilbert.hermitian_function(Omega * x, np.sin)[:dim, :dim].copy()
    c.setflags(write=False)
    s.setflags(write=False)
    return c, s


def frame_quadratures(dim: int, M=None, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Rotated quadratures (u, v) = M (x, p) on ``dim + pad`` levels.

    ``M`` is a real symplectic 2 × 2 matrix describing a Gaussian frame; with
    ``M=None`` this is plain (x, p). Both are tridiagonal, so their leading
    ``dim`` block is exact.
    """
    x, p = hilbert.quadratures(dim + pad)
    if M is None:
        return x.astype(complex), p.astype(complex)
    M = np.asarray(M, dtype=float)
    return M[0, 0] * x + M[0, 1] * p, M[1, 0] * x + M[1, 1] * p


def frame_lindblad(M=None) -> tuple[complex, complex]:
    """Coefficients (A, B) with G(M)† a G(M) = A a + B a† for the frame map M."""
    if M is None:
        return 1.0 + 0.0j, 0.0j
    M = np.asarray(M, dtype=float)
    A = 0.5 * complex(M[0, 0] + M[1, 1], M[1, 0] - M[0, 1])
    B = 0.5 * complex(M[0, 0] - M[1, 1], M[1, 0] + M[0, 1])
    return A, B


def _frame_poly(dim: int, M, fn, pad: int = 6) -> np.ndarray:
    u, v = frame_quadratures(dim, M, pad)
    out = fn(u, v)[:dim, :dim]
    return 0.5 * (out + out.conj().T)


def _frame_cos_sin(dim: int, M, Omega: float) -> tuple[np.ndarray, np.ndarray]:
    big = max(40, dim)
    u, _ = frame_quadratures(dim, M, big)
    w, V = np.linalg.eigh(Omega * u)
    c = ((V * np.cos(w)) @ V.conj().T)[:dim, :dim]
    s = ((V * np.sin(w)) @ V.conj().T)[:dim, :dim]
    return 0.5 * (c + c.conj().T), 0.5 * (s + s.conj().T)


def _fock_dim(space) -> int:
    return space.dim if isinstance(space, hilbert.FockSpace) else hilbert.FockSpace(int(space)).dim


def squid_damping_term(np_: NormalizedParams, space) -> np.ndarray:
    ops = mode_operators(_fock_dim(space))
    return 0.5 * np_.zeta * ops.sym_xp


def build_squid_hamiltonian(np_: NormalizedParams, tau: float, space) -> np.ndarray:
    """Single-ring Hamiltonian (units of ħω0) including the damping shift term."""
    ops = mode_operators(_fock_dim(space))
    cos_x, _ = ops.cos_sin(np_.Omega)
    xt = squid_drive_x(np_, tau)
    eye = np.eye(ops.dim)
    return (
        0.5 * ops.p2
        + 0.5 * (ops.x2 - 2.0 * xt * ops.x + xt * xt * eye)
        - np_.cos_prefactor * cos_x
        + squid_damping_term(np_, space)
    )


def _two_factor_dims(spaces) -> list[int]:
    if len(spaces) != 2:
        raise ConfigError("coupled systems take exactly two Fock spaces")
    dims = [_fock_dim(s) for s in spaces]
    if dims[0] != dims[1]:
        raise ConfigError("the two coupled modes must share a Fock dimension")
    return dims


def build_coupled_squid_hamiltonian(np_: NormalizedParams, tau: float, spaces, mu: float) -> np.ndarray:
    dims = _two_factor_dims(spaces)
    h = build_squid_hamiltonian(np_, tau, dims[0])
    x = mode_operators(dims[0]).x
    return (
        hilbert.embed(h, 0, dims)
        + hilbert.embed(h, 1, dims)
        + mu * hilbert.embed(x, 0, dims) @ hilbert.embed(x, 1, dims)
    )


def build_duffing_hamiltonian(dp: DuffingParams, t: float, space) -> np.ndarray:
    ops = mode_operators(_fock_dim(space))
    b = dp.beta
    return (
        0.5 * ops.p2
        + 0.25 * b * b * ops.x4
        - 0.5 * ops.x2
        + (dp.g / b) * math.cos(t) * ops.x
        + 0.5 * dp.Gamma * ops.sym_xp
    )


def build_coupled_duffing(dp: DuffingParams, t: float, spaces) -> np.ndarray:
    dims = _two_factor_dims(spaces)
    h = build_duffing_hamiltonian(dp, t, dims[0])
    x = mode_operators(dims[0]).x
    return (
        hilbert.embed(h, 0, dims)
        + hilbert.embed(h, 1, dims)
        + dp.mu * hilbert.embed(x, 0, dims) @ hilbert.embed(x, 1, dims)
    )


def lindblad_set(damping: float, spaces) -> list[np.ndarray]:
    """One Ohmic Lindblad operator sqrt(2*damping) a per mode."""
    if not damping >= 0:
        raise ConfigError(f"damping rate must be non-negative, got {damping!r}")
    dims = [_fock_dim(s) for s in spaces]
    s = math.sqrt(2.0 * damping)
    return [s * hilbert.embed(hilbert.annihilation(d), k, dims) for k, d in enumerate(dims)]


@dataclass(frozen=True, eq=False)
class SquidSystem:
    """Two identical coupled SQUID rings sharing one drive."""

    params: NormalizedParams
    fock_dim: int = 30
    mu: float = 0.2
    circuit: CircuitParams | None = field(default=None, compare=False)

    kind = "squid"
    # the cosine term spreads packets into non-Gaussian shapes at moderate C,
    # where a squeezed frame costs more Fock levels than it saves
    default_squeeze_threshold = 0.0

    @classmethod
    def from_circuit(cls, circuit: CircuitParams, fock_dim=30, mu=0.2) -> "SquidSystem":
        return cls(params=derive_dimensionless(circuit), fock_dim=fock_dim, mu=mu, circuit=circuit)

    @property
    def dims(self) -> list[int]:
        return [self.fock_dim, self.fock_dim]

    @property
    def damping(self) -> float:
        return self.params.zeta

    @property
    def drive_period(self) -> float:
        return 2.0 * math.pi / self.params.omega

    def hamiltonian(self, tau: float) -> np.ndarray:
        return build_coupled_squid_hamiltonian(self.params, tau, self.dims, self.mu)

    def lindblads(self) -> list[np.ndarray]:
        return lindblad_set(self.damping, self.dims)

    def default_centre(self) -> tuple[float, float]:
        """Quadrature centre of the displaced-vacuum start, (x(0), 0)."""
        return float(squid_drive_x(self.params, 0.0)), 0.0

    def output_transform(self) -> tuple[float, float]:
        """(scale, offset) mapping ⟨x⟩ to (Φ - Φx)/Φ0; ⟨p⟩ is divided by the same scale."""
        return 1.0 / self.params.flux_to_x, -self.params.phi_x

    def local_blocks(self, M=None) -> np.ndarray:
        """Matrices whose coefficient-weighted sum is the centred non-linear remainder.

        With a frame map ``M`` the blocks are expressed in the squeezed
        quadratures (u, v) = M (x, p) of that frame.
        """
        n = self.fock_dim
        eye = np.eye(n)
        Om = self.params.Omega
        zeta = self.params.zeta
        if M is None:
            ops = mode_operators(n)
            c, s = ops.cos_sin(Om)
            blocks = [0.5 * ops.p2 + 0.5 * ops.x2 + 0.5 * zeta * ops.sym_xp, c - eye, s - Om * ops.x]
        else:
            c, s = _frame_cos_sin(n, M, Om)
            u, _ = frame_quadratures(n, M)
            blocks = [_frame_poly(n, M, lambda u, v: 0.5 * (v @ v + u @ u) + 0.5 * zeta * (u @ v + v @ u)),
                      c - eye, s - Om * u]
        return np.ascontiguousarray(np.stack(blocks), dtype=complex)

    def kernel_params(self) -> np.ndarray:
        p = self.params
        return np.array([p.zeta, p.cos_prefactor, p.Omega, p.flux_to_x, p.phi_x, p.phi_d,
                         p.omega, self.mu], dtype=float)

    def local_hamiltonian(self, centre, other_centre, tau):
        """Host-side mirror of the kernel's local expansion (used for testing)."""
        blocks = self.local_blocks()
        coeff, fx, fp = _squid_local(self.kernel_params(), centre, other_centre, tau)
        return blocks[0] + coeff[0] * blocks[1] + coeff[1] * blocks[2], fx, fp

    def metadata(self) -> dict:
        meta = {"model": "squid", "fock_dim": self.fock_dim, "mu": self.mu,
                "normalized": asdict(self.params)}
        if self.circuit is not None:
            meta["circuit"] = asdict(self.circuit)
        return meta


def _squid_local(params, centre, other_centre, tau):
    zeta, K, Om, conv, phi_x, phi_d, omega, mu = params
    xc, pc = centre
    xd = conv * (phi_x + phi_d * math.sin(omega * tau))
    coeff = (-K * math.cos(Om * xc), K * math.sin(Om * xc))
    fx = (xc - xd) + K * Om * math.sin(Om * xc) + zeta * pc + mu * other_centre[0]
    fp = pc + zeta * xc
    return coeff, fx, fp


@dataclass(frozen=True, eq=False)
class DuffingSystem:
    """Two identical coupled Duffing oscillators."""

    params: DuffingParams
    fock_dim: int = 15

    kind = "duffing"
    default_squeeze_threshold = 4.0

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def dims(self) -> list[int]:
        return [self.fock_dim, self.fock_dim]

    @property
    def damping(self) -> float:
        return self.params.Gamma

    @property
    def drive_period(self) -> float:
        return 2.0 * math.pi

    def hamiltonian(self, t: float) -> np.ndarray:
        return build_coupled_duffing(self.params, t, self.dims)

    def lindblads(self) -> list[np.ndarray]:
        return lindblad_set(self.damping, self.dims)

    def default_centre(self) -> tuple[float, float]:
        """Bottom of the right-hand well, x = 1/beta (the origin is the barrier top)."""
        return 1.0 / self.params.beta, 0.0

    def output_transform(self) -> tuple[float, float]:
        return 1.0, 0.0

    def local_blocks(self, M=None) -> np.ndarray:
        b2 = self.params.beta ** 2
        G = self.params.Gamma
        if M is None:
            ops = mode_operators(self.fock_dim)
            blocks = [0.5 * ops.p2 - 0.5 * ops.x2 + 0.5 * G * ops.sym_xp + 0.25 * b2 * ops.x4,
                      ops.x3, ops.x2]
        else:
            n = self.fock_dim
            blocks = [
                _frame_poly(n, M, lambda u, v: 0.5 * (v @ v - u @ u) + 0.5 * G * (u @ v + v @ u)
                            + 0.25 * b2 * (u @ u @ u @ u)),
                _frame_poly(n, M, lambda u, v: u @ u @ u),
                _frame_poly(n, M, lambda u, v: u @ u),
            ]
        return np.ascontiguousarray(np.stack(blocks), dtype=complex)

    def kernel_params(self) -> np.ndarray:
        p = self.params
        return np.array([p.beta, p.g, p.Gamma, p.mu], dtype=float)

    def local_hamiltonian(self, centre, other_centre, t):
        blocks = self.local_blocks()
        coeff, fx, fp = _duffing_local(self.kernel_params(), centre, other_centre, t)
        return blocks[0] + coeff[0] * blocks[1] + coeff[1] * blocks[2], fx, fp

    def metadata(self) -> dict:
        return {"model": "duffing", "fock_dim": self.fock_dim, "duffing": asdict(self.params)}


def _duffing_local(params, centre, other_centre, t):
    beta, g, Gamma, mu = params
    xc, pc = centre
    b2 = beta * beta
    coeff = (b2 * xc, 1.5 * b2 * xc * xc)
    fx = b2 * xc**3 - xc + (g / beta) * math.cos(t) + Gamma * pc + mu * other_centre[0]
    fp = pc + Gamma * xc
    return coeff, fx, fp
