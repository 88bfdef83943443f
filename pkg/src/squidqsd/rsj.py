"""Classical resistively-shunted-junction dynamics of a single driven SQUID ring.

The state is the normalised flux ``phi = (Phi - Phi_x)/Phi0`` and its
velocity with respect to ``tau = omega0 * t``:

    phi'' + 2 zeta phi' + phi + (beta/2pi) sin[2pi(phi + phi_x)] = phi_d sin(omega tau)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConfigError, DivergenceError
from .model import NormalizedParams
from .qsd import read_csv, write_csv

CSV_COLUMNS = ["tau", "phi", "phi_dot"]
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RsjState:
    phi: float
    phi_dot: float
    tau: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.phi, self.phi_dot, self.tau)):
            raise DivergenceError(f"non-finite RSJ state {self}")


@dataclass
class RsjTrajectory:
    tau: np.ndarray
    phi: np.ndarray
    phi_dot: np.ndarray

    def __len__(self):
        return len(self.tau)

    def state(self, k: int) -> RsjState:
        return RsjState(float(self.phi[k]), float(self.phi_dot[k]), float(self.tau[k]))

    def energy(self, np_: NormalizedParams) -> np.ndarray:
        return rsj_energy(self.phi, self.phi_dot, np_)

    def to_csv(self, path) -> None:
        write_csv(path, CSV_COLUMNS, np.column_stack([self.tau, self.phi, self.phi_dot]))

    @classmethod
    def from_csv(cls, path) -> "RsjTrajectory":
        header, data = read_csv(path)
        if header != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return cls(data[:, 0].copy(), data[:, 1].copy(), data[:, 2].copy())


def _accel(phi, phi_dot, tau, np_: NormalizedParams):
    return (np_.phi_d * np.sin(np_.omega * tau) - 2.0 * np_.zeta * phi_dot - phi
            - np_.beta_squid / TWO_PI * np.sin(TWO_PI * (phi + np_.phi_x)))


def rsj_rhs(s: RsjState, np_: NormalizedParams) -> tuple[float, float]:
    """(dphi/dtau, dphi_dot/dtau) at state ``s``."""
    return s.phi_dot, float(_accel(s.phi, s.phi_dot, s.tau, np_))


def rsj_energy(phi, phi_dot, np_: NormalizedParams):
    """½φ̇² + ½φ² − (β/4π²) cos[2π(φ+φx)]; decreases at rate 2ζφ̇² when undriven."""
    phi = np.asarray(phi, dtype=float)
    phi_dot = np.asarray(phi_dot, dtype=float)
    return (0.5 * phi_dot**2 + 0.5 * phi**2
            - np_.beta_squid / TWO_PI**2 * np.cos(TWO_PI * (phi + np_.phi_x)))


def _grid(dt, t_total, sample_stride):
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt!r}")
    if not t_total > 0:
        raise ConfigError(f"t_total must be positive, got {t_total!r}")
    n_steps = int(round(t_total / dt))
    if n_steps < 1:
        raise ConfigError("t_total shorter than one step")
    return n_steps, n_steps // sample_stride + 1


def integrate_rsj(initial: RsjState, np_: NormalizedParams, dt: float, t_total: float,
                  sample_stride: int = 1, method: str = "rk4", rtol: float = 1e-10) -> RsjTrajectory:
    """Integrate from ``initial`` and sample every ``sample_stride`` steps.

    ``method="rk4"`` is the fixed-step production scheme. ``method="adaptive"``
    uses an embedded 8(5,3) Runge-Kutta pair with dense output on the same
    sample grid; it is meant as an accuracy reference.
    """
    n_steps, n_samples = _grid(dt, t_total, sample_stride)
    taus = initial.tau + dt * sample_stride * np.arange(n_samples)
    if method == "adaptive":
        def f(t, y):
            return [y[1], _accel(y[0], y[1], t, np_)]
        sol = solve_ivp(f, (taus[0], taus[-1]), [initial.phi, initial.phi_dot], method="DOP853",
                        t_eval=taus, rtol=rtol, atol=rtol * 1e-2)
        if not sol.success or not np.all(np.isfinite(sol.y)):
            raise DivergenceError(f"adaptive RSJ integration failed: {sol.message}")
        return RsjTrajectory(taus, sol.y[0].copy(), sol.y[1].copy())
    if method != "rk4":
        raise ConfigError(f"unknown RSJ method {method!r}")

    phi = np.empty(n_samples)
    vel = np.empty(n_samples)
    y, v, t = initial.phi, initial.phi_dot, initial.tau
    phi[0], vel[0] = y, v
    h = dt
    for k in range(1, n_samples):
        for step in range((k - 1) * sample_stride, k * sample_stride):
            t = initial.tau + step * h
            a1 = _accel(y, v, t, np_)
            y2, v2 = y + 0.5 * h * v, v + 0.5 * h * a1
            a2 = _accel(y2, v2, t + 0.5 * h, np_)
            y3, v3 = y + 0.5 * h * v2, v + 0.5 * h * a2
            a3 = _accel(y3, v3, t + 0.5 * h, np_)
            y4, v4 = y + h * v3, v + h * a3
            a4 = _accel(y4, v4, t + h, np_)
            y = y + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if not (math.isfinite(y) and math.isfinite(v)):
            raise DivergenceError(f"RSJ state became non-finite near tau={t:.6g}")
        phi[k], vel[k] = y, v
    return RsjTrajectory(taus, phi, vel)


def equilibria(np_: NormalizedParams, lo: float = -2.0, hi: float = 2.0, n_grid: int = 4001) -> np.ndarray:
    """Static roots of φ + (β/2π) sin[2π(φ+φx)] = 0 in [lo, hi] (grid scan + brentq)."""
    def g(phi):
        return phi + np_.beta_squid / TWO_PI * math.sin(TWO_PI * (phi + np_.phi_x))

    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([g(v) for v in grid])
    roots = []
    for k in range(n_grid - 1):
        if vals[k] == 0.0:
            roots.append(grid[k])
        elif vals[k] * vals[k + 1] < 0:
            roots.append(brentq(g, grid[k], grid[k + 1], xtol=1e-15))
    return np.array(roots)
