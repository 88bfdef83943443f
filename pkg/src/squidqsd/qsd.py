"""Quantum state diffusion: complex Wiener noise, the Itô step and trajectories."""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernel, hilbert
from .entangle import partial_trace, von_neumann_entropy
from .errors import ConfigError, DegenerateStateError, IntegratorError, TruncationError
from .model import DUFFING, SQUID, DuffingSystem, SquidSystem, frame_lindblad, frame_quadratures, mode_operators

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["tau", "x1", "p1", "x2", "p2", "S", "norm_drift", "occupancy"]


class NoiseStream:
    """Reproducible source of complex Wiener increments for one trajectory.

    The generator is a Philox counter-based bit generator keyed on
    ``(seed, trajectory_index)``; ``counter`` counts increments drawn so far.
    """

    def __init__(self, seed: int, trajectory_index: int = 0):
        self.seed = int(seed)
        self.trajectory_index = int(trajectory_index)
        self.counter = 0
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.trajectory_index,))
        self._rng = np.random.Generator(np.random.Philox(seq))

    def normals(self, n_steps: int, n_channels: int = 2) -> np.ndarray:
        """Standard normals of shape (n_steps, n_channels, 2) (real, imaginary)."""
        out = self._rng.standard_normal((n_steps, n_channels, 2))
        self.counter += n_steps * n_channels
        return out

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, trajectory_index={self.trajectory_index}, counter={self.counter})"


def complex_wiener(stream: NoiseStream, dt: float, size: int | None = None):
    """dξ = (η1 + iη2) sqrt(dt/2), so E[dξ] = E[dξ²] = 0 and E[|dξ|²] = dt."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt!r}")
    n = 1 if size is None else int(size)
    eta = stream.normals(n, 1)[:, 0, :]
    xi = (eta[:, 0] + 1j * eta[:, 1]) * math.sqrt(0.5 * dt)
    return complex(xi[0]) if size is None else xi


SCHEMES = {"euler": 1, "heun": 2, "rk4": 4}


def _drift(psi, H, Ls):
    """Deterministic part of the QSD increment per unit time (batched)."""
    nn = np.sum(np.abs(psi) ** 2, axis=-1, keepdims=True)
    d = -1j * (psi @ H.T)
    for L in Ls:
        lpsi = psi @ L.T
        ell = np.sum(psi.conj() * lpsi, axis=-1, keepdims=True) / nn
        d = d + ell.conj() * lpsi - 0.5 * (lpsi @ L.conj()) - 0.5 * np.abs(ell) ** 2 * psi
    return d


def qsd_step(state, H, Ls, dt, dxis, *, return_drift=False, scheme="euler"):
    """One step of the QSD Itô equation, then renormalise.

    With ``scheme="euler"`` this is the explicit Euler-Maruyama step with all
    expectations taken in the pre-step state (ħ = 1). ``"heun"`` and
    ``"rk4"`` integrate the deterministic part with Runge-Kutta stages at a
    frozen ``H``; the noise term stays the Euler-Maruyama increment at the
    pre-step state. ``state`` may carry leading batch axes (shape ``(..., d)``);
    ``dxis`` then has shape ``(..., len(Ls))``.
    """
    psi = np.asarray(state, dtype=complex)
    dxis = np.asarray(dxis, dtype=complex)
    if dxis.shape[-1:] != (len(Ls),) and len(Ls):
        raise ConfigError(f"need one increment per Lindblad operator ({len(Ls)}), got {dxis.shape}")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}")
    H = np.asarray(H)
    Ls = [np.asarray(L) for L in Ls]
    k1 = _drift(psi, H, Ls)
    if scheme == "euler":
        d = dt * k1
    elif scheme == "heun":
        d = 0.5 * dt * (k1 + _drift(psi + dt * k1, H, Ls))
    else:
        k2 = _drift(psi + 0.5 * dt * k1, H, Ls)
        k3 = _drift(psi + 0.5 * dt * k2, H, Ls)
        k4 = _drift(psi + dt * k3, H, Ls)
        d = dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    for j, L in enumerate(Ls):
        lpsi = psi @ L.T
        ell = np.sum(psi.conj() * lpsi, axis=-1, keepdims=True)
        d = d + (lpsi - ell * psi) * dxis[..., j:j + 1]
    new = psi + d
    nrm = np.linalg.norm(new, axis=-1, keepdims=True)
    if np.any(~np.isfinite(nrm)) or np.any(nrm < 1e-8):
        raise IntegratorError("state norm collapsed during QSD step; reduce dt")
    out = new / nrm
    if return_drift:
        return out, np.abs(nrm[..., 0] - 1.0)
    return out


@dataclass(frozen=True)
class IntegratorConfig:
    """Time grid and scheme options for one trajectory.

    ``track_frame`` evolves the state in a displaced, squeezed Fock basis that
    follows the packet. The frame is re-fitted to a mode's covariance when
    the ratio of its in-frame covariance eigenvalues exceeds
    ``squeeze_threshold`` (0 disables squeezing; the frame then only moves;
    None takes the system's ``default_squeeze_threshold``).
    ``scheme`` selects the Runge-Kutta order of the deterministic part of each
    step (see :func:`qsd_step`).
    """

    dt: float = 1e-3
    t_total: float = 10.0
    sample_stride: int = 100
    renormalize_every: int = 1
    track_frame: bool = True
    recentre_threshold: float = 0.5
    scheme: str = "rk4"
    phase_gauge: bool = True
    squeeze_threshold: float | None = None
    max_frame_stretch: float = 4.0
    occupancy_abort: float = hilbert.OCCUPANCY_ABORT

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if not self.t_total > 0:
            raise ConfigError(f"t_total must be positive, got {self.t_total!r}")
        if int(self.sample_stride) != self.sample_stride or self.sample_stride < 1:
            raise ConfigError(f"sample_stride must be a positive integer, got {self.sample_stride!r}")
        if self.renormalize_every != 1:
            raise ConfigError("only renormalize_every=1 is supported by the trajectory engine")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {sorted(SCHEMES)}, got {self.scheme!r}")
        if not (self.squeeze_threshold is None or self.squeeze_threshold == 0 or self.squeeze_threshold > 1):
            raise ConfigError(f"squeeze_threshold must be 0 or > 1, got {self.squeeze_threshold!r}")
        if not self.occupancy_abort > 0:
            raise ConfigError(f"occupancy_abort must be positive, got {self.occupancy_abort!r}")
        if not self.max_frame_stretch >= 1:
            raise ConfigError(f"max_frame_stretch must be >= 1, got {self.max_frame_stretch!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_total / self.dt))

    @property
    def n_samples(self) -> int:
        return self.n_steps // self.sample_stride + 1


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    exp_x1: np.ndarray
    exp_p1: np.ndarray
    exp_x2: np.ndarray
    exp_p2: np.ndarray
    entropy: np.ndarray
    norm_drift: np.ndarray
    truncation_occupancy: np.ndarray
    metadata: dict = field(default_factory=dict)

    def columns(self) -> np.ndarray:
        return np.column_stack([self.times, self.exp_x1, self.exp_p1, self.exp_x2, self.exp_p2,
                                self.entropy, self.norm_drift, self.truncation_occupancy])

    def __len__(self):
        return len(self.times)

    def to_csv(self, path, extra: dict | None = None) -> None:
        """Write the record; ``extra`` maps column name -> array appended on the right."""
        header = list(CSV_COLUMNS)
        data = self.columns()
        if extra:
            header += list(extra)
            data = np.column_stack([data] + [np.asarray(v, dtype=float) for v in extra.values()])
        write_csv(path, header, data)

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        header, data = read_csv(path)
        if header[:len(CSV_COLUMNS)] != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        cols = [data[:, k].copy() for k in range(len(CSV_COLUMNS))]
        return cls(*cols)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in np.atleast_2d(rows):
            writer.writerow([format_value(v) for v in row])


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    # adding 0.0 folds -0.0 into 0.0
    return f"{float(v) + 0.0:.15g}"


_BOOLS = {"true": 1.0, "false": 0.0}


def read_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = rows[0]
    data = np.array([[_BOOLS.get(v, v) for v in r] for r in rows[1:]], dtype=float)
    return header, data.reshape(len(rows) - 1, len(header))


def initial_state(system, kind: str = "displaced_vacuum", path=None, track_frame: bool = True):
    """Return ``(phi, alpha)``: in-frame amplitudes (N × N) and frame centres."""
    n = system.fock_dim
    if kind == "file":
        if path is None:
            raise ConfigError("initial_state=file requires initial_state_path")
        vec = hilbert.load_matrix(path).ravel()
        if vec.size != n * n:
            raise ConfigError(f"initial state file has {vec.size} amplitudes, expected {n * n}")
        return hilbert.normalize(vec).reshape(n, n), np.zeros(2, dtype=complex)
    if kind == "vacuum":
        xc, pc = 0.0, 0.0
    elif kind == "displaced_vacuum":
        xc, pc = system.default_centre()
    else:
        raise ConfigError(f"unknown initial_state {kind!r}")
    centre = (xc + 1j * pc) / math.sqrt(2.0)
    if track_frame:
        phi = np.zeros((n, n), dtype=complex)
        phi[0, 0] = 1.0
        return phi, np.array([centre, centre], dtype=complex)
    single = hilbert.coherent_state(n, centre)
    return np.outer(single, single), np.zeros(2, dtype=complex)


def _model_id(system) -> int:
    if isinstance(system, SquidSystem):
        return SQUID
    if isinstance(system, DuffingSystem):
        return DUFFING
    raise ConfigError(f"unsupported system type {type(system).__name__}")


def _expi(h) -> np.ndarray:
    """exp(-i h) for Hermitian ``h``."""
    w, V = np.linalg.eigh(h)
    return (V * np.exp(-1j * w)) @ V.conj().T


@functools.lru_cache(maxsize=16)
def _padded_quadratic_ops(dim: int):
    x, p = hilbert.quadratures(dim)
    return x, p, x @ x, p @ p, x @ p + p @ x


def gaussian_unitary(dim: int, delta, S=None) -> np.ndarray:
    """D(delta) G(S) on ``dim`` levels; G(S)† (x, p) G(S) = S (x, p)."""
    x, p, x2, p2, sxp = _padded_quadratic_ops(dim)
    U = _expi(delta[0] * p - delta[1] * x)
    if S is not None:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        K = (V * np.log(w)) @ V.T
        Q = -np.array([[0.0, 1.0], [-1.0, 0.0]]) @ K
        U = U @ _expi(0.5 * (Q[0, 0] * x2 + Q[0, 1] * sxp + Q[1, 1] * p2))
    return U


def resolved_squeeze(system, icfg: IntegratorConfig) -> float:
    """Squeeze threshold in effect for ``system`` (0 means the frame only moves)."""
    if icfg.squeeze_threshold is None:
        return float(getattr(system, "default_squeeze_threshold", 0.0))
    return float(icfg.squeeze_threshold)


class TrajectoryEngine:
    """Operator data and frame state for fast stepping of one coupled system.

    The engine owns the per-mode Gaussian frame maps ``M``; use one engine per
    trajectory (or call :meth:`reset_frame` between trajectories).
    """

    def __init__(self, system, icfg: IntegratorConfig):
        self.system = system
        self.icfg = icfg
        n = system.fock_dim
        ops = mode_operators(n)
        self.model_id = _model_id(system)
        self.params = np.ascontiguousarray(system.kernel_params())
        self._plain_blocks = np.ascontiguousarray(system.local_blocks(), dtype=complex)
        self.x = np.ascontiguousarray(ops.x)
        self.p = np.ascontiguousarray(ops.p)
        self.sq = np.sqrt(np.arange(1, n + 1, dtype=float))
        self.nvec = np.arange(n, dtype=float)
        self.blocks = np.empty((2,) + self._plain_blocks.shape, dtype=complex)
        self.u = np.empty((2, n, n), dtype=complex)
        self.v = np.empty((2, n, n), dtype=complex)
        self.kA = np.empty(2, dtype=complex)
        self.kB = np.empty(2, dtype=complex)
        self.reframes = 0
        self.reset_frame()
        self.squeeze_threshold = resolved_squeeze(system, icfg)
        self.thresholds = np.full(2, self.squeeze_threshold)

    def reset_frame(self, M=None) -> None:
        self.M = np.tile(np.eye(2), (2, 1, 1)) if M is None else np.array(M, dtype=float)
        for j in range(2):
            self._rebuild(j)

    def _rebuild(self, j: int) -> None:
        Mj = self.M[j]
        plain = np.array_equal(Mj, np.eye(2))
        self.blocks[j] = self._plain_blocks if plain else self.system.local_blocks(Mj)
        u, v = frame_quadratures(self.system.fock_dim, None if plain else Mj)
        self.u[j], self.v[j] = u, v
        self.kA[j], self.kB[j] = frame_lindblad(None if plain else Mj)

    def _tail(self, phi, j: int) -> float:
        n = phi.shape[0]
        w = (np.abs(phi) ** 2).sum(axis=1 - j)
        return float(w[n - n // 3:].sum())

    def reframe(self, phi, alpha, j: int) -> bool:
        """Refit mode ``j``'s frame to its current mean and covariance.

        The refit is declined (returns False) when it would not shrink the
        population of the upper third of the Fock levels, which happens for
        strongly non-Gaussian states, or when the frame map would exceed
        ``max_frame_stretch``.
        """
        n = phi.shape[0]
        ops = mode_operators(n)
        rho = partial_trace(phi.ravel(), j, phi.shape)
        ex = float(np.real(np.trace(rho @ ops.x)))
        ep = float(np.real(np.trace(rho @ ops.p)))
        sxx = float(np.real(np.trace(rho @ ops.x2))) - ex * ex
        spp = float(np.real(np.trace(rho @ ops.p2))) - ep * ep
        sxp = 0.5 * float(np.real(np.trace(rho @ ops.sym_xp))) - ex * ep
        det = sxx * spp - sxp * sxp
        if not det > 0:
            return False
        w, V = np.linalg.eigh(np.array([[sxx, sxp], [sxp, spp]]) / math.sqrt(det))
        S = (V * np.sqrt(w)) @ V.T
        Mj = self.M[j] @ S
        Mj /= math.sqrt(np.linalg.det(Mj))
        if np.linalg.norm(Mj, 2) > self.icfg.max_frame_stretch:
            return False
        U = gaussian_unitary(2 * n + 30, (ex, ep), S)
        Ud = np.ascontiguousarray(U.conj().T[:n, :n])
        new = Ud @ phi if j == 0 else phi @ Ud.T
        new /= np.linalg.norm(new)
        if self._tail(new, j) > self._tail(phi, j):
            return False
        phi[:, :] = new
        shift = self.M[j] @ np.array([ex, ep])
        alpha[j] += complex(shift[0], shift[1]) / math.sqrt(2.0)
        self.M[j] = Mj
        self._rebuild(j)
        self.reframes += 1
        return True

    def advance(self, phi, alpha, t0, normals):
        icfg = self.icfg
        stats = np.zeros(2)
        total = normals.shape[0]
        base = self.squeeze_threshold
        thr = self.thresholds
        for j in range(2):
            # a declined refit raises the mode's threshold; relax it again
            if thr[j] > base:
                thr[j] = max(base, 1.5 * _kernel.squeeze_ratio(phi, self.sq, j))
        done = 0
        while done < total:
            status, steps = _kernel.advance(
                phi, alpha, self.M, float(t0 + done * icfg.dt), float(icfg.dt), total - done,
                normals[done:], self.model_id, self.params, self.blocks, self.u, self.v,
                self.kA, self.kB, self.sq, self.nvec, float(self.system.damping), float(self.system.mu),
                bool(icfg.track_frame), bool(icfg.phase_gauge), SCHEMES[icfg.scheme],
                float(icfg.recentre_threshold), thr, stats,
            )
            done += steps
            t = t0 + done * icfg.dt
            if status == _kernel.NORM_COLLAPSE:
                raise IntegratorError(f"state norm collapsed near t={t:.6g}; reduce dt")
            if status == _kernel.NON_FINITE:
                raise IntegratorError(f"non-finite amplitudes near t={t:.6g}; reduce dt or raise fock_dim")
            if status == _kernel.REFRAME:
                for j in range(2):
                    ratio = _kernel.squeeze_ratio(phi, self.sq, j)
                    if ratio > thr[j]:
                        thr[j] = base if self.reframe(phi, alpha, j) else 1.5 * ratio
        return stats

    def observe(self, phi, alpha):
        """Lab-frame ⟨x⟩, ⟨p⟩ of each mode, entropy and top-level occupancy."""
        x, p = self.x, self.p
        rho0 = partial_trace(phi.ravel(), 0, phi.shape)
        rho1 = partial_trace(phi.ravel(), 1, phi.shape)
        out = []
        for k, rho in enumerate((rho0, rho1)):
            mean = self.M[k] @ np.array([np.real(np.trace(rho @ x)), np.real(np.trace(rho @ p))])
            out.append(math.sqrt(2.0) * alpha[k].real + float(mean[0]))
            out.append(math.sqrt(2.0) * alpha[k].imag + float(mean[1]))
        S = von_neumann_entropy(rho0)
        occ = max(float(np.real(np.diag(rho0))[-2:].sum()), float(np.real(np.diag(rho1))[-2:].sum()))
        return out, S, occ


def run_trajectory(system, icfg: IntegratorConfig, stream: NoiseStream, initial=None,
                   check_truncation: bool = True) -> TrajectoryRecord:
    """Integrate one stochastic realisation and sample observables.

    ``initial`` is ``None`` (system default: displaced vacuum), a flat lab
    amplitude vector, or a ``(phi, alpha)`` pair from :func:`initial_state`.
    """
    engine = TrajectoryEngine(system, icfg)
    n = system.fock_dim
    if initial is None:
        phi, alpha = initial_state(system, track_frame=icfg.track_frame)
    elif isinstance(initial, tuple):
        phi, alpha = initial
    else:
        phi, alpha = np.asarray(initial, dtype=complex).reshape(n, n), np.zeros(2, dtype=complex)
    try:
        phi = np.ascontiguousarray(hilbert.normalize(np.asarray(phi, dtype=complex).ravel()).reshape(n, n))
    except DegenerateStateError as exc:
        raise ConfigError("initial state has zero norm") from exc
    alpha = np.array(alpha, dtype=complex)

    n_samples = icfg.n_samples
    rows = np.zeros((n_samples, 8))
    scale, offset = system.output_transform()
    recentres = 0

    n_warn = 0

    def record(k, t, drift):
        nonlocal n_warn
        obs, S, occ = engine.observe(phi, alpha)
        rows[k] = [t, obs[0] * scale + offset, obs[1] * scale, obs[2] * scale + offset,
                   obs[3] * scale, S, drift, occ]
        if occ > hilbert.OCCUPANCY_WARN:
            n_warn += 1
        if check_truncation and occ > icfg.occupancy_abort:
            raise TruncationError(f"top-level Fock population {occ:.3e} exceeds {icfg.occupancy_abort:g} "
                                  f"at t={t:.6g}; increase fock_dim")

    record(0, 0.0, 0.0)
    stride = icfg.sample_stride
    for k in range(1, n_samples):
        t0 = (k - 1) * stride * icfg.dt
        normals = stream.normals(stride, 2)
        stats = engine.advance(phi, alpha, t0, normals)
        recentres += int(stats[1])
        record(k, k * stride * icfg.dt, stats[0])

    if n_warn:
        logger.warning("trajectory %d: top-level Fock population above %g in %d of %d samples (max %.3e)",
                       stream.trajectory_index, hilbert.OCCUPANCY_WARN, n_warn, n_samples,
                       rows[:, 7].max())
    meta = {
        "system": system.metadata(),
        "integrator": asdict(icfg),
        "seed": stream.seed,
        "trajectory_index": stream.trajectory_index,
        "frame_recentres": recentres,
        "frame_refits": engine.reframes,
        "occupancy_warnings": n_warn,
        "output_scale": scale,
        "output_offset": offset,
    }
    return TrajectoryRecord(*(rows[:, c].copy() for c in range(8)), metadata=meta)
