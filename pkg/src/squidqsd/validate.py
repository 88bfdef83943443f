"""Built-in oracle suite: analytic and brute-force cross-checks of the core numerics.

Each check returns one or more :class:`CheckResult` rows (measured value,
tolerance, pass flag). ``run_checks`` runs a filtered subset; the command line
``validate`` subcommand prints the table and exits non-zero on any failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_simpson

from . import hilbert
from .entangle import partial_trace, von_neumann_entropy
from .model import CircuitParams, derive_dimensionless, scale_params
from .qsd import NoiseStream, complex_wiener, qsd_step
from .rsj import RsjState, integrate_rsj, rsj_energy


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""


def _row(name, measured, tolerance, detail=""):
    measured = float(measured)
    return CheckResult(name, measured, float(tolerance), bool(measured <= tolerance), detail)


# --- damped cavity ---------------------------------------------------------

def damped_cavity_means(n_traj=1000, dt=1e-3, times=(1.0, 2.0, 5.0), dim=20, zeta=0.1, alpha=1.0,
                        seed=0, scheme="rk4"):
    """Ensemble mean and complex standard error of ⟨a⟩ at ``times``.

    H = n + 1/2, L = sqrt(2 zeta) a, coherent start; trajectories are batched
    and trajectory k draws its noise from ``NoiseStream(seed, k)``.
    """
    a = hilbert.annihilation(dim)
    H = hilbert.number(dim) + 0.5 * np.eye(dim)
    L = math.sqrt(2.0 * zeta) * a
    psi = np.tile(hilbert.coherent_state(dim, alpha), (n_traj, 1))
    streams = [NoiseStream(seed, k) for k in range(n_traj)]
    marks = {int(round(t / dt)): t for t in times}
    n_steps = max(marks)
    chunk = 500
    out = {}
    for start in range(0, n_steps, chunk):
        m = min(chunk, n_steps - start)
        eta = np.stack([s.normals(m, 1)[:, 0, :] for s in streams], axis=1)  # (m, n_traj, 2)
        dxi = (eta[..., 0] + 1j * eta[..., 1]) * math.sqrt(0.5 * dt)
        for j in range(m):
            psi = qsd_step(psi, H, [L], dt, dxi[j][:, None], scheme=scheme)
            step = start + j + 1
            if step in marks:
                ea = np.einsum("ij,jk,ik->i", psi.conj(), a, psi)
                se = math.sqrt((ea.real.var(ddof=1) + ea.imag.var(ddof=1)) / n_traj)
                out[marks[step]] = (complex(ea.mean()), se)
    return out


def check_damped_cavity(n_traj=1000, dt=1e-3, seed=0, scheme="rk4", floor=1e-6):
    """Mean ⟨a⟩(t) against alpha·exp(-(i + zeta) t).

    The tolerance is three standard errors plus an absolute ``floor``: a
    coherent state stays coherent under this master equation, so every
    trajectory follows the same path and the standard error collapses to the
    size of the discretisation error itself.
    """
    zeta, alpha = 0.1, 1.0
    rows = []
    for t, (mean, se) in sorted(damped_cavity_means(n_traj, dt, seed=seed, scheme=scheme).items()):
        exact = alpha * np.exp(-(1j + zeta) * t)
        rows.append(_row(f"cavity t={t:g}", abs(mean - exact), 3.0 * se + floor,
                         f"dt={dt:g} n={n_traj} se={se:.2e}"))
    return rows


# --- partial trace and entropy -------------------------------------------

def brute_force_partial_trace(state, keep, dims):
    """Explicit index-sum reference for the reduced density matrix."""
    psi = np.asarray(state, dtype=complex).reshape(dims)
    d = dims[keep]
    rho = np.zeros((d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(dims[1 - keep]):
                if keep == 0:
                    acc += psi[i, k] * np.conj(psi[j, k])
                else:
                    acc += psi[k, i] * np.conj(psi[k, j])
            rho[i, j] = acc
    return rho


def _random_state(rng, n):
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def check_partial_trace(seed=0, n_states=20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for dims in ([5, 7], [3, 4], [6, 6]):
        for _ in range(n_states):
            psi = _random_state(rng, dims[0] * dims[1])
            for keep in (0, 1):
                ref = brute_force_partial_trace(psi, keep, dims)
                worst = max(worst, float(np.abs(partial_trace(psi, keep, dims) - ref).max()))
    return [_row("partial trace vs brute force", worst, 1e-12)]


def check_entropy_identities(seed=0, n_states=100):
    rows = []
    bell = np.zeros(4, dtype=complex)
    bell[0] = bell[3] = 1.0 / math.sqrt(2.0)
    rows.append(_row("Bell state S - ln 2", abs(von_neumann_entropy(partial_trace(bell, 0, [2, 2])) - math.log(2.0)),
                     1e-10))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        prod = np.kron(_random_state(rng, 5), _random_state(rng, 7))
        worst = max(worst, von_neumann_entropy(partial_trace(prod, 0, [5, 7])))
    rows.append(_row("product state S", worst, 1e-10))
    worst = 0.0
    for _ in range(n_states):
        psi = _random_state(rng, 35)
        s0 = von_neumann_entropy(partial_trace(psi, 0, [5, 7]))
        s1 = von_neumann_entropy(partial_trace(psi, 1, [5, 7]))
        worst = max(worst, abs(s0 - s1))
    rows.append(_row("Schmidt symmetry |S0 - S1|", worst, 1e-9))
    return rows


# --- Wiener increments ----------------------------------------------------

def check_wiener(n=1_000_000, dt=1e-3, seed=0, n_sigma=5.0):
    """Sample moments of dξ against E[dξ] = E[dξ²] = 0, E[|dξ|²] = dt.

    Each row reports |sample mean| in units of its Monte Carlo standard
    error (tolerance ``n_sigma``).
    """
    xi = complex_wiener(NoiseStream(seed, 0), dt, size=n)
    rows = []
    for label, samples, target in (("E[dxi]", xi, 0.0), ("E[dxi^2]", xi * xi, 0.0),
                                   ("E[|dxi|^2] - dt", np.abs(xi) ** 2, dt)):
        m = samples.mean() - target
        if np.iscomplexobj(samples):
            se = math.sqrt((samples.real.var() + samples.imag.var()) / n)
        else:
            se = math.sqrt(samples.var() / n)
        rows.append(_row(f"wiener {label} / se", abs(m) / se, n_sigma, f"n={n}"))
    return rows


# --- RSJ ------------------------------------------------------------------

def _baseline_normalized():
    return derive_dimensionless(CircuitParams.baseline())


def check_rsj(dt=1e-3):
    rows = []
    base = _baseline_normalized()
    harm = replace(base, beta_squid=0.0, zeta=0.0, phi_d=0.0)
    tr = integrate_rsj(RsjState(1.0, 0.0), harm, dt, 20.0 * math.pi)
    rows.append(_row("RSJ harmonic limit vs cos(tau)", np.abs(tr.phi - np.cos(tr.tau)).max(), 1e-8))

    # from rest at the origin; the driven motion is sensitive enough that the
    # adaptive references at rtol 1e-12..1e-14 themselves differ by ~1e-7
    start = RsjState(0.0, 0.0)
    stride = 100
    rk = integrate_rsj(start, base, dt, 100.0, sample_stride=stride)
    ref = integrate_rsj(start, base, dt, 100.0, sample_stride=stride, method="adaptive", rtol=1e-13)
    rows.append(_row("RSJ RK4 vs adaptive at tau<=100", np.abs(rk.phi - ref.phi).max(), 1e-6))

    free = replace(base, phi_d=0.0)
    tr = integrate_rsj(RsjState(0.25, 0.5), free, dt, 20.0)
    E = rsj_energy(tr.phi, tr.phi_dot, free)
    loss = cumulative_simpson(2.0 * free.zeta * tr.phi_dot ** 2, x=tr.tau, initial=0.0)
    rows.append(_row("RSJ energy balance E(t)-E(0)+loss", np.abs(E - E[0] + loss).max(), 1e-6))
    return rows


def check_scaling(a_values=(1e-3, 1.0, 1e3), dt=1e-3, t_total=20.0):
    base = CircuitParams.baseline()
    ref = derive_dimensionless(base)
    worst_groups, worst_traj = 0.0, 0.0
    ref_tr = integrate_rsj(RsjState(0.1, 0.0), ref, dt, t_total)
    for a in a_values:
        np_ = derive_dimensionless(scale_params(base, a, 1.0))
        for key in ("beta_squid", "zeta", "phi_d", "omega"):
            r = getattr(ref, key)
            worst_groups = max(worst_groups, abs(getattr(np_, key) - r) / abs(r))
        tr = integrate_rsj(RsjState(0.1, 0.0), np_, dt, t_total)
        worst_traj = max(worst_traj, float(np.abs(tr.phi - ref_tr.phi).max()))
    return [_row("scaling: dimensionless groups (rel)", worst_groups, 1e-12),
            _row("scaling: RSJ trajectories", worst_traj, 1e-12)]


CHECKS = {
    "cavity": check_damped_cavity,
    "partial_trace": check_partial_trace,
    "entropy": check_entropy_identities,
    "wiener": check_wiener,
    "rsj": check_rsj,
    "scaling": check_scaling,
}


def run_checks(filter_: str | None = None, cavity_dt: float = 1e-3, cavity_trajectories: int = 1000):
    """Run the checks whose name contains ``filter_`` (all when None)."""
    rows = []
    for name, fn in CHECKS.items():
        if filter_ and filter_ not in name:
            continue
        if name == "cavity":
            rows += fn(n_traj=cavity_trajectories, dt=cavity_dt)
        else:
            rows += fn()
    return rows


def format_table(rows) -> str:
    width = max([len(r.name) for r in rows] + [5])
    lines = [f"{'check':<{width}}  {'measured':>10}  {'tolerance':>10}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.measured:>10.3e}  {r.tolerance:>10.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}  {r.detail}".rstrip())
    return "\n".join(lines)
