"""Compiled inner loop for two-mode QSD trajectories in a moving Gaussian frame.

The lab-frame state is ``⊗_j D(alpha_j) G(M_j) |phi⟩``, with ``phi`` stored
as an ``N × N`` matrix (row index: mode 0) and ``G(M_j)`` the Gaussian unitary
with ``G† (x, p) G = M_j (x, p)``. Within a step, ``phi`` obeys the Itô
increment equation with the frame-local Hamiltonian (non-linear remainder of
the expansion around the frame centre, written in the frame quadratures
``u, v``) and Lindblad operators ``sqrt(2*gamma) (A a + B a†)``. The linear
part of the expansion and the centre-of-mass damping are displacement
generators; they are integrated exactly by moving ``alpha`` instead of acting
on ``phi``. The frame maps ``M_j`` are only changed by the caller, when the
kernel reports that the in-frame state has become too squeezed.

With ``track=False`` the frame is pinned at the origin and the full Hamiltonian
(up to a constant) acts on ``phi``, which is the plain Euler-Maruyama scheme.
"""

import math

import numpy as np
from numba import njit

OK = 0
NORM_COLLAPSE = 1
NON_FINITE = 2
REFRAME = 3

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def local_terms(model_id, params, xc, pc, x_other, t):
    """Return (c1, c2, fx, fp): block coefficients and linear-force terms."""
    if model_id == 0:
        zeta = params[0]
        K = params[1]
        Om = params[2]
        conv = params[3]
        phi_x = params[4]
        phi_d = params[5]
        omega = params[6]
        mu = params[7]
        xd = conv * (phi_x + phi_d * math.sin(omega * t))
        c1 = -K * math.cos(Om * xc)
        c2 = K * math.sin(Om * xc)
        fx = (xc - xd) + K * Om * math.sin(Om * xc) + zeta * pc + mu * x_other
        fp = pc + zeta * xc
    else:
        beta = params[0]
        g = params[1]
        Gamma = params[2]
        mu = params[3]
        b2 = beta * beta
        c1 = b2 * xc
        c2 = 1.5 * b2 * xc * xc
        fx = b2 * xc * xc * xc - xc + (g / beta) * math.cos(t) + Gamma * pc + mu * x_other
        fp = pc + Gamma * xc
    return c1, c2, fx, fp


@njit(cache=True)
def _lower(phi, sq, axis, out):
    n = phi.shape[0]
    if axis == 0:
        for m in range(n - 1):
            for k in range(n):
                out[m, k] = sq[m] * phi[m + 1, k]
        for k in range(n):
            out[n - 1, k] = 0.0
    else:
        for m in range(n):
            for k in range(n - 1):
                out[m, k] = sq[k] * phi[m, k + 1]
            out[m, n - 1] = 0.0


@njit(cache=True)
def _raise(phi, sq, axis, out):
    n = phi.shape[0]
    if axis == 0:
        for k in range(n):
            out[0, k] = 0.0
        for m in range(1, n):
            for k in range(n):
                out[m, k] = sq[m - 1] * phi[m - 1, k]
    else:
        for m in range(n):
            out[m, 0] = 0.0
            for k in range(1, n):
                out[m, k] = sq[k - 1] * phi[m, k - 1]


@njit(cache=True)
def _inner(u, v):
    acc = 0.0 + 0.0j
    n = u.shape[0]
    for m in range(n):
        for k in range(n):
            acc += np.conj(u[m, k]) * v[m, k]
    return acc


@njit(cache=True)
def displace_axis(phi, beta, sq, axis, up, down):
    """phi <- D(beta) phi on one factor, by Taylor series of beta a† - beta* a."""
    term = phi.copy()
    acc = phi.copy()
    for k in range(1, 400):
        _raise(term, sq, axis, up)
        _lower(term, sq, axis, down)
        term = (beta * up - np.conj(beta) * down) / k
        acc += term
        if _inner(term, term).real < 1e-34:
            break
    phi[:, :] = acc


@njit(cache=True)
def _apply_h(phi, h0, h1t, uo0, uo1, mu, out, t1, t2):
    """out = (h0 ⊗ 1 + 1 ⊗ h1 + mu u0 ⊗ u1) phi, where h1t = h1^T.

    ``uo0``/``uo1`` hold the upper off-diagonals of the tridiagonal frame
    quadratures u0, u1 (zero diagonal, Hermitian).
    """
    n = phi.shape[0]
    np.dot(h0, phi, out)
    np.dot(phi, h1t, t1)
    out += t1
    if mu != 0.0:
        # t2 = u0 phi (rows), then out += mu * t2 u1^T (columns)
        for k in range(n):
            t2[0, k] = uo0[0] * phi[1, k]
            t2[n - 1, k] = np.conj(uo0[n - 2]) * phi[n - 2, k]
        for i in range(1, n - 1):
            for k in range(n):
                t2[i, k] = np.conj(uo0[i - 1]) * phi[i - 1, k] + uo0[i] * phi[i + 1, k]
        for i in range(n):
            out[i, 0] += mu * uo1[0] * t2[i, 1]
            out[i, n - 1] += mu * np.conj(uo1[n - 2]) * t2[i, n - 2]
            for k in range(1, n - 1):
                out[i, k] += mu * (np.conj(uo1[k - 1]) * t2[i, k - 1] + uo1[k] * t2[i, k + 1])


@njit(cache=True)
def _kop(phi, A, B, sq, axis, out, tmp):
    """out = (A a + B a†) phi on one factor."""
    _lower(phi, sq, axis, out)
    if B != 0.0:
        _raise(phi, sq, axis, tmp)
        n = phi.shape[0]
        for i in range(n):
            for j in range(n):
                out[i, j] = A * out[i, j] + B * tmp[i, j]
    elif A != 1.0:
        out *= A


@njit(cache=True)
def _kdag(phi, A, B, sq, axis, out, tmp):
    """out = (A* a† + B* a) phi on one factor."""
    _raise(phi, sq, axis, out)
    if B != 0.0:
        _lower(phi, sq, axis, tmp)
        n = phi.shape[0]
        for i in range(n):
            for j in range(n):
                out[i, j] = np.conj(A) * out[i, j] + np.conj(B) * tmp[i, j]
    elif A != 1.0:
        out *= np.conj(A)


@njit(cache=True)
def _drift(phi, h0, h1t, uo0, uo1, mu, s, kA, kB, sq, nvec, gauge, out, lo0, lo1, t1, t2, w1, w2):
    """out = deterministic Itô drift at ``phi``; returns (s⟨K0⟩, s⟨K1⟩).

    ``lo0``/``lo1`` receive K phi on each factor. Expectations are normalised
    by the squared norm, so intermediate stages need not be normalised.
    """
    n = phi.shape[0]
    nn = _inner(phi, phi).real
    _kop(phi, kA[0], kB[0], sq, 0, lo0, t1)
    _kop(phi, kA[1], kB[1], sq, 1, lo1, t1)
    _apply_h(phi, h0, h1t, uo0, uo1, mu, out, t1, t2)
    eh = _inner(phi, out).real / nn if gauge else 0.0
    l0 = s * _inner(phi, lo0) / nn
    l1 = s * _inner(phi, lo1) / nn
    c0 = s * np.conj(l0)
    c1 = s * np.conj(l1)
    cst = 1j * eh - 0.5 * (abs(l0) ** 2 + abs(l1) ** 2)
    hs = 0.5 * s * s
    plain = kB[0] == 0.0 and kB[1] == 0.0
    if plain:
        g0 = hs * abs(kA[0]) ** 2
        g1 = hs * abs(kA[1]) ** 2
        for i in range(n):
            for j in range(n):
                out[i, j] = (-1j * out[i, j] + c0 * lo0[i, j] + c1 * lo1[i, j]
                             + (cst - g0 * nvec[i] - g1 * nvec[j]) * phi[i, j])
    else:
        for i in range(n):
            for j in range(n):
                out[i, j] = -1j * out[i, j] + c0 * lo0[i, j] + c1 * lo1[i, j] + cst * phi[i, j]
        if hs != 0.0:
            _kdag(lo0, kA[0], kB[0], sq, 0, w1, w2)
            out -= hs * w1
            _kdag(lo1, kA[1], kB[1], sq, 1, w1, w2)
            out -= hs * w1
    return l0, l1


@njit(cache=True)
def mode_moments(phi, sq, axis):
    """(⟨a⟩, ⟨a²⟩, ⟨a†a⟩) of one factor of a normalised ``phi``."""
    n = phi.shape[0]
    e1 = 0.0 + 0.0j
    e2 = 0.0 + 0.0j
    en = 0.0
    for m in range(n):
        for k in range(n):
            if axis == 0:
                v = phi[m, k]
                en += m * (v.real * v.real + v.imag * v.imag)
                if m + 1 < n:
                    e1 += np.conj(v) * sq[m] * phi[m + 1, k]
                if m + 2 < n:
                    e2 += np.conj(v) * sq[m] * sq[m + 1] * phi[m + 2, k]
            else:
                v = phi[k, m]
                en += m * (v.real * v.real + v.imag * v.imag)
                if m + 1 < n:
                    e1 += np.conj(v) * sq[m] * phi[k, m + 1]
                if m + 2 < n:
                    e2 += np.conj(v) * sq[m] * sq[m + 1] * phi[k, m + 2]
    return e1, e2, en


@njit(cache=True)
def squeeze_ratio(phi, sq, axis):
    """Largest over smallest eigenvalue of the in-frame (x, p) covariance."""
    e1, e2, en = mode_moments(phi, sq, axis)
    mx = SQRT2 * e1.real
    mp = SQRT2 * e1.imag
    sxx = e2.real + en + 0.5 - mx * mx
    spp = -e2.real + en + 0.5 - mp * mp
    sxp = e2.imag - mx * mp
    half = 0.5 * (sxx + spp)
    rad = math.sqrt(0.25 * (sxx - spp) ** 2 + sxp * sxp)
    lo = half - rad
    if lo <= 0.0:
        return np.inf
    return (half + rad) / lo


@njit(cache=True)
def advance(phi, alpha, M, t0, dt, nsteps, normals, model_id, params, blocks, u, v, kA, kB,
            sq, nvec, damping, mu, track, gauge, scheme, recentre_thr, squeeze_thr, stats):
    """Advance ``phi``/``alpha`` by up to ``nsteps`` steps in place.

    ``blocks`` (2, 3, N, N) are the local Hamiltonian blocks of each mode in
    its frame, ``u``/``v`` (2, N, N) the frame quadratures, ``kA``/``kB`` the
    frame Lindblad coefficients and ``M`` (2, 2, 2) the frame maps. ``normals``
    has shape (nsteps, 2, 2): two independent standard normals per mode per
    step. ``scheme`` selects the deterministic part: 1 Euler, 2 Heun, 4
    classical Runge-Kutta; the noise term is always the Euler-Maruyama
    increment at the pre-step state. ``stats`` receives [max
    pre-renormalisation norm deviation, number of recentrings].

    Returns ``(status, steps_done)``. ``REFRAME`` means the covariance
    eigenvalue ratio of mode j exceeded ``squeeze_thr[j]`` before step
    ``steps_done``; the caller should update the frame and continue.
    """
    n = phi.shape[0]
    s = math.sqrt(2.0 * damping)
    h0 = np.empty((n, n), dtype=np.complex128)
    h1t = np.empty((n, n), dtype=np.complex128)
    t1 = np.empty((n, n), dtype=np.complex128)
    t2 = np.empty((n, n), dtype=np.complex128)
    w1 = np.empty((n, n), dtype=np.complex128)
    w2 = np.empty((n, n), dtype=np.complex128)
    uo0 = np.empty(n - 1, dtype=np.complex128)
    uo1 = np.empty(n - 1, dtype=np.complex128)
    for i in range(n - 1):
        uo0[i] = u[0, i, i + 1]
        uo1[i] = u[1, i, i + 1]
    a0 = np.empty((n, n), dtype=np.complex128)
    a1 = np.empty((n, n), dtype=np.complex128)
    b0 = np.empty((n, n), dtype=np.complex128)
    b1 = np.empty((n, n), dtype=np.complex128)
    k = np.empty((n, n), dtype=np.complex128)
    acc = np.empty((n, n), dtype=np.complex128)
    stage = np.empty((n, n), dtype=np.complex128)
    sdt2 = math.sqrt(0.5 * dt)
    v0 = 0.0 + 0.0j
    v1 = 0.0 + 0.0j
    t = t0
    for step in range(nsteps):
        if track and recentre_thr > 0.0:
            for axis in range(2):
                _lower(phi, sq, axis, a0)
                e = _inner(phi, a0)
                if abs(e) > recentre_thr:
                    displace_axis(phi, -e, sq, axis, b0, b1)
                    nrm = math.sqrt(_inner(phi, phi).real)
                    phi /= nrm
                    dx = SQRT2 * e.real
                    dp = SQRT2 * e.imag
                    cx = M[axis, 0, 0] * dx + M[axis, 0, 1] * dp
                    cp = M[axis, 1, 0] * dx + M[axis, 1, 1] * dp
                    alpha[axis] += (cx + 1j * cp) / SQRT2
                    stats[1] += 1.0
        if track:
            for axis in range(2):
                if squeeze_thr[axis] > 0.0 and squeeze_ratio(phi, sq, axis) > squeeze_thr[axis]:
                    return REFRAME, step

        if track:
            # symmetric split: half frame move with the linear part taken at the
            # step-start centre, in-frame step at the midpoint centre carrying
            # the (small) difference of linear parts, second half move.
            tm = t + 0.5 * dt
            _, _, fs0, ps0 = local_terms(model_id, params, SQRT2 * alpha[0].real, SQRT2 * alpha[0].imag,
                                         SQRT2 * alpha[1].real, tm)
            _, _, fs1, ps1 = local_terms(model_id, params, SQRT2 * alpha[1].real, SQRT2 * alpha[1].imag,
                                         SQRT2 * alpha[0].real, tm)
            v0 = (ps0 - 1j * fs0) / SQRT2 - damping * alpha[0]
            v1 = (ps1 - 1j * fs1) / SQRT2 - damping * alpha[1]
            alpha[0] += 0.5 * dt * v0
            alpha[1] += 0.5 * dt * v1
            xc0 = SQRT2 * alpha[0].real
            pc0 = SQRT2 * alpha[0].imag
            xc1 = SQRT2 * alpha[1].real
            pc1 = SQRT2 * alpha[1].imag
            c01, c02, fx0, fp0 = local_terms(model_id, params, xc0, pc0, xc1, tm)
            c11, c12, fx1, fp1 = local_terms(model_id, params, xc1, pc1, xc0, tm)
            # residual linear terms; the damping displacement difference
            # -damping*(d a† - d* a), d = 0.5*dt*v, is sqrt2*damping*(Im d x - Re d p)
            fx0 += -fs0 + SQRT2 * damping * (0.5 * dt * v0).imag
            fp0 += -ps0 - SQRT2 * damping * (0.5 * dt * v0).real
            fx1 += -fs1 + SQRT2 * damping * (0.5 * dt * v1).imag
            fp1 += -ps1 - SQRT2 * damping * (0.5 * dt * v1).real
        else:
            c01, c02, fx0, fp0 = local_terms(model_id, params, 0.0, 0.0, 0.0, t)
            c11, c12, fx1, fp1 = local_terms(model_id, params, 0.0, 0.0, 0.0, t)
        for i in range(n):
            for j in range(n):
                h0[i, j] = (blocks[0, 0, i, j] + c01 * blocks[0, 1, i, j] + c02 * blocks[0, 2, i, j]
                            + fx0 * u[0, i, j] + fp0 * v[0, i, j])
                # h1 is Hermitian, so its transpose is its conjugate
                h1t[i, j] = np.conj(blocks[1, 0, i, j] + c11 * blocks[1, 1, i, j] + c12 * blocks[1, 2, i, j]
                                    + fx1 * u[1, i, j] + fp1 * v[1, i, j])

        # stage 1 keeps K phi in a0/a1 for the noise term
        l0, l1 = _drift(phi, h0, h1t, uo0, uo1, mu, s, kA, kB, sq, nvec, gauge, k, a0, a1, t1, t2, w1, w2)
        if scheme == 1:
            acc[:, :] = dt * k
        elif scheme == 2:
            acc[:, :] = 0.5 * dt * k
            stage[:, :] = phi + dt * k
            _drift(stage, h0, h1t, uo0, uo1, mu, s, kA, kB, sq, nvec, gauge, k, b0, b1, t1, t2, w1, w2)
            acc += 0.5 * dt * k
        else:
            acc[:, :] = (dt / 6.0) * k
            stage[:, :] = phi + 0.5 * dt * k
            _drift(stage, h0, h1t, uo0, uo1, mu, s, kA, kB, sq, nvec, gauge, k, b0, b1, t1, t2, w1, w2)
            acc += (dt / 3.0) * k
            stage[:, :] = phi + 0.5 * dt * k
            _drift(stage, h0, h1t, uo0, uo1, mu, s, kA, kB, sq, nvec, gauge, k, b0, b1, t1, t2, w1, w2)
            acc += (dt / 3.0) * k
            stage[:, :] = phi + dt * k
            _drift(stage, h0, h1t, uo0, uo1, mu, s, kA, kB, sq, nvec, gauge, k, b0, b1, t1, t2, w1, w2)
            acc += (dt / 6.0) * k

        xi0 = (normals[step, 0, 0] + 1j * normals[step, 0, 1]) * sdt2
        xi1 = (normals[step, 1, 0] + 1j * normals[step, 1, 1]) * sdt2
        g0 = s * xi0
        g1 = s * xi1
        cn = -l0 * xi0 - l1 * xi1
        for i in range(n):
            for j in range(n):
                val = phi[i, j]
                stage[i, j] = val + acc[i, j] + g0 * a0[i, j] + g1 * a1[i, j] + cn * val
        nrm = math.sqrt(_inner(stage, stage).real)
        if not math.isfinite(nrm):
            return NON_FINITE, step
        if nrm < 1e-8:
            return NORM_COLLAPSE, step
        dev = abs(nrm - 1.0)
        if dev > stats[0]:
            stats[0] = dev
        for i in range(n):
            for j in range(n):
                phi[i, j] = stage[i, j] / nrm
        if track:
            alpha[0] += 0.5 * dt * v0
            alpha[1] += 0.5 * dt * v1
        t = t0 + (step + 1) * dt
    return OK, nsteps
