import math
from dataclasses import replace

import numpy as np
import pytest

from squidqsd import hilbert, model
from squidqsd.constants import FLUX_QUANTUM, HBAR
from squidqsd.errors import ConfigError

BASE = model.CircuitParams.baseline()
NP = model.derive_dimensionless(BASE)


def test_baseline_derived_values():
    assert NP.omega0 == pytest.approx(1 / math.sqrt(3e-10 * 1e-13), rel=1e-12)
    assert NP.omega0 == pytest.approx(1.8257e11, rel=1e-4)
    assert NP.zeta == pytest.approx(0.2739, abs=1e-4)
    assert NP.phi_d == pytest.approx(0.1306, abs=1e-4)
    assert NP.beta_squid == pytest.approx(2.0, rel=1e-12)
    assert BASE.I_c == pytest.approx(2.194e-6, rel=1e-3)
    assert NP.omega == pytest.approx(1.0, rel=1e-12)
    assert NP.flux_to_x == pytest.approx(math.sqrt(BASE.C * NP.omega0 / HBAR) * FLUX_QUANTUM, rel=1e-12)


def test_invariant_formulas_recomputed():
    p = BASE
    w0 = 1 / math.sqrt(p.L * p.C)
    assert NP.zeta == pytest.approx(1 / (2 * w0 * p.R * p.C), rel=1e-12)
    assert NP.phi_d == pytest.approx(p.I_d * p.L / FLUX_QUANTUM, rel=1e-12)
    assert NP.beta_squid == pytest.approx(2 * math.pi * p.L * p.I_c / FLUX_QUANTUM, rel=1e-12)


def test_scale_params():
    same = model.scale_params(BASE, 1.0, 1.0)
    assert same == BASE
    big = model.scale_params(BASE, 1000.0, 1.0)
    assert big.C == pytest.approx(1e-10, rel=1e-15)
    assert big.R == pytest.approx(100 / math.sqrt(1000), rel=1e-15)
    assert big.omega_d == pytest.approx(BASE.omega_d / math.sqrt(1000), rel=1e-15)
    nb = model.derive_dimensionless(big)
    for key in ("zeta", "beta_squid", "phi_d", "omega"):
        assert abs(getattr(nb, key) - getattr(NP, key)) <= 1e-12 * abs(getattr(NP, key))
    small = model.derive_dimensionless(model.scale_params(BASE, 1e-3, 1.0))
    assert small.Omega / NP.Omega == pytest.approx(1e-3 ** -0.25, rel=1e-12)
    assert small.Omega == pytest.approx(1.2986, abs=1e-4)
    assert NP.Omega == pytest.approx(0.2309, abs=1e-4)
    with pytest.raises(ConfigError):
        model.scale_params(BASE, 0.0, 1.0)


def test_scale_b_warns_about_phi_d():
    with pytest.warns(UserWarning, match="phi_d"):
        p = model.scale_params(BASE, 1.0, 4.0)
    np_ = model.derive_dimensionless(p)
    assert np_.beta_squid == pytest.approx(NP.beta_squid, rel=1e-12)
    assert np_.phi_d == pytest.approx(2.0 * NP.phi_d, rel=1e-12)


def test_drive_flux():
    assert model.squid_drive_flux(NP, 0.0) == pytest.approx(0.5)
    flat = replace(NP, phi_d=0.0)
    assert all(model.squid_drive_flux(flat, t) == 0.5 for t in (0.0, 1.3, 7.0))
    assert model.squid_drive_flux(NP, math.pi / (2 * NP.omega)) == pytest.approx(0.5 + NP.phi_d, rel=1e-12)


def test_harmonic_limit_spectrum():
    harm = replace(NP, zeta=0.0, cos_prefactor=0.0, phi_x=0.0, phi_d=0.0)
    h = model.build_squid_hamiltonian(harm, 0.0, 40)
    ev = np.linalg.eigvalsh(h)[:10]
    np.testing.assert_allclose(ev, np.arange(10) + 0.5, atol=1e-8)


def test_squid_hamiltonian_hermitian_parts():
    for tau in (0.0, 0.7, 3.1):
        h = model.build_squid_hamiltonian(NP, tau, 20)
        damp = model.squid_damping_term(NP, 20)
        assert hilbert.hermiticity_error(h - damp) < 1e-10
        assert hilbert.hermiticity_error(damp) < 1e-10


def test_vacuum_energy_matches_grid_oracle():
    """⟨0|H'|0⟩ at tau=0 against a finite-difference position grid."""
    h = model.build_squid_hamiltonian(NP, 0.0, 30)
    fock = hilbert.expectation(hilbert.basis_state(30, 0), h).real
    x = np.linspace(-14, 14, 5601)
    dx = x[1] - x[0]
    psi = math.pi ** -0.25 * np.exp(-x**2 / 2)
    lap = np.zeros_like(psi)
    # fourth-order central second difference
    lap[2:-2] = (-psi[4:] + 16 * psi[3:-1] - 30 * psi[2:-2] + 16 * psi[1:-3] - psi[:-4]) / (12 * dx**2)
    x0 = model.squid_drive_x(NP, 0.0)
    pot = 0.5 * (x - x0) ** 2 - NP.cos_prefactor * np.cos(NP.Omega * x)
    grid = np.sum(psi * (-0.5 * lap) + pot * psi**2) * dx
    assert fock == pytest.approx(grid, abs=1e-6)


def test_coupled_squid_structure():
    n = 6
    h0 = model.build_coupled_squid_hamiltonian(NP, 0.3, [n, n], 0.0)
    h2 = model.build_coupled_squid_hamiltonian(NP, 0.3, [n, n], 0.2)
    x, _ = hilbert.quadratures(n)
    xx = hilbert.embed(x, 0, [n, n]) @ hilbert.embed(x, 1, [n, n])
    assert np.abs(h2 - h0).max() == pytest.approx(0.2 * np.abs(xx).max(), rel=1e-12)
    with pytest.raises(ConfigError):
        model.build_coupled_squid_hamiltonian(NP, 0.0, [4, 5], 0.2)


def test_coupled_swap_symmetry():
    n = 8
    P = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            P[j * n + i, i * n + j] = 1.0
    for tau in (0.0, 1.1):
        h = model.build_coupled_squid_hamiltonian(NP, tau, [n, n], 0.2)
        assert np.abs(P @ h @ P.T - h).max() < 1e-12
    hd = model.build_coupled_duffing(model.DuffingParams(), 0.4, [n, n])
    assert np.abs(P @ hd @ P.T - hd).max() < 1e-12


def test_decoupled_rings_ignore_partner():
    """With mu=0 ring 1's expectation dynamics do not depend on ring 2's state."""
    n = 8
    H = model.build_coupled_squid_hamiltonian(replace(NP, zeta=0.0), 0.0, [n, n], 0.0)
    w, V = np.linalg.eigh(H)
    U = (V * np.exp(-1j * w * 0.5)) @ V.conj().T
    x1 = hilbert.embed(hilbert.quadratures(n)[0], 0, [n, n])
    a = hilbert.coherent_state(n, 0.3)
    outs = []
    for b in (hilbert.basis_state(n, 0), hilbert.coherent_state(n, 0.5j)):
        psi = np.kron(a, b)
        for _ in range(5):
            psi = U @ psi
        outs.append(hilbert.expectation(psi, x1).real)
    assert abs(outs[0] - outs[1]) < 1e-12


def test_duffing_examples():
    dp = model.DuffingParams(beta=1.0, g=0.0, Gamma=0.0)
    h = model.build_duffing_hamiltonian(dp, 0.0, 40)
    w, V = np.linalg.eigh(h)
    x, _ = hilbert.quadratures(40)
    assert abs(hilbert.expectation(V[:, 0], x)) < 1e-8
    dp = model.DuffingParams()
    undriven = replace(dp, g=0.0)
    np.testing.assert_allclose(model.build_duffing_hamiltonian(dp, math.pi / 2, 12),
                               model.build_duffing_hamiltonian(undriven, math.pi / 2, 12), atol=1e-12)
    hc = model.build_coupled_duffing(dp, 0.3, [8, 8])
    ops = model.mode_operators(8)
    damp = sum(hilbert.embed(0.5 * dp.Gamma * ops.sym_xp, k, [8, 8]) for k in range(2))
    assert hilbert.hermiticity_error(hc - damp) < 1e-10
    with pytest.raises(ConfigError):
        model.DuffingParams(beta=0.0)


def test_lindblad_set():
    z = model.lindblad_set(0.0, [5, 5])
    assert all(np.count_nonzero(L) == 0 for L in z)
    n = 9
    L = model.lindblad_set(0.125, [n])[0]
    assert np.linalg.norm(L, 2) == pytest.approx(math.sqrt(0.25) * math.sqrt(n - 1), rel=1e-12)
    L1, L2 = model.lindblad_set(0.3, [4, 4])
    assert np.abs(L1 @ L2 - L2 @ L1).max() < 1e-12
    with pytest.raises(ConfigError):
        model.lindblad_set(-1.0, [3])


def test_unitary_decoupled_product_stays_product():
    """mu=0, unitary evolution over 10 drive periods at N=15: S < 1e-8."""
    from squidqsd.entangle import entanglement_entropy

    n = 15
    p = replace(model.derive_dimensionless(model.scale_params(BASE, 1e-3, 1.0)), zeta=0.0)
    psi = np.kron(hilbert.coherent_state(n, 0.4), hilbert.coherent_state(n, -0.2j))
    dt, worst = 0.05, 0.0
    for k in range(int(round(10 * 2 * math.pi / dt))):
        H = model.build_coupled_squid_hamiltonian(p, (k + 0.5) * dt, [n, n], 0.0)
        w, V = np.linalg.eigh(H)
        psi = (V * np.exp(-1j * w * dt)) @ (V.conj().T @ psi)
        if k % 50 == 0:
            worst = max(worst, entanglement_entropy(psi, [n, n]))
    assert worst < 1e-8


def test_frame_blocks_match_conjugated_operators():
    """Squeezed-frame blocks equal G† (lab block) G on the retained levels."""
    from squidqsd.qsd import gaussian_unitary

    r, th = 0.3, 0.4
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    S = R @ np.diag([math.exp(r), math.exp(-r)]) @ R.T
    n, big = 12, 80
    G = gaussian_unitary(big, (0.0, 0.0), S)
    systems = [model.DuffingSystem(model.DuffingParams(beta=1.0), fock_dim=n),
               model.SquidSystem.from_circuit(model.scale_params(BASE, 1e-3, 1.0), fock_dim=n)]
    for sysm in systems:
        large = replace(sysm, fock_dim=big)
        lab = large.local_blocks()
        framed = sysm.local_blocks(S)
        for k in range(3):
            ref = (G.conj().T @ lab[k] @ G)[:n, :n]
            assert np.abs(ref - framed[k]).max() < 1e-9
        np.testing.assert_allclose(sysm.local_blocks(np.eye(2)), sysm.local_blocks(), atol=1e-12)
    x, p = hilbert.quadratures(big)
    u, v = model.frame_quadratures(n, S)
    assert np.abs((G.conj().T @ x @ G)[:n, :n] - u).max() < 1e-12
    assert np.abs((G.conj().T @ p @ G)[:n, :n] - v).max() < 1e-12
    A, B = model.frame_lindblad(S)
    a = hilbert.annihilation(n)
    assert np.abs((G.conj().T @ hilbert.annihilation(big) @ G)[:n, :n] - (A * a + B * a.T)).max() < 1e-12
