import math
from dataclasses import replace

import numpy as np
import pytest

from squidqsd import hilbert, model, qsd
from squidqsd.errors import ConfigError, IntegratorError, TruncationError

BASE = model.CircuitParams.baseline()


def squid(a=1e-3, n=14, **kw):
    return model.SquidSystem.from_circuit(model.scale_params(BASE, a, 1.0), fock_dim=n, **kw)


def duffing(n=14, beta=1.0, **kw):
    return model.DuffingSystem(model.DuffingParams(beta=beta, **kw), fock_dim=n)


def test_step_without_dissipation_is_unitary_to_first_order():
    psi = hilbert.basis_state(4, 0)
    out = qsd.qsd_step(psi, np.zeros((4, 4)), [], 0.01, np.zeros(0))
    np.testing.assert_array_equal(out, psi)
    H = hilbert.number(6)
    psi = hilbert.coherent_state(6, 0.3)
    out = qsd.qsd_step(psi, H, [], 1e-3, np.zeros(0), scheme="rk4")
    exact = np.exp(-1j * np.arange(6) * 1e-3) * psi
    assert np.abs(out - exact).max() < 1e-12


def test_euler_step_matches_formula():
    rng = np.random.default_rng(0)
    d = 5
    psi = hilbert.normalize(rng.normal(size=d) + 1j * rng.normal(size=d))
    H = rng.normal(size=(d, d))
    H = H + H.T
    L = 0.3 * hilbert.annihilation(d)
    dt, dxi = 1e-3, 0.02 - 0.01j
    ell = psi.conj() @ L @ psi
    ref = psi + (-1j * H @ psi + np.conj(ell) * L @ psi - 0.5 * L.conj().T @ L @ psi
                 - 0.5 * abs(ell) ** 2 * psi) * dt + (L @ psi - ell * psi) * dxi
    ref /= np.linalg.norm(ref)
    out = qsd.qsd_step(psi, H, [L], dt, [dxi])
    assert np.abs(out - ref).max() < 1e-14


def test_batched_step_matches_single():
    rng = np.random.default_rng(1)
    d = 6
    H = hilbert.number(d)
    L = hilbert.annihilation(d)
    states = np.array([hilbert.normalize(rng.normal(size=d) + 1j * rng.normal(size=d)) for _ in range(3)])
    xis = rng.normal(size=(3, 1)) + 1j * rng.normal(size=(3, 1))
    batch = qsd.qsd_step(states, H, [L], 1e-3, xis * 0.03, scheme="rk4")
    for k in range(3):
        single = qsd.qsd_step(states[k], H, [L], 1e-3, xis[k] * 0.03, scheme="rk4")
        assert np.abs(batch[k] - single).max() < 1e-14


def test_damped_vacuum_is_stationary():
    d = 8
    H = hilbert.number(d) + 0.5 * np.eye(d)
    L = math.sqrt(0.2) * hilbert.annihilation(d)
    stream = qsd.NoiseStream(3, 0)
    psi = hilbert.basis_state(d, 0)
    for _ in range(200):
        psi = qsd.qsd_step(psi, H, [L], 1e-2, [qsd.complex_wiener(stream, 1e-2)], scheme="rk4")
    assert abs(abs(psi[0]) - 1) < 1e-12


def test_step_errors():
    psi = hilbert.basis_state(3, 0)
    with pytest.raises(ConfigError):
        qsd.qsd_step(psi, np.eye(3), [np.eye(3)], 1e-3, [0.0, 0.0])
    with pytest.raises(ConfigError):
        qsd.qsd_step(psi, np.eye(3), [], 1e-3, np.zeros(0), scheme="midpoint")
    with pytest.raises(IntegratorError):
        qsd.qsd_step(psi, np.full((3, 3), np.nan), [], 1e-3, np.zeros(0))


def test_noise_stream_reproducible_and_independent():
    a = qsd.NoiseStream(7, 2).normals(100)
    b = qsd.NoiseStream(7, 2).normals(100)
    c = qsd.NoiseStream(7, 3).normals(100)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    s = qsd.NoiseStream(7, 2)
    s.normals(10, 2)
    assert s.counter == 20
    # drawing in chunks gives the same stream as one draw
    s = qsd.NoiseStream(7, 2)
    np.testing.assert_array_equal(np.concatenate([s.normals(40), s.normals(60)]), a)


def test_complex_wiener_moments():
    dt = 1e-3
    xi = qsd.complex_wiener(qsd.NoiseStream(0, 0), dt, size=200_000)
    se = math.sqrt(dt / 200_000)
    assert abs(xi.mean()) < 5 * se
    assert abs((xi * xi).mean()) < 5 * dt / math.sqrt(200_000)
    assert abs((np.abs(xi) ** 2).mean() - dt) < 5 * dt / math.sqrt(200_000)
    with pytest.raises(ConfigError):
        qsd.complex_wiener(qsd.NoiseStream(0), 0.0)


def test_gaussian_unitary_maps_quadratures():
    th, r = 0.7, 0.25
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    S = R @ np.diag([math.exp(r), math.exp(-r)]) @ R.T
    big, n = 90, 15
    G = qsd.gaussian_unitary(big, (0.4, -0.3), S)
    assert np.abs(G.conj().T @ G - np.eye(big)).max() < 1e-10
    x, p = hilbert.quadratures(big)
    vac = hilbert.basis_state(big, 0)
    g = G @ vac
    assert hilbert.expectation(g, x).real == pytest.approx(0.4, abs=1e-10)
    assert hilbert.expectation(g, p).real == pytest.approx(-0.3, abs=1e-10)
    G0 = qsd.gaussian_unitary(big, (0.0, 0.0), S)
    gx = (G0.conj().T @ x @ G0)[:n, :n]
    gp = (G0.conj().T @ p @ G0)[:n, :n]
    assert np.abs(gx - (S[0, 0] * x + S[0, 1] * p)[:n, :n]).max() < 1e-10
    assert np.abs(gp - (S[1, 0] * x + S[1, 1] * p)[:n, :n]).max() < 1e-10


@pytest.mark.parametrize("make", [duffing, squid])
@pytest.mark.parametrize("scheme", ["euler", "rk4"])
def test_kernel_matches_dense_step_in_squeezed_frame(make, scheme):
    th, r = 0.4, 0.3
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    S = R @ np.diag([math.exp(r), math.exp(-r)]) @ R.T
    n = 8
    sysm = make(n=n)
    icfg = qsd.IntegratorConfig(dt=1e-3, t_total=0.01, sample_stride=10, track_frame=False, scheme=scheme,
                                phase_gauge=False, squeeze_threshold=0)
    eng = qsd.TrajectoryEngine(sysm, icfg)
    eng.reset_frame(np.array([S, S]))
    rng = np.random.default_rng(0)
    psi = hilbert.normalize(rng.normal(size=n * n) + 1j * rng.normal(size=n * n))
    phi = psi.reshape(n, n).copy()
    normals = rng.normal(size=(5, 2, 2))
    t0 = 0.3
    eng.advance(phi, alpha := np.zeros(2, complex), t0, normals)

    u, _ = model.frame_quadratures(n, S)
    v = model.frame_quadratures(n, S)[1]
    A, B = model.frame_lindblad(S)
    an = hilbert.annihilation(n)
    K = A * an + B * an.T
    Ls = [math.sqrt(2 * sysm.damping) * hilbert.embed(K, j, [n, n]) for j in range(2)]
    blocks = sysm.local_blocks(S)
    local = model._duffing_local if sysm.kind == "duffing" else model._squid_local
    ref = psi.copy()
    for k in range(5):
        t = t0 + k * icfg.dt
        (c1, c2), fx, fp = local(sysm.kernel_params(), (0, 0), (0, 0), t)
        h = blocks[0] + c1 * blocks[1] + c2 * blocks[2] + fx * u + fp * v
        H = (hilbert.embed(h, 0, [n, n]) + hilbert.embed(h, 1, [n, n])
             + sysm.mu * hilbert.embed(u, 0, [n, n]) @ hilbert.embed(u, 1, [n, n]))
        xi = (normals[k, :, 0] + 1j * normals[k, :, 1]) * math.sqrt(icfg.dt / 2)
        ref = qsd.qsd_step(ref, H, Ls, icfg.dt, xi, scheme=scheme)
    assert np.abs(ref - phi.ravel()).max() < 1e-13
    np.testing.assert_array_equal(alpha, 0)


def _observed(sysm, track, thr, T=5.0, dt=1e-3):
    icfg = qsd.IntegratorConfig(dt=dt, t_total=T, sample_stride=500, track_frame=track, squeeze_threshold=thr)
    eng = qsd.TrajectoryEngine(sysm, icfg)
    phi, alpha = qsd.initial_state(sysm, track_frame=track)
    rng = np.random.default_rng(1)
    out = []
    for k in range(icfg.n_samples - 1):
        eng.advance(phi, alpha, k * icfg.sample_stride * dt, rng.normal(size=(icfg.sample_stride, 2, 2)))
        obs, S, occ = eng.observe(phi, alpha)
        out.append((obs[0], S))
    return np.array(out), eng.reframes


@pytest.mark.slow
@pytest.mark.parametrize("thr", [0.0, 1.5])
def test_moving_frame_matches_large_lab_basis(thr):
    """A 14-level moving frame reproduces a 36-level fixed-basis trajectory."""
    lab, _ = _observed(squid(n=36), False, 0.0)
    framed, refits = _observed(squid(n=14), True, thr)
    assert np.abs(lab[:, 0] - framed[:, 0]).max() < 3e-3
    assert np.abs(lab[:, 1] - framed[:, 1]).max() < 3e-3
    if thr:
        assert refits > 0


def test_run_trajectory_record_and_determinism(tmp_path):
    sysm = duffing(n=15, beta=0.25)
    icfg = qsd.IntegratorConfig(dt=5e-3, t_total=1.0, sample_stride=20)
    a = qsd.run_trajectory(sysm, icfg, qsd.NoiseStream(4, 1))
    b = qsd.run_trajectory(sysm, icfg, qsd.NoiseStream(4, 1))
    c = qsd.run_trajectory(sysm, icfg, qsd.NoiseStream(4, 2))
    assert len(a) == icfg.n_samples == 11
    np.testing.assert_array_equal(a.columns(), b.columns())
    assert not np.array_equal(a.columns(), c.columns())
    np.testing.assert_allclose(a.times, 0.1 * np.arange(11), atol=1e-14)
    assert a.exp_x1[0] == pytest.approx(4.0, abs=1e-12)
    assert np.all(a.norm_drift < 1e-3)
    assert a.metadata["seed"] == 4 and a.metadata["trajectory_index"] == 1
    path = tmp_path / "t.csv"
    a.to_csv(path, extra={"extra": np.arange(11)})
    assert path.read_text().splitlines()[0] == ",".join(qsd.CSV_COLUMNS + ["extra"])
    back = qsd.TrajectoryRecord.from_csv(path)
    np.testing.assert_allclose(back.columns(), a.columns(), rtol=1e-14, atol=1e-300)


def test_swap_symmetric_start_stays_symmetric_without_noise():
    sysm = squid(n=12)
    icfg = qsd.IntegratorConfig(dt=2e-3, t_total=2.0, sample_stride=50)
    eng = qsd.TrajectoryEngine(sysm, icfg)
    phi, alpha = qsd.initial_state(sysm)
    for k in range(icfg.n_samples - 1):
        eng.advance(phi, alpha, k * 0.1, np.zeros((50, 2, 2)))
    assert np.abs(phi - phi.T).max() < 1e-10
    obs, _, _ = eng.observe(phi, alpha)
    assert obs[0] == pytest.approx(obs[2], abs=1e-10)
    assert obs[1] == pytest.approx(obs[3], abs=1e-10)


def test_energy_conserved_without_damping_or_drive():
    p = replace(model.derive_dimensionless(model.scale_params(BASE, 1e-3, 1.0)), zeta=0.0, phi_d=0.0)
    sysm = model.SquidSystem(p, fock_dim=16)
    icfg = qsd.IntegratorConfig(dt=2e-3, t_total=4.0, sample_stride=100, track_frame=False)
    eng = qsd.TrajectoryEngine(sysm, icfg)
    psi0 = np.kron(hilbert.coherent_state(16, 0.3), hilbert.coherent_state(16, -0.2))
    phi, alpha = psi0.reshape(16, 16).copy(), np.zeros(2, complex)
    H = sysm.hamiltonian(0.0)
    e0 = hilbert.expectation(psi0, H).real
    for k in range(icfg.n_samples - 1):
        eng.advance(phi, alpha, k * 0.2, np.zeros((100, 2, 2)))
    assert hilbert.expectation(phi.ravel(), H).real == pytest.approx(e0, abs=1e-6)


def test_truncation_abort():
    sysm = model.SquidSystem(replace(model.derive_dimensionless(BASE), zeta=0.0), fock_dim=8, mu=0.0)
    icfg = qsd.IntegratorConfig(dt=5e-3, t_total=30.0, sample_stride=100, occupancy_abort=1e-3)
    with pytest.raises(TruncationError):
        qsd.run_trajectory(sysm, icfg, qsd.NoiseStream(0))
    rec = qsd.run_trajectory(sysm, icfg, qsd.NoiseStream(0), check_truncation=False)
    assert rec.truncation_occupancy.max() > 1e-3


def test_integrator_config_validation():
    with pytest.raises(ConfigError):
        qsd.IntegratorConfig(dt=0)
    with pytest.raises(ConfigError):
        qsd.IntegratorConfig(sample_stride=0)
    with pytest.raises(ConfigError):
        qsd.IntegratorConfig(squeeze_threshold=0.5)
    with pytest.raises(ConfigError):
        qsd.IntegratorConfig(scheme="leapfrog")
    with pytest.raises(ConfigError):
        qsd.IntegratorConfig(max_frame_stretch=0.5)
    icfg = qsd.IntegratorConfig(dt=1e-3, t_total=1.0, sample_stride=100)
    assert icfg.n_steps == 1000 and icfg.n_samples == 11
    assert qsd.resolved_squeeze(squid(), icfg) == 0.0
    assert qsd.resolved_squeeze(duffing(), icfg) == 4.0
    assert qsd.resolved_squeeze(duffing(), replace(icfg, squeeze_threshold=2.0)) == 2.0


def test_initial_state_kinds(tmp_path):
    sysm = duffing(n=6)
    phi, alpha = qsd.initial_state(sysm)
    assert phi[0, 0] == 1 and alpha[0] == pytest.approx(1 / math.sqrt(2))
    phi, alpha = qsd.initial_state(sysm, "vacuum", track_frame=False)
    assert phi[0, 0] == 1 and np.all(alpha == 0)
    path = tmp_path / "psi.txt"
    hilbert.dump_matrix(path, 2.0 * hilbert.basis_state([6, 6], [1, 2]))
    phi, _ = qsd.initial_state(sysm, "file", path)
    assert phi[1, 2] == pytest.approx(1.0)
    hilbert.dump_matrix(path, np.ones(5))
    with pytest.raises(ConfigError):
        qsd.initial_state(sysm, "file", path)
    with pytest.raises(ConfigError):
        qsd.initial_state(sysm, "thermal")
    with pytest.raises(ConfigError):
        qsd.run_trajectory(sysm, qsd.IntegratorConfig(t_total=0.01, sample_stride=1), qsd.NoiseStream(0),
                           initial=np.zeros(36))


def test_packet_at_potential_minimum_stays_put():
    """zeta=0, phi_d=0, mu=0: vacuum centred on a well minimum keeps ⟨x⟩ nearly fixed for 5 periods.

    The quadratic-part vacuum is not an eigenstate of the full well, so ⟨x⟩
    breathes by about 1.2% of its offset; the bound leaves room for that.
    """
    from squidqsd import rsj

    p = replace(model.derive_dimensionless(BASE), zeta=0.0, phi_d=0.0)
    stable = [r for r in rsj.equilibria(p) if 1 + p.beta_squid * math.cos(2 * math.pi * (r + p.phi_x)) > 0]
    centre = p.flux_to_x * (stable[0] + p.phi_x) / math.sqrt(2)
    n = 30
    phi = np.zeros((n, n), complex)
    phi[0, 0] = 1
    sysm = model.SquidSystem(p, fock_dim=n, mu=0.0)
    icfg = qsd.IntegratorConfig(dt=1e-3, t_total=10 * math.pi, sample_stride=200)
    rec = qsd.run_trajectory(sysm, icfg, qsd.NoiseStream(0), initial=(phi, np.array([centre, centre])))
    x = rec.exp_x1
    assert x[0] == pytest.approx(stable[0], abs=1e-12)
    assert np.abs(x - x[0]).max() < 0.02 * abs(x[0])
    assert rec.truncation_occupancy.max() < 1e-8
