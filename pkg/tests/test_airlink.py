import math

import numpy as np
import pytest

from cfiot import airlink
from cfiot.errors import ContractError
from cfiot.netmodel import SystemConfig, make_scene

from conftest import fading_from, small_config


def test_pilot_shape_and_norm():
    cfg = SystemConfig(tau=60, K=200, K_a=30)
    rng = np.random.default_rng(0)
    norms = np.array([np.sum(np.abs(airlink.draw_pilots(cfg, rng).psi) ** 2, axis=0)
                      for _ in range(500)])
    assert airlink.draw_pilots(cfg, rng).psi.shape == (60, 200)
    # each column norm^2 has variance 1/tau
    se = math.sqrt(1 / 60 / norms.size)
    assert abs(norms.mean() - 1) < 3 * se


def test_scalar_pilots():
    cfg = SystemConfig(tau=1, K=4, K_a=2)
    p = airlink.draw_pilots(cfg, np.random.default_rng(0))
    assert p.psi.shape == (1, 4) and p.tau == 1


def test_pilots_deterministic():
    cfg = SystemConfig()
    a = airlink.draw_pilots(cfg, np.random.default_rng(4)).psi
    b = airlink.draw_pilots(cfg, np.random.default_rng(4)).psi
    assert np.array_equal(a, b)


def test_channel_unit_variance():
    cfg = SystemConfig()
    h = airlink.draw_channel(cfg, np.random.default_rng(0)).h
    assert h.shape == (cfg.L, cfg.N, cfg.K)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.05)


def _unit_pilots(tau, cols):
    psi = np.zeros((tau, len(cols)), dtype=complex)
    for j, row in enumerate(cols):
        psi[row, j] = 1.0
    return airlink.PilotSet(psi)


def test_single_sensor_unit_pilot():
    cfg = small_config(L=1, K=1, K_a=1)
    beta = 1.0 / cfg.E_p  # E_p * beta = 1
    est = airlink.lmmse_estimate(_unit_pilots(cfg.tau, [0]), fading_from([[beta]]), [0], cfg)
    assert est.gamma_emp[0, 0] == pytest.approx(beta / 2, rel=1e-12)


def test_orthogonal_pilots_decouple():
    cfg = small_config(L=1, K=2, K_a=2)
    b = np.array([[2.0, 5.0]]) / cfg.E_p
    est = airlink.lmmse_estimate(_unit_pilots(cfg.tau, [0, 1]), fading_from(b), [0, 1], cfg)
    want = cfg.E_p * b[0] ** 2 / (1 + cfg.E_p * b[0])
    assert np.allclose(est.gamma_emp[0], want, rtol=1e-12)


def test_estimate_quality_below_channel_energy(rng):
    cfg = SystemConfig()
    _, fm = make_scene(cfg)
    active = np.sort(rng.choice(cfg.K, cfg.K_a, replace=False))
    for _ in range(5):
        est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, active, cfg)
        assert np.all(est.gamma_emp > 0)
        assert np.all(est.gamma_emp < fm.beta[:, active])
        full = est.gamma_full(cfg.K)
        inactive = np.setdiff1d(np.arange(cfg.K), active)
        assert np.all(full[:, inactive] == 0)


def test_gram_matrix_eigenvalues_at_least_one(rng):
    cfg = SystemConfig()
    _, fm = make_scene(cfg)
    active = np.arange(cfg.K_a)
    psi = airlink.draw_pilots(cfg, rng).psi[:, active]
    for l in range(cfg.L):
        Z = np.eye(cfg.tau) + (cfg.E_p * fm.beta[l, active] * psi) @ psi.conj().T
        assert np.allclose(Z, Z.conj().T)
        assert np.linalg.eigvalsh(Z).min() >= 1 - 1e-9


def test_activation_lowers_estimate_quality(rng):
    cfg = SystemConfig()
    _, fm = make_scene(cfg)
    small = np.arange(cfg.K_a)
    big = np.arange(cfg.K_a + 1)
    diffs = []
    for _ in range(200):
        p = airlink.draw_pilots(cfg, rng)
        a = airlink.lmmse_estimate(p, fm, small, cfg).gamma_emp
        b = airlink.lmmse_estimate(p, fm, big, cfg).gamma_emp[:, : cfg.K_a]
        diffs.append(b - a)
    assert np.all(np.mean(diffs, axis=0) < 0)


def test_cross_ap_estimates_uncorrelated():
    cfg = small_config(L=4, N=1)
    _, fm = make_scene(cfg)
    rng = np.random.default_rng(7)
    est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, np.arange(cfg.K_a), cfg)
    n = 10_000
    a = np.empty(n, dtype=complex)
    b = np.empty(n, dtype=complex)
    for i in range(n):
        g = airlink.draw_channel(cfg, rng).g(fm)
        gh = airlink.estimate_channels(est, g, cfg, rng)
        a[i], b[i] = gh[0, 0, 0], gh[1, 0, 0]
    cov = np.mean(a * b.conj())
    se = math.sqrt(np.mean(np.abs(a) ** 2) * np.mean(np.abs(b) ** 2) / n)
    assert abs(cov.real) < 3 * se and abs(cov.imag) < 3 * se
    # realised estimate power matches gamma
    assert np.mean(np.abs(a) ** 2) == pytest.approx(est.gamma_emp[0, 0], rel=0.05)


def test_energy_zero_in_uplink_slot(rng):
    cfg = small_config()
    _, fm = make_scene(cfg)
    est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, [0, 1, 2], cfg)
    eta = 1 / (3 * est.gamma_emp)
    mean, std, _ = airlink.empirical_harvested_energy(est, eta, fm, cfg, rng, delta=0)
    assert np.all(mean == 0) and np.all(std == 0)


def test_lower_bound_single_term():
    cfg = SystemConfig(tau=60, T_c=200, Delta=0.2, zeta=1.0, rho_d=20.0, N=10, K_a=1, K=1)
    assert cfg.alpha == pytest.approx(0.3)
    e = airlink.lower_bound_energy(np.array([[0.5]]), np.array([[0.01]]), cfg)
    assert e[0] == pytest.approx(0.7, rel=1e-12)


def test_energy_rejects_power_violation(rng):
    cfg = small_config()
    _, fm = make_scene(cfg)
    est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, [0, 1, 2], cfg)
    with pytest.raises(ContractError):
        airlink.empirical_harvested_energy(est, 1 / est.gamma_emp, fm, cfg, rng)
    with pytest.raises(ContractError):
        airlink.check_ap_power(-np.ones((1, 1)), np.ones((1, 1)))


def test_full_energy_above_lower_bound():
    cfg = small_config(N=4)
    _, fm = make_scene(cfg)
    rng = np.random.default_rng(3)
    est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, [0, 1, 2], cfg)
    eta = 1 / (3 * est.gamma_emp)
    mean, std, lower = airlink.empirical_harvested_energy(est, eta, fm, cfg, rng, 4000)
    assert np.all(std > 0)
    assert np.all(mean >= 0.99 * lower)


def test_sinr_terms_positive_and_single_sensor(rng):
    cfg = SystemConfig()
    _, fm = make_scene(cfg)
    est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, np.arange(cfg.K_a), cfg)
    t = airlink.empirical_sinr_terms(est, fm, cfg)
    assert np.all(t.D > 0) and np.all(t.U > 0) and np.all(t.N > 0)
    off = ~np.eye(cfg.K_a, dtype=bool)
    assert np.all(t.I[off] > 0) and np.all(np.diag(t.I) == 0)

    one = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, [5], cfg)
    t1 = airlink.empirical_sinr_terms(one, fm, cfg)
    assert t1.I.shape == (1, 1) and t1.I[0, 0] == 0
    xi = np.array([0.3])
    assert t1.sinr(xi)[0] == pytest.approx(t1.D[0] * 0.3 / (t1.U[0] * 0.3 + t1.N[0]))


def test_sinr_terms_match_channel_monte_carlo():
    """U and I against sample moments of the matched-filter output."""
    cfg = small_config(L=4, N=2, K=6, K_a=3, tau=4)
    _, fm = make_scene(cfg)
    rng = np.random.default_rng(11)
    active = np.array([0, 1, 2])
    est = airlink.lmmse_estimate(airlink.draw_pilots(cfg, rng), fm, active, cfg)
    terms = airlink.empirical_sinr_terms(est, fm, cfg)
    n = 20_000
    s = np.empty((n, 3, 3), dtype=complex)  # s[k, j] = sum_l ghat_lk^H g_lj
    for i in range(n):
        g = airlink.draw_channel(cfg, rng).g(fm)
        gh = airlink.estimate_channels(est, g, cfg, rng)
        s[i] = np.einsum("lnk,lnj->kj", gh.conj(), g[:, :, active])
    N, rho = cfg.N, cfg.rho_u
    # coherent gain
    mean_diag = s[:, range(3), range(3)].mean(axis=0)
    assert np.allclose(mean_diag.real, N * est.gamma_emp.sum(axis=0), rtol=0.03)
    # self-interference from estimation error
    var = np.abs(s[:, range(3), range(3)] - mean_diag) ** 2
    se = var.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(var.mean(axis=0) - N * terms.U / rho) < 5 * se)
    # cross terms
    p2 = np.abs(s) ** 2
    for k in range(3):
        for j in range(3):
            if j == k:
                continue
            want = N * terms.I[k, j] / rho
            se = p2[:, k, j].std() / math.sqrt(n)
            assert abs(p2[:, k, j].mean() - want) < 5 * se, (k, j)


def test_rate_mode_gate_and_silence():
    t = airlink.SinrTerms(np.array([4.0, 5.0]), np.array([1.0, 1.0]),
                          np.array([[0.0, 0.5], [0.5, 0.0]]), np.array([1.0, 1.0]))
    assert np.all(airlink.rate_from_terms(t, np.ones(2), 0.3, delta=1) == 0)
    r = airlink.rate_from_terms(t, np.array([0.0, 1.0]), 0.3)
    assert r[0] == 0 and r[1] > 0
    assert np.all(airlink.rate_from_terms(t, np.ones(2), 0.3, theta=[0, 0]) == 0)


def test_rate_arithmetic():
    U, N = 0.5, 0.25
    t = airlink.SinrTerms(np.array([99 * (U + N)]), np.array([U]), np.zeros((1, 1)),
                          np.array([N]))
    r = airlink.rate_from_terms(t, np.ones(1), 0.3)
    assert r[0] == pytest.approx(0.7 * math.log2(100), rel=1e-12)
    assert r[0] == pytest.approx(4.651, abs=1e-3)


def test_empty_active_set():
    cfg = small_config()
    _, fm = make_scene(cfg)
    with pytest.raises(ContractError):
        airlink.lmmse_estimate(airlink.draw_pilots(cfg, np.random.default_rng(0)), fm, [], cfg)
