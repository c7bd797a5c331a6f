"""
Finite-pilot-length ground truth: random pilots, Rayleigh channel draws,
LMMSE estimation and the per-draw energy and SINR quantities that the
closed forms in :mod:`cfiot.detequiv` approximate.

Received pilots are whitened by the noise standard deviation, so the pilot
Gram matrix at AP l is ``Z_l = I + E_p Psi_A diag(beta_lA) Psi_A^H`` and no
explicit noise power appears in the estimator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .detequiv import energy_weight
from .errors import ContractError


def _cn(rng, shape, var=1.0):
    s = np.sqrt(var / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class PilotSet:
    psi: np.ndarray  # (tau, K) complex

    @property
    def tau(self):
        return self.psi.shape[0]


@dataclass(frozen=True)
class ChannelDraw:
    h: np.ndarray  # (L, N, K) small-scale coefficients

    def g(self, fading):
        return np.sqrt(fading.beta)[:, None, :] * self.h


@dataclass(frozen=True)
class EstimationResult:
    """LMMSE combiners for the active sensors at every AP.

    ``a_cols`` has shape (L, tau, K_a) and ``gamma_emp`` (L, K_a); both are
    ordered like ``active``.
    """

    active: np.ndarray
    psi: np.ndarray  # (tau, K_a) pilots of the active sensors
    beta: np.ndarray  # (L, K_a)
    a_cols: np.ndarray
    gamma_emp: np.ndarray

    def gamma_full(self, K):
        out = np.zeros((self.gamma_emp.shape[0], K))
        out[:, self.active] = self.gamma_emp
        return out


@dataclass(frozen=True)
class SinrTerms:
    D: np.ndarray
    U: np.ndarray
    I: np.ndarray  # (K_a, K_a), zero diagonal
    N: np.ndarray

    def sinr(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.D * xi / (self.U * xi + self.I @ xi + self.N)


def draw_pilots(config, rng, K=None) -> PilotSet:
    """i.i.d. CN(0, 1/tau) pilots for every sensor."""
    K = config.K if K is None else K
    return PilotSet(_cn(rng, (config.tau, K), 1.0 / config.tau))


def draw_channel(config, rng) -> ChannelDraw:
    return ChannelDraw(_cn(rng, (config.L, config.N, config.K)))


def lmmse_estimate(pilots: PilotSet, fading, active, config) -> EstimationResult:
    active = np.asarray(active, dtype=int)
    if active.size == 0:
        raise ContractError("empty active set")
    psi = pilots.psi[:, active]
    beta = fading.beta[:, active]
    E_p = config.E_p
    tau = psi.shape[0]
    L = beta.shape[0]
    a = np.empty((L, tau, active.size), dtype=complex)
    gamma = np.empty((L, active.size))
    eye = np.eye(tau)
    for l in range(L):
        Z = eye + (E_p * beta[l] * psi) @ psi.conj().T
        factor = cho_factor(Z, lower=True, check_finite=False)
        Zi_psi = cho_solve(factor, psi, check_finite=False)
        a[l] = np.sqrt(E_p) * beta[l] * Zi_psi
        quad = np.real(np.einsum("tk,tk->k", psi.conj(), Zi_psi))
        gamma[l] = E_p * beta[l] ** 2 * quad
    return EstimationResult(active, psi, beta, a, gamma)


def estimate_channels(est: EstimationResult, g, config, rng):
    """Channel estimates (L, N, K_a) from one pilot phase over channel `g` (L, N, K)."""
    g_a = g[:, :, est.active]
    Y = np.sqrt(config.E_p) * np.einsum("lnj,tj->lnt", g_a, est.psi)
    Y = Y + _cn(rng, Y.shape)
    return np.einsum("ltk,lnt->lnk", est.a_cols.conj(), Y)


def lower_bound_energy(gamma, eta, config, delta=1):
    """Energy lower bound per active sensor, from realised or asymptotic gamma."""
    s = np.sum(np.sqrt(eta) * gamma, axis=0)
    return energy_weight(config) * delta * s ** 2


def check_ap_power(eta, gamma, tol=1e-9):
    load = np.sum(eta * gamma, axis=1)
    if np.any(eta < 0) or np.any(load > 1 + tol):
        raise ContractError(f"per-AP power constraint violated (max load {load.max():.6g})")


def empirical_harvested_energy(est: EstimationResult, eta, fading, config, rng,
                               n_channel_draws=1, delta=1):
    """Harvested energy per active sensor, averaged over channel draws.

    Symbols and receiver noise are integrated analytically; only the
    channel and its estimate are sampled. Returns ``(mean, std, lower)``
    where ``lower`` is the realised lower-bound term.
    """
    eta = np.asarray(eta, dtype=float)
    check_ap_power(eta, est.gamma_emp)
    lower = lower_bound_energy(est.gamma_emp, eta, config, delta)
    if delta == 0:
        z = np.zeros(est.active.size)
        return z, z.copy(), lower
    scale = (1 - config.alpha) * config.Delta * config.zeta
    root_eta = np.sqrt(eta)
    out = np.empty((n_channel_draws, est.active.size))
    for t in range(n_channel_draws):
        g = draw_channel(config, rng).g(fading)
        ghat = estimate_channels(est, g, config, rng)
        g_a = g[:, :, est.active]
        s = np.einsum("lnk,lnj,lj->kj", g_a, ghat.conj(), root_eta)
        out[t] = scale * (config.rho_d * np.sum(np.abs(s) ** 2, axis=1) + config.sigma2)
    std = out.std(axis=0, ddof=1) if n_channel_draws > 1 else np.zeros(est.active.size)
    return out.mean(axis=0), std, lower


def empirical_sinr_terms(est: EstimationResult, fading, config) -> SinrTerms:
    """Per-pilot-draw SINR coefficients for matched-filter detection."""
    beta = est.beta
    gamma = est.gamma_emp
    rho_u, E_p = config.rho_u, config.E_p
    sg = gamma.sum(axis=0)
    D = rho_u * config.N * sg ** 2
    U = rho_u * np.sum(gamma * beta, axis=0)
    Nn = config.sigma2 * sg
    # P[l, i, k] = psi_i^H a_lk
    P = np.einsum("ti,ltk->lik", est.psi.conj(), est.a_cols)
    norm2 = np.sum(np.abs(est.a_cols) ** 2, axis=1)
    t1 = norm2.T @ beta
    coh = np.einsum("lj,ljk->kj", beta, P)
    t2 = config.N * E_p * np.abs(coh) ** 2
    q = np.einsum("li,lik->lk", beta, np.abs(P) ** 2)
    t3 = E_p * (q.T @ beta)
    I = rho_u * (t1 + t2 + t3)
    np.fill_diagonal(I, 0.0)
    return SinrTerms(D, U, I, Nn)


def rate_from_terms(terms: SinrTerms, xi, alpha, delta=0, theta=None):
    """Achievable rate (bits/s/Hz) per active sensor."""
    r = (1 - alpha) * (1 - delta) * np.log2(1.0 + terms.sinr(xi))
    return r if theta is None else r * np.asarray(theta)
