"""
Deterministic equivalents for random-pilot LMMSE estimation.

For an AP l and active sensor k, the interference-plus-noise pilot Gram
matrix excluding k is ``Z_lk = I + sum_{j != k} p_j psi_j psi_j^H`` with
``p_j = E_p * beta_lj`` and ``psi_j ~ CN(0, I/tau)``. Its normalised traces
``tr(Z^-1)/tau`` and ``tr(Z^-2)/tau`` converge to the scalars computed here,
from which the estimate quality, harvested energy and uplink SINR follow in
closed form, independent of the pilot draw.

Arrays indexed by (l, k) have shape ``(L, K_a)`` with columns ordered like
the ``active`` index array they were built for.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError


def _picard(p, mask, tau, max_iter, tol, init=None):
    """Batched fixed point for varsigma; p has shape (..., n), mask (..., m, n).

    Each row of `mask` selects the interferer set of one problem. Returns
    (varsigma, Z) with shapes (..., m, n) and (..., m).
    """
    sig = np.where(mask, 1.0 if init is None else init, 0.0)
    prev_res = np.inf
    damp = False
    for it in range(max_iter):
        s = np.sum(np.where(mask, p[..., None, :] / (tau * (1.0 + sig)), 0.0), axis=-1)
        Z = 1.0 / (1.0 + s)
        new = np.where(mask, p[..., None, :] * Z[..., None], 0.0)
        if damp:
            new = 0.5 * (new + sig)
        scale = np.where(mask, np.abs(new), 1.0)
        res = float(np.max(np.abs(new - sig) / scale, initial=0.0))
        sig = new
        if res < tol:
            s = np.sum(np.where(mask, p[..., None, :] / (tau * (1.0 + sig)), 0.0), axis=-1)
            return sig, 1.0 / (1.0 + s)
        damp = res >= prev_res
        prev_res = res
    raise SolverError(f"fixed point did not converge in {max_iter} iterations "
                      f"(residual {res:.3e})", residual=res)


def fixed_point(betas_other, E_p, tau, max_iter=500, tol=1e-10, init=None):
    """Solve for (varsigma, Z) given the interferers' large-scale gains at one AP.

    With no interferers, ``Z = 1`` and varsigma is empty.
    """
    b = np.atleast_1d(np.asarray(betas_other, dtype=float))
    if b.size == 0:
        return np.empty(0), 1.0
    if np.any(b <= 0) or tau < 1:
        raise ValueError("betas must be positive and tau >= 1")
    mask = np.ones((1, b.size), dtype=bool)
    init_arr = None if init is None else np.asarray(init, dtype=float)[None, :]
    sig, Z = _picard(E_p * b, mask, tau, max_iter, tol, init_arr)
    return sig[0], float(Z[0])


def fixed_point_residual(varsigma, betas_other, E_p, tau):
    """Relative sup-norm residual of the fixed-point equations."""
    p = E_p * np.asarray(betas_other, dtype=float)
    if p.size == 0:
        return 0.0
    Z = 1.0 / (1.0 + np.sum(p / (tau * (1.0 + varsigma))))
    return float(np.max(np.abs(p * Z - varsigma) / np.abs(varsigma)))


def _tilde(p, mask, sig, Z, tau):
    # Differentiating the resolvent identity in the diagonal shift gives
    # c_j = p_j Z^2 and J_ji = p_j p_i Z^2 / (tau (1 + s_i)^2).
    Z2 = (Z * Z)[..., None]
    w = np.where(mask, p[..., None, :] / (1.0 + sig) ** 2, 0.0)  # (..., m, n)
    pm = np.where(mask, p[..., None, :], 0.0)
    c = pm * Z2
    J = pm[..., :, None] * w[..., None, :] * Z2[..., None] / tau
    n = p.shape[-1]
    A = np.eye(n) - J
    hat = np.linalg.solve(A, c[..., None])[..., 0]
    return Z * Z * (1.0 + np.sum(w * hat, axis=-1) / tau)


def trace_tilde(varsigma, Z_cal, betas_other, E_p, tau):
    """Deterministic equivalent of ``tr(Z^-2)/tau`` from a converged fixed point."""
    b = np.atleast_1d(np.asarray(betas_other, dtype=float))
    if b.size == 0:
        return 1.0
    mask = np.ones((1, b.size), dtype=bool)
    try:
        out = _tilde(E_p * b, mask, np.asarray(varsigma)[None, :], np.array([Z_cal]), tau)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular system for Z_tilde: {exc}") from exc
    return float(out[0])


def bar_gamma(beta, Z_cal, E_p):
    """Asymptotic mean-square channel estimate."""
    x = E_p * np.asarray(beta) * np.asarray(Z_cal)
    return np.asarray(beta) * x / (1.0 + x)


def energy_weight(config):
    """J per unit of (sum_l sqrt(eta) gamma)^2 in the energy lower bound."""
    return (1 - config.alpha) * config.Delta * config.zeta * config.rho_d * config.N ** 2


def bar_energy(eta, gamma_col, config, delta=1, theta_k=1):
    """Closed-form harvested energy (J) of one sensor from its per-AP coefficients."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ValueError("eta must be non-negative")
    s = np.sum(np.sqrt(eta) * np.asarray(gamma_col), axis=0)
    return energy_weight(config) * delta * theta_k * s ** 2


@dataclass(frozen=True)
class DetEquivSet:
    active: np.ndarray
    beta: np.ndarray  # (L, K_a) gains of the active sensors
    Z_cal: np.ndarray
    Z_tilde: np.ndarray
    bar_gamma: np.ndarray
    varrho: np.ndarray
    vartheta: np.ndarray
    barD: np.ndarray
    barU: np.ndarray
    barN: np.ndarray
    barI: np.ndarray  # (K_a, K_a), zero diagonal

    def sinr(self, xi):
        xi = np.asarray(xi, dtype=float)
        den = self.barU * xi + self.barI @ xi + self.barN
        return self.barD * xi / den

    def rate(self, xi, alpha, delta=0):
        return (1 - alpha) * (1 - delta) * np.log2(1.0 + self.sinr(xi))


def bar_rate_terms(fading, active, config) -> DetEquivSet:
    """All closed-form quantities for one active set."""
    active = np.asarray(active, dtype=int)
    Ka = active.size
    if Ka == 0:
        raise ValueError("empty active set")
    beta_a = fading.beta[:, active]
    p = config.E_p * beta_a
    tau = config.tau
    if Ka == 1:
        Z = np.ones_like(beta_a)
        Zt = np.ones_like(beta_a)
    else:
        mask = ~np.eye(Ka, dtype=bool)
        mask = np.broadcast_to(mask, (beta_a.shape[0], Ka, Ka))
        sig, Z = _picard(p, mask, tau, config.fp_max_iter, config.fp_tol)
        try:
            Zt = _tilde(p, mask, sig, Z, tau)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular system for Z_tilde: {exc}") from exc
    pz = p * Z
    g = beta_a * pz / (1.0 + pz)
    varrho = config.E_p * beta_a ** 2 * Zt / (1.0 + pz) ** 2
    vartheta = config.E_p * beta_a ** 2 * Z ** 2 / (1.0 + pz) ** 2
    rho_u = config.rho_u
    sg = g.sum(axis=0)
    barD = config.N * rho_u * sg ** 2
    barU = rho_u * np.sum(g * beta_a, axis=0)
    barN = config.sigma2 * sg
    barI = rho_u * (varrho.T @ beta_a) + rho_u * config.E_p * ((beta_a * vartheta).T @ beta_a)
    np.fill_diagonal(barI, 0.0)
    return DetEquivSet(active, beta_a, Z, Zt, g, varrho, vartheta, barD, barU, barN, barI)


def bar_rate(det: DetEquivSet, xi, alpha, delta=0, theta=None):
    """Closed-form rate (bits/s/Hz) of each active sensor."""
    r = det.rate(xi, alpha, delta)
    return r if theta is None else r * np.asarray(theta)


def r_max(fading, config) -> float:
    """Rate ceiling: full power, perfect CSI and no interference, best sensor."""
    snr = config.N * config.rho_u / config.sigma2 * fading.beta.sum(axis=0)
    return float((1 - config.alpha) * np.log2(1.0 + snr.max()))
