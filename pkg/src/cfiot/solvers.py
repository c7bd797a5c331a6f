"""
Per-slot decisions: auxiliary rate, active-set choice, downlink energy
beamforming by sequential convex programming, and uplink power control by
fractional programming.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .detequiv import DetEquivSet, energy_weight
from .errors import SolverError

_LN2 = math.log(2.0)


def optimal_r(Y, W, r_max):
    return float(r_max) if float(np.sum(Y)) <= W else 0.0


def select_active(state, mode, K_a):
    """K_a sensors with the largest X (harvest) or Y (transmit) backlog.

    Ties go to the smaller index; the result is sorted ascending.
    """
    key = np.asarray(state.X if mode == 1 else state.Y, dtype=float)
    order = np.lexsort((np.arange(key.size), -key))
    return np.sort(order[:K_a])


def select_mode(Q_prime, Q_doubleprime):
    return 1 if Q_prime >= Q_doubleprime else 0


# ---------------------------------------------------------------------------
# downlink
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DownlinkSolution:
    active: np.ndarray
    eta: np.ndarray  # (L, K_a)
    mu: np.ndarray  # (L, K_a), mu = sqrt(eta) * gamma
    energy: np.ndarray  # closed-form harvested energy per active sensor, J
    objective: float  # Q', capacity-clamped
    iterations: int
    path: list = field(default_factory=list, repr=False)


def downlink_objective(mu, weights, c):
    s = mu.sum(axis=0)
    return float(c * np.sum(weights * s * s))


def downlink_gradient(mu, weights, c):
    return np.broadcast_to(2.0 * c * weights * mu.sum(axis=0), mu.shape)


def max_linear_on_ellipse(g, gamma, lo, hi):
    """Row-wise maximiser of ``g . mu`` over ``sum mu^2/gamma <= 1, lo <= mu <= hi``.

    Requires ``g >= 0`` and ``sum lo^2/gamma <= 1`` per row. The KKT point is
    ``mu = clip(u/nu, lo, hi)`` with ``u = g*gamma/2``; the multiplier is found
    exactly by locating the breakpoint segment that contains it.
    """
    u = 0.5 * g * gamma
    pos = u > 0
    top = np.where(pos, hi, lo)
    out = top.copy()
    need = np.sum(top * top / gamma, axis=1) > 1.0
    if not need.any():
        return out
    u, gm, lo_, hi_ = u[need], gamma[need], lo[need], hi[need]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bp = np.concatenate([np.where(u > 0, u / hi_, np.inf),
                             np.where((u > 0) & (lo_ > 0), u / lo_, np.inf)], axis=1)
    bp.sort(axis=1)

    def h(nu):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            m = np.clip(u[:, None, :] / nu[..., None], lo_[:, None, :], hi_[:, None, :])
        return np.sum(m * m / gm[:, None, :], axis=-1)

    hb = h(bp)
    idx = np.argmax(hb <= 1.0, axis=1)
    rows = np.arange(bp.shape[0])
    nb = bp[rows, idx]
    na = np.where(idx > 0, bp[rows, np.maximum(idx - 1, 0)], 0.0)
    mid = np.where(np.isinf(nb), 2.0 * na, 0.5 * (na + nb))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = u / mid[:, None]
    free = (x > lo_) & (x < hi_)
    fixed_v = np.clip(x, lo_, hi_)
    A = np.sum(np.where(free, 0.0, fixed_v ** 2 / gm), axis=1)
    B = np.sum(np.where(free, u * u / gm, 0.0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        nu = np.where((B > 0) & (A < 1.0), np.sqrt(B / (1.0 - A)), nb)
        mu = np.clip(u / nu[:, None], lo_, hi_)
    load = np.sum(mu * mu / gm, axis=1)
    mu = np.where((load > 1.0)[:, None], mu / np.sqrt(load)[:, None], mu)
    out[need] = mu
    return out


def solve_downlink(state, det: DetEquivSet, config) -> DownlinkSolution:
    """Maximise the X-weighted closed-form harvested energy of the active set."""
    active = det.active
    if active.size == 0:
        raise ValueError("empty active set")
    gamma = det.bar_gamma
    root = np.sqrt(gamma)
    weights = np.asarray(state.X, dtype=float)[active]
    c = energy_weight(config)
    mu = root / math.sqrt(active.size)
    f = downlink_objective(mu, weights, c)
    path = [f]
    it = 0
    if np.any(weights > 0):
        rho0 = config.scp_radius_frac * float(root.max())
        rho = rho0
        for it in range(1, config.scp_max_iter + 1):
            g = downlink_gradient(mu, weights, c)
            lo = np.maximum(0.0, mu - rho)
            hi = np.minimum(mu + rho, root)
            cand = max_linear_on_ellipse(g, gamma, lo, hi)
            fc = downlink_objective(cand, weights, c)
            if fc >= f:
                gain = fc - f
                mu, f = cand, fc
                path.append(f)
                rho = min(1.5 * rho, rho0)
                if gain <= config.scp_tol * abs(f):
                    break
            else:
                rho *= 0.5
                if rho < config.scp_min_radius:
                    break
    eta = (mu / gamma) ** 2
    energy = c * mu.sum(axis=0) ** 2
    room = config.b_max - np.asarray(state.b, dtype=float)[active]
    Q = float(np.sum(weights * np.minimum(energy, room)))
    return DownlinkSolution(active, eta, mu, energy, Q, it, path)


def uniform_downlink(det: DetEquivSet):
    """eta with eta*gamma = 1/K_a at every AP."""
    return 1.0 / (det.active.size * det.bar_gamma)


# ---------------------------------------------------------------------------
# uplink
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sinr(D, U, I, Nn, xi):
    n = xi.size
    out = np.empty(n)
    for k in range(n):
        den = U[k] * xi[k] + Nn[k]
        for j in range(n):
            den += I[k, j] * xi[j]
        out[k] = D[k] * xi[k] / den
    return out


@njit(cache=True)
def _true_obj(D, U, I, Nn, w, c, xi):
    G = _sinr(D, U, I, Nn, xi)
    f = 0.0
    for k in range(xi.size):
        f += w[k] * math.log1p(G[k]) - c[k] * xi[k]
    return f


@njit(cache=True)
def _xi_of_lambda(a, s, c, ub, lam, out):
    spend = 0.0
    for k in range(a.size):
        if a[k] <= 0.0 or ub[k] <= 0.0:
            out[k] = 0.0
        else:
            d = s[k] + lam * c[k]
            if d <= 0.0:
                out[k] = ub[k]
            else:
                v = (a[k] / d) ** 2
                out[k] = v if v < ub[k] else ub[k]
        spend += c[k] * out[k]
    return spend


@njit(cache=True)
def _fp_solve(D, U, I, Nn, w, c, ub, chi, budget, xi0, max_alt, tol, fpath, spath):
    """Alternating quadratic-transform ascent; returns (xi, alternations).

    fpath[t] is the true objective before alternation t, spath[t] the
    surrogate after the xi-step of alternation t.
    """
    n = xi0.size
    xi = xi0.copy()
    nxt = np.empty(n)
    a = np.empty(n)
    s = np.empty(n)
    y = np.empty(n)
    f = _true_obj(D, U, I, Nn, w, c, xi)
    n_alt = 0
    for t in range(max_alt):
        fpath[t] = f
        G = _sinr(D, U, I, Nn, xi)
        const = 0.0
        for k in range(n):
            om = G[k]
            den = (D[k] + U[k]) * xi[k] + Nn[k]
            for j in range(n):
                den += I[k, j] * xi[j]
            coef = w[k] * (1.0 + om) * D[k]
            y[k] = math.sqrt(coef * xi[k]) / den
            a[k] = y[k] * math.sqrt(coef)
            const += w[k] * (math.log1p(om) - om) - y[k] * y[k] * Nn[k]
        for m in range(n):
            acc = y[m] * y[m] * (D[m] + U[m])
            for k in range(n):
                acc += y[k] * y[k] * I[k, m]
            s[m] = acc
        if budget:
            lo = 0.0
            have_lo = False
            for k in range(n):
                if c[k] > 0.0:
                    v = -s[k] / c[k]
                    if not have_lo or v < lo:
                        lo = v
                        have_lo = True
            lo -= 1.0
            if _xi_of_lambda(a, s, c, ub, lo, nxt) <= chi:
                pass
            else:
                hi = max(lo, 0.0) + 1.0
                while _xi_of_lambda(a, s, c, ub, hi, nxt) > chi:
                    hi = lo + 2.0 * (hi - lo)
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if mid <= lo or mid >= hi:
                        break
                    if _xi_of_lambda(a, s, c, ub, mid, nxt) > chi:
                        lo = mid
                    else:
                        hi = mid
                _xi_of_lambda(a, s, c, ub, hi, nxt)
        else:
            _xi_of_lambda(a, s, c, ub, 1.0, nxt)
        sur = const
        for k in range(n):
            sur += 2.0 * a[k] * math.sqrt(nxt[k]) - s[k] * nxt[k] - c[k] * nxt[k]
        spath[t] = sur
        xi[:] = nxt
        f_new = _true_obj(D, U, I, Nn, w, c, xi)
        n_alt = t + 1
        scale = abs(f) if abs(f) > 1e-300 else 1e-300
        done = abs(f_new - f) <= tol * scale
        f = f_new
        if done:
            break
    fpath[n_alt] = f
    return xi, n_alt


@dataclass(frozen=True)
class UplinkSolution:
    active: np.ndarray
    xi: np.ndarray
    omega: np.ndarray  # SINR at the solution
    rates: np.ndarray  # closed-form rate per active sensor
    objective: float  # Q'' relative to current batteries
    chi_star: float  # energy-weighted budget spent, sum_k c_k xi_k
    iterations: int
    path: np.ndarray = field(repr=False, default=None)
    surrogate_path: np.ndarray = field(repr=False, default=None)


def uplink_bounds(b, config):
    per_slot = (1 - config.alpha) * config.Delta * config.rho_u
    return np.minimum(1.0, np.maximum(np.asarray(b, dtype=float), 0.0) / per_slot)


def uplink_objective(det: DetEquivSet, Y_a, X_a, xi, config):
    """Sum of Y-weighted rates minus X-weighted energy spent (active sensors)."""
    rates = det.rate(xi, config.alpha)
    spent = (1 - config.alpha) * config.Delta * config.rho_u * np.asarray(xi)
    return float(np.sum(Y_a * rates - X_a * spent))


class _FP:
    def __init__(self, det, w, c, ub, config):
        self.obj_args = (det.barD, det.barU, np.ascontiguousarray(det.barI), det.barN, w, c)
        self.args = self.obj_args + (ub,)
        self.max_alt = config.fp_alt_max
        self.tol = config.fp_alt_tol

    def run(self, chi, budget, xi0):
        fpath = np.full(self.max_alt + 1, np.nan)
        spath = np.full(self.max_alt, np.nan)
        xi, n = _fp_solve(*self.args, chi, budget, xi0, self.max_alt, self.tol, fpath, spath)
        f = _true_obj(*self.obj_args, xi)
        return f, xi, n, fpath[: n + 1], spath[:n]


def solve_uplink(state, det: DetEquivSet, config) -> UplinkSolution:
    """Maximise Y-weighted closed-form rate minus X-weighted energy spent."""
    active = det.active
    if active.size == 0:
        raise ValueError("empty active set")
    X_a = np.asarray(state.X, dtype=float)[active]
    Y_a = np.asarray(state.Y, dtype=float)[active]
    ub = uplink_bounds(np.asarray(state.b)[active], config)
    per_slot = (1 - config.alpha) * config.Delta * config.rho_u
    w = (1 - config.alpha) * Y_a / _LN2
    c = X_a * per_slot
    fp = _FP(det, w, c, ub, config)

    best = fp.run(0.0, False, ub.copy())
    best_chi = float(c @ best[1])
    total_it = best[2]
    chi_max = float(c @ ub)
    if chi_max > 0.0 and np.any(w > 0):

        def at(chi):
            return fp.run(chi, True, ub * (chi / chi_max))

        grid = chi_max * np.geomspace(1e-6, 1.0, config.chi_grid)
        runs = [at(x) for x in grid]
        total_it += sum(r[2] for r in runs)
        i = int(np.argmax([r[0] for r in runs]))
        cands = list(zip(grid, runs))
        # golden-section refinement in log(chi) between the grid neighbours
        lo = math.log(grid[max(i - 1, 0)])
        hi = math.log(grid[min(i + 1, grid.size - 1)])
        invphi = (math.sqrt(5) - 1) / 2
        x1 = hi - invphi * (hi - lo)
        x2 = lo + invphi * (hi - lo)
        r1, r2 = at(math.exp(x1)), at(math.exp(x2))
        cands += [(math.exp(x1), r1), (math.exp(x2), r2)]
        for _ in range(max(config.golden_iter - 2, 0)):
            if r1[0] >= r2[0]:
                hi, x2, r2 = x2, x1, r1
                x1 = hi - invphi * (hi - lo)
                r1 = at(math.exp(x1))
                cands.append((math.exp(x1), r1))
            else:
                lo, x1, r1 = x1, x2, r2
                x2 = lo + invphi * (hi - lo)
                r2 = at(math.exp(x2))
                cands.append((math.exp(x2), r2))
        total_it += sum(r[2] for _, r in cands[len(grid):])
        for chi, run in cands:
            if run[0] > best[0]:
                best, best_chi = run, float(chi)

    f, xi, _, fpath, spath = best
    if not math.isfinite(f):
        raise SolverError("uplink objective is not finite")
    rates = det.rate(xi, config.alpha)
    Q = float(np.sum(Y_a * rates - X_a * per_slot * xi))
    return UplinkSolution(active, xi, det.sinr(xi), rates, Q, best_chi, total_it, fpath, spath)
