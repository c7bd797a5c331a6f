"""
Slot-to-slot state evolution: batteries, the virtual queues that turn the
battery and fairness constraints into stability conditions, and the
drift-plus-penalty quantities used to score and audit each slot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

# roundoff allowed when a sensor spends exactly its whole battery
_ENERGY_EPS = 1e-15


@dataclass(frozen=True)
class NetworkState:
    b: np.ndarray  # battery levels, J
    X: np.ndarray  # battery-deficit backlog, J
    Y: np.ndarray  # rate-deficit backlog, bits/s/Hz
    t: int = 0

    @classmethod
    def initial(cls, config):
        K = config.K
        return cls(np.full(K, config.b_0), np.zeros(K), np.zeros(K), 0)


@dataclass(frozen=True)
class SlotPolicy:
    delta: int  # 1 harvest, 0 transmit
    theta: np.ndarray  # (K,) 0/1
    eta: np.ndarray  # (L, K)
    xi: np.ndarray  # (K,)
    r: float

    @property
    def active(self):
        return np.flatnonzero(self.theta)


def consumption(policy: SlotPolicy, config):
    """Uplink energy drawn by each sensor in the slot (J)."""
    return (1 - config.alpha) * config.Delta * config.rho_u * policy.theta * policy.xi


def check_policy(policy: SlotPolicy, b, gamma_full, config, tol=1e-9):
    """Raise ContractError unless the policy is feasible for batteries `b`."""
    if int(np.sum(policy.theta)) != config.K_a:
        raise ContractError(f"expected {config.K_a} active sensors, got {int(np.sum(policy.theta))}")
    if np.any(policy.xi < 0) or np.any(policy.xi > 1 + tol):
        raise ContractError("uplink coefficients must lie in [0, 1]")
    if np.any(policy.eta < 0):
        raise ContractError("downlink coefficients must be non-negative")
    load = np.sum(policy.delta * policy.theta * policy.eta * gamma_full, axis=1)
    if np.any(load > 1 + tol):
        raise ContractError(f"AP power budget exceeded (max load {load.max():.12g})")
    if policy.delta == 0 and np.any(consumption(policy, config) > b + _ENERGY_EPS):
        raise ContractError("uplink energy exceeds battery")


def update_battery(b, policy: SlotPolicy, energy, config):
    """Next battery levels given harvested `energy` (J per sensor)."""
    b = np.asarray(b, dtype=float)
    spent = consumption(policy, config)
    if policy.delta == 0 and np.any(spent > b + _ENERGY_EPS):
        raise ContractError("uplink energy exceeds battery")
    d = policy.delta
    nxt = b - (1 - d) * spent + d * policy.theta * np.asarray(energy, dtype=float)
    return np.clip(nxt, 0.0, config.b_max)


def update_queue_X(X, b_next, b_0):
    # increment first, so b_next == b_0 leaves X exactly unchanged
    return np.maximum(0.0, np.asarray(X) + (b_0 - np.asarray(b_next)))


def update_queue_Y(Y, r, R):
    return np.maximum(0.0, np.asarray(Y) + (r - np.asarray(R)))


def advance(state: NetworkState, b_next, r, R, config) -> NetworkState:
    return NetworkState(b_next, update_queue_X(state.X, b_next, config.b_0),
                        update_queue_Y(state.Y, r, R), state.t + 1)


def surrogate_objective(state: NetworkState, b_next, R, r, W):
    """Per-slot quantity maximised by the scheduler."""
    return float(np.sum(state.X * b_next + state.Y * R) + (W - np.sum(state.Y)) * r)


def lyapunov(state: NetworkState):
    return 0.5 * float(np.sum(state.X ** 2) + np.sum(state.Y ** 2))


def exact_drift_and_bound(state, state_next, r, R, b_next, config, r_max):
    """Drift-plus-penalty and its linear upper bound for one slot.

    Returns ``(phi, phi_bar)``; ``phi <= phi_bar`` whenever batteries stay
    in [0, b_max] and 0 <= r, R <= r_max.
    """
    phi = lyapunov(state_next) - lyapunov(state) - config.W * r
    K = state.X.size
    C0 = config.b_max ** 2 / 2
    C0_bar = r_max ** 2 / 2
    phi_bar = (float(np.sum(state.X * (config.b_0 - b_next)) + np.sum(state.Y * (r - R)))
               + K * (C0 + C0_bar) - config.W * r)
    return phi, phi_bar


def long_term_battery_check(b_traj, X_final, config):
    """Check the battery average implied by the final X backlog.

    `b_traj` has shape (T, K) and holds b at slots 1..T. With
    ``eps = max_k X_k(T)/T`` the time-average battery must satisfy
    ``mean_t b_k >= b_0 - eps - b_max/T`` for every k.
    """
    b_traj = np.asarray(b_traj)
    T = b_traj.shape[0]
    eps = float(np.max(X_final)) / T
    return bool(np.all(b_traj.mean(axis=0) >= config.b_0 - eps - config.b_max / T - 1e-12))
