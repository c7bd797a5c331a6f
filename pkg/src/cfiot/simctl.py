"""
Experiment driver: the drift-plus-penalty scheduler, the greedy benchmark,
Monte Carlo validation of the closed forms, run metrics and file output.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import airlink, detequiv, ledger, solvers
from .errors import ContractError, SolverError
from .netmodel import SystemConfig, make_scene, rng_streams

# relative slack for the per-slot drift bound check
_PHI_SLACK = 1e-12


@dataclass(frozen=True)
class SlotRecord:
    """State after slot `t` (batteries and backlogs at t+1) and how it got there."""

    t: int
    delta: int
    active: np.ndarray
    r: float
    R: np.ndarray  # (K,)
    b: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Q_prime: float
    Q_doubleprime: float
    phi: float
    phi_bar: float
    ms: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class RunSummary:
    min_rate: np.ndarray  # min_k running time-average rate, per slot
    sigma_hat: np.ndarray  # spread of per-sensor time-average rates, per slot
    X_bar: np.ndarray  # sensor-averaged X backlog, per slot
    Y_bar: np.ndarray
    harvest_slots: int
    transmit_slots: int
    seed: int
    config: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def to_dict(self):
        out = {
            "seed": self.seed,
            "slots": int(self.min_rate.size),
            "harvest_slots": self.harvest_slots,
            "transmit_slots": self.transmit_slots,
            "final_min_rate": float(self.min_rate[-1]),
            "final_sigma_hat": float(self.sigma_hat[-1]),
            "final_X_bar": float(self.X_bar[-1]),
            "final_Y_bar": float(self.Y_bar[-1]),
            "elapsed_s": self.elapsed_s,
            "min_rate": self.min_rate.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
            "X_bar": self.X_bar.tolist(),
            "Y_bar": self.Y_bar.tolist(),
        }
        out.update({f"config.{k}": v for k, v in self.config.items()})
        return out


def compute_metrics(records, seed=0, config=None, elapsed_s=0.0) -> RunSummary:
    if not records:
        raise ValueError("no slot records")
    R = np.array([rec.R for rec in records])
    T = np.arange(1, R.shape[0] + 1)[:, None]
    avg = np.cumsum(R, axis=0) / T
    spread = np.sqrt(np.mean((avg - avg.mean(axis=1, keepdims=True)) ** 2, axis=1))
    X_bar = np.array([rec.X.mean() for rec in records])
    Y_bar = np.array([rec.Y.mean() for rec in records])
    n_h = sum(rec.delta for rec in records)
    echo = config.echo() if config is not None else {}
    return RunSummary(avg.min(axis=1), spread, X_bar, Y_bar, n_h, len(records) - n_h,
                      seed, echo, elapsed_s)


class _DetCache:
    """Closed forms per active set; sets recur often across slots."""

    def __init__(self, fading, config, size=512):
        self.fading, self.config, self.size = fading, config, size
        self.store = {}

    def __call__(self, active):
        key = active.tobytes()
        det = self.store.get(key)
        if det is None:
            if len(self.store) >= self.size:
                self.store.clear()
            det = detequiv.bar_rate_terms(self.fading, active, self.config)
            self.store[key] = det
        return det


class _Accountant:
    """Realised energy and rates for an applied policy."""

    def __init__(self, fading, config):
        self.fading, self.config = fading, config
        self.finite = config.finite_tau_accounting
        if self.finite:
            self.pilot_rng = rng_streams(config.seed)["pilots"]

    def harvest(self, det, eta_a):
        cfg = self.config
        if not self.finite:
            return detequiv.bar_energy(eta_a, det.bar_gamma, cfg)
        pilots = airlink.draw_pilots(cfg, self.pilot_rng)
        est = airlink.lmmse_estimate(pilots, self.fading, det.active, cfg)
        load = np.sum(eta_a * est.gamma_emp, axis=1)
        eta = eta_a / np.maximum(load, 1.0)[:, None]
        return airlink.lower_bound_energy(est.gamma_emp, eta, cfg)

    def rates(self, det, xi_a):
        cfg = self.config
        if not self.finite:
            return det.rate(xi_a, cfg.alpha)
        pilots = airlink.draw_pilots(cfg, self.pilot_rng)
        est = airlink.lmmse_estimate(pilots, self.fading, det.active, cfg)
        terms = airlink.empirical_sinr_terms(est, self.fading, cfg)
        return airlink.rate_from_terms(terms, xi_a, cfg.alpha)


def _apply(state, delta, det, eta_a, xi_a, r, rmax, acct, config, Qp, Qpp, t, ms):
    """Account one slot; returns (next_state, record)."""
    K, L = config.K, config.L
    active = det.active
    theta = np.zeros(K)
    theta[active] = 1.0
    eta = np.zeros((L, K))
    xi = np.zeros(K)
    energy = np.zeros(K)
    R = np.zeros(K)
    if delta == 1:
        eta[:, active] = eta_a
        energy[active] = acct.harvest(det, eta_a)
    else:
        xi[active] = xi_a
        R[active] = acct.rates(det, xi_a)
    policy = ledger.SlotPolicy(delta, theta, eta, xi, r)
    gamma_full = np.zeros((L, K))
    gamma_full[:, active] = det.bar_gamma
    ledger.check_policy(policy, state.b, gamma_full, config)
    b_next = ledger.update_battery(state.b, policy, energy, config)
    nxt = ledger.advance(state, b_next, r, R, config)
    phi, phi_bar = ledger.exact_drift_and_bound(state, nxt, r, R, b_next, config, rmax)
    scale = max(abs(phi), abs(phi_bar), 1.0)
    if phi > phi_bar + _PHI_SLACK * scale:
        raise ContractError(f"drift bound violated: {phi!r} > {phi_bar!r}")
    rec = SlotRecord(t, delta, active, r, R, b_next, nxt.X, nxt.Y, Qp, Qpp, phi, phi_bar, ms)
    return nxt, rec


def _with_slot(exc, t):
    msg = f"slot {t}: {exc}"
    if isinstance(exc, SolverError):
        return SolverError(msg, residual=exc.residual)
    return type(exc)(msg)


def run_lyapunov(config: SystemConfig, trace=None):
    """Drift-plus-penalty scheduling for `config.T_max` slots.

    `trace`, if given, is called with one dict per slot describing both
    solver runs. Returns ``(records, summary)``.
    """
    start = time.perf_counter()
    _, fading = make_scene(config)
    rmax = detequiv.r_max(fading, config)
    dets = _DetCache(fading, config)
    acct = _Accountant(fading, config)
    state = ledger.NetworkState.initial(config)
    records = []
    for t in range(config.T_max):
        t0 = time.perf_counter()
        try:
            r = solvers.optimal_r(state.Y, config.W, rmax)
            det_h = dets(solvers.select_active(state, 1, config.K_a))
            det_t = dets(solvers.select_active(state, 0, config.K_a))
            dl = solvers.solve_downlink(state, det_h, config)
            ul = solvers.solve_uplink(state, det_t, config)
            delta = solvers.select_mode(dl.objective, ul.objective)
            det = det_h if delta == 1 else det_t
            state, rec = _apply(state, delta, det, dl.eta, ul.xi, r, rmax, acct, config,
                                dl.objective, ul.objective, t,
                                1e3 * (time.perf_counter() - t0))
        except (SolverError, ContractError, ValueError) as exc:
            raise _with_slot(exc, t) from exc
        records.append(rec)
        if trace is not None:
            trace({"t": t, "delta": delta,
                   "downlink_iterations": dl.iterations, "downlink_path": list(dl.path),
                   "uplink_iterations": ul.iterations, "uplink_path": ul.path.tolist(),
                   "chi": ul.chi_star})
    summary = compute_metrics(records, config.seed, config, time.perf_counter() - start)
    return records, summary


def run_greedy(config: SystemConfig, initial_b=None):
    """Benchmark: full-power transmission by the fullest batteries until one
    sensor can no longer afford a slot, then uniform-power charging of the
    emptiest batteries until every battery is back at ``b_0``."""
    start = time.perf_counter()
    _, fading = make_scene(config)
    rmax = detequiv.r_max(fading, config)
    dets = _DetCache(fading, config)
    acct = _Accountant(fading, config)
    state = ledger.NetworkState.initial(config)
    if initial_b is not None:
        state = ledger.NetworkState(np.asarray(initial_b, dtype=float), state.X, state.Y, 0)
    per_slot = (1 - config.alpha) * config.Delta * config.rho_u
    idx = np.arange(config.K)
    harvesting = False
    records = []
    for t in range(config.T_max):
        t0 = time.perf_counter()
        if harvesting and np.all(state.b >= config.b_0):
            harvesting = False
        elif not harvesting and np.any(state.b < per_slot):
            harvesting = True
        try:
            r = solvers.optimal_r(state.Y, config.W, rmax)
            if harvesting:
                order = np.lexsort((idx, state.b))
                det = dets(np.sort(order[: config.K_a]))
                eta_a = solvers.uniform_downlink(det)
                xi_a = None
            else:
                order = np.lexsort((idx, -state.b))
                det = dets(np.sort(order[: config.K_a]))
                eta_a = None
                xi_a = np.ones(config.K_a)
            state, rec = _apply(state, int(harvesting), det, eta_a, xi_a, r, rmax, acct,
                                config, math.nan, math.nan, t,
                                1e3 * (time.perf_counter() - t0))
        except (SolverError, ContractError, ValueError) as exc:
            raise _with_slot(exc, t) from exc
        records.append(rec)
    summary = compute_metrics(records, config.seed, config, time.perf_counter() - start)
    return records, summary


def check_battery_average(records, config) -> bool:
    """Long-run battery average implied by the final X backlog holds."""
    b = np.array([rec.b for rec in records])
    return ledger.long_term_battery_check(b, records[-1].X, config)


# ---------------------------------------------------------------------------
# validation of the closed forms
# ---------------------------------------------------------------------------

@dataclass
class ValidationTables:
    gamma: list
    energy: list
    rate: list
    ka_sweep: list


def _mc_uniform(fading, active, config, rng, n_trials, full_energy=True):
    """Per-draw gamma, lower-bound energy, full energy and rate under uniform control."""
    Ka = active.size
    L = config.L
    g = np.empty((n_trials, L, Ka))
    e_low = np.empty((n_trials, Ka))
    e_full = np.empty((n_trials, Ka))
    rate = np.empty((n_trials, Ka))
    ones = np.ones(Ka)
    for i in range(n_trials):
        pilots = airlink.draw_pilots(config, rng)
        est = airlink.lmmse_estimate(pilots, fading, active, config)
        eta = 1.0 / (Ka * est.gamma_emp)
        g[i] = est.gamma_emp
        if full_energy:
            e_full[i], _, e_low[i] = airlink.empirical_harvested_energy(
                est, eta, fading, config, rng)
        else:
            e_low[i] = airlink.lower_bound_energy(est.gamma_emp, eta, config)
        terms = airlink.empirical_sinr_terms(est, fading, config)
        rate[i] = airlink.rate_from_terms(terms, ones, config.alpha)
    return g, e_low, e_full, rate


def validate_asymptotics(config: SystemConfig, n_trials=500, ka_values=None,
                         ka_schedules=10, ka_trials=None) -> ValidationTables:
    """Closed forms against Monte Carlo over pilot draws for a random schedule.

    Downlink uses uniform control (eta*gamma = 1/K_a per AP), uplink full
    power. The K_a sweep averages over `ka_schedules` random active sets.
    """
    if n_trials < 2:
        raise ValueError("need at least two trials")
    streams = rng_streams(config.seed)
    _, fading = make_scene(config)
    sched = streams["schedule"]
    rng = streams["trials"]
    active = np.sort(sched.choice(config.K, config.K_a, replace=False))
    det = detequiv.bar_rate_terms(fading, active, config)
    eta_bar = solvers.uniform_downlink(det)
    E_bar = detequiv.bar_energy(eta_bar, det.bar_gamma, config)
    R_bar = det.rate(np.ones(active.size), config.alpha)
    g, e_low, e_full, rate = _mc_uniform(fading, active, config, rng, n_trials)

    gamma_rows = []
    for l in range(config.L):
        for j, k in enumerate(active):
            gamma_rows.append({"l": l, "k": int(k), "closed_form": det.bar_gamma[l, j],
                               "mc_mean": g[:, l, j].mean(), "mc_std": g[:, l, j].std(ddof=1),
                               "n_trials": n_trials})
    energy_rows = [{"k": int(k), "closed_form": E_bar[j],
                    "mc_mean": e_low[:, j].mean(), "mc_std": e_low[:, j].std(ddof=1),
                    "mc_full_mean": e_full[:, j].mean(), "mc_full_std": e_full[:, j].std(ddof=1),
                    "n_trials": n_trials}
                   for j, k in enumerate(active)]
    rate_rows = [{"k": int(k), "closed_form": R_bar[j],
                  "mc_mean": rate[:, j].mean(), "mc_std": rate[:, j].std(ddof=1), "n_trials": n_trials}
                 for j, k in enumerate(active)]

    if ka_values is None:
        ka_values = sorted({v for v in (1, 2, 4, 8, 12, 16, 24) if v <= config.K})
    ka_trials = max(2, n_trials // 10) if ka_trials is None else ka_trials
    sweep = []
    for ka in ka_values:
        cfg = config.replace(K_a=ka)
        ce, cr, me, mr = [], [], [], []
        for _ in range(ka_schedules):
            act = np.sort(sched.choice(config.K, ka, replace=False))
            d = detequiv.bar_rate_terms(fading, act, cfg)
            ce.append(detequiv.bar_energy(solvers.uniform_downlink(d), d.bar_gamma, cfg).mean())
            cr.append(d.rate(np.ones(ka), cfg.alpha).mean())
            _, el, _, rt = _mc_uniform(fading, act, cfg, rng, ka_trials, full_energy=False)
            me.append(el.mean())
            mr.append(rt.mean())
        sweep.append({"K_a": ka, "energy_closed_form": float(np.mean(ce)),
                      "energy_mc": float(np.mean(me)), "rate_closed_form": float(np.mean(cr)),
                      "rate_mc": float(np.mean(mr))})
    return ValidationTables(gamma_rows, energy_rows, rate_rows, sweep)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def fmt(x):
    """17 significant digits for floats; ints and strings unchanged."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def slots_header(K):
    cols = ["t", "delta", "active", "r", "Q_prime", "Q_doubleprime", "phi", "phi_bar"]
    for name in ("R", "b", "X", "Y"):
        cols += [f"{name}[{k}]" for k in range(K)]
    return cols


def write_slots_csv(records, path):
    """One row per slot; `active` is a space-separated index list.

    Wall-clock time is left out so identical runs give identical files.
    """
    K = records[0].R.size if records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(slots_header(K))
        for rec in records:
            row = [rec.t, rec.delta, " ".join(str(int(k)) for k in rec.active), rec.r,
                   rec.Q_prime, rec.Q_doubleprime, rec.phi, rec.phi_bar]
            for arr in (rec.R, rec.b, rec.X, rec.Y):
                row += list(arr)
            w.writerow([fmt(v) for v in row])


def _json_value(v):
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_value(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (float, np.floating)) and not math.isfinite(float(v)):
        return "null"
    return fmt(v)


def write_json(obj, path):
    Path(path).write_text(_json_value(obj) + "\n")


def write_table(rows, path):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([fmt(v) for v in row.values()])


def write_validation(tables: ValidationTables, out):
    out = Path(out)
    write_table(tables.gamma, out / "validate_gamma.csv")
    write_table(tables.energy, out / "validate_energy.csv")
    write_table(tables.rate, out / "validate_rate.csv")
    write_table(tables.ka_sweep, out / "ka_sweep.csv")
