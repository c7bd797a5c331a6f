"""
Physical scene: configuration, AP grid and sensor placement on a wrapped
square hall, three-slope path loss, log-normal shadowing and noise power.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

BOLTZMANN = 1.381e-23  # J/K
NOISE_TEMP = 290.0  # K
NOISE_FIGURE_DB = 9.0

# independent PRNG streams derived from one root seed
STREAMS = ("placement", "shadowing", "pilots", "fading", "trials", "schedule")


@dataclass(frozen=True)
class SystemConfig:
    """All physical and algorithmic parameters of one experiment.

    Defaults are the desk-scale profile (L=16, N=4, K=40, K_a=8, tau=24);
    `SystemConfig.table1()` gives the full-scale values. Units are SI except
    the carrier frequency `f`, which is in MHz.
    """

    L: int = 16
    N: int = 4
    K: int = 40
    K_a: int = 8
    tau: int = 24
    T_c: int = 200
    Delta: float = 0.2
    B: float = 20e6
    f: float = 1900.0
    rho_p: float = 0.2e-3
    rho_u: float = 20e-3
    rho_d: float = 20.0
    zeta: float = 1.0
    b_max: float = 0.3
    b_0: float = 0.01
    W: float = 10.0
    sigma_sh: float = 8.0
    side: float = 50.0
    h_AP: float = 7.0
    h_s: float = 1.65
    d0: float = 10.0
    d1: float = 50.0
    # metres per distance unit inside the path-loss logarithms (1000 -> km)
    pl_unit: float = 1000.0
    T_max: int = 2000
    seed: int = 0
    finite_tau_accounting: bool = False

    # solver knobs
    fp_max_iter: int = 500
    fp_tol: float = 1e-10
    scp_max_iter: int = 200
    scp_tol: float = 1e-6
    scp_min_radius: float = 1e-8
    scp_radius_frac: float = 0.25
    fp_alt_max: int = 50
    fp_alt_tol: float = 1e-6
    chi_grid: int = 16
    golden_iter: int = 8

    alpha: float = field(init=False, repr=False)
    E_p: float = field(init=False, repr=False)
    sigma2: float = field(init=False, repr=False)

    def __post_init__(self):
        self._check()
        sigma2 = noise_power(self)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "alpha", self.tau / self.T_c)
        object.__setattr__(self, "E_p", self.tau * self.rho_p / sigma2)

    def _check(self):
        if min(self.L, self.N, self.K, self.K_a, self.tau, self.T_c) < 1:
            raise ConfigError("L, N, K, K_a, tau and T_c must be positive")
        if not 0 < self.tau < self.T_c:
            raise ConfigError(f"need 0 < tau < T_c, got tau={self.tau}, T_c={self.T_c}")
        if not 0 < self.K_a <= min(self.K, 4 * self.tau):
            raise ConfigError(f"need 0 < K_a <= min(K, 4*tau), got K_a={self.K_a}")
        if not 0 < self.b_0 < self.b_max:
            raise ConfigError("need 0 < b_0 < b_max")
        if min(self.rho_p, self.rho_u, self.rho_d) <= 0:
            raise ConfigError("transmit powers must be positive")
        if not 0 < self.zeta <= 1:
            raise ConfigError("zeta must lie in (0, 1]")
        if self.B <= 0:
            raise ConfigError("bandwidth must be positive")
        if not 0 < self.d0 < self.d1:
            raise ConfigError("need 0 < d0 < d1")
        if self.T_max < 1:
            raise ConfigError("T_max must be positive")

    @classmethod
    def table1(cls, **overrides) -> "SystemConfig":
        """Full-scale parameter set (L=100, N=10, K=200, tau=60)."""
        base = dict(L=100, N=10, K=200, K_a=30, tau=60)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}

    @classmethod
    def from_file(cls, path) -> "SystemConfig":
        """Load `key = value` lines; `#` starts a comment, unknown keys are errors."""
        types = {f.name: f.type for f in dataclasses.fields(cls) if f.init}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(types[key], val, f"{path}:{lineno}")
        return cls(**values)

    def to_file(self, path):
        lines = [f"{k} = {_format_value(v)}" for k, v in self.echo().items()]
        Path(path).write_text("\n".join(lines) + "\n")


def _parse_value(typ, text, where):
    try:
        if typ in ("bool", bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if typ in ("int", int):
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {typ}") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def rng_streams(seed: int) -> dict:
    """One generator per purpose, all derived from the root seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray  # (L, 3)
    sensor_positions: np.ndarray  # (K, 3)
    side: float


@dataclass(frozen=True)
class FadingMap:
    beta: np.ndarray  # (L, K), linear scale
    generated_seed: int | None = None

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.ndim != 2 or not np.all(np.isfinite(beta)) or np.any(beta <= 0):
            raise ConfigError("beta must be a 2-D array of positive finite values")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def L(self):
        return self.beta.shape[0]

    @property
    def K(self):
        return self.beta.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "k", "beta"])
            for l in range(self.L):
                for k in range(self.K):
                    w.writerow([l, k, f"{self.beta[l, k]:.17g}"])

    @classmethod
    def from_csv(cls, path, generated_seed=None):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ConfigError(f"{path}: empty fading map")
        L = 1 + max(int(r["l"]) for r in rows)
        K = 1 + max(int(r["k"]) for r in rows)
        beta = np.full((L, K), np.nan)
        for r in rows:
            beta[int(r["l"]), int(r["k"])] = float(r["beta"])
        if np.isnan(beta).any():
            raise ConfigError(f"{path}: missing (l, k) entries")
        return cls(beta, generated_seed)


def build_topology(config: SystemConfig, rng: np.random.Generator) -> Topology:
    """AP grid at cell centres on the ceiling; sensors uniform on the floor plan."""
    root = math.isqrt(config.L)
    if root * root != config.L:
        raise ConfigError(f"L={config.L} is not a perfect square")
    pitch = config.side / root
    centres = (np.arange(root) + 0.5) * pitch
    gx, gy = np.meshgrid(centres, centres, indexing="ij")
    aps = np.column_stack([gx.ravel(), gy.ravel(), np.full(config.L, config.h_AP)])
    xy = rng.uniform(0.0, config.side, size=(config.K, 2))
    sensors = np.column_stack([xy, np.full(config.K, config.h_s)])
    return Topology(aps, sensors, config.side)


def wrap_distance(p, q, side, dh=None):
    """Distance with horizontal wrap-around on a square of the given side.

    `p` and `q` broadcast over leading axes; the last axis holds (x, y) or
    (x, y, z). When `dh` is omitted it is taken from the z coordinates.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = np.abs(p[..., :2] - q[..., :2]) % side
    d = np.minimum(d, side - d)
    if dh is None:
        dh = p[..., 2] - q[..., 2] if p.shape[-1] > 2 and q.shape[-1] > 2 else 0.0
    return np.sqrt(np.sum(d * d, axis=-1) + np.square(dh))


def pathloss_constant(config: SystemConfig) -> float:
    lf = math.log10(config.f)
    return (46.3 + 33.9 * lf - 13.82 * math.log10(config.h_AP)
            - (1.1 * lf - 0.7) * config.h_s + (1.56 * lf - 0.8))


def path_loss_db(d, config: SystemConfig):
    """Three-slope path loss in dB (negative) for distances in metres."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    u = config.pl_unit
    L0 = pathloss_constant(config)
    du, d0, d1 = d / u, config.d0 / u, config.d1 / u
    far = -L0 - 35 * np.log10(du)
    mid = -L0 - 15 * math.log10(d1) - 20 * np.log10(du)
    flat = -L0 - 15 * math.log10(d1) - 20 * math.log10(d0)
    out = np.where(d > config.d1, far, np.where(d > config.d0, mid, flat))
    return out if out.ndim else float(out)


def draw_fading_map(topology: Topology, config: SystemConfig, rng: np.random.Generator,
                    seed=None) -> FadingMap:
    d = wrap_distance(topology.ap_positions[:, None, :],
                      topology.sensor_positions[None, :, :], topology.side)
    z = rng.standard_normal(d.shape)
    beta = 10.0 ** ((path_loss_db(d, config) + config.sigma_sh * z) / 10.0)
    return FadingMap(beta, seed)


def noise_power(config) -> float:
    """Thermal noise power in W over the configured bandwidth."""
    if config.B <= 0:
        raise ValueError("bandwidth must be positive")
    return config.B * BOLTZMANN * NOISE_TEMP * 10 ** (NOISE_FIGURE_DB / 10)


def make_scene(config: SystemConfig):
    """Topology and fading map for `config.seed`; reused across all runs on that seed."""
    streams = rng_streams(config.seed)
    topo = build_topology(config, streams["placement"])
    return topo, draw_fading_map(topo, config, streams["shadowing"], seed=config.seed)
