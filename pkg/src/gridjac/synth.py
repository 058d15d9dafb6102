"""Synthetic observation scenarios with AR(1) renewables and a topology switch."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import NonConvergence
from .grid import build_admittance
from .powerflow import scheduled_targets, solve_series
from .topology import InputSeries, ModelBank, _base_start


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def ar1_series(b: float, length: int, seed=None, burn_in: int = 200) -> np.ndarray:
    """Unit-variance AR(1): ``x_t = b x_{t-1} + xi_t``, ``xi ~ N(0, 1 - b^2)``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if not abs(b) < 1:
        raise ValueError(f"|b| must be < 1, got {b}")
    rng = _rng(seed)
    xi = rng.normal(0.0, np.sqrt(1 - b * b), burn_in + length)
    x0 = rng.normal()
    x, _ = lfilter([1.0], [1.0, -b], xi, zi=[b * x0])
    return x[burn_in:]


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario parameters.

    Loads follow the case schedule scaled by a common slow sinusoid of
    relative amplitude ``load_sinusoid`` (one period over the run), plus
    white noise of SD ``load_jitter`` p.u. drawn independently for every
    node and for P and Q.  Each renewables node receives extra generation
    ``renewables_amplitude * x_t`` (p.u.) with ``x`` a unit-variance AR(1)
    series of coefficient ``ar_b``.  Samples ``1..switch_sample`` (1-based)
    run under ``grid_a`` and the rest under ``grid_b``.
    """

    grid_a: str = "M1"
    grid_b: str = "M2"
    switch_sample: int = 720
    n_samples: int = 1440
    renewables_nodes: tuple = (20, 31)
    ar_b: float = 0.9
    renewables_amplitude: float = 0.05
    load_sinusoid: float = 0.02
    load_jitter: float = 0.001
    sigma_e: float = 0.005
    mu_e: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.switch_sample <= self.n_samples:
            raise ValueError("switch_sample must lie in [1, n_samples]")
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be nonnegative")
        if not abs(self.ar_b) < 1:
            raise ValueError("|ar_b| must be < 1")
        object.__setattr__(self, "renewables_nodes", tuple(self.renewables_nodes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["renewables_nodes"] = list(self.renewables_nodes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario fields {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    z_ob: np.ndarray          # observed |V|, nodes x samples
    truth: tuple              # active model label per sample
    inputs: InputSeries
    v: np.ndarray             # true |V|, nodes x samples
    theta: np.ndarray
    renewables: np.ndarray = field(repr=False, default=None)

    def manifest(self) -> dict:
        return {"config": self.config.to_dict(), "truth": list(self.truth)}

    def to_json(self) -> str:
        return json.dumps(self.manifest())


def _streams(seed, n_nodes, n_ren):
    loads, ren, noise = np.random.SeedSequence(seed).spawn(3)
    return loads.spawn(n_nodes), ren.spawn(n_ren), noise.spawn(n_nodes)


def synthesize(config: ScenarioConfig, bank: ModelBank) -> Scenario:
    """Generate inputs, true states and noisy voltage observations.

    RNG streams: the seed spawns three child sequences (loads, renewables,
    measurement error) and each of those one PCG64 stream per node, so every
    node's randomness is independent of the others'.
    """
    grid_a, grid_b = bank[config.grid_a], bank[config.grid_b]
    n, t = grid_a.n, config.n_samples
    ids = [b.id for b in grid_a.buses]
    load_ss, ren_ss, noise_ss = _streams(config.seed, n, len(config.renewables_nodes))

    p0 = np.array([b.p for b in grid_a.buses])
    q0 = np.array([b.q for b in grid_a.buses])
    phase = 2 * np.pi * np.arange(t) / t
    scale = 1 + config.load_sinusoid * np.sin(phase)[:, None]
    # independent P and Q jitter keeps the increments of all K outputs
    # linearly independent, which the regression estimators rely on
    jitter = np.stack([_rng(s).normal(0.0, 1.0, (2, t)) for s in load_ss], axis=-1)
    p = p0 * scale + config.load_jitter * jitter[0]
    q = q0 * scale + config.load_jitter * jitter[1]

    ren = np.zeros((t, len(config.renewables_nodes)))
    for k, (node, ss) in enumerate(zip(config.renewables_nodes, ren_ss)):
        ren[:, k] = config.renewables_amplitude * ar1_series(config.ar_b, t, _rng(ss))
        p[:, ids.index(node)] += ren[:, k]
    inputs = InputSeries(p, q)

    v = np.empty((t, n))
    theta = np.empty((t, n))
    spans = [(config.grid_a, grid_a, slice(0, config.switch_sample)),
             (config.grid_b, grid_b, slice(config.switch_sample, t))]
    for label, grid, sl in spans:
        if sl.start >= sl.stop:
            continue
        y = build_admittance(grid)
        count = sl.stop - sl.start
        sol = solve_series(grid, scheduled_targets(grid, p[sl], q[sl]), tol=1e-10,
                           start=_base_start(grid, y, count), y=y)
        if not sol.converged.all():
            first = sl.start + int(np.flatnonzero(~sol.converged)[0])
            raise NonConvergence(f"power flow failed at sample {first + 1} under {label}",
                                 iterations=int(sol.iterations.max()),
                                 mismatch=float(sol.mismatch.max()))
        v[sl], theta[sl] = sol.state.v, sol.state.theta

    noise = np.stack([_rng(s).normal(0.0, 1.0, t) for s in noise_ss])
    z_ob = v.T + config.mu_e + config.sigma_e * noise
    truth = tuple([config.grid_a] * config.switch_sample + [config.grid_b] * (t - config.switch_sample))
    return Scenario(config, z_ob, truth, inputs, v.T.copy(), theta.T.copy(), ren)
