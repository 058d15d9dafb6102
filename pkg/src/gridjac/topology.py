"""Topology identification by spectral matching against a model bank.

For every candidate grid the observed node voltages are compared with the
voltages the candidate predicts from the same P/Q inputs.  The difference
matrix is windowed, centred and standardised row by row, optionally has
``p`` principal factors removed, and its eigenvalue density is compared
with the AR(1) limiting density.  The candidate with the smallest distance
wins.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSeries, DimensionError, RangeError, TIFailure
from .grid import CASES_DIR, Grid, build_admittance, load_network
from .powerflow import newton_raphson_solve, PowerFlowSpec, SystemState, scheduled_targets, solve_series
from .spectral import ar1_theoretical_density, esd, estimate_ar_coefficient, factor_decompose, js_metric

log = logging.getLogger(__name__)

# 1-based inclusive column ranges of the five standard observation periods
PERIODS = {
    "T1": (1, 720),
    "T2": (181, 900),
    "T3": (361, 1080),
    "T4": (541, 1260),
    "T5": (721, 1440),
}


def worker_count() -> int:
    """Thread cap from ``GRIDJAC_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("GRIDJAC_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ModelBank:
    models: tuple

    def __post_init__(self):
        models = tuple((str(label), grid) for label, grid in self.models)
        if not models:
            raise ValueError("model bank is empty")
        labels = [m[0] for m in models]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels}")
        object.__setattr__(self, "models", models)

    @property
    def labels(self) -> list[str]:
        return [m[0] for m in self.models]

    def __getitem__(self, label: str) -> Grid:
        for name, grid in self.models:
            if name == label:
                return grid
        raise KeyError(label)

    def __len__(self):
        return len(self.models)

    @classmethod
    def from_dir(cls, path) -> "ModelBank":
        """One model per ``*.json`` file, labelled by file stem, sorted by name."""
        files = sorted(Path(path).glob("*.json"))
        return cls(tuple((f.stem, load_network(f)) for f in files))


BANK33_DIR = CASES_DIR / "bank33"


def bank33() -> ModelBank:
    """Bundled 33-bus bank: M1 base, M2 reconfigured around bus 29, M3 with a
    heavier 26-30 corridor."""
    return ModelBank.from_dir(BANK33_DIR)


@dataclass(frozen=True)
class InputSeries:
    """Per-sample bus schedules, shape ``(T, n)``, generation positive."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p, q = np.atleast_2d(np.asarray(self.p, float)), np.atleast_2d(np.asarray(self.q, float))
        if p.shape != q.shape:
            raise DimensionError(f"p {p.shape} and q {q.shape} differ")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def n_samples(self) -> int:
        return self.p.shape[0]

    def columns(self, idx) -> "InputSeries":
        return InputSeries(self.p[idx], self.q[idx])


@dataclass(frozen=True)
class SEOutput:
    """Predicted node voltages (n x T) and the samples whose solve failed."""

    v: np.ndarray
    theta: np.ndarray
    failed: np.ndarray


def _base_start(grid, y, n_samples):
    try:
        state, _ = newton_raphson_solve(grid, PowerFlowSpec.from_grid(grid), y=y)
    except Exception:
        return None
    return SystemState(np.tile(state.v, (n_samples, 1)), np.tile(state.theta, (n_samples, 1)))


def se_output(model: Grid, inputs: InputSeries, tol=1e-10, max_iter=20) -> SEOutput:
    """Power flow per sample under ``model``; voltages come back node-major."""
    y = build_admittance(model)
    targets = scheduled_targets(model, inputs.p, inputs.q)
    sol = solve_series(model, targets, tol=tol, max_iter=max_iter,
                       start=_base_start(model, y, inputs.n_samples), y=y)
    return SEOutput(sol.state.v.T, sol.state.theta.T, np.flatnonzero(~sol.converged))


@dataclass(frozen=True)
class DifferenceMatrix:
    data: np.ndarray
    model_label: str = ""
    channel: str = "voltage_magnitude"
    columns: np.ndarray | None = None


def difference(z_ob, z_hat, label: str = "") -> DifferenceMatrix:
    z_ob, z_hat = np.asarray(z_ob, float), np.asarray(z_hat, float)
    if z_ob.shape != z_hat.shape:
        raise DimensionError(f"shapes {z_ob.shape} and {z_hat.shape} differ")
    return DifferenceMatrix(z_ob - z_hat, label, columns=np.arange(z_ob.shape[1]))


def window_columns(n_cols: int, period) -> np.ndarray:
    """0-based column indices for a period name or a 1-based ``(start, length)``."""
    if isinstance(period, str):
        try:
            first, last = PERIODS[period.upper()]
        except KeyError:
            raise RangeError(f"unknown period {period!r}") from None
    else:
        start, length = period
        if length < 1:
            raise RangeError("window length must be positive")
        first, last = start, start + length - 1
    if first < 1 or last > n_cols:
        raise RangeError(f"window {first}-{last} outside 1-{n_cols}")
    return np.arange(first - 1, last)


def window(x, period):
    """Column slice of a difference matrix (or plain array)."""
    if isinstance(x, DifferenceMatrix):
        cols = window_columns(x.data.shape[1], period)
        base = x.columns if x.columns is not None else np.arange(x.data.shape[1])
        return DifferenceMatrix(x.data[:, cols], x.model_label, x.channel, base[cols])
    x = np.asarray(x)
    return x[:, window_columns(x.shape[1], period)]


def autocorr_profile(x) -> np.ndarray:
    """Row-wise Burg lag-one coefficient; NaN where a row is constant."""
    data = x.data if isinstance(x, DifferenceMatrix) else np.asarray(x, float)
    out = np.full(data.shape[0], np.nan)
    for i, row in enumerate(data):
        try:
            out[i] = estimate_ar_coefficient(row)[0]
        except DegenerateSeries:
            pass
    return out


def standardize_rows(x, atol=0.0) -> np.ndarray:
    """Centre each row and scale it to unit variance; flat rows become zero."""
    x = np.asarray(x, float)
    x = x - x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    flat = sd <= atol
    return np.where(flat, 0.0, x / np.where(flat, 1.0, sd))


@dataclass(frozen=True)
class TIConfig:
    """Matching settings.

    ``b=None`` estimates the AR coefficient per model as the mean Burg
    estimate over the rows of ``renewables_nodes``.  ``nodes`` restricts the
    spectral analysis to a subset of bus ids.  Difference matrices whose
    entries are all below ``exact_atol`` count as a perfect match.
    """

    p: int = 0
    b: float | None = None
    bins: int = 100
    window: object = None
    renewables_nodes: tuple = (20, 31)
    nodes: tuple | None = None
    exact_atol: float = 1e-9
    workers: int | None = None


@dataclass(frozen=True)
class ModelResult:
    label: str
    distance: float
    p: int
    b: float
    bhat: np.ndarray
    failed: np.ndarray
    empirical: object = field(default=None, repr=False, compare=False)
    theoretical: object = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class TIReport:
    results: tuple

    @property
    def ranking(self) -> list[str]:
        order = sorted(range(len(self.results)), key=lambda i: (self.results[i].distance, i))
        return [self.results[i].label for i in order]

    @property
    def winner(self) -> str:
        return self.ranking[0]

    def to_dict(self) -> dict:
        by_label = {r.label: r for r in self.results}
        return {
            "winner": self.winner,
            "ranking": [
                {"label": lab, "distance": by_label[lab].distance,
                 "p": by_label[lab].p, "b": by_label[lab].b}
                for lab in self.ranking
            ],
            "per_node_bhat": [
                [None if np.isnan(v) else float(v) for v in r.bhat] for r in self.results
            ],
            "failed_samples": {r.label: [int(i) for i in r.failed] for r in self.results},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _spectral_distance(x, p, b_fixed, bins, ren_rows, exact_atol):
    n, t = x.shape
    if np.abs(x - x.mean(axis=1, keepdims=True)).max(initial=0.0) <= exact_atol:
        return 0.0, 0.0, None, None
    xs = standardize_rows(x, atol=exact_atol)
    if b_fixed is None:
        est = autocorr_profile(xs[ren_rows]) if len(ren_rows) else np.array([])
        b = float(np.nanmean(est)) if np.isfinite(est).any() else 0.0
    else:
        b = float(b_fixed)
    r = factor_decompose(xs, p).residues
    emp = esd(r, bins=max(bins, 10), drop=p)
    theo = ar1_theoretical_density(np.clip(b, -0.99, 0.99), (n - p) / t)
    return js_metric(emp, theo, bins=bins), b, emp, theo


def _input_digest(inputs: InputSeries) -> str:
    h = hashlib.sha256(np.ascontiguousarray(inputs.p).tobytes())
    h.update(np.ascontiguousarray(inputs.q).tobytes())
    return h.hexdigest()


def match_model(z_ob, bank: ModelBank, inputs: InputSeries, config: TIConfig = TIConfig(),
                predictions: dict | None = None) -> TIReport:
    """Rank bank models by spectral distance of their difference matrices.

    ``predictions``, if given, is a dict used as a cache of per-model power
    flow results keyed by model label and a digest of the windowed inputs,
    so repeated calls on new observations of the same inputs skip the
    solves.
    """
    z_ob = np.asarray(z_ob.data if hasattr(z_ob, "data") else z_ob, float)
    n_cols = z_ob.shape[1]
    if inputs.n_samples != n_cols:
        raise DimensionError(f"{inputs.n_samples} input samples for {n_cols} observations")
    cols = np.arange(n_cols) if config.window is None else window_columns(n_cols, config.window)

    def run(label, grid):
        ids = [b.id for b in grid.buses]
        if z_ob.shape[0] != len(ids):
            raise DimensionError(f"model {label} has {len(ids)} buses, observations {z_ob.shape[0]}")
        sub = inputs.columns(cols)
        if predictions is None:
            se = se_output(grid, sub)
        else:
            key = (label, _input_digest(sub))
            if key not in predictions:
                predictions[key] = se_output(grid, sub)
            se = predictions[key]
        good = np.setdiff1d(np.arange(cols.size), se.failed)
        if good.size < 2:
            return None
        x = z_ob[:, cols[good]] - se.v[:, good]
        rows = np.arange(len(ids)) if config.nodes is None else np.array([ids.index(i) for i in config.nodes])
        x = x[rows]
        sub_ids = [ids[i] for i in rows]
        ren = [sub_ids.index(i) for i in config.renewables_nodes if i in sub_ids]
        if config.p >= min(x.shape):
            raise RangeError(f"p={config.p} leaves no residue for a {x.shape} matrix")
        dist, b, emp, theo = _spectral_distance(x, config.p, config.b, config.bins, ren, config.exact_atol)
        return ModelResult(label, float(dist), config.p, b, autocorr_profile(x),
                           cols[se.failed], emp, theo)

    workers = config.workers or worker_count()
    if workers > 1 and len(bank) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda m: run(*m), bank.models))
    else:
        results = [run(*m) for m in bank.models]
    results = [r for r in results if r is not None]
    if not results:
        raise TIFailure("power flow failed for every bank model")
    report = TIReport(tuple(results))
    d = sorted(r.distance for r in results)
    if len(d) > 1 and abs(d[1] - d[0]) <= 4 * np.finfo(float).eps * max(abs(d[0]), 1e-300):
        log.warning("tie between best models; winner is the lowest bank index")
    return report
