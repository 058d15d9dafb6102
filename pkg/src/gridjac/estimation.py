"""Model-free Jacobian estimation from snapshot series.

Consecutive snapshots give ``B ~ J A`` with ``A``, ``B`` the K-by-T
matrices of state and injection increments.  ``J`` is then fitted by
ordinary least squares or by total least squares on ``[A^T B^T]``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import (DimensionError, IllConditionedWarning, InsufficientData, NoTLSSolution,
                     RankDeficientWarning)
from .powerflow import (JacobianMatrix, SystemState, assemble_reduced, injections, jacobian_blocks,
                        output_vector, state_vector)


@dataclass(frozen=True)
class SnapshotSeries:
    """Rows of ``xs`` and ``ys`` are the state and output vectors per sample."""

    xs: np.ndarray
    ys: np.ndarray
    timestamps: np.ndarray | None = None
    index_map: tuple = ()
    row_map: tuple = ()

    def __post_init__(self):
        xs, ys = np.atleast_2d(np.asarray(self.xs, float)), np.atleast_2d(np.asarray(self.ys, float))
        if xs.shape != ys.shape:
            raise DimensionError(f"xs {xs.shape} and ys {ys.shape} differ")
        ts = np.arange(xs.shape[0]) if self.timestamps is None else np.asarray(self.timestamps)
        if ts.shape != (xs.shape[0],):
            raise DimensionError("one timestamp per snapshot required")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "timestamps", ts)

    @property
    def k(self) -> int:
        return self.xs.shape[1]

    def to_csv(self) -> str:
        k = self.k
        head = ",".join([f"x{i}" for i in range(k)] + [f"y{i}" for i in range(k)])
        rows = [",".join(f"{v:.17g}" for v in np.concatenate([x, y])) for x, y in zip(self.xs, self.ys)]
        return head + "\n" + "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SnapshotSeries":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = [h.strip() for h in lines[0].split(",")]
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(head))
        xcols = [i for i, h in enumerate(head) if h.startswith("x")]
        ycols = [i for i, h in enumerate(head) if h.startswith("y")]
        if not xcols or len(xcols) != len(ycols) or len(xcols) + len(ycols) != len(head):
            raise ValueError("snapshot CSV needs matching x* and y* columns")
        return cls(data[:, xcols], data[:, ycols])


def snapshots_from_states(grid, v, theta, y=None) -> SnapshotSeries:
    """Build reduced ``(x, y)`` snapshots from a series of states, shape (T, n)."""
    state = SystemState(np.asarray(v, float), np.asarray(theta, float))
    xs = state_vector(state, grid)
    ys = output_vector(injections(state, grid, y), grid)
    jac = assemble_reduced(jacobian_blocks(SystemState(state.v[:1], state.theta[:1]), grid, y), grid)
    return SnapshotSeries(xs, ys, index_map=jac.index_map, row_map=jac.row_map)


def true_jacobians(grid, v, theta, y=None) -> np.ndarray:
    """Analytic reduced Jacobian at every sample, shape (T, K, K)."""
    state = SystemState(np.asarray(v, float), np.asarray(theta, float))
    return assemble_reduced(jacobian_blocks(state, grid, y), grid).entries


@dataclass(frozen=True)
class DeltaMatrices:
    a: np.ndarray
    b: np.ndarray
    index_map: tuple = ()
    row_map: tuple = ()

    def __post_init__(self):
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        if a.ndim != 2 or a.shape != b.shape:
            raise DimensionError(f"A {a.shape} and B {b.shape} must be equal 2-D shapes")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def k(self) -> int:
        return self.a.shape[0]

    @property
    def t(self) -> int:
        return self.a.shape[1]


def build_deltas(series: SnapshotSeries) -> DeltaMatrices:
    """Lag-one increments as columns: ``A[:, k] = x[k+1] - x[k]``."""
    if series.xs.shape[0] < 2:
        raise InsufficientData("need at least two snapshots")
    return DeltaMatrices(np.diff(series.xs, axis=0).T, np.diff(series.ys, axis=0).T,
                         series.index_map, series.row_map)


def _require_overdetermined(d: DeltaMatrices):
    if d.t <= d.k:
        raise InsufficientData(f"T={d.t} increments do not exceed K={d.k} unknowns")


def _wrap(entries, d: DeltaMatrices) -> JacobianMatrix:
    k = entries.shape[0]
    cols = d.index_map or tuple(range(k))
    rows = d.row_map or tuple(range(k))
    return JacobianMatrix(entries, cols, rows)


def ols_estimate(d: DeltaMatrices) -> JacobianMatrix:
    """Least-squares ``J`` minimising ``||B - J A||_F``.

    Solves ``A^T J^T = B^T`` with an SVD-based solver instead of forming
    ``(A A^T)^-1``.  If ``A`` is rank deficient the minimum-norm solution
    (pseudo-inverse) is returned and a :class:`RankDeficientWarning` issued.
    """
    _require_overdetermined(d)
    jt, _, rank, _ = la.lstsq(d.a.T, d.b.T, lapack_driver="gelsd")
    if rank < d.k:
        warnings.warn(f"A has rank {rank} < K={d.k}; using the pseudo-inverse solution",
                      RankDeficientWarning, stacklevel=2)
    return _wrap(jt.T, d)


def _scales(d: DeltaMatrices, scale: bool):
    if not scale:
        return 1.0, 1.0
    sa = np.sqrt(np.mean(d.a ** 2))
    sb = np.sqrt(np.mean(d.b ** 2))
    return (sa if sa > 0 else 1.0), (sb if sb > 0 else 1.0)


@dataclass(frozen=True)
class TLSFit:
    j: JacobianMatrix
    singular_values: np.ndarray
    correction: tuple = field(repr=False)   # (E, F) with A + E, B + F exactly consistent
    generic: bool = True


def tls_fit(d: DeltaMatrices, scale: bool = True, gap_tol: float = 1e-10) -> TLSFit:
    """Total least squares on the augmented matrix ``Z = [A^T B^T]``.

    With ``Z = U S V^T`` and ``V`` split into K-by-K blocks,
    ``J^T = -V12 V22^-1``.  When ``scale`` is set, ``A`` and ``B`` are first
    divided by their RMS values, which makes the fit equivariant to the
    units of either side; the answer is mapped back afterwards.

    If ``sigma_K`` and ``sigma_K+1`` coincide (relative gap below
    ``gap_tol``) the solution is not unique; an
    :class:`IllConditionedWarning` is issued and the minimum-norm solution
    over the whole tied subspace is returned.
    """
    _require_overdetermined(d)
    k = d.k
    sa, sb = _scales(d, scale)
    z = np.hstack([d.a.T / sa, d.b.T / sb])
    u, s, vt = la.svd(z, full_matrices=False)
    v = vt.T
    tied = s[k - 1] - s[k] <= gap_tol * max(s[0], np.finfo(float).tiny)
    generic = not tied
    if generic:
        v12, v22 = v[:k, k:], v[k:, k:]
        vs = v[:, k:]
    else:
        warnings.warn("degenerate singular-value gap; returning the minimum-norm TLS solution",
                      IllConditionedWarning, stacklevel=2)
        first = int(np.searchsorted(-s, -(s[k] + gap_tol * s[0])))
        vs = v[:, first:]
        # orthogonal Q with vs[k:] Q^T = [0 R1]; then J^T = -Y R1^-1
        r, q = la.rq(vs[k:, :])
        rotated = vs @ q.T
        v12, v22 = rotated[:k, -k:], rotated[k:, -k:]
    # an exactly singular V22 surfaces as cond ~ 1e14-1e16 after roundoff
    if np.linalg.cond(v22) > 1e-4 / np.finfo(float).eps:
        raise NoTLSSolution("V22 block is singular; TLS solution does not exist")
    jt = -la.solve(v22.T, v12.T).T
    # the projection discards the span used above; for the generic case the
    # Frobenius norm equals sqrt(sum of the K smallest singular values squared)
    delta = -(z @ vs) @ vs.T
    e, f = delta[:, :k].T * sa, delta[:, k:].T * sb
    return TLSFit(_wrap(jt.T * (sb / sa), d), s, (e, f), generic)


def tls_estimate(d: DeltaMatrices, scale: bool = True) -> JacobianMatrix:
    return tls_fit(d, scale).j


def augmented_svd_identity_check(x, y, tol: float = 1e-12) -> bool:
    """Check ``Z Z^T = X X^T + Y Y^T`` for ``Z = [X Y]`` to relative ``tol``."""
    x, y = np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float))
    if x.shape[0] != y.shape[0]:
        raise DimensionError("X and Y need the same number of rows")
    z = np.hstack([x, y])
    zz = z @ z.T
    err = np.linalg.norm(zz - x @ x.T - y @ y.T)
    return bool(err <= tol * np.linalg.norm(zz))


@dataclass(frozen=True)
class EstimationReport:
    j_est: JacobianMatrix
    j_err: np.ndarray
    max_err: float
    frob_err: float
    method: str
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {"method": self.method, "k": int(self.j_err.shape[0]),
                "max_err": self.max_err, "frob_err": self.frob_err, "flags": list(self.flags)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def err_csv(self) -> str:
        """Heat-map triples ``row,col,value``."""
        r, c = np.indices(self.j_err.shape)
        lines = ["row,col,value"] + [f"{i},{j},{v:.12g}" for i, j, v in
                                      zip(r.ravel(), c.ravel(), self.j_err.ravel())]
        return "\n".join(lines) + "\n"


def compare_to_benchmark(j_est, j_bench, method: str = "", flags=(),
                         diverge_ratio: float = 0.5) -> EstimationReport:
    """Entrywise error against a benchmark Jacobian.

    The flag ``"diverged"`` is added when the largest error exceeds
    ``diverge_ratio`` times the largest benchmark entry.
    """
    est = j_est.entries if isinstance(j_est, JacobianMatrix) else np.asarray(j_est, float)
    bench = j_bench.entries if isinstance(j_bench, JacobianMatrix) else np.asarray(j_bench, float)
    if est.shape != bench.shape:
        raise DimensionError(f"estimate {est.shape} and benchmark {bench.shape} differ")
    err = np.abs(est - bench)
    flags = tuple(flags)
    if not np.isfinite(err).all() or err.max(initial=0.0) > diverge_ratio * np.abs(bench).max(initial=0.0):
        flags += ("diverged",)
    if not isinstance(j_est, JacobianMatrix):
        j_est = JacobianMatrix(est, tuple(range(est.shape[1])), tuple(range(est.shape[0])))
    return EstimationReport(j_est, err, float(err.max(initial=0.0)), float(np.linalg.norm(err)),
                            method, flags)


def estimate(d: DeltaMatrices, method: str = "ols", scale: bool = True):
    """Run one estimator and collect its warnings as report flags."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if method == "ols":
            j = ols_estimate(d)
        elif method == "tls":
            j = tls_estimate(d, scale)
        else:
            raise ValueError(f"unknown method {method!r}")
    flags = []
    for w in caught:
        if issubclass(w.category, RankDeficientWarning):
            flags.append("rank_deficient")
        elif issubclass(w.category, IllConditionedWarning):
            flags.append("ill_conditioned")
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return j, tuple(flags)
