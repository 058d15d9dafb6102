"""Nodal injections, analytic Jacobian blocks and Newton-Raphson power flow.

All kernels accept voltage arrays with arbitrary leading batch dimensions,
``v.shape == theta.shape == (..., n)``, so a whole time series of operating
points can be evaluated in one call.

The reduced system uses the blocked ordering

    y = [P_i  (non-slack buses) ; Q_i  (PQ buses)]
    x = [theta_i (non-slack)    ; ln V_i (PQ buses)]

Because the N and L blocks are voltage-scaled (dP/dV_j * V_j), the Jacobian
is exactly dy/dx when the magnitude coordinates are ``ln V``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionError, NonConvergence, SingularJacobian
from .grid import BusKind, Grid, build_admittance


@dataclass(frozen=True)
class SystemState:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if v.shape != theta.shape:
            raise DimensionError(f"v {v.shape} and theta {theta.shape} differ")
        if np.any(v <= 0):
            raise ValueError("voltage magnitudes must be positive")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "theta", theta)

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return np.array_equal(self.v, other.v) and np.array_equal(self.theta, other.theta)

    __hash__ = None


@dataclass(frozen=True)
class Injections:
    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class JacobianBlocks:
    """Full n-by-n H, N, K, L blocks over every bus (slack included)."""

    h: np.ndarray
    n: np.ndarray
    k: np.ndarray
    l: np.ndarray


@dataclass(frozen=True)
class JacobianMatrix:
    """Reduced K-by-K Jacobian in blocked [H N; K L] layout.

    ``index_map[c]`` is ``(bus_position, "theta" | "v")`` for column ``c``;
    ``row_map[r]`` is ``(bus_position, "p" | "q")`` for row ``r``.
    """

    entries: np.ndarray
    index_map: tuple
    row_map: tuple

    @property
    def k(self) -> int:
        return self.entries.shape[-1]


def _admittance(grid, y):
    return build_admittance(grid) if y is None else y


def _check(state, grid):
    if state.v.shape[-1] != grid.n:
        raise DimensionError(f"state has {state.v.shape[-1]} buses, grid has {grid.n}")


def _shunts(grid):
    g = np.array([b.g_shunt for b in grid.buses])
    b = np.array([b.b_shunt for b in grid.buses])
    return g, b


def _rect(v, theta):
    return v * np.cos(theta), v * np.sin(theta)


def _angle_terms(v, theta):
    """``V_i V_k cos(t_i - t_k)`` and ``V_i V_k sin(t_i - t_k)`` as n-by-n arrays."""
    e, f = _rect(v, theta)
    ei, ek = e[..., :, None], e[..., None, :]
    fi, fk = f[..., :, None], f[..., None, :]
    return ei * ek + fi * fk, fi * ek - ei * fk


def injections(state: SystemState, grid: Grid, y=None) -> Injections:
    """Active and reactive power at every bus from voltages.

    Evaluates, for each bus i (sums over k != i)::

        P_i = V_i sum V_k (G_ik cos t_ik + B_ik sin t_ik) - V_i^2 sum G_ik - V_i^2 g_i
        Q_i = V_i sum V_k (G_ik sin t_ik - B_ik cos t_ik) + V_i^2 sum B_ik + V_i^2 b_i

    With this admittance convention P_i, Q_i are positive for power drawn
    from the network at bus i.
    """
    _check(state, grid)
    y = _admittance(grid, y)
    off = ~np.eye(grid.n, dtype=bool)
    go, bo = np.where(off, y.real, 0.0), np.where(off, y.imag, 0.0)
    g_sh, b_sh = _shunts(grid)
    v, theta = state.v, state.theta
    # sum_k V_k (G_ik cos t_ik + B_ik sin t_ik) expanded with e = V cos t, f = V sin t
    e, f = _rect(v, theta)
    ge, gf, be, bf = e @ go.T, f @ go.T, e @ bo.T, f @ bo.T
    v2 = v * v
    p = e * ge + f * gf + f * be - e * bf - v2 * go.sum(axis=1) - v2 * g_sh
    q = f * ge - e * gf - e * be - f * bf + v2 * bo.sum(axis=1) + v2 * b_sh
    return Injections(p, q)


def jacobian_blocks(state: SystemState, grid: Grid, y=None, inj=None) -> JacobianBlocks:
    """H, N, K, L over all buses, including node-to-ground corrections.

    The same off-diagonal products feed H and L (and, negated, N and K), so
    ``H_ij == L_ij`` and ``N_ij == -K_ij`` hold bitwise for i != j.
    """
    _check(state, grid)
    y = _admittance(grid, y)
    if inj is None:
        inj = injections(state, grid, y)
    gm, bm = y.real, y.imag
    g_sh, b_sh = _shunts(grid)
    v, theta = state.v, state.theta
    vcos, vsin = _angle_terms(v, theta)
    a = gm * vsin - bm * vcos
    c = gm * vcos + bm * vsin
    v2 = v * v
    h, n, k, l = a.copy(), c.copy(), -c, a.copy()
    d = np.arange(grid.n)
    p, q = inj.p, inj.q
    h[..., d, d] += -q + v2 * b_sh
    n[..., d, d] += p - v2 * g_sh
    k[..., d, d] += p + v2 * g_sh
    l[..., d, d] += q + v2 * b_sh
    return JacobianBlocks(h, n, k, l)


def reduced_index(grid: Grid):
    """Bus positions of the reduced unknowns: (non-slack, PQ)."""
    return np.array(grid.non_slack, dtype=int), np.array(grid.pq, dtype=int)


def assemble_reduced(blocks: JacobianBlocks, grid: Grid) -> JacobianMatrix:
    """Drop slack rows/columns and PV magnitude rows/columns.

    Result has K = 2n - m - 2 rows for n buses of which m are PV.
    """
    ns, pq = reduced_index(grid)

    def sub(block, rows, cols):
        return np.take(np.take(block, rows, axis=-2), cols, axis=-1)

    top = np.concatenate([sub(blocks.h, ns, ns), sub(blocks.n, ns, pq)], axis=-1)
    bottom = np.concatenate([sub(blocks.k, pq, ns), sub(blocks.l, pq, pq)], axis=-1)
    entries = np.concatenate([top, bottom], axis=-2)
    cols = tuple((int(i), "theta") for i in ns) + tuple((int(i), "v") for i in pq)
    rows = tuple((int(i), "p") for i in ns) + tuple((int(i), "q") for i in pq)
    return JacobianMatrix(entries, cols, rows)


def reduced_jacobian(state: SystemState, grid: Grid, y=None, inj=None) -> np.ndarray:
    """Entries of the reduced Jacobian built without the full n-by-n blocks.

    Same arithmetic as ``assemble_reduced(jacobian_blocks(...))`` restricted
    to the surviving rows and columns, so the result is bitwise identical;
    used inside the Newton loops where the full blocks are never needed.
    """
    y = _admittance(grid, y)
    if inj is None:
        inj = injections(state, grid, y)
    ns, pq = reduced_index(grid)
    n1, n2 = len(ns), len(pq)
    pos = np.searchsorted(ns, pq)          # PQ buses inside the non-slack list
    all_pq = n1 == n2
    g_sh, b_sh = _shunts(grid)
    gm, bm = y.real[np.ix_(ns, ns)], y.imag[np.ix_(ns, ns)]
    vcos, vsin = _angle_terms(state.v[..., ns], state.theta[..., ns])
    out = np.empty(vcos.shape[:-2] + (n1 + n2, n1 + n2))
    a = out[..., :n1, :n1]
    np.multiply(gm, vsin, out=a)
    a -= bm * vcos
    c = gm * vcos
    c += bm * vsin
    if all_pq:
        out[..., :n1, n1:] = c
        np.negative(c, out=out[..., n1:, :n1])
        out[..., n1:, n1:] = a
    else:
        out[..., :n1, n1:] = c[..., :, pos]
        out[..., n1:, :n1] = -c[..., pos, :]
        out[..., n1:, n1:] = a[..., pos, :][..., :, pos]
    v2 = state.v * state.v
    p, q = inj.p, inj.q
    d1, d2 = np.arange(n1), np.arange(n2)
    out[..., d1, d1] += (-q + v2 * b_sh)[..., ns]
    out[..., pos, n1 + d2] += (p - v2 * g_sh)[..., pq]
    out[..., n1 + d2, pos] += (p + v2 * g_sh)[..., pq]
    out[..., n1 + d2, n1 + d2] += (q + v2 * b_sh)[..., pq]
    return out


def jacobian(state: SystemState, grid: Grid, y=None) -> JacobianMatrix:
    return assemble_reduced(jacobian_blocks(state, grid, y), grid)


def state_vector(state: SystemState, grid: Grid) -> np.ndarray:
    """Reduced coordinates ``[theta_ns ; ln V_pq]`` (batched over leading dims)."""
    ns, pq = reduced_index(grid)
    return np.concatenate([state.theta[..., ns], np.log(state.v[..., pq])], axis=-1)


def output_vector(inj: Injections, grid: Grid) -> np.ndarray:
    """Reduced outputs ``[P_ns ; Q_pq]``."""
    ns, pq = reduced_index(grid)
    return np.concatenate([inj.p[..., ns], inj.q[..., pq]], axis=-1)


def apply_step(state: SystemState, grid: Grid, dx) -> SystemState:
    """Move ``state`` by ``dx`` in reduced coordinates.

    The magnitude part of ``dx`` is a step in ``ln V`` (the columns of N and
    L carry a factor V_j), so magnitudes are scaled by ``exp(dx)``, which
    also keeps them positive.
    """
    ns, pq = reduced_index(grid)
    v, theta = state.v.copy(), state.theta.copy()
    theta[..., ns] += dx[..., : len(ns)]
    # clipping only matters for a diverging iterate; it keeps V finite and > 0
    v[..., pq] *= np.exp(np.clip(dx[..., len(ns):], -50.0, 50.0))
    return SystemState(v, theta)


def flat_start(grid: Grid, batch=()) -> SystemState:
    v = np.array([b.v_setpoint if b.kind is not BusKind.PQ else 1.0 for b in grid.buses])
    v = np.broadcast_to(v, tuple(batch) + (grid.n,)).copy()
    return SystemState(v, np.zeros_like(v))


@dataclass(frozen=True)
class PowerFlowSpec:
    """Scheduled values for the reduced outputs, in the injection formula's sign.

    ``targets`` is ordered like :func:`output_vector`; it may carry leading
    batch dimensions for :func:`solve_series`.
    """

    targets: np.ndarray
    tol: float = 1e-8
    max_iter: int = 20

    def __post_init__(self):
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float))
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @classmethod
    def from_grid(cls, grid: Grid, **kwargs) -> "PowerFlowSpec":
        """Targets from the buses' scheduled (generation-positive) p, q."""
        return cls(scheduled_targets(grid), **kwargs)


def scheduled_targets(grid: Grid, p=None, q=None) -> np.ndarray:
    """Convert generation-positive bus schedules into solver targets.

    ``p`` and ``q`` default to the grid's own schedule and may be arrays of
    shape ``(..., n)``.
    """
    if p is None:
        p = np.array([b.p for b in grid.buses])
    if q is None:
        q = np.array([b.q for b in grid.buses])
    ns, pq = reduced_index(grid)
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    return -np.concatenate([p[..., ns], q[..., pq]], axis=-1)


def _solve_checked(jac, rhs):
    with warnings.catch_warnings():
        # singularity is reported below through the pivot test
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(jac, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= np.finfo(float).eps * jac.shape[0] * max(pivots.max(), 1.0):
        raise SingularJacobian("Jacobian is numerically singular")
    return la.lu_solve((lu, piv), rhs, check_finite=False)


@np.errstate(over="ignore", invalid="ignore")
def newton_raphson_solve(grid: Grid, spec: PowerFlowSpec, start: SystemState | None = None, y=None):
    """Solve one power flow by Newton-Raphson.

    Returns
    -------
    state : SystemState
    iterations : int
        Number of Jacobian solves performed (0 if ``start`` already meets tol).

    Raises
    ------
    SingularJacobian
    NonConvergence
        Carries the lowest-mismatch state seen in ``exc.state``.
    """
    y = _admittance(grid, y)
    state = flat_start(grid) if start is None else start
    _check(state, grid)
    best, best_err = state, np.inf
    for it in range(spec.max_iter + 1):
        inj = injections(state, grid, y)
        mismatch = spec.targets - output_vector(inj, grid)
        err = np.abs(mismatch).max() if mismatch.size else 0.0
        if not np.isfinite(err):
            break
        if err < best_err:
            best, best_err = state, err
        if err < spec.tol:
            return state, it
        if it == spec.max_iter:
            break
        jac = reduced_jacobian(state, grid, y, inj)
        dx = _solve_checked(jac, mismatch)
        state = apply_step(state, grid, dx)
    raise NonConvergence(
        f"no convergence in {spec.max_iter} iterations (max mismatch {best_err:.3e})",
        state=best, iterations=spec.max_iter, mismatch=best_err,
    )


@dataclass(frozen=True)
class SeriesSolution:
    state: SystemState
    iterations: np.ndarray
    converged: np.ndarray
    mismatch: np.ndarray


@np.errstate(over="ignore", invalid="ignore")
def solve_series(grid: Grid, targets, tol=1e-8, max_iter=20, start=None, y=None) -> SeriesSolution:
    """Newton-Raphson over a stack of independent operating points.

    ``targets`` has shape ``(T, K)``.  Samples are iterated together with a
    batched LU solve; each one is frozen as soon as it meets ``tol``.
    Non-converged or singular samples are reported through ``converged``
    rather than raised.
    """
    y = _admittance(grid, y)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_samples = targets.shape[0]
    state = flat_start(grid, (n_samples,)) if start is None else start
    v, theta = state.v.copy(), state.theta.copy()
    iterations = np.zeros(n_samples, dtype=int)
    active = np.ones(n_samples, dtype=bool)
    err = np.full(n_samples, np.inf)
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        sub = SystemState(v[idx], theta[idx])
        inj = injections(sub, grid, y)
        mismatch = targets[idx] - output_vector(inj, grid)
        err[idx] = np.abs(mismatch).max(axis=-1)
        done = err[idx] < tol
        active[idx[done]] = False
        iterations[idx[done]] = it
        blown = ~np.isfinite(err[idx])
        active[idx[blown]] = False
        iterations[idx[blown]] = it
        done |= blown
        if it == max_iter or not active.any():
            break
        keep = ~done
        idx, mismatch = idx[keep], mismatch[keep]
        sub = SystemState(sub.v[keep], sub.theta[keep])
        inj = Injections(inj.p[keep], inj.q[keep])
        jac = reduced_jacobian(sub, grid, y, inj)
        try:
            dx = np.linalg.solve(jac, mismatch[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dx = np.full_like(mismatch, np.nan)
            for r in range(len(idx)):
                try:
                    dx[r] = _solve_checked(jac[r], mismatch[r])
                except (SingularJacobian, ValueError):
                    pass
        bad = ~np.isfinite(dx).all(axis=-1)
        if bad.any():
            active[idx[bad]] = False
            iterations[idx[bad]] = it
            idx, dx, sub = idx[~bad], dx[~bad], SystemState(sub.v[~bad], sub.theta[~bad])
        moved = apply_step(sub, grid, dx)
        v[idx], theta[idx] = moved.v, moved.theta
    iterations[active] = max_iter
    return SeriesSolution(SystemState(v, theta), iterations, err < tol, err)


def linearize_check(state: SystemState, grid: Grid, perturbation, y=None):
    """First-order prediction ``J dx`` against the true change ``f(x+dx) - f(x)``.

    ``perturbation`` is in reduced coordinates (angles, relative magnitudes
    as ``d ln V``).
    """
    y = _admittance(grid, y)
    dx = np.asarray(perturbation, dtype=float)
    jac = jacobian(state, grid, y).entries
    predicted = jac @ dx
    x = state_vector(state, grid)
    ns, pq = reduced_index(grid)
    moved_x = x + dx
    v, theta = state.v.copy(), state.theta.copy()
    theta[ns] = moved_x[: len(ns)]
    v[pq] = np.exp(moved_x[len(ns):])
    f0 = output_vector(injections(state, grid, y), grid)
    f1 = output_vector(injections(SystemState(v, theta), grid, y), grid)
    return predicted, f1 - f0
