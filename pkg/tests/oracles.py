"""Reference computations that share no code with the package under test."""

import numpy as np

from gridjac.grid import BusKind


def ybus(grid):
    """Textbook nodal admittance matrix, shunts on the diagonal."""
    n = grid.n
    y = np.zeros((n, n), complex)
    pos = {b.id: i for i, b in enumerate(grid.buses)}
    for br in grid.branches:
        if br.closed:
            i, j = pos[br.from_bus], pos[br.to_bus]
            ys = complex(br.g, br.b)
            y[i, i] += ys
            y[j, j] += ys
            y[i, j] -= ys
            y[j, i] -= ys
    for i, b in enumerate(grid.buses):
        y[i, i] += complex(b.g_shunt, b.b_shunt)
    return y


def absorbed_power(grid, v, theta):
    """Load-positive complex power ``-V conj(Y V)`` per bus, broadcast over batches."""
    u = v * np.exp(1j * theta)
    s = -u * np.conj(u @ ybus(grid).T)
    return s.real, s.imag


def _index(grid):
    ns = [i for i, b in enumerate(grid.buses) if b.kind is not BusKind.SLACK]
    pq = [i for i, b in enumerate(grid.buses) if b.kind is BusKind.PQ]
    return ns, pq


def outputs(grid, x, v0, theta0):
    """Map reduced ``x = [theta_ns, ln V_pq]`` (batched) to ``[P_ns, Q_pq]``."""
    ns, pq = _index(grid)
    v = np.broadcast_to(v0, x.shape[:-1] + v0.shape[-1:]).copy()
    th = np.broadcast_to(theta0, v.shape).copy()
    th[..., ns] = x[..., :len(ns)]
    v[..., pq] = np.exp(x[..., len(ns):])
    p, q = absorbed_power(grid, v, th)
    return np.concatenate([p[..., ns], q[..., pq]], axis=-1)


def fd_jacobian(grid, v, theta, h=1e-6):
    """Central differences of :func:`outputs`; ``v``, ``theta`` shape (S, n)."""
    ns, pq = _index(grid)
    x = np.concatenate([theta[:, ns], np.log(v[:, pq])], axis=-1)
    k = x.shape[-1]
    steps = h * np.eye(k)
    plus = outputs(grid, x[:, None, :] + steps, v[:, None, :], theta[:, None, :])
    minus = outputs(grid, x[:, None, :] - steps, v[:, None, :], theta[:, None, :])
    return np.swapaxes((plus - minus) / (2 * h), -1, -2)


def two_bus_voltage(p_load, q_load, r, x):
    """Receiving-end |V| of a slack (1 p.u.) feeding a load over R + jX.

    High-voltage root of ``V^4 + (2(PR + QX) - 1) V^2 + (P^2 + Q^2)(R^2 + X^2) = 0``.
    """
    b = 2 * (p_load * r + q_load * x) - 1
    c = (p_load ** 2 + q_load ** 2) * (r ** 2 + x ** 2)
    return np.sqrt((-b + np.sqrt(b * b - 4 * c)) / 2)


def random_states(v, theta, count, rng, dv=0.05, dtheta=0.05):
    """States scattered around ``(v, theta)``, slack angle kept."""
    n = v.size
    vs = v * (1 + rng.uniform(-dv, dv, (count, n)))
    ts = theta + rng.uniform(-dtheta, dtheta, (count, n))
    return vs, ts
