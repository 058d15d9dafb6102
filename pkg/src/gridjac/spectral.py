"""Random-matrix spectral tools for residue matrices.

Covers principal-component factor removal, empirical spectral densities of
sample covariance matrices, the Marchenko-Pastur law, the limiting density
for rows that are independent unit-variance AR(1) processes, order-1 Burg
estimation and a binned Jensen-Shannon style distance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from .errors import DegenerateSeries, MetricError, NumericalError, RangeError, RootSelectionError


class DensityKind(str, enum.Enum):
    EMPIRICAL = "empirical"
    MARCHENKO_PASTUR = "marchenko_pastur"
    AR1 = "ar1"


@dataclass(frozen=True)
class ObservationMatrix:
    """Rows are channels (nodes), columns are time samples."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
            raise ValueError(f"observation matrix must be at least 2x2, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> float:
        return self.n_rows / self.n_cols


def _as_matrix(x) -> np.ndarray:
    return x.data if isinstance(x, ObservationMatrix) else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class FactorDecomposition:
    loadings: np.ndarray
    factors: np.ndarray
    residues: np.ndarray

    @property
    def p(self) -> int:
        return self.loadings.shape[1]


def factor_decompose(x, p: int) -> FactorDecomposition:
    """Split ``X = L F + R`` with ``L`` the top-``p`` principal directions.

    ``L`` holds unit-norm eigenvectors of ``X X^T / T`` (largest eigenvalues
    first, sign fixed so the largest-magnitude component is positive), so
    ``F = L^T X``.
    """
    x = _as_matrix(x)
    n, t = x.shape
    if not 0 <= p <= min(n, t):
        raise RangeError(f"p={p} outside [0, {min(n, t)}]")
    if p == 0:
        return FactorDecomposition(np.zeros((n, 0)), np.zeros((0, t)), x.copy())
    _, vecs = np.linalg.eigh(x @ x.T / t)
    load = vecs[:, ::-1][:, :p]
    flip = np.sign(load[np.abs(load).argmax(axis=0), np.arange(p)])
    load = load * flip
    factors = load.T @ x
    return FactorDecomposition(load, factors, x - load @ factors)


@dataclass(frozen=True)
class SpectralDensity:
    """Density values on an ascending support grid."""

    support: np.ndarray
    density: np.ndarray
    kind: DensityKind = DensityKind.EMPIRICAL

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if s.shape != d.shape or s.ndim != 1 or s.size < 2:
            raise ValueError("support and density must be equal-length 1-D arrays")
        if np.any(np.diff(s) <= 0):
            raise ValueError("support must be strictly ascending")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("density must be finite and nonnegative")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "density", d)

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.support))

    def cdf(self, x) -> np.ndarray:
        """Cumulative mass by trapezoid integration, linear between nodes."""
        cum = cumulative_trapezoid(self.density, self.support, initial=0.0)
        return np.interp(x, self.support, cum, left=0.0, right=cum[-1])

    def to_csv(self) -> str:
        lines = ["lambda,density"]
        lines += [f"{s:.12g},{d:.12g}" for s, d in zip(self.support, self.density)]
        return "\n".join(lines) + "\n"


def covariance_eigenvalues(r) -> np.ndarray:
    """Ascending eigenvalues of ``R R^T / T``."""
    r = _as_matrix(r)
    try:
        return np.linalg.eigvalsh(r @ r.T / r.shape[1])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolve failed: {exc}") from None


def _histogram(eig, bins):
    lo, hi = eig.min(), eig.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        width = 1e-3 * max(1.0, abs(hi))
        lo, hi = lo - width / 2, hi + width / 2
    counts, edges = np.histogram(eig, bins=bins, range=(lo, hi))
    width = edges[1] - edges[0]
    centres = 0.5 * (edges[:-1] + edges[1:])
    # an empty bin either side makes the trapezoid rule over centres exact
    centres = np.concatenate([[centres[0] - width], centres, [centres[-1] + width]])
    dens = np.concatenate([[0.0], counts / (eig.size * width), [0.0]])
    return centres, dens


def esd(r, bins: int = 50, smooth: str | None = "kde", points: int = 512,
        drop: int = 0) -> SpectralDensity:
    """Empirical spectral density of ``R R^T / T``.

    ``smooth="kde"`` returns a Gaussian kernel estimate (Silverman
    bandwidth) renormalised to unit mass on its grid; ``smooth=None``
    returns the normalised histogram.  ``drop`` discards that many of the
    smallest eigenvalues, e.g. the structural zeros left by removing
    factors.
    """
    if bins < 10:
        raise RangeError("bins must be at least 10")
    eig = covariance_eigenvalues(r)[drop:]
    if smooth is None or np.ptp(eig) <= 1e-12 * max(1.0, abs(eig.max())):
        return SpectralDensity(*_histogram(eig, bins), DensityKind.EMPIRICAL)
    if smooth != "kde":
        raise ValueError(f"unknown smoother {smooth!r}")
    kde = stats.gaussian_kde(eig, bw_method="silverman")
    h = np.sqrt(kde.covariance[0, 0])
    grid = np.linspace(eig.min() - 4 * h, eig.max() + 4 * h, points)
    dens = kde(grid)
    dens /= np.trapezoid(dens, grid)
    return SpectralDensity(grid, dens, DensityKind.EMPIRICAL)


# --- limiting densities --------------------------------------------------------

def _check_c(c):
    if not 0 < c <= 1:
        raise RangeError(f"aspect ratio c={c} must lie in (0, 1]")


def mp_edges(c: float) -> tuple[float, float]:
    _check_c(c)
    return (1 - np.sqrt(c)) ** 2, (1 + np.sqrt(c)) ** 2


def edge_grid(lo: float, hi: float, points: int = 512) -> np.ndarray:
    """Grid on [lo, hi] clustered towards both ends (cosine spacing)."""
    u = np.linspace(0.0, 1.0, points)
    return lo + (hi - lo) * 0.5 * (1 - np.cos(np.pi * u))


def mp_values(x, c: float) -> np.ndarray:
    s1, s2 = mp_edges(c)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > s1) & (x < s2) & (x > 0)
    xi = x[inside]
    out[inside] = np.sqrt((xi - s1) * (s2 - xi)) / (2 * np.pi * c * xi)
    return out


def mp_density(c: float, grid=None, points: int = 512) -> SpectralDensity:
    """Marchenko-Pastur law for aspect ratio ``c``; zero outside its edges."""
    s1, s2 = mp_edges(c)
    grid = edge_grid(s1, s2, points) if grid is None else np.asarray(grid, dtype=float)
    vals = mp_values(grid, c)
    if c == 1:
        # the density diverges like x^-1/2 at the origin; keep the grid finite
        vals[~np.isfinite(vals)] = 0.0
    return SpectralDensity(grid, vals, DensityKind.MARCHENKO_PASTUR)


def mp_cdf(x, c: float, points: int = 4001) -> np.ndarray:
    s1, s2 = mp_edges(c)
    return mp_density(c, edge_grid(s1, s2, points)).cdf(x)


def ar1_support_bound(b: float, c: float) -> tuple[float, float]:
    """An interval containing the support of the AR(1) limiting density.

    Product of the Marchenko-Pastur edges with the extreme values of the
    AR(1) spectrum ``(1-b^2)/(1-2b cos w+b^2)``.
    """
    s1, s2 = mp_edges(c)
    r = (1 - abs(b)) / (1 + abs(b))
    return s1 * r, s2 / r


def _quartic_coefficients(z, b, c):
    # the equation divided through by a^4 = (1-b^2)^2
    a2 = 1 - b * b
    z = np.asarray(z, dtype=complex)
    one = np.ones_like(z)
    return np.stack([
        c * c * one,
        2 * c * (c - (1 + b * b) * z / a2),
        z * z - 2 * c * (1 + b * b) * z / a2 + (c * c - 1),
        -2 * one,
        -one,
    ], axis=-1)


def quartic_roots(coeffs) -> np.ndarray:
    """All roots of a batch of quartics via companion-matrix eigenvalues.

    ``coeffs[..., :]`` are ordered from the quartic term down.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    monic = coeffs[..., 1:] / coeffs[..., :1]
    comp = np.zeros(coeffs.shape[:-1] + (4, 4), dtype=complex)
    comp[..., 0, :] = -monic
    comp[..., 1, 0] = comp[..., 2, 1] = comp[..., 3, 2] = 1.0
    return np.linalg.eigvals(comp)


def green_function(grid, b: float, c: float, eps: float) -> np.ndarray:
    """Physical branch of G(z) at ``z = grid + i eps``.

    Of the four roots M of the quartic, the one kept at each point has
    ``Im G <= 0`` and continues the previous point's choice.  The tracking
    starts far right of the grid, seeded with ``M ~ 1/z``, and walks in
    along the real direction.
    """
    grid = np.asarray(grid, dtype=float)
    span = max(grid[-1] - grid[0], 1.0)
    far = grid[-1] + np.geomspace(100 * span, 1e-3 * span, 200)
    lam = np.concatenate([far, grid[::-1]])
    z = lam + 1j * eps
    m_all = quartic_roots(_quartic_coefficients(z, b, c))
    g_all = (m_all + 1) / z[:, None]
    # roundoff allowance for the sign test on nearly real roots
    tol = 1e-7 * np.abs(g_all).max(axis=1)
    path = np.empty(lam.size, dtype=complex)
    prev = 1 / z[0]
    for i in range(lam.size):
        ok = g_all[i].imag <= tol[i]
        if not ok.any():
            raise RootSelectionError(f"no root with Im G <= 0 at lambda={lam[i]:.6g}", lam[i])
        # continuity is judged on M: far out the two small roots are +-1/z
        # while their G values agree to O(1/z^2)
        dist = np.where(ok, np.abs(m_all[i] - prev), np.inf)
        k = dist.argmin()
        prev = m_all[i, k]
        path[i] = g_all[i, k]
    return path[far.size:][::-1]


DEFAULT_EPS = 1e-6


def ar1_values(grid, b: float, c: float, eps: float | None = None) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if eps is None:
        eps = DEFAULT_EPS * (grid[-1] - grid[0])
    rho = -green_function(grid, b, c, eps).imag / np.pi
    rho[rho < 1e-9] = 0.0
    return rho


def ar1_support(b: float, c: float) -> tuple[float, float]:
    """Numerical support of the AR(1) limiting density.

    Scans :func:`ar1_support_bound` on a mixed linear/logarithmic grid and
    returns the outermost points where the density is positive, widened by
    one scan step.
    """
    lo, hi = ar1_support_bound(b, c)
    scan = np.linspace(lo, hi, 1000)
    if lo < hi * 1e-3:
        scan = np.union1d(scan, np.geomspace(max(lo, hi * 1e-7), hi, 1000))
    rho = ar1_values(scan, b, c)
    nz = np.flatnonzero(rho > 0)
    if nz.size == 0:
        raise RootSelectionError("density vanished on the whole scan", lo)
    return scan[max(nz[0] - 1, 0)], scan[min(nz[-1] + 1, scan.size - 1)]


def ar1_theoretical_density(b: float, c: float, grid=None, eps: float | None = None,
                            points: int = 1024) -> SpectralDensity:
    """Limiting eigenvalue density of ``R R^T / T`` for AR(1) rows.

    Rows of ``R`` are independent unit-variance AR(1) series with lag-one
    coefficient ``b``; ``c = N/T``.  ``eps`` is the distance above the real
    axis at which the Green's function is evaluated and defaults to
    ``DEFAULT_EPS`` times the grid span.

    Without an explicit grid the support is located first (see
    :func:`ar1_support`) and an edge-clustered grid is laid over it.
    """
    if not abs(b) < 1:
        raise RangeError(f"AR coefficient b={b} must satisfy |b| < 1")
    _check_c(c)
    if grid is None:
        grid = edge_grid(*ar1_support(b, c), points)
    grid = np.asarray(grid, dtype=float)
    return SpectralDensity(grid, ar1_values(grid, b, c, eps), DensityKind.AR1)


# --- AR coefficient ---------------------------------------------------------------

@dataclass(frozen=True)
class ARModel:
    b: float

    def __post_init__(self):
        if not abs(self.b) < 1:
            raise RangeError(f"|b| must be < 1, got {self.b}")

    @property
    def innovation_var(self) -> float:
        return 1 - self.b ** 2


def estimate_ar_coefficient(series) -> tuple[float, float]:
    """Order-1 Burg estimate of the lag-one coefficient.

    The series is demeaned first.  Returns ``(b_hat, innovation_var_hat)``
    where the variance is the order-0 power times ``1 - b_hat^2``.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 16:
        raise ValueError(f"need at least 16 samples, got {x.size}")
    x = x - x.mean()
    fwd, bwd = x[1:], x[:-1]
    den = np.dot(fwd, fwd) + np.dot(bwd, bwd)
    if not den > 1e-300 or np.ptp(x) <= 1e-14 * max(1.0, np.abs(x).max()):
        raise DegenerateSeries("series is constant")
    b = 2 * np.dot(fwd, bwd) / den
    return float(b), float(np.dot(x, x) / x.size * (1 - b * b))


# --- divergence ---------------------------------------------------------------

def _xlogx(a):
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos])
    return out


def js_binned(a, b, weights=None) -> float:
    """``sum_i w_i (a log a + b log b - 2 v log v)`` with ``v = (a+b)/2``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise MetricError("bin vectors differ in length")
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    terms = _xlogx(a) + _xlogx(b) - 2 * _xlogx((a + b) / 2)
    return float(max(np.dot(w, terms), 0.0))


def bin_masses(rho: SpectralDensity, edges) -> np.ndarray:
    cdf = rho.cdf(edges)
    mass = np.clip(np.diff(cdf), 0.0, None)
    total = mass.sum()
    if not total > 0:
        raise MetricError("density has no mass on the common grid")
    return mass / total


def common_edges(rho_a: SpectralDensity, rho_b: SpectralDensity, bins: int = 100) -> np.ndarray:
    lo = min(rho_a.support[0], rho_b.support[0])
    hi = max(rho_a.support[-1], rho_b.support[-1])
    if not hi > lo:
        raise MetricError("empty common grid")
    return np.linspace(lo, hi, bins + 1)


def js_metric(rho_a: SpectralDensity, rho_b: SpectralDensity, bins: int = 100, weights=None) -> float:
    """Distance between two densities after rebinning onto a shared grid.

    Both are integrated over ``bins`` equal bins spanning the union of
    their supports; the resulting masses are compared with
    :func:`js_binned` (uniform weights by default).
    """
    edges = common_edges(rho_a, rho_b, bins)
    return js_binned(bin_masses(rho_a, edges), bin_masses(rho_b, edges), weights)
