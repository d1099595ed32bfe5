"""First-order coherence maps, the rectangle-path measure and decoherence fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import linregress

from .core import L, TREV, V0, SpaceGrid
from .errors import CoverageWarning, DomainError, InsufficientDataError, NotEquilibratedError, NumericError

MASK_FLOOR = 1e-12
# The off-diagonal ridges of |g1| for a release from half of the box meet the
# map edge at a point that sweeps the box twice as fast as the single-particle
# velocity v0 (measured; see vertex_path).
RIDGE_SPEED = 2 * V0
SEARCH_CELLS = 3


@dataclass(frozen=True)
class CoherenceMap:
    """g1(x_i, x_j) of one component on all grid nodes.

    ``mask[i]`` is False where the density is below the floor; rows and
    columns of masked nodes hold zeros and are ignored downstream.
    """

    grid: SpaceGrid
    values: np.ndarray
    mask: np.ndarray
    t: float = 0.0

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)


def g1_from_orbitals(phi: np.ndarray, grid: SpaceGrid, t: float = 0.0) -> CoherenceMap:
    """Normalized one-body density matrix of a single determinant.

    ``phi`` holds orbitals on all grid nodes, shape (n_orb, n_points + 1).
    """
    phi = np.atleast_2d(np.asarray(phi))
    if phi.shape[1] != grid.n_points + 1:
        raise DomainError(f"orbitals have {phi.shape[1]} nodes, grid has {grid.n_points + 1}")
    rho = phi.conj().T @ phi
    n = np.real(np.diagonal(rho)).copy()
    mask = n > MASK_FLOOR * phi.shape[0] / L
    inv = np.zeros_like(n)
    inv[mask] = 1.0 / np.sqrt(n[mask])
    g1 = rho * inv[:, None] * inv[None, :]
    idx = np.flatnonzero(mask)
    g1[idx, idx] = 1.0
    return CoherenceMap(grid, g1, mask, float(t))


def g1_map(state, component: str = "plus") -> CoherenceMap:
    """g1 of one component of a mean-field state."""
    return g1_from_orbitals(state.full(component), state.grid, state.t)


def vertex_path(t, speed: float = V0):
    """Vertex u0(t) of the first rectangle, a triangle wave on [0, L].

    u0 rises from 0 to L at ``speed`` and then falls back.  With the default
    speed v0 the period is Trev; the ridges observed for a half-box release
    follow ``RIDGE_SPEED`` = 2 v0, period Trev/2.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be nonnegative")
    s = speed * t / L
    k = np.floor(s)
    frac = s - k
    u0 = np.where(k % 2 == 0, frac * L, L - frac * L)
    # the descending branch starts at exactly L so the wave is continuous
    return float(u0) if u0.ndim == 0 else u0


@dataclass
class PathResult:
    G: float
    u0: float
    skipped: float
    profile: np.ndarray


def path_profile(cmap: CoherenceMap, u0: float, search: int = SEARCH_CELLS) -> tuple[np.ndarray, np.ndarray]:
    """|g1| along the two rectangle sides, maximized over perpendicular offsets.

    For node u <= u0 the point is (u, u0 - u), otherwise (u, u - u0).
    Returns the profile and a validity flag per node.
    """
    grid = cmap.grid
    M = grid.n_points
    mod = cmap.modulus
    mask = cmap.mask
    i = np.arange(M + 1)
    u = grid.x
    first = u <= u0
    partner = np.where(first, u0 - u, u - u0)
    j = np.rint(partner / grid.dx).astype(int)
    # the anti-diagonal side has perpendicular (1, 1), the diagonal side (1, -1)
    dj = np.where(first, 1, -1)
    best = np.full(M + 1, -1.0)
    for s in range(-search, search + 1):
        ii = i + s
        jj = j + dj * s
        ok = (ii >= 0) & (ii <= M) & (jj >= 0) & (jj <= M)
        ok[ok] &= mask[ii[ok]] & mask[jj[ok]]
        val = np.full(M + 1, -1.0)
        val[ok] = mod[ii[ok], jj[ok]]
        best = np.maximum(best, val)
    valid = best >= 0
    return np.where(valid, best, np.nan), valid


def coherence_measure(
    cmap: CoherenceMap,
    t: Optional[float] = None,
    speed: float = RIDGE_SPEED,
    search: int = SEARCH_CELLS,
    u0: Optional[float] = None,
) -> PathResult:
    """Path integral of |g1| along the first rectangle (trapezoidal in u).

    Masked path points are skipped and the integral is rescaled by the
    covered length; more than 10% skipped raises a CoverageWarning.
    """
    if u0 is None:
        u0 = vertex_path(cmap.t if t is None else t, speed)
    prof, valid = path_profile(cmap, u0, search)
    w = np.full(cmap.grid.n_points + 1, cmap.grid.dx)
    w[[0, -1]] *= 0.5
    covered = w[valid].sum()
    skipped = 1.0 - covered / L
    if covered == 0:
        return PathResult(float("nan"), float(u0), 1.0, prof)
    if skipped > 0.1:
        warnings.warn(f"{100 * skipped:.0f}% of the coherence path is masked", CoverageWarning, stacklevel=2)
    G = float(np.sum(w[valid] * prof[valid]) * L / covered)
    return PathResult(G, float(u0), float(skipped), prof)


@dataclass
class CoherenceTrace:
    times: np.ndarray
    G: np.ndarray
    u0: np.ndarray
    G_inf: float = float("nan")
    t_dec: float = float("nan")
    meta: dict = field(default_factory=dict)


class CoherenceRecorder:
    """Callable for ``meanfield.run(on_sample=...)`` that accumulates 𝒢(t)."""

    def __init__(self, component: str = "plus", speed: float = RIDGE_SPEED, search: int = SEARCH_CELLS):
        self.component = component
        self.speed = speed
        self.search = search
        self.times, self.G, self.u0 = [], [], []

    def __call__(self, state):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoverageWarning)
            res = coherence_measure(g1_map(state, self.component), state.t, self.speed, self.search)
        self.times.append(state.t)
        self.G.append(res.G)
        self.u0.append(res.u0)

    def trace(self) -> CoherenceTrace:
        return CoherenceTrace(np.array(self.times), np.array(self.G), np.array(self.u0))


def spike_mask(times: np.ndarray, period: Optional[float], halfwidth: float) -> np.ndarray:
    """True for samples within ``halfwidth`` of a multiple of ``period``."""
    times = np.asarray(times, dtype=float)
    if period is None:
        return np.zeros(times.shape, bool)
    r = np.mod(times, period)
    return np.minimum(r, period - r) <= halfwidth


def _trend(t, y):
    """Least-squares slope and its standard error.

    The error is inflated by the integrated autocorrelation time of the
    residuals, summed up to the first non-positive lag.
    """
    if len(t) < 3 or np.ptp(t) == 0:
        return 0.0, 0.0
    res = linregress(t, y)
    r = y - (res.intercept + res.slope * t)
    n = len(r)
    tau = 1.0
    c0 = float(np.dot(r, r))
    if c0 > 0:
        for k in range(1, n // 2):
            rho = float(np.dot(r[k:], r[:-k])) / c0
            if rho <= 0:
                break
            tau += 2 * rho
    tau = min(tau, n / 3)
    return float(res.slope), float(res.stderr * math.sqrt(tau))


def decoherence_time(
    trace: CoherenceTrace,
    G0: Optional[float] = None,
    drop_fraction: float = 0.9,
    sustain: float = 0.02 * TREV,
    spike_period: Optional[float] = L / RIDGE_SPEED,
    spike_halfwidth: float = 0.02 * TREV,
    plateau_fraction: float = 0.1,
    plateau_slope: float = 0.05,
    min_drop: float = 0.05,
) -> float:
    """Earliest time 𝒢 falls by ``drop_fraction`` of its way to the plateau and stays there.

    The plateau G_inf is the mean of the final ``plateau_fraction`` of the
    samples; its linear trend must stay below ``plateau_slope`` relative per
    Trev.  A drift counts only when resolved beyond two (autocorrelation
    corrected) standard errors.
    Samples near degenerate-path spikes are ignored.  Returns inf
    when 𝒢 never drops by more than ``min_drop`` relative.  Sets
    ``trace.G_inf`` and ``trace.t_dec``.
    """
    t = np.asarray(trace.times, dtype=float)
    G = np.asarray(trace.G, dtype=float)
    keep = ~spike_mask(t, spike_period, spike_halfwidth) & np.isfinite(G)
    if keep.sum() < 10:
        raise InsufficientDataError("fewer than 10 usable coherence samples")
    tk, Gk = t[keep], G[keep]
    n_tail = max(3, int(math.ceil(plateau_fraction * len(tk))))
    tail_t, tail_G = tk[-n_tail:], Gk[-n_tail:]
    G_inf = float(tail_G.mean())
    slope, slope_err = _trend(tail_t, tail_G)
    # the equilibrated trace fluctuates strongly, so only a drift that is both
    # above tolerance and resolved beyond two standard errors counts
    if (abs(slope) - 2 * slope_err) * TREV > plateau_slope * abs(G_inf):
        raise NotEquilibratedError(
            f"no plateau: final samples drift by {abs(slope) * TREV / abs(G_inf):.1%} per Trev", trace=trace
        )
    trace.G_inf = G_inf
    if G0 is None:
        G0 = float(Gk[0])
    if G0 - G_inf <= min_drop * abs(G0):
        trace.t_dec = math.inf
        return math.inf
    thr = G0 - drop_fraction * (G0 - G_inf)
    below = Gk <= thr
    for i in np.flatnonzero(below):
        window = (tk >= tk[i]) & (tk <= tk[i] + sustain)
        if tk[i] + sustain > tk[-1]:
            break
        if below[window].all():
            trace.t_dec = float(tk[i])
            return trace.t_dec
    trace.t_dec = math.inf
    return math.inf


# -- fits -----------------------------------------------------------------------


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    prefactor: float
    r2: float


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


@dataclass(frozen=True)
class SaturationFit:
    A: float
    c: float
    residual: float
    boundary: bool


def _r2(y, yhat):
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def fit_linear(x: Sequence[float], y: Sequence[float]) -> LinearFit:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 3:
        raise InsufficientDataError("need at least 3 points")
    slope, icpt = np.polyfit(x, y, 1)
    return LinearFit(float(slope), float(icpt), _r2(y, slope * x + icpt))


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerFit:
    """y = prefactor * x**exponent by least squares on log-log axes."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 3:
        raise InsufficientDataError("need at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("power-law fit needs positive data")
    lin = fit_linear(np.log(x), np.log(y))
    return PowerFit(lin.slope, float(np.exp(lin.intercept)), lin.r2)


def fit_saturation(N: Sequence[float], t_dec: Sequence[float], max_iter: int = 500) -> SaturationFit:
    """t_dec(N) = A (1 - exp(-c N)) with c > 0.

    ``boundary`` is set when the fitted curve is already saturated at the
    smallest N, i.e. the data carry no information on c beyond a lower bound.
    """
    N, y = np.asarray(N, float), np.asarray(t_dec, float)
    if len(N) < 4:
        raise InsufficientDataError("need at least 4 points")
    if not np.all(np.isfinite(y)):
        raise DomainError("t_dec values must be finite")
    A0 = float(np.max(y))
    c0 = 1.0 / float(np.median(N))

    def resid(q):
        return q[0] * -np.expm1(-q[1] * N) - y

    res = least_squares(
        resid, x0=[A0, c0], bounds=([-np.inf, 1e-12], [np.inf, np.inf]),
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iter,
    )
    A, c = map(float, res.x)
    if res.status == 0:
        raise NumericError(f"saturation fit did not converge in {max_iter} evaluations", best=(A, c))
    boundary = c * float(np.min(N)) > 10
    return SaturationFit(A, c, float(np.sqrt(np.mean(res.fun**2))), bool(boundary))
