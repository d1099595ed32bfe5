"""Exact spectral evolution of an ideal Fermi gas released into the box.

The initial orbitals are expanded in box modes once (the overlap matrix
``lam[n, k]``); after that every density is a closed-form phase sum.  Three
independent routes to the relative depth of the traveling contributions are
provided: the direct overlap sum, the large-N sinc law, and the cosine
transform of the initial density.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .core import L, TREV, Occupancy, SpaceGrid, TrapSpec, box_energy
from .errors import DomainError, NumericError, TruncationWarning, ValidationError

DEFAULT_TRUNC_TOL = 1e-6
_CHUNK = 64


@dataclass(frozen=True)
class SpectralState:
    """Overlaps of the initial orbitals with box modes 1..K_max, plus weights.

    Row ``n`` of ``lam`` belongs to initial orbital n+1 and is occupied with
    ``weights[n]`` (1 for a single Slater determinant, a multiplicity or a
    thermal factor otherwise).
    """

    lam: np.ndarray
    weights: np.ndarray
    occupancy: Optional[Occupancy] = None
    D: Optional[float] = None
    trunc_tol: float = DEFAULT_TRUNC_TOL

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if lam.ndim != 2 or w.shape != (lam.shape[0],):
            raise DomainError("lam must be (n_orb, K_max) and weights (n_orb,)")
        lam.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "weights", w)

    @property
    def K_max(self) -> int:
        return self.lam.shape[1]

    @property
    def n_orb(self) -> int:
        return self.lam.shape[0]

    @property
    def N(self) -> float:
        return float(self.weights.sum())

    @property
    def completeness(self) -> np.ndarray:
        """Per-orbital captured norm sum_k lam(n,k)^2."""
        return np.einsum("nk,nk->n", self.lam, self.lam)

    @property
    def defect(self) -> float:
        """Largest per-orbital truncation defect 1 - sum_k lam^2 (occupied rows)."""
        occ = self.weights > 0
        if not occ.any():
            return 0.0
        return float(np.max(1.0 - self.completeness[occ]))

    def with_weights(self, weights, occupancy: Optional[Occupancy] = None) -> "SpectralState":
        return SpectralState(self.lam, weights, occupancy, self.D, self.trunc_tol)


@dataclass
class Carpet:
    """Density n(x_j, t_i) on a space-time grid; rows are times."""

    grid: SpaceGrid
    times: np.ndarray
    density: np.ndarray
    meta: dict = field(default_factory=dict)

    def norms(self) -> np.ndarray:
        return self.grid.integrate(self.density, axis=1)


@dataclass(frozen=True)
class DepthReport:
    p: int
    d_direct: float
    d_sinc: float
    d_fourier: float
    per_orbital: Optional[np.ndarray] = None
    defect: float = 0.0


def _weights_for(n_orb: int, occupancy) -> tuple[np.ndarray, Optional[Occupancy]]:
    if occupancy is None:
        return np.ones(n_orb), None
    if isinstance(occupancy, Occupancy):
        return occupancy.as_array(n_orb), occupancy
    w = np.asarray(occupancy, dtype=float)
    if w.shape != (n_orb,):
        raise DomainError("weight vector length must equal the number of orbitals")
    return w, None


def default_kmax(n_orb: int, D: float) -> int:
    return int(max(40 * n_orb, math.ceil(1000 / D)))


def _check_defect(state: SpectralState, tol: float, what: str):
    if state.defect > tol:
        warnings.warn(
            f"{what}: truncation defect {state.defect:.3e} exceeds {tol:.1e}",
            TruncationWarning,
            stacklevel=3,
        )


def overlaps_subbox(
    D: float,
    N_orb: int,
    K_max: Optional[int] = None,
    occupancy=None,
    tol: float = DEFAULT_TRUNC_TOL,
) -> SpectralState:
    """Closed-form overlaps of sub-box [0, D] sine orbitals with the box modes.

    Uses lam = 2 sqrt(D) sinc(kD - n) n / (n + kD) with the normalized sinc,
    which equals the textbook expression away from kD = n and tends smoothly
    to sqrt(D) on resonance.
    """
    if not 0 < D <= L:
        raise DomainError("sub-box length must lie in (0, L]")
    if N_orb < 1:
        raise DomainError("need at least one orbital")
    if K_max is None:
        K_max = default_kmax(N_orb, D)
    if K_max < 4 * N_orb / D:
        raise DomainError(f"K_max={K_max} below 4 N_orb / D = {4 * N_orb / D:.0f}")
    n = np.arange(1, N_orb + 1, dtype=float)[:, None]
    kD = np.arange(1, K_max + 1, dtype=float)[None, :] * D
    lam = 2.0 * math.sqrt(D) * np.sinc(kD - n) * n / (n + kD)
    weights, occ = _weights_for(N_orb, occupancy)
    state = SpectralState(lam, weights, occ, D, tol)
    _check_defect(state, tol, "overlaps_subbox")
    return state


def _project(values: np.ndarray, grid: SpaceGrid, K_max: int) -> np.ndarray:
    """Trapezoidal overlaps of sampled functions with box modes 1..K_max."""
    M = grid.n_points
    inner = values[:, 1:-1]
    if K_max <= M - 1:
        # trapezoid against sqrt(2) sin(k pi j / M) is a type-I DST
        coef = sfft.dst(inner, type=1, axis=-1) * (grid.dx * math.sqrt(2) / 2)
        return coef[:, :K_max]
    out = np.empty((values.shape[0], K_max), dtype=values.dtype)
    j = np.arange(1, M)
    for start in range(0, K_max, 512):
        k = np.arange(start + 1, min(start + 512, K_max) + 1)
        basis = math.sqrt(2) * np.sin(np.pi * np.outer(j, k) / M)
        out[:, start : start + k.size] = grid.dx * (inner @ basis)
    return out


def overlaps_numeric(
    initial_orbitals,
    grid: SpaceGrid,
    K_max: Optional[int] = None,
    occupancy=None,
    orth_tol: float = 1e-8,
    tol: float = DEFAULT_TRUNC_TOL,
) -> SpectralState:
    """Overlaps of sampled real orbitals (rows, on ``grid.x``) with box modes."""
    phi = np.atleast_2d(np.asarray(initial_orbitals, dtype=float))
    if phi.shape[1] != grid.n_points + 1:
        raise DomainError("orbitals must be sampled on the grid nodes")
    edge = max(np.abs(phi[:, 0]).max(), np.abs(phi[:, -1]).max())
    if edge > orth_tol:
        raise ValidationError(f"orbitals do not vanish at the walls (max |phi| = {edge:.2e})")
    wq = np.full(phi.shape[1], grid.dx)
    wq[[0, -1]] *= 0.5
    gram = (phi * wq) @ phi.T
    err = np.abs(gram - np.eye(phi.shape[0]))
    if err.max() > orth_tol:
        i, j = np.unravel_index(np.argmax(err), err.shape)
        raise ValidationError(
            f"orbitals are not orthonormal: worst pair ({i}, {j}) deviates by {err[i, j]:.3e}",
            fields={"pair": (int(i), int(j)), "deviation": float(err[i, j])},
        )
    if K_max is None:
        K_max = grid.max_mode
    lam = _project(phi, grid, K_max)
    weights, occ = _weights_for(phi.shape[0], occupancy)
    state = SpectralState(lam, weights, occ, None, tol)
    _check_defect(state, tol, "overlaps_numeric")
    return state


def mode_phases(K_max: int, t: float) -> np.ndarray:
    """exp(-i E_k t) for k = 1..K_max, reduced exactly through t / Trev.

    E_k t = 2 pi k^2 (t / Trev); taking k^2 tau modulo one keeps exact
    revivals exact in floating point.
    """
    k2 = np.arange(1, K_max + 1, dtype=float) ** 2
    frac = np.mod(k2 * (t / TREV), 1.0)
    return np.exp(-2j * np.pi * frac)


def _synthesize(coef: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Evaluate sum_k coef[:, k] sqrt(2) sin(k pi x) on all grid nodes."""
    M = grid.n_points
    K = coef.shape[1]
    out = np.zeros((coef.shape[0], M + 1), dtype=coef.dtype)
    if K <= M - 1:
        padded = np.zeros((coef.shape[0], M - 1), dtype=coef.dtype)
        padded[:, :K] = coef
        out[:, 1:-1] = sfft.dst(padded, type=1, axis=-1) / math.sqrt(2)
        return out
    j = np.arange(1, M)
    for start in range(0, K, 512):
        k = np.arange(start + 1, min(start + 512, K) + 1)
        basis = math.sqrt(2) * np.sin(np.pi * np.outer(k, j) / M)
        out[:, 1:-1] += coef[:, start : start + k.size] @ basis
    return out


def orbitals_at(state: SpectralState, t: float, grid: SpaceGrid, rows=None) -> np.ndarray:
    """Complex orbital amplitudes phi_n(x_j, t) on the grid nodes."""
    lam = state.lam if rows is None else state.lam[rows]
    return _synthesize(lam * mode_phases(state.K_max, t)[None, :], grid)


def evolve_density(state: SpectralState, t: float, grid: SpaceGrid) -> np.ndarray:
    """n(x_j, t) = sum_n w_n |sum_k lam(n,k) phi_k(x_j) exp(-i E_k t)|^2."""
    if t < 0:
        raise DomainError("time must be nonnegative")
    phase = mode_phases(state.K_max, t)
    dens = np.zeros(grid.n_points + 1)
    occupied = np.nonzero(state.weights > 0)[0]
    for start in range(0, occupied.size, _CHUNK):
        rows = occupied[start : start + _CHUNK]
        amp = _synthesize(state.lam[rows] * phase[None, :], grid)
        dens += state.weights[rows] @ (amp.real**2 + amp.imag**2)
    return dens


def initial_density(state: SpectralState, grid: SpaceGrid) -> np.ndarray:
    return evolve_density(state, 0.0, grid)


def make_carpet(
    state: SpectralState,
    times: Sequence[float],
    grid: SpaceGrid,
    workers: Optional[int] = None,
    meta: Optional[dict] = None,
) -> Carpet:
    """Stack evolve_density over a list of times (optionally in threads)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > TREV * (1 + 1e-12)):
        raise DomainError("carpet times must lie within [0, Trev]")
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda t: evolve_density(state, t, grid), times))
    else:
        rows = [evolve_density(state, t, grid) for t in times]
    info = {"N": state.N, "K_max": state.K_max, "D": state.D, "defect": state.defect}
    info.update(meta or {})
    return Carpet(grid, times, np.array(rows), info)


# -- relative depths ---------------------------------------------------------


def sigma(p: int) -> int:
    """Sign factor: -1 for right movers, (-1)^(|p| mod 2 + 1) for left movers."""
    if p == 0:
        raise DomainError("p must be nonzero")
    if p > 0:
        return -1
    return (-1) ** (abs(p) % 2 + 1)


def contribution_depth_direct(state: SpectralState, p: int, tol: Optional[float] = None) -> float:
    """sigma(p) (1/N) sum_n w_n sum_k lam(n,k) lam(n,k+|p|)."""
    s = sigma(p)
    q = abs(p)
    if q >= state.K_max:
        raise DomainError("|p| must be smaller than K_max")
    _check_defect(state, state.trunc_tol if tol is None else tol, "contribution_depth_direct")
    per_orbital = np.einsum("nk,nk->n", state.lam[:, :-q], state.lam[:, q:])
    return s * float(state.weights @ per_orbital) / state.N


def _sinc(x):
    # unnormalized sin(x)/x
    return np.sinc(np.asarray(x) / np.pi)


def contribution_depth_sinc(D: float, p: int) -> float:
    """Large-N law sigma(p) sin(D|p|pi)/(D|p|pi)."""
    if not 0 < D <= L:
        raise DomainError("sub-box length must lie in (0, L]")
    return sigma(p) * float(_sinc(D * abs(p) * math.pi / L))


def cosine_transform(density, grid: SpaceGrid, q: float) -> float:
    """int_0^L n(x) cos(q x) dx by trapezoidal quadrature."""
    return float(grid.integrate(np.asarray(density) * np.cos(q * grid.x)))


def contribution_depth_fourier(density, grid: SpaceGrid, p: int) -> float:
    """sigma(p) (1/N) int n(x,0) cos(|p| pi x / L) dx for an initial density."""
    s = sigma(p)
    N = float(grid.integrate(density))
    return s * cosine_transform(density, grid, abs(p) * math.pi / L) / N


def per_orbital_depth(D: float, n: int, p: int) -> float:
    """Depth contributed by sub-box orbital n (closed-form cosine transform)."""
    a = 2 * n * math.pi
    b = D * abs(p) * math.pi / L
    # sin(b) = sin(b - a) since a is a multiple of 2 pi; this form is exact at
    # the removable singularity D |p| = 2 n L (value -sigma / 2) and accurate near it
    delta = b - a
    return -sigma(p) * float(_sinc(delta)) * a * a / (b * (a + b))


def depth_report(state: SpectralState, p: int, grid: SpaceGrid, D: Optional[float] = None) -> DepthReport:
    """All three depth routes for one p; the Fourier route uses the exact n(x,0)."""
    D = state.D if D is None else D
    if D is None:
        raise DomainError("depth_report needs the sub-box length D")
    per = None
    if state.D is not None:
        per = np.array([per_orbital_depth(D, n, p) for n in range(1, state.n_orb + 1)])
    return DepthReport(
        p=p,
        d_direct=contribution_depth_direct(state, p),
        d_sinc=contribution_depth_sinc(D, p),
        d_fourier=contribution_depth_fourier(initial_density(state, grid), grid, p),
        per_orbital=per,
        defect=state.defect,
    )


# -- Thomas-Fermi and WKB ----------------------------------------------------


def _potential_on(v, x):
    if callable(v):
        return np.asarray(v(x), dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != x.shape:
        raise DomainError("sampled potential must match the x array")
    return v


def _tf_density(v, mu):
    arg = np.clip(mu - v, 0.0, None)
    return np.sqrt(2.0 * arg) / math.pi


def _invert_count(v, x, target, rtol, max_iter=400):
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        raise DomainError("potential is infinite everywhere")
    lo = float(finite.min())
    hi = lo + 1.0
    count = lambda mu: float(np.trapezoid(_tf_density(v, mu), x))
    for _ in range(max_iter):
        if count(hi) >= target:
            break
        hi = lo + 2 * (hi - lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if abs(c - target) <= rtol * target:
            return mid
        if c < target:
            lo = mid
        else:
            hi = mid
    raise NumericError("Thomas-Fermi normalization did not converge", best=mid)


def thomas_fermi_mu(v, x, N: float, rtol: float = 1e-10):
    """Chemical potential and LDA density for N fermions in potential v(x).

    ``v`` is a callable or an array sampled on ``x`` (use ``inf`` for hard
    walls).  Returns ``(mu, density)``.
    """
    if N < 1:
        raise DomainError("N must be at least 1")
    x = np.asarray(x, dtype=float)
    vv = _potential_on(v, x)
    mu = _invert_count(vv, x, float(N), rtol)
    return mu, _tf_density(vv, mu)


def wkb_spectrum(v, x, n_max: int, C: float = 0.0, rtol: float = 1e-10) -> np.ndarray:
    """Semiclassical levels E_1..E_n_max from n + C = (1/pi) int sqrt(2 (E - v)) dx.

    This is the Thomas-Fermi normalization with N replaced by n + C, so
    E_n(n) traces the same curve as mu(N).
    """
    x = np.asarray(x, dtype=float)
    vv = _potential_on(v, x)
    return np.array([_invert_count(vv, x, n + C, rtol) for n in range(1, n_max + 1)])


def harmonic_orbitals(omega: float, center: float, n_orb: int, x) -> np.ndarray:
    """Hermite functions of omega^2 (x - center)^2 / 2, rows n = 0..n_orb-1."""
    xi = (np.asarray(x, dtype=float) - center) * math.sqrt(omega)
    out = np.empty((n_orb, xi.size))
    out[0] = (omega / math.pi) ** 0.25 * np.exp(-0.5 * xi * xi)
    if n_orb > 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for n in range(1, n_orb - 1):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * xi * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def subbox_orbitals(D: float, n_orb: int, x, offset: float = 0.0) -> np.ndarray:
    """Sine orbitals of the box [offset, offset + D] sampled on x, zero outside."""
    x = np.asarray(x, dtype=float)
    n = np.arange(1, n_orb + 1)[:, None]
    inside = (x >= offset) & (x <= offset + D)
    vals = math.sqrt(2.0 / D) * np.sin(n * math.pi * (x[None, :] - offset) / D)
    vals = np.where(inside[None, :], vals, 0.0)
    # exact nodes at the sub-box walls
    edge = np.isclose(x, offset) | np.isclose(x, offset + D)
    vals[:, edge] = 0.0
    return vals


def spectral_state(trap: TrapSpec, N: int, T: float = 0.0, K_max: Optional[int] = None, **kw) -> SpectralState:
    """Build the spectral state for a box-type trap at temperature T (units of T_F)."""
    from .core import SubBox, SubBox3D, occupancy

    if not isinstance(trap, (SubBox, SubBox3D)):
        raise DomainError("spectral_state supports SubBox and SubBox3D traps")
    occ = occupancy(trap, N, T)
    # drop negligible thermal tails
    w = occ.as_array()
    cut = w.max() * 1e-14
    n_orb = int(np.nonzero(w > cut)[0].max()) + 1
    return overlaps_subbox(trap.D, n_orb, K_max, occupancy=occ, **kw)


def harmonic_state(trap, N: int, grid: Optional[SpaceGrid] = None, K_max: Optional[int] = None) -> SpectralState:
    """Zero-temperature state released from a harmonic trap, projected on the box modes.

    Orbitals are sampled on ``grid`` (default 8192 intervals); the trap must
    confine the cloud well inside the box or the orthonormality check fails.
    """
    from .core import cloud_fits

    if not cloud_fits(trap, N):
        raise DomainError(f"a cloud of {N} atoms in {trap!r} does not fit in the box")
    grid = grid or SpaceGrid(8192)
    phi = harmonic_orbitals(trap.omega, trap.center, N, grid.x)
    phi[:, [0, -1]] = 0.0
    return overlaps_numeric(phi, grid, K_max=K_max or grid.max_mode, orth_tol=1e-6)
