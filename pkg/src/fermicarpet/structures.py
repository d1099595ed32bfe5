"""Solitonlike structures: tracking, depths, widths and the sinc shape model."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .core import L, TREV, V0, BoxBox, HarmBox, HarmHarm, SpaceGrid, SubBox, SubBox3D, TrapSpec
from .errors import DomainError, PoorFitWarning
from .idealgas import Carpet, contribution_depth_direct, evolve_density, sigma, spectral_state

W0 = 3.79098  # full width at half maximum of sinc(u), in units of u
# Irrational fraction of the revival time: at rational fractions several
# structures overlap and the measured depth/width mixes contributions.
GENERIC_TIME = (math.sqrt(5) - 1) / 8


def predicted_position(p: int, t: float) -> tuple[float, int]:
    """Peak of the p-th contribution folded into [0, L], with travel direction.

    Right movers start at the left wall, left movers at the right wall; wall
    bounces are handled by the triangle map of period 2L.
    """
    start = 0.0 if p > 0 else L
    y = float(np.mod(start + p * V0 * t, 2 * L))
    s = 1 if p > 0 else -1
    if y <= L:
        return y, s
    return 2 * L - y, -s


@dataclass
class StructureSample:
    t: float
    position: float
    depth: float
    width: float
    found: bool = True


@dataclass
class StructureTrack:
    p: int
    samples: list = field(default_factory=list)
    velocity_fit: float = float("nan")

    @property
    def found(self):
        return [s for s in self.samples if s.found]

    def depths(self) -> np.ndarray:
        return np.array([s.depth for s in self.found])

    def widths(self) -> np.ndarray:
        return np.array([s.width for s in self.found])


@dataclass(frozen=True)
class WidthModel:
    eta: float
    kF: float

    @property
    def width(self) -> float:
        return W0 / (self.eta * self.kF)


def measure_fwhm(x: np.ndarray, dev: np.ndarray, i_peak: int, max_cells: Optional[int] = None) -> float:
    """Full width at half depth around ``i_peak`` by linear interpolation.

    Uses the two half-depth crossings nearest to the peak; returns nan when a
    crossing is not met within ``max_cells``.
    """
    s = math.copysign(1.0, dev[i_peak])
    half = 0.5 * s * dev[i_peak]
    y = s * dev
    n = len(y)
    limit = n if max_cells is None else max_cells
    edges = []
    for direction in (-1, 1):
        i = i_peak
        while 0 <= i + direction < n and abs(i + direction - i_peak) <= limit:
            j = i + direction
            if y[j] < half:
                frac = (y[i] - half) / (y[i] - y[j])
                edges.append(x[i] + frac * (x[j] - x[i]))
                break
            i = j
        else:
            return float("nan")
    return float(abs(edges[1] - edges[0]))


def _refine_peak(x, y, i):
    """Sub-cell extremum position from a parabola through three points."""
    if 0 < i < len(y) - 1:
        a, b, c = y[i - 1], y[i], y[i + 1]
        denom = a - 2 * b + c
        if denom != 0:
            shift = 0.5 * (a - c) / denom
            if abs(shift) <= 1:
                return x[i] + shift * (x[1] - x[0])
    return x[i]


def expected_sign(p: int, D: Optional[float]) -> int:
    """Sign of the density deviation at the p-th peak (canal < 0, ridge > 0)."""
    s = sigma(p)
    if D is not None:
        sn = math.sin(D * abs(p) * math.pi / L)
        if sn != 0:
            s *= 1 if sn > 0 else -1
    return s


def measure_structure(
    x: np.ndarray,
    density: np.ndarray,
    x0: float,
    sign: int,
    n_mean: float,
    window: int = 5,
    max_cells: Optional[int] = None,
) -> StructureSample:
    """Depth and FWHM of the structure nearest the predicted position x0."""
    dx = x[1] - x[0]
    i0 = int(round((x0 - x[0]) / dx))
    lo, hi = max(i0 - window, 0), min(i0 + window, len(x) - 1)
    dev = density - n_mean
    seg = sign * dev[lo : hi + 1]
    i = lo + int(np.argmax(seg))
    if sign * dev[i] <= 0:
        return StructureSample(float("nan"), x0, float("nan"), float("nan"), found=False)
    width = measure_fwhm(x, dev, i, max_cells)
    pos = _refine_peak(x, sign * dev, i)
    return StructureSample(float("nan"), float(pos), float(dev[i] / n_mean), width)


def track_structure(
    carpet: Carpet,
    p: int,
    window: int = 5,
    sign: Optional[int] = None,
    max_cells: Optional[int] = None,
) -> StructureTrack:
    """Follow the p-th structure through the carpet rows.

    Background is the mean density N/L.  Samples whose predicted peak lies
    closer to a wall than ``window`` cells are recorded as not found.
    """
    x = carpet.grid.x
    N = carpet.meta.get("N") or float(np.mean(carpet.norms()))
    n_mean = N / L
    if sign is None:
        sign = expected_sign(p, carpet.meta.get("D"))
    track = StructureTrack(p)
    unfolded_t, unfolded_x = [], []
    for t, row in zip(carpet.times, carpet.density):
        x0, direction = predicted_position(p, t)
        if x0 < (window + 1) * carpet.grid.dx or x0 > L - (window + 1) * carpet.grid.dx:
            track.samples.append(StructureSample(float(t), x0, float("nan"), float("nan"), found=False))
            continue
        smp = measure_structure(x, row, x0, sign, n_mean, window, max_cells)
        smp.t = float(t)
        track.samples.append(smp)
        if smp.found:
            start = 0.0 if p > 0 else L
            unfolded_t.append(t)
            unfolded_x.append(start + p * V0 * t + direction * (smp.position - x0))
    if len(unfolded_t) >= 2:
        track.velocity_fit = float(np.polyfit(unfolded_t, unfolded_x, 1)[0])
    return track


def sinc_profile(x_p, d_p: float, kF: float, eta: float, n_mean: float = 1.0):
    """Model deviation n_mean d_p sinc(eta kF x_p) near a structure peak."""
    u = eta * kF * np.asarray(x_p, dtype=float)
    return n_mean * d_p * np.sinc(u / np.pi)


def fermi_wavevector(trap: TrapSpec, N: float) -> float:
    """Initial Fermi wavevector for the supported trap families."""
    if isinstance(trap, SubBox):
        return math.pi * N / trap.D
    if isinstance(trap, SubBox3D):
        p, D = trap.perp, trap.D
        if isinstance(p, BoxBox):
            return (0.75 * math.pi**2 * N / (D * p.Dy * p.Dz)) ** (1 / 3)
        if isinstance(p, HarmBox):
            return (16 * math.pi * p.omega_y * N / (D * p.Dz)) ** 0.25
        if isinstance(p, HarmHarm):
            return (15 * math.pi * p.omega_y * p.omega_z * N / D) ** 0.2
    raise DomainError(f"no Fermi wavevector formula for {trap!r}")


def lagrange_sum(N: int, x_p, D: float):
    """Closed form of sum_{n=1}^{N} cos(2 n pi x_p / D)."""
    u = np.asarray(x_p, dtype=float) / D
    eps = u - np.round(u)  # the kernel is periodic in u with period 1
    with np.errstate(invalid="ignore", divide="ignore"):
        val = -0.5 + np.sin((2 * N + 1) * np.pi * eps) / (2 * np.sin(np.pi * eps))
    # second-order Taylor series near the peak, where the ratio underflows
    taylor = N - 2 * np.pi**2 * eps**2 * N * (N + 1) * (2 * N + 1) / 6
    val = np.where(np.abs(eps) < 1e-7, taylor, val)
    return float(val) if np.ndim(val) == 0 else val


def lagrange_sinc_approx(N: int, x_p, D: float):
    """Large-N approximation N sinc(2 kF x_p) with kF = pi N / D."""
    kF = math.pi * N / D
    return N * np.sinc(2 * kF * np.asarray(x_p, dtype=float) / np.pi)


@dataclass(frozen=True)
class EtaFit:
    eta: float
    amplitude: float
    residual: float
    n_points: int


def fit_eta(x_p: np.ndarray, deviation: np.ndarray, kF: float, eta0: Optional[float] = None) -> EtaFit:
    """Least-squares fit of A sinc(eta kF x_p) inside |x_p| <= pi / (eta kF).

    ``x_p`` are offsets from the peak, ``deviation`` the density minus the
    background.  The validity window follows the current eta estimate.
    """
    x_p = np.asarray(x_p, dtype=float)
    dev = np.asarray(deviation, dtype=float)
    i_pk = int(np.argmin(np.abs(x_p)))
    amp0 = float(dev[i_pk])
    if eta0 is None:
        w = measure_fwhm(x_p, dev, i_pk)
        eta0 = W0 / (w * kF) if np.isfinite(w) and w > 0 else 2.0
    eta, amp = eta0, amp0
    for _ in range(4):
        sel = np.abs(x_p) <= math.pi / (eta * kF)
        if sel.sum() < 4:
            break
        res = least_squares(
            lambda q: q[0] * np.sinc(q[1] * kF * x_p[sel] / np.pi) - dev[sel],
            x0=[amp, eta],
            bounds=([-np.inf, 1e-6], [np.inf, np.inf]),
        )
        amp, new_eta = res.x
        if abs(new_eta - eta) < 1e-10 * eta:
            eta = new_eta
            break
        eta = new_eta
    sel = np.abs(x_p) <= math.pi / (eta * kF)
    resid = float(np.sqrt(np.mean((amp * np.sinc(eta * kF * x_p[sel] / np.pi) - dev[sel]) ** 2)) / abs(amp))
    if resid > 0.2:
        warnings.warn(f"sinc fit residual {resid:.2f} exceeds 20% of the depth", PoorFitWarning, stacklevel=2)
    return EtaFit(float(eta), float(amp), resid, int(sel.sum()))


def fine_grid_for(state, min_points: int = 4096) -> SpaceGrid:
    """Smallest power-of-two grid that represents every retained mode."""
    M = max(min_points, 1 << int(math.ceil(math.log2(state.K_max + 2))))
    return SpaceGrid(M)


@dataclass
class WidthRow:
    T: float
    mu: float
    depth: float
    d_direct: float
    width: float
    ratio: float
    censored: bool = False


def structure_snapshot(state, p: int, t: float, grid: Optional[SpaceGrid] = None, window: int = 5):
    """Measure the p-th structure of a spectral state at a single time."""
    grid = grid or fine_grid_for(state)
    dens = evolve_density(state, t, grid)
    x0, _ = predicted_position(p, t)
    smp = measure_structure(grid.x, dens, x0, expected_sign(p, state.D), state.N / L, window)
    smp.t = t
    return smp


def temperature_width_scan(
    trap: TrapSpec,
    N: int,
    temperatures: Sequence[float],
    p: int = 1,
    t: Optional[float] = None,
    K_max: Optional[int] = None,
) -> list:
    """FWHM and depth of the p-th structure versus temperature (units of T_F).

    Each temperature gets its own Fermi-Dirac occupancy; the structure is
    measured on the exact density at time ``t``.  Ratios are relative to the
    T = 0 width.
    """
    if any(T < 0 for T in temperatures):
        raise DomainError("temperatures must be nonnegative")
    if t is None:
        t = GENERIC_TIME * TREV / abs(p)
    temps = sorted(set([0.0, *temperatures]))
    rows = {}
    for T in temps:
        state = spectral_state(trap, N, T, K_max=K_max)
        smp = structure_snapshot(state, p, t)
        censored = not smp.found or not np.isfinite(smp.width)
        mu = state.occupancy.mu if state.occupancy is not None else float("nan")
        rows[T] = WidthRow(T, mu, smp.depth, contribution_depth_direct(state, p), smp.width, float("nan"), censored)
    w0 = rows[0.0].width
    for r in rows.values():
        r.ratio = r.width / w0 if not r.censored else float("nan")
    return [rows[T] for T in temps if T in set(temperatures) or T == 0.0]
