"""Units, grids, the hard-wall box eigenbasis and Fermi-sea occupancies.

Everything is in natural units hbar = m = 1 with the release box of length
L = 1.  Energies are in hbar^2/(m L^2), times in m L^2/hbar.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericError, ResourceError, TruncationWarning

L = 1.0
V0 = math.pi / 2  # characteristic velocity of the box
TREV = 4 / math.pi  # revival time, 2 L / v0


def box_energy(k):
    """Eigenenergy k^2 pi^2 / 2 of the k-th box mode (array friendly)."""
    k = np.asarray(k, dtype=float)
    return k * k * (math.pi**2 / 2)


def box_mode_value(k: int, x):
    """Value of the normalized box mode sqrt(2) sin(k pi x) at ``x``."""
    if int(k) != k or k <= 0:
        raise DomainError(f"mode index must be a positive integer, got {k!r}")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > L):
        raise DomainError("position outside [0, L]")
    val = math.sqrt(2.0) * np.sin(k * math.pi * xa)
    # exact nodes at the walls
    val = np.where((xa == 0) | (xa == L), 0.0, val)
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class SpaceGrid:
    """Node-based grid on [0, L] with ``n_points`` intervals.

    The nodes include both walls, so there are ``n_points + 1`` samples and
    ``n_points - 1`` interior ones.  Quadrature is trapezoidal.
    """

    n_points: int = 400

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 16:
            raise DomainError("SpaceGrid needs an integer n_points >= 16")

    @property
    def dx(self) -> float:
        return L / self.n_points

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_points + 1) * self.dx

    @property
    def interior(self) -> np.ndarray:
        return self.x[1:-1]

    @property
    def max_mode(self) -> int:
        """Highest box mode the grid represents without aliasing."""
        return self.n_points - 1

    def integrate(self, f, axis=-1):
        f = np.asarray(f)
        if f.shape[axis] != self.n_points + 1:
            raise DomainError("array length does not match the grid")
        return np.trapezoid(f, dx=self.dx, axis=axis)


# -- traps ------------------------------------------------------------------


@dataclass(frozen=True)
class SubBox:
    """Initial hard-wall box [0, D] sharing the left wall with the release box."""

    D: float

    def __post_init__(self):
        if not 0 < self.D <= L:
            raise DomainError(f"sub-box length must lie in (0, L], got {self.D}")


@dataclass(frozen=True)
class Harmonic:
    """Initial harmonic trap omega^2 (x - center)^2 / 2."""

    omega: float
    center: float = 0.5

    def __post_init__(self):
        if self.omega <= 0:
            raise DomainError("harmonic frequency must be positive")
        if not 0 < self.center < L:
            raise DomainError("trap center must lie inside the box")


@dataclass(frozen=True)
class BoxBox:
    Dy: float
    Dz: float

    def __post_init__(self):
        if self.Dy <= 0 or self.Dz <= 0:
            raise DomainError("perpendicular box lengths must be positive")


@dataclass(frozen=True)
class HarmBox:
    omega_y: float
    Dz: float

    def __post_init__(self):
        if self.omega_y <= 0 or self.Dz <= 0:
            raise DomainError("need omega_y > 0 and Dz > 0")


@dataclass(frozen=True)
class HarmHarm:
    omega_y: float
    omega_z: float

    def __post_init__(self):
        if self.omega_y <= 0 or self.omega_z <= 0:
            raise DomainError("perpendicular frequencies must be positive")


PerpTrap = Union[BoxBox, HarmBox, HarmHarm]


@dataclass(frozen=True)
class SubBox3D:
    """Box of length D along x with one of three perpendicular confinements."""

    D: float
    perp: PerpTrap

    def __post_init__(self):
        if not 0 < self.D <= L:
            raise DomainError(f"sub-box length must lie in (0, L], got {self.D}")


TrapSpec = Union[SubBox, Harmonic, SubBox3D]


def cloud_fits(trap: TrapSpec, N: float) -> bool:
    """True when the classical turning points at the Fermi energy lie in [0, L]."""
    if isinstance(trap, (SubBox, SubBox3D)):
        return trap.D <= L
    if isinstance(trap, Harmonic):
        # Thomas-Fermi: mu = N omega, turning radius sqrt(2 mu) / omega
        radius = math.sqrt(2.0 * N / trap.omega)
        return trap.center - radius >= 0 and trap.center + radius <= L
    raise DomainError(f"unsupported trap {trap!r}")


# -- spectra and occupancies --------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    """Single-particle levels labelled by the longitudinal quantum number.

    ``energy[i]`` is the total energy of level ``i``, ``mult[i]`` how many
    states share it and ``n_x[i]`` the longitudinal index those states carry.
    Levels are sorted by energy, ties by ``n_x``.
    """

    n_x: np.ndarray
    energy: np.ndarray
    mult: np.ndarray

    def __post_init__(self):
        order = np.lexsort((self.n_x, self.energy))
        object.__setattr__(self, "n_x", np.asarray(self.n_x, dtype=int)[order])
        object.__setattr__(self, "energy", np.asarray(self.energy, dtype=float)[order])
        object.__setattr__(self, "mult", np.asarray(self.mult, dtype=float)[order])

    @property
    def n_states(self) -> float:
        return float(self.mult.sum())


@dataclass(frozen=True)
class Occupancy:
    """Weights per longitudinal quantum number n_x (1-based)."""

    weights: Mapping[int, float]
    N: float
    T: float = 0.0
    mu: float = 0.0
    fermi_energy: float = field(default=0.0, compare=False)

    def as_array(self, n_max: int | None = None) -> np.ndarray:
        """Dense weight vector indexed by n_x - 1."""
        top = max(self.weights) if self.weights else 0
        n_max = top if n_max is None else n_max
        out = np.zeros(n_max)
        for n, w in self.weights.items():
            if n <= n_max:
                out[n - 1] = w
        return out

    @property
    def n_max(self) -> int:
        return max((n for n, w in self.weights.items() if w > 0), default=0)


def spectrum_1d(D: float = 1.0, n_max: int = 100) -> Spectrum:
    """Levels of a 1D box of length D, n = 1..n_max."""
    n = np.arange(1, n_max + 1)
    return Spectrum(n, box_energy(n) / D**2, np.ones(n_max))


def _perp_levels(perp: PerpTrap, e_max: float):
    """Perpendicular energies (one entry per state) up to e_max."""
    if isinstance(perp, BoxBox):
        ey = box_energy(np.arange(1, int(perp.Dy * math.sqrt(2 * e_max) / math.pi) + 2)) / perp.Dy**2
        ez = box_energy(np.arange(1, int(perp.Dz * math.sqrt(2 * e_max) / math.pi) + 2)) / perp.Dz**2
    elif isinstance(perp, HarmBox):
        ey = perp.omega_y * (np.arange(0, int(e_max / perp.omega_y) + 2) + 0.5)
        ez = box_energy(np.arange(1, int(perp.Dz * math.sqrt(2 * e_max) / math.pi) + 2)) / perp.Dz**2
    elif isinstance(perp, HarmHarm):
        ey = perp.omega_y * (np.arange(0, int(e_max / perp.omega_y) + 2) + 0.5)
        ez = perp.omega_z * (np.arange(0, int(e_max / perp.omega_z) + 2) + 0.5)
    else:
        raise DomainError(f"unsupported perpendicular trap {perp!r}")
    e = (ey[:, None] + ez[None, :]).ravel()
    return np.sort(e[e <= e_max])


def spectrum_3d(trap: SubBox3D, e_max: float, max_states: int = 5_000_000) -> Spectrum:
    """All (n_x, perpendicular) states of a SubBox3D trap with energy <= e_max.

    Every perpendicular state is kept as its own level with multiplicity one,
    so degeneracies show up as repeated energies.
    """
    if not isinstance(trap, SubBox3D):
        raise DomainError("spectrum_3d needs a SubBox3D trap")
    nx_max = int(trap.D * math.sqrt(2 * e_max) / math.pi)
    if nx_max < 1:
        return Spectrum(np.array([], int), np.array([]), np.array([]))
    nx = np.arange(1, nx_max + 1)
    ex = box_energy(nx) / trap.D**2
    ep = _perp_levels(trap.perp, e_max - ex[0])
    if ep.size * nx.size > max_states:
        raise ResourceError(
            f"state enumeration would exceed the cap of {max_states} "
            f"({ep.size} perpendicular x {nx.size} longitudinal levels)"
        )
    tot = ex[:, None] + ep[None, :]
    ii, _ = np.nonzero(tot <= e_max)
    e = tot[tot <= e_max]
    return Spectrum(nx[ii], e, np.ones(e.size))


def _fill_zero_temperature(spectrum: Spectrum, N: int):
    """Lowest-energy filling; ties at E_F go to the lowest n_x first."""
    cum = np.cumsum(spectrum.mult)
    if cum.size == 0 or cum[-1] < N:
        raise DomainError(f"spectrum holds {cum[-1] if cum.size else 0} states, need {N}")
    last = int(np.searchsorted(cum, N - 0.5))
    e_f = float(spectrum.energy[last])
    taken = np.zeros_like(spectrum.mult)
    below = spectrum.energy < e_f * (1 - 1e-12) if e_f > 0 else spectrum.energy < e_f - 1e-12
    taken[below] = spectrum.mult[below]
    remaining = N - taken.sum()
    # spectrum is sorted by (energy, n_x), so ties come in n_x order
    for i in np.nonzero(~below & np.isclose(spectrum.energy, e_f, rtol=1e-12, atol=0))[0]:
        take = min(spectrum.mult[i], remaining)
        taken[i] = take
        remaining -= take
        if remaining <= 0:
            break
    return taken, e_f


def _aggregate(spectrum: Spectrum, w: np.ndarray) -> dict:
    out: dict[int, float] = {}
    for n, wi in zip(spectrum.n_x, w):
        if wi > 0:
            out[int(n)] = out.get(int(n), 0.0) + float(wi)
    return dict(sorted(out.items()))


def fermi_sea_1d(N: int, D: float = 1.0) -> Occupancy:
    """Single Slater determinant: orbitals 1..N each singly occupied."""
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    mu = float(box_energy(N)) / D**2
    return Occupancy({n: 1.0 for n in range(1, int(N) + 1)}, N=float(N), T=0.0, mu=mu, fermi_energy=mu)


def fermi_sea_3d(trap: SubBox3D, N: int, max_states: int = 5_000_000) -> Occupancy:
    """Zero-temperature multiplicities per n_x for a SubBox3D trap."""
    if not isinstance(trap, SubBox3D):
        raise DomainError("fermi_sea_3d needs a SubBox3D trap")
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    # continuum estimate of E_F as a starting cap, doubled until enough states
    e_cap = 0.5 * (_continuum_kf(trap, N) ** 2) * 1.5 + _zero_point(trap.perp) + box_energy(1) / trap.D**2
    while True:
        spec = spectrum_3d(trap, e_cap, max_states=max_states)
        if spec.n_states >= N:
            break
        e_cap *= 2
    taken, e_f = _fill_zero_temperature(spec, int(N))
    return Occupancy(_aggregate(spec, taken), N=float(N), T=0.0, mu=e_f, fermi_energy=e_f)


def _zero_point(perp: PerpTrap) -> float:
    if isinstance(perp, BoxBox):
        return float(box_energy(1)) * (1 / perp.Dy**2 + 1 / perp.Dz**2)
    if isinstance(perp, HarmBox):
        return perp.omega_y / 2 + float(box_energy(1)) / perp.Dz**2
    return (perp.omega_y + perp.omega_z) / 2


def _continuum_kf(trap: SubBox3D, N: float) -> float:
    # continuum state counting; only used to size the enumeration
    p = trap.perp
    if isinstance(p, BoxBox):
        return (6 * math.pi**2 * N / (trap.D * p.Dy * p.Dz)) ** (1 / 3)
    if isinstance(p, HarmBox):
        return (16 * math.pi * p.omega_y * N / (trap.D * p.Dz)) ** 0.25
    return (15 * math.pi * p.omega_y * p.omega_z * N / trap.D) ** 0.2


def fermi_dirac_occupancy(
    spectrum: Spectrum,
    N: float,
    T: float,
    *,
    rtol: float = 1e-12,
    max_iter: int = 200,
) -> Occupancy:
    """Fermi-Dirac weights per n_x with T in units of T_F.

    T_F is the Fermi energy of the zero-temperature filling of the same
    spectrum.  The chemical potential is found by bisection on the particle
    number.
    """
    if T < 0:
        raise DomainError("temperature must be nonnegative")
    if N < 1:
        raise DomainError("N must be at least 1")
    taken, e_f = _fill_zero_temperature(spectrum, int(round(N)))
    if T == 0:
        return Occupancy(_aggregate(spectrum, taken), N=float(N), T=0.0, mu=e_f, fermi_energy=e_f)

    kt = T * e_f
    E, g = spectrum.energy, spectrum.mult

    def count(mu):
        with np.errstate(over="ignore"):
            return float(np.sum(g * expit((mu - E) / kt)))

    # bracket steps never smaller than a fraction of E_F, so tiny T still converges
    step0 = max(kt, 1e-3 * abs(e_f), 1e-300)
    lo, hi = E[0] - step0, E[0] + step0
    step = step0
    for _ in range(max_iter):
        if count(lo) < N:
            break
        lo -= step
        step *= 2
    step = step0
    for _ in range(max_iter):
        if count(hi) > N:
            break
        hi += step
        step *= 2
    else:
        raise NumericError("spectrum too short to hold N particles at this temperature")

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if abs(c - N) <= rtol * N:
            break
        if c < N:
            lo = mid
        else:
            hi = mid
    else:
        raise NumericError(f"chemical potential did not converge in {max_iter} steps", best=mid)

    with np.errstate(over="ignore"):
        f = expit((mid - E) / kt)
    if f[-1] > 1e-12:
        warnings.warn(
            f"top level of the spectrum still has occupation {f[-1]:.2e}; extend the spectrum",
            TruncationWarning,
            stacklevel=2,
        )
    return Occupancy(_aggregate(spectrum, g * f), N=float(N), T=float(T), mu=mid, fermi_energy=e_f)


def thermal_spectrum(trap: TrapSpec, N: int, T: float, max_states: int = 5_000_000) -> Spectrum:
    """A spectrum long enough that Fermi-Dirac tails at temperature T are negligible."""
    if isinstance(trap, SubBox):
        e_f = float(box_energy(N)) / trap.D**2
        e_cut = 2 * e_f + 40 * T * e_f
        n_max = int(trap.D * math.sqrt(2 * e_cut) / math.pi) + 1
        return spectrum_1d(trap.D, max(n_max, int(N)))
    if isinstance(trap, SubBox3D):
        e_f = fermi_sea_3d(trap, N, max_states=max_states).fermi_energy
        return spectrum_3d(trap, 2 * e_f + 40 * T * e_f, max_states=max_states)
    raise DomainError(f"no discrete spectrum for {trap!r}")


def occupancy(trap: TrapSpec, N: int, T: float = 0.0) -> Occupancy:
    """Convenience: zero or finite temperature occupancy for a box-type trap."""
    if T == 0:
        if isinstance(trap, SubBox):
            return fermi_sea_1d(N, trap.D)
        if isinstance(trap, SubBox3D):
            return fermi_sea_3d(trap, N)
    return fermi_dirac_occupancy(thermal_spectrum(trap, N, T), N, T)
