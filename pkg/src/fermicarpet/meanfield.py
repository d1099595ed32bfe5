"""Split-operator time-dependent Hartree-Fock for two repulsive components.

Each component is a set of orbitals on the interior nodes of a hard-wall
grid.  The kinetic propagator is applied exactly in the sine eigenbasis of
the box (type-I DST), the contact mean field g n_other as a pure phase kick.
Because a phase kick does not change densities, the Strang step

    kick(dt/2) -> kinetic(dt) -> kick(dt/2)

is exactly reversible, and consecutive half kicks can be fused inside ``run``.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft
from scipy.stats import skew

from .core import L, TREV, SpaceGrid, box_energy
from .errors import DomainError, InsufficientDataError, PropagationDiverged, StabilityWarning, ValidationError
from .idealgas import Carpet

DEFAULT_DX_POINTS = 400  # dx = 0.0025 L
DEFAULT_DT = 1e-7


@dataclass(frozen=True)
class MeanFieldState:
    """Orbitals of both components on the interior grid nodes.

    ``plus`` and ``minus`` have shape (N/2, n_points - 1); the wall values are
    zero by construction and not stored.
    """

    plus: np.ndarray
    minus: np.ndarray
    t: float
    g: float
    grid: SpaceGrid

    @property
    def n_half(self) -> int:
        return self.plus.shape[0]

    @property
    def N(self) -> int:
        return self.plus.shape[0] + self.minus.shape[0]

    def component(self, which: str) -> np.ndarray:
        if which in ("plus", "+"):
            return self.plus
        if which in ("minus", "-"):
            return self.minus
        raise DomainError(f"unknown component {which!r}")

    def full(self, which: str = "plus") -> np.ndarray:
        """Orbitals on all grid nodes including the zero wall values."""
        amp = self.component(which)
        out = np.zeros((amp.shape[0], self.grid.n_points + 1), dtype=complex)
        out[:, 1:-1] = amp
        return out

    def density(self, which: str = "plus") -> np.ndarray:
        amp = self.component(which)
        out = np.zeros(self.grid.n_points + 1)
        out[1:-1] = (amp.real**2 + amp.imag**2).sum(axis=0)
        return out

    def norms(self) -> np.ndarray:
        """Per-orbital norms, plus component first."""
        both = np.concatenate([self.plus, self.minus])
        return (both.real**2 + both.imag**2).sum(axis=1) * self.grid.dx


@dataclass
class ConservationLog:
    times: list = field(default_factory=list)
    norm: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    interaction: list = field(default_factory=list)

    def record(self, t, norm, kin, inter):
        self.times.append(t)
        self.norm.append(norm)
        self.kinetic.append(kin)
        self.interaction.append(inter)
        self.energy.append(kin + inter)

    @property
    def norm_drift(self) -> float:
        """max |N(t) - N(0)| / N(0)."""
        n = np.asarray(self.norm)
        return float(np.max(np.abs(n - n[0])) / n[0])

    @property
    def energy_drift(self) -> float:
        e = np.asarray(self.energy)
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))


@dataclass
class KineticSeries:
    """Per-orbital kinetic energies: ``values[n, i]`` at ``times[i]``."""

    times: np.ndarray
    values: np.ndarray
    component: str = "plus"


@dataclass
class RunResult:
    state: MeanFieldState
    carpets: dict
    log: ConservationLog
    kinetic: dict
    error: Optional[PropagationDiverged] = None


def init_separated(N: int, grid: Optional[SpaceGrid] = None, g: float = 0.0) -> MeanFieldState:
    """Lowest N/2 modes of [0, L/2] for plus and of [L/2, L] for minus."""
    grid = grid or SpaceGrid(DEFAULT_DX_POINTS)
    if int(N) != N or N < 2 or N % 2:
        raise DomainError(f"N must be a positive even integer, got {N}")
    if grid.n_points % 2:
        raise DomainError("grid needs an even number of intervals so L/2 is a node")
    half = N // 2
    if half > grid.n_points / 8:
        raise DomainError(f"N/2 = {half} exceeds n_points/8 = {grid.n_points / 8:.0f}")
    x = grid.interior
    n = np.arange(1, half + 1)[:, None]
    D = L / 2
    left = x <= D
    plus = np.where(left[None, :], math.sqrt(2 / D) * np.sin(n * math.pi * x[None, :] / D), 0.0)
    right = x >= D
    minus = np.where(right[None, :], math.sqrt(2 / D) * np.sin(n * math.pi * (x[None, :] - D) / D), 0.0)
    mid = np.isclose(x, D)
    plus[:, mid] = 0.0
    minus[:, mid] = 0.0
    return MeanFieldState(plus.astype(complex), minus.astype(complex), 0.0, float(g), grid)


class _Propagator:
    """Precomputed kinetic phases for one grid and step."""

    def __init__(self, grid: SpaceGrid, dt: float):
        self.grid = grid
        self.dt = dt
        self.energies = box_energy(np.arange(1, grid.n_points))
        self.kin_phase = np.exp(-1j * self.energies * dt)

    def kinetic(self, amp: np.ndarray) -> np.ndarray:
        c = sfft.dst(amp, type=1, norm="ortho", axis=-1)
        c *= self.kin_phase
        return sfft.dst(c, type=1, norm="ortho", axis=-1, overwrite_x=True)


# splitting error grows with dt times the largest occupied energy scale
STEP_WARN = 0.1


def _check_step(state: MeanFieldState, dt: float) -> None:
    kin = max(kinetic_energies(state.plus, state.grid).max(), kinetic_energies(state.minus, state.grid).max())
    field_ = state.g * max(_dens(state.plus).max(), _dens(state.minus).max())
    scale = abs(dt) * (kin + field_)
    if scale > STEP_WARN:
        warnings.warn(
            f"dt * (occupied kinetic + mean field) = {scale:.3f} > {STEP_WARN}; expect splitting heating",
            StabilityWarning,
            stacklevel=3,
        )


def _dens(amp):
    return (amp.real**2 + amp.imag**2).sum(axis=0)


def _kick(plus, minus, g, tau):
    """Apply exp(-i g n_other tau) to both components (densities unchanged)."""
    if g == 0:
        return plus, minus
    n_p, n_m = _dens(plus), _dens(minus)
    return plus * np.exp(-1j * g * tau * n_m), minus * np.exp(-1j * g * tau * n_p)


def step(state: MeanFieldState, dt: float, _prop: Optional[_Propagator] = None) -> MeanFieldState:
    """One Strang split step of length dt (negative dt runs backwards)."""
    if dt == 0:
        raise DomainError("dt must be nonzero")
    if _prop is None:
        _check_step(state, dt)
    prop = _prop or _Propagator(state.grid, dt)
    plus, minus = _kick(state.plus, state.minus, state.g, dt / 2)
    plus, minus = prop.kinetic(plus), prop.kinetic(minus)
    plus, minus = _kick(plus, minus, state.g, dt / 2)
    if not (np.isfinite(plus).all() and np.isfinite(minus).all()):
        raise PropagationDiverged("non-finite amplitudes", last_stable_time=state.t)
    return replace(state, plus=plus, minus=minus, t=state.t + dt)


def kinetic_energies(amp: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Per-orbital kinetic energy int |d phi|^2 / 2 via the sine spectrum."""
    c = sfft.dst(amp, type=1, norm="ortho", axis=-1)
    e = box_energy(np.arange(1, grid.n_points))
    return ((c.real**2 + c.imag**2) @ e) * grid.dx


def energy(state: MeanFieldState) -> tuple[float, float]:
    """(kinetic, interaction) with interaction g int n+ n- dx."""
    kin = kinetic_energies(state.plus, state.grid).sum() + kinetic_energies(state.minus, state.grid).sum()
    inter = state.g * float(np.sum(_dens(state.plus) * _dens(state.minus))) * state.grid.dx
    return float(kin), inter


def run(
    state: MeanFieldState,
    t_end: float,
    dt: float = DEFAULT_DT,
    sample_every: int = 1000,
    on_sample: Optional[Callable[[MeanFieldState], None]] = None,
    keep_carpets: bool = True,
    horizon: float = 50 * TREV,
) -> RunResult:
    """Propagate to ``t_end`` sampling every ``sample_every`` steps.

    Samples densities, conservation quantities and per-orbital kinetic
    energies.  ``on_sample`` is called with the state at each sample (t = 0
    included).  Divergence raises PropagationDiverged whose ``partial``
    attribute holds the RunResult up to the last stable sample.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    if t_end - state.t > horizon:
        raise DomainError(f"run length exceeds the configured horizon {horizon}")
    n_steps = int(round((t_end - state.t) / dt))
    if n_steps % sample_every:
        raise DomainError(f"sample_every={sample_every} does not divide the {n_steps} steps")
    _check_step(state, dt)
    prop = _Propagator(state.grid, dt)
    grid = state.grid
    log = ConservationLog()
    times, dens_p, dens_m, kin_p, kin_m = [], [], [], [], []

    def sample(s: MeanFieldState):
        kp = kinetic_energies(s.plus, grid)
        km = kinetic_energies(s.minus, grid)
        inter = s.g * float(np.sum(_dens(s.plus) * _dens(s.minus))) * grid.dx
        log.record(s.t, float(s.norms().sum()), float(kp.sum() + km.sum()), inter)
        times.append(s.t)
        kin_p.append(kp)
        kin_m.append(km)
        if keep_carpets:
            dens_p.append(s.density("plus"))
            dens_m.append(s.density("minus"))
        if on_sample is not None:
            on_sample(s)

    def result(s, err=None):
        t_arr = np.asarray(times)
        carpets = {}
        if keep_carpets:
            meta = {"N": s.n_half, "g": s.g, "dt": dt}
            carpets = {
                "plus": Carpet(grid, t_arr, np.array(dens_p), dict(meta)),
                "minus": Carpet(grid, t_arr, np.array(dens_m), dict(meta)),
            }
        kin = {
            "plus": KineticSeries(t_arr, np.array(kin_p).T, "plus"),
            "minus": KineticSeries(t_arr, np.array(kin_m).T, "minus"),
        }
        return RunResult(s, carpets, log, kin, err)

    sample(state)
    plus, minus, g = state.plus.copy(), state.minus.copy(), state.g
    t0 = state.t
    last = state
    for block in range(n_steps // sample_every):
        # leading half kick, then fused full kicks between kinetic steps
        plus, minus = _kick(plus, minus, g, dt / 2)
        for i in range(sample_every):
            plus = prop.kinetic(plus)
            minus = prop.kinetic(minus)
            tau = dt if i < sample_every - 1 else dt / 2
            plus, minus = _kick(plus, minus, g, tau)
        t = t0 + (block + 1) * sample_every * dt
        if not (np.isfinite(plus).all() and np.isfinite(minus).all()):
            err = PropagationDiverged("non-finite amplitudes", last_stable_time=last.t)
            err.partial = result(last, err)
            raise err
        last = MeanFieldState(plus.copy(), minus.copy(), t, g, grid)
        sample(last)
    return result(last)


def kinetic_stats(series: KineticSeries, window: tuple) -> tuple[float, float, float]:
    """Mean, variance and sample skewness of T_n(t) pooled over orbitals and window."""
    t0, t1 = window
    sel = (series.times >= t0) & (series.times <= t1)
    if sel.sum() < 10:
        raise InsufficientDataError(f"only {int(sel.sum())} samples in window {window}; need 10")
    pooled = series.values[:, sel].ravel()
    return float(pooled.mean()), float(pooled.var()), float(skew(pooled))


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"FCTDHF\x00\x01"
_HEADER = struct.Struct("<8sIIIIddd16x")  # 64 bytes


def save_checkpoint(state: MeanFieldState, path) -> None:
    """Little-endian binary snapshot: 64-byte header then (re, im) float64 pairs.

    Header: magic[8], version u32, n_points u32, N u32, reserved u32,
    g f64, t f64, L f64, 16 bytes padding.  Amplitudes follow row-major,
    plus orbitals then minus orbitals, interior nodes only.
    """
    header = _HEADER.pack(_MAGIC, 1, state.grid.n_points, state.N, 0, state.g, state.t, L)
    body = np.concatenate([state.plus, state.minus]).astype("<c16")
    from .io import atomic_write_bytes

    atomic_write_bytes(path, header + body.tobytes())


def load_checkpoint(path) -> MeanFieldState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, n_points, N, _, g, t, _L = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValidationError(f"{path}: not a TDHF checkpoint")
    expected = _HEADER.size + N * (n_points - 1) * 16
    if len(raw) != expected:
        raise ValidationError(f"{path}: size {len(raw)} does not match header ({expected})")
    amp = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(N, n_points - 1)
    half = N // 2
    return MeanFieldState(amp[:half].copy(), amp[half:].copy(), t, g, SpaceGrid(n_points))
