"""Acceptance criteria, one test each, run at the stated tolerances.

Each test prints a single PASS/FAIL line (also collected in the terminal
summary).  Long TDHF runs are marked ``slow`` but run by default.  Checks
labelled extended scale run only with FERMICARPET_EXTENDED=1.
"""
import math
import os
import subprocess
import sys
import time
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from fermicarpet.coherence import CoherenceRecorder, coherence_measure, decoherence_time, fit_power_law, g1_from_orbitals
from fermicarpet.core import TREV, Harmonic, SpaceGrid, SubBox
from fermicarpet.idealgas import (
    contribution_depth_direct, depth_report, evolve_density, harmonic_state, orbitals_at, overlaps_numeric,
    overlaps_subbox,
)
from fermicarpet.meanfield import init_separated, kinetic_stats, run
from fermicarpet.structures import GENERIC_TIME, W0, fine_grid_for, structure_snapshot, temperature_width_scan

EXTENDED = os.environ.get("FERMICARPET_EXTENDED") == "1"
extended = pytest.mark.skipif(not EXTENDED, reason="extended scale; set FERMICARPET_EXTENDED=1")
TWO_OVER_PI = 2 / math.pi
SAMPLE_TREV = 0.004  # coherence / kinetic sampling interval in units of Trev


def tdhf(per, g, dt, t_end_trev, sample_trev=SAMPLE_TREV, keep_carpets=False, n_points=400):
    """Run the separated release; the step count is rounded up to whole sampling blocks."""
    state = init_separated(2 * per, SpaceGrid(n_points), g=g)
    every = max(1, int(round(sample_trev * TREV / dt)))
    n_steps = int(math.ceil(t_end_trev * TREV / dt / every)) * every
    rec = CoherenceRecorder()
    res = run(state, n_steps * dt, dt=dt, sample_every=every, on_sample=rec, keep_carpets=keep_carpets)
    return res, rec.trace()


# -- ideal gas --------------------------------------------------------------------


def test_criterion_01_depth_routes(report):
    t0 = time.perf_counter()
    state = overlaps_subbox(0.5, 100, K_max=4000)
    grid = fine_grid_for(state)
    worst, where = 0.0, None
    for p in [p for p in range(-8, 9) if p]:
        r = depth_report(state, p, grid)
        for name, gap in (("direct-sinc", abs(r.d_direct - r.d_sinc)), ("direct-fourier", abs(r.d_direct - r.d_fourier)),
                          ("sinc-fourier", abs(r.d_sinc - r.d_fourier))):
            if gap > worst:
                worst, where = gap, (p, name)
    d1 = contribution_depth_direct(state, 1)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and abs(abs(d1) - TWO_OVER_PI) <= 1e-3 and elapsed < 10
    report(1, "depth routes agree", ok,
           f"max pairwise gap {worst:.2e} (p={where[0]}, {where[1]}) vs 1e-3; |d_1|-2/pi = {abs(d1) - TWO_OVER_PI:+.1e}; "
           f"{elapsed:.1f} s")


def test_criterion_02_revival_mirror(report):
    t0 = time.perf_counter()
    state = overlaps_subbox(0.5, 100)
    grid = fine_grid_for(state)
    n0 = evolve_density(state, 0.0, grid)
    scale = n0.max()
    rev = np.abs(evolve_density(state, TREV, grid) - n0).max() / scale
    mir = np.abs(evolve_density(state, TREV / 2, grid) - n0[::-1]).max() / scale
    elapsed = time.perf_counter() - t0
    report(2, "exact revival and mirror", rev <= 1e-10 and mir <= 1e-10 and elapsed < 10,
           f"revival {rev:.1e}, mirror {mir:.1e} (relative to max n); {elapsed:.1f} s")


def test_criterion_03_width_law(report):
    t0 = time.perf_counter()
    vals = {}
    for N in (50, 100, 200):
        state = overlaps_subbox(0.5, N)
        smp = structure_snapshot(state, 1, GENERIC_TIME * TREV, fine_grid_for(state, 16384))
        vals[N] = smp.width * 2 * math.pi * N / 0.5
    elapsed = time.perf_counter() - t0
    ok = all(abs(v / W0 - 1) <= 0.05 for v in vals.values()) and elapsed < 60
    detail = ", ".join(f"N={N}: {v:.3f}" for N, v in vals.items())
    report(3, "width law FWHM*2kF = w0 +- 5%", ok, f"{detail} (w0 = {W0}); {elapsed:.1f} s")


def test_criterion_04_harmonic_contrast(report):
    t0 = time.perf_counter()
    Ns = [25, 50, 100, 200, 400]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d1 = [abs(contribution_depth_direct(harmonic_state(Harmonic(1e4, 0.3), N), 1)) for N in Ns]
    fit = fit_power_law(Ns, d1)
    elapsed = time.perf_counter() - t0
    ok = abs(fit.exponent + 0.5) <= 0.1 and elapsed < 120
    report(4, "harmonic |d_1| ~ N^-1/2", ok,
           f"exponent {fit.exponent:.3f} (target -0.5 +- 0.1), |d_1| from {d1[0]:.3f} to {d1[-1]:.3f}; {elapsed:.1f} s")


def test_criterion_05_temperature(report):
    t0 = time.perf_counter()
    rows = temperature_width_scan(SubBox(0.5), 100, [4.0])
    cold, hot = rows[0], rows[-1]
    shift = abs(hot.d_direct - cold.d_direct)
    elapsed = time.perf_counter() - t0
    ok = shift <= 1e-3 and 0.5 <= hot.ratio <= 0.85 and elapsed < 120
    report(5, "T = 4 T_F depth unchanged, thinner", ok,
           f"d_1 shift {shift:.1e} (<= 1e-3), FWHM ratio {hot.ratio:.3f} (in [0.5, 0.85]); "
           f"measured peak-depth shift {abs(hot.depth - cold.depth):.1e}; {elapsed:.1f} s")


# -- mean field --------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_06_conservation(report):
    t0 = time.perf_counter()
    res, _ = tdhf(12, 16.0, 1e-6, 0.15, sample_trev=0.005)
    elapsed = time.perf_counter() - t0
    dn, de = res.log.norm_drift, res.log.energy_drift
    ok = dn < 1e-7 and de < 1e-4 and elapsed < 1800
    report(6, "TDHF conservation at dt = 1e-6", ok,
           f"dN/N {dn:.1e} (< 1e-7), dE/E {de:.1e} (< 1e-4), t_end {res.state.t / TREV:.4f} Trev; {elapsed:.0f} s")


@pytest.mark.slow
@extended
def test_criterion_06_extended_small_step(report):
    res, _ = tdhf(12, 16.0, 1e-7, 0.15, sample_trev=0.005)
    dn, de = res.log.norm_drift, res.log.energy_drift
    report(6, "extended: conservation at dt = 1e-7", dn < 1e-8 and de < 1e-5, f"dN/N {dn:.1e}, dE/E {de:.1e}")


@pytest.mark.slow
def test_criterion_07_g0_oracle(report):
    t0 = time.perf_counter()
    res, _ = tdhf(12, 0.0, 1e-6, 0.15, sample_trev=0.005, keep_carpets=True)
    init = init_separated(24, SpaceGrid(400))
    worst = 0.0
    for comp in ("plus", "minus"):
        spec = overlaps_numeric(np.real(init.full(comp)), init.grid, K_max=init.grid.max_mode)
        carpet = res.carpets[comp]
        for t, row in zip(carpet.times, carpet.density):
            worst = max(worst, float(np.abs(row - evolve_density(spec, t, init.grid)).max()))
    elapsed = time.perf_counter() - t0
    report(7, "g = 0 TDHF equals spectral density", worst <= 1e-6 and elapsed < 600,
           f"sup |n_tdhf - n_spectral| = {worst:.1e} over {len(res.carpets['plus'].times)} samples; {elapsed:.0f} s")


@lru_cache(maxsize=None)
def lifetime_run(per, g, dt, t_end_trev):
    res, trace = tdhf(per, g, dt, t_end_trev)
    return res, trace, decoherence_time(trace)


@pytest.mark.slow
def test_criterion_08_lifetime_monotone(report):
    t0 = time.perf_counter()
    gs = (8.0, 16.0, 32.0)
    t_dec = [lifetime_run(6, g, 1e-5, 1.125)[2] / TREV for g in gs]
    elapsed = time.perf_counter() - t0
    ok = all(np.isfinite(t_dec)) and all(b < a for a, b in zip(t_dec, t_dec[1:]))
    fit = fit_power_law(gs, t_dec) if all(np.isfinite(t_dec)) else None
    detail = ", ".join(f"g={g:g}: {v:.4f}" for g, v in zip(gs, t_dec))
    exp = f"; 6+6 exponent {fit.exponent:.2f}" if fit else ""
    report(8, "t_dec strictly decreasing in g (N = 6+6)", ok, f"t_dec/Trev {detail}{exp}; {elapsed:.0f} s")


@pytest.mark.slow
@extended
def test_criterion_08_extended_exponent(report):
    gs = (8.0, 16.0, 24.0, 32.0)
    t_dec = [lifetime_run(12, g, 2e-6, 1.125)[2] for g in gs]
    fit = fit_power_law(gs, t_dec)
    report(8, "extended: t_dec ~ g^(-1.2 +- 0.4), N = 12+12", abs(fit.exponent + 1.2) <= 0.4,
           f"exponent {fit.exponent:.2f}, r2 {fit.r2:.3f}")


def test_criterion_09_coherence_constant(report):
    t0 = time.perf_counter()
    grid = SpaceGrid(400)
    init = init_separated(96, grid)
    # exact g = 0 evolution (criterion 7 ties the TDHF propagator to it)
    spec = overlaps_numeric(np.real(init.full("plus")), grid, K_max=grid.max_mode)
    times = np.linspace(0, 1, 401)[1:-1]
    half = np.mod(times, 0.5)
    times = times[np.minimum(half, 0.5 - half) > 0.02]
    G = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for f in times:
            cm = g1_from_orbitals(orbitals_at(spec, f * TREV, grid), grid, f * TREV)
            G.append(coherence_measure(cm).G)
    G = np.array(G)
    dev = np.abs(G / TWO_OVER_PI - 1)
    elapsed = time.perf_counter() - t0
    bad = times[dev > 0.05]
    report(9, "g = 0 coherence within 5% of 2/pi", bool(dev.max() <= 0.05),
           f"median G {np.median(G):.4f}, worst deviation {dev.max():.1%} at t = {times[np.argmax(dev)]:.4f} Trev, "
           f"{len(bad)}/{len(times)} samples outside; {elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_10_equilibrium_statistics(report):
    t0 = time.perf_counter()
    stats = {}
    for per in (6, 12, 24):
        res, trace, td = lifetime_run(per, 32.0, 2e-6, 0.6)
        ks = res.kinetic["plus"]
        stats[per] = kinetic_stats(ks, (td, ks.times[-1])) + (td / TREV, res.log.energy_drift)
    pers = sorted(stats)
    fit_mu = fit_power_law(pers, [stats[n][0] for n in pers])
    fit_var = fit_power_law(pers, [stats[n][1] for n in pers])
    skew12 = stats[12][2]
    elapsed = time.perf_counter() - t0
    ok = skew12 > 0 and abs(fit_mu.exponent - 2.0) <= 0.2
    detail = "; ".join(f"N/2={n}: t_dec {s[3]:.3f} Trev, mu {s[0]:.4g}, skew {s[2]:.3f}, dE/E {s[4]:.1e}"
                       for n, s in stats.items())
    report(10, "equilibrium statistics at g = 32", ok,
           f"skew(12+12) {skew12:.3f} (> 0), mu_T slope {fit_mu.exponent:.3f} (2.0 +- 0.2); "
           f"variance slope {fit_var.exponent:.2f} (extended band [3.0, 4.3], not asserted); {detail}; {elapsed:.0f} s")


def test_criterion_11_property_suites(report):
    t0 = time.perf_counter()
    tests = Path(__file__).parent
    files = [str(tests / f) for f in ("test_core.py", "test_idealgas.py", "test_structures.py", "test_meanfield.py",
                                      "test_coherence.py", "test_cli.py")]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", "property", *files],
                          capture_output=True, text=True, cwd=tests.parent)
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    report(11, "property suites, 1000 derandomized cases each", proc.returncode == 0 and elapsed < 300,
           f"{summary}; {elapsed:.0f} s")
