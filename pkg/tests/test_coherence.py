import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermicarpet.coherence import (
    RIDGE_SPEED, CoherenceRecorder, CoherenceTrace, coherence_measure, decoherence_time, fit_linear, fit_power_law,
    fit_saturation, g1_from_orbitals, g1_map, spike_mask, vertex_path,
)
from fermicarpet.core import L, TREV, V0, SpaceGrid
from fermicarpet.errors import (
    CoverageWarning, DomainError, InsufficientDataError, NotEquilibratedError,
)
from fermicarpet.idealgas import orbitals_at, overlaps_numeric
from fermicarpet.meanfield import init_separated, run
from fermicarpet.structures import GENERIC_TIME

G400 = SpaceGrid(400)


def random_orbitals(rng, r, grid, n_modes=64):
    """r orthonormal complex orbitals built from the lowest box modes."""
    a = rng.normal(size=(n_modes, r)) + 1j * rng.normal(size=(n_modes, r))
    q, _ = np.linalg.qr(a)
    k = np.arange(1, n_modes + 1)
    modes = np.sqrt(2) * np.sin(np.pi * np.outer(k, grid.x))
    return q.T @ modes


def test_single_orbital_unit_modulus():
    phi = np.sqrt(2) * np.sin(3 * np.pi * G400.x)[None, :] * np.exp(0.7j)
    cm = g1_from_orbitals(phi, G400)
    m = cm.modulus[np.ix_(cm.mask, cm.mask)]
    np.testing.assert_allclose(m, 1.0, atol=1e-12)
    # nodes of sin(3 pi x) and the walls are masked
    assert not cm.mask[0] and not cm.mask[-1]


def test_separated_state_matches_half_box_sum():
    s = init_separated(24, G400)
    cm = g1_map(s, "plus")
    x = G400.x
    left = (x > 0) & (x < 0.5)
    assert np.array_equal(cm.mask, left)
    n = np.arange(1, 13)[:, None]
    phi = 2 * np.sin(2 * n * np.pi * x[None, :])
    rho = phi.T @ phi
    d = np.sqrt(np.diag(rho))
    expected = rho[np.ix_(left, left)] / np.outer(d[left], d[left])
    np.testing.assert_allclose(cm.values[np.ix_(left, left)].real, expected, atol=1e-12)
    assert np.all(cm.values[np.ix_(left, ~left)] == 0)


def test_g1_shape_check():
    with pytest.raises(DomainError):
        g1_from_orbitals(np.ones((2, 10)), G400)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(r=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_g1_hermitian_bounded_rank_property(r, seed):
    grid = SpaceGrid(128)
    phi = random_orbitals(np.random.default_rng(seed), r, grid, n_modes=32)
    cm = g1_from_orbitals(phi, grid)
    v = cm.values[np.ix_(cm.mask, cm.mask)]
    np.testing.assert_allclose(v, v.conj().T, atol=1e-12)
    np.testing.assert_array_equal(np.diagonal(v), 1.0)
    assert np.abs(v).max() <= 1 + 1e-8
    sv = np.linalg.svd(v, compute_uv=False)
    assert np.all(sv[r:] < 1e-8 * sv[0])
    assert sv[r - 1] > 1e-8 * sv[0]


def test_vertex_path_examples():
    assert vertex_path(0.0) == 0.0
    assert vertex_path(TREV / 4) == pytest.approx(L / 2)
    assert vertex_path(TREV / 2) == pytest.approx(L)
    eps = 1e-9
    assert vertex_path(TREV / 2 - eps) == pytest.approx(L, abs=1e-8)
    assert vertex_path(TREV / 2 + eps) == pytest.approx(L, abs=1e-8)
    assert vertex_path(TREV) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(vertex_path(np.array([0.1, 0.3]) * TREV, RIDGE_SPEED), [0.4, 0.8])
    with pytest.raises(DomainError):
        vertex_path(-1.0)


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(t=st.floats(0.0, 10.0), speed=st.floats(0.1, 10.0))
def test_vertex_path_triangle_property(t, speed):
    u = vertex_path(t, speed)
    assert 0 <= u <= L
    h = 1e-7
    # Lipschitz with constant speed
    assert abs(vertex_path(t + h, speed) - u) <= speed * h * (1 + 1e-6) + 1e-12
    period = 2 * L / speed
    assert vertex_path(t + period, speed) == pytest.approx(u, abs=1e-9 * (1 + t * speed))


def _free_release_map(N, t):
    s = init_separated(N, G400)
    spec = overlaps_numeric(np.real(s.full("plus")), G400, K_max=G400.max_mode)
    return g1_from_orbitals(orbitals_at(spec, t, G400), G400, t)


def test_free_release_coherence_generic_time():
    res = coherence_measure(_free_release_map(96, GENERIC_TIME * TREV))
    assert res.G == pytest.approx(2 / math.pi, rel=0.05)
    assert res.skipped < 0.1


def test_initial_map_spike():
    # at t = 0 the path runs along the diagonal, where |g1| = 1
    s = init_separated(24, G400)
    with pytest.warns(CoverageWarning):
        res = coherence_measure(g1_map(s), t=0.0)
    assert res.G == pytest.approx(1.0, abs=1e-12)


def test_random_state_floor_decreases_with_N():
    rng = np.random.default_rng(11)
    grid = SpaceGrid(256)
    floors = []
    for r in (4, 16, 48):
        vals = [coherence_measure(g1_from_orbitals(random_orbitals(rng, r, grid, 96), grid), u0=0.37).G
                for _ in range(5)]
        floors.append(np.mean(vals))
    assert floors[0] > floors[1] > floors[2]


def test_recorder_matches_direct_measure():
    s = init_separated(12, G400, g=16.0)
    rec = CoherenceRecorder()
    res = run(s, 400 * 1e-6, dt=1e-6, sample_every=100, on_sample=rec, keep_carpets=False)
    tr = rec.trace()
    assert len(tr.times) == 5
    assert tr.G[-1] == pytest.approx(coherence_measure(g1_map(res.state)).G, rel=1e-14)


def _trace(times, G):
    return CoherenceTrace(np.asarray(times), np.asarray(G), np.zeros(len(times)))


def test_spike_mask():
    t = np.array([0.0, 0.1, 0.49, 0.5, 0.515, 0.75])
    np.testing.assert_array_equal(spike_mask(t, 0.5, 0.02), [True, False, True, True, True, False])
    assert not spike_mask(t, None, 0.02).any()


def test_t_dec_synthetic_exponential():
    tau, G0, G_inf = 0.05, 0.64, 0.2
    t = np.linspace(0, 1.5, 601)
    G = G_inf + (G0 - G_inf) * np.exp(-t / tau)
    tr = _trace(t, G)
    td = decoherence_time(tr, spike_period=None)
    assert abs(td - tau * math.log(10)) <= t[1] - t[0]
    assert tr.G_inf == pytest.approx(G_inf, abs=1e-9)
    assert tr.t_dec == td


def test_t_dec_constant_is_infinite():
    t = np.linspace(0, 1.5, 301)
    G = 2 / math.pi + 0.002 * np.sin(40 * t)
    assert decoherence_time(_trace(t, G)) == math.inf


def test_t_dec_no_plateau():
    t = np.linspace(0, 1.5, 301)
    with pytest.raises(NotEquilibratedError) as info:
        decoherence_time(_trace(t, 0.64 - 0.3 * t), spike_period=None)
    assert info.value.trace is not None


def test_t_dec_insufficient():
    with pytest.raises(InsufficientDataError):
        decoherence_time(_trace(np.linspace(0, 1, 5), np.ones(5)))


def test_fit_power_law_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    f = fit_power_law(x, 3 * x**2)
    assert f.exponent == pytest.approx(2.0, abs=1e-12)
    assert f.prefactor == pytest.approx(3.0, rel=1e-12)
    assert f.r2 == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        fit_power_law(x, [1.0, -1.0, 2.0, 3.0])
    with pytest.raises(InsufficientDataError):
        fit_power_law([1.0, 2.0], [1.0, 2.0])


def test_fit_linear():
    f = fit_linear([0, 1, 2, 3], [1, 3, 5, 7])
    assert (f.slope, f.intercept) == pytest.approx((2.0, 1.0))


def test_fit_saturation_exact():
    N = np.array([6.0, 12.0, 24.0, 48.0, 96.0])
    f = fit_saturation(N, 1 - np.exp(-0.1 * N))
    assert f.A == pytest.approx(1.0, abs=1e-6)
    assert f.c == pytest.approx(0.1, abs=1e-6)
    assert not f.boundary


def test_fit_saturation_constant_is_boundary():
    f = fit_saturation([6.0, 12.0, 24.0, 48.0], [0.3] * 4)
    assert f.boundary
    assert f.A == pytest.approx(0.3, rel=1e-6)
    with pytest.raises(InsufficientDataError):
        fit_saturation([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        fit_saturation([1.0, 2.0, 3.0, 4.0], [1.0, math.inf, 3.0, 4.0])
