import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from oracles import rate_integral_quad

from chiral_pl.core import FieldGeometry, IrfModel, Polarization, SpinModelParams
from chiral_pl.reconvolution import FitConfig, extract_long_lifetime, fit_biexp_irf
from chiral_pl.simulator import (
    SimRun,
    SimulationGuardError,
    choose_dt,
    expected_counts,
    expected_decay,
    larmor_frequency,
    occupancy,
    sample_lifetime,
    simulate_decay,
    simulate_with_irf,
    survival,
)

# field along z, chiral axis along x: the whole field is transverse
PERP_AXIS = (1.0, 0.0, 0.0)


def perp_geom(bt):
    return FieldGeometry(bt, 0.0, 0.0, PERP_AXIS)


# -- occupancy / Larmor frequency ------------------------------------------------


@pytest.mark.parametrize(
    "phi0, omega, t, expected",
    [(0.0, 3.7, 0.0, (1.0, 0.0)), (math.pi / 2, 0.2, 0.0, (0.0, 1.0)), (0.0, math.pi / 4, 1.0, (0.5, 0.5))],
)
def test_occupancy_examples(phi0, omega, t, expected):
    up, down = occupancy(phi0, omega, t)
    assert (float(up), float(down)) == pytest.approx(expected, abs=1e-15)


@given(st.floats(0, 2 * math.pi), st.floats(0, 10), st.floats(0, 1e3))
def test_occupancy_normalized(phi0, omega, t):
    up, down = occupancy(phi0, omega, t)
    assert up + down == pytest.approx(1.0, abs=1e-12)


def test_larmor_frequency():
    assert larmor_frequency(FieldGeometry(500.0, 20.0, 10.0, tuple(FieldGeometry(1.0, 20.0, 10.0).direction)), 1e-3) == pytest.approx(0.0, abs=1e-9)
    assert larmor_frequency(perp_geom(200.0), 1e-3) == pytest.approx(0.2, rel=1e-14)
    g = FieldGeometry(150.0, 45.0, 30.0)
    assert larmor_frequency(g.with_field(300.0), 2.5e-4) == pytest.approx(2 * larmor_frequency(g, 2.5e-4), rel=1e-14)
    with pytest.raises(ValueError):
        larmor_frequency(g, 0.0)


# -- closed-form expectation ------------------------------------------------------


def test_expected_decay_matches_quadrature_example():
    p = SpinModelParams(tau_up_mean=20.0, tau_down_mean=12.0, gamma=1e-3, n0=1)
    got = expected_decay(p, perp_geom(100.0), 0.0, 10.0)
    want = math.exp(-rate_integral_quad(10.0, 20.0, 12.0, 0.1, 0.0))
    assert got == pytest.approx(want, rel=1e-9)


@given(
    st.floats(0.5, 60),
    st.floats(0.5, 60),
    st.floats(0, 2.0),
    st.sampled_from([0.0, math.pi / 2, 1.0]),
    st.floats(0, 250),
)
def test_closed_form_against_quadrature(tau_up, tau_down, omega, phi0, t):
    got = survival(t, tau_up, tau_down, omega, phi0)
    want = math.exp(-rate_integral_quad(t, tau_up, tau_down, omega, phi0))
    assert got == pytest.approx(want, rel=1e-9, abs=1e-300)


def test_zero_frequency_and_equal_lifetime_limits():
    t = np.linspace(0, 200, 401)
    p = SpinModelParams(n0=1000)
    # field parallel to the chiral axis: no precession
    g = FieldGeometry(400.0, 0.0, 0.0, (0.0, 0.0, 1.0))
    np.testing.assert_allclose(expected_decay(p, g, 0.0, t), 1000 * np.exp(-t / 20.0), rtol=1e-13)
    np.testing.assert_allclose(expected_decay(p, g, math.pi / 2, t), 1000 * np.exp(-t / 12.0), rtol=1e-13)
    # tiny but non-zero frequency approaches the same limit smoothly
    np.testing.assert_allclose(survival(t, 20.0, 12.0, 1e-12, 0.0), np.exp(-t / 20.0), rtol=1e-9)
    q = SpinModelParams(tau_up_mean=15.0, tau_down_mean=15.0, n0=1000)
    np.testing.assert_allclose(expected_decay(q, perp_geom(900.0), 0.3, t), 1000 * np.exp(-t / 15.0), rtol=1e-13)


@given(st.floats(0.5, 60), st.floats(0.5, 60), st.floats(0, 2.0), st.lists(st.floats(0, 300), min_size=1, max_size=20))
def test_phase_swap_identity(tau_up, tau_down, omega, ts):
    t = np.array(ts)
    a = survival(t, tau_up, tau_down, omega, 0.0)
    b = survival(t, tau_down, tau_up, omega, math.pi / 2)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


@given(st.floats(0.5, 50), st.floats(0.5, 50), st.floats(0, 2.0), st.sampled_from([0.0, math.pi / 2]))
def test_expected_decay_strictly_decreasing(tau_up, tau_down, omega, phi0):
    t = np.arange(0, 200, 0.01)
    n = survival(t, tau_up, tau_down, omega, phi0, n0=1e6)
    assert np.all(np.diff(n) < 0)


def test_expected_counts_without_irf_are_bin_integrals():
    p = SpinModelParams(n0=10_000)
    g = perp_geom(400.0)
    c = expected_counts(p, g, 0.0)
    assert c.sum() == pytest.approx(p.n0 - expected_decay(p, g, 0.0, p.n_bins * p.bin_width), rel=1e-12)
    assert np.all(c > 0)


def test_expected_counts_with_irf_against_quadrature():
    p = SpinModelParams(n0=1_000_000, gamma=1e-3)
    irf = IrfModel(0.5, 5.0)
    omega = 0.1
    c = expected_counts(p, perp_geom(100.0), 0.0, irf)

    def density(u):
        if u < 0:
            return 0.0
        ph = omega * u
        r = math.cos(ph) ** 2 / 20 + math.sin(ph) ** 2 / 12
        return p.n0 * r * math.exp(-rate_integral_quad(u, 20.0, 12.0, omega, 0.0))

    for i in (30, 50, 52, 80, 400, 1500, 1990):
        t = (i + 0.5) * p.bin_width
        lo, hi = max(0.0, t - irf.t0 - 10 * irf.s), t - irf.t0 + 10 * irf.s
        g = lambda u: density(u) * math.exp(-0.5 * ((t - irf.t0 - u) / irf.s) ** 2) / (irf.s * math.sqrt(2 * math.pi))
        want = quad(g, lo, hi, epsabs=0, epsrel=1e-11, limit=200)[0] * p.bin_width
        # Simpson error is largest far out on the Gaussian flank, where counts are ~0
        assert c[i] == pytest.approx(want, rel=1e-6, abs=1e-6)


# -- Monte Carlo ---------------------------------------------------------------------


def test_choose_dt_rules():
    p = SpinModelParams()
    dt = choose_dt(p, 0.0, 20.0, 12.0)
    assert dt <= 12.0 / 200
    assert p.bin_width / dt == pytest.approx(round(p.bin_width / dt), abs=1e-9)
    fast = choose_dt(p, 2.0, 20.0, 12.0)
    assert fast <= (2 * math.pi / 2.0) / 50
    assert choose_dt(SpinModelParams(dt=0.05), 5.0, 20.0, 12.0) == 0.05


def test_lifetime_truncation():
    rng = np.random.default_rng(0)
    draws = [sample_lifetime(rng, 0.2, 1.0) for _ in range(2000)]
    assert min(draws) >= 0.1
    assert sample_lifetime(rng, 7.0, 0.0) == 7.0


def test_determinism_and_seed_dependence(small_params):
    g = FieldGeometry(280.0)
    a = simulate_decay(SimRun(small_params, g, "RCP", 7))
    b = simulate_decay(SimRun(small_params, g, "RCP", 7))
    c = simulate_decay(SimRun(small_params, g, "RCP", 8))
    assert a == b
    assert not np.array_equal(a.counts, c.counts)
    irf = IrfModel(0.5, 5.0)
    assert simulate_with_irf(SimRun(small_params, g, "LCP", 3), irf) == simulate_with_irf(SimRun(small_params, g, "LCP", 3), irf)


def test_sampled_lifetimes_recorded():
    run = SimRun(SpinModelParams(n0=1000), FieldGeometry(100.0), Polarization.RCP, 11)
    h = simulate_decay(run)
    assert h.meta.extra["tau_up_ns"] == run.sampled_tau_up
    assert h.meta.extra["tau_down_ns"] == run.sampled_tau_down
    assert run.sampled_tau_up != 20.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_population_conservation(seed):
    p = SpinModelParams(n0=50_000, horizon=40.0)
    run = SimRun(p, FieldGeometry(600.0), "LCP", seed)
    h = simulate_decay(run)
    assert h.total + h.meta.extra["survivors"] == p.n0
    assert h.meta.extra["survivors"] > 0
    hi = simulate_with_irf(run, IrfModel(0.5, 5.0))
    assert hi.total + hi.meta.extra["dropped"] + hi.meta.extra["survivors"] == p.n0
    assert hi.total <= p.n0


def test_guard_rejects_coarse_step():
    p = SpinModelParams(dt=1.0, bin_width=1.0, sigma_tau=0.0)
    with pytest.raises(SimulationGuardError, match="5%"):
        simulate_decay(SimRun(p, FieldGeometry(0.0), "RCP", 0))
    # 0.5 ns at tau 12 ns is ~4%: allowed
    simulate_decay(SimRun(SpinModelParams(dt=0.5, bin_width=1.0, n0=1000), FieldGeometry(0.0), "RCP", 0))


def test_monte_carlo_within_poisson_bands():
    p = SpinModelParams(n0=1_000_000, sigma_tau=0.0, gamma=1e-3)
    g = perp_geom(100.0)
    h = simulate_decay(SimRun(p, g, "RCP", 2024))
    lam = expected_counts(p, g, 0.0)
    inside = np.abs(h.counts - lam) <= 3 * np.sqrt(lam)
    assert inside.mean() >= 0.99


def test_near_delta_irf_moves_events_at_most_one_bin(small_params):
    run = SimRun(small_params, FieldGeometry(280.0), "RCP", 5)
    plain = simulate_decay(run)
    smeared = simulate_with_irf(run, IrfModel(s=small_params.bin_width / 10, t0=0.0))
    cp = np.cumsum(plain.counts)
    cs = np.cumsum(smeared.counts)
    dropped = smeared.meta.extra["dropped"]
    assert np.all(cs[1:] >= cp[:-1] - dropped)
    assert np.all(cs[:-1] <= cp[1:])


def test_irf_delay_translates_histogram(small_params):
    run = SimRun(small_params, FieldGeometry(0.0), "RCP", 9)
    plain = simulate_decay(run)
    shifted = simulate_with_irf(run, IrfModel(s=0.01, t0=5.0))
    assert shifted.counts[:48].sum() == 0
    assert shifted.counts[50] > 0
    k = 50
    cp = np.cumsum(plain.counts)
    cs = np.cumsum(shifted.counts)[k:]
    n = cs.size
    assert np.all(cs[1:] >= cp[: n - 1] - shifted.meta.extra["dropped"])
    assert np.all(cs[:-1] <= cp[1:n])


def test_irf_width_floor(small_params):
    with pytest.raises(ValueError):
        simulate_with_irf(SimRun(small_params, FieldGeometry(0.0), "RCP", 0), IrfModel(0.001, 5.0))


def _mono_tau(h, irf):
    return extract_long_lifetime(fit_biexp_irf(h, irf, FitConfig(model="mono")))


def test_zero_field_single_exponential_lifetime():
    # 20 seeds: the 95% interval should cover the generating lifetime in most of them
    p = SpinModelParams(n0=200_000, sigma_tau=0.0)
    irf = IrfModel(0.5, 5.0)
    hits = 0
    for seed in range(20):
        tau, err = _mono_tau(simulate_with_irf(SimRun(p, FieldGeometry(0.0), "RCP", seed), irf), irf)
        hits += abs(tau - 20.0) <= 1.96 * err
    assert hits >= 16


@pytest.mark.parametrize("b", [0.0, 300.0, 900.0])
def test_equal_channels_ignore_field(b):
    p = SpinModelParams(tau_up_mean=15.0, tau_down_mean=15.0, n0=200_000, sigma_tau=0.0)
    irf = IrfModel(0.5, 5.0)
    tau, err = _mono_tau(simulate_with_irf(SimRun(p, FieldGeometry(b), "LCP", 4), irf), irf)
    assert abs(tau - 15.0) <= 3 * err
