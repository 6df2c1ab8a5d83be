import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from chiral_pl.core import (
    AcquisitionMeta,
    BiexpFitResult,
    DecayHistogram,
    FieldGeometry,
    IrfModel,
    Polarization,
    SpinModelParams,
    initial_phase,
    transverse_field,
    unit_vector,
)

angles = st.floats(-360, 360, allow_nan=False)
polar = st.floats(0, 180, allow_nan=False)


def axis_at(tilt, azimuth):
    return tuple(unit_vector(tilt, azimuth).tolist())


def test_parallel_field_has_no_transverse_part():
    g = FieldGeometry(250.0, 30.0, 70.0, axis_at(30.0, 70.0))
    assert transverse_field(g) == pytest.approx(0.0, abs=1e-6)


def test_perpendicular_field_is_fully_transverse():
    g = FieldGeometry(100.0, 90.0, 0.0, (0.0, 0.0, 1.0))
    assert transverse_field(g) == pytest.approx(100.0, rel=1e-12)


def test_280_gauss_at_45_degrees():
    g = FieldGeometry(280.0, 45.0, 0.0, (0.0, 0.0, 1.0))
    assert g.alpha == pytest.approx(45.0)
    assert transverse_field(g) == pytest.approx(280 / math.sqrt(2), abs=5e-4)
    assert round(transverse_field(g), 3) == 197.990


@given(
    st.floats(0, 2000, allow_nan=False),
    polar,
    angles,
    polar,
    angles,
    st.integers(0, 2**32 - 1),
)
def test_transverse_field_rotation_invariant(mag, th, ph, tilt, az, seed):
    n = unit_vector(tilt, az)
    b = unit_vector(th, ph)
    rot = Rotation.random(random_state=seed)
    rn, rb = rot.apply(n), rot.apply(b)
    rn /= np.linalg.norm(rn)
    rth = math.degrees(math.atan2(math.hypot(rb[0], rb[1]), rb[2]))
    rph = math.degrees(math.atan2(rb[1], rb[0]))
    before = transverse_field(FieldGeometry(mag, th, ph, tuple(n)))
    after = transverse_field(FieldGeometry(mag, rth, rph, tuple(rn)))
    assert after == pytest.approx(before, abs=1e-10 * max(mag, 1.0))


@given(st.floats(0, 1e4, allow_nan=False), polar, angles, polar, angles)
def test_transverse_field_bounded_by_magnitude(mag, th, ph, tilt, az):
    g = FieldGeometry(mag, th, ph, axis_at(tilt, az))
    bt = transverse_field(g)
    assert 0.0 <= bt <= mag


@given(polar, angles)
def test_field_direction_is_unit(th, ph):
    assert np.linalg.norm(FieldGeometry(1.0, th, ph).direction) == pytest.approx(1.0, abs=1e-12)


def test_initial_phase_convention():
    assert initial_phase(Polarization.RCP) == 0.0
    assert initial_phase("LCP") == pytest.approx(math.pi / 2)
    assert initial_phase("LCP") - initial_phase("RCP") == pytest.approx(math.pi / 2, abs=1e-15)
    assert AcquisitionMeta(polarization="LCP").phi0 == initial_phase(Polarization.LCP)
    assert Polarization.RCP.swapped() is Polarization.LCP


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(magnitude=-1.0),
        dict(magnitude=math.inf),
        dict(magnitude=1.0, chiral_axis=(1.0, 1.0, 0.0)),
        dict(magnitude=1.0, chiral_axis=(0.0, 1.0)),
        dict(magnitude=1.0, theta=math.nan),
    ],
)
def test_field_geometry_validation(kwargs):
    with pytest.raises(ValueError):
        FieldGeometry(**kwargs)


def test_chiral_axis_norm_tolerance():
    FieldGeometry(1.0, chiral_axis=(0.0, 0.0, 1.0 + 5e-13))
    with pytest.raises(ValueError):
        FieldGeometry(1.0, chiral_axis=(0.0, 0.0, 1.0 + 1e-10))


def test_histogram_invariants():
    h = DecayHistogram(0.5, 1.0, [1, 2, 3])
    assert h.total == 6
    assert h.n_bins == 3
    np.testing.assert_allclose(h.centers, [1.25, 1.75, 2.25])
    np.testing.assert_allclose(h.edges, [1.0, 1.5, 2.0, 2.5])
    assert not h.counts.flags.writeable
    for bad in ([1], [1, -1], [1.5, 2.0]):
        with pytest.raises(ValueError):
            DecayHistogram(0.5, 0.0, bad)
    with pytest.raises(ValueError):
        DecayHistogram(0.0, 0.0, [1, 2])
    assert (h + h).total == 12
    with pytest.raises(ValueError):
        h + DecayHistogram(0.25, 1.0, [1, 2, 3])


def test_spin_params_defaults_and_validation():
    p = SpinModelParams()
    assert p.sigma_tau == 1.0
    assert p.horizon_ns == pytest.approx(200.0)
    assert p.n_bins == 2000
    m = p.mirrored()
    assert (m.tau_up_mean, m.tau_down_mean) == (p.tau_down_mean, p.tau_up_mean)
    for bad in (dict(tau_up_mean=0.0), dict(sigma_tau=-1.0), dict(gamma=0.0), dict(dt=0.2, bin_width=0.1), dict(n0=1.5)):
        with pytest.raises(ValueError):
            SpinModelParams(**bad)


def test_irf_and_fit_result_validation():
    with pytest.raises(ValueError):
        IrfModel(s=0.0)
    irf = IrfModel(0.5, 5.0)
    cov = np.diag([1.0, 1.0, 0.09, 0.01, 1.0])
    r = BiexpFitResult(1.0, 2.0, 20.0, 3.0, 0.0, irf, cov, 1.0, True)
    assert r.tau1_err == pytest.approx(0.3)
    with pytest.raises(ValueError):
        BiexpFitResult(1.0, 2.0, 3.0, 20.0, 0.0, irf, cov, 1.0, True)


def test_transverse_field_accurate_near_axis():
    for th in (1e-3, 1e-5, 1e-7):
        g = FieldGeometry(100.0, th, 30.0, (0.0, 0.0, 1.0))
        assert transverse_field(g) == pytest.approx(100.0 * math.sin(math.radians(th)), rel=1e-12)
