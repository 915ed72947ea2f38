"""Metric families: derivative oracle, decay screen, geodesic escape."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aewave.metric import (MetricField, decay_check, geodesic_escape,
                           make_metric)


def test_flat_is_exactly_identity():
    m = make_metric("flat", 3, 2.0, 0.0)
    pts = np.array([[0.0, 0.0, 0.0], [1.5, -2.0, 4.0]])
    assert np.array_equal(m.entries(pts), np.broadcast_to(np.eye(3), (2, 3, 3)))
    assert np.array_equal(m.inverse(pts), np.broadcast_to(np.eye(3), (2, 3, 3)))
    assert np.array_equal(m.conformal_factor(pts), np.ones(2))


def test_radial_bump_conformal_factor_at_origin():
    # det at the origin is (1 + a)^d; g = det^(1/4) by hand
    m = make_metric("radial_bump", 3, 1.0, 0.3)
    g0 = m.conformal_factor(np.zeros((1, 3)))[0]
    assert g0 == pytest.approx((1.3**3) ** 0.25, rel=1e-14)


def test_negative_amplitude_loses_positivity():
    with pytest.raises(ValueError, match="positive definiteness"):
        make_metric("radial_bump", 3, 1.0, -1.5)


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        make_metric("saddle", 3, 1.0, 0.1)


@pytest.mark.parametrize("family,rho,amp", [
    ("radial_bump", 1.0, 0.3),
    ("radial_bump", 2.0, -0.2),
    ("anisotropic_bump", 1.5, 0.2),
])
@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivative_oracle_matches_finite_differences(family, rho, amp, order):
    m = make_metric(family, 3, rho, amp)
    x0 = np.array([[0.6, -0.35, 1.05]])
    h = 1e-5
    analytic = m.deviation_derivs(x0, order)[order][0]
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        lo = m.deviation_derivs(x0 - e, order - 1)[order - 1][0]
        hi = m.deviation_derivs(x0 + e, order - 1)[order - 1][0]
        fd = (hi - lo) / (2 * h)
        assert np.allclose(analytic[..., k], fd, atol=3e-6), \
            f"axis {k} order {order}"


def test_decay_check_flat_all_zero_consistent():
    m = make_metric("flat", 3, 2.0, 0.0)
    rep = decay_check(m, [1.0, 10.0, 100.0])
    assert rep.verdict == "pass"
    assert all(row["measured"] == 0.0 for row in rep.rows)


def test_decay_check_radial_sup_approaches_amplitude():
    # (1 + a<x>^-1 - 1) <x> -> a as |x| grows
    m = make_metric("radial_bump", 3, 1.0, 0.3)
    rep = decay_check(m, [5.0, 20.0, 100.0], alpha_max=0)
    assert rep.verdict == "pass"
    assert rep.rows[0]["measured"] == pytest.approx(0.3, rel=1e-3)


def test_decay_check_wrong_rate_inconsistent():
    m = make_metric("radial_bump", 3, 2.0, 0.3)
    good = decay_check(m, [4.0, 16.0, 64.0, 256.0])
    bad = decay_check(m, [4.0, 16.0, 64.0, 256.0], rho_override=3.0)
    assert good.verdict == "pass"
    assert bad.verdict == "fail"


@settings(max_examples=10, deadline=None)
@given(a=st.floats(min_value=-0.4, max_value=0.6),
       rho=st.floats(min_value=0.5, max_value=3.0))
def test_radial_entries_symmetric_positive(a, rho):
    m = make_metric("radial_bump", 2, rho, a)
    pts = np.array([[0.3, -1.2], [5.0, 2.0], [0.0, 0.0]])
    g = m.entries(pts)
    assert np.allclose(g, np.swapaxes(g, 1, 2))
    assert (np.linalg.eigvalsh(g) > 0).all()


def test_geodesics_flat_escape_linearly():
    m = make_metric("flat", 2, 1.0, 0.0)
    rep = geodesic_escape(m, n_rays=12, t_max=40.0, r_escape=10.0)
    assert rep.verdict == "pass"
    slowest = [r for r in rep.rows if r["quantity"] == "slowest_escape_time"]
    # straight rays at speed |xdot| = 2 sqrt(p0) = 2: time ~ r/2 plus offset
    assert slowest[0]["measured"] < 8.0


def test_geodesics_radial_bump_escape():
    m = make_metric("radial_bump", 2, 1.0, 0.3)
    rep = geodesic_escape(m, n_rays=20, t_max=80.0, r_escape=20.0)
    escaped = [r for r in rep.rows if r["quantity"] == "rays_escaped"][0]
    assert escaped["measured"] == 20
    drift = [r for r in rep.rows if r["quantity"] == "worst_p0_drift"][0]
    assert drift["measured"] < 1e-6


def test_geodesics_detect_trapping_well():
    # test-only family violating (H1) smallness: a refractive ring guide at
    # r = 2 captures rays launched inside it at shallow angles
    class RingMetric(MetricField):
        def deviation_derivs(self, x, order):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            npts, d = x.shape
            r = np.sqrt(np.maximum(np.sum(x * x, axis=1), 1e-12))
            f = 24.0 * np.exp(-((r - 2.0) ** 2))
            out = {0: f[:, None, None] * np.eye(d)[None]}
            if order >= 1:
                df = f * (-2.0 * (r - 2.0)) * (x / r[:, None])
                out[1] = df[:, None, None, :] * np.eye(d)[None, :, :, None]
            return out

    m = RingMetric(family="radial_bump", dimension=2, decay_rate=1.0,
                   amplitude=24.0)
    rep = geodesic_escape(m, n_rays=40, t_max=30.0, r_escape=25.0, r_start=2.0)
    escaped = [r for r in rep.rows if r["quantity"] == "rays_escaped"][0]
    assert escaped["measured"] < 40
    assert "possibly trapping" in escaped["note"]
