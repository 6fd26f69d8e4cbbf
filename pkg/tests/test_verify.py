import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concavelift.fields import _field, dist_field, node
from concavelift.spaces import Euclidean, gh_cone_approx
from concavelift.construct import theorem_b_lift
from concavelift.verify import (
    PreconditionError, bgp_defects, concavity_check, explosion_check, lift_stability_audit, lipschitz_estimate,
    measured_aleph, midpoint_defect, orthonormal_explosion, perturbed_explosion, sample_pairs, sandwich_check,
)


def scaled_sq(space, a, R=1.0):
    P = space.origin()
    return _field(space, lambda X: -a * space.dist(X, P) ** 2, P, R, 0.0, -2 * a, 2 * a * R, node("sq", a=a))


def test_midpoint_defect_exact_quadratic(plane):
    f = scaled_sq(plane, 1.0)
    x, y = np.array([0.1, 0.2]), np.array([-0.3, 0.1])
    m = 0.5 * (x + y)
    assert midpoint_defect(f, x, y, m, -2.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(PreconditionError):
        midpoint_defect(f, x, y, x, -2.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 2.0))
def test_concavity_threshold(a):
    f = scaled_sq(Euclidean(2), a, 0.5)
    assert concavity_check(f, -2 * a, 500, 0).certified
    assert not concavity_check(f, -2 * a - 0.1, 500, 0).certified


def test_concavity_on_cone_distance_squared(cone):
    f = scaled_sq(cone, 1.0, 1.0)
    rep = concavity_check(f, -2.0, 4000, 0)
    assert rep.certified
    assert rep.triple_count == 4000


def test_sample_pairs_stay_in_annulus(cone):
    X, Y = sample_pairs(cone, cone.origin(), 0.2, 1.0, 500, 3)
    for t in np.linspace(0, 1, 7):
        d = cone.dist(cone.geodesic(X, Y, t), cone.origin())
        assert np.all((d >= 0.2) & (d <= 1.0 + 1e-9))


def test_sandwich_and_lipschitz(plane):
    good = scaled_sq(plane, 0.85, 0.5)
    assert sandwich_check(good, plane.origin(), 0.1, 0.01, 0.5).holds
    bad = scaled_sq(plane, 1.01, 0.5)
    rep = sandwich_check(bad, plane.origin(), 0.1, 0.01, 0.5)
    assert not rep.holds and rep.lower_slack < 0
    d = dist_field(plane, plane.origin(), 1.0)
    assert lipschitz_estimate(d, 2000, 0) == pytest.approx(1.0, abs=1e-6)


def test_explosions_and_bgp():
    ex = orthonormal_explosion(2)
    assert explosion_check(ex)[0]
    D = np.random.default_rng(0).standard_normal((1000, 3))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    assert bgp_defects(ex, D).max() <= 1e-12
    moved = orthonormal_explosion(2)
    A = moved.pairs[0][0].copy()
    A[0] = [math.cos(0.1), math.sin(0.1), 0.0]
    moved.pairs[0] = (A, moved.pairs[0][1])
    ok, worst = explosion_check(moved)
    assert not ok and "constraint" in worst
    assert explosion_check(perturbed_explosion(0.05))[0]


def test_measured_aleph_grid(plane):
    f = scaled_sq(plane, 0.9, 0.1)
    assert measured_aleph(f, plane.origin(), 0.1, 0.1) == pytest.approx(2.0**-10)


def test_lift_audit_negative_control(cone):
    a = cone.alpha
    aps = [gh_cone_approx(a, a * (1 + 1 / 16))]
    p = np.array([1.0, 0.0])
    rep = lift_stability_audit(lambda g: theorem_b_lift(g, p, anchor_shift=0.3), aps, 0.1, sample_count=2000)
    e = rep.entries[0]
    assert e.failure == "certificate refused"
    assert e.concavity["witness"]


def test_lift_audit_records_domain_failure(cone):
    aps = [gh_cone_approx(cone.alpha, cone.alpha * 1.1)]
    rep = lift_stability_audit(lambda g: theorem_b_lift(g, cone.origin()), aps, 0.1, sample_count=100)
    assert rep.entries[0].failure and not rep.all_certified
