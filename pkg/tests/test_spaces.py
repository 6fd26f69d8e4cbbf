import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concavelift.spaces import (
    Cone, Euclidean, GeometryDomainError, Product, SpaceSpecError, gh_cone_approx, parse_space,
)

alphas = st.floats(0.5, 2 * math.pi)
radii = st.floats(0.01, 3.0)
angles = st.floats(0.0, 100.0)


def test_parse_space_roundtrip():
    for spec in ["euclidean:2", "cone:4.71238898038469", "product:1:cone:4.71238898038469"]:
        assert parse_space(spec).spec() == spec


@pytest.mark.parametrize("bad", ["cone:-1", "cone:7", "euclid:2", "product:0:cone:1"])
def test_parse_space_rejects(bad):
    with pytest.raises(SpaceSpecError):
        parse_space(bad)


@settings(max_examples=200, deadline=None)
@given(alphas, radii, angles, radii, angles)
def test_cone_dist_symmetric_and_bounded(a, r1, t1, r2, t2):
    c = Cone(a)
    X, Y = c.normalize([r1, t1]), c.normalize([r2, t2])
    d = c.dist(X, Y)
    assert d == pytest.approx(c.dist(Y, X), abs=1e-12)
    assert abs(r1 - r2) - 1e-12 <= d <= r1 + r2 + 1e-12


@settings(max_examples=200, deadline=None)
@given(alphas, radii, angles, radii, angles, st.floats(0, 1))
def test_cone_geodesic_splits_distance(a, r1, t1, r2, t2, s):
    c = Cone(a)
    X, Y = c.normalize([r1, t1]), c.normalize([r2, t2])
    G = c.geodesic(X, Y, s)
    d = c.dist(X, Y)
    assert c.dist(X, G) == pytest.approx(s * d, abs=1e-9)
    assert c.dist(G, Y) == pytest.approx((1 - s) * d, abs=1e-9)


def test_cone_law_of_cosines(cone):
    X, Y = np.array([1.0, 0.0]), np.array([2.0, cone.alpha / 2])
    gap = cone.alpha / 2
    assert cone.dist(X, Y) == pytest.approx(math.sqrt(5 - 4 * math.cos(gap)))
    flat = Cone(2 * math.pi)
    assert flat.dist(X, np.array([2.0, math.pi])) == pytest.approx(3.0)


def test_cut_locus_has_two_midpoints(cone):
    X, Y = np.array([1.0, 0.0]), np.array([1.0, cone.alpha / 2])
    branches, masks = cone.midpoint_branches(X[None], Y[None])
    assert masks[1][0]
    m1, m2 = branches[0][0], branches[1][0]
    for m in (m1, m2):
        assert cone.dist(X, m) == pytest.approx(cone.dist(X, Y) / 2, abs=1e-12)
    assert cone.dist(m1, m2) > 1e-3


@settings(max_examples=100, deadline=None)
@given(st.floats(0.2, 3), st.floats(0, 4.7), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_cone_exp_log_inverse(r, th, vx, vy):
    c = Cone(1.5 * math.pi)
    P = c.normalize([r, th])
    V = np.array([[vx, vy]]) * 0.3 * r
    X = c.exp(P, V)
    assert np.allclose(c.log(P, X), V, atol=1e-9)
    assert c.dist(P, X[0]) == pytest.approx(np.linalg.norm(V), abs=1e-9)


def test_exp_outside_sector_raises(cone):
    with pytest.raises(GeometryDomainError):
        cone.exp(np.array([1.0, 0.0]), np.array([[-3.0, 0.01]]))


def test_sample_ball_within_radius(cone, product, rng):
    for sp, c in [(cone, np.array([0.5, 1.0])), (cone, cone.origin()), (product, np.array([0.1, 0.2, 0.3]))]:
        X = sp.sample_ball(c, 0.4, 500, rng)
        assert len(X) == 500
        assert np.all(sp.dist(X, c) <= 0.4 + 1e-12)


def test_product_metric_pythagorean(product):
    X = np.array([0.0, 1.0, 0.0])
    Y = np.array([3.0, 1.0, 0.0])
    assert product.dist(X, Y) == pytest.approx(3.0)
    Z = np.array([0.0, 1.0, 1.0])
    assert product.dist(Y, Z) == pytest.approx(math.hypot(3, product.cone.dist(X[1:], Z[1:])))


def test_euclidean_is_flat(plane):
    X = np.array([[0.0, 0.0]])
    Y = np.array([[3.0, 4.0]])
    assert plane.dist(X, Y)[0] == pytest.approx(5.0)


def test_gh_approx_distortion_shrinks():
    a = 1.5 * math.pi
    b = [gh_cone_approx(a, a * (1 + 1 / i)).distortion_bound for i in (8, 16, 32)]
    assert b[0] > b[1] > b[2] > 0
    assert gh_cone_approx(a, a).distortion_bound == 0.0
