import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concavelift.fields import ConvexRegion, _field, node
from concavelift.product import (
    ComparisonConfig, CoverageError, PatchFailure, RegionConfig, RegionFailure, apex_theorem_b, assemble_region,
    comparison_distance, cover_annulus, extract_level_set, f_c_field, final_step_patch, first_order_term,
    pseudo_constructibility_audit, region_concave_dist, region_convexity_check, ring_cover, second_order_patch,
    t_correction, weak_axis_patch,
)
from concavelift.spaces import Cone, Euclidean, GeometryDomainError, Product, gh_cone_approx
from concavelift.verify import concavity_check, lipschitz_estimate, sandwich_check


@pytest.fixture(scope="module")
def cone_region():
    sp = Cone(1.5 * math.pi)
    cover = ring_cover(sp, RegionConfig())
    region, audit = assemble_region(sp, cover, 0.1, pairs=2000)
    return sp, cover, region, audit


def test_f_c_values_and_concavity(product):
    f = f_c_field(product, 0.05)
    assert f(product.origin()[None])[0] == pytest.approx(-0.05**2 / 2)
    f0 = f_c_field(product, 1e-9)
    X = product.sample_ball(product.origin(), 1.0, 100, np.random.default_rng(0))
    assert np.allclose(f0(X), -product.dist(X, product.origin()) ** 2 / 2, atol=1e-8)
    rep = concavity_check(f, -1.0, 4000, 0)
    assert rep.worst_margin >= -1e-9 * 4
    with pytest.raises(ValueError):
        f_c_field(product, 0.0)


def test_first_order_term(product):
    q = np.array([0.3, 0.8, 1.0])
    c = 0.05
    D = first_order_term(product, q, c)
    assert D(q[None])[0] == pytest.approx(-0.09 - (0.8 + c) * 0.8)
    X = product.sample_ball(q, 0.05, 500, np.random.default_rng(0))
    assert lipschitz_estimate(D.with_domain(q, 0.05), 2000, 0) <= math.hypot(0.3, 0.85) + 1e-6
    with pytest.raises(GeometryDomainError):
        first_order_term(product, product.origin(), c)
    Dinf = D.with_domain(q, 0.05)
    errs = []
    for t in (1e2, 1e3):
        Dt = first_order_term(product, q, c, t)
        errs.append(np.max(np.abs(Dt(X) - Dinf(X))))
    assert errs[1] < errs[0] / 5


def test_second_order_patch(product):
    q = np.array([0.3, 0.8, 1.0])
    p = second_order_patch(product, q, 0.1, 0.05)
    f = f_c_field(product, 0.05)
    assert p.field(q[None])[0] < f(q[None])[0]
    assert p.certificates["inequalities"]["outerMin"] >= p.certificates["requiredMargin"]
    assert p.certificates["concavity"]["certified"]
    with pytest.raises(GeometryDomainError):
        second_order_patch(product, np.array([0.3, 0.0, 0.0]), 0.1, 0.05)


def test_weak_axis_patch(product):
    q = np.array([0.5, 0.0, 0.0])
    w = weak_axis_patch(product, q, 0.1, 0.05)
    H = w.extra["H"]
    assert H(q[None])[0] == pytest.approx(0.0, abs=1e-15)
    assert lipschitz_estimate(H, 2000, 0) <= 0.1 + 1e-6
    assert w.certificates["concavity"]["certified"]
    assert w.certificates["lowerBoundMin"] >= 0
    with pytest.raises(GeometryDomainError):
        weak_axis_patch(product, np.array([0.5, 0.2, 0.0]), 0.1)
    with pytest.raises(PatchFailure):
        weak_axis_patch(product, q, 0.1, K_max=4)


def test_product_cover_budget_exhaustion(product):
    with pytest.raises(CoverageError) as exc:
        cover_annulus(product, 0.1, 0.05, budget=3, samples=500)
    assert exc.value.witness is not None and len(exc.value.patches) == 3


def test_final_step_patch_identities(cone):
    q = np.array([1.3, 0.4])
    p = final_step_patch(cone, q, 0.025, certify=False)
    r = p.radius
    val = p.field(q[None])[0]
    assert val == pytest.approx(-1.3**2 / 2 - r * r * 0.025 / 4, abs=1e-14)
    X = cone.sample_ball(q, r, 200, np.random.default_rng(0))
    G = p.extra["deviation"]
    assert np.allclose(p.field(X), -X[:, 0] ** 2 / 2 + G(X), atol=1e-14)
    with pytest.raises(GeometryDomainError):
        final_step_patch(cone, cone.origin(), 0.025)


def test_ring_cover_matches_direct_patch(cone_region):
    sp, cover, _, _ = cone_region
    j, k = 3, 17
    q = cover.center(j, k)
    direct = cover.patch(j, k)
    X = sp.sample_ball(q, 0.05 * direct.radius, 50, np.random.default_rng(2))
    assert np.allclose(cover.deviation(X), direct.extra["deviation"](X), atol=1e-16) or np.all(
        cover.deviation(X) <= direct.extra["deviation"](X) + 1e-16)


def test_ring_cover_patch_certificates(cone_region):
    _, cover, _, _ = cone_region
    c = cover.base.certificates
    assert c["inequalitiesHold"] and c["outerMin"] >= c["requiredMargin"]
    assert c["certifiedLambda"] is not None and c["certifiedLambda"] <= -2 + 0.1 + 1.0


def test_region_audit(cone_region):
    sp, cover, region, audit = cone_region
    assert audit.convexity["violations"] == 0
    assert audit.coverage["covered"]
    assert audit.hausdorff <= 2 * 0.1**3 + 1e-4
    assert audit.level_tolerance <= 1e-8
    assert audit.rays == 4096


def test_defining_field_sandwich_and_concavity(cone_region):
    sp, cover, _, _ = cone_region
    F = cover.field()
    X = sp.sample_ball(sp.origin(), 1.1, 4000, np.random.default_rng(0))
    X = X[X[:, 0] >= 0.5]
    r2 = X[:, 0] ** 2
    assert np.all(F(X) <= -(1 - 0.1**3) * r2 / 2) and np.all(F(X) >= -(1 + 0.1**3) * r2 / 2)
    assert concavity_check(F, -0.9, 3000, 0).certified


def test_euclidean_exact_region():
    sp = Euclidean(2)
    F = _field(sp, lambda X: -0.5 * np.sum(X * X, axis=1), sp.origin(), 2.0, 0.0, -1.0, 2.0, node("sq"))
    region, audit = assemble_region(sp, F, 0.1, rays=512, pairs=500)
    assert audit.hausdorff <= 1e-9


def test_region_failure_on_unbracketed(plane):
    F = _field(plane, lambda X: np.zeros(len(X)), plane.origin(), 2.0, 0.0, None, None, node("zero"))
    with pytest.raises(RegionFailure):
        extract_level_set(plane, F, -0.5, plane.origin(), 16, (0.5, 1.1))


def test_negative_control_wedge(plane):
    n = 1024
    th = 2 * math.pi * np.arange(n) / n
    r = np.where((th > 0.3) & (th < 1.2), 0.3, 1.0)
    region = ConvexRegion(plane, None, 0.0, (0.0, 0.0), 0.0, (th, r))
    rep = region_convexity_check(region, 4000, 0)
    assert not rep["holds"] and "witness" in rep


def test_region_concave_dist_disk_value():
    sp = Euclidean(2)
    n = 2048
    th = 2 * math.pi * np.arange(n) / n
    region = ConvexRegion(sp, None, 0.0, (0.0, 0.0), 0.25, (th, np.ones(n)))
    g = region_concave_dist(region, 0.1)
    assert g(np.zeros((1, 2)))[0] == pytest.approx(-(2 / 9) ** 2, abs=1e-9)


def test_apex_field(cone_region):
    sp, _, region, _ = cone_region
    F, R, info = apex_theorem_b(region)
    assert info["c"] <= 1
    assert sandwich_check(F, sp.origin(), 0.1, R / 16, R, 2000, 0).holds


def test_pseudo_constructibility_exp_mode(cone):
    a = cone.alpha
    aps = [gh_cone_approx(a, a * (1 + 1 / i)) for i in (8, 16, 32)]
    rep = pseudo_constructibility_audit(cone, aps, RegionConfig(rays=1024), "exp", pairs=500)
    assert rep["holds"]


def test_t_correction():
    assert t_correction(0.1, 0.0) == 0.0
    assert t_correction(0.1, -1e-12) == pytest.approx(0.0, abs=1e-10)
    assert t_correction(0.1, -1.0) == pytest.approx(1 / math.tanh(11 / 9) - 9 / 11, rel=1e-14)
    vals = [t_correction(0.1, k) for k in -np.linspace(0, 5, 30)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        t_correction(0.1, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.3), st.floats(0.0, 1.0), st.floats(0, math.pi))
def test_comparison_distance(eps, hf, ang):
    cfg = ComparisonConfig(eps, hf * (1 + eps) / (1 - eps) * 0.99, ang)
    assert comparison_distance(cfg, 0.0) == pytest.approx(cfg.h, abs=1e-12)
    h = 1e-3
    d = comparison_distance(cfg, np.array([0.0, h, 2 * h]))
    assert d[0] - 2 * d[1] + d[2] <= 1e-12


def test_comparison_radial_motion():
    t = np.array([0.01, 0.1])
    toward_p = ComparisonConfig(0.1, 0.5, 0.0)
    assert np.allclose(comparison_distance(toward_p, t), 0.5 - t)
    away = ComparisonConfig(0.1, 0.5, math.pi)
    assert np.allclose(comparison_distance(away, t), 0.5 + t)
    cfg = away
    with pytest.raises(ValueError):
        comparison_distance(cfg, -1.0)
    with pytest.raises(NotImplementedError):
        ComparisonConfig(0.1, 0.5, 1.0, kappa=-1.0)
