"""Strictly concave building blocks near regular points and their gluing.

The pieces are the strainer model function, its lifts through the exp chart,
the C^2 reparametrization spline, the gluing of two fields on nested balls,
iterated self-improvement and the exactified (-2)-concave variant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .fields import RealC2Function, ScalarField, _field, node
from .spaces import (
    Cone,
    Euclidean,
    GeometryDomainError,
    ModelSpace,
    Product,
    _coords,
)

SPLINE_DELTA = 0.01


class GlueRefused(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


@dataclass
class ConstructionConfig:
    """Numerical parameters for the constructions, with the defaults used in the acceptance runs."""

    epsilon: float = 0.1
    mu_radius: float = 0.005      # R of the model function for Theorem-B lifts
    domain_radius: float = 0.02   # radius of the Theorem-B ball at a regular point
    depth: int = 4
    anchor_ratio: Optional[float] = None  # anchor distance / domain radius, default 1/mu_radius
    frame_angle: Optional[float] = None   # strainer frame rotation in the chart
    eps_prime: Optional[float] = None     # gluing spline parameter, default from measured B
    seed: int = 0


# --------------------------------------------------------------------------
# model function


def taylor_dist(p, x):
    """Third-order expansion of ``|p - x|`` around ``x = 0``."""
    p = np.asarray(p, float)
    x = np.asarray(x, float)
    n = np.linalg.norm(p)
    if n == 0:
        raise ValueError("expansion point must be nonzero")
    e = p / n
    s = x @ e
    xx = np.sum(x * x, axis=-1)
    return n - s + 0.5 * (xx / n - s * s / n) + 0.5 * (xx * s / n**2 - s**3 / n**2)


def _mu_terms(D, a, R):
    # -1/2 [(1+R) a - d]^2 + (R a)^2 / 2, rewritten with u = d - a to avoid cancellation
    u = D - a
    return u * (R * a - 0.5 * u)


def mu_from_anchors(space: ModelSpace, anchors: np.ndarray, a: float, R: float, center, radius: float,
                    prov: dict, lam=None) -> ScalarField:
    A = np.asarray(anchors, float)
    n_pairs = len(A) // 2

    def fn(X):
        acc = np.zeros(len(X))
        for row in A:
            acc += _mu_terms(space.dist(X, row), a, R)
        return acc

    lip = 4 * n_pairs * radius
    return _field(space, fn, _coords(space, center), radius, 0.0, lam, lip, prov)


def model_mu(n: int, R: float, eps: Optional[float] = None) -> ScalarField:
    """The model function on ``B_R(0)`` of ``Euclidean(n)`` with anchors at ``+-e_i``."""
    if not 0 < R < 1:
        raise ValueError("R must lie in (0, 1)")
    space = Euclidean(n)
    anchors = np.concatenate([np.eye(n), -np.eye(n)])
    lam = None if eps is None else -2.0 + eps
    prov = node("affine", [node("dist", space=space.spec(), point=a) for a in anchors],
                model="mu", R=R, anchorDistance=1.0)
    return mu_from_anchors(space, anchors, 1.0, R, np.zeros(n), R, prov, lam)


def _frame(dim: int, angle: float) -> np.ndarray:
    """Orthonormal frame rows; the last two axes are rotated by ``angle``."""
    F = np.eye(dim)
    if dim >= 2 and angle:
        c, s = math.cos(angle), math.sin(angle)
        F[:, -2:] = F[:, -2:] @ np.array([[c, s], [-s, c]])
    return F


def default_frame_angle(space: ModelSpace) -> float:
    # keeps the outward and inward chart directions away from the apex ray
    return 0.25 * math.pi if isinstance(space, (Cone, Product)) else 0.0


def strainer_anchors(space: ModelSpace, p, r: float, frame_angle: Optional[float] = None) -> np.ndarray:
    """Images ``exp_p(+-r e_i)`` of a strainer frame in the tangent chart at ``p``."""
    P0 = _coords(space, p)
    ang = default_frame_angle(space) if frame_angle is None else frame_angle
    if isinstance(space, Euclidean):
        F = _frame(space.dim, ang)
        V = np.concatenate([F, -F]) * r
        return P0 + V
    if isinstance(space, Cone):
        if P0[0] == 0.0:
            raise GeometryDomainError("tangent cone at the apex is not Euclidean")
        F = _frame(2, ang)
        return space.exp(P0, np.concatenate([F, -F]) * r)
    pu, pc = space.split(P0)
    if pc[0] == 0.0:
        raise GeometryDomainError("tangent cone on the cone axis is not Euclidean")
    F = _frame(space.k + 2, ang)
    V = np.concatenate([F, -F]) * r
    return space.join(pu + V[:, : space.k], space.cone.exp(pc, V[:, space.k :]))


def lift_mu(space: ModelSpace, p, r: float, R: float, frame_angle: Optional[float] = None,
            eps: Optional[float] = None, transfer=None, anchor_shift: float = 0.0) -> ScalarField:
    """``r^2 f_r`` on ``B_{rR}(p)``: the model function with anchors ``exp_p(+-r e_i)``.

    ``transfer = (target_space, point_map)`` rebuilds the field on a nearby
    space from the mapped anchors and centre.  ``anchor_shift`` moves the
    first anchor by ``anchor_shift * r`` along the first coordinate (a
    deliberately broken lift for negative controls).
    """
    if not 0 < R < 1:
        raise ValueError("R must lie in (0, 1)")
    anchors = strainer_anchors(space, p, r, frame_angle)
    if anchor_shift:
        anchors[0, 0] += anchor_shift * r
    center = _coords(space, p)
    tgt = space
    if transfer is not None:
        tgt, pmap = transfer
        anchors = pmap(anchors)
        center = pmap(center[None, :])[0]
    lam = None if eps is None else -2.0 + eps
    prov = node(
        "affine", [node("dist", space=tgt.spec(), point=a) for a in anchors],
        model="mu", R=R, anchorDistance=r, center=center,
    )
    return mu_from_anchors(tgt, anchors, r, R, center, r * R, prov, lam)


# --------------------------------------------------------------------------
# reparametrization spline


def _quintic(a, b, ya, yb):
    """Coefficients (low to high) of the quintic matching value, slope, curvature at a and b."""
    rows, rhs = [], []
    for x, (v, d1, d2) in ((a, ya), (b, yb)):
        rows.append([x**k for k in range(6)])
        rows.append([k * x ** (k - 1) if k > 0 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * x ** (k - 2) if k > 1 else 0.0 for k in range(6)])
        rhs += [v, d1, d2]
    return np.linalg.solve(np.array(rows, float), np.array(rhs, float))


class ReparamSpline(RealC2Function):
    pass


def spline_knots(delta: float = SPLINE_DELTA):
    return (-(0.25 + delta) ** 2, -(0.5 - delta) ** 2, -(0.5 + delta) ** 2, -(1 - delta) ** 2)


def build_reparam(eps: float, probes: int = 4001) -> ReparamSpline:
    """The C^2 function equal to ``(1-eps) x`` near 0, ``x/(1-eps)`` around ``-1/4`` and ``x`` below ``-(1-delta)^2``."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    k1, k2, k3, k4 = spline_knots()
    a, b = 1.0 - eps, 1.0 / (1.0 - eps)
    c2 = _quintic(k2, k1, (k2 * b, b, 0.0), (k1 * a, a, 0.0))
    c1 = _quintic(k4, k3, (k4, 1.0, 0.0), (k3 * b, b, 0.0))
    d2_1, d2_2 = P.polyder(c1), P.polyder(c2)
    dd_1, dd_2 = P.polyder(c1, 2), P.polyder(c2, 2)

    def pieces(x):
        x = np.asarray(x, float)
        # order: x <= k4 | blend1 | [k3,k2] | blend2 | [k1, inf)
        return [x <= k4, (x > k4) & (x < k3), (x >= k3) & (x <= k2), (x > k2) & (x < k1), x >= k1]

    def f(x):
        x = np.asarray(x, float)
        m = pieces(x)
        return np.select(m, [x, P.polyval(x, c1), b * x, P.polyval(x, c2), a * x])

    def d1(x):
        x = np.asarray(x, float)
        m = pieces(x)
        one = np.ones_like(x)
        return np.select(m, [one, P.polyval(x, d2_1), b * one, P.polyval(x, d2_2), a * one])

    def d2(x):
        x = np.asarray(x, float)
        m = pieces(x)
        z = np.zeros_like(x)
        return np.select(m, [z, P.polyval(x, dd_1), z, P.polyval(x, dd_2), z])

    # measured constant of the derivative bounds, over both blends
    B = 0.0
    mins, maxs, max2 = [a], [b], 0.0
    for lo, hi in ((k4, k3), (k2, k1)):
        xs = np.linspace(lo, hi, probes)
        v, g, h = f(xs), d1(xs), d2(xs)
        B = max(B, np.max(np.abs(g - 1)) / eps, np.max(np.abs(h)) / eps, np.max(np.abs(v / xs - 1)) / eps)
        mins.append(g.min())
        maxs.append(g.max())
        max2 = max(max2, h.max())
    bounds = {"min_d1": float(min(mins)), "max_d1": float(max(maxs)), "max_d2": float(max2)}
    sp = ReparamSpline(f, d1, d2, (-math.inf, 0.0), bounds, "reparamSpline",
                       {"eps": float(eps), "delta": SPLINE_DELTA})
    object.__setattr__(sp, "params", dict(sp.params, measuredB=float(B)))
    sp.__dict__["coeffs"] = (c1, c2)
    sp.__dict__["measured_B"] = float(B)
    sp.__dict__["eps"] = float(eps)
    return sp


def default_eps_prime(eps: float) -> float:
    """Gluing spline parameter ``eps / (2 (1 + B))`` with ``B`` measured on the spline."""
    B = build_reparam(min(eps, 0.49)).measured_B
    return eps / (2.0 * (1.0 + B))


def _smoothstep5(t):
    return t * t * t * (10 - 15 * t + 6 * t * t)


def build_ramp(delta: float, s_a: float = -spline_knots()[0], s_b: float = -spline_knots()[1]) -> RealC2Function:
    """Concavity-preserving reparametrization ``phi(y) = -psi(-y)``.

    ``psi(s) = s + delta Q(s)`` where ``Q`` is the C^2 convex ramp with
    ``Q = 0`` below ``s_a`` and ``Q' = 1`` above ``s_b``. Then ``phi' >= 1`` and
    ``phi'' <= 0``, so composing with ``phi`` never weakens concavity.
    """
    if delta < 0 or not 0 <= s_a < s_b:
        raise ValueError("ramp needs delta >= 0 and 0 <= s_a < s_b")
    w = s_b - s_a

    def Q(s):
        t = np.clip((s - s_a) / w, 0.0, 1.0)
        # integral of the smoothstep: w (t^4 (5/2 - 3 t + t^2))... plus linear tail
        inner = w * (t**4) * (2.5 - 3.0 * t + t * t)
        return np.where(s > s_b, (s - s_b) + 0.5 * w, inner)

    def Q1(s):
        t = np.clip((s - s_a) / w, 0.0, 1.0)
        return _smoothstep5(t)

    def Q2(s):
        t = np.clip((s - s_a) / w, 0.0, 1.0)
        return 30 * t * t * (1 - t) ** 2 / w

    f = lambda y: np.asarray(y, float) - delta * Q(-np.asarray(y, float))
    d1 = lambda y: 1.0 + delta * Q1(-np.asarray(y, float))
    d2 = lambda y: -delta * Q2(-np.asarray(y, float))
    return RealC2Function(f, d1, d2, (-math.inf, math.inf),
                          {"min_d1": 1.0, "max_d1": 1.0 + delta, "max_d2": 0.0},
                          "convexRamp", {"delta": float(delta), "sa": float(s_a), "sb": float(s_b)})


# --------------------------------------------------------------------------
# gluing


def _shell_points(space, center, radius, count, seed):
    rng = np.random.default_rng(seed)
    X = space.sample_ball(center, radius, count, rng)
    # push samples to the sphere of the given radius along geodesics from the centre
    d = space.dist(X, center)
    ok = d > 0
    X, d = X[ok], d[ok]
    return space.geodesic(np.broadcast_to(center, X.shape), X, radius / d) if np.all(radius / d <= 1) else X


def glue_profile_checks(f1: ScalarField, f2: ScalarField, phi: RealC2Function, count: int = 512, seed: int = 0):
    """Continuity conditions of the glue at the two switching spheres.

    Returns the minimum of ``f2 - rho^2 phi(f1 / rho^2)`` on the sphere of radius
    ``rho/2`` and of ``rho^2 phi(f1 / rho^2) - f2`` on the sphere of radius ``rho/4``;
    both must be nonnegative.
    """
    space = f1.space
    c = f1.center_array
    rho = f1.outer
    out = {}
    for name, rad, sign in (("outerSwitch", 0.5 * rho, 1.0), ("innerSwitch", 0.25 * rho, -1.0)):
        X = _sphere(space, c, rad, count, seed)
        g = rho * rho * phi(f1.fn(X) / (rho * rho))
        out[name] = float(np.min(sign * (f2.fn(X) - g)))
    return out


def _sphere(space, center, rad, count, seed):
    """Points at distance ``rad`` from ``center`` along geodesics towards random ball samples."""
    rng = np.random.default_rng(seed)
    X = space.sample_ball(center, rad * 1.5, 4 * count, rng)
    d = space.dist(X, center)
    X, d = X[d > rad * 1.01], d[d > rad * 1.01]
    C = np.broadcast_to(center, X.shape)
    S = space.geodesic(C, X, rad / d)
    return S[:count]


def glue(f1: ScalarField, f2: ScalarField, eps: float = 0.1, phi: Optional[RealC2Function] = None,
         eps_prime: Optional[float] = None, check: bool = True, seed: int = 0) -> ScalarField:
    """Glue ``f1`` on ``B_rho(p)`` with ``f2`` on ``B_{rho/2}(p)``.

    ``phi o f1`` (in units normalized by ``rho^2``) outside ``rho/2``, the
    minimum with ``f2`` between ``rho/4`` and ``rho/2`` and ``f2`` inside.
    """
    space = f1.space
    c = f1.center_array
    rho = f1.outer
    if space.dist(c, f2.center_array) > 1e-12 * max(rho, 1) or abs(f2.outer - 0.5 * rho) > 1e-12 * rho:
        raise GlueRefused("inner field must live on the concentric ball of half radius")
    if phi is None:
        eps_prime = default_eps_prime(eps) if eps_prime is None else eps_prime
        phi = build_reparam(eps_prime)
    report = {}
    if check:
        report = glue_profile_checks(f1, f2, phi, seed=seed)
        report.update(_glue_sandwich(f1, f2, eps, seed))
        bad = [k for k, v in report.items() if v < -1e-12 * rho * rho]
        if bad:
            raise GlueRefused(f"glue hypotheses fail: {bad}", report)
    r2 = rho * rho

    def fn(X):
        d = space.dist(X, c) / rho
        out = np.empty(len(X))
        outer = d >= 0.5
        inner = d < 0.25
        mid = ~outer & ~inner
        need1 = ~inner
        need2 = ~outer
        v1 = np.full(len(X), np.nan)
        v2 = np.full(len(X), np.nan)
        if need1.any():
            v1[need1] = r2 * phi(f1.fn(X[need1]) / r2)
        if need2.any():
            v2[need2] = f2.fn(X[need2])
        out[outer] = v1[outer]
        out[inner] = v2[inner]
        out[mid] = np.minimum(v1[mid], v2[mid])
        return out

    lam = None
    if f1.claimed_concavity is not None and f2.claimed_concavity is not None and phi.bounds:
        l1 = f1.claimed_concavity
        b = phi.bounds
        lip_n = (f1.claimed_lipschitz or 0.0) / rho
        slope = b["min_d1"] if l1 < 0 else b["max_d1"]
        lam = max(max(b["max_d2"], 0.0) * lip_n**2 + slope * l1, f2.claimed_concavity)
    lip = None
    if f1.claimed_lipschitz is not None and f2.claimed_lipschitz is not None and phi.bounds:
        lip = max(phi.bounds["max_d1"] * f1.claimed_lipschitz, f2.claimed_lipschitz)
    prov = node("min", [node("compose", [f1.provenance], phi=phi.name, **phi.params), f2.provenance],
                glue=True, radius=rho, shells=[0.25, 0.5], checks=report)
    return _field(space, fn, c, rho, 0.0, lam, lip, prov)


def _glue_sandwich(f1, f2, eps, seed, count=512):
    out = {}
    for f, lo, name in ((f1, 0.25, "f1Sandwich"), (f2, 0.25, "f2Sandwich")):
        rng = np.random.default_rng(seed + 17)
        X = f.space.sample_ball(f.center_array, f.outer, count, rng)
        d2 = f.space.dist(X, f.center_array) ** 2
        keep = d2 >= (lo * f.outer) ** 2
        X, d2 = X[keep], d2[keep]
        v = f.fn(X)
        out[name + "Lower"] = float(np.min((v + d2) / d2))
        out[name + "Upper"] = float(np.min((-(1 - eps / 2) * d2 - v) / d2))
    return out


# --------------------------------------------------------------------------
# self-improvement and exactification


def self_improve(space: ModelSpace, p, eps: float = 0.1, depth: int = 4, radius: float = 0.02,
                 mu_radius: float = 0.005, frame_angle: Optional[float] = None,
                 eps_prime: Optional[float] = None, transfer=None, check: bool = True,
                 levels: Optional[Sequence[ScalarField]] = None, anchor_shift: float = 0.0) -> ScalarField:
    """Glue lifts at radii ``radius / 2^(i-1)``, ``i = 1..depth``, from the inside out."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if levels is None:
        levels = [
            lift_mu(space, p, radius / 2**i / mu_radius, mu_radius, frame_angle, eps, transfer, anchor_shift)
            for i in range(depth)
        ]
    phi = build_reparam(default_eps_prime(eps) if eps_prime is None else eps_prime)
    F = levels[-1]
    for i in range(len(levels) - 2, -1, -1):
        try:
            F = glue(levels[i], F, eps, phi=phi, check=check)
        except GlueRefused as exc:
            raise GlueRefused(f"glue refused at stage {i + 1}: {exc}", exc.report) from None
    F.provenance["params"]["selfImprove"] = {"depth": depth, "radius": radius, "muRadius": mu_radius}
    return F


def theorem_b_lift(approx, p, eps: float = 0.1, mode: str = "exp", depth: int = 4, radius: float = 0.02,
                   mu_radius: float = 0.005, anchor_shift: float = 0.0, check: bool = False):
    """Rebuild the self-improved field of ``approx.source`` at ``p`` on ``approx.target``.

    ``mode='exp'`` places anchors with the target's own chart at the image of
    ``p``; ``mode='mapped'`` pushes the source anchors through the point map.
    Returns ``(field, centre, radius)`` as consumed by ``lift_stability_audit``.
    """
    P = _coords(approx.source, p)
    q = approx.point_map(P[None, :])[0]
    if mode == "exp":
        F = self_improve(approx.target, q, eps, depth, radius, mu_radius, check=check, anchor_shift=anchor_shift)
    elif mode == "mapped":
        F = self_improve(approx.source, P, eps, depth, radius, mu_radius, check=check,
                         transfer=(approx.target, approx.point_map), anchor_shift=anchor_shift)
    else:
        raise ValueError(f"unknown lift mode {mode!r}")
    F.provenance["params"]["liftMode"] = mode
    return F, q, F.outer


def exactify_deltas(eps_schedule: Sequence[float]):
    return [e / (2.0 - e) for e in eps_schedule]


def exactify(space: ModelSpace, p, eps_schedule: Optional[Sequence[float]] = None, depth: int = 4,
             radius: float = 0.015, ramp0: float = 0.05, ramp_ratio: float = 0.4,
             margin: float = 0.25, frame_angle: Optional[float] = None, transfer=None,
             check: bool = True) -> ScalarField:
    """A (-2)-concave field with ``(f + d^2)/d^2 -> 0`` at ``p``.

    Level ``i`` is a lift with model radius ``eps_i / (2 (n-1) (1 + margin))``,
    hence ``(-2 + eps_i)``-concave, scaled by ``1 + eps_i / (2 - eps_i)``.
    Levels are glued with concavity-preserving ramps of strength
    ``ramp0 * ramp_ratio^i``.
    """
    if eps_schedule is None:
        eps_schedule = [0.01 / 2**i for i in range(depth)]
    eps_schedule = list(eps_schedule)
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    n = space.dimension
    deltas = exactify_deltas(eps_schedule)
    levels = []
    for i, (e, dl) in enumerate(zip(eps_schedule, deltas)):
        Rm = e / (2.0 * max(n - 1, 1) * (1.0 + margin))
        rad = radius / 2**i
        T = lift_mu(space, p, rad / Rm, Rm, frame_angle, e, transfer)
        f = _scaled(T, 1.0 + dl, lam=-2.0)
        levels.append(f)
    # the innermost level is reparametrized too, so every inner switch sees a boosted profile
    F = normalized_compose(levels[-1], build_ramp(ramp0 * ramp_ratio ** (len(levels) - 1)))
    for i in range(len(levels) - 2, -1, -1):
        phi = build_ramp(ramp0 * ramp_ratio**i)
        F = glue(levels[i], F, 0.0, phi=phi, check=False)
        if check:
            rep = glue_profile_checks(levels[i], F, phi)
            if min(rep.values()) < -1e-12 * levels[i].outer ** 2:
                raise GlueRefused(f"exactify glue refused at stage {i + 1}", rep)
    F.claimed_concavity = -2.0
    F.provenance["params"]["exactify"] = {
        "epsSchedule": eps_schedule, "deltas": deltas, "ramp0": ramp0, "rampRatio": ramp_ratio,
    }
    return F


def normalized_compose(f: ScalarField, phi: RealC2Function) -> ScalarField:
    """``rho^2 phi(f / rho^2)`` with ``rho`` the outer radius of ``f``."""
    r2 = f.outer * f.outer

    def fn(X):
        return r2 * phi(f.fn(X) / r2)

    prov = node("compose", [f.provenance], phi=phi.name, normalization=r2, **phi.params)
    lip = None if f.claimed_lipschitz is None else phi.bounds["max_d1"] * f.claimed_lipschitz
    return _field(f.space, fn, f.center, f.outer, f.inner, f.claimed_concavity, lip, prov)


def _scaled(f: ScalarField, c: float, lam=None) -> ScalarField:
    def fn(X):
        return c * f.fn(X)

    prov = node("affine", [f.provenance], coeffs=[c], constant=0.0)
    lip = None if f.claimed_lipschitz is None else c * f.claimed_lipschitz
    return _field(f.space, fn, f.center, f.outer, f.inner, lam, lip, prov)


def theorem_a_ratios(fld: ScalarField, p, stages: int = 4, count: int = 4000, seed: int = 0):
    """``sup |f + d^2| / d^2`` on the annuli between ``R/2^i`` and ``R/2^(i+1)``."""
    space = fld.space
    P0 = _coords(space, p)
    R = fld.outer
    out = []
    for i in range(stages):
        rng = np.random.default_rng(seed + i)
        hi, lo = R / 2**i, R / 2 ** (i + 1)
        X = space.sample_ball(P0, hi, count, rng)
        d = space.dist(X, P0)
        X, d = X[d >= lo], d[d >= lo]
        out.append(float(np.max(np.abs(fld.fn(X) + d * d) / (d * d))))
    return out
