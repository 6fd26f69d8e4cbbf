"""Scalar fields on model spaces and the operations that combine them.

A field evaluates batches of coordinate rows (see ``spaces``) and carries a
domain ball or annulus, advisory concavity/Lipschitz claims and a provenance
tree that serializes to JSON.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .spaces import (
    Cone,
    Euclidean,
    GeometryDomainError,
    ModelSpace,
    Product,
    SpacePoint,
    TagMismatchError,
    _coords,
)


class UnsupportedRayError(ValueError):
    pass


class RangeError(ValueError):
    pass


def _num(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_num(a) for a in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_num(a) for a in v]
    if isinstance(v, dict):
        return {k: _num(a) for k, a in v.items()}
    return v


def node(kind: str, children: Sequence[dict] = (), **params) -> dict:
    return {"kind": kind, "params": _num(params), "children": list(children)}


def provenance_json(prov: dict) -> str:
    # json writes floats with repr, i.e. the shortest round-trip form
    return json.dumps(prov, sort_keys=True, separators=(",", ":"))


@dataclass
class ScalarField:
    space: ModelSpace
    fn: Callable[[np.ndarray], np.ndarray]
    center: tuple
    outer: float
    inner: float = 0.0
    claimed_concavity: Optional[float] = None
    claimed_lipschitz: Optional[float] = None
    provenance: dict = dc_field(default_factory=dict)
    certified: bool = False

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim == 1:
            return self.fn(X[None, :])[0]
        return self.fn(X)

    def evaluate(self, x: SpacePoint) -> float:
        return float(self(_coords(self.space, x)))

    @property
    def center_array(self) -> np.ndarray:
        return np.array(self.center, float)

    def in_domain(self, X, slack: float = 0.0) -> np.ndarray:
        d = self.space.dist(np.asarray(X, float), self.center_array)
        return (d <= self.outer * (1 + slack)) & (d >= self.inner * (1 - slack))

    def with_domain(self, center=None, outer=None, inner=None) -> "ScalarField":
        return ScalarField(
            self.space, self.fn,
            self.center if center is None else tuple(_coords(self.space, center)),
            self.outer if outer is None else float(outer),
            self.inner if inner is None else float(inner),
            self.claimed_concavity, self.claimed_lipschitz, self.provenance,
        )

    def provenance_json(self) -> str:
        return provenance_json(self.provenance)


def _field(space, fn, center, outer, inner=0.0, lam=None, lip=None, prov=None):
    return ScalarField(space, fn, tuple(np.asarray(center, float)), float(outer), float(inner), lam, lip, prov or {})


# --------------------------------------------------------------------------
# distance and Busemann fields


def dist_field(space: ModelSpace, p, outer: float = math.inf) -> ScalarField:
    P = _coords(space, p)

    def fn(X):
        return space.dist(X, P)

    return _field(space, fn, P, outer, lip=1.0, prov=node("dist", space=space.spec(), point=P))


@dataclass(frozen=True)
class RaySpec:
    space: ModelSpace
    base: tuple
    through: tuple

    def __post_init__(self):
        b = _coords(self.space, self.base)
        t = _coords(self.space, self.through)
        if self.space.dist(b, t) == 0.0:
            raise UnsupportedRayError("ray needs distinct base and through points")
        object.__setattr__(self, "base", tuple(self.space.normalize(b)))
        object.__setattr__(self, "through", tuple(self.space.normalize(t)))

    def _parts(self):
        """Unit direction as (flat unit part, cone weight, cone angle)."""
        space = self.space
        b, t = np.array(self.base), np.array(self.through)
        if isinstance(space, Euclidean):
            d = t - b
            return d / np.linalg.norm(d), 0.0, 0.0
        if isinstance(space, Cone):
            if b[0] != 0.0:
                raise UnsupportedRayError("cone rays must start at the apex")
            return np.zeros(0), 1.0, float(t[1])
        bu, bc = space.split(b)
        tu, tc = space.split(t)
        if bc[0] != 0.0:
            if space.cone.dist(bc, tc) != 0.0:
                raise UnsupportedRayError("product rays must start on the axis or stay in the flat factor")
            a = tu - bu
            return a / np.linalg.norm(a), 0.0, 0.0
        a = tu - bu
        norm = math.hypot(float(np.linalg.norm(a)), float(tc[0]))
        return a / norm, float(tc[0]) / norm, float(tc[1])

    def point_at(self, t: float) -> np.ndarray:
        space = self.space
        u, w, th = self._parts()
        b = np.array(self.base)
        if isinstance(space, Euclidean):
            return b + t * u
        if isinstance(space, Cone):
            return space.normalize(np.array([t, th]))
        bu, bc = space.split(b)
        if w == 0.0:
            return space.join(bu + t * u, bc)
        return space.normalize(space.join(bu + t * u, np.array([t * w, th])))


def _cone_busemann(cone: Cone, C, th):
    s = np.minimum(cone.gap(C[..., 1], th), math.pi)
    return -C[..., 0] * np.cos(s)


def busemann_field(ray: RaySpec, outer: float = math.inf) -> ScalarField:
    space = ray.space
    u, w, th = ray._parts()
    b = np.array(ray.base)

    if isinstance(space, Euclidean):
        def fn(X):
            return -((X - b) @ u)
    elif isinstance(space, Cone):
        def fn(X):
            return _cone_busemann(space, X, th)
    else:
        bu, _ = space.split(b)

        def fn(X):
            U, C = space.split(X)
            val = -((U - bu) @ u)
            if w != 0.0:
                val = val + w * _cone_busemann(space.cone, C, th)
            return val

    prov = node("busemann", space=space.spec(), base=ray.base, through=ray.through)
    return _field(space, fn, b, outer, lip=1.0, prov=prov)


def busemann_approx_field(ray: RaySpec, t: float, outer: float = math.inf) -> ScalarField:
    if not t > 0:
        raise ValueError("t must be positive")
    space = ray.space
    G = ray.point_at(float(t))

    def fn(X):
        return space.dist(X, G) - t

    prov = node("busemannApprox", space=space.spec(), base=ray.base, through=ray.through, t=float(t))
    return _field(space, fn, np.array(ray.base), outer, lip=1.0, prov=prov)


# --------------------------------------------------------------------------
# algebra


def _same_space(fields):
    sp = fields[0].space
    for f in fields[1:]:
        if f.space != sp:
            raise TagMismatchError("fields live on different spaces")
    return sp


def affine_combine(coeffs: Sequence[tuple], constant: float = 0.0) -> ScalarField:
    """``constant + sum c_i f_i`` on the innermost domain among the inputs."""
    cs = [float(c) for c, _ in coeffs]
    fs = [f for _, f in coeffs]
    if not fs:
        raise ValueError("affine_combine needs at least one field")
    space = _same_space(fs)
    # domains are nested balls in every use; keep the smallest outer radius
    dom = min(fs, key=lambda f: f.outer)
    for f in fs:
        if f.center != dom.center and math.isfinite(f.outer):
            gap = space.dist(np.array(f.center), dom.center_array)
            if gap + dom.outer > f.outer * (1 + 1e-12):
                raise GeometryDomainError("empty or partial domain intersection")
    inner = max(f.inner for f in fs)
    if inner >= dom.outer:
        raise GeometryDomainError("empty domain intersection")

    def fn(X):
        acc = np.full(len(X), float(constant))
        for c, f in zip(cs, fs):
            if c != 0.0:
                acc = acc + c * f.fn(X)
        return acc

    lam = None
    if all(c >= 0 for c in cs) and all(f.claimed_concavity is not None for f, c in zip(fs, cs) if c > 0):
        lam = sum(c * f.claimed_concavity for c, f in zip(cs, fs) if c > 0)
    lip = None
    if all(f.claimed_lipschitz is not None for f, c in zip(fs, cs) if c != 0):
        lip = sum(abs(c) * f.claimed_lipschitz for c, f in zip(cs, fs) if c != 0)
    prov = node("affine", [f.provenance for f in fs], coeffs=cs, constant=float(constant))
    return _field(space, fn, dom.center, dom.outer, inner, lam, lip, prov)


def min_fields(entries: Sequence[tuple], center=None, outer=None) -> ScalarField:
    """Pointwise min over the fields whose effective ball contains the point.

    ``entries`` holds ``(field, (ball_center, ball_radius))`` pairs.  Points
    covered by no ball raise ``GeometryDomainError``.
    """
    fs = [f for f, _ in entries]
    space = _same_space(fs)
    balls = [(np.asarray(_coords(space, c), float), float(r)) for _, (c, r) in entries]

    def fn(X):
        out = np.full(len(X), np.inf)
        for f, (c, r) in zip(fs, balls):
            inside = space.dist(X, c) <= r
            if inside.any():
                idx = np.nonzero(inside)[0]
                out[idx] = np.minimum(out[idx], f.fn(X[idx]))
        if np.isinf(out).any():
            raise GeometryDomainError("point outside every effective ball")
        return out

    if center is None:
        center, outer = balls[0][0], balls[0][1]
        for c, r in balls[1:]:
            outer = max(outer, float(space.dist(c, center)) + r)
    prov = node(
        "min", [f.provenance for f in fs],
        balls=[[c.tolist(), r] for c, r in balls], certificate="pending",
    )
    lams = [f.claimed_concavity for f in fs]
    lam = max(lams) if all(l is not None for l in lams) else None
    lips = [f.claimed_lipschitz for f in fs]
    lip = max(lips) if all(l is not None for l in lips) else None
    return _field(space, fn, _coords(space, center), outer, 0.0, lam, lip, prov)


@dataclass(frozen=True)
class RealC2Function:
    """A C^2 real function with derivative bounds used for bookkeeping."""

    f: Callable
    d1: Callable
    d2: Callable
    domain: tuple = (-math.inf, math.inf)
    bounds: Optional[dict] = None  # min_d1, max_d1, max_d2
    name: str = "phi"
    params: dict = dc_field(default_factory=dict)

    def __call__(self, x):
        return self.f(x)


def shift(c: float) -> RealC2Function:
    return RealC2Function(
        lambda x: np.asarray(x, float) + c, lambda x: np.ones_like(np.asarray(x, float)),
        lambda x: np.zeros_like(np.asarray(x, float)),
        bounds={"min_d1": 1.0, "max_d1": 1.0, "max_d2": 0.0}, name="shift", params={"c": c},
    )


IDENTITY = shift(0.0)


def compose_real(fld: ScalarField, phi: RealC2Function) -> ScalarField:
    lo, hi = phi.domain

    def fn(X):
        v = fld.fn(X)
        if np.any(v < lo) or np.any(v > hi):
            raise RangeError(f"field value escapes the domain of {phi.name}")
        return phi(v)

    lam = None
    if phi.bounds and fld.claimed_concavity is not None and fld.claimed_lipschitz is not None:
        b = phi.bounds
        l = fld.claimed_concavity
        slope = b["min_d1"] if l < 0 else b["max_d1"]
        lam = max(b["max_d2"], 0.0) * fld.claimed_lipschitz ** 2 + slope * l
    lip = None
    if phi.bounds and fld.claimed_lipschitz is not None:
        lip = max(abs(phi.bounds["min_d1"]), abs(phi.bounds["max_d1"])) * fld.claimed_lipschitz
    prov = node("compose", [fld.provenance], phi=phi.name, **phi.params)
    return _field(fld.space, fn, fld.center, fld.outer, fld.inner, lam, lip, prov)


def dilate(space: ModelSpace, X, s: float) -> np.ndarray:
    """Metric dilation by ``s`` about the origin / apex (an isometry onto ``s * space``)."""
    X = np.array(X, float)
    if isinstance(space, Euclidean):
        return X * s
    if isinstance(space, Cone):
        X[..., 0] *= s
        return X
    X[..., : space.k] *= s
    X[..., space.k] *= s
    return X


def rescale_pullback(fld: ScalarField, scale: float) -> ScalarField:
    """Read ``fld`` in the metric scaled by ``scale``: ``g(D_s x) = s^2 f(x)``."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    s = float(scale)
    space = fld.space
    if s == 1.0:
        return fld

    def fn(X):
        return s * s * fld.fn(dilate(space, X, 1.0 / s))

    lip = None if fld.claimed_lipschitz is None else fld.claimed_lipschitz * s
    prov = node("rescale", [fld.provenance], scale=s)
    return _field(
        space, fn, dilate(space, fld.center_array, s), fld.outer * s, fld.inner * s,
        fld.claimed_concavity, lip, prov,
    )


# --------------------------------------------------------------------------
# regions


@dataclass
class ConvexRegion:
    """``{defining_field >= level}`` united with a core ball.

    ``polar`` holds the boundary as radii on a uniform angle grid around the
    core centre (angles in ``[0, period)``); ``boundary`` is the matching closed
    polyline in space coordinates.
    """

    space: ModelSpace
    defining_field: Optional[ScalarField]
    level: float
    core_center: tuple
    core_radius: float
    polar: tuple  # (angles, radii)
    level_tolerance: float = 0.0

    @property
    def period(self) -> float:
        return self.space.alpha if isinstance(self.space, Cone) else 2 * math.pi

    @property
    def boundary(self) -> np.ndarray:
        th, r = self.polar
        th = np.append(th, th[0])
        r = np.append(r, r[0])
        if isinstance(self.space, Cone):
            return self.space.normalize(np.stack([r, th], axis=-1))
        c = np.array(self.core_center)
        return np.stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)], axis=-1)

    def to_polar(self, X):
        X = np.asarray(X, float)
        if isinstance(self.space, Cone):
            return X[..., 0], X[..., 1]
        c = np.array(self.core_center)
        return (np.hypot(X[..., 0] - c[0], X[..., 1] - c[1]),
                np.mod(np.arctan2(X[..., 1] - c[1], X[..., 0] - c[0]), 2 * math.pi))

    def radius_at(self, theta):
        return _periodic_spline(self)(np.mod(theta, self.period))

    def contains(self, X, slack: float = 0.0) -> np.ndarray:
        X = np.asarray(X, float)
        core = self.space.dist(X, np.array(self.core_center)) <= self.core_radius
        out = core.copy()
        rest = ~core
        if rest.any():
            idx = np.nonzero(rest)[0]
            if self.defining_field is None:
                r, th = self.to_polar(X[idx])
                out[idx] = r <= self.radius_at(th) + slack
            else:
                out[idx] = self.defining_field.fn(X[idx]) >= self.level - slack
        return out


def _periodic_spline(region: ConvexRegion):
    cached = region.__dict__.get("_spline")
    if cached is None or cached[0] is not region.polar:
        th, r = region.polar
        cs = CubicSpline(np.append(th, th[0] + region.period), np.append(r, r[0]), bc_type="periodic")
        cached = (region.polar, cs)
        region.__dict__["_spline"] = cached
    return cached[1]


def boundary_dist_field(region: ConvexRegion, newton_steps: int = 3, chunk: int = 1024) -> ScalarField:
    """Distance to the boundary curve of a star-shaped planar or conical region.

    The boundary is the periodic C^2 cubic spline through the polar samples.
    The nearest sample is found by brute force and refined by safeguarded
    Newton steps on the squared distance in the development around the
    query point, which resolves the curvature of the boundary.
    """
    space = region.space
    if not isinstance(space, (Euclidean, Cone)) or space.coord_dim != 2:
        raise TypeError("boundary distance is implemented for planar spaces and cones")
    th_s, r_s = (np.asarray(a, float) for a in region.polar)
    if len(th_s) < 3:
        raise GeometryDomainError("region has an empty boundary sample set")
    cs = _periodic_spline(region)
    c1, c2 = cs.derivative(1), cs.derivative(2)
    period = region.period
    h = period / len(th_s)
    V = region.boundary[:-1]
    M = len(V)
    stride = max(1, M // 256)
    offs = np.arange(-2 * stride, 2 * stride + 1)

    def fn(X):
        X = np.asarray(X, float)
        out = np.empty(len(X))
        for s in range(0, len(X), chunk):
            Q = X[s : s + chunk]
            # coarse nearest sample on a strided subset, then the exact one nearby
            dc = space.dist(Q[:, None, :], V[None, ::stride, :])
            jc = np.argmin(dc, axis=1) * stride
            idx = (jc[:, None] + offs[None, :]) % M
            dv = space.dist(Q[:, None, :], V[idx])
            k = np.argmin(dv, axis=1)
            j0 = idx[np.arange(len(Q)), k]
            best = dv[np.arange(len(Q)), k]
            rq, tq = region.to_polar(Q)
            phi = _wrap(th_s[j0] - tq, period)
            for _ in range(newton_steps):
                t = np.mod(tq + phi, period)
                r, r1, r2 = cs(t), c1(t), c2(t)
                co, si = np.cos(phi), np.sin(phi)
                ux, uy = r * co - rq, r * si
                dx, dy = r1 * co - r * si, r1 * si + r * co
                ex, ey = r2 * co - 2 * r1 * si - r * co, r2 * si + 2 * r1 * co - r * si
                g1 = ux * dx + uy * dy
                g2 = dx * dx + dy * dy + ux * ex + uy * ey
                step = np.where(g2 > 0, -g1 / np.where(g2 > 0, g2, 1.0), 0.0)
                phi = phi + np.clip(step, -2 * h, 2 * h)
            t = np.mod(tq + phi, period)
            r = cs(t)
            dn = np.hypot(r * np.cos(phi) - rq, r * np.sin(phi))
            out[s : s + chunk] = np.where(np.abs(phi) < 0.5 * math.pi, np.minimum(best, dn), best)
        return out

    spacing = float(np.max(space.dist(V, np.roll(V, -1, axis=0))))
    prov = node("boundaryDist", space=space.spec(), samples=len(th_s), spacing=spacing, newtonSteps=newton_steps)
    return _field(space, fn, region.core_center, math.inf, lip=1.0, prov=prov)


def _wrap(a, period):
    return np.mod(a + 0.5 * period, period) - 0.5 * period
