"""Closed-form metric geometry for Euclidean spaces, flat cones and their products.

Points are handled in batches as float arrays of shape ``(..., d)``:

* ``Euclidean(n)``: ``d = n`` Cartesian coordinates.
* ``Cone(alpha)``: ``d = 2``, columns ``(r, theta)`` with ``theta`` in ``[0, alpha)``.
* ``Product(k, alpha)``: ``d = k + 2``, the flat vector followed by ``(r, theta)``.

``SpacePoint`` wraps a single point together with its space for the
scalar-facing API.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi
# relative slack used to decide that an angular gap sits exactly on the cut
GAP_TOL = 1e-12


class TagMismatchError(ValueError):
    pass


class GeometryDomainError(ValueError):
    pass


class SpaceSpecError(ValueError):
    pass


# --------------------------------------------------------------------------
# spaces


@dataclass(frozen=True)
class Euclidean:
    dim: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise SpaceSpecError(f"euclidean dimension must be >= 1, got {self.dim}")

    @property
    def coord_dim(self) -> int:
        return self.dim

    @property
    def dimension(self) -> int:
        return self.dim

    def spec(self) -> str:
        return f"euclidean:{self.dim}"

    def origin(self) -> np.ndarray:
        return np.zeros(self.dim)

    def normalize(self, X):
        return np.asarray(X, dtype=float)

    def dist(self, X, Y):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        return np.linalg.norm(X - Y, axis=-1)

    def geodesic(self, X, Y, t):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        t = np.asarray(t, float)[..., None]
        return X + t * (Y - X)

    def midpoint_branches(self, X, Y):
        return [self.geodesic(X, Y, 0.5)], [np.ones(np.shape(X)[:-1], bool)]

    def log(self, P, X):
        return np.asarray(X, float) - np.asarray(P, float)

    def exp(self, P, V):
        return np.asarray(P, float) + np.asarray(V, float)

    def sample_ball(self, center, radius, count, rng):
        n = self.dim
        g = rng.standard_normal((count, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = radius * rng.random(count) ** (1.0 / n)
        return np.asarray(center, float) + g * rad[:, None]


@dataclass(frozen=True)
class Cone:
    """Euclidean cone over a circle of length ``alpha``."""

    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a <= TWO_PI * (1 + 1e-15)) or not math.isfinite(a):
            raise SpaceSpecError(f"cone angle must lie in (0, 2*pi], got {self.alpha}")
        object.__setattr__(self, "alpha", min(a, TWO_PI))

    coord_dim = 2
    dimension = 2

    def spec(self) -> str:
        return f"cone:{self.alpha!r}"

    def origin(self) -> np.ndarray:
        return np.zeros(2)

    def normalize(self, X):
        X = np.array(X, dtype=float)
        r = X[..., 0]
        th = np.mod(X[..., 1], self.alpha)
        th = np.where(th >= self.alpha, 0.0, th)
        th = np.where(r == 0.0, 0.0, th)
        X[..., 1] = th
        return X

    def signed_gap(self, th1, th2):
        """Signed angular offset from ``th1`` to ``th2`` in ``(-alpha/2, alpha/2]``.

        A gap of exactly half the circle resolves to the positive side, which
        is the increasing-angle tie-break used for geodesics.
        """
        a = self.alpha
        d = np.mod(np.asarray(th2, float) - np.asarray(th1, float), a)
        half = 0.5 * a
        return np.where(d <= half * (1 + GAP_TOL), d, d - a)

    def gap(self, th1, th2):
        return np.abs(self.signed_gap(th1, th2))

    def dist(self, X, Y):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        r1, r2 = X[..., 0], Y[..., 0]
        s = np.minimum(self.gap(X[..., 1], Y[..., 1]), math.pi)
        # stable law of cosines
        return np.sqrt((r1 - r2) ** 2 + 4.0 * r1 * r2 * np.sin(0.5 * s) ** 2)

    def _unroll_point(self, X, Y, t, sigma):
        r1, r2 = X[..., 0], Y[..., 0]
        px = (1 - t) * r1 + t * r2 * np.cos(sigma)
        py = t * r2 * np.sin(sigma)
        r = np.hypot(px, py)
        phi = np.arctan2(py, px)
        # radial case: when one endpoint is the apex, follow the other ray
        th = np.where(r1 == 0.0, Y[..., 1], X[..., 1] + phi)
        out = np.stack([r, th], axis=-1)
        return self.normalize(out)

    def geodesic(self, X, Y, t):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        t = np.asarray(t, float)
        sigma = self.signed_gap(X[..., 1], Y[..., 1])
        return self._unroll_point(X, Y, t, sigma)

    def midpoint_branches(self, X, Y):
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        sigma = self.signed_gap(X[..., 1], Y[..., 1])
        m1 = self._unroll_point(X, Y, 0.5, sigma)
        on_cut = np.abs(np.abs(sigma) - 0.5 * self.alpha) <= GAP_TOL * self.alpha
        m2 = self._unroll_point(X, Y, 0.5, -sigma)
        differ = on_cut & (self.dist(m1, m2) > 1e-12 * (1 + X[..., 0] + Y[..., 0]))
        return [m1, m2], [np.ones(X.shape[:-1], bool), differ]

    def log(self, P, X):
        """Development of ``X`` in the chart centred on the non-apex point ``P``."""
        P, X = np.asarray(P, float), np.asarray(X, float)
        r0 = P[..., 0]
        if np.any(r0 == 0.0):
            raise GeometryDomainError("log chart requires a non-apex base point")
        sig = self.signed_gap(P[..., 1], X[..., 1])
        r = X[..., 0]
        return np.stack([r * np.cos(sig) - r0, r * np.sin(sig)], axis=-1)

    def exp(self, P, V):
        """Inverse of ``log``; defined on the open developed sector around ``P``."""
        P, V = np.asarray(P, float), np.asarray(V, float)
        r0 = P[..., 0]
        if np.any(r0 == 0.0):
            raise GeometryDomainError("exp chart requires a non-apex base point")
        qx = r0 + V[..., 0]
        qy = V[..., 1]
        phi = np.arctan2(qy, qx)
        r = np.hypot(qx, qy)
        bad = (np.abs(phi) >= 0.5 * self.alpha) & (self.alpha < TWO_PI)
        if np.any(bad):
            raise GeometryDomainError("exp outside the developed sector of the chart")
        return self.normalize(np.stack([r, P[..., 1] + phi], axis=-1))

    def injectivity_radius(self, P) -> float:
        r0 = float(np.asarray(P, float)[0])
        if r0 == 0.0:
            return math.inf
        return r0 * math.sin(min(0.5 * self.alpha, 0.5 * math.pi))

    def sample_ball(self, center, radius, count, rng):
        c = np.asarray(center, float)
        rc, thc = float(c[0]), float(c[1])
        a = self.alpha
        out = []
        got = 0
        if rc <= radius:
            half = 0.5 * a if rc > 0 else None
        while got < count:
            m = max(64, 2 * (count - got))
            if rc == 0.0:
                r = radius * np.sqrt(rng.random(m))
                th = a * rng.random(m)
                pts = np.stack([r, th], axis=-1)
                out.append(pts)
                got += m
                continue
            lo = max(0.0, rc - radius)
            hi = rc + radius
            w = math.asin(radius / rc) if radius < rc else half
            r = lo + (hi - lo) * rng.random(m)
            sig = w * (2.0 * rng.random(m) - 1.0)
            keep = rng.random(m) * hi <= r
            px, py = r * np.cos(sig) - rc, r * np.sin(sig)
            keep &= px * px + py * py <= radius * radius
            pts = np.stack([r[keep], thc + sig[keep]], axis=-1)
            out.append(pts)
            got += len(pts)
        return self.normalize(np.concatenate(out)[:count])


@dataclass(frozen=True)
class Product:
    """``R^k x Cone(alpha)``."""

    k: int
    alpha: float
    cone: Cone = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.k) < 1:
            raise SpaceSpecError(f"flat dimension must be >= 1, got {self.k}")
        object.__setattr__(self, "cone", Cone(self.alpha))
        object.__setattr__(self, "alpha", self.cone.alpha)

    @property
    def coord_dim(self) -> int:
        return self.k + 2

    @property
    def dimension(self) -> int:
        return self.k + 2

    def spec(self) -> str:
        return f"product:{self.k}:cone:{self.alpha!r}"

    def origin(self) -> np.ndarray:
        return np.zeros(self.k + 2)

    def split(self, X):
        X = np.asarray(X, float)
        return X[..., : self.k], X[..., self.k :]

    def join(self, U, C):
        return np.concatenate([U, C], axis=-1)

    def normalize(self, X):
        U, C = self.split(X)
        return self.join(U, self.cone.normalize(C))

    def dist(self, X, Y):
        U1, C1 = self.split(X)
        U2, C2 = self.split(Y)
        df = np.linalg.norm(U1 - U2, axis=-1)
        return np.hypot(df, self.cone.dist(C1, C2))

    def geodesic(self, X, Y, t):
        U1, C1 = self.split(X)
        U2, C2 = self.split(Y)
        tt = np.asarray(t, float)
        return self.join(U1 + tt[..., None] * (U2 - U1), self.cone.geodesic(C1, C2, tt))

    def midpoint_branches(self, X, Y):
        U1, C1 = self.split(X)
        U2, C2 = self.split(Y)
        mu = 0.5 * (U1 + U2)
        ms, masks = self.cone.midpoint_branches(C1, C2)
        return [self.join(mu, m) for m in ms], masks

    def sample_ball(self, center, radius, count, rng):
        u0, c0 = self.split(center)
        flat = Euclidean(self.k)
        out, got = [], 0
        while got < count:
            m = max(64, 3 * (count - got))
            U = flat.sample_ball(u0, radius, m, rng)
            C = self.cone.sample_ball(c0, radius, m, rng)
            d2 = np.sum((U - u0) ** 2, axis=1) + self.cone.dist(C, c0) ** 2
            keep = d2 <= radius * radius
            out.append(self.join(U[keep], C[keep]))
            got += int(keep.sum())
        return np.concatenate(out)[:count]


ModelSpace = Union[Euclidean, Cone, Product]


def parse_space(spec: str) -> ModelSpace:
    """Parse ``euclidean:<n>``, ``cone:<alpha>`` or ``product:<k>:cone:<alpha>``."""
    parts = str(spec).strip().split(":")
    try:
        if parts[0] == "euclidean" and len(parts) == 2:
            return Euclidean(int(parts[1]))
        if parts[0] == "cone" and len(parts) == 2:
            return Cone(float(parts[1]))
        if parts[0] == "product" and len(parts) == 4 and parts[2] == "cone":
            return Product(int(parts[1]), float(parts[3]))
    except ValueError as exc:
        raise SpaceSpecError(f"bad space spec {spec!r}: {exc}") from None
    raise SpaceSpecError(f"bad space spec {spec!r}")


# --------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class SpacePoint:
    space: ModelSpace
    coords: tuple

    def __post_init__(self):
        c = np.asarray(self.coords, float).reshape(-1)
        if c.shape[0] != self.space.coord_dim:
            raise TagMismatchError(
                f"{self.space.spec()} expects {self.space.coord_dim} coordinates, got {c.shape[0]}"
            )
        object.__setattr__(self, "coords", tuple(float(v) for v in self.space.normalize(c)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords)


def point(space: ModelSpace, *coords) -> SpacePoint:
    if len(coords) == 1 and np.ndim(coords[0]) == 1:
        coords = tuple(coords[0])
    return SpacePoint(space, tuple(coords))


def apex(space: ModelSpace) -> SpacePoint:
    return SpacePoint(space, tuple(space.origin()))


def _coords(space, x):
    if isinstance(x, SpacePoint):
        if x.space != space:
            raise TagMismatchError(f"point of {x.space.spec()} used in {space.spec()}")
        return x.array
    return np.asarray(x, float)


def dist(space: ModelSpace, x, y):
    d = space.dist(_coords(space, x), _coords(space, y))
    return float(d) if np.ndim(d) == 0 else d


def geodesic(space: ModelSpace, x, y, t: float) -> SpacePoint:
    c = space.geodesic(_coords(space, x), _coords(space, y), t)
    return SpacePoint(space, tuple(c))


def midpoints(space: ModelSpace, x, y) -> list[SpacePoint]:
    ms, masks = space.midpoint_branches(_coords(space, x), _coords(space, y))
    return [SpacePoint(space, tuple(m)) for m, ok in zip(ms, masks) if bool(ok)]


# --------------------------------------------------------------------------
# tangent structure


def _tangent_inner(space, P, A, B):
    """Inner products of initial directions at P; returns (<a,b>, |a|, |b|)."""
    if isinstance(space, Euclidean):
        va, vb = A - P, B - P
        return float(va @ vb), float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if isinstance(space, Cone):
        if P[0] == 0.0:
            s = float(np.minimum(space.gap(A[1], B[1]), math.pi))
            return A[0] * B[0] * math.cos(s), float(A[0]), float(B[0])
        va, vb = space.log(P, A), space.log(P, B)
        return float(va @ vb), float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    pu, pc = space.split(P)
    au, ac = space.split(A)
    bu, bc = space.split(B)
    ia, na, nb = _tangent_inner(space.cone, pc, ac, bc)
    fa, fb = au - pu, bu - pu
    dot = float(fa @ fb) + ia
    return dot, math.hypot(float(np.linalg.norm(fa)), na), math.hypot(float(np.linalg.norm(fb)), nb)


def angle(space: ModelSpace, vertex, a, b) -> float:
    """Angle at ``vertex`` between the chosen shortest paths towards ``a`` and ``b``."""
    P, A, B = (_coords(space, z) for z in (vertex, a, b))
    if space.dist(P, A) == 0.0 or space.dist(P, B) == 0.0:
        raise GeometryDomainError("angle undefined when an endpoint equals the vertex")
    dot, na, nb = _tangent_inner(space, P, A, B)
    return float(math.acos(max(-1.0, min(1.0, dot / (na * nb)))))


@dataclass(frozen=True)
class DirectionSpace:
    """Circle of length ``length`` or the unit sphere of dimension ``sphere_dim``."""

    kind: str  # "circle" or "sphere"
    length: float = TWO_PI
    sphere_dim: int = 2

    def dist(self, a, b):
        if self.kind == "circle":
            d = np.mod(np.abs(np.asarray(a, float) - np.asarray(b, float)), self.length)
            return np.minimum(d, self.length - d)
        a, b = np.asarray(a, float), np.asarray(b, float)
        c = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
        # atan2 form keeps precision near 0 and pi
        s = np.linalg.norm(np.cross(a, b), axis=-1) if a.shape[-1] == 3 else np.abs(
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        )
        return np.arctan2(s, c)


def circle(length: float) -> DirectionSpace:
    return DirectionSpace("circle", length=float(length))


def unit_sphere(dim: int) -> DirectionSpace:
    if dim not in (1, 2):
        raise ValueError("unit sphere dimension must be 1 or 2")
    return DirectionSpace("sphere", sphere_dim=dim)


@dataclass(frozen=True)
class TangentCone:
    space: ModelSpace
    log: Callable
    exp: Callable
    injectivity_radius: float


def tangent_cone(space: ModelSpace, p) -> TangentCone:
    """Tangent cone at ``p`` with chart maps acting on coordinate batches."""
    P = _coords(space, p)
    if isinstance(space, Euclidean):
        return TangentCone(space, lambda X: space.log(P, X), lambda V: space.exp(P, V), math.inf)
    if isinstance(space, Cone):
        if P[0] == 0.0:
            ident = lambda X: space.normalize(X)
            return TangentCone(space, ident, ident, math.inf)
        return TangentCone(
            Euclidean(2), lambda X: space.log(P, X), lambda V: space.exp(P, V),
            space.injectivity_radius(P),
        )
    pu, pc = space.split(P)
    if pc[0] == 0.0:
        # axis point: the tangent cone is the product itself, translated in the flat factor
        def log(X):
            U, C = space.split(X)
            return space.join(U - pu, space.cone.normalize(C))

        def exp(V):
            U, C = space.split(V)
            return space.join(U + pu, space.cone.normalize(C))

        return TangentCone(space, log, exp, math.inf)
    k = space.k

    def log(X):
        U, C = space.split(X)
        return np.concatenate([U - pu, space.cone.log(pc, C)], axis=-1)

    def exp(V):
        V = np.asarray(V, float)
        return space.join(V[..., :k] + pu, space.cone.exp(pc, V[..., k:]))

    return TangentCone(Euclidean(k + 2), log, exp, space.cone.injectivity_radius(pc))


# --------------------------------------------------------------------------
# Gromov-Hausdorff approximations within the cone family


@dataclass(frozen=True)
class GhApprox:
    source: Cone
    target: Cone
    point_map: Callable
    distortion_bound: float


def _polar_grid(radius: float, n_r: int = 24, n_t: int = 96, alpha: float = TWO_PI):
    rs = radius * (np.arange(1, n_r + 1) / n_r)
    ts = alpha * (np.arange(n_t) / n_t)
    R, T = np.meshgrid(rs, ts, indexing="ij")
    pts = np.stack([R.ravel(), T.ravel()], axis=-1)
    return np.concatenate([np.zeros((1, 2)), pts])


def measure_distortion(source: Cone, target: Cone, point_map, pts) -> float:
    i, j = np.triu_indices(len(pts), 1)
    d_s = source.dist(pts[i], pts[j])
    img = point_map(pts)
    d_t = target.dist(img[i], img[j])
    return float(np.max(np.abs(d_t - d_s))) if len(i) else 0.0


def gh_cone_approx(alpha_source: float, alpha_target: float, radius: float = 2.0) -> GhApprox:
    src, tgt = Cone(alpha_source), Cone(alpha_target)
    ratio = tgt.alpha / src.alpha

    def point_map(X):
        X = np.asarray(X, float)
        return tgt.normalize(np.stack([X[..., 0], X[..., 1] * ratio], axis=-1))

    if src.alpha == tgt.alpha:
        bound = 0.0
    else:
        bound = measure_distortion(src, tgt, point_map, _polar_grid(radius, alpha=src.alpha))
    return GhApprox(src, tgt, point_map, bound)


# --------------------------------------------------------------------------
# sampling


def sample_ball_array(space: ModelSpace, center, radius: float, count: int, seed: int) -> np.ndarray:
    if radius <= 0 or count < 1:
        raise ValueError("radius must be positive and count >= 1")
    rng = np.random.default_rng(seed)
    return space.sample_ball(_coords(space, center), float(radius), int(count), rng)


def sample_ball(space: ModelSpace, center, radius: float, count: int, seed: int) -> list[SpacePoint]:
    arr = sample_ball_array(space, center, radius, count, seed)
    return [SpacePoint(space, tuple(row)) for row in arr]


def as_points(space: ModelSpace, rows: Sequence) -> np.ndarray:
    return np.stack([_coords(space, r) for r in rows])
