"""Sampling-based certification: midpoint concavity, Lipschitz bounds,
sandwich bounds, explosions and lift stability.

All sampling is generated up front from a single seeded generator, then
evaluated in chunks that may run on a thread pool. Merging keeps the first
index among equal minima, so reports do not depend on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .fields import ScalarField, _num
from .spaces import (
    Cone,
    DirectionSpace,
    Euclidean,
    GeometryDomainError,
    GhApprox,
    ModelSpace,
    _coords,
)

CERT_TOL = 1e-9
ROUNDING_ULPS = 16
CHUNK = 2048


class PreconditionError(ValueError):
    pass


def _map_chunks(fn, n: int, workers: int = 1, chunk: int = CHUNK):
    spans = [(s, min(n, s + chunk)) for s in range(0, n, chunk)]
    if workers <= 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda ab: fn(*ab), spans))


# --------------------------------------------------------------------------
# pair sampling


def local_partners(space: ModelSpace, X, scale, rng):
    """Points at distance up to ``scale`` from each row of ``X`` via the planar chart.

    Returns the partners and a mask of rows whose chart step was valid.
    """
    n = len(X)
    d = space.coord_dim if not isinstance(space, Cone) else 2
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    V = g * (scale * rng.random(n) ** (1.0 / d))[:, None]
    if isinstance(space, Euclidean):
        return X + V, np.ones(n, bool)
    if isinstance(space, Cone):
        return _cone_step(space, X, V)
    U, C = space.split(X)
    Cn, ok = _cone_step(space.cone, C, V[:, space.k:])
    return space.join(U + V[:, : space.k], Cn), ok


def _cone_step(cone: Cone, C, V):
    qx = C[:, 0] + V[:, 0]
    qy = V[:, 1]
    phi = np.arctan2(qy, qx)
    ok = (np.abs(phi) < 0.5 * cone.alpha) | (cone.alpha >= 2 * math.pi)
    out = np.stack([np.hypot(qx, qy), C[:, 1] + phi], axis=-1)
    return cone.normalize(out), ok


def sample_pairs(
    space: ModelSpace, center, inner: float, outer: float, count: int, seed: int,
    local_fraction: float = 0.5, path_checks: int = 9,
):
    """Endpoint pairs in the annulus whose chosen geodesic stays inside it.

    A ``local_fraction`` of the pairs has the second endpoint in a small
    ball around the first, at log-uniform scales between ``1e-3`` and
    ``0.3`` of ``outer``; the rest are independent uniform endpoints.
    """
    rng = np.random.default_rng(seed)
    c = np.asarray(center, float)
    ts = np.linspace(0.0, 1.0, path_checks)
    got_x, got_y = [], []
    have = 0
    while have < count:
        m = max(256, 2 * (count - have))
        X = space.sample_ball(c, outer, m, rng)
        Yg = space.sample_ball(c, outer, m, rng)
        # local partners: uniform in a ball around x, in the chart of the ambient ball
        scale = outer * 10.0 ** rng.uniform(-3.0, math.log10(0.3), m)
        Yl, valid = local_partners(space, X, scale, rng)
        use_local = rng.random(m) < local_fraction
        Y = np.where(use_local[:, None], Yl, Yg)
        ok = valid | ~use_local
        for t in ts:
            P = space.geodesic(X, Y, t)
            d = space.dist(P, c)
            ok &= (d <= outer * (1 + 1e-12)) & (d >= inner)
        ok &= space.dist(X, Y) > 0
        got_x.append(X[ok])
        got_y.append(Y[ok])
        have += int(ok.sum())
    return np.concatenate(got_x)[:count], np.concatenate(got_y)[:count]


# --------------------------------------------------------------------------
# concavity


def midpoint_defect(fld: ScalarField, x, y, m, lam: float, check: bool = True):
    """``2 f(m) - f(x) - f(y) + lam |xy|^2 / 4`` (batched or single)."""
    space = fld.space
    X, Y, M = (np.asarray(_coords(space, z), float) for z in (x, y, m))
    single = X.ndim == 1
    X, Y, M = np.atleast_2d(X), np.atleast_2d(Y), np.atleast_2d(M)
    d = space.dist(X, Y)
    if check:
        dm1, dm2 = space.dist(X, M), space.dist(M, Y)
        bad = (np.abs(dm1 - d / 2) > 1e-10 * (1 + d)) | (np.abs(dm2 - d / 2) > 1e-10 * (1 + d))
        if bad.any():
            raise PreconditionError("m is not a midpoint of x and y")
    val = 2 * fld.fn(M) - fld.fn(X) - fld.fn(Y) + lam * d * d / 4
    return float(val[0]) if single else val


@dataclass
class ConcavityReport:
    field_provenance: dict
    lam: float
    triple_count: int
    worst_margin: float
    witness: list
    seed: int
    tolerance: float
    certified: bool
    kind: str = "concavity"

    def to_dict(self):
        return _num({
            "kind": self.kind, "fieldProvenance": self.field_provenance, "lambda": self.lam,
            "tripleCount": self.triple_count, "worstMargin": self.worst_margin,
            "witness": self.witness, "seed": self.seed, "tolerance": self.tolerance,
            "certified": self.certified,
        })


def _argmin_first(vals):
    i = int(np.argmin(vals))
    return i, float(vals[i])


def concavity_check(
    fld: ScalarField, lam: float, sample_count: int = 10_000, seed: int = 0,
    workers: int = 1, tolerance_scale: float = 1.0, pairs=None,
) -> ConcavityReport:
    space = fld.space
    if pairs is None:
        X, Y = sample_pairs(space, fld.center_array, fld.inner, fld.outer, sample_count, seed)
    else:
        X, Y = pairs
    n = len(X)
    fX = np.concatenate(_map_chunks(lambda a, b: fld.fn(X[a:b]), n, workers))
    fY = np.concatenate(_map_chunks(lambda a, b: fld.fn(Y[a:b]), n, workers))
    d = space.dist(X, Y)
    branches, masks = space.midpoint_branches(X, Y)
    worst = np.full(n, np.inf)
    wit_m = branches[0].copy()
    for M, mask in zip(branches, masks):
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            continue
        Mi = M[idx]
        fM = np.concatenate(_map_chunks(lambda a, b: fld.fn(Mi[a:b]), len(idx), workers))
        defect = 2 * fM - fX[idx] - fY[idx] + lam * d[idx] ** 2 / 4
        better = defect < worst[idx]
        worst[idx[better]] = defect[better]
        wit_m[idx[better]] = Mi[better]
    i, wm = _argmin_first(worst)
    scale = fld.outer if math.isfinite(fld.outer) else 1.0
    # rounding floor: fields on tiny balls can carry O(1) offsets
    mag = max(float(np.max(np.abs(fX))), float(np.max(np.abs(fY)))) if n else 0.0
    tol = CERT_TOL * tolerance_scale * scale * scale + ROUNDING_ULPS * np.finfo(float).eps * mag
    return ConcavityReport(
        fld.provenance, float(lam), n, wm,
        [X[i].tolist(), Y[i].tolist(), wit_m[i].tolist()], int(seed), tol, bool(wm >= -tol),
    )


def lipschitz_estimate(fld: ScalarField, sample_count: int = 10_000, seed: int = 0, workers: int = 1) -> float:
    X, Y = sample_pairs(fld.space, fld.center_array, fld.inner, fld.outer, sample_count, seed, path_checks=2)
    fX = np.concatenate(_map_chunks(lambda a, b: fld.fn(X[a:b]), len(X), workers))
    fY = np.concatenate(_map_chunks(lambda a, b: fld.fn(Y[a:b]), len(Y), workers))
    d = fld.space.dist(X, Y)
    return float(np.max(np.abs(fX - fY) / d))


# --------------------------------------------------------------------------
# sandwich


@dataclass
class SandwichReport:
    lower_slack: float  # min over samples of (f + d^2) / d^2
    upper_slack: float  # min over samples of (-(1 - 2 eps) d^2 - f) / d^2
    lower_witness: list
    upper_witness: list
    sample_count: int
    epsilon: float
    inner: float
    outer: float
    seed: int
    tolerance: float
    holds: bool
    kind: str = "sandwich"

    def to_dict(self):
        return _num({
            "kind": self.kind, "lowerSlack": self.lower_slack, "upperSlack": self.upper_slack,
            "lowerWitness": self.lower_witness, "upperWitness": self.upper_witness,
            "sampleCount": self.sample_count, "epsilon": self.epsilon, "inner": self.inner,
            "outer": self.outer, "seed": self.seed, "tolerance": self.tolerance, "holds": self.holds,
        })


def sandwich_slacks(fld: ScalarField, p, eps: float, X):
    P = _coords(fld.space, p)
    d2 = fld.space.dist(X, P) ** 2
    f = fld.fn(X)
    return (f + d2) / d2, (-(1 - 2 * eps) * d2 - f) / d2


def sandwich_check(
    fld: ScalarField, p, eps: float, inner: float, outer: float,
    sample_count: int = 2000, seed: int = 0, tolerance_scale: float = 1.0,
) -> SandwichReport:
    space = fld.space
    P = _coords(space, p)
    rng = np.random.default_rng(seed)
    pts = []
    have = 0
    while have < sample_count:
        X = space.sample_ball(P, outer, 2 * sample_count, rng)
        X = X[space.dist(X, P) >= inner]
        pts.append(X)
        have += len(X)
    X = np.concatenate(pts)[:sample_count]
    lo, up = sandwich_slacks(fld, P, eps, X)
    il, vl = _argmin_first(lo)
    iu, vu = _argmin_first(up)
    tol = CERT_TOL * tolerance_scale
    return SandwichReport(
        vl, vu, X[il].tolist(), X[iu].tolist(), len(X), float(eps), float(inner), float(outer),
        int(seed), tol, bool(vl >= -tol and vu >= -tol),
    )


# --------------------------------------------------------------------------
# explosions


@dataclass
class Explosion:
    direction_space: DirectionSpace
    pairs: list  # [(A_i rows, B_i rows)]
    delta: float = 0.0


def _set_dist(ds: DirectionSpace, A, B) -> float:
    A, B = np.atleast_1d(np.asarray(A, float)), np.atleast_1d(np.asarray(B, float))
    if ds.kind == "sphere":
        A, B = np.atleast_2d(A), np.atleast_2d(B)
        return float(np.min(ds.dist(A[:, None, :], B[None, :, :])))
    return float(np.min(ds.dist(A[:, None], B[None, :])))


def explosion_check(ex: Explosion):
    """Return ``(ok, worst)`` where ``worst`` describes the tightest constraint."""
    if not ex.pairs or any(len(np.atleast_1d(a)) == 0 or len(np.atleast_1d(b)) == 0 for a, b in ex.pairs):
        raise ValueError("explosion has empty direction sets")
    ds, d = ex.direction_space, ex.delta
    worst = {"slack": math.inf}

    def consider(slack, what):
        nonlocal worst
        if slack < worst["slack"]:
            worst = {"slack": slack, "constraint": what}

    k = len(ex.pairs)
    for i, (A, B) in enumerate(ex.pairs):
        consider(_set_dist(ds, A, B) - (math.pi - d), f"|A{i}B{i}| >= pi - delta")
        for j in range(k):
            if i == j:
                continue
            Aj, Bj = ex.pairs[j]
            if j > i:
                consider(_set_dist(ds, A, Aj) - (math.pi / 2 - d), f"|A{i}A{j}| >= pi/2 - delta")
                consider(_set_dist(ds, B, Bj) - (math.pi / 2 - d), f"|B{i}B{j}| >= pi/2 - delta")
            consider(_set_dist(ds, A, Bj) - (math.pi / 2 - d), f"|A{i}B{j}| >= pi/2 - delta")
    return worst["slack"] >= -1e-15, worst


def bgp_defect(ex: Explosion, direction) -> float:
    ds = ex.direction_space
    total = 0.0
    for A, _ in ex.pairs:
        total += math.cos(_set_dist(ds, np.atleast_2d(direction) if ds.kind == "sphere" else direction, A)) ** 2
    return abs(total - 1.0)


def bgp_defects(ex: Explosion, directions) -> np.ndarray:
    """Vectorized ``bgp_defect`` over rows of unit vectors (sphere case)."""
    D = np.asarray(directions, float)
    ds = ex.direction_space
    total = np.zeros(len(D))
    for A, _ in ex.pairs:
        A = np.atleast_2d(np.asarray(A, float))
        total += np.cos(np.min(ds.dist(D[:, None, :], A[None, :, :]), axis=1)) ** 2
    return np.abs(total - 1.0)


def orthonormal_explosion(dim: int = 2) -> Explosion:
    from .spaces import unit_sphere

    n = dim + 1
    pairs = [(np.eye(n)[i][None, :], -np.eye(n)[i][None, :]) for i in range(n)]
    return Explosion(unit_sphere(dim), pairs, 0.0)


def perturbed_explosion(delta: float, seed: int = 0, dim: int = 2) -> Explosion:
    """Orthonormal explosion with every element moved by an angle of ``delta / 2``."""
    from .spaces import unit_sphere

    rng = np.random.default_rng(seed)
    n = dim + 1
    pairs = []
    for i in range(n):
        row = []
        for sgn in (1.0, -1.0):
            e = sgn * np.eye(n)[i]
            g = rng.standard_normal(n)
            g -= (g @ e) * e
            g /= np.linalg.norm(g)
            row.append((math.cos(delta / 2) * e + math.sin(delta / 2) * g)[None, :])
        pairs.append(tuple(row))
    return Explosion(unit_sphere(dim), pairs, float(delta))


# --------------------------------------------------------------------------
# lift stability


@dataclass
class LiftEntry:
    target: str
    distortion_bound: float
    certified_lambda: Optional[float]
    concavity: Optional[dict]
    sandwich_slack: Optional[float]
    measured_aleph: Optional[float]
    failure: Optional[str] = None


@dataclass
class LiftStabilityReport:
    base: str
    entries: list = dc_field(default_factory=list)
    kind: str = "liftStability"

    def to_dict(self):
        return _num({"kind": self.kind, "base": self.base, "entries": [asdict(e) for e in self.entries]})

    @property
    def all_certified(self) -> bool:
        return all(e.failure is None and e.certified_lambda is not None for e in self.entries)


def measured_aleph(fld: ScalarField, p, eps: float, outer: float, sample_count: int = 1000, seed: int = 0,
                   grid: Sequence[float] = tuple(2.0 ** (-k / 4) for k in range(4, 41))) -> float:
    """Smallest ``rho`` on the grid with the sandwich holding on ``B_R minus B_{rho R}``.

    Uses one fixed sample set; ``rho`` is the smallest grid value above the
    largest radius fraction among failing samples.
    """
    space = fld.space
    P = _coords(space, p)
    rng = np.random.default_rng(seed)
    X = space.sample_ball(P, outer, sample_count, rng)
    # log-uniform radii resolve the small-scale end of the grid
    frac = np.asarray(grid, float)
    d = space.dist(X, P)
    X = X[d > 0]
    lo, up = sandwich_slacks(fld, P, eps, X)
    fail = (lo < -CERT_TOL) | (up < -CERT_TOL)
    if not fail.any():
        return float(frac.min())
    worst = float(np.max(space.dist(X[fail], P))) / outer
    ok = frac[frac > worst]
    return float(ok.min()) if len(ok) else 1.0


def lift_stability_audit(
    build: Callable, approx_sequence: Sequence[GhApprox], eps: float, base_label: str = "",
    sample_count: int = 10_000, seed: int = 0, workers: int = 1, aleph_samples: int = 1000,
) -> LiftStabilityReport:
    """Rebuild via ``build(approx) -> (field, p, R)`` on each target and certify.

    Anchor placement failures are recorded on the entry instead of raised.
    """
    rep = LiftStabilityReport(base_label)
    for approx in approx_sequence:
        tgt = approx.target.spec()
        try:
            fld, p, R = build(approx)
        except GeometryDomainError as exc:
            rep.entries.append(LiftEntry(tgt, approx.distortion_bound, None, None, None, None, str(exc)))
            continue
        lam = -2.0 + eps
        cr = concavity_check(fld, lam, sample_count, seed, workers)
        sw = sandwich_check(fld, p, eps, R / 16, R, 2000, seed)
        aleph = measured_aleph(fld, p, eps, R, aleph_samples, seed)
        rep.entries.append(LiftEntry(
            tgt, approx.distortion_bound, lam if cr.certified else None, cr.to_dict(),
            min(sw.lower_slack, sw.upper_slack), aleph,
            None if (cr.certified and sw.holds) else "certificate refused",
        ))
    return rep
