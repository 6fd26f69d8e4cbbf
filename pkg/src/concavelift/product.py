"""Constructions around singular points: product-case patches, the patch-min
defining function of a convex region, the region itself, its boundary-distance
function and the resulting Theorem-B field at a cone apex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize.elementwise import find_root

from .construct import lift_mu, self_improve
from .fields import (
    ConvexRegion,
    RaySpec,
    ScalarField,
    _field,
    _num,
    boundary_dist_field,
    busemann_approx_field,
    busemann_field,
    min_fields,
    node,
)
from .spaces import (
    Cone,
    Euclidean,
    GeometryDomainError,
    GhApprox,
    ModelSpace,
    Product,
    _coords,
)
from .verify import CERT_TOL, concavity_check, lipschitz_estimate, sample_pairs


class PatchFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class CoverageError(RuntimeError):
    def __init__(self, message, witness=None, patches=None):
        super().__init__(message)
        self.witness = witness
        self.patches = patches or []


class RegionFailure(RuntimeError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


def R_of(eps: float) -> float:
    return (1.0 + eps) / (1.0 - eps)


@dataclass
class PatchSpec:
    center: np.ndarray
    radius: float
    kind: str  # secondOrder | weakAxis | finalStep
    field: ScalarField
    params: dict = dc_field(default_factory=dict)
    certificates: dict = dc_field(default_factory=dict)
    extra: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return _num({
            "kind": self.kind, "center": np.asarray(self.center).tolist(), "radius": self.radius,
            "params": self.params, "certificates": self.certificates,
        })


# --------------------------------------------------------------------------
# product-case fields


def _require_product(space):
    if not isinstance(space, Product):
        raise TypeError("expected a Product space")


def f_c_field(space: Product, c: float, outer: float = 2.0) -> ScalarField:
    """``-(|x|^2 + (|o y| + c)^2) / 2`` on the ball of radius ``outer`` about the axis origin."""
    _require_product(space)
    if not c > 0:
        raise ValueError("c must be positive")

    def fn(X):
        U, C = space.split(X)
        return -0.5 * (np.sum(U * U, axis=-1) + (C[..., 0] + c) ** 2)

    prov = node("fc", space=space.spec(), c=c)
    return _field(space, fn, space.origin(), outer, 0.0, -1.0, outer + c, prov)


def _axis_rays(space: Product, q):
    Q = _coords(space, q)
    v, w = space.split(Q)
    o = space.origin()
    ray1 = ray2 = None
    if np.linalg.norm(v) > 0:
        ray1 = RaySpec(space, tuple(o), tuple(space.join(v, np.zeros(2))))
    if w[0] > 0:
        ray2 = RaySpec(space, tuple(o), tuple(space.join(np.zeros(space.k), w)))
    return Q, v, w, ray1, ray2


def first_order_term(space: Product, q, c: float, t: float = math.inf, outer: float = math.inf) -> ScalarField:
    """``|v| B_1 + (|o w| + c) B_2`` for ``q = (v, w)``; finite ``t`` uses far-point distances.

    The far-point terms are ``dist(., gamma(t)) - t``, so the value matches the
    exact term up to ``O(1/t)``.
    """
    _require_product(space)
    Q, v, w, ray1, ray2 = _axis_rays(space, q)
    if ray1 is None and ray2 is None:
        raise GeometryDomainError("first-order term needs v != 0 or w != apex")
    a1 = float(np.linalg.norm(v))
    a2 = float(w[0]) + c
    make = busemann_field if math.isinf(t) else (lambda ray, outer: busemann_approx_field(ray, t, outer))
    parts = []
    if ray1 is not None:
        parts.append((a1, make(ray1, outer=outer)))
    if ray2 is not None:
        parts.append((a2, make(ray2, outer=outer)))

    def fn(X):
        acc = np.zeros(len(X))
        for a, f in parts:
            acc += a * f.fn(X)
        return acc

    lip = math.hypot(a1 if ray1 is not None else 0.0, a2 if ray2 is not None else 0.0)
    prov = node("firstOrder", [f.provenance for _, f in parts], q=Q, c=c,
                t="inf" if math.isinf(t) else float(t))
    return _field(space, fn, Q, outer, 0.0, 0.0, lip, prov)


def _shell_samples(space, center, lo, hi, count, seed):
    rng = np.random.default_rng(seed)
    C = np.asarray(center, float)
    out, got = [], 0
    while got < count:
        X = space.sample_ball(C, hi, 4 * count, rng)
        d = space.dist(X, C)
        X = X[(d >= lo) & (d <= hi)]
        out.append(X)
        got += len(X)
    return np.concatenate(out)[:count]


def patch_inequalities(fld: ScalarField, target: ScalarField, center, r: float, count: int = 1000,
                       seed: int = 0, inner_frac: float = 0.1) -> dict:
    """Margins of ``F >= target`` on the outer shell and ``F <= target`` on the inner ball."""
    space = fld.space
    Xo = _shell_samples(space, center, 2.0 * r / 3.0, r, count, seed)
    Xi = _shell_samples(space, center, 0.0, inner_frac * r, count, seed + 1)
    go = fld.fn(Xo) - target.fn(Xo)
    gi = target.fn(Xi) - fld.fn(Xi)
    io, ii = int(np.argmin(go)), int(np.argmin(gi))
    return {
        "outerMin": float(go[io]), "outerWitness": Xo[io].tolist(),
        "innerMin": float(gi[ii]), "innerWitness": Xi[ii].tolist(),
        "sampleCount": count, "seed": seed,
    }


def second_order_patch(space: Product, q, eps: float, c: float, inner_field: Optional[ScalarField] = None,
                       r_start: float = 0.1, r_min: float = 1e-4, anchor_ratio: float = 2.0,
                       max_mu_radius: Optional[float] = None, count: int = 1000, seed: int = 0,
                       certify: bool = True) -> PatchSpec:
    """``C + D_q + (1 - eps)/2 f_q`` around an off-axis point with the radius found by halving.

    The inner field defaults to a single lift at ``q`` whose model radius is
    tied to the patch radius so that the anchors stay inside the chart.
    """
    _require_product(space)
    Q, v, w, _, _ = _axis_rays(space, q)
    if w[0] == 0.0:
        raise GeometryDomainError("second-order patches need an off-axis centre")
    fc = f_c_field(space, c)
    D = first_order_term(space, Q, c)
    nv2 = float(v @ v)
    rw = float(w[0])
    max_mu = eps / 4 if max_mu_radius is None else max_mu_radius
    r = r_start
    attempts = []
    while r >= r_min:
        try:
            if inner_field is None:
                mu = min(max_mu, r / (anchor_ratio * rw))
                inner = lift_mu(space, Q, r / mu, mu)
            else:
                inner = inner_field
                if inner.outer < r:
                    raise GeometryDomainError("inner field domain smaller than the patch")
        except GeometryDomainError as exc:
            attempts.append({"r": r, "failure": str(exc)})
            r /= 2
            continue
        C = 0.5 * (nv2 + rw * rw - c * c) - r * r * eps / 9.0
        fld = _patch_sum(space, Q, r, C, [(1.0, D), (0.5 * (1 - eps), inner)],
                         node("secondOrderPatch", [D.provenance, inner.provenance], C=C, eps=eps, c=c))
        ineq = patch_inequalities(fld, fc, Q, r, count, seed)
        margin = r * r * eps / 18.0
        ok = ineq["outerMin"] >= margin and ineq["innerMin"] > 0
        attempts.append({"r": r, "outerMin": ineq["outerMin"], "innerMin": ineq["innerMin"]})
        if ok:
            lam_inner = inner.claimed_concavity
            if lam_inner is None:
                lam_inner = -2.0 + 4.0 * mu * (space.dimension - 1)
            fld.claimed_concavity = 0.5 * (1 - eps) * lam_inner
            certs = {"inequalities": ineq, "requiredMargin": margin}
            if certify:
                cr = concavity_check(fld, fld.claimed_concavity, 2000, seed)
                certs["concavity"] = cr.to_dict()
            return PatchSpec(Q, r, "secondOrder", fld,
                             {"eps": eps, "c": c, "C": C, "t": "inf", "r": r}, certs, {"inner": inner})
        r /= 2
    raise PatchFailure("patch radius search exhausted", {"center": Q.tolist(), "attempts": attempts})


def _patch_sum(space, Q, r, C, parts, prov, lam=None):
    def fn(X):
        acc = np.full(len(X), float(C))
        for a, f in parts:
            acc += a * f.fn(X)
        return acc

    lip = sum(abs(a) * (f.claimed_lipschitz or 0.0) for a, f in parts)
    return _field(space, fn, Q, r, 0.0, lam, lip, prov)


# ---- weak approximation on the axis


def phi_R(z, R):
    return 0.5 * (-(1.0 + R - z) ** 2 + R)


def cone_net(alpha: float, net: float = 0.1, delta: float = 0.02):
    """0.1-net on the circle of length ``alpha`` with a ``delta``-separated set in each ball."""
    n = max(1, math.ceil(alpha / net))
    centers = (np.arange(n) + 0.5) * (alpha / n)
    m = int(math.floor(net / delta))
    offs = delta * np.arange(-m, m + 1)
    return centers, [np.mod(c + offs, alpha) for c in centers]


def _min_avg_cos2(alpha, clusters, probes=721):
    psi = np.linspace(0.0, alpha, probes, endpoint=False)
    worst = math.inf
    for cl in clusters:
        d = np.mod(psi[:, None] - cl[None, :], alpha)
        d = np.minimum(d, alpha - d)
        ang = np.minimum(d, math.pi)
        worst = min(worst, float(np.min(np.mean(np.cos(ang) ** 2, axis=1))))
    return worst


def weak_axis_patch(space: Product, q, eps: float, c: float = 0.05, R: Optional[float] = None,
                    K: Optional[float] = None, net_delta: float = 0.02, K_max: float = 2.0**16,
                    radius: Optional[float] = None, count: int = 1000, seed: int = 0) -> PatchSpec:
    """``H = H_1 + H_2`` at an axis point and the matching patch ``C + |v| B_1 + (1 - eps)/2 H``.

    ``K`` is doubled until the direction inequality holds with slack ``1 - eps/4``;
    ``R`` and the radius are then sized so that ``H`` is ``eps``-Lipschitz and
    the convex parts of the Hessian stay below ``eps/2``.
    """
    _require_product(space)
    Q = _coords(space, q)
    v, w = space.split(Q)
    if w[0] != 0.0:
        raise GeometryDomainError("weak approximation is for points on the axis")
    alpha = space.alpha
    centers, clusters = cone_net(alpha, 0.1, net_delta)
    worst = _min_avg_cos2(alpha, clusters)
    if K is None:
        K = 1.0
        while 0.5 * K * worst < 1 - eps / 4:
            K *= 2
            if K > K_max:
                raise PatchFailure("net weight search exhausted", {"minAvgCos2": worst})
    k = space.k
    if R is None:
        R = eps / (4.0 * (K + 2 * k))
    r = R if radius is None else radius
    E = np.eye(k)
    flat = [space.join(v + s * e, np.zeros(2)) for e in E for s in (1.0, -1.0)]
    groups = [np.array([space.join(v, np.array([1.0, t])) for t in cl]) for cl in clusters]

    def H1(X):
        acc = np.zeros(len(X))
        for P in flat:
            acc += phi_R(space.dist(X, P), R)
        return acc - 2 * k * phi_R(1.0, R)

    def H2(X):
        out = np.full(len(X), np.inf)
        for G in groups:
            acc = np.zeros(len(X))
            for P in G:
                acc += phi_R(space.dist(X, P), R)
            out = np.minimum(out, (K / len(G)) * (acc - len(G) * phi_R(1.0, R)))
        return out

    def Hfn(X):
        return H1(X) + H2(X)

    hprov = node("weakApprox", space=space.spec(), q=Q, R=R, K=K, netDelta=net_delta, clusters=len(groups))
    H = _field(space, Hfn, Q, r, 0.0, -2.0 + eps, eps, hprov)
    nv = float(np.linalg.norm(v))
    C = 0.5 * (nv * nv - c * c) - r * r * eps / 9.0
    parts = [(0.5 * (1 - eps), H)]
    if nv > 0:
        ray1 = RaySpec(space, tuple(space.origin()), tuple(space.join(v, np.zeros(2))))
        parts.append((nv, busemann_field(ray1)))
    F = _patch_sum(space, Q, r, C, parts, node("weakAxisPatch", [hprov], C=C, eps=eps, c=c),
                   lam=0.5 * (1 - eps) * (-2.0 + eps))
    fc = f_c_field(space, c)
    ineq = patch_inequalities(F, fc, Q, r, count, seed)
    X = _shell_samples(space, Q, 0.0, r, count, seed + 7)
    U, Cc = space.split(X)
    dq = space.dist(X, Q)
    lower = Hfn(X) - (-np.sum((U - v) ** 2, axis=-1) - eps * Cc[:, 0] - eps**2 * dq**2)
    certs = {
        "inequalities": ineq, "requiredMargin": r * r * eps / 18.0,
        "inequalitiesHold": bool(ineq["outerMin"] >= r * r * eps / 18.0 and ineq["innerMin"] > 0),
        "lowerBoundMin": float(lower.min()), "minAvgCos2": worst,
        "concavity": concavity_check(H, -2.0 + eps, 2000, seed).to_dict(),
    }
    params = {"eps": eps, "c": c, "C": C, "R": R, "K": K, "netDelta": net_delta, "r": r}
    return PatchSpec(Q, r, "weakAxis", F, params, certs, {"H": H})


# --------------------------------------------------------------------------
# final step on cones


def final_step_patch(space: Cone, q, eps: float, inner_field: Optional[ScalarField] = None,
                     radius: Optional[float] = None, mu_radius: float = 1e-4, anchor_ratio: float = 2.0,
                     count: int = 1000, seed: int = 0, certify: bool = True) -> PatchSpec:
    """``|q| B_q + f_q/2 + eps |xq|^2 - r^2 eps/4 + |q|^2/2`` around a non-apex cone point.

    ``extra['deviation']`` is the same patch minus ``-dist_apex^2/2``; on the
    cone this difference equals ``(f_q + |xq|^2)/2 + eps |xq|^2 - r^2 eps/4``
    exactly, which keeps the small patch margins above rounding level.
    """
    if not isinstance(space, Cone):
        raise TypeError("final-step patches are implemented on cones")
    Q = space.normalize(_coords(space, q))
    if Q[0] == 0.0:
        raise GeometryDomainError("final-step patch centre must not be the apex")
    nq = float(Q[0])
    if inner_field is None:
        inner_field = lift_mu(space, Q, anchor_ratio * nq, mu_radius)
    r = inner_field.outer if radius is None else float(radius)
    if r > inner_field.outer * (1 + 1e-12):
        raise GeometryDomainError("patch radius exceeds the inner field domain")
    ray = RaySpec(space, (0.0, 0.0), tuple(Q))
    B = busemann_field(ray)
    inner = inner_field

    def dev(X):
        d = space.dist(X, Q)
        return 0.5 * (inner.fn(X) + d * d) + eps * d * d - 0.25 * r * r * eps

    def fn(X):
        d = space.dist(X, Q)
        return nq * B.fn(X) + 0.5 * inner.fn(X) + eps * d * d - 0.25 * r * r * eps + 0.5 * nq * nq

    lam_inner = inner.claimed_concavity
    if lam_inner is None:
        # the model function's Hessian bound is -2 + O(mu); 4 mu is a safe constant
        lam_inner = -2.0 + 4.0 * mu_radius
    lam = 0.5 * lam_inner + 2.0 * eps
    prov = node("finalStepPatch", [B.provenance, inner.provenance], q=Q, eps=eps, r=r)
    F = _field(space, fn, Q, r, 0.0, lam, nq + 0.5 * (inner.claimed_lipschitz or 0.0) + 2 * eps * r, prov)
    G = _field(space, dev, Q, r, 0.0, lam + 1.0, None, node("deviation", [prov]))
    certs = {}
    if certify:
        certs = final_patch_certificates(G, Q, r, eps, count, seed)
    params = {"eps": eps, "r": r, "muRadius": mu_radius, "anchorRatio": anchor_ratio}
    return PatchSpec(Q, r, "finalStep", F, params, certs, {"deviation": G, "inner": inner})


def final_patch_certificates(G: ScalarField, Q, r, eps, count=1000, seed=0) -> dict:
    """Patch inequalities and concavity read off the deviation from ``-dist_apex^2/2``.

    The target is exactly (-1)-concave on cones, so the patch is
    ``lam``-concave iff the deviation is ``(lam + 1)``-concave.
    """
    space = G.space
    Xo = _shell_samples(space, Q, 2.0 * r / 3.0, r, count, seed)
    Xi = _shell_samples(space, Q, 0.0, 0.1 * r, count, seed + 1)
    go, gi = G.fn(Xo), -G.fn(Xi)
    cr = concavity_check(G, G.claimed_concavity, 4000, seed)
    return {
        "outerMin": float(go.min()), "innerMin": float(gi.min()),
        "requiredMargin": r * r * eps / 18.0,
        "inequalitiesHold": bool(go.min() >= 0.0 and gi.min() > 0.0),
        "concavity": cr.to_dict(), "certifiedLambda": G.claimed_concavity - 1.0 if cr.certified else None,
    }


@dataclass
class RegionConfig:
    """Parameters of the cone region pipeline."""

    epsilon: float = 0.1
    patch_eps: Optional[float] = None  # defaults to epsilon / 4
    mu_radius: float = 1e-4
    anchor_ratio: float = 2.0          # anchor distance / |q|
    cover_fraction: float = 0.1        # every point within this fraction of a patch radius of a centre
    lattice_factor: float = 0.14       # lattice step / patch radius
    rays: int = 4096
    seed: int = 0


class RingCover:
    """Patches ``q_jk = (g^j, (k + (j mod 2)/2) dtheta)`` on a log-polar lattice.

    Every patch is the image of the base patch at ``(1, 0)`` under a rotation
    and a dilation of the cone, so evaluation only needs the base patch:
    ``F_q(x) = s^2 F_0(D_{1/s} R_{-phi} x)``.  Patches farther than ``2r/3``
    from ``x`` are skipped; they are certified to lie above the target there
    while the closest patch lies below it, so the minimum is unchanged.
    """

    def __init__(self, space: Cone, base: PatchSpec, du: float, n_theta: int, eps: float,
                 annulus=(0.5, None), lift_mode: str = "native"):
        self.space = space
        self.base = base
        self.du = float(du)
        self.n_theta = int(n_theta)
        self.dtheta = space.alpha / self.n_theta
        self.eps = eps
        self.inner = annulus[0]
        self.outer = annulus[1] if annulus[1] is not None else 1.0 + eps
        self.r_rel = base.radius  # base centre has |q| = 1
        self.m = int(math.ceil((2.0 / 3.0) * self.r_rel / min(self.du, self.dtheta))) + 1
        self.lift_mode = lift_mode
        self._G0 = base.extra["deviation"].fn

    # -- lattice bookkeeping
    def ring_range(self, lo=None, hi=None):
        lo = self.inner if lo is None else lo
        hi = self.outer if hi is None else hi
        pad = self.r_rel
        j0 = int(math.floor(math.log(lo * (1 - pad)) / self.du))
        j1 = int(math.ceil(math.log(hi * (1 + pad)) / self.du))
        return j0, j1

    def count(self) -> int:
        j0, j1 = self.ring_range()
        return (j1 - j0 + 1) * self.n_theta

    def center(self, j: int, k: int) -> np.ndarray:
        off = 0.5 * (j % 2)
        return self.space.normalize(np.array([math.exp(j * self.du), (k + off) * self.dtheta]))

    def _candidates(self, X):
        r, th = X[:, 0], X[:, 1]
        jc = np.rint(np.log(r) / self.du).astype(np.int64)
        offs = np.arange(-self.m, self.m + 1)
        J = jc[:, None, None] + offs[None, :, None] + 0 * offs[None, None, :]
        off = 0.5 * np.mod(J, 2)
        kc = np.rint(th[:, None, None] / self.dtheta - off)
        Kk = kc + offs[None, None, :]
        s = np.exp(J * self.du)
        phi = (Kk + off) * self.dtheta
        loc = np.stack([r[:, None, None] / s, th[:, None, None] - phi], axis=-1)
        return J, Kk, s, self.space.normalize(loc)

    def _local(self, X, reach):
        X = np.atleast_2d(np.asarray(X, float))
        if np.any(X[:, 0] <= 0):
            raise GeometryDomainError("the ring cover does not contain the apex")
        J, Kk, s, L = self._candidates(X)
        q0 = np.array([1.0, 0.0])
        d = self.space.dist(L, q0)
        return J, Kk, s, L, d, d < reach * self.r_rel

    def deviation(self, X):
        """``min_q (F_q - target)`` over patches within ``2r/3`` of each point."""
        X = np.atleast_2d(np.asarray(X, float))
        out = np.empty(len(X))
        step = 2048
        for a in range(0, len(X), step):
            J, Kk, s, L, d, mask = self._local(X[a : a + step], 2.0 / 3.0)
            vals = np.full(mask.shape, np.inf)
            vals[mask] = s[mask] ** 2 * self._G0(L[mask])
            out[a : a + step] = vals.reshape(len(vals), -1).min(axis=1)
        if np.isinf(out).any():
            raise GeometryDomainError("point outside the covered annulus")
        return out

    def nearest_fraction(self, X):
        """Distance to the nearest patch centre divided by that patch's radius."""
        X = np.atleast_2d(np.asarray(X, float))
        J, Kk, s, L, d, mask = self._local(X, math.inf)
        return (d / self.r_rel).reshape(len(X), -1).min(axis=1)

    def field(self) -> ScalarField:
        sp = self.space

        def fn(X):
            X = np.asarray(X, float)
            return -0.5 * X[:, 0] ** 2 + self.deviation(X)

        prov = node(
            "min", [self.base.field.provenance], cover="ringLattice", du=self.du, nTheta=self.n_theta,
            patchRadiusRelative=self.r_rel, patches=self.count(), liftMode=self.lift_mode,
        )
        return _field(sp, fn, sp.origin(), self.outer, self.inner, -1.0 + self.eps, 1.0 + self.eps, prov)

    def patch(self, j: int, k: int) -> PatchSpec:
        """Materialize one patch directly at its centre (for audits)."""
        q = self.center(j, k)
        p = self.base.params
        return final_step_patch(self.space, q, p["eps"], mu_radius=p["muRadius"],
                                anchor_ratio=p["anchorRatio"], certify=False)

    def coverage_audit(self, count: int = 10_000, seed: int = 0) -> dict:
        X = _shell_samples(self.space, self.space.origin(), self.inner, self.outer, count, seed)
        fr = self.nearest_fraction(X)
        i = int(np.argmax(fr))
        return {"samples": count, "worstFraction": float(fr[i]), "witness": X[i].tolist(),
                "covered": bool(fr[i] <= 0.1)}


def ring_cover(space: Cone, cfg: RegionConfig = RegionConfig(), approx: Optional[GhApprox] = None,
               lift_mode: str = "exp", certify: bool = True) -> RingCover:
    """Build the structured final-step cover of ``B_{1+eps} minus B_{1/2}``.

    With ``approx`` the cover is rebuilt on ``approx.target``: centres are
    mapped by the point map; the base patch anchors are either placed by the
    target's exp chart at the mapped centre (``lift_mode='exp'``) or taken as
    the images of the source anchors (``lift_mode='mapped'``).
    """
    eps = cfg.epsilon
    pe = eps / 4 if cfg.patch_eps is None else cfg.patch_eps
    r_rel = cfg.anchor_ratio * cfg.mu_radius
    h = cfg.lattice_factor * r_rel
    src = space
    n_theta = int(math.ceil(src.alpha / h))
    q0 = np.array([1.0, 0.0])
    tgt = src if approx is None else approx.target
    if approx is None or lift_mode == "exp":
        inner = lift_mu(tgt, q0, cfg.anchor_ratio, cfg.mu_radius)
        mode = "native" if approx is None else "exp"
    elif lift_mode == "mapped":
        inner = lift_mu(src, q0, cfg.anchor_ratio, cfg.mu_radius, transfer=(tgt, approx.point_map))
        mode = "mapped"
    else:
        raise ValueError(f"unknown lift mode {lift_mode!r}")
    base = final_step_patch(tgt, q0, pe, inner_field=inner, mu_radius=cfg.mu_radius,
                            anchor_ratio=cfg.anchor_ratio, seed=cfg.seed, certify=certify)
    return RingCover(tgt, base, h, n_theta, eps, (0.5, 1.0 + eps), mode)


def cover_annulus(space: ModelSpace, eps: float, c: Optional[float] = None,
                  patch_builder: Optional[Callable] = None, budget: int = 200, samples: int = 10_000,
                  seed: int = 0, cfg: Optional[RegionConfig] = None):
    """Cover ``B_{1+eps} minus B_{1/2}`` by patches whose tenth-radius balls cover.

    On cones this is the structured ring cover.  Elsewhere a greedy cover
    over a sample set is built with ``patch_builder(point) -> PatchSpec``;
    exceeding ``budget`` raises ``CoverageError`` with an uncovered witness.
    """
    if isinstance(space, Cone):
        cfg = cfg or RegionConfig(epsilon=eps, seed=seed)
        cover = ring_cover(space, cfg)
        audit = cover.coverage_audit(samples, seed)
        if not audit["covered"]:
            raise CoverageError("ring cover leaves a gap", audit["witness"])
        return cover
    if patch_builder is None:
        if not isinstance(space, Product):
            raise TypeError("no default patch builder for this space")
        cval = 0.05 if c is None else c

        def patch_builder(x):
            _, w = space.split(x)
            if w[0] < 1e-3:
                v, _ = space.split(x)
                return weak_axis_patch(space, space.join(v, np.zeros(2)), eps, cval, seed=seed)
            return second_order_patch(space, x, eps, cval, seed=seed, certify=False)

    X = _shell_samples(space, space.origin(), 0.5, 1.0 + eps, samples, seed)
    covered = np.zeros(len(X), bool)
    patches = []
    while not covered.all():
        i = int(np.argmin(covered))
        if len(patches) >= budget:
            raise CoverageError(f"patch budget {budget} exhausted", X[i].tolist(), patches)
        try:
            p = patch_builder(X[i])
        except PatchFailure as exc:
            raise CoverageError(f"patch construction failed: {exc}", X[i].tolist(), patches) from None
        patches.append(p)
        covered |= space.dist(X, p.center) <= 0.1 * p.radius
    return patches


def patch_min_field(patches: Sequence[PatchSpec], center=None, outer=None) -> ScalarField:
    return min_fields([(p.field, (p.center, p.radius)) for p in patches], center, outer)


# --------------------------------------------------------------------------
# convex region


@dataclass
class RegionAudit:
    rays: int
    level_tolerance: float
    hausdorff: float
    hausdorff_bound: float
    convexity: Optional[dict] = None
    coverage: Optional[dict] = None
    patches: Optional[int] = None
    min_radius: float = 0.0
    max_radius: float = 0.0

    def to_dict(self):
        return _num({
            "rays": self.rays, "levelTolerance": self.level_tolerance, "hausdorff": self.hausdorff,
            "hausdorffBound": self.hausdorff_bound, "convexity": self.convexity, "coverage": self.coverage,
            "patches": self.patches, "minRadius": self.min_radius, "maxRadius": self.max_radius,
        })


def _ray_points(space, center, r, th):
    if isinstance(space, Cone):
        return np.stack([r, th], axis=-1)
    c = np.asarray(center, float)
    return np.stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)], axis=-1)


def extract_level_set(space: ModelSpace, F: ScalarField, level: float, center, rays: int,
                      bracket=(0.5, 1.2), xtol: float = 1e-15):
    """Radii where ``F = level`` along uniformly spaced rays from ``center``."""
    period = space.alpha if isinstance(space, Cone) else 2 * math.pi
    th = period * np.arange(rays) / rays

    def g(r, t):
        return F.fn(_ray_points(space, center, np.ravel(r), np.ravel(t))).reshape(np.shape(r)) - level

    lo = np.full(rays, float(bracket[0]))
    hi = np.full(rays, float(bracket[1]))
    glo, ghi = g(lo, th), g(hi, th)
    bad = ~((glo > 0) & (ghi < 0))
    if bad.any():
        i = int(np.argmax(bad))
        raise RegionFailure("level set not bracketed on a ray", {"theta": float(th[i]),
                                                                 "values": [float(glo[i]), float(ghi[i])]})
    res = find_root(g, (lo, hi), args=(th,), tolerances={"xatol": xtol, "xrtol": 0.0, "fatol": 0.0,
                                                          "frtol": 0.0})
    r = np.asarray(res.x, float)
    if not np.all(res.success):
        i = int(np.argmin(res.success))
        raise RegionFailure("root finding failed on a ray", {"theta": float(th[i])})
    resid = float(np.max(np.abs(g(r, th))))
    return th, r, resid


def assemble_region(space: ModelSpace, source, eps: float, rays: int = 4096, center=None,
                    check: bool = True, pairs: int = 10_000, seed: int = 0, workers: int = 1):
    """``{F >= -1/2}`` united with ``B_{1/2}`` and its audit.

    ``source`` is a ``RingCover``, a list of patches, or a defining field.
    """
    cover = None
    if isinstance(source, RingCover):
        cover = source
        F = source.field()
    elif isinstance(source, ScalarField):
        F = source
    else:
        F = patch_min_field(source)
    c = space.origin() if center is None else _coords(space, center)
    th, r, resid = extract_level_set(space, F, -0.5, c, rays, (0.5, 1.0 + eps))
    region = ConvexRegion(space, F, -0.5, tuple(c), 0.5, (th, r), resid)
    dh = float(np.max(np.abs(r - 1.0)))
    audit = RegionAudit(rays, resid, dh, 2 * eps**3, min_radius=float(r.min()), max_radius=float(r.max()))
    if cover is not None:
        audit.patches = cover.count()
    if check:
        audit.convexity = region_convexity_check(region, pairs, seed, workers)
        if cover is not None:
            audit.coverage = cover.coverage_audit(pairs, seed)
    return region, audit


def region_convexity_check(region: ConvexRegion, count: int = 10_000, seed: int = 0, workers: int = 1,
                           slack: float = 1e-12) -> dict:
    """Sample pairs in the region and test that every midpoint branch is inside."""
    space = region.space
    rng = np.random.default_rng(seed)
    c = np.array(region.core_center)
    rmax = float(np.max(region.polar[1])) * (1 + 1e-9)
    pts, got = [], 0
    while got < 2 * count:
        X = space.sample_ball(c, rmax, 4 * count, rng)
        X = X[region.contains(X)]
        pts.append(X)
        got += len(X)
    P = np.concatenate(pts)[: 2 * count]
    X, Y = P[:count], P[count:]
    branches, masks = space.midpoint_branches(X, Y)
    viol = np.zeros(count, bool)
    for M, mask in zip(branches, masks):
        idx = np.nonzero(mask)[0]
        inside = region.contains(M[idx], slack)
        viol[idx[~inside]] = True
    out = {"pairs": count, "violations": int(viol.sum()), "seed": seed, "holds": bool(not viol.any())}
    if viol.any():
        i = int(np.argmax(viol))
        out["witness"] = [X[i].tolist(), Y[i].tolist()]
    return out


def region_concave_dist(region: ConvexRegion, eps: float) -> ScalarField:
    """``-(R(eps) - dist_boundary)^2`` on the largest core-centred ball inside the region."""
    d = boundary_dist_field(region)
    Rr = R_of(eps)
    inner_r = float(np.min(region.polar[1]))
    c = np.array(region.core_center)
    dmax = float(d.fn(c[None, :])[0])
    if not dmax < Rr:
        raise GeometryDomainError("boundary distance reaches R(eps)")

    def fn(X):
        return -((Rr - d.fn(X)) ** 2)

    prov = node("regionConcaveDist", [d.provenance], eps=eps, R=Rr)
    return _field(region.space, fn, c, inner_r * (1 - 1e-9), 0.0, -2.0 + eps, 2 * Rr, prov)


def apex_theorem_b(region: ConvexRegion, radius_fraction: float = 0.5, probes: int = 20_000,
                   seed: int = 0) -> tuple:
    """``-c (d_0 - dist_boundary)^2`` with ``d_0`` the boundary distance of the centre.

    ``c <= 1`` is the largest factor keeping the field above ``-dist_centre^2``
    on probe points.  On a cone the regions for smaller balls are dilates of
    this one, so a single block serves every scale.
    Returns ``(field, domain_radius, normalization)``.
    """
    space = region.space
    d = boundary_dist_field(region)
    c0 = np.array(region.core_center)
    d0 = float(d.fn(c0[None, :])[0])
    R = radius_fraction * float(np.min(region.polar[1]))
    X = space.sample_ball(c0, R, probes, np.random.default_rng(seed))
    dc = space.dist(X, c0)
    keep = dc > 1e-3 * R
    ratio = (d0 - d.fn(X[keep])) ** 2 / dc[keep] ** 2
    mx = float(np.max(ratio))
    c = min(1.0, (1.0 - 1e-9) / mx)

    def fn(X):
        return -c * (d0 - d.fn(X)) ** 2

    prov = node("apexTheoremB", [d.provenance], d0=d0, normalization=c, radius=R)
    fld = _field(space, fn, c0, R, 0.0, -2.0 * c, 2.0 * c * R, prov)
    return fld, R, {"d0": d0, "c": c, "maxRatio": mx, "minRatio": float(np.min(ratio))}


# --------------------------------------------------------------------------
# comparison geometry


def t_correction(eps: float, kappa: float) -> float:
    """``sqrt|k| coth(sqrt|k| R(eps)) - 1/R(eps)``, continuously extended by 0 at ``k = 0``."""
    if kappa > 0:
        raise ValueError("kappa must be <= 0")
    if kappa == 0:
        return 0.0
    Rr = R_of(eps)
    s = math.sqrt(-kappa)
    x = s * Rr
    if x < 1e-4:
        # coth(x) = 1/x + x/3 - x^3/45 + ...
        return s * (x / 3.0 - x**3 / 45.0)
    return s / math.tanh(x) - 1.0 / Rr


@dataclass
class ComparisonConfig:
    """Planar comparison configuration: ``p = 0``, ``M = (0, R)``, ``gamma(0) = (0, h)``."""

    eps: float
    h: float
    angle: float
    kappa: float = 0.0

    def __post_init__(self):
        if self.kappa != 0.0:
            raise NotImplementedError("only the flat model halfspace is implemented")
        if not 0 <= self.h < self.R:
            raise ValueError("h must lie in [0, R(eps))")

    @property
    def R(self) -> float:
        return R_of(self.eps)

    @property
    def M(self) -> np.ndarray:
        return np.array([0.0, self.R])

    @property
    def p(self) -> np.ndarray:
        return np.zeros(2)

    def gamma(self, t):
        # the ray leaves gamma(0) at the given angle to the segment toward p
        t = np.asarray(t, float)
        d = np.array([math.sin(self.angle), -math.cos(self.angle)])
        return np.array([0.0, self.h]) + t[..., None] * d


def comparison_distance(config: ComparisonConfig, t):
    """``R - |M gamma(t)|``: distance from ``gamma(t)`` to the sphere ``dB_R(M)``."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    g = config.gamma(t)
    out = config.R - np.linalg.norm(g - config.M, axis=-1)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# transfer audit for the defining function


def pseudo_constructibility_audit(space: Cone, approx_sequence: Sequence[GhApprox], cfg: RegionConfig = RegionConfig(),
                                  lift_mode: str = "exp", pairs: int = 2000, seed: int = 0) -> dict:
    """Rebuild the ring cover on each target and re-run the patch and region checks."""
    entries = []
    for approx in approx_sequence:
        entry = {"target": approx.target.spec(), "distortionBound": approx.distortion_bound, "liftMode": lift_mode}
        try:
            cover = ring_cover(space, cfg, approx, lift_mode)
            certs = cover.base.certificates
            entry["patch"] = {k: certs[k] for k in ("outerMin", "innerMin", "inequalitiesHold", "certifiedLambda")}
            region, audit = assemble_region(cover.space, cover, cfg.epsilon, cfg.rays, pairs=pairs, seed=seed)
            entry["region"] = audit.to_dict()
            entry["holds"] = bool(certs["inequalitiesHold"] and certs["certifiedLambda"] is not None
                                  and audit.convexity["holds"] and audit.coverage["covered"]
                                  and audit.hausdorff <= audit.hausdorff_bound)
        except (GeometryDomainError, RegionFailure) as exc:
            entry["failure"] = str(exc)
            entry["holds"] = False
        entries.append(entry)
    return _num({"kind": "pseudoConstructibility", "base": space.spec(), "entries": entries,
                 "holds": all(e["holds"] for e in entries)})
