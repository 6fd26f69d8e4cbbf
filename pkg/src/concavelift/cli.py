"""Command line entry point: ``concavelift <command> [--config FILE] [flags]``.

Commands: construct, verify, pipeline, lift-audit, report.  Every run writes
``report.json``, CSV plot data and ``manifest.json`` into its output directory.
Exit status is 0 when every requested certificate is granted, 1 when one is
refused and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .construct import self_improve, theorem_b_lift
from .fields import ScalarField, _field, _num, node
from .product import (
    CoverageError,
    PatchFailure,
    RegionConfig,
    RegionFailure,
    apex_theorem_b,
    assemble_region,
    cover_annulus,
    pseudo_constructibility_audit,
    region_concave_dist,
    ring_cover,
)
from .spaces import Cone, Euclidean, GeometryDomainError, Product, SpaceSpecError, gh_cone_approx, parse_space
from .verify import concavity_check, lift_stability_audit, sample_pairs, sandwich_check

COMMANDS = ("construct", "verify", "pipeline", "lift-audit", "report")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "construct"
    space: str = "euclidean:2"
    point: Optional[list] = None
    epsilon: float = 0.1
    depth: int = 4
    radius: float = 0.02
    mu_radius: float = 0.005
    seed: int = 0
    samples: int = 10_000
    sandwich_samples: int = 2000
    budget: int = 200
    out: str = "out"
    workers: int = 1
    tolerance_scale: float = 1.0
    # verify
    field: Optional[dict] = None
    lam: Optional[float] = None
    # pipeline
    kind: str = "finalStep"
    c: float = 0.05
    net_delta: float = 0.02
    rays: int = 4096
    # lift-audit
    targets: list = dc_field(default_factory=lambda: [8, 16, 32])
    lift_mode: str = "exp"
    # report
    input: Optional[str] = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        for name in ("depth", "samples", "sandwich_samples", "budget", "workers", "rays"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if not self.tolerance_scale > 0:
            raise ConfigError("tolerance_scale must be positive")
        if not (0 < self.radius and 0 < self.mu_radius < 1):
            raise ConfigError("radius must be positive and mu_radius in (0, 1)")
        if self.kind not in ("finalStep", "productCase"):
            raise ConfigError("kind must be finalStep or productCase")
        if self.lift_mode not in ("exp", "mapped"):
            raise ConfigError("lift_mode must be exp or mapped")
        if any(int(i) < 1 for i in self.targets):
            raise ConfigError("targets must be positive integers")
        try:
            space = parse_space(self.space)
        except SpaceSpecError as exc:
            raise ConfigError(str(exc)) from None
        if self.point is not None and len(self.point) != space.coord_dim:
            raise ConfigError(f"point needs {space.coord_dim} coordinates")
        if self.command == "report" and not self.input:
            raise ConfigError("report needs an input directory")
        return space


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# outputs


def dump_json(obj) -> str:
    return json.dumps(_num(obj), sort_keys=True, indent=1, allow_nan=True) + "\n"


def write_csv(path: Path, header: list, rows, comment: str = ""):
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def emit_plotdata(report: dict, out: Path) -> list:
    """Write CSV plot data for every section of a report bundle; returns file names."""
    written = []
    prof = report.get("profile") or []
    write_csv(out / "profile.csv", ["t", "f", "minus_t_squared"], prof,
              "radial profile f(gamma(t)) along a geodesic from the base point")
    written.append("profile.csv")
    hist = report.get("defectHistogram") or {}
    write_csv(out / "defects.csv", ["bin_left", "bin_right", "count"],
              zip(hist.get("edges", [])[:-1], hist.get("edges", [])[1:], hist.get("counts", [])),
              "histogram of normalized midpoint defects (2f(m)-f(x)-f(y)+lam|xy|^2/4)/|xy|^2")
    written.append("defects.csv")
    poly = report.get("boundary") or []
    write_csv(out / "region.csv", ["angle", "radius"], poly,
              "region boundary as a closed polyline in polar coordinates (first row = last row)")
    written.append("region.csv")
    return written


def profile_rows(fld: ScalarField, p, count: int = 64):
    sp = fld.space
    P = np.asarray(p, float)
    R = fld.outer
    if isinstance(sp, Cone):
        end = np.array([P[0] + R, P[1]]) if P[0] > 0 else np.array([R, 0.0])
    else:
        end = P.copy()
        end[0] += R
    ts = np.linspace(0.0, 1.0, count + 1)[1:] * (1 - 1e-9)
    X = sp.geodesic(np.broadcast_to(P, (count, len(P))), np.broadcast_to(end, (count, len(P))), ts)
    t = sp.dist(X, P)
    return [(a, b, -a * a) for a, b in zip(t, fld.fn(X))]


def defect_histogram(fld: ScalarField, lam: float, count: int, seed: int, bins: int = 20):
    sp = fld.space
    X, Y = sample_pairs(sp, fld.center_array, fld.inner, fld.outer, count, seed)
    M = sp.midpoint_branches(X, Y)[0][0]
    d = sp.dist(X, Y)
    v = (2 * fld.fn(M) - fld.fn(X) - fld.fn(Y) + lam * d * d / 4) / (d * d)
    counts, edges = np.histogram(v, bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def finish(cfg: RunConfig, report: dict, ok: bool) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = dict(report)
    report["certified"] = bool(ok)
    text = dump_json(report)
    (out / "report.json").write_text(text)
    files = ["report.json"] + emit_plotdata(report, out)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "files": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files},
        "exitStatus": 0 if ok else 1,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out / "manifest.json").write_text(dump_json(manifest))
    print(f"{cfg.command}: {'certified' if ok else 'certificate refused'} -> {out}")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# commands


def _default_point(space):
    return space.origin()


def theorem_b_field(space, P, cfg: RunConfig):
    """Theorem-B field at ``P``: self-improved lifts, or the region route at a singular point."""
    singular = (isinstance(space, Cone) and P[0] == 0.0) or (isinstance(space, Product) and P[space.k] == 0.0)
    if not singular:
        F = self_improve(space, P, cfg.epsilon, cfg.depth, cfg.radius, cfg.mu_radius, check=False)
        return F, P, F.outer, {}
    if isinstance(space, Product):
        raise GeometryDomainError("singular points of products are handled by the productCase pipeline")
    rc = RegionConfig(epsilon=cfg.epsilon, rays=cfg.rays, seed=cfg.seed)
    cover = ring_cover(space, rc)
    region, audit = assemble_region(space, cover, cfg.epsilon, cfg.rays, pairs=cfg.samples, seed=cfg.seed,
                                    workers=cfg.workers)
    F, R, info = apex_theorem_b(region, seed=cfg.seed)
    return F, P, R, {"region": audit.to_dict(), "normalization": info}


def certify_theorem_b(F, P, R, cfg: RunConfig, lam: float):
    cr = concavity_check(F, lam, cfg.samples, cfg.seed, cfg.workers, cfg.tolerance_scale)
    sw = sandwich_check(F, P, cfg.epsilon, R / 16, R, cfg.sandwich_samples, cfg.seed, cfg.tolerance_scale)
    return cr, sw


def cmd_construct(cfg: RunConfig, space) -> int:
    P = _default_point(space) if cfg.point is None else space.normalize(np.asarray(cfg.point, float))
    F, P, R, extra = theorem_b_field(space, P, cfg)
    lam = -2.0 + cfg.epsilon
    cr, sw = certify_theorem_b(F, P, R, cfg, lam)
    report = {
        "command": "construct", "space": space.spec(), "point": P, "epsilon": cfg.epsilon,
        "field": "theoremB", "radius": R, "provenance": F.provenance,
        "concavity": cr.to_dict(), "sandwich": sw.to_dict(), **extra,
        "profile": profile_rows(F, P), "defectHistogram": defect_histogram(F, lam, 2000, cfg.seed),
    }
    return finish(cfg, report, cr.certified and sw.holds)


def field_from_spec(space, spec: dict, P, cfg: RunConfig):
    kind = spec.get("kind")
    if kind == "scaledDistSq":
        a = float(spec.get("scale", 1.0))
        R = float(spec.get("radius", 1.0))

        def fn(X):
            return -a * space.dist(X, P) ** 2

        return _field(space, fn, P, R, 0.0, -2.0 * a, 2 * a * R, node("scaledDistSq", scale=a)), R
    if kind == "theoremB":
        F, _, R, _ = theorem_b_field(space, P, cfg)
        return F, R
    raise ConfigError(f"unknown field kind {kind!r}")


def cmd_verify(cfg: RunConfig, space) -> int:
    P = _default_point(space) if cfg.point is None else space.normalize(np.asarray(cfg.point, float))
    F, R = field_from_spec(space, cfg.field or {"kind": "theoremB"}, P, cfg)
    lam = -2.0 + cfg.epsilon if cfg.lam is None else float(cfg.lam)
    cr, sw = certify_theorem_b(F, P, R, cfg, lam)
    report = {
        "command": "verify", "space": space.spec(), "point": P, "field": cfg.field, "lambda": lam,
        "concavity": cr.to_dict(), "sandwich": sw.to_dict(),
        "profile": profile_rows(F, P), "defectHistogram": defect_histogram(F, lam, 2000, cfg.seed),
    }
    return finish(cfg, report, cr.certified and sw.holds)


def cmd_pipeline(cfg: RunConfig, space) -> int:
    eps = cfg.epsilon
    if cfg.kind == "finalStep":
        if not isinstance(space, Cone):
            raise ConfigError("finalStep pipeline needs a cone space")
        rc = RegionConfig(epsilon=eps, rays=cfg.rays, seed=cfg.seed)
        cover = ring_cover(space, rc)
        region, audit = assemble_region(space, cover, eps, cfg.rays, pairs=cfg.samples, seed=cfg.seed,
                                        workers=cfg.workers)
        Fe = cover.field()
        fe_cr = concavity_check(Fe, -1.0 + eps, cfg.samples, cfg.seed, cfg.workers, cfg.tolerance_scale)
        g = region_concave_dist(region, eps)
        g_cr = concavity_check(g, -2.0 + eps, cfg.samples, cfg.seed, cfg.workers, cfg.tolerance_scale)
        F, R, info = apex_theorem_b(region, seed=cfg.seed)
        cr, sw = certify_theorem_b(F, space.origin(), R, cfg, -2.0 + eps)
        th, r = region.polar
        boundary = [(a, b) for a, b in zip(np.append(th, space.alpha), np.append(r, r[0]))]
        ok = (audit.convexity["holds"] and audit.coverage["covered"] and audit.hausdorff <= audit.hausdorff_bound
              and cover.base.certificates["inequalitiesHold"] and fe_cr.certified and g_cr.certified
              and cr.certified and sw.holds)
        report = {
            "command": "pipeline", "kind": "finalStep", "space": space.spec(), "epsilon": eps,
            "patch": cover.base.to_dict(), "virtualPatchCount": cover.count(), "region": audit.to_dict(),
            "definingField": fe_cr.to_dict(), "regionConcaveDist": g_cr.to_dict(),
            "apexField": {"normalization": info, "radius": R, "concavity": cr.to_dict(),
                          "sandwich": sw.to_dict()},
            "boundary": boundary, "profile": profile_rows(F, space.origin()),
            "defectHistogram": defect_histogram(F, -2.0 + eps, 2000, cfg.seed),
        }
        return finish(cfg, report, ok)
    if not isinstance(space, Product):
        raise ConfigError("productCase pipeline needs a product space")
    report = {"command": "pipeline", "kind": "productCase", "space": space.spec(), "epsilon": eps, "c": cfg.c,
              "budget": cfg.budget}
    try:
        patches = cover_annulus(space, eps, cfg.c, budget=cfg.budget, samples=cfg.samples, seed=cfg.seed)
    except CoverageError as exc:
        report.update({"failure": str(exc), "witness": exc.witness, "patches": [p.to_dict() for p in exc.patches]})
        return finish(cfg, report, False)
    report["patches"] = [p.to_dict() for p in patches]
    try:
        region, audit = assemble_region(space, patches, eps, cfg.rays, check=False)
    except (RegionFailure, GeometryDomainError) as exc:
        report.update({"failure": str(exc), "witness": getattr(exc, "witness", None)})
        return finish(cfg, report, False)
    report["region"] = audit.to_dict()
    return finish(cfg, report, False)


def cmd_lift_audit(cfg: RunConfig, space) -> int:
    if not isinstance(space, Cone):
        raise ConfigError("lift-audit needs a cone space")
    P = np.array([1.0, 0.0]) if cfg.point is None else space.normalize(np.asarray(cfg.point, float))
    approxs = []
    for i in cfg.targets:
        a = space.alpha * (1 + 1 / int(i))
        if a > 2 * math.pi:
            raise ConfigError(f"target angle for i={i} exceeds 2*pi")
        approxs.append(gh_cone_approx(space.alpha, a))
    rep = lift_stability_audit(
        lambda g: theorem_b_lift(g, P, cfg.epsilon, cfg.lift_mode, cfg.depth, cfg.radius, cfg.mu_radius),
        approxs, cfg.epsilon, space.spec(), cfg.samples, cfg.seed, cfg.workers,
    )
    alephs = [e.measured_aleph for e in rep.entries]
    decreasing = all(a is not None and b is not None and b < a for a, b in zip(alephs, alephs[1:]))
    pc = pseudo_constructibility_audit(space, approxs, RegionConfig(epsilon=cfg.epsilon, rays=cfg.rays),
                                       cfg.lift_mode, seed=cfg.seed)
    report = {"command": "lift-audit", "liftMode": cfg.lift_mode, "liftStability": rep.to_dict(),
              "alephStrictlyDecreasing": decreasing, "pseudoConstructibility": pc}
    return finish(cfg, report, rep.all_certified and decreasing and pc["holds"])


def cmd_report(cfg: RunConfig, space) -> int:
    src = Path(cfg.input) / "report.json"
    try:
        report = json.loads(src.read_text()) if src.exists() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {src}: {exc}") from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = emit_plotdata(report, out)
    print(f"report: wrote {', '.join(files)} -> {out}")
    return 0 if report.get("certified", True) else 1


HANDLERS = {"construct": cmd_construct, "verify": cmd_verify, "pipeline": cmd_pipeline,
            "lift-audit": cmd_lift_audit, "report": cmd_report}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="concavelift", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--tolerance-scale", type=float, dest="tolerance_scale")
    ap.add_argument("--space")
    ap.add_argument("--epsilon", type=float)
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    over = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        cfg = load_config(args.config, over)
        space = cfg.validate()
        return HANDLERS[cfg.command](cfg, space)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GeometryDomainError, PatchFailure, RegionFailure) as exc:
        print(f"construction failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
