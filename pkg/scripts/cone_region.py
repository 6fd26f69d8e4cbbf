"""Build the convex region on a cone and write its audit and boundary."""
import argparse
import json
import math
import time
from pathlib import Path

import numpy as np

from concavelift.product import RegionConfig, apex_theorem_b, assemble_region, region_concave_dist, ring_cover
from concavelift.spaces import Cone
from concavelift.verify import concavity_check, sandwich_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=1.5 * math.pi)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--rays", type=int, default=4096)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/cone_region")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sp = Cone(a.alpha)
    t = time.perf_counter()
    cover = ring_cover(sp, RegionConfig(epsilon=a.epsilon, rays=a.rays, seed=a.seed))
    region, audit = assemble_region(sp, cover, a.epsilon, a.rays, seed=a.seed)
    g = region_concave_dist(region, a.epsilon)
    gc = concavity_check(g, -2 + a.epsilon, 10_000, a.seed)
    F, R, info = apex_theorem_b(region, seed=a.seed)
    fc = concavity_check(F, -2 + a.epsilon, 10_000, a.seed)
    sw = sandwich_check(F, sp.origin(), a.epsilon, R / 16, R, 2000, a.seed)
    report = {
        "space": sp.spec(), "virtualPatchCount": cover.count(), "basePatch": cover.base.to_dict(),
        "region": audit.to_dict(), "regionConcaveDistMargin": gc.worst_margin,
        "apexField": {"radius": R, **info, "concavityMargin": fc.worst_margin, "sandwich": sw.to_dict()},
        "seconds": time.perf_counter() - t,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    th, r = region.polar
    rows = np.column_stack([np.append(th, sp.alpha), np.append(r, r[0])])
    np.savetxt(out / "region.csv", rows, delimiter=",", header="angle,radius", comments="")
    print(json.dumps({k: report[k] for k in ("virtualPatchCount", "seconds")}))
    print(f"violations {audit.convexity['violations']}  d_H {audit.hausdorff:.3e}  "
          f"dist-field margin {gc.worst_margin:.3e}  apex margin {fc.worst_margin:.3e}  sandwich {sw.holds}")


if __name__ == "__main__":
    main()
