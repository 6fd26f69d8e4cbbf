"""Weak approximation at a flat-axis point: certificates and the f_c comparison.

Prints the patch minus f_c along the cone direction at increasing distance
from the axis, which locates where the inner inequality stops holding.
"""
import argparse
import math

import numpy as np

from concavelift.product import f_c_field, weak_axis_patch
from concavelift.spaces import Product
from concavelift.verify import lipschitz_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=1.5 * math.pi)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--c", type=float, default=0.05)
    ap.add_argument("--v", type=float, default=0.5)
    a = ap.parse_args()
    sp = Product(1, a.alpha)
    q = np.array([a.v, 0.0, 0.0])
    w = weak_axis_patch(sp, q, a.epsilon, a.c)
    c = w.certificates
    print(f"K={w.params['K']} R={w.params['R']:.3e} radius={w.radius:.3e}")
    print(f"H concavity certified={c['concavity']['certified']} lipschitz={lipschitz_estimate(w.extra['H'], 4000):.4f}")
    print(f"outer margin {c['inequalities']['outerMin']:.3e} (required {c['requiredMargin']:.3e}); "
          f"inner margin {c['inequalities']['innerMin']:.3e}; lower bound min {c['lowerBoundMin']:.3e}")
    fc = f_c_field(sp, a.c)
    for s in np.geomspace(1e-12, w.radius, 12):
        X = np.array([[a.v, s, 1.0]])
        print(f"|y|={s:.3e}  F - f_c = {w.field(X)[0] - fc(X)[0]: .3e}")


if __name__ == "__main__":
    main()
