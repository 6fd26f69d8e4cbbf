"""Taylor coefficient of the model function and spline derivative constants."""
import numpy as np

from concavelift.construct import build_reparam, model_mu


def main():
    ts = np.geomspace(1e-3, 1e-2, 40)
    x = np.array([np.cos(0.3), np.sin(0.3)])
    for R in (0.05, 0.01, 0.002):
        f = model_mu(2, R)
        y = -f(ts[:, None] * x) / ts**2
        coef = np.polyfit(ts, y, 1)[1]
        print(f"R={R}: leading coefficient {coef:.6f}, expected {1 - R:.6f}")
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        s = build_reparam(eps)
        print(f"eps={eps}: measured B {s.measured_B:.4f}, bounds {s.bounds}")


if __name__ == "__main__":
    main()
