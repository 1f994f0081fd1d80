"""Grid refinement of the discrete comparators toward their continuum values.

Mode-sum e0 on log-spaced radial shells, and the box mode sum of W against
the truncated continuum kernel.

    python scripts/refine_comparators.py
"""

import numpy as np

from nelsonsim import experiments as ex
from nelsonsim import hamiltonians as hm
from nelsonsim import integrals as ig
from nelsonsim.model_space import ModeGrid, build_radial_modes


def log_shells(lo_exp, hi_exp, n_radial, n_angular):
    gs = [build_radial_modes(10.0**e, 10.0 ** (e + 1), n_radial, n_angular) for e in range(lo_exp, hi_exp)]
    return ModeGrid(np.vstack([g.k for g in gs]), np.concatenate([g.weights for g in gs]), 10.0**lo_exp, 10.0**hi_exp, 3)


def main():
    e0 = ig.e0_value()
    p = hm.PhysParams(mu=1.0, lambda_uv=1e4, K=1e-4)
    print(f"e0 (continuum) = {e0:.10f}")
    for nr, na in ((6, 30), (8, 60), (10, 100)):
        g = log_shells(-4, 4, nr, na)
        v = hm.e0_discrete(p, g)
        print(f"  modes {g.size:6d}  e0_disc = {v:.8f}  rel err {abs(v - e0) / e0:.2e}")
    spacings = (0.5, 0.25, 0.125, 0.0625)
    print("max |W_disc - W_K| on |x| in {0.5, 1, 2}, K = 2")
    for s, err in zip(spacings, ex.continuum_W_mismatch(2.0, spacings)):
        print(f"  spacing {s:7.4f}  {err:.4e}")


if __name__ == "__main__":
    main()
