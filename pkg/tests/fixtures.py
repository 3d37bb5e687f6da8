"""Shared coefficient fixtures for the assembly checks."""
import numpy as np

from evflow.variational import ElCoefficients, RegParams


def random_coefficients(grid, seed, lambda0=0.3):
    """Random symmetric EL coefficients; temporal entries vanish when ``lambda0 == 0``."""
    r = np.random.default_rng(seed)
    sh = grid.shape
    q = r.uniform(-1, 1, sh + (3, 3))
    q = q + np.swapaxes(q, -1, -2)
    q[..., 0, :] *= lambda0 > 0
    q[..., :, 0] *= lambda0 > 0
    p = r.uniform(-1, 1, sh + (3, 2, 2))
    p[..., 0, :, :] *= lambda0 > 0
    c = r.uniform(-1, 1, sh + (3, 2, 2))
    c[..., 0, :, :] *= lambda0 > 0
    return ElCoefficients(grid, RegParams(lambda0, 0.5), a=r.uniform(-1, 1, sh + (2,)),
                          b=r.uniform(-1, 1, sh + (2, 2)), c=c, d=-q, p=p, q=q)
