"""Finite-difference rules shared by geometry, data and energy evaluation.

Second-order central differences in the interior, two-point one-sided
(first-order) differences on the first and last sample of an axis.
"""
import numpy as np

from .model import GridTooSmall


def diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    if arr.shape[axis] < 2:
        raise GridTooSmall(f"axis {axis} has {arr.shape[axis]} samples, need >= 2")
    return np.gradient(arr, h, axis=axis, edge_order=1)


def grad3(arr: np.ndarray, spacing) -> np.ndarray:
    """Stack ``(d/dt, d/dxi1, d/dxi2)`` of a field along a new axis right after the grid axes.

    For ``arr`` of shape ``(n0, n1, n2, *rest)`` the result has shape
    ``(n0, n1, n2, 3, *rest)``.
    """
    return np.stack([diff(arr, a, spacing[a]) for a in range(3)], axis=3)
