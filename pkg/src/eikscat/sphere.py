"""Quasi-uniform point sets on the unit sphere S^{d-1}."""

import numpy as np


def circle_points(n: int, offset: float = 0.0) -> np.ndarray:
    theta = offset + 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5.0**0.5) * k
    rho = np.sqrt(1.0 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def sphere_points(dim: int, n: int) -> np.ndarray:
    """``n`` directions in ``R^dim``; ``n == 1`` returns ``e_1`` only."""
    if n == 1:
        e = np.zeros((1, dim))
        e[0, 0] = 1.0
        return e
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        return circle_points(n)
    if dim == 3:
        return fibonacci_sphere(n)
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere_area(dim: int) -> float:
    from math import gamma, pi

    return 2.0 * pi ** (dim / 2) / gamma(dim / 2)
