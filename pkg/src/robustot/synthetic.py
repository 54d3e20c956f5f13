"""Synthetic point sets and ground-truth warps for experiments and tests."""

import numpy as np

from .transform import TpsTransform, grid_control_points, project_side_conditions


def fish_cloud(n, seed=0, jitter=0.004):
    """Points along a fish-like outline (body, tail and an eye) in the unit box."""
    rng = np.random.default_rng(seed)
    n_body = int(0.7 * n)
    n_tail = int(0.22 * n)
    n_eye = n - n_body - n_tail
    s = rng.uniform(0.0, 2.0 * np.pi, n_body)
    body = np.c_[0.45 + 0.25 * np.cos(s), 0.5 + 0.14 * np.sin(s) * (1.0 + 0.3 * np.cos(s))]
    u = rng.uniform(0.0, 1.0, n_tail)
    side = rng.integers(0, 2, n_tail) * 2 - 1
    tail = np.c_[0.2 - 0.12 * u, 0.5 + side * (0.02 + 0.13 * u)]
    a = rng.uniform(0.0, 2.0 * np.pi, n_eye)
    eye = np.c_[0.6 + 0.02 * np.cos(a), 0.55 + 0.02 * np.sin(a)]
    pts = np.vstack([body, tail, eye])
    return pts + jitter * rng.standard_normal(pts.shape)


def uniform_cloud(n, dim=2, seed=0, lo=0.2, hi=0.8):
    return np.random.default_rng(seed).uniform(lo, hi, (n, dim))


def random_warp(dim=2, seed=0, affine=0.08, bend=0.02, controls=None):
    """Affine perturbation of the identity plus a small TPS bend.

    ``affine`` scales the perturbation of ``A`` and the translation; ``bend``
    is the rms size of the kernel weights (after side-condition projection).
    The warp shares the solver's default control grid, so it is representable.
    """
    rng = np.random.default_rng(seed)
    c = grid_control_points(dim) if controls is None else np.asarray(controls, float)
    A = np.eye(dim) + affine * rng.standard_normal((dim, dim))
    b = affine * 0.5 * rng.standard_normal(dim)
    # keep the image of the box centre near the centre
    b += 0.5 - (A @ np.full(dim, 0.5) + b)
    b += affine * 0.3 * rng.standard_normal(dim)
    W = project_side_conditions(rng.standard_normal((len(c), dim)), c)
    if np.any(W):
        W *= bend / np.sqrt(np.mean(W**2))
    return TpsTransform(c, A, b, W)


def add_outliers(points, fraction, seed=0, lo=0.0, hi=1.0):
    """Append uniform outliers so they make up ``fraction`` of the result."""
    pts = np.asarray(points, dtype=float)
    n_out = int(round(fraction / (1.0 - fraction) * len(pts)))
    rng = np.random.default_rng(seed)
    return np.vstack([pts, rng.uniform(lo, hi, (n_out, pts.shape[1]))])
