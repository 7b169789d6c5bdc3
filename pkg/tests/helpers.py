"""Shared constructors for the test suite."""

import numpy as np

from phytac.geometry import GraspCandidate, flat_patch_from_depth, make_pose

W = H = 20.0


def grid_xy(rows=32, cols=32, w=W, h=H):
    xs = -w / 2 + (np.arange(cols) + 0.5) * w / cols
    ys = -h / 2 + (np.arange(rows) + 0.5) * h / rows
    return np.meshgrid(xs, ys)


def curved_depth(kind, rng, rows=32, cols=32):
    """Depth maps for deliberately non-flat contact patches."""
    gx, gy = grid_xy(rows, cols)
    if kind == "cap":
        return -(gx ** 2 + gy ** 2) / (2.0 * rng.uniform(None, 5.0, 15.0))
    if kind == "ridge":
        return -rng.uniform(None, 0.5, 1.2) * np.abs(gx)
    if kind == "cone":
        return -rng.uniform(None, 0.5, 1.2) * np.hypot(gx, gy)
    if kind == "bumps":
        lam = rng.uniform(None, 4.0, 8.0)
        return rng.uniform(None, 0.5, 1.5) * np.sin(2 * np.pi * gx / lam) * np.sin(2 * np.pi * gy / lam)
    raise ValueError(kind)


def flat_depth(rng, rows=32, cols=32):
    gx, gy = grid_xy(rows, cols)
    return rng.uniform(None, -0.2, 0.2) * gx + rng.uniform(None, -0.2, 0.2) * gy


def ranking_scene(rng, n_sharp=None):
    """One flat candidate (at a random slot) among 3-5 curved ones.

    Returns ``(candidates, patches, flat_index)``. Planner scores for every
    candidate come from one narrow band, as a planner's top-N list does.
    """
    n_sharp = n_sharp or int(rng.integers(3, 6))
    kinds = ["cap", "ridge", "cone", "bumps"]
    depths = [curved_depth(kinds[int(rng.integers(0, 4))], rng) for _ in range(n_sharp)]
    flat_at = int(rng.integers(0, n_sharp + 1))
    depths.insert(flat_at, flat_depth(rng))
    patches = [flat_patch_from_depth(d, W, H) for d in depths]
    cands = [GraspCandidate(make_pose(np.eye(3), np.zeros(3)), float(rng.uniform(None, 0.7, 0.9)))
             for _ in depths]
    return cands, patches, flat_at
