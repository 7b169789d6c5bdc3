"""Contact-patch extraction and physics-inspired pose scoring.

Frames: a candidate pose maps object-frame points into the fingertip frame,
whose origin sits on the contact point with +z pointing out of the object
toward the sensor. The sensor window is the rectangle ``|x| <= w/2``,
``|y| <= h/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import InsufficientContactError, PhytacError, ShapeError

MIN_CONTACT_POINTS = 10
DEFAULT_WEIGHTS = dict(alpha=0.2, beta=0.6, gamma=0.2, delta=0.5)


# -- rigid transforms ---------------------------------------------------------

def make_pose(rotation, translation) -> np.ndarray:
    pose = np.eye(4)
    pose[:3, :3] = rotation
    pose[:3, 3] = translation
    return pose


def apply_pose(pose, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ pose[:3, :3].T + pose[:3, 3]


def invert_pose(pose) -> np.ndarray:
    r = pose[:3, :3]
    return make_pose(r.T, -r.T @ pose[:3, 3])


def check_rotation(pose, tol: float = 1e-9):
    r = np.asarray(pose)[:3, :3]
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol or np.linalg.det(r) <= 0:
        raise ShapeError("pose rotation block is not a proper orthonormal rotation")


def frame_from_normal(point, normal, spin: float = 0.0) -> np.ndarray:
    """Fingertip pose with origin at ``point`` and +z along ``normal``."""
    z = np.asarray(normal, dtype=np.float64)
    z = z / np.linalg.norm(z)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c, s = np.cos(spin), np.sin(spin)
    x, y = c * x + s * y, -s * x + c * y
    rot = np.stack([x, y, z])  # rows: fingertip axes in object coordinates
    return make_pose(rot, -rot @ np.asarray(point, dtype=np.float64))


# -- data types ---------------------------------------------------------------

@dataclass
class GraspCandidate:
    pose: np.ndarray  # 4x4, fingertip <- object
    score_s: float
    width_mm: float = 0.0  # aperture at first contact

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        check_rotation(self.pose)
        if not 0.0 <= self.score_s <= 1.0:
            raise ShapeError(f"score_s must lie in [0, 1], got {self.score_s}")


@dataclass
class ContactPatch:
    points: np.ndarray  # (N, 3) fingertip frame, mm
    window_w: float
    window_h: float
    depth_map: np.ndarray  # (rows, cols) z of the surface closest to the sensor
    contact_aperture: float = 0.0  # gripper opening at first touch, mm

    @property
    def grid(self):
        return self.depth_map.shape

    @property
    def cell_area(self) -> float:
        rows, cols = self.depth_map.shape
        return (self.window_w / cols) * (self.window_h / rows)

    def depth_image(self, depth_range: float = 5.0) -> np.ndarray:
        """Depth map as a [0, 1] image: 1 at the highest point, 0 at ``depth_range`` below."""
        top = self.depth_map.max()
        return np.clip(1.0 + (self.depth_map - top) / depth_range, 0.0, 1.0)


@dataclass
class PatchMetrics:
    s_rough: float
    c_n: float
    u_c: float


@dataclass
class RankedCandidate:
    candidate: GraspCandidate
    metrics: PatchMetrics  # normalized across the candidate set
    f_cost: float
    w_p: float
    index: int = 0


@dataclass
class NormalEstimate:
    normals: np.ndarray
    curvature: np.ndarray
    degenerate: np.ndarray = field(default=None)


# -- patch extraction ----------------------------------------------------------

def contact_region(object_points, pose, depth: float) -> np.ndarray:
    """Object points lying within ``depth`` mm behind the fingertip contact plane.

    Stands in for segmenting the contact-region cloud before cropping, so the
    far side of the object never enters the window.
    """
    pts = np.asarray(object_points, dtype=np.float64)
    local = apply_pose(pose, pts)
    return pts[local[:, 2] >= -depth]


def extract_patch(object_points, pose, w: float, h: float, grid=(32, 32),
                  contact_aperture: float = 0.0, max_depth: float | None = None) -> ContactPatch:
    """Transform points into the fingertip frame and keep those inside the window."""
    if w <= 0 or h <= 0:
        raise ShapeError("window dimensions must be positive")
    pose = np.asarray(pose, dtype=np.float64)
    check_rotation(pose)
    pts = np.asarray(object_points, dtype=np.float64)
    if max_depth is not None:
        pts = contact_region(pts, pose, max_depth)
    local = apply_pose(pose, pts)
    keep = (np.abs(local[:, 0]) <= w / 2) & (np.abs(local[:, 1]) <= h / 2)
    local = local[keep]
    if len(local) < MIN_CONTACT_POINTS:
        raise InsufficientContactError(
            f"insufficient contact: {len(local)} points inside the {w}x{h} mm window")
    rows, cols = grid
    depth, filled = kernels.rasterize_nearest(np.ascontiguousarray(local), rows, cols, w, h)
    depth = kernels.fill_holes(depth, filled)
    return ContactPatch(local, float(w), float(h), np.asarray(depth), float(contact_aperture))


def flat_patch_from_depth(depth_map, w: float, h: float, contact_aperture: float = 0.0) -> ContactPatch:
    """Patch whose points are the cell centres of a given depth map (test/scene helper)."""
    depth_map = np.asarray(depth_map, dtype=np.float64)
    rows, cols = depth_map.shape
    xs = -w / 2 + (np.arange(cols) + 0.5) * w / cols
    ys = -h / 2 + (np.arange(rows) + 0.5) * h / rows
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel(), depth_map.ravel()])
    return ContactPatch(pts, float(w), float(h), depth_map.copy(), float(contact_aperture))


# -- local geometry ------------------------------------------------------------

def estimate_normals_curvature(patch: ContactPatch, k: int = 12) -> NormalEstimate:
    """PCA over each point and its ``k`` nearest neighbours.

    Normal is the smallest-variance direction, flipped toward +z; curvature is
    ``l0 / (l0 + l1 + l2)``. Zero-covariance neighbourhoods get normal +z,
    curvature 0 and are flagged.
    """
    pts = np.asarray(patch.points, dtype=np.float64)
    if k < 4:
        raise ValueError("k must be >= 4")
    if len(pts) < k + 1:
        raise InsufficientContactError(f"need at least {k + 1} points, have {len(pts)}")
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    nbrs = pts[idx]  # (N, k+1, 3)
    centred = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    normals = evecs[:, :, 0].copy()
    normals[normals[:, 2] < 0] *= -1.0
    total = evals.sum(axis=1)
    degenerate = total <= 1e-300
    curvature = np.where(degenerate, 0.0, evals[:, 0] / np.where(degenerate, 1.0, total))
    normals[degenerate] = (0.0, 0.0, 1.0)
    return NormalEstimate(normals, curvature, degenerate)


def patch_metrics(patch: ContactPatch, normals, curvatures) -> PatchMetrics:
    pts = np.asarray(patch.points, dtype=np.float64)
    centred = pts - pts.mean(axis=0)
    # total least squares plane: residual variance is the smallest eigenvalue
    evals = np.linalg.eigvalsh(centred.T @ centred / len(pts))
    s_rough = float(np.sqrt(max(evals[0], 0.0)))
    normals = np.asarray(normals, dtype=np.float64)
    mean_n = normals.mean(axis=0)
    norm = np.linalg.norm(mean_n)
    c_n = float(np.mean(np.maximum(0.0, normals @ (mean_n / norm)))) if norm > 0 else 0.0
    curv = np.asarray(curvatures, dtype=np.float64)
    mean_c = curv.mean()
    u_c = float(curv.std() / mean_c) if mean_c > 1e-12 else 0.0
    return PatchMetrics(s_rough, min(max(c_n, 0.0), 1.0), u_c)


def measure_patch(patch: ContactPatch, k: int = 12) -> PatchMetrics:
    est = estimate_normals_curvature(patch, k)
    return patch_metrics(patch, est.normals, est.curvature)


# -- ranking -----------------------------------------------------------------

def _minmax(values):
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def normalize_metrics(raw) -> list:
    """Min-max normalize each metric across the set.

    ``c_n`` is a benefit, so an all-equal set maps it to 1 (no inconsistency
    cost) while the cost metrics map to 0.
    """
    s = _minmax([m.s_rough for m in raw])
    u = _minmax([m.u_c for m in raw])
    cn_raw = np.array([m.c_n for m in raw])
    cn = 1.0 - _minmax(1.0 - cn_raw)
    return [PatchMetrics(float(a), float(b), float(c)) for a, b, c in zip(s, cn, u)]


def geometric_cost(m: PatchMetrics, alpha: float, beta: float, gamma: float) -> float:
    return alpha * m.s_rough + beta * (1.0 - m.c_n) + gamma * m.u_c


def combined_cost(f_cost: float, score_s: float, delta: float) -> float:
    return delta * (1.0 - score_s) + (1.0 - delta) * f_cost


def rank_candidates(candidates, raw_metrics, alpha=0.2, beta=0.6, gamma=0.2, delta=0.5,
                    normalized: bool = False) -> list:
    """Score candidates by W_p and return them best (smallest) first.

    Ties go to the higher planner score, then to the earlier candidate.
    """
    candidates = list(candidates)
    raw_metrics = list(raw_metrics)
    if not candidates:
        raise PhytacError("rank_candidates: empty candidate set")
    if len(raw_metrics) != len(candidates):
        raise ShapeError("one PatchMetrics per candidate required")
    if min(alpha, beta, gamma, delta) < 0 or abs(alpha + beta + gamma - 1.0) > 1e-9:
        raise ValueError("weights must be >= 0 with alpha + beta + gamma = 1")
    norm = raw_metrics if normalized else normalize_metrics(raw_metrics)
    ranked = []
    for i, (cand, m) in enumerate(zip(candidates, norm)):
        f = geometric_cost(m, alpha, beta, gamma)
        ranked.append(RankedCandidate(cand, m, f, combined_cost(f, cand.score_s, delta), i))
    ranked.sort(key=lambda r: (r.w_p, -r.candidate.score_s, r.index))
    return ranked


def mismatch_rate(scenes, n: int, **weights) -> float:
    """Fraction of scenes whose best-W_p candidate among the top-``n`` by S
    differs from the best-S candidate.

    ``scenes`` is a sequence of ``(candidates, raw_metrics)`` pairs.
    """
    if not scenes:
        return 0.0
    w = dict(DEFAULT_WEIGHTS, **weights)
    misses = 0
    for candidates, metrics in scenes:
        if len(candidates) < n:
            raise ValueError(f"scene has {len(candidates)} candidates, need {n}")
        order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score_s, i))[:n]
        ranked = rank_candidates([candidates[i] for i in order], [metrics[i] for i in order], **w)
        best_wp = order[ranked[0].index]
        misses += best_wp != order[0]
    return misses / len(scenes)


# -- scene files ----------------------------------------------------------------

@dataclass
class Scene:
    points: np.ndarray
    candidates: list

    def patches(self, w, h, grid=(32, 32), max_depth=None):
        return [extract_patch(self.points, c.pose, w, h, grid, c.width_mm, max_depth)
                for c in self.candidates]


def write_scene(scene: Scene, path):
    """Text scene: ``points N`` + N lines of ``x y z``; ``candidates K`` + K lines
    of 12 pose reals (row-major 3x4 ``[R | t]``) and the score."""
    lines = ["# phytac scene v1", f"points {len(scene.points)}"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in scene.points]
    lines.append(f"candidates {len(scene.candidates)}")
    for c in scene.candidates:
        vals = list(c.pose[:3, :4].ravel()) + [c.score_s]
        lines.append(" ".join(f"{v:.17g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene(path) -> Scene:
    rows = [ln.split() for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        if rows[0][0] != "points":
            raise ValueError("expected 'points N'")
        n = int(rows[0][1])
        pts = np.array([[float(v) for v in r] for r in rows[1:1 + n]]).reshape(n, 3)
        head = rows[1 + n]
        if head[0] != "candidates":
            raise ValueError("expected 'candidates K'")
        k = int(head[1])
        cands = []
        for r in rows[2 + n:2 + n + k]:
            vals = [float(v) for v in r]
            if len(vals) != 13:
                raise ValueError("candidate line needs 12 pose reals and a score")
            pose = np.eye(4)
            pose[:3, :4] = np.array(vals[:12]).reshape(3, 4)
            cands.append(GraspCandidate(pose, vals[12]))
        if len(cands) != k:
            raise ValueError("fewer candidate lines than declared")
    except (IndexError, ValueError) as exc:
        raise PhytacError(f"malformed scene file {path}: {exc}") from exc
    return Scene(pts, cands)


def read_point_cloud_text(path) -> np.ndarray:
    """Flat ``x y z`` per line point cloud (comments with ``#``)."""
    pts = np.loadtxt(path, comments="#", ndmin=2)
    if pts.shape[1] != 3:
        raise ShapeError(f"{path}: expected 3 columns, got {pts.shape[1]}")
    return pts


def with_width(candidate: GraspCandidate, width: float) -> GraspCandidate:
    return replace(candidate, width_mm=float(width))
