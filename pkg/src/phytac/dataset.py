"""Synthetic physics-conditioned tactile dataset.

Objects are superquadrics sampled by radial projection of a Fibonacci sphere,
grasp candidates are antipodal contact pairs, and each grasp contributes a
sweep of frames from first touch to past the force-optimal aperture.

On disk a dataset is a directory holding ``manifest.json`` and
``records.bin``. ``records.bin`` starts with ``b"PHYT"``, ``u32 version``,
``u32 rows``, ``u32 cols`` and then one block per record:
``u32 nbytes | payload | u32 crc32(payload)``, all little-endian, reals as
float32.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry, plant
from .config import TEXTURE_CLASSES, RunConfig
from .errors import (ChecksumError, DatasetError, InsufficientContactError, PhytacError,
                     TruncatedRecordError, VersionMismatchError)
from .geometry import ContactPatch, GraspCandidate
from .numerics import Rng

MAGIC = b"PHYT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_REC_INTS = struct.Struct("<5I")
_REC_REALS = 7  # mass, mu, command_u, feedback_u, w, h, contact_aperture

__all__ = ["ObjectClass", "ObjectSpec", "GraspCandidate", "GraspRecord", "GraspSetup", "Dataset",
           "synthesize_object", "synthesize_candidates", "build_grasp", "generate_grasps",
           "sweep_records", "generate_dataset", "write_dataset", "load_dataset"]


# -- objects ---------------------------------------------------------------------

@dataclass
class ObjectClass:
    size_range: tuple = (15.0, 28.0)
    exponent_range: tuple = (0.3, 1.0)
    texture_amplitude: float = 0.0  # mm radial bump amplitude
    texture_class: str = "smooth"
    mass_range: tuple = (0.05, 0.35)
    friction_mu: float = 0.3
    surface_points: int = 40000


@dataclass
class ObjectSpec:
    id: str
    points: np.ndarray
    normals: np.ndarray
    mass_kg: float
    texture_class: str
    friction_mu: float
    half_axes: tuple
    exponents: tuple

    def __post_init__(self):
        if self.mass_kg <= 0 or self.friction_mu <= 0 or len(self.points) == 0:
            raise DatasetError(f"invalid object {self.id}: mass/friction must be > 0, mesh non-empty")


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _inside_fn(p, axes, exps):
    """Superquadric inside-outside function (1 on the surface)."""
    a, b, c = axes
    e1, e2 = exps
    p = np.atleast_2d(p)
    s = np.abs(p[:, 0] / a) ** (2 / e2) + np.abs(p[:, 1] / b) ** (2 / e2)
    return s ** (e2 / e1) + np.abs(p[:, 2] / c) ** (2 / e1)


def _gradient(p, axes, exps):
    a, b, c = axes
    e1, e2 = exps
    p = np.atleast_2d(p)
    ax, ay, az = np.abs(p[:, 0] / a), np.abs(p[:, 1] / b), np.abs(p[:, 2] / c)
    s = ax ** (2 / e2) + ay ** (2 / e2)
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = np.where(s > 0, s ** (e2 / e1 - 1), 0.0)
    g = np.column_stack([
        (2 / e1) * outer * ax ** (2 / e2 - 1) * np.sign(p[:, 0]) / a,
        (2 / e1) * outer * ay ** (2 / e2 - 1) * np.sign(p[:, 1]) / b,
        (2 / e1) * az ** (2 / e1 - 1) * np.sign(p[:, 2]) / c,
    ])
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _bump(dirs, texture_class):
    theta = np.arccos(np.clip(dirs[:, 2], -1, 1))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    freq = {"fine_grain": 40, "coarse_grain": 16, "ridged": 24}.get(texture_class, 0)
    if texture_class == "ridged":
        return np.sin(freq * phi)
    return np.sin(freq * theta) * np.sin(freq * phi)


def synthesize_object(rng: Rng, class_params: ObjectClass, object_id: str = "obj") -> ObjectSpec:
    lo, hi = class_params.size_range
    elo, ehi = class_params.exponent_range
    if lo <= 0 or hi < lo or elo <= 0 or ehi < elo:
        raise DatasetError("degenerate size/exponent parameters")
    axes = tuple(float(v) for v in rng.uniform(3, lo, hi))
    exps = tuple(float(v) for v in rng.uniform(2, elo, ehi))
    mass = float(rng.uniform(None, *class_params.mass_range))
    dirs = fibonacci_sphere(class_params.surface_points)
    radius = _inside_fn(dirs, axes, exps) ** (-exps[0] / 2)
    surface = dirs * radius[:, None]
    normals = _gradient(surface, axes, exps)
    if class_params.texture_amplitude > 0:
        surface = surface + (class_params.texture_amplitude * _bump(dirs, class_params.texture_class))[:, None] * dirs
    return ObjectSpec(object_id, surface, normals, mass, class_params.texture_class,
                      float(class_params.friction_mu), axes, exps)


def _antipode(point, normal, axes, exps):
    """Exit point of the ray ``point - s * normal`` through the (convex) object."""
    far = 4.0 * max(axes)
    lo, hi = 1e-6 * far, far
    f = lambda s: _inside_fn(point - s * normal, axes, exps)[0] - 1.0  # noqa: E731
    if f(lo) >= 0:
        lo = 1e-3
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    q = point - s * normal
    return q, _gradient(q, axes, exps)[0], s


def synthesize_candidates(obj: ObjectSpec, rng: Rng, n: int, aperture_max: float = 100.0) -> list:
    """``n`` antipodal candidates; the first sits on the pole of the shortest
    half-axis, which is the flattest site of a convex superquadric."""
    if n < 1:
        return []
    axes, exps = obj.half_axes, obj.exponents
    k = int(np.argmin(axes))
    sites = []
    d = np.zeros(3)
    d[k] = 1.0
    sites.append(d * axes[k])
    picks = rng.integers(0, len(obj.points), 8 * n)
    for i in picks:
        sites.append(obj.points[i])
    out = []
    for j, site in enumerate(sites):
        if len(out) == n:
            break
        p = np.asarray(site, dtype=np.float64)
        p = p * _inside_fn(p, axes, exps)[0] ** (-exps[0] / 2)  # onto the smooth surface
        nrm = _gradient(p, axes, exps)[0]
        q, nq, width = _antipode(p, nrm, axes, exps)
        if width > aperture_max:
            continue
        align = float(max(0.0, -nrm @ nq))
        noise = rng.uniform()
        score = 0.35 + 0.35 * align + 0.3 * noise - 0.1 * width / aperture_max
        spin = rng.uniform(None, 0.0, 2 * math.pi) if j else 0.0
        pose = geometry.frame_from_normal(p, nrm, spin)
        out.append(GraspCandidate(pose, float(np.clip(score, 0.0, 1.0)), float(width)))
    return out


# -- grasps and records ------------------------------------------------------------

@dataclass
class GraspSetup:
    object_index: int
    grasp_index: int
    obj: ObjectSpec
    candidate: GraspCandidate
    patch: ContactPatch
    material: plant.Material
    optimal_force: float
    optimal_aperture: float
    imprint_optimal: np.ndarray


@dataclass
class GraspRecord:
    object_id: str
    object_index: int
    grasp_index: int
    frame_index: int
    mass_kg: float
    texture_class: str
    friction_mu: float
    patch: ContactPatch
    command_u: float
    feedback_u: float  # u_f in the prose, u_r in the record tuple
    imprint_current: np.ndarray
    imprint_optimal: np.ndarray

    def quantized(self) -> "GraspRecord":
        f = lambda v: float(np.float32(v))  # noqa: E731
        q = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
        p = self.patch
        patch = ContactPatch(q(p.points), f(p.window_w), f(p.window_h), q(p.depth_map), f(p.contact_aperture))
        return GraspRecord(self.object_id, self.object_index, self.grasp_index, self.frame_index,
                           f(self.mass_kg), self.texture_class, f(self.friction_mu), patch,
                           f(self.command_u), f(self.feedback_u),
                           q(self.imprint_current), q(self.imprint_optimal))


def object_class_for(cfg: RunConfig, texture_class: str) -> ObjectClass:
    d = cfg.data
    bump = {"smooth": 0.0, "fine_grain": 0.02, "coarse_grain": 0.05, "ridged": 0.08}[texture_class]
    return ObjectClass(tuple(d.size_range), tuple(d.exponent_range), bump, texture_class,
                       tuple(d.mass_range), d.friction_mu[texture_class], d.surface_points)


def build_grasp(obj: ObjectSpec, cand: GraspCandidate, cfg: RunConfig, object_index=0, grasp_index=0):
    g, pc = cfg.geometry, cfg.plant
    patch = geometry.extract_patch(obj.points, cand.pose, g.window_w, g.window_h,
                                   (g.grid_rows, g.grid_cols), cand.width_mm, g.contact_depth)
    mat = plant.material_for(obj.texture_class, obj.friction_mu, pc)
    f_star = plant.optimal_force(obj.mass_kg, obj.friction_mu, pc)
    u_star = plant.optimal_aperture(patch, obj.mass_kg, mat, pc)
    x_s = plant.render_imprint(patch, u_star, pc, mat, noise_sigma=0.0)
    return GraspSetup(object_index, grasp_index, obj, cand, patch, mat, f_star, u_star, x_s)


def generate_grasps(cfg: RunConfig, seed: int, n_objects: int, grasps_per_object: int, textures=None) -> list:
    """Deterministic list of feasible grasp setups.

    ``textures`` optionally fixes the texture class of each object.
    """
    root = Rng(seed)
    setups = []
    for oi in range(n_objects):
        orng = root.spawn(oi)
        texture = TEXTURE_CLASSES[orng.integers(0, len(TEXTURE_CLASSES))]
        if textures is not None:
            texture = textures[oi]
        obj = synthesize_object(orng, object_class_for(cfg, texture), f"obj{oi:03d}")
        cands = synthesize_candidates(obj, orng, 4 * grasps_per_object + 2, cfg.plant.aperture_max)
        got = 0
        for cand in cands:
            if got == grasps_per_object:
                break
            try:
                setups.append(build_grasp(obj, cand, cfg, oi, got))
            except (InsufficientContactError, PhytacError):
                continue
            got += 1
        if got < grasps_per_object:
            raise DatasetError(f"object {obj.id}: only {got} feasible grasps")
    return setups


def sweep_apertures(setup: GraspSetup, frames: int, overshoot: float) -> np.ndarray:
    u0 = setup.patch.contact_aperture
    u_end = setup.optimal_aperture - overshoot * (u0 - setup.optimal_aperture)
    return np.linspace(u0, max(u_end, 0.0), frames)


def sweep_records(setup: GraspSetup, cfg: RunConfig, rng: Rng | None = None) -> list:
    recs = []
    for fi, u in enumerate(sweep_apertures(setup, cfg.data.frames_per_grasp, cfg.data.overshoot)):
        img = plant.render_imprint(setup.patch, u, cfg.plant, setup.material, rng)
        recs.append(GraspRecord(setup.obj.id, setup.object_index, setup.grasp_index, fi,
                                setup.obj.mass_kg, setup.obj.texture_class, setup.obj.friction_mu,
                                setup.patch, float(u), float(u), img, setup.imprint_optimal))
    return recs


# -- serialization -------------------------------------------------------------------

def _pack(rec: GraspRecord) -> bytes:
    p = rec.patch
    head = _REC_INTS.pack(rec.object_index, rec.grasp_index, rec.frame_index,
                          TEXTURE_CLASSES.index(rec.texture_class), len(p.points))
    reals = np.concatenate([
        [rec.mass_kg, rec.friction_mu, rec.command_u, rec.feedback_u,
         p.window_w, p.window_h, p.contact_aperture],
        np.asarray(p.points).ravel(), np.asarray(p.depth_map).ravel(),
        np.asarray(rec.imprint_current).ravel(), np.asarray(rec.imprint_optimal).ravel(),
    ]).astype("<f4")
    return head + reals.tobytes()


def _unpack(payload: bytes, rows: int, cols: int, object_ids) -> GraspRecord:
    oi, gi, fi, ti, n = _REC_INTS.unpack_from(payload)
    expect = _REC_INTS.size + 4 * (_REC_REALS + 3 * n + 3 * rows * cols)
    if len(payload) != expect:
        raise TruncatedRecordError(f"record payload {len(payload)} bytes, expected {expect}")
    vals = np.frombuffer(payload, dtype="<f4", offset=_REC_INTS.size).astype(np.float64)
    mass, mu, cu, fu, w, h, u0 = (float(v) for v in vals[:_REC_REALS])
    k = _REC_REALS
    pts = vals[k:k + 3 * n].reshape(n, 3)
    k += 3 * n
    cells = rows * cols
    depth, cur, opt = (vals[k + i * cells:k + (i + 1) * cells].reshape(rows, cols) for i in range(3))
    oid = object_ids[oi] if oi < len(object_ids) else f"obj{oi:03d}"
    return GraspRecord(oid, oi, gi, fi, mass, TEXTURE_CLASSES[ti], mu,
                       ContactPatch(pts, w, h, depth, u0), cu, fu, cur, opt)


def _json_float(v):
    return float(np.float32(v))


def write_dataset(out_dir, records, cfg: RunConfig, seed: int, objects=(), grasps=()) -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows, cols = cfg.geometry.grid_rows, cfg.geometry.grid_cols
        offsets = []
        with open(out / "records.bin", "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols))
            for rec in records:
                payload = _pack(rec)
                offsets.append(fh.tell())
                fh.write(struct.pack("<I", len(payload)) + payload
                         + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
        manifest = {
            "format": "phytac-dataset",
            "version": FORMAT_VERSION,
            "grid": [rows, cols],
            "window": [cfg.geometry.window_w, cfg.geometry.window_h],
            "aperture_max": cfg.plant.aperture_max,
            "record_count": len(offsets),
            "offsets": offsets,
            "seed": int(seed),
            "records_file": "records.bin",
            "objects": [
                {"id": o.id, "mass_kg": _json_float(o.mass_kg), "texture_class": o.texture_class,
                 "friction_mu": _json_float(o.friction_mu),
                 "half_axes": [_json_float(a) for a in o.half_axes],
                 "exponents": [_json_float(e) for e in o.exponents]}
                for o in objects
            ],
            "grasps": [
                {"object_index": s.object_index, "grasp_index": s.grasp_index,
                 "score_s": _json_float(s.candidate.score_s), "width_mm": _json_float(s.candidate.width_mm),
                 "optimal_force": _json_float(s.optimal_force),
                 "optimal_aperture": _json_float(s.optimal_aperture)}
                for s in grasps
            ],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


def generate_dataset(cfg: RunConfig, out_dir, seed: int | None = None) -> dict:
    seed = cfg.data.seed if seed is None else seed
    setups = generate_grasps(cfg, seed, cfg.data.n_objects, cfg.data.grasps_per_object)
    noise_rng = Rng(seed).spawn(0xDA7A) if cfg.plant.sensor_noise_sigma > 0 else None
    records = [r for s in setups for r in sweep_records(s, cfg, noise_rng)]
    objects = []
    for s in setups:
        if s.grasp_index == 0:
            objects.append(s.obj)
    return write_dataset(out_dir, records, cfg, seed, objects, setups)


class Dataset:
    """Streaming reader; records are decoded on access, never all at once."""

    def __init__(self, path):
        self.path = Path(path)
        mpath = self.path / "manifest.json"
        if not mpath.exists():
            raise DatasetError(f"no manifest.json in {self.path}")
        try:
            self.manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise ChecksumError(f"manifest unreadable: {exc}") from exc
        if self.manifest.get("format") != "phytac-dataset":
            raise DatasetError("manifest is not a phytac dataset")
        if self.manifest.get("version") != FORMAT_VERSION:
            raise VersionMismatchError(f"dataset version {self.manifest.get('version')}, "
                                       f"reader supports {FORMAT_VERSION}")
        self.rows, self.cols = self.manifest["grid"]
        self.offsets = self.manifest["offsets"]
        if len(self.offsets) != self.manifest["record_count"]:
            raise DatasetError("record_count does not match offsets")
        self.object_ids = [o["id"] for o in self.manifest.get("objects", [])]
        self._bin = self.path / self.manifest.get("records_file", "records.bin")
        with open(self._bin, "rb") as fh:
            head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncatedRecordError("records file shorter than its header")
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ChecksumError(f"bad magic {magic!r} in {self._bin}")
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"records version {version}, reader supports {FORMAT_VERSION}")
        if (rows, cols) != (self.rows, self.cols):
            raise DatasetError("records grid disagrees with manifest")

    def __len__(self):
        return len(self.offsets)

    def _read(self, fh, offset) -> GraspRecord:
        fh.seek(offset)
        raw = fh.read(4)
        if len(raw) < 4:
            raise TruncatedRecordError(f"record at {offset}: missing length")
        (n,) = struct.unpack("<I", raw)
        payload = fh.read(n)
        tail = fh.read(4)
        if len(payload) < n or len(tail) < 4:
            raise TruncatedRecordError(f"record at {offset} truncated")
        if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", tail)[0]:
            raise ChecksumError(f"CRC mismatch in record at offset {offset}")
        rec = _unpack(payload, self.rows, self.cols, self.object_ids)
        self._validate(rec)
        return rec

    def _validate(self, rec: GraspRecord):
        grid = (self.rows, self.cols)
        if rec.imprint_current.shape != grid or rec.imprint_optimal.shape != grid:
            raise DatasetError("imprint grid mismatch")
        umax = self.manifest.get("aperture_max", np.inf)
        if not (0 <= rec.command_u <= umax and 0 <= rec.feedback_u <= umax):
            raise DatasetError("aperture outside [0, aperture_max]")
        p = rec.patch
        if len(p.points) and (np.abs(p.points[:, 0]).max() > p.window_w / 2 * (1 + 1e-6)
                              or np.abs(p.points[:, 1]).max() > p.window_h / 2 * (1 + 1e-6)):
            raise DatasetError("patch point outside the sensor window")

    def __getitem__(self, i) -> GraspRecord:
        with open(self._bin, "rb") as fh:
            return self._read(fh, self.offsets[i])

    def __iter__(self):
        with open(self._bin, "rb") as fh:
            for off in self.offsets:
                yield self._read(fh, off)


def load_dataset(path):
    """Return ``(manifest, record_iterator)``; see :class:`Dataset` for random access."""
    ds = Dataset(path)
    return ds.manifest, iter(ds)


@dataclass
class Arrays:
    """Dense arrays gathered from a dataset for training."""

    x_c: np.ndarray
    x_s: np.ndarray
    depth: np.ndarray
    mass: np.ndarray
    texture: np.ndarray  # class index
    command_u: np.ndarray
    group: np.ndarray  # (object_index, grasp_index) flattened id
    frame: np.ndarray = field(default=None)


def gather(records) -> Arrays:
    xc, xs, dp, m, t, u, g, f = [], [], [], [], [], [], [], []
    for r in records:
        xc.append(r.imprint_current.ravel())
        xs.append(r.imprint_optimal.ravel())
        dp.append(r.patch.depth_image().ravel())
        m.append(r.mass_kg)
        t.append(TEXTURE_CLASSES.index(r.texture_class))
        u.append(r.command_u)
        g.append(r.object_index * 10000 + r.grasp_index)
        f.append(r.frame_index)
    return Arrays(np.array(xc), np.array(xs), np.array(dp), np.array(m), np.array(t),
                  np.array(u), np.array(g), np.array(f))
