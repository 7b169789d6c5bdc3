"""Latent-space LQR grasp servo.

The error state is the codec latent of the current imprint minus the goal
latent, divided per dimension by a fixed scale vector. Linear dynamics
``e' = A e + B du + d`` are identified by recursive least squares (offline
from dataset transitions, then online during the episode); the gain comes from
the discrete algebraic Riccati equation on ``(A, B)`` with ``d`` left out.
The episode ends with a hold once the error norm has stayed under the
threshold for a full window.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import codec as codec_mod
from . import plant
from .config import ControlConfig, RunConfig
from .errors import ForceLimitError, ShapeError, UnstabilizableError
from .metrics import GraspOutcome, classify_trace
from .numerics import Rng

SCALE_FLOOR = 1e-6


def fit_scale(latents) -> np.ndarray:
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise ValueError("fit_scale needs at least 2 latent vectors")
    return np.maximum(z.std(axis=0), SCALE_FLOOR)


def latent_error(z_c, z_g, scale) -> np.ndarray:
    z_c, z_g, scale = (np.asarray(v, dtype=np.float64) for v in (z_c, z_g, scale))
    if not z_c.shape == z_g.shape == scale.shape:
        raise ShapeError(f"latent_error: shapes {z_c.shape}, {z_g.shape}, {scale.shape}")
    return (z_c - z_g) / scale


# -- identification ----------------------------------------------------------------

@dataclass
class DynamicsEstimate:
    theta: np.ndarray  # m x (m + 2): [A | B | d]
    cov: np.ndarray  # (m + 2) x (m + 2)
    forgetting: float = 0.98
    init_cov: float = 1.0
    count: int = 0
    resets: int = 0

    @property
    def m(self):
        return self.theta.shape[0]

    @property
    def A(self):
        return self.theta[:, :self.m]

    @property
    def B(self):
        return self.theta[:, self.m:self.m + 1]

    @property
    def d(self):
        return self.theta[:, self.m + 1]

    def copy(self, forgetting: float | None = None) -> "DynamicsEstimate":
        return DynamicsEstimate(self.theta.copy(), self.cov.copy(),
                                self.forgetting if forgetting is None else forgetting,
                                self.init_cov, self.count, self.resets)


def initial_estimate(m: int, rng: Rng, forgetting=0.98, init_cov=1.0, a0=0.9, b_scale=1e-2) -> DynamicsEstimate:
    """A = a0 I, B small random, d = 0."""
    theta = np.zeros((m, m + 2))
    theta[:, :m] = a0 * np.eye(m)
    theta[:, m] = b_scale * rng.normal(m)
    return DynamicsEstimate(theta, init_cov * np.eye(m + 2), forgetting, init_cov)


def rls_update(est: DynamicsEstimate, e_prev, du_prev: float, e_next) -> DynamicsEstimate:
    """One forgetting-factor RLS step on the regressor ``[e_prev; du; 1]`` (in place)."""
    phi = np.concatenate([np.asarray(e_prev, dtype=np.float64).ravel(), [float(du_prev), 1.0]])
    y = np.asarray(e_next, dtype=np.float64).ravel()
    if phi.size != est.m + 2 or y.size != est.m:
        raise ShapeError("rls_update: regressor/target length mismatch")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y))):
        raise ValueError("rls_update: non-finite sample")
    lam = est.forgetting
    pphi = est.cov @ phi
    gain = pphi / (lam + phi @ pphi)
    est.theta += np.outer(y - est.theta @ phi, gain)
    cov = (est.cov - np.outer(gain, pphi)) / lam
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)) or np.linalg.eigvalsh(cov)[0] <= 0.0:
        cov = est.init_cov * np.eye(est.m + 2)
        est.resets += 1
    est.cov = cov
    est.count += 1
    return est


def transition_pairs(groups, frames, max_gap: int = 2):
    """Index pairs (i, j) of frames of one grasp at most ``max_gap`` apart, both directions."""
    groups = np.asarray(groups)
    frames = np.asarray(frames)
    pairs = []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        idx = idx[np.argsort(frames[idx], kind="stable")]
        for a in range(len(idx)):
            for b in range(len(idx)):
                if a != b and abs(a - b) <= max_gap:
                    pairs.append((idx[a], idx[b]))
    return pairs


def warm_start(est: DynamicsEstimate, errors, apertures, pairs) -> DynamicsEstimate:
    """Offline identification pass (no forgetting) over dataset transitions."""
    lam = est.forgetting
    est.forgetting = 1.0
    for i, j in pairs:
        rls_update(est, errors[i], apertures[j] - apertures[i], errors[j])
    est.forgetting = lam
    return est


# -- gain synthesis ----------------------------------------------------------------

@dataclass
class LqrGain:
    P: np.ndarray
    K: np.ndarray  # 1 x m
    q_weight: float = 1.0
    r_weight: float = 1.0
    iterations: int = 0
    spectral_radius: float = 0.0


def riccati_residual(P, A, B, Q, R) -> float:
    bp = B.T @ P
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + bp @ B, bp @ A)
    return float(np.abs(P - rhs).max())


def solve_dare(A, B, Q=None, R=None, tol: float = 1e-10, max_iter: int = 10000) -> LqrGain:
    """Fixed-point Riccati iteration from ``P = Q`` and the resulting LQR gain.

    Stops when ``max|dP| <= tol``; for large ``P`` the bound is raised to the
    roundoff floor ``64 eps max|P|`` so the stop stays reachable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.asarray(B, dtype=np.float64).reshape(A.shape[0], -1)
    m, k = B.shape
    Q = np.eye(m) if Q is None else np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.eye(k) if R is None else np.atleast_2d(np.asarray(R, dtype=np.float64))
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise UnstabilizableError("non-finite dynamics estimate")
    P = Q.copy()
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            bp = B.T @ P
            nxt = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + bp @ B, bp @ A)
            nxt = 0.5 * (nxt + nxt.T)
            delta = np.abs(nxt - P).max()
        P = nxt
        if not np.isfinite(delta):
            raise UnstabilizableError("Riccati iteration diverged")
        if delta <= max(tol, 64 * np.finfo(float).eps * np.abs(P).max()):
            break
    else:
        raise UnstabilizableError(f"Riccati iteration did not converge in {max_iter} steps")
    bp = B.T @ P
    K = np.linalg.solve(R + bp @ B, bp @ A)
    rho = float(np.abs(np.linalg.eigvals(A - B @ K)).max())
    if rho >= 1.0:
        raise UnstabilizableError(f"closed loop not stable (spectral radius {rho:.6f})")
    return LqrGain(P, K, float(Q[0, 0]), float(R[0, 0]), it, rho)


def control_step(gain: LqrGain, e_c, max_step: float = np.inf):
    """``du = -K e``, clamped to ``max_step``; returns ``(du, clamped)``."""
    du = float(-(gain.K @ np.asarray(e_c, dtype=np.float64)).ravel()[0])
    if abs(du) > max_step:
        return float(np.sign(du) * max_step), True
    return du, False


# -- hold rule ----------------------------------------------------------------------

@dataclass
class HoldMonitor:
    delta_in: float = 0.15
    window_frames: int = 10
    buffer: deque = field(default=None)

    def __post_init__(self):
        if self.delta_in <= 0 or self.window_frames < 1:
            raise ValueError("hold monitor needs delta_in > 0 and window_frames >= 1")
        self.buffer = deque(maxlen=self.window_frames)


def hold_update(mon: HoldMonitor, d_c: float, safety_ok: bool = True) -> bool:
    if d_c < 0:
        raise ValueError("error norm must be >= 0")
    mon.buffer.append(float(d_c))
    return len(mon.buffer) == mon.window_frames and max(mon.buffer) <= mon.delta_in and safety_ok


# -- episodes ----------------------------------------------------------------------

@dataclass
class Episode:
    """What the servo needs to know about one grasp."""

    patch: object
    material: plant.Material
    mass_kg: float
    optimal_force: float
    start_aperture: float


@dataclass
class ServoTrace:
    policy: str = "phytac"
    apertures: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    d_c: list = field(default_factory=list)
    slipping: list = field(default_factory=list)
    holding: list = field(default_factory=list)
    hold_frame: int | None = None
    slipped_after_hold: bool = False
    failed_safety: bool = False
    clamps: int = 0
    dare_failures: int = 0
    rls_resets: int = 0
    outcome: GraspOutcome | None = None

    def _record(self, state, d_c, holding):
        self.apertures.append(state.aperture_u)
        self.forces.append(state.normal_force)
        self.d_c.append(d_c)
        self.slipping.append(state.slipping)
        self.holding.append(holding)


def episode_from_setup(setup, config: ControlConfig) -> Episode:
    return Episode(setup.patch, setup.material, setup.obj.mass_kg, setup.optimal_force,
                   setup.patch.contact_aperture + config.start_offset_mm)


def _post_hold(trace, state, ep, cfg, rng, frames):
    for _ in range(frames):
        state = plant.step(state, 0.0, ep.patch, ep.material, ep.mass_kg, cfg.plant, rng)
        trace._record(state, trace.d_c[-1] if trace.d_c else float("nan"), True)
        trace.slipped_after_hold |= state.slipping


def _finish(trace, ep, cfg):
    trace.outcome = classify_trace(trace, ep.optimal_force, cfg.control.tol_f)
    return trace


def run_servo(ep: Episode, codec, z_g, scale, cfg: RunConfig, rng: Rng | None = None,
              estimate: DynamicsEstimate | None = None) -> ServoTrace:
    """Closed-loop latent servo until hold or frame budget."""
    cc = cfg.control
    m = len(scale)
    est = (estimate.copy(cc.forgetting) if estimate is not None
           else initial_estimate(m, Rng(0), cc.forgetting, cc.rls_init_cov))
    Q = cc.q_weight * np.eye(m)
    R = cc.r_weight * np.eye(1)
    trace = ServoTrace("phytac")
    mon = HoldMonitor(cc.delta_in, cc.window_frames)
    gain = None
    if cc.frame_budget == 0:
        return _finish(trace, ep, cfg)
    try:
        state = plant.initial_state(ep.patch, ep.start_aperture, ep.mass_kg, ep.material, cfg.plant, rng)
    except ForceLimitError:
        trace.failed_safety = True
        return _finish(trace, ep, cfg)
    e_prev = du_prev = None
    for k in range(cc.frame_budget):
        e = latent_error(codec_mod.encode_mean(codec, state.imprint), z_g, scale)
        d_c = float(np.linalg.norm(e))
        if e_prev is not None:
            rls_update(est, e_prev, du_prev, e)
        if gain is None or k % cc.resynth_every == 0:
            try:
                gain = solve_dare(est.A, est.B, Q, R)
            except UnstabilizableError:
                trace.dare_failures += 1
                if gain is None:
                    gain = solve_dare(0.9 * np.eye(m), est.B, Q, R)
        held = hold_update(mon, d_c, not state.clamped)
        trace._record(state, d_c, held)
        if held:
            trace.hold_frame = k
            break
        du, clamped = control_step(gain, e, cc.max_step_mm)
        trace.clamps += clamped
        try:
            state = plant.step(state, du, ep.patch, ep.material, ep.mass_kg, cfg.plant, rng)
        except ForceLimitError:
            trace.failed_safety = True
            break
        e_prev, du_prev = e, state.aperture_u - trace.apertures[-1]
    trace.rls_resets = est.resets
    if trace.hold_frame is not None:
        _post_hold(trace, state, ep, cfg, rng, cc.post_hold_frames)
    return _finish(trace, ep, cfg)


def run_fixed_force(ep: Episode, preset_force: float, cfg: RunConfig, rng: Rng | None = None) -> ServoTrace:
    """Close in max-size steps until the measured force reaches the preset, then hold."""
    cc = cfg.control
    trace = ServoTrace("fixed-force")
    if cc.frame_budget == 0:
        return _finish(trace, ep, cfg)
    state = plant.initial_state(ep.patch, ep.start_aperture, ep.mass_kg, ep.material, cfg.plant, rng)
    for k in range(cc.frame_budget):
        held = state.normal_force >= preset_force
        trace._record(state, float("nan"), held)
        if held:
            trace.hold_frame = k
            break
        try:
            state = plant.step(state, -cc.max_step_mm, ep.patch, ep.material, ep.mass_kg, cfg.plant, rng)
        except ForceLimitError:
            trace.failed_safety = True
            break
    if trace.hold_frame is not None:
        _post_hold(trace, state, ep, cfg, rng, cc.post_hold_frames)
    return _finish(trace, ep, cfg)


def run_open_loop(ep: Episode, cfg: RunConfig, rng: Rng | None = None) -> ServoTrace:
    """Close straight to the planner width minus a nominal squeeze, no feedback."""
    cc = cfg.control
    trace = ServoTrace("open-loop")
    if cc.frame_budget == 0:
        return _finish(trace, ep, cfg)
    target = max(0.0, ep.patch.contact_aperture - cc.open_loop_squeeze_mm)
    try:
        state = plant.initial_state(ep.patch, target, ep.mass_kg, ep.material, cfg.plant, rng)
    except ForceLimitError:
        trace.failed_safety = True
        return _finish(trace, ep, cfg)
    trace._record(state, float("nan"), True)
    trace.hold_frame = 0
    _post_hold(trace, state, ep, cfg, rng, cc.post_hold_frames)
    return _finish(trace, ep, cfg)


def simulate_linear_loop(A, B, e0, cfg: ControlConfig, rng: Rng, steps: int = 200, excitation: float = 1e-3):
    """Identify-then-control on a noiseless plant ``e' = A e + B du``.

    A small decaying dither keeps the regressor informative early on.
    Returns the sequence of error norms.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 1)
    m = A.shape[0]
    est = initial_estimate(m, rng.spawn(0), cfg.forgetting, cfg.rls_init_cov)
    dither = rng.spawn(1)
    Q, R = cfg.q_weight * np.eye(m), cfg.r_weight * np.eye(1)
    e = np.asarray(e0, dtype=np.float64).copy()
    gain = solve_dare(est.A, est.B, Q, R)
    norms = [float(np.linalg.norm(e))]
    for k in range(steps):
        if k % cfg.resynth_every == 0 and k:
            try:
                gain = solve_dare(est.A, est.B, Q, R)
            except UnstabilizableError:
                pass
        du, _ = control_step(gain, e)
        du += excitation * (0.9 ** k) * float(dither.normal())
        e_next = A @ e + B[:, 0] * du
        rls_update(est, e, du, e_next)
        e = e_next
        norms.append(float(np.linalg.norm(e)))
    return norms
