"""Physics-conditioned latent diffusion.

Forward noising on a variance-preserving linear-beta schedule, a dense
epsilon-predictor conditioned on the current imprint latent, the contact-depth
latent and a physical condition vector (mass embedding plus texture one-hot),
and the deterministic DDIM sampler.

The denoiser input is ``[z_t | z_in | z_cdp | time embedding | C]``. Each of
its two hidden layers applies a feature-wise scale and shift generated from
``C``: ``h = silu(a * (1 + C @ G + g) + C @ H + k)``. The output layer starts
at zero, so an untrained model predicts no noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec as codec_mod
from .config import TEXTURE_CLASSES, DiffusionConfig
from .container import SECTION_DENOISER, load_params, save_params
from .errors import NonFiniteError, PhytacError, ShapeError
from .numerics import Adam, Rng

MASS_EMBED = 8
N_TEXTURES = len(TEXTURE_CLASSES)
COND_DIM = MASS_EMBED + N_TEXTURES


# -- schedule ------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray  # length T, betas[t-1] is the step into t
    alpha_bar: np.ndarray  # length T+1, alpha_bar[0] = 1


def make_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    if T < 2:
        raise ValueError("schedule needs T >= 2")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    betas = np.linspace(beta_min, beta_max, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T, betas, alpha_bar)


def _check_t(t, schedule, lo=1):
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > schedule.T):
        raise ValueError(f"timestep outside [{lo}, {schedule.T}]")
    return t


def forward_noise(z0, t, schedule: NoiseSchedule, eps):
    """``sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``; ``t`` may be a per-row array."""
    t = _check_t(t, schedule)
    ab = schedule.alpha_bar[t]
    if np.ndim(ab):
        ab = ab[:, None]
    return np.sqrt(ab) * np.asarray(z0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def ddim_step(z_t, eps_hat, t: int, t_prev: int, schedule: NoiseSchedule):
    if not 0 <= t_prev < t <= schedule.T:
        raise ValueError(f"DDIM step needs 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t_prev]
    eps_hat = np.asarray(eps_hat)
    return np.sqrt(ab_prev / ab) * (np.asarray(z_t) - np.sqrt(1.0 - ab) * eps_hat) \
        + np.sqrt(1.0 - ab_prev) * eps_hat


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced descending subsequence from T to 0 (``steps`` transitions)."""
    if not 1 <= steps <= T:
        raise ValueError(f"DDIM steps must lie in [1, {T}]")
    ts = np.round(np.linspace(T, 0, steps + 1)).astype(int)
    return ts


def ddim_sample(eps_fn, z_T, schedule: NoiseSchedule, steps: int):
    """Run the DDIM chain from ``z_T``; ``eps_fn(z, t)`` predicts the noise."""
    z = np.asarray(z_T, dtype=np.float64)
    ts = ddim_timesteps(schedule.T, steps)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        z = ddim_step(z, eps_fn(z, int(t)), int(t), int(t_prev), schedule)
    return z


def gaussian_optimal_eps(z_t, alpha_bar: float, mean, var):
    """Posterior-mean noise prediction when the clean data is N(mean, var I).

    ``E[eps | z_t] = sqrt(1 - ab) (z_t - sqrt(ab) mean) / (ab var + 1 - ab)``.
    """
    ab = float(alpha_bar)
    return np.sqrt(1.0 - ab) * (np.asarray(z_t) - np.sqrt(ab) * np.asarray(mean)) / (ab * var + 1.0 - ab)


# -- embeddings ------------------------------------------------------------------------

def time_embedding(t, T: int, dim: int = 16):
    """Sinusoidal features of ``t / T`` at octave frequencies."""
    s = np.atleast_1d(np.asarray(t, dtype=np.float64)) / T
    freqs = np.pi * 2.0 ** np.arange(dim // 2)
    ang = s[:, None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def mass_embedding(mass, mass_max: float):
    if np.any(np.asarray(mass) < 0):
        raise ValueError("mass must be >= 0")
    x = np.atleast_1d(np.asarray(mass, dtype=np.float64)) / mass_max
    ang = x[:, None] * (np.pi * 2.0 ** np.arange(MASS_EMBED // 2))
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def texture_onehot(texture):
    items = [texture] if isinstance(texture, (str, int, np.integer)) else list(np.ravel(np.asarray(texture, dtype=object)))
    if any(isinstance(v, str) and v not in TEXTURE_CLASSES for v in items):
        raise ValueError(f"unknown texture class in {items}")
    idx = np.array([TEXTURE_CLASSES.index(v) if isinstance(v, str) else int(v) for v in items], dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= N_TEXTURES):
        raise ValueError(f"texture index outside [0, {N_TEXTURES})")
    out = np.zeros((len(idx), N_TEXTURES))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def condition_vector(mass, texture, mass_max: float):
    """``C = [e_M, e_T]`` per row."""
    return np.concatenate([mass_embedding(mass, mass_max), texture_onehot(texture)], axis=1)


# -- denoiser ------------------------------------------------------------------------

@dataclass
class DenoiserParams:
    arrays: dict  # trainable weights
    latent_dim: int
    hidden: int
    time_embed: int
    schedule: NoiseSchedule
    z_mean: np.ndarray  # latent standardization
    z_std: np.ndarray
    mass_max: float

    @property
    def input_dim(self):
        return 3 * self.latent_dim + self.time_embed + COND_DIM

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams({k: v.astype(dtype) for k, v in self.arrays.items()}, self.latent_dim,
                              self.hidden, self.time_embed, self.schedule, self.z_mean, self.z_std,
                              self.mass_max)

    def normalize(self, z):
        return (np.asarray(z, dtype=np.float64) - self.z_mean) / self.z_std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.z_std + self.z_mean

    def save(self, path):
        arrays = dict(self.arrays)
        arrays["norm_mean"], arrays["norm_std"] = self.z_mean, self.z_std
        s = self.schedule
        meta = {"latent_dim": self.latent_dim, "hidden": self.hidden, "time_embed": self.time_embed,
                "T": s.T, "beta_min": float(s.betas[0]), "beta_max": float(s.betas[-1]),
                "mass_max": float(self.mass_max)}
        save_params(path, SECTION_DENOISER, arrays, meta)

    @classmethod
    def load(cls, path) -> "DenoiserParams":
        arrays, meta = load_params(path, SECTION_DENOISER)
        zm = arrays.pop("norm_mean").astype(np.float64)
        zs = arrays.pop("norm_std").astype(np.float64)
        sched = make_schedule(meta["T"], meta["beta_min"], meta["beta_max"])
        return cls(arrays, meta["latent_dim"], meta["hidden"], meta["time_embed"], sched, zm, zs,
                   meta["mass_max"])


def init_denoiser(rng: Rng, latent_dim: int, hidden: int, time_embed: int, schedule: NoiseSchedule,
                  z_mean=None, z_std=None, mass_max: float = 1.0, dtype=np.float32) -> DenoiserParams:
    m = latent_dim
    d_in = 3 * m + time_embed + COND_DIM
    a = {"W1": rng.normal((d_in, hidden)) / np.sqrt(d_in), "b1": np.zeros(hidden),
         "W2": rng.normal((hidden, hidden)) / np.sqrt(hidden), "b2": np.zeros(hidden),
         "Wo": np.zeros((hidden, m)), "bo": np.zeros(m)}
    for k in ("1", "2"):
        a["G" + k] = np.zeros((COND_DIM, hidden))
        a["g" + k] = np.zeros(hidden)
        a["H" + k] = np.zeros((COND_DIM, hidden))
        a["k" + k] = np.zeros(hidden)
    a = {k: v.astype(dtype) for k, v in a.items()}
    z_mean = np.zeros(m) if z_mean is None else np.asarray(z_mean, dtype=np.float64)
    z_std = np.ones(m) if z_std is None else np.asarray(z_std, dtype=np.float64)
    return DenoiserParams(a, m, hidden, time_embed, schedule, z_mean, z_std, float(mass_max))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(a, u, c):
    cache = []
    h = u
    for k in ("1", "2"):
        pre = h @ a["W" + k] + a["b" + k]
        scale = 1.0 + c @ a["G" + k] + a["g" + k]
        p = pre * scale + c @ a["H" + k] + a["k" + k]
        sg = _sigmoid(p)
        cache.append((h, pre, scale, p, sg))
        h = p * sg
    return h @ a["Wo"] + a["bo"], h, cache


def _inputs(params: DenoiserParams, z_t, z_in, z_cdp, t, c):
    z_t, z_in, z_cdp = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (z_t, z_in, z_cdp))
    m = params.latent_dim
    for v in (z_t, z_in, z_cdp):
        if v.shape[1] != m:
            raise ShapeError(f"latent length {v.shape[1]} != {m}")
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    if c.shape[1] != COND_DIM:
        raise ShapeError(f"condition length {c.shape[1]} != {COND_DIM}")
    b = len(z_t)
    t = _check_t(np.broadcast_to(np.asarray(t), (b,)), params.schedule)
    temb = time_embedding(t, params.schedule.T, params.time_embed)
    c = np.broadcast_to(c, (b, COND_DIM))
    return np.concatenate([z_t, np.broadcast_to(z_in, (b, m)), np.broadcast_to(z_cdp, (b, m)), temb, c],
                          axis=1), c


def predict_noise(params: DenoiserParams, z_t, z_in, z_cdp, t, c):
    """Noise estimate in standardized latent coordinates."""
    single = np.ndim(z_t) == 1
    u, cc = _inputs(params, z_t, z_in, z_cdp, t, c)
    dt = params.arrays["W1"].dtype
    out, _, _ = _forward(params.arrays, u.astype(dt), cc.astype(dt))
    out = out.astype(np.float64)
    return out[0] if single else out


def loss_and_grads(arrays: dict, u, c, eps, want_grads: bool = True):
    """Batch mean of ``||eps - eps_theta||^2`` and its parameter gradients."""
    out, h2, cache = _forward(arrays, u, c)
    r = out - eps
    bsz = len(u)
    loss = float(np.sum(r * r) / bsz)
    if not want_grads:
        return loss, None
    dout = 2.0 * r / bsz
    g = {"Wo": h2.T @ dout, "bo": dout.sum(0)}
    dh = dout @ arrays["Wo"].T
    for k, (h_in, pre, scale, p, sg) in zip(("2", "1"), reversed(cache)):
        dp = dh * sg * (1.0 + p * (1.0 - sg))
        g["H" + k], g["k" + k] = c.T @ dp, dp.sum(0)
        dscale = dp * pre
        g["G" + k], g["g" + k] = c.T @ dscale, dscale.sum(0)
        dpre = dp * scale
        g["W" + k], g["b" + k] = h_in.T @ dpre, dpre.sum(0)
        dh = dpre @ arrays["W" + k].T
    return loss, g


# -- training ------------------------------------------------------------------------

@dataclass
class DiffusionHistory:
    loss: list = field(default_factory=list)

    def smoothed(self, window: int = 50) -> np.ndarray:
        x = np.asarray(self.loss, dtype=np.float64)
        if len(x) < window:
            return np.array([x.mean()]) if len(x) else x
        c = np.cumsum(np.concatenate([[0.0], x]))
        return (c[window:] - c[:-window]) / window


@dataclass
class LatentSet:
    """Encoded training tensors (codec latent space, not standardized)."""

    z0: np.ndarray  # E(x_s)
    z_in: np.ndarray  # E(x_c)
    z_cdp: np.ndarray  # E(depth image)
    mass: np.ndarray
    texture: np.ndarray


def encode_arrays(codec: codec_mod.CodecParams, arrays) -> LatentSet:
    """Encode gathered dataset arrays with the codec means."""
    return LatentSet(codec_mod.encode_mean(codec, arrays.x_s), codec_mod.encode_mean(codec, arrays.x_c),
                     codec_mod.encode_mean(codec, arrays.depth), np.asarray(arrays.mass, dtype=np.float64),
                     np.asarray(arrays.texture))


def train_denoiser(latents: LatentSet, config: DiffusionConfig, rng: Rng, log=None):
    """Minimize the noise-prediction objective on standardized latents.

    Returns ``(params, history)`` with one loss value per optimizer step.
    """
    n = len(latents.z0)
    if n == 0:
        raise ShapeError("train_denoiser: empty dataset")
    m = latents.z0.shape[1]
    sched = make_schedule(config.T, config.beta_min, config.beta_max)
    allz = np.concatenate([latents.z0, latents.z_in, latents.z_cdp])
    z_mean = allz.mean(axis=0)
    z_std = np.maximum(allz.std(axis=0), 1e-6)
    mass_max = float(latents.mass.max()) if latents.mass.max() > 0 else 1.0
    params = init_denoiser(rng.spawn(1), m, config.hidden, config.time_embed, sched, z_mean, z_std, mass_max)
    z0 = params.normalize(latents.z0)
    zin = params.normalize(latents.z_in)
    zcdp = params.normalize(latents.z_cdp)
    cond = condition_vector(latents.mass, latents.texture, mass_max)
    draw = rng.spawn(2)
    opt = Adam(lr=config.learning_rate)
    hist = DiffusionHistory()
    for step in range(config.steps):
        idx = draw.integers(0, n, config.batch_size)
        t = draw.integers(1, config.T + 1, config.batch_size)
        eps = draw.normal((config.batch_size, m))
        zt = forward_noise(z0[idx], t, sched, eps)
        temb = time_embedding(t, config.T, config.time_embed)
        u = np.concatenate([zt, zin[idx], zcdp[idx], temb, cond[idx]], axis=1).astype(np.float32)
        loss, grads = loss_and_grads(params.arrays, u, cond[idx].astype(np.float32), eps.astype(np.float32))
        if not np.isfinite(loss):
            worst = max(float(np.abs(v).max()) for v in params.arrays.values())
            raise NonFiniteError(f"denoiser loss non-finite at step {step}: max|param|={worst:.3g}")
        opt.step(params.arrays, {k: v.astype(np.float32) for k, v in grads.items()})
        hist.loss.append(loss)
        if log and (step + 1) % 200 == 0:
            log(f"denoiser step {step + 1}/{config.steps} loss={np.mean(hist.loss[-200:]):.4f}")
    return params, hist


# -- sampling ------------------------------------------------------------------------

def sample_goal(params: DenoiserParams, codec: codec_mod.CodecParams, x_c, depth_image, mass, texture,
                steps: int, rng: Rng, schedule: NoiseSchedule | None = None):
    """Predict the goal latent and imprint for one grasp.

    Returns ``(z_g, x_hat_g)`` with ``z_g`` in codec latent coordinates.
    """
    if codec.latent_dim != params.latent_dim:
        raise PhytacError(f"codec latent {codec.latent_dim} != denoiser latent {params.latent_dim}")
    schedule = schedule or params.schedule
    if schedule.T != params.schedule.T:
        raise PhytacError("sampling schedule length differs from the trained one")
    z_in = params.normalize(codec_mod.encode_mean(codec, x_c))
    z_cdp = params.normalize(codec_mod.encode_mean(codec, depth_image))
    c = condition_vector(mass, texture, params.mass_max)[0]
    z_T = rng.normal(params.latent_dim)

    def eps_fn(z, t):
        return predict_noise(params, z, z_in, z_cdp, t, c)

    z0 = ddim_sample(eps_fn, z_T, schedule, steps)
    z_g = params.denormalize(z0)
    return z_g, codec_mod.decode(codec, z_g)
