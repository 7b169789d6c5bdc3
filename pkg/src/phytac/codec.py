"""Dense variational encoder/decoder over imprint images.

Encoder ``x -> tanh -> tanh -> (mean, logvar)``, decoder
``z -> tanh -> tanh -> sigmoid``. Loss is per-pixel mean L1 plus the
warmed-up KL weight times the batch-mean KL to N(0, I). Gradients are
written out by hand; ``loss_and_grads`` is what ``check_gradient`` validates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import CodecConfig
from .container import SECTION_CODEC, load_params, save_params
from .errors import NonFiniteError, ShapeError
from .numerics import Adam, Rng

ENCODER = ("W1", "b1", "W2", "b2", "W3", "b3")
DECODER = ("V1", "c1", "V2", "c2", "V3", "c3")


@dataclass
class CodecParams:
    arrays: dict
    latent_dim: int
    hidden: tuple
    grid: tuple

    @property
    def input_dim(self):
        return self.grid[0] * self.grid[1]

    def astype(self, dtype) -> "CodecParams":
        return CodecParams({k: v.astype(dtype) for k, v in self.arrays.items()},
                           self.latent_dim, self.hidden, self.grid)

    def save(self, path):
        save_params(path, SECTION_CODEC, self.arrays,
                    {"latent_dim": self.latent_dim, "hidden": list(self.hidden), "grid": list(self.grid)})

    @classmethod
    def load(cls, path) -> "CodecParams":
        arrays, meta = load_params(path, SECTION_CODEC)
        return cls(arrays, meta["latent_dim"], tuple(meta["hidden"]), tuple(meta["grid"]))


def init_codec(rng: Rng, grid=(32, 32), latent_dim=16, hidden=(256, 64), dtype=np.float32,
               zero_output: bool = False) -> CodecParams:
    """Scaled-normal weights, zero biases.

    ``zero_output`` zeroes the last encoder and decoder layers, so every input
    encodes to ``mean = logvar = 0`` and every latent decodes to 0.5.
    """
    d = grid[0] * grid[1]
    h1, h2 = hidden
    shapes = {"W1": (d, h1), "W2": (h1, h2), "W3": (h2, 2 * latent_dim),
              "V1": (latent_dim, h2), "V2": (h2, h1), "V3": (h1, d)}
    arrays = {}
    for name in ("W1", "W2", "W3", "V1", "V2", "V3"):
        fan_in, fan_out = shapes[name]
        arrays[name] = (rng.normal(shapes[name]) / np.sqrt(fan_in)).astype(dtype)
        arrays[name.replace("W", "b").replace("V", "c")] = np.zeros(fan_out, dtype=dtype)
    if zero_output:
        arrays["W3"][:] = 0
        arrays["V3"][:] = 0
    return CodecParams(arrays, latent_dim, (h1, h2), tuple(grid))


def _flat(params: CodecParams, x):
    x = np.asarray(x)
    if x.ndim == 2 and x.shape == params.grid:
        return x.reshape(1, -1), True
    if x.ndim == 1 and x.size == params.input_dim:
        return x.reshape(1, -1), True
    if x.ndim == 3 and x.shape[1:] == params.grid:
        return x.reshape(len(x), -1), False
    if x.ndim == 2 and x.shape[1] == params.input_dim:
        return x, False
    raise ShapeError(f"image shape {x.shape} does not match codec grid {params.grid}")


def _encode(a, x):
    h1 = np.tanh(x @ a["W1"] + a["b1"])
    h2 = np.tanh(h1 @ a["W2"] + a["b2"])
    return h1, h2, h2 @ a["W3"] + a["b3"]


def _decode(a, z):
    g1 = np.tanh(z @ a["V1"] + a["c1"])
    g2 = np.tanh(g1 @ a["V2"] + a["c2"])
    return g1, g2, 1.0 / (1.0 + np.exp(-(g2 @ a["V3"] + a["c3"])))


def encode(params: CodecParams, x):
    """Deterministic forward pass: ``(mean, logvar)``."""
    xb, single = _flat(params, x)
    xb = xb.astype(params.arrays["W1"].dtype)
    _, _, out = _encode(params.arrays, xb)
    m = params.latent_dim
    mean, logvar = out[:, :m].astype(np.float64), out[:, m:].astype(np.float64)
    return (mean[0], logvar[0]) if single else (mean, logvar)


def encode_mean(params: CodecParams, x):
    return encode(params, x)[0]


def decode(params: CodecParams, z):
    z = np.asarray(z)
    single = z.ndim == 1
    zb = z.reshape(1, -1) if single else z
    if zb.shape[1] != params.latent_dim:
        raise ShapeError(f"latent length {zb.shape[1]} != {params.latent_dim}")
    _, _, xh = _decode(params.arrays, zb.astype(params.arrays["V1"].dtype))
    xh = xh.astype(np.float64).reshape(-1, *params.grid)
    return xh[0] if single else xh


def kl_divergence(mean, logvar):
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return 0.5 * np.sum(mean * mean + np.exp(logvar) - 1.0 - logvar, axis=-1)


def kl_weight(epoch: float, e_warm: float, lambda_kl: float) -> float:
    if e_warm < 1:
        raise ValueError("e_warm must be >= 1")
    return min(1.0, epoch / e_warm) * lambda_kl


def loss_and_grads(arrays: dict, x, eps, kl_w: float, latent_dim: int, want_grads: bool = True):
    """Return ``(loss, l1, kl, grads)`` for a batch with fixed noise ``eps``."""
    a = arrays
    bsz, dim = x.shape
    m = latent_dim
    h1, h2, out = _encode(a, x)
    mu, lv = out[:, :m], out[:, m:]
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    g1, g2, xh = _decode(a, z)
    diff = xh - x
    l1 = np.abs(diff).mean()
    kl = 0.5 * np.sum(mu * mu + np.exp(lv) - 1.0 - lv) / bsz
    loss = l1 + kl_w * kl
    if not want_grads:
        return float(loss), float(l1), float(kl), None
    dd3 = np.sign(diff) / (bsz * dim) * xh * (1.0 - xh)
    g = {"V3": g2.T @ dd3, "c3": dd3.sum(0)}
    dd2 = (dd3 @ a["V3"].T) * (1.0 - g2 * g2)
    g["V2"], g["c2"] = g1.T @ dd2, dd2.sum(0)
    dd1 = (dd2 @ a["V2"].T) * (1.0 - g1 * g1)
    g["V1"], g["c1"] = z.T @ dd1, dd1.sum(0)
    dz = dd1 @ a["V1"].T
    dmu = dz + (kl_w / bsz) * mu
    dlv = dz * eps * std * 0.5 + (kl_w / bsz) * 0.5 * (np.exp(lv) - 1.0)
    dout = np.concatenate([dmu, dlv], axis=1)
    g["W3"], g["b3"] = h2.T @ dout, dout.sum(0)
    da2 = (dout @ a["W3"].T) * (1.0 - h2 * h2)
    g["W2"], g["b2"] = h1.T @ da2, da2.sum(0)
    da1 = (da2 @ a["W2"].T) * (1.0 - h1 * h1)
    g["W1"], g["b1"] = x.T @ da1, da1.sum(0)
    return float(loss), float(l1), float(kl), g


def reconstruction_l1(params: CodecParams, images) -> float:
    x, _ = _flat(params, images)
    return float(np.mean(np.abs(decode(params, encode(params, x)[0]).reshape(len(x), -1) - x)))


def mean_image_l1(images) -> float:
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    return float(np.mean(np.abs(x - x.mean(axis=0))))


@dataclass
class CodecHistory:
    loss: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def train_codec(images, config: CodecConfig, rng: Rng, grid=(32, 32), log=None):
    """Minibatch training with reparameterized sampling.

    ``images`` is ``(N, rows, cols)`` or ``(N, rows*cols)`` in [0, 1].
    Returns ``(params, history)``; history holds per-epoch means.
    """
    if len(images) == 0:
        raise ShapeError("train_codec: empty dataset")
    x_all = np.asarray(images, dtype=np.float32).reshape(len(images), -1)
    params = init_codec(rng.spawn(1), grid, config.latent_dim, tuple(config.hidden))
    if x_all.shape[1] != params.input_dim:
        raise ShapeError(f"images have {x_all.shape[1]} pixels, grid {grid} needs {params.input_dim}")
    opt = Adam(lr=config.learning_rate)
    noise = rng.spawn(2)
    order_rng = rng.spawn(3)
    hist = CodecHistory()
    m = config.latent_dim
    for epoch in range(config.epochs):
        w = kl_weight(epoch, config.e_warm, config.lambda_kl)
        perm = order_rng.permutation(len(x_all))
        tot = [0.0, 0.0, 0.0]
        nb = 0
        for start in range(0, len(perm), config.batch_size):
            xb = x_all[perm[start:start + config.batch_size]]
            eps = noise.normal((len(xb), m)).astype(np.float32)
            loss, l1, kl, grads = loss_and_grads(params.arrays, xb, eps, w, m)
            if not np.isfinite(loss):
                worst = max(float(np.abs(v).max()) for v in params.arrays.values())
                raise NonFiniteError(f"codec loss non-finite at epoch {epoch}, batch {nb}: "
                                     f"l1={l1}, kl={kl}, max|param|={worst:.3g}")
            opt.step(params.arrays, {k: v.astype(np.float32) for k, v in grads.items()})
            tot[0] += loss
            tot[1] += l1
            tot[2] += kl
            nb += 1
        hist.loss.append(tot[0] / nb)
        hist.l1.append(tot[1] / nb)
        hist.kl.append(tot[2] / nb)
        if log:
            log(f"codec epoch {epoch + 1}/{config.epochs} loss={hist.loss[-1]:.5f} "
                f"l1={hist.l1[-1]:.5f} kl={hist.kl[-1]:.3f}")
    return params, hist
