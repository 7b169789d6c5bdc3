"""Numerical substrate: counter-based RNG, checked dense linear algebra,
an Adam-style optimizer and a finite-difference gradient checker.

Matrices are plain ``numpy.ndarray`` objects; the helpers here add the shape
and conditioning checks the rest of the package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._pykernels import _mix
from .errors import NonFiniteError, ShapeError, SingularMatrixError

MASK64 = (1 << 64) - 1
_TWO_M53 = 1.0 / (1 << 53)


class Rng:
    """SplitMix64 counter-based generator.

    The ``i``-th 64-bit word (``i`` counted from 1 across the life of the
    generator) is ``mix(seed + i * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix`` is
    the SplitMix64 finalizer. Uniform doubles take the top 53 bits. Normals
    come from Box-Muller on consecutive word pairs ``(u1, u2)`` with
    ``u1 = (w1 >> 11 + 1) * 2**-53``; a call for ``n`` normals consumes
    ``2 * ceil(n / 2)`` words, so the stream depends on call sizes.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def bits(self, n: int) -> np.ndarray:
        out = kernels.splitmix64_block(self.seed, self.counter, int(n))
        self.counter += int(n)
        return out

    def uniform(self, size=None, low=0.0, high=1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        w = self.bits(2 * pairs) >> np.uint64(11)
        u1 = (w[0::2].astype(np.float64) + 1.0) * _TWO_M53
        u2 = w[1::2].astype(np.float64) * _TWO_M53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        z = loc + scale * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        u = self.uniform(size)
        out = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        out = np.minimum(out, high - 1)
        return int(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, key: int) -> "Rng":
        """Independent child stream; depends only on (seed, key), not on counter."""
        with np.errstate(over="ignore"):
            s = _mix(np.uint64(self.seed) ^ _mix(np.uint64(int(key) & MASK64) + np.uint64(0x632BE59BD9B4E019)))
        return Rng(int(s))


def matmul(a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("matmul produced non-finite entries")
    return out


def solve_linear(a, b, max_cond: float = 1e12) -> np.ndarray:
    """Solve ``a x = b`` for square, well-conditioned ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    b2 = b.reshape(-1, 1) if vector else b
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_linear: matrix not square {a.shape}")
    if a.shape[0] != b2.shape[0]:
        raise ShapeError(f"solve_linear: {a.shape} vs rhs {b.shape}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularMatrixError(f"matrix singular or ill-conditioned (cond={cond:.3g})")
    x = np.linalg.solve(a, b2)
    # one step of iterative refinement keeps the residual bound tight
    x = x + np.linalg.solve(a, b2 - a @ x)
    return x.ravel() if vector else x


@dataclass
class Adam:
    """Moment-averaged descent with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> dict:
        for name, g in grads.items():
            if params[name].shape != g.shape:
                raise ShapeError(f"gradient for {name!r} has shape {g.shape}, param {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in parameter block {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return params


def grad_step(state: Adam, params: dict, grads: dict) -> dict:
    return state.step(params, grads)


def check_gradient(loss_fn, params: dict, analytic_grads: dict, probe_count: int = 32,
                   rng: Rng | None = None, h: float = 1e-6, atol: float = 1e-6) -> float:
    """Max relative error of ``analytic_grads`` against central differences.

    ``loss_fn(params)`` is evaluated with one coordinate perturbed at a time;
    params are restored afterwards. Relative error is
    ``|analytic - numeric| / (|numeric| + atol)``.
    """
    rng = rng or Rng(0)
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in rng.integers(0, total, probe_count):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[k]
        idx = int(flat - offsets[k])
        p = params[name].reshape(-1)
        old = p[idx]
        p[idx] = old + h
        lp = float(loss_fn(params))
        p[idx] = old - h
        lm = float(loss_fn(params))
        p[idx] = old
        num = (lp - lm) / (2.0 * h)
        ana = float(analytic_grads[name].reshape(-1)[idx])
        worst = max(worst, abs(ana - num) / (abs(num) + atol))
    return worst
