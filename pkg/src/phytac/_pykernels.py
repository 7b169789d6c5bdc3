"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Both implementations must agree bit-for-bit on the integer stream and to
round-off on the floating point kernels; ``tests/test_kernels.py`` checks this.
"""

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64_block(seed, counter, n):
    with np.errstate(over="ignore"):
        base = np.uint64(seed) + np.uint64(counter) * GAMMA
        idx = np.arange(1, n + 1, dtype=np.uint64)
        return _mix(base + idx * GAMMA)


def rasterize_nearest(pts, rows, cols, w, h):
    """Per-cell z-buffer: keep the point closest to the sensor (largest z)."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    depth = np.full(rows * cols, -np.inf)
    if len(pts):
        c = np.clip(np.floor((pts[:, 0] + 0.5 * w) / (w / cols)).astype(np.int64), 0, cols - 1)
        r = np.clip(np.floor((pts[:, 1] + 0.5 * h) / (h / rows)).astype(np.int64), 0, rows - 1)
        np.maximum.at(depth, r * cols + c, pts[:, 2])
    filled = np.isfinite(depth)
    depth[~filled] = 0.0
    return depth.reshape(rows, cols), filled.reshape(rows, cols)


def fill_holes(depth, filled):
    depth = np.array(depth, dtype=np.float64)
    filled = np.array(filled, dtype=bool)
    rows, cols = depth.shape
    if not filled.any():
        return depth
    while not filled.all():
        pad_d = np.pad(np.where(filled, depth, 0.0), 1)
        pad_f = np.pad(filled.astype(np.float64), 1)
        acc = np.zeros_like(depth)
        cnt = np.zeros_like(depth)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                acc += pad_d[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
                cnt += pad_f[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
        grow = ~filled & (cnt > 0)
        depth[grow] = acc[grow] / cnt[grow]
        filled = filled | grow
    return depth


def ssim_mean(x, y, win, stride, c1, c2):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rows, cols = x.shape
    starts_r = np.arange(0, rows - win + 1, stride)
    starts_c = np.arange(0, cols - win + 1, stride)
    vals = []
    n = win * win
    for r0 in starts_r:
        for c0 in starts_c:
            wx = x[r0:r0 + win, c0:c0 + win]
            wy = y[r0:r0 + win, c0:c0 + win]
            mx, my = wx.mean(), wy.mean()
            dx, dy = wx - mx, wy - my
            vx = (dx * dx).sum() / (n - 1)
            vy = (dy * dy).sum() / (n - 1)
            cxy = (dx * dy).sum() / (n - 1)
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
