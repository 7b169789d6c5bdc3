# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror :mod:`phytac._pykernels` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef unsigned long long u64

cdef u64 GAMMA = 0x9E3779B97F4A7C15ULL


cdef inline u64 _mix(u64 z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix64_block(u64 seed, u64 counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef Py_ssize_t i
    cdef u64 base = seed + counter * GAMMA
    with nogil:
        for i in range(n):
            out[i] = _mix(base + <u64>(i + 1) * GAMMA)
    return out


def rasterize_nearest(double[:, ::1] pts, Py_ssize_t rows, Py_ssize_t cols,
                      double w, double h):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] depth = np.full((rows, cols), -np.inf)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] filled = np.zeros((rows, cols), dtype=np.uint8)
    cdef double cw = w / cols, ch = h / rows
    cdef Py_ssize_t i, r, c, n = pts.shape[0]
    for i in range(n):
        c = <Py_ssize_t>floor((pts[i, 0] + 0.5 * w) / cw)
        r = <Py_ssize_t>floor((pts[i, 1] + 0.5 * h) / ch)
        if c < 0:
            c = 0
        elif c >= cols:
            c = cols - 1
        if r < 0:
            r = 0
        elif r >= rows:
            r = rows - 1
        if pts[i, 2] > depth[r, c]:
            depth[r, c] = pts[i, 2]
            filled[r, c] = 1
    depth[filled == 0] = 0.0
    return depth, filled.astype(bool)


def fill_holes(depth_in, filled_in):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] depth = np.array(depth_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] filled = np.array(filled_in, dtype=np.uint8)
    cdef Py_ssize_t rows = depth.shape[0], cols = depth.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] nxt
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] nfill
    cdef Py_ssize_t r, c, dr, dc, rr, cc, cnt, remaining
    cdef double acc
    remaining = rows * cols - int(np.count_nonzero(filled))
    if remaining == rows * cols:
        return depth
    while remaining > 0:
        nxt = depth.copy()
        nfill = filled.copy()
        for r in range(rows):
            for c in range(cols):
                if filled[r, c]:
                    continue
                acc = 0.0
                cnt = 0
                for dr in range(-1, 2):
                    for dc in range(-1, 2):
                        rr = r + dr
                        cc = c + dc
                        if rr < 0 or rr >= rows or cc < 0 or cc >= cols:
                            continue
                        if filled[rr, cc]:
                            acc += depth[rr, cc]
                            cnt += 1
                if cnt > 0:
                    nxt[r, c] = acc / cnt
                    nfill[r, c] = 1
                    remaining -= 1
        depth = nxt
        filled = nfill
    return depth


def ssim_mean(double[:, ::1] x, double[:, ::1] y, Py_ssize_t win,
              Py_ssize_t stride, double c1, double c2):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef Py_ssize_t r0, c0, r, c, count = 0
    cdef double n = win * win
    cdef double sx, sy, sxx, syy, sxy, mx, my, vx, vy, cxy, total = 0.0
    r0 = 0
    while r0 + win <= rows:
        c0 = 0
        while c0 + win <= cols:
            sx = sy = sxx = syy = sxy = 0.0
            for r in range(r0, r0 + win):
                for c in range(c0, c0 + win):
                    sx += x[r, c]
                    sy += y[r, c]
            mx = sx / n
            my = sy / n
            for r in range(r0, r0 + win):
                for c in range(c0, c0 + win):
                    sxx += (x[r, c] - mx) * (x[r, c] - mx)
                    syy += (y[r, c] - my) * (y[r, c] - my)
                    sxy += (x[r, c] - mx) * (y[r, c] - my)
            vx = sxx / (n - 1)
            vy = syy / (n - 1)
            cxy = sxy / (n - 1)
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / (
                (mx * mx + my * my + c1) * (vx + vy + c2))
            count += 1
            c0 += stride
        r0 += stride
    return total / count
