import math

import numpy as np
import pytest

from phytac import metrics
from phytac.errors import ShapeError
from phytac.metrics import classify_outcome, mae, psnr, rmse, ssim
from phytac.numerics import Rng


def ref_ssim(x, y, win=8, stride=4, k1=0.01, k2=0.03, L=1.0):
    """Loop-level SSIM written straight from the definition."""
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    rows, cols = len(x), len(x[0])
    vals = []
    n = win * win
    for r0 in range(0, rows - win + 1, stride):
        for c0 in range(0, cols - win + 1, stride):
            a = [x[r][c] for r in range(r0, r0 + win) for c in range(c0, c0 + win)]
            b = [y[r][c] for r in range(r0, r0 + win) for c in range(c0, c0 + win)]
            ma, mb = math.fsum(a) / n, math.fsum(b) / n
            va = math.fsum((v - ma) ** 2 for v in a) / (n - 1)
            vb = math.fsum((v - mb) ** 2 for v in b) / (n - 1)
            cov = math.fsum((u - ma) * (v - mb) for u, v in zip(a, b)) / (n - 1)
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return math.fsum(vals) / len(vals)


def ref_errors(x, y):
    d = [u - v for ru, rv in zip(x, y) for u, v in zip(ru, rv)]
    n = len(d)
    mse = math.fsum(v * v for v in d) / n
    return math.fsum(abs(v) for v in d) / n, math.sqrt(mse), 10 * math.log10(1 / mse)


def test_brute_force_oracle_100_pairs():
    rng = Rng(31)
    for i in range(100):
        shape = (16 + 4 * (i % 3), 12 + 4 * (i % 4))
        x = rng.uniform(shape)
        y = np.clip(x + rng.normal(shape, scale=0.1 * (1 + i % 5)), 0, 1)
        ma, rm, ps = ref_errors(x.tolist(), y.tolist())
        assert abs(mae(x, y) - ma) <= 1e-10
        assert abs(rmse(x, y) - rm) <= 1e-10
        assert abs(psnr(x, y) - ps) <= 1e-10
        assert abs(ssim(x, y) - ref_ssim(x.tolist(), y.tolist())) <= 1e-10


def test_mae_rmse_examples():
    x = Rng(1).uniform((10, 10))
    assert mae(x, x) == 0.0 and rmse(x, x) == 0.0
    assert mae(x, x + 0.1) == pytest.approx(0.1, abs=1e-12)
    assert rmse(x, x + 0.1) == pytest.approx(0.1, abs=1e-12)
    y = Rng(2).uniform((10, 10))
    assert rmse(x, y) >= mae(x, y)


def test_psnr_examples():
    x = np.zeros((10, 10))
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert psnr(x, x) == math.inf
    assert metrics.ImageMetrics(0, 0, math.inf, 1).csv_row()[2] == "99.000"
    noise = Rng(3).normal((10, 10), scale=0.01)
    assert psnr(x, x + noise) - psnr(x, x + 10 * noise) == pytest.approx(20.0, abs=1e-9)


def test_ssim_examples():
    x = Rng(4).uniform((32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-15)
    assert ssim(x, 1 - x) < 1.0
    y = Rng(5).uniform((32, 32))
    assert abs(ssim(x, y) - ssim(y, x)) <= 1e-12


def test_shape_errors():
    with pytest.raises(ShapeError):
        mae(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((6, 6)), np.zeros((6, 6)))


def test_classify_examples():
    f = 1.0
    assert classify_outcome(f, False, True, False, f) == metrics.GraspOutcome(True, True, True)
    o = classify_outcome(3 * f, False, True, False, f)
    assert o.sug and o.stg and not o.fosg
    assert classify_outcome(0.0, True, False, False, f) == metrics.GraspOutcome(False, False, False)


def test_classify_band_edges():
    assert classify_outcome(0.851, False, True, False, 1.0).fosg
    assert classify_outcome(1.149, False, True, False, 1.0).fosg
    assert not classify_outcome(1.16, False, True, False, 1.0).fosg
    assert not classify_outcome(1.0, False, True, True, 1.0).stg


def test_implication_chain_exhaustive():
    for force in (0.0, 0.5, 1.0, 1.1, 3.0):
        for slip_end in (False, True):
            for held in (False, True):
                for slip_after in (False, True):
                    o = classify_outcome(force, slip_end, held, slip_after, 1.0)
                    assert (not o.fosg or o.stg) and (not o.stg or o.sug)
