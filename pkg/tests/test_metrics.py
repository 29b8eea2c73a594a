import json
import math

import numpy as np
import pytest

from chainhdr import metrics as M
from oracles import luma601, ms_ssim_oracle, psnr_loop, ssim_bruteforce, ssim_terms


def _pair(seed, shape=(192, 192, 3)):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, shape).astype(np.uint8)
    noise = rng.normal(0, 20, shape)
    b = np.clip(a + noise, 0, 255).astype(np.uint8)
    return a, b


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_metrics_match_oracles(seed):
    a, b = _pair(seed)
    assert abs(M.psnr(a, b) - psnr_loop(a, b)) < 1e-10
    assert abs(M.ssim(a, b) - ssim_terms(luma601(a), luma601(b))[0]) < 1e-10
    assert abs(M.ms_ssim(a, b) - ms_ssim_oracle(a, b)) < 1e-10


def test_ssim_matches_window_loop_on_small_image():
    a, b = _pair(7, (24, 19, 3))
    assert abs(M.ssim(a, b) - ssim_bruteforce(luma601(a), luma601(b))) < 1e-10


def test_identical_images():
    a, _ = _pair(4)
    assert M.psnr(a, a) == math.inf
    assert M.ssim(a, a) == 1.0
    assert M.ms_ssim(a, a) == 1.0


def test_psnr_reference_value():
    a = np.zeros((4, 4, 3), np.uint8)
    b = np.full((4, 4, 3), 255, np.uint8)
    assert M.psnr(a, b) == 0.0
    b = a.copy()
    b[0, 0, 0] = 1  # MSE = 1/48
    assert M.psnr(a, b) == pytest.approx(10 * math.log10(255 ** 2 * 48), abs=1e-12)


def test_errors():
    a = np.zeros((20, 20, 3))
    with pytest.raises(ValueError, match="dimension mismatch"):
        M.psnr(a, np.zeros((20, 21, 3)))
    with pytest.raises(ValueError):
        M.ms_ssim(a, a)  # too small for five scales


def test_negative_contrast_terms_are_clipped():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (176, 176, 3)).astype(np.uint8)
    assert M.ms_ssim(a, 255 - a) == 0.0


def test_weights_sum_to_one():
    assert sum(M.MS_SSIM_WEIGHTS) == pytest.approx(1.0, abs=1e-15)


def test_report_aggregates_match_manual_recomputation():
    rep = M.MetricReport()
    rows = [(1, 30.0, 0.9), (1, 32.0, 0.8), (2, 25.0, 0.7), (1, 31.0, 0.95)]
    for ev, p, s in rows:
        rep.add(ev=ev, psnr=p, ssim=s, ms_ssim=None)
    m, sd = rep.aggregate("psnr", ev=1)
    vals = [30.0, 32.0, 31.0]
    mean = sum(vals) / 3
    assert m == pytest.approx(mean, abs=1e-12)
    assert sd == pytest.approx(math.sqrt(sum((v - mean) ** 2 for v in vals) / 3), abs=1e-12)
    assert rep.aggregate("ms_ssim") == (None, None)
    assert len(json.loads(rep.to_json())["rows"]) == 4
