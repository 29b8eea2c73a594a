"""Independent reference implementations used by the tests."""

import math

import numpy as np
from scipy import ndimage


def psnr_loop(a, b, peak=255.0):
    a = np.asarray(a, float).ravel().tolist()
    b = np.asarray(b, float).ravel().tolist()
    mse = math.fsum((x - y) ** 2 for x, y in zip(a, b)) / len(a)
    return math.inf if mse == 0 else 10 * math.log10(peak * peak / mse)


def luma601(img):
    img = np.asarray(img, float)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def _window():
    ax = np.arange(11) - 5.0
    g2 = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 1.5 ** 2))
    return g2 / g2.sum()


def ssim_terms(x, y):
    """(mean SSIM, mean cs) with a full 2-D window via scipy, cropped to valid."""
    w = _window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2

    def f(img):
        return ndimage.correlate(img, w, mode="constant")[5:-5, 5:-5]

    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx ** 2 + my ** 2 + c1)
    return float((lum * cs).mean()), float(cs.mean())


def ssim_bruteforce(x, y):
    """Explicit loop over window positions (small images only)."""
    w = _window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def ms_ssim_oracle(a, b):
    weights = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
    weights = weights / weights.sum()
    x, y = luma601(a), luma601(b)
    out = 1.0
    for i, wt in enumerate(weights):
        full, cs = ssim_terms(x, y)
        term = full if i == len(weights) - 1 else cs
        out *= max(term, 0.0) ** wt
        h, w_ = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
        x = x[:h, :w_].reshape(h // 2, 2, w_ // 2, 2).mean(axis=(1, 3))
        y = y[:h, :w_].reshape(h // 2, 2, w_ // 2, 2).mean(axis=(1, 3))
    return out
