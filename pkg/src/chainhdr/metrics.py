"""PSNR, SSIM and MS-SSIM on 8-bit images, plus mean/std reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

LUMA_601 = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
DATA_RANGE = 255.0
MS_SSIM_WEIGHTS_PUBLISHED = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_WEIGHTS = tuple(w / sum(MS_SSIM_WEIGHTS_PUBLISHED) for w in MS_SSIM_WEIGHTS_PUBLISHED)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = DATA_RANGE) -> float:
    """10 log10(peak^2 / MSE) over every pixel and channel; inf if identical."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA_601 if img.ndim == 3 else img


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def _ssim_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window luminance*cs and cs maps over 'valid' window positions."""
    g = gaussian_window()
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    return lum * cs, cs


def _check_size(x: np.ndarray, minimum: int, what: str) -> None:
    if min(x.shape[:2]) < minimum:
        raise ValueError(f"{what} needs images at least {minimum}x{minimum}, got {x.shape[:2]}")


def ssim(a, b) -> float:
    """Mean SSIM of the luma planes (11x11 Gaussian window, sigma 1.5)."""
    a, b = _pair(a, b)
    x, y = to_luma(a), to_luma(b)
    _check_size(x, SSIM_WINDOW, "SSIM")
    full, _ = _ssim_maps(x, y)
    return float(full.mean())


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box average; an odd trailing row/column is dropped."""
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    v = img[:h, :w]
    return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])


def ms_ssim(a, b, weights=MS_SSIM_WEIGHTS) -> float:
    """Five-scale MS-SSIM on luma.

    Contrast-structure terms of the four finer scales and the full SSIM of
    the coarsest scale are raised to the (renormalized) scale weights and
    multiplied. Negative terms are clipped to zero before exponentiation.
    """
    a, b = _pair(a, b)
    x, y = to_luma(a), to_luma(b)
    levels = len(weights)
    _check_size(x, SSIM_WINDOW * 2 ** (levels - 1), "MS-SSIM")
    result = 1.0
    for level, w in enumerate(weights):
        full, cs = _ssim_maps(x, y)
        term = full.mean() if level == levels - 1 else cs.mean()
        result *= max(float(term), 0.0) ** w
        if level < levels - 1:
            x, y = downsample2(x), downsample2(y)
    return float(result)


@dataclass
class MetricReport:
    """Per-image rows and mean / population-std aggregates per metric."""

    rows: list[dict] = field(default_factory=list)
    metrics: tuple[str, ...] = ("psnr", "ssim", "ms_ssim")

    def add(self, **row) -> None:
        self.rows.append(row)

    def values(self, metric: str, **where) -> np.ndarray:
        sel = [r[metric] for r in self.rows
               if all(r.get(k) == v for k, v in where.items()) and r.get(metric) is not None]
        return np.asarray(sel, dtype=np.float64)

    def aggregate(self, metric: str, **where) -> tuple[float | None, float | None]:
        """(mean, population std); ``None`` when no row carries the metric.
        A column of identical values (``inf`` included) has zero spread."""
        v = self.values(metric, **where)
        if v.size == 0:
            return None, None
        if np.all(v == v[0]):
            return float(v[0]), 0.0
        return float(np.mean(v)), float(np.std(v))

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows}, indent=2, sort_keys=True, default=_json_float)


def _json_float(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))
