"""Classical HDR back end: response-curve recovery, radiance merge, tone mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z_MIN, Z_MAX = 0, 255
ANCHOR = 128
SAMPLE_RANGE = (5, 250)
LUMA_709 = np.array([0.2126, 0.7152, 0.0722])


class SingularSystemError(ValueError):
    """The response-curve system does not determine a unique solution."""


def weight_hat(z):
    """Triangle weight: ``z`` for z <= 127, ``255 - z`` above."""
    z_arr = np.asarray(z)
    if np.any(z_arr < Z_MIN) or np.any(z_arr > Z_MAX):
        raise ValueError(f"pixel levels must lie in [0, 255], got range [{z_arr.min()}, {z_arr.max()}]")
    zi = z_arr.astype(np.int64)
    w = np.where(zi <= 127, zi - Z_MIN, Z_MAX - zi).astype(np.float64)
    return float(w) if np.ndim(z) == 0 else w


WEIGHTS = weight_hat(np.arange(256))


def relative_exposure_times(ev_offsets) -> np.ndarray:
    """``ln dt = ev * ln 2``: exposure time relative to the middle exposure."""
    return np.asarray(ev_offsets, dtype=np.float64) * np.log(2.0)


@dataclass
class ResponseCurve:
    """Per-channel inverse response ``g[c, z]`` = log exposure of level ``z``."""

    g: np.ndarray
    smoothing_lambda: float = 100.0

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.ndim == 1:
            self.g = self.g[None]
        if self.g.shape[1] != 256:
            raise ValueError(f"response curve needs 256 levels per channel, got {self.g.shape}")
        if not np.all(np.isfinite(self.g)):
            raise ValueError("response curve contains non-finite values")

    @classmethod
    def linear(cls, channels: int = 3) -> "ResponseCurve":
        """``g(z) = ln(z / 128)``, with level 0 mapped like level 1."""
        z = np.maximum(np.arange(256), 1).astype(np.float64)
        return cls(np.tile(np.log(z / ANCHOR), (channels, 1)), 0.0)


def _stack_arrays(stack) -> tuple[list[int], np.ndarray]:
    """Accepts an ExposureStack or ``{ev: image}``; returns (evs, P x H x W x C)."""
    images = getattr(stack, "images", stack)
    evs = sorted(images)
    arr = np.stack([np.asarray(images[ev]) for ev in evs])
    if arr.ndim == 3:
        arr = arr[..., None]
    return evs, arr


def _sample_locations(values: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified draw over the sorted non-saturated levels of ``values`` (flat)."""
    lo, hi = SAMPLE_RANGE
    candidates = np.flatnonzero((values >= lo) & (values <= hi))
    if candidates.size == 0:
        candidates = np.arange(values.size)
    order = candidates[np.argsort(values[candidates], kind="stable")]
    edges = np.linspace(0, order.size, n_samples + 1)
    picks = []
    for a, b in zip(edges[:-1], edges[1:]):
        a_i, b_i = int(np.floor(a)), max(int(np.floor(b)), int(np.floor(a)) + 1)
        picks.append(order[min(int(rng.integers(a_i, b_i)), order.size - 1)])
    return np.asarray(picks)


def solve_response(z: np.ndarray, log_dt: np.ndarray, lambda_smooth: float) -> np.ndarray:
    """Regularized least squares for one channel.

    ``z`` is (samples, exposures) of integer levels. Unknowns are g(0..255)
    and one log radiance per sample; g(128) is eliminated so it is exactly 0.
    """
    n_samples, n_exp = z.shape
    n = 256
    rows = n_samples * n_exp + (n - 2)
    a = np.zeros((rows, n + n_samples))
    b = np.zeros(rows)
    k = 0
    for i in range(n_samples):
        for j in range(n_exp):
            w = WEIGHTS[z[i, j]]
            a[k, z[i, j]] = w
            a[k, n + i] = -w
            b[k] = w * log_dt[j]
            k += 1
    for level in range(1, n - 1):
        w = lambda_smooth * WEIGHTS[level]
        a[k, level - 1], a[k, level], a[k, level + 1] = w, -2 * w, w
        k += 1
    keep = np.ones(n + n_samples, dtype=bool)
    keep[ANCHOR] = False
    a = a[:, keep]
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if rank < a.shape[1] or cond > 1e12:
        raise SingularSystemError(
            f"response system is rank deficient (rank {rank} of {a.shape[1]}, "
            f"condition number {cond:.3g}); exposures may be identical"
        )
    g = np.empty(n)
    g[keep[:n]] = sol[: n - 1]
    g[ANCHOR] = 0.0
    return g


def estimate_crf(stack, log_exposure_times=None, lambda_smooth: float = 100.0,
                 n_samples: int = 70, seed: int = 0) -> ResponseCurve:
    """Recover the inverse camera response of every channel.

    Sample locations are drawn per channel from the middle exposure,
    stratified over its non-saturated levels, with a ``seed``-derived RNG.
    ``log_exposure_times`` defaults to ``ev * ln 2`` for the stack's EVs.
    """
    evs, arr = _stack_arrays(stack)
    if len(evs) < 2:
        raise ValueError("response recovery needs at least two exposures")
    log_dt = relative_exposure_times(evs) if log_exposure_times is None \
        else np.asarray(log_exposure_times, dtype=np.float64)
    if log_dt.shape != (len(evs),):
        raise ValueError(f"need one exposure time per image ({len(evs)}), got {log_dt.shape}")
    if n_samples * (len(evs) - 1) <= 256:
        raise ValueError(f"n_samples * (exposures - 1) must exceed 256, "
                         f"got {n_samples} * {len(evs) - 1}")
    if np.ptp(log_dt) == 0:
        raise SingularSystemError("all exposure times are identical; the response is not identifiable")

    rng = np.random.default_rng(seed)
    ref = evs.index(0) if 0 in evs else len(evs) // 2
    p, _, _, c = arr.shape
    flat = arr.reshape(p, -1, c)
    curves = []
    for ch in range(c):
        loc = _sample_locations(flat[ref, :, ch], n_samples, rng)
        z = flat[:, loc, ch].T.astype(np.int64)
        curves.append(solve_response(z, log_dt, lambda_smooth))
    return ResponseCurve(np.stack(curves), lambda_smooth)


def merge_radiance(stack, crf: ResponseCurve, log_exposure_times=None) -> np.ndarray:
    """Weighted log-domain merge into an HxWxC radiance map.

    Pixels with zero total weight (saturated or black everywhere) take the
    exposure whose level is closest to mid-gray.
    """
    evs, arr = _stack_arrays(stack)
    log_dt = relative_exposure_times(evs) if log_exposure_times is None \
        else np.asarray(log_exposure_times, dtype=np.float64)
    if log_dt.shape != (len(evs),) or not np.all(np.isfinite(log_dt)):
        raise ValueError(f"need one finite exposure time per image ({len(evs)})")
    c = arr.shape[-1]
    if crf.g.shape[0] != c:
        raise ValueError(f"response curve has {crf.g.shape[0]} channels, images have {c}")
    z = arr.astype(np.int64)
    g = np.stack([crf.g[ch][z[..., ch]] for ch in range(c)], axis=-1)
    w = WEIGHTS[z]
    dt = log_dt.reshape(-1, 1, 1, 1)
    num = (w * (g - dt)).sum(axis=0)
    den = w.sum(axis=0)

    best = np.argmin(np.abs(z - ANCHOR), axis=0)
    fallback = np.take_along_axis(g - dt, best[None], axis=0)[0]
    with np.errstate(invalid="ignore", divide="ignore"):
        log_e = np.where(den > 0, num / np.where(den > 0, den, 1), fallback)
    return np.exp(log_e)


def _check_radiance(radiance: np.ndarray) -> np.ndarray:
    r = np.asarray(radiance, dtype=np.float64)
    if r.ndim != 3 or r.shape[-1] != 3:
        raise ValueError(f"radiance map must be HxWx3, got {r.shape}")
    if not np.all(np.isfinite(r)) or np.any(r < 0) or not np.any(r > 0):
        raise ValueError("radiance must be finite, non-negative and not all zero")
    return r


def reinhard_tonemap(radiance: np.ndarray, key: float = 0.18, white: float | None = None,
                     delta: float = 1e-6) -> np.ndarray:
    """Global photographic operator; returns an HxWx3 image in [0, 1].

    ``white=None`` uses the largest scaled luminance; ``white=np.inf``
    gives the plain ``L / (1 + L)`` curve. The map is first divided by the
    power of two at or above its maximum, which is exact and makes the
    result independent of any power-of-two rescaling of the input.
    """
    r = _check_radiance(radiance)
    _, exponent = np.frexp(r.max())
    r = np.ldexp(r, -int(exponent))
    lum = r @ LUMA_709
    log_avg = np.exp(np.mean(np.log(delta + lum)))
    lm = (key / log_avg) * lum
    lw = lm.max() if white is None else float(white)
    ld = lm * (1.0 + lm / (lw * lw)) / (1.0 + lm)
    scale = np.divide(ld, lum, out=np.zeros_like(lum), where=lum > 1e-300)
    return np.clip(r * scale[..., None], 0.0, 1.0)


def tonemap_to_uint8(radiance: np.ndarray, key: float = 0.18, white: float | None = None) -> np.ndarray:
    from .data import to_uint8
    return to_uint8(255.0 * reinhard_tonemap(radiance, key, white))


def merge_stack(stack, lambda_smooth: float = 100.0, n_samples: int = 70,
                seed: int = 0) -> tuple[np.ndarray, ResponseCurve, str]:
    """Recover the response and merge; returns ``(radiance, curve, mode)``.

    A stack whose images are all identical carries no exposure information,
    so it is merged as a single image through the linear response
    (``mode="single-image"``) instead of solving a meaningless system.
    """
    evs, arr = _stack_arrays(stack)
    if all(np.array_equal(arr[0], a) for a in arr[1:]):
        ref = evs.index(0) if 0 in evs else len(evs) // 2
        crf = ResponseCurve.linear(arr.shape[-1])
        return merge_radiance({0: arr[ref]}, crf), crf, "single-image"
    crf = estimate_crf(stack, lambda_smooth=lambda_smooth, n_samples=n_samples, seed=seed)
    return merge_radiance(stack, crf), crf, "stack"
