"""Exposure stacks: containers, EV arithmetic, patches, splits and I/O."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

EV_OFFSETS = (-3, -2, -1, 0, 1, 2, 3)
PATCH_SIZE = 64
PATCH_STRIDE = 10
SPLIT_RATIO = (7, 3, 10)
LUMA_601 = np.array([0.299, 0.587, 0.114])


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass
class ExposureStack:
    """8-bit RGB images keyed by EV offset from the middle exposure."""

    images: dict[int, np.ndarray]
    scene_id: str = ""
    capture_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {img.shape for img in self.images.values()}
        if len(shapes) > 1:
            raise DataError(f"stack {self.scene_id!r} mixes image shapes {sorted(shapes)}")
        for ev, img in self.images.items():
            if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
                raise DataError(f"EV {ev} of {self.scene_id!r} is not an 8-bit RGB image "
                                f"(dtype {img.dtype}, shape {img.shape})")

    @property
    def evs(self) -> list[int]:
        return sorted(self.images)

    @property
    def shape(self) -> tuple[int, ...]:
        return next(iter(self.images.values())).shape

    def is_complete(self) -> bool:
        return set(EV_OFFSETS) <= set(self.images)


def exposure_value(f_number: float, exposure_time_s: float, iso: float) -> float:
    """EV = 2 log2 F - log2 S + log2(ISO / 100)."""
    for name, v in (("f_number", f_number), ("exposure_time_s", exposure_time_s), ("iso", iso)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return 2 * math.log2(f_number) - math.log2(exposure_time_s) + math.log2(iso / 100)


# ---------------------------------------------------------------------------
# pixel normalization
# ---------------------------------------------------------------------------

def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to [0, 255]."""
    return np.clip(round_half_away(np.asarray(x, dtype=np.float64)), 0, 255).astype(np.uint8)


def normalize(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """HxWx3 uint8 -> 3xHxW in [-1, 1] via ``x / 127.5 - 1``."""
    return (np.moveaxis(img, -1, -3).astype(np.float64) / 127.5 - 1.0).astype(dtype)


def denormalize(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize` without rounding: 3xHxW -> HxWx3 floats."""
    return np.moveaxis((np.asarray(x, dtype=np.float64) + 1.0) * 127.5, -3, -1)


# ---------------------------------------------------------------------------
# middle exposure, patches, splits
# ---------------------------------------------------------------------------

def luma(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) @ LUMA_601


def histogram_entropy(img: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin grayscale histogram."""
    gray = to_uint8(luma(img))
    counts = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def select_middle_exposure(images: list[np.ndarray]) -> int:
    """Index of the image whose grayscale histogram has maximal entropy."""
    if len(images) == 0:
        raise ValueError("select_middle_exposure needs at least one image")
    entropies = [histogram_entropy(img) for img in images]
    return int(np.argmax(entropies))  # argmax keeps the lowest index on ties


def patch_positions(length: int, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> list[int]:
    if length < size:
        raise DataError(f"dimension {length} is smaller than patch size {size}")
    return list(range(0, length - size + 1, stride))


def extract_patches(image: np.ndarray, size: int = PATCH_SIZE,
                    stride: int = PATCH_STRIDE) -> list[tuple[tuple[int, int], np.ndarray]]:
    """All ``size x size`` windows at multiples of ``stride``.

    Returns ``[((top, left), patch), ...]`` in row-major order.
    """
    h, w = image.shape[:2]
    if h < size or w < size:
        raise DataError(f"image {h}x{w} is smaller than the {size}x{size} patch")
    return [((y, x), image[y:y + size, x:x + size])
            for y in patch_positions(h, size, stride) for x in patch_positions(w, size, stride)]


def split_sizes(n: int, ratio=SPLIT_RATIO) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``n`` items over ``ratio``."""
    total = sum(ratio)
    quotas = [n * r / total for r in ratio]
    sizes = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split_dataset(items: list, seed: int, ratio=SPLIT_RATIO) -> tuple[list, list, list]:
    """Deterministic shuffled train/val/test partition in a 7:3:10 ratio."""
    if len(items) == 0:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train, n_val, _ = split_sizes(len(items), ratio)
    shuffled = [items[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def synthetic_scene(seed: int, height: int = 96, width: int = 96) -> np.ndarray:
    """Procedural HxWx3 scene in [0, 1]: gradient, Gaussian blobs, checkerboard."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)

    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    base = rng.uniform(0.15, 0.45) + rng.uniform(0.1, 0.35) * ramp
    scene = np.repeat(base[..., None], 3, axis=2) * rng.uniform(0.7, 1.0, size=3)

    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, 1, size=2)
        sigma = rng.uniform(0.05, 0.25)
        amp = rng.uniform(-0.25, 0.6)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        scene += amp * blob[..., None] * rng.uniform(0.6, 1.0, size=3)

    cell = int(rng.integers(6, 17))
    y0, x0 = rng.integers(0, max(height // 2, 1)), rng.integers(0, max(width // 2, 1))
    y1, x1 = min(height, y0 + height // 2), min(width, x0 + width // 2)
    iy, ix = np.mgrid[y0:y1, x0:x1]
    checker = ((iy // cell + ix // cell) % 2).astype(np.float64)
    scene[y0:y1, x0:x1] *= (0.6 + 0.8 * checker)[..., None]
    # stretch to a range a well-chosen middle exposure would have
    lo, hi = rng.uniform(0.005, 0.03), rng.uniform(0.8, 1.0)
    scene = (scene - scene.min()) / max(np.ptp(scene), 1e-9)
    scene = scene ** (np.log(rng.uniform(0.4, 0.55)) / np.log(np.clip(np.median(scene), 0.05, 0.95)))
    return lo + (hi - lo) * scene


def exposure_transform(middle: np.ndarray, ev: int) -> np.ndarray:
    """Analytic exposure change of an 8-bit image: clamp(I0 * 2**ev)."""
    return to_uint8(middle.astype(np.float64) * 2.0 ** ev)


def synthetic_stack(seed: int, height: int = 96, width: int = 96, scene_id: str | None = None) -> ExposureStack:
    """Seven-exposure stack derived from a procedural middle exposure."""
    middle = to_uint8(255.0 * synthetic_scene(seed, height, width))
    images = {ev: exposure_transform(middle, ev) for ev in EV_OFFSETS}
    return ExposureStack(images, scene_id or f"synthetic_{seed:04d}")


def render_exposures(radiance: np.ndarray, ev_offsets=EV_OFFSETS, gamma: float = 1.0,
                     scale: float = 1.0) -> dict[int, np.ndarray]:
    """Photograph a linear radiance field at exposure times ``2**ev``.

    Pixel level = round(255 * clip(scale * E * 2**ev, 0, 1) ** (1/gamma)).
    """
    out = {}
    for ev in ev_offsets:
        exposure = np.clip(scale * radiance * 2.0 ** ev, 0.0, 1.0)
        out[int(ev)] = to_uint8(255.0 * exposure ** (1.0 / gamma))
    return out


# ---------------------------------------------------------------------------
# directory layout
# ---------------------------------------------------------------------------

def ev_filename(ev: int) -> str:
    return "ev0.png" if ev == 0 else f"ev{ev:+d}.png"


def _ev_candidates(ev: int) -> list[str]:
    names = [ev_filename(ev)]
    if ev == 0:
        names += ["ev+0.png", "ev-0.png"]
    elif ev > 0:
        names.append(f"ev{ev}.png")
    return names


def read_png(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(img)).save(path, format="PNG")


def missing_evs(scene_dir: str | os.PathLike, evs=EV_OFFSETS) -> list[int]:
    d = Path(scene_dir)
    return [ev for ev in evs if not any((d / n).is_file() for n in _ev_candidates(ev))]


def load_stack(scene_dir: str | os.PathLike, evs=EV_OFFSETS, require_all: bool = True) -> ExposureStack:
    """Read ``ev{k}.png`` files (plus optional ``meta.json``) from a scene directory."""
    d = Path(scene_dir)
    images = {}
    for ev in evs:
        for name in _ev_candidates(ev):
            if (d / name).is_file():
                images[ev] = read_png(d / name)
                break
        else:
            if require_all:
                raise DataError(f"scene {d.name}: missing {ev_filename(ev)}")
    if not images:
        raise DataError(f"scene {d.name}: no ev*.png files")
    meta = {}
    if (d / "meta.json").is_file():
        meta = json.loads((d / "meta.json").read_text())
    return ExposureStack(images, d.name, meta)


def save_stack(stack: ExposureStack, scene_dir: str | os.PathLike) -> None:
    d = Path(scene_dir)
    d.mkdir(parents=True, exist_ok=True)
    for ev, img in sorted(stack.images.items()):
        write_png(d / ev_filename(ev), img)
    if stack.capture_meta:
        (d / "meta.json").write_text(json.dumps(stack.capture_meta, indent=2, sort_keys=True))
