"""Whole-image inference by sliding 64x64 patches and averaging overlaps."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import network as N
from .data import PATCH_SIZE, DataError, ExposureStack, normalize, denormalize, to_uint8
from .metrics import psnr


@dataclass
class InferredStack:
    images: dict[int, np.ndarray]
    provenance: str
    input_hash: str
    meta: dict = field(default_factory=dict)

    def manifest(self) -> str:
        from .data import ev_filename
        return json.dumps({
            "files": {str(ev): ev_filename(ev) for ev in sorted(self.images)},
            "input_sha256": self.input_hash,
            "model": self.provenance,
            **self.meta,
        }, indent=2, sort_keys=True)


def image_hash(img: np.ndarray) -> str:
    """sha256 over shape and pixel bytes."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h = hashlib.sha256(repr(img.shape).encode())
    h.update(img.tobytes())
    return h.hexdigest()


def _check_image(img: np.ndarray, size: int) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise DataError(f"expected an HxWx3 uint8 image, got {img.dtype} {img.shape}")
    if img.shape[0] < size or img.shape[1] < size:
        raise DataError(f"image {img.shape[0]}x{img.shape[1]} is smaller than the {size}x{size} patch")


def tile_positions(length: int, size: int, stride: int) -> list[int]:
    """Top-left offsets at multiples of ``stride``; a last tile is aligned to the
    far border when the stride does not land on it."""
    pos = list(range(0, length - size + 1, stride))
    if pos[-1] != length - size:
        pos.append(length - size)
    return pos


def coverage_count(shape: tuple[int, int], size: int = PATCH_SIZE, stride: int = 1) -> np.ndarray:
    """Number of patches covering each pixel."""
    count = np.zeros(shape, dtype=np.int64)
    for y in tile_positions(shape[0], size, stride):
        for x in tile_positions(shape[1], size, stride):
            count[y:y + size, x:x + size] += 1
    return count


def infer_image(subnet: N.SubnetworkParams, image: np.ndarray, stride: int = 1,
                size: int = PATCH_SIZE, batch: int = 32) -> np.ndarray:
    """Apply ``subnet`` to every ``size`` patch at ``stride`` and average.

    ``stride=1`` is the dense mode; ``stride=size`` gives non-overlapping
    tiles (fast path). Predictions are averaged in the 0..255 float domain
    by coverage count, then rounded half away from zero and clamped.
    Accumulation order is fixed, so results are deterministic.
    """
    _check_image(image, size)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    h, w, _ = image.shape
    acc = np.zeros((h, w, 3), dtype=np.float64)
    count = np.zeros((h, w, 1), dtype=np.int64)
    x_norm = normalize(image)
    coords = [(y, x) for y in tile_positions(h, size, stride) for x in tile_positions(w, size, stride)]
    for s in range(0, len(coords), batch):
        chunk = coords[s:s + batch]
        patches = np.stack([x_norm[:, y:y + size, x:x + size] for y, x in chunk])
        out = N.subnetwork_forward(subnet, patches)
        for (y, x), p in zip(chunk, out):
            acc[y:y + size, x:x + size] += denormalize(p)
            count[y:y + size, x:x + size] += 1
    return to_uint8(acc / count)


def generate_stack(model: N.ChainModel, image: np.ndarray, stride: int = 1,
                   provenance: str = "") -> InferredStack:
    """EV0 is the input; EV +-k is inferred from the inferred EV +-(k-1)."""
    _check_image(image, PATCH_SIZE)
    images = {0: image.copy()}
    for sign in (1, -1):
        cur = image
        for k in (1, 2, 3):
            cur = infer_image(model.stage(sign * k), cur, stride)
            images[sign * k] = cur
    return InferredStack(images, provenance, image_hash(image), {"stride": stride})


def exposure_distance_profile(stack) -> list[tuple[int, float]]:
    """PSNR of every member against EV0 (``inf`` for EV0 itself)."""
    images = getattr(stack, "images", stack)
    if 0 not in images:
        raise DataError("profile needs an EV0 image")
    ref = images[0]
    out = []
    for ev in sorted(images):
        if images[ev].shape != ref.shape:
            raise ValueError(f"dimension mismatch: EV {ev} is {images[ev].shape}, EV0 is {ref.shape}")
        out.append((ev, math.inf if ev == 0 else psnr(images[ev], ref)))
    return out


def as_exposure_stack(stack: InferredStack, scene_id: str = "inferred") -> ExposureStack:
    return ExposureStack(dict(stack.images), scene_id)
