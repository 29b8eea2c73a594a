"""Exposure-step subnetworks and the six-stage chain built from them.

A subnetwork maps a normalized 64x64 RGB patch at one exposure to the patch
one EV step brighter or darker. It has seven dilated feature blocks and a
four-layer reconstruction head with two parallel paths::

    f_1 .. f_7     3x3 conv (dilation 1,1,2,3,5,8,13) -> BN -> act
    cat            concat(f_1 .. f_7)                  (7 * width channels)
    path A         r1: 1x1 conv -> BN -> act
    path B         r3(r2(cat)): 1x1 conv -> BN -> act, 3x3 conv -> BN -> act
    residual       tanh(r4(concat(A, B))), r4 a 1x1 conv to 3 channels
    output         clip(patch + residual, -1, 1)

Brighter-direction networks use PReLU, darker-direction networks use MPReLU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import layers as L
from .layers import BatchNormStats

DILATIONS = (1, 1, 2, 3, 5, 8, 13)
DEFAULT_WIDTH = 32
BRIGHTER = "brighter"
DARKER = "darker"
DIRECTIONS = (BRIGHTER, DARKER)
BLOCK_NAMES = tuple(f"feat{i}" for i in range(len(DILATIONS))) + ("r1", "r2", "r3")


def receptive_field(dilations, kernel: int = 3) -> int:
    """Receptive field of a stack of same-padded dilated convolutions."""
    if kernel % 2 != 1:
        raise ValueError(f"kernel must be odd, got {kernel}")
    return 1 + (kernel - 1) * sum(int(d) for d in dilations)


def block_specs(width: int, dilations=DILATIONS) -> dict[str, tuple[int, int, int, int]]:
    """``name -> (c_out, c_in, kernel, dilation)`` for every conv layer."""
    specs = {}
    c_in = 3
    for i, d in enumerate(dilations):
        specs[f"feat{i}"] = (width, c_in, 3, d)
        c_in = width
    cat = width * len(dilations)
    specs["r1"] = (width, cat, 1, 1)
    specs["r2"] = (width, cat, 1, 1)
    specs["r3"] = (width, width, 3, 1)
    specs["r4"] = (3, 2 * width, 1, 1)
    return specs


ACTIVATIONS = {"prelu": (L.prelu, L.prelu_backward), "mprelu": (L.mprelu, L.mprelu_backward)}


@dataclass
class SubnetworkParams:
    """Learnable tensors and batch-norm statistics of one EV-step network.

    ``tensors`` holds ``<layer>.weight``, ``<layer>.bias`` for every conv and
    ``<block>.gamma``, ``<block>.beta``, ``<block>.alpha`` for the blocks that
    normalize and activate (everything except ``r4``).
    """

    direction: str
    tensors: dict[str, np.ndarray]
    stats: dict[str, BatchNormStats]
    width: int = DEFAULT_WIDTH
    dilations: tuple[int, ...] = DILATIONS
    activation: str = ""

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        self.dilations = tuple(int(d) for d in self.dilations)
        # brighter stages use PReLU and darker ones MPReLU unless overridden (ablations)
        if not self.activation:
            self.activation = "prelu" if self.direction == BRIGHTER else "mprelu"
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {tuple(ACTIVATIONS)}, got {self.activation!r}")

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "SubnetworkParams":
        return SubnetworkParams(
            self.direction,
            {k: v.copy() for k, v in self.tensors.items()},
            dict(self.stats),
            self.width,
            self.dilations,
            self.activation,
        )

    def astype(self, dtype) -> "SubnetworkParams":
        return SubnetworkParams(
            self.direction,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            {k: BatchNormStats(s.mean.astype(dtype), s.var.astype(dtype), s.updates)
             for k, s in self.stats.items()},
            self.width,
            self.dilations,
            self.activation,
        )


def build_subnetwork(direction: str, seed: int, width: int = DEFAULT_WIDTH,
                     dtype=np.float32, activation: str = "") -> SubnetworkParams:
    """Fresh parameters: He-normal kernels, zero biases, unit BN, alpha 0.25.

    The final 1x1 layer starts at zero so a fresh network returns its input.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    stats: dict[str, BatchNormStats] = {}
    for name, (c_out, c_in, k, _) in block_specs(width).items():
        if name == "r4":
            tensors["r4.weight"] = np.zeros((c_out, c_in, k, k), dtype=dtype)
        else:
            std = np.sqrt(2.0 / (c_in * k * k))
            tensors[f"{name}.weight"] = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype)
        tensors[f"{name}.bias"] = np.zeros(c_out, dtype=dtype)
        if name != "r4":
            tensors[f"{name}.gamma"] = np.ones(c_out, dtype=dtype)
            tensors[f"{name}.beta"] = np.zeros(c_out, dtype=dtype)
            tensors[f"{name}.alpha"] = np.full(c_out, 0.25, dtype=dtype)
            stats[name] = BatchNormStats.initial(c_out, dtype)
    return SubnetworkParams(direction, tensors, stats, width, DILATIONS, activation)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    x: np.ndarray
    blocks: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    cat: np.ndarray | None = None
    ab: np.ndarray | None = None
    r4_pre: np.ndarray | None = None
    summed: np.ndarray | None = None
    new_stats: dict[str, BatchNormStats] = field(default_factory=dict)
    train: bool = True


def _act(params: SubnetworkParams):
    return ACTIVATIONS[params.activation]


def _check_patch(patch: np.ndarray) -> None:
    if patch.ndim not in (3, 4) or patch.shape[-3] != 3:
        raise ValueError(f"expected a 3-channel patch, got shape {patch.shape}")
    lo, hi = float(np.min(patch)), float(np.max(patch))
    if lo < -1.0 or hi > 1.0 or not np.isfinite(lo + hi):
        raise ValueError(f"patch values must lie in [-1, 1], got range [{lo}, {hi}]")


def _forward(params: SubnetworkParams, patch: np.ndarray, train: bool) -> tuple[np.ndarray, ForwardCache]:
    _check_patch(patch)
    t = params.tensors
    act, _ = _act(params)
    specs = block_specs(params.width, params.dilations)
    cache = ForwardCache(x=patch, train=train)

    def block(name: str, inp: np.ndarray) -> np.ndarray:
        dilation = specs[name][3]
        conv = L.conv2d_dilated(inp, t[f"{name}.weight"], t[f"{name}.bias"], dilation)
        normed, new = L.batch_norm(conv, t[f"{name}.gamma"], t[f"{name}.beta"], params.stats.get(name), train)
        cache.blocks[name] = (inp, conv, normed)
        cache.new_stats[name] = new
        return act(normed, t[f"{name}.alpha"])

    h = patch
    feats = []
    for i in range(len(params.dilations)):
        h = block(f"feat{i}", h)
        feats.append(h)
    cat = L.concat_channels(feats)
    path_a = block("r1", cat)
    path_b = block("r3", block("r2", cat))
    ab = L.concat_channels([path_a, path_b])
    r4_pre = L.conv2d_dilated(ab, t["r4.weight"], t["r4.bias"], 1)
    summed = patch + L.tanh_act(r4_pre)
    cache.cat, cache.ab, cache.r4_pre, cache.summed = cat, ab, r4_pre, summed
    return np.clip(summed, -1.0, 1.0), cache


def subnetwork_forward(params: SubnetworkParams, patch: np.ndarray, train: bool = False) -> np.ndarray:
    """Map a normalized patch (values in [-1, 1]) one EV step.

    ``train=True`` normalizes with batch statistics; the default uses the
    running statistics stored in ``params``.
    """
    out, _ = _forward(params, patch, train)
    return out


def forward_train(params: SubnetworkParams, patch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Train-mode forward keeping the intermediates needed by the backward pass.

    Updated running statistics are in ``cache.new_stats``; ``params`` is not
    modified.
    """
    return _forward(params, patch, True)


def forward_cached(params: SubnetworkParams, patch: np.ndarray, train: bool) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass in either normalization mode, keeping backward intermediates.

    With ``train=False`` the stored running statistics are treated as
    constants, which is how :func:`chainhdr.training.train_subnetwork`
    optimizes by default.
    """
    return _forward(params, patch, train)


def calibrate_batch_norm(params: SubnetworkParams, patches: np.ndarray) -> SubnetworkParams:
    """Copy of ``params`` whose running statistics are the batch statistics of
    ``patches`` at every normalization layer."""
    fresh = params.copy()
    fresh.stats = {k: None for k in params.stats}
    _, cache = _forward(fresh, patches, True)
    fresh.stats = dict(cache.new_stats)
    return fresh


def subnetwork_backward(
    params: SubnetworkParams, cache: ForwardCache, dout: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients w.r.t. the input patch and every tensor in ``params``."""
    t = params.tensors
    _, act_back = _act(params)
    specs = block_specs(params.width, params.dilations)
    grads: dict[str, np.ndarray] = {}
    w = params.width

    # clip passes gradient on the closed interval
    inside = (cache.summed >= -1.0) & (cache.summed <= 1.0)
    d_summed = dout * inside
    dx = d_summed.copy()
    d_pre = L.tanh_backward(d_summed, cache.r4_pre)
    d_ab, grads["r4.weight"], grads["r4.bias"] = L.conv2d_dilated_backward(d_pre, cache.ab, t["r4.weight"], 1)

    def block_back(name: str, d_act: np.ndarray) -> np.ndarray:
        inp, conv, normed = cache.blocks[name]
        d_norm, grads[f"{name}.alpha"] = act_back(d_act, normed, t[f"{name}.alpha"])
        if cache.train:
            d_conv, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batch_norm_backward(
                d_norm, conv, t[f"{name}.gamma"])
        else:
            d_conv, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batch_norm_eval_backward(
                d_norm, conv, t[f"{name}.gamma"], params.stats[name])
        d_inp, grads[f"{name}.weight"], grads[f"{name}.bias"] = L.conv2d_dilated_backward(
            d_conv, inp, t[f"{name}.weight"], specs[name][3])
        return d_inp

    d_a, d_b = L.split_channels(d_ab, [w, w])
    d_cat = block_back("r1", d_a)
    d_cat = d_cat + block_back("r2", block_back("r3", d_b))
    d_feats = L.split_channels(d_cat, [w] * len(params.dilations))

    d_h = None
    for i in reversed(range(len(params.dilations))):
        d_act = d_feats[i] if d_h is None else d_feats[i] + d_h
        d_h = block_back(f"feat{i}", d_act)
    dx = dx + d_h
    return dx, grads


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def total_loss(pred: np.ndarray, target: np.ndarray, lambda_tv: float = 0.001) -> tuple[float, np.ndarray]:
    """Per-pixel L1 (summed over channels, averaged over pixels) plus TV.

    The TV term is the anisotropic total variation of ``pred`` divided by the
    pixel count. A leading batch axis averages the per-image losses. Returns
    ``(loss, dloss/dpred)``; ties get a zero subgradient.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    pixel, tv, grad = _loss_terms(pred, target)
    n = 1 if pred.ndim == 3 else pred.shape[0]
    return float((pixel + lambda_tv * tv) / n), (grad[0] + lambda_tv * grad[1]) / n


def pixel_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """The L1 term alone, averaged over images of a batch."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    h, w = pred.shape[-2:]
    n = 1 if pred.ndim == 3 else pred.shape[0]
    return float(np.abs(pred.astype(np.float64) - target).sum() / (h * w) / n)


def _loss_terms(pred, target):
    h, w = pred.shape[-2:]
    diff = pred - target
    pixel = np.abs(diff).sum(dtype=np.float64) / (h * w)
    g_pixel = np.sign(diff) / (h * w)

    dh = pred[..., 1:, :] - pred[..., :-1, :]
    dw = pred[..., :, 1:] - pred[..., :, :-1]
    tv = (np.abs(dh).sum(dtype=np.float64) + np.abs(dw).sum(dtype=np.float64)) / (h * w)
    g_tv = np.zeros_like(pred)
    sh, sw = np.sign(dh), np.sign(dw)
    g_tv[..., 1:, :] += sh
    g_tv[..., :-1, :] -= sh
    g_tv[..., :, 1:] += sw
    g_tv[..., :, :-1] -= sw
    return pixel, tv, (g_pixel.astype(pred.dtype), (g_tv / (h * w)).astype(pred.dtype))


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------

@dataclass
class ChainModel:
    """Three brighter stages (0->+1->+2->+3) and three darker ones."""

    up_stages: list[SubnetworkParams]
    down_stages: list[SubnetworkParams]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.up_stages) != 3 or len(self.down_stages) != 3:
            raise ValueError("a chain model has exactly three stages per direction")
        if any(s.direction != BRIGHTER for s in self.up_stages):
            raise ValueError("up stages must be brighter-direction networks")
        if any(s.direction != DARKER for s in self.down_stages):
            raise ValueError("down stages must be darker-direction networks")

    def stage(self, ev: int) -> SubnetworkParams:
        """The subnetwork producing EV ``ev`` from EV ``ev -/+ 1``."""
        if ev in (1, 2, 3):
            return self.up_stages[ev - 1]
        if ev in (-1, -2, -3):
            return self.down_stages[-ev - 1]
        raise ValueError(f"no stage produces EV {ev}")

    def stages(self) -> Iterator[tuple[int, SubnetworkParams]]:
        for k in (1, 2, 3):
            yield k, self.up_stages[k - 1]
        for k in (1, 2, 3):
            yield -k, self.down_stages[k - 1]

    @property
    def width(self) -> int:
        return self.up_stages[0].width


def build_chain(seed: int = 0, width: int = DEFAULT_WIDTH, dtype=np.float32) -> ChainModel:
    """Fresh chain; each stage gets its own seed derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(6)
    up = [build_subnetwork(BRIGHTER, int(seeds[i]), width, dtype) for i in range(3)]
    down = [build_subnetwork(DARKER, int(seeds[3 + i]), width, dtype) for i in range(3)]
    return ChainModel(up, down, {"seed": seed, "width": width})


def chain_forward(model: ChainModel, patch: np.ndarray, train: bool = False) -> dict[int, np.ndarray]:
    """Run both directions sequentially; returns ``{ev: patch}`` for ev in +-1..3."""
    out: dict[int, np.ndarray] = {}
    for sign, stages in ((1, model.up_stages), (-1, model.down_stages)):
        h = patch
        for k, stage in enumerate(stages, start=1):
            h = subnetwork_forward(stage, h, train)
            out[sign * k] = h
    return out
