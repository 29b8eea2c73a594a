"""Per-stage and whole-chain training loops.

Patches are kept as uint8 and normalized per batch. Every epoch visits the
patches in an order drawn from ``default_rng([seed, epoch])`` so a run is
reproducible and an interrupted run resumes bit-identically.

By default batch-norm layers run with frozen statistics: before the first
step each stage's running mean and variance are set from one calibration
batch, and optimization then treats them as constants (``bn_mode="frozen"``).
``bn_mode="batch"`` normalizes every step with the statistics of the
current batch and updates the running statistics with momentum 0.9.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import layers as L
from . import network as N
from .checkpoint import TrainState
from .data import PATCH_SIZE, PATCH_STRIDE, DataError, ExposureStack, normalize

BN_MODES = ("frozen", "batch")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 1
    epochs: int = 100
    patch_size: int = PATCH_SIZE
    patch_stride: int = PATCH_STRIDE
    lambda_tv: float = 0.001
    seed: int = 0
    teacher_forcing: bool = True
    # with teacher forcing, the last ``joint_epochs`` epochs run chained
    joint_epochs: int = 1
    width: int = N.DEFAULT_WIDTH
    bn_mode: str = "frozen"
    calibration_patches: int = 32

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("learning_rate", "batch_size", "patch_size", "patch_stride", "width",
                     "calibration_patches"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.epochs < 0 or self.joint_epochs < 0:
            raise ValueError("epochs and joint_epochs must be non-negative")
        if self.lambda_tv < 0:
            raise ValueError(f"lambda_tv must be non-negative, got {self.lambda_tv}")
        if self.bn_mode not in BN_MODES:
            raise ValueError(f"bn_mode must be one of {BN_MODES}, got {self.bn_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# patch pairs
# ---------------------------------------------------------------------------

def stack_patches(stacks: list[ExposureStack], evs, size: int = PATCH_SIZE,
                  stride: int = PATCH_STRIDE) -> dict[int, np.ndarray]:
    """Spatially aligned uint8 patches ``{ev: (N, size, size, 3)}`` over all stacks."""
    out: dict[int, list[np.ndarray]] = {ev: [] for ev in evs}
    for st in stacks:
        missing = [ev for ev in evs if ev not in st.images]
        if missing:
            raise DataError(f"stack {st.scene_id!r} lacks EV {missing}")
        h, w = st.shape[:2]
        if h < size or w < size:
            raise DataError(f"stack {st.scene_id!r} ({h}x{w}) is smaller than the {size}x{size} patch")
        ys = range(0, h - size + 1, stride)
        xs = range(0, w - size + 1, stride)
        for ev in evs:
            img = st.images[ev]
            out[ev].extend(img[y:y + size, x:x + size] for y in ys for x in xs)
    return {ev: np.stack(v) if v else np.zeros((0, size, size, 3), np.uint8) for ev, v in out.items()}


def _norm(batch_u8: np.ndarray) -> np.ndarray:
    return np.stack([normalize(p) for p in batch_u8])


# ---------------------------------------------------------------------------
# one optimization step
# ---------------------------------------------------------------------------

def _adam_all(params: N.SubnetworkParams, grads: dict, adam: dict[str, L.AdamState],
              cfg: TrainConfig) -> None:
    for k in sorted(params.tensors):
        params.tensors[k], adam[k] = L.adam_step(
            params.tensors[k], grads[k], adam[k], cfg.learning_rate, cfg.beta1, cfg.beta2)


def _check_finite(value: float, grads: dict, stage: str) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss at stage {stage}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {k} at stage {stage}")


def _forward(params: N.SubnetworkParams, x: np.ndarray, cfg: TrainConfig):
    out, cache = N.forward_cached(params, x, cfg.bn_mode == "batch")
    return out, cache


def _commit_stats(params: N.SubnetworkParams, cache, cfg: TrainConfig) -> None:
    if cfg.bn_mode == "batch":
        params.stats = dict(cache.new_stats)


def _calibrate(params: N.SubnetworkParams, x: np.ndarray, cfg: TrainConfig) -> N.SubnetworkParams:
    """Set frozen statistics from ``x`` unless the stage was calibrated already."""
    if cfg.bn_mode != "frozen" or any(s.updates for s in params.stats.values()):
        return params
    return N.calibrate_batch_norm(params, x)


def stage_label(ev: int) -> str:
    return f"EV{ev - (1 if ev > 0 else -1):+d}->EV{ev:+d}".replace("EV+0", "EV0")


# ---------------------------------------------------------------------------
# single subnetwork
# ---------------------------------------------------------------------------

@dataclass
class StageResult:
    params: N.SubnetworkParams
    adam: dict[str, L.AdamState]
    log: list[dict] = field(default_factory=list)
    iterations: int = 0


def train_subnetwork(params: N.SubnetworkParams, inputs: np.ndarray, targets: np.ndarray,
                     cfg: TrainConfig, max_iterations: int | None = None,
                     label: str = "stage", on_epoch: Callable[[dict], None] | None = None) -> StageResult:
    """Fit one subnetwork on uint8 patch pairs ``(N, s, s, 3)``.

    Runs ``cfg.epochs`` epochs or stops after ``max_iterations`` steps.
    The input is not modified; the returned params are a trained copy.
    Log records hold the epoch mean of the full loss and of the L1 term.
    """
    if inputs.shape != targets.shape or inputs.ndim != 4 or inputs.shape[0] == 0:
        raise ValueError(f"need matching non-empty (N, s, s, 3) patch arrays, got {inputs.shape} and {targets.shape}")
    params = params.copy()
    adam = {k: L.AdamState.zeros_like(v) for k, v in params.tensors.items()}
    n = inputs.shape[0]
    result = StageResult(params, adam)
    if cfg.epochs == 0 or max_iterations == 0:
        return result
    calib = np.random.default_rng([cfg.seed, 2 ** 31]).permutation(n)[:cfg.calibration_patches]
    result.params = params = _calibrate(params, _norm(inputs[np.sort(calib)]), cfg)

    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        losses, pixels = [], []
        for start in range(0, n, cfg.batch_size):
            if max_iterations is not None and result.iterations >= max_iterations:
                break
            idx = order[start:start + cfg.batch_size]
            x, y = _norm(inputs[idx]), _norm(targets[idx])
            out, cache = _forward(params, x, cfg)
            loss, dout = N.total_loss(out, y, cfg.lambda_tv)
            _, grads = N.subnetwork_backward(params, cache, dout)
            _check_finite(loss, grads, label)
            _commit_stats(params, cache, cfg)
            _adam_all(params, grads, adam, cfg)
            losses.append(loss)
            pixels.append(N.pixel_loss(out, y))
            result.iterations += 1
        if not losses:
            break
        rec = {"epoch": epoch + 1, "iterations": result.iterations,
               "train_loss": float(np.mean(losses)), "train_pixel": float(np.mean(pixels))}
        result.log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return result


def evaluate_subnetwork(params: N.SubnetworkParams, inputs: np.ndarray, targets: np.ndarray,
                        batch: int = 16) -> float:
    """Mean per-patch L1 term with eval-mode normalization."""
    total = 0.0
    for s in range(0, inputs.shape[0], batch):
        out = N.subnetwork_forward(params, _norm(inputs[s:s + batch]))
        total += N.pixel_loss(out, _norm(targets[s:s + batch])) * out.shape[0]
    return total / inputs.shape[0]


def apply_subnetwork(params: N.SubnetworkParams, patches_u8: np.ndarray, batch: int = 16) -> np.ndarray:
    """Eval-mode outputs for uint8 patches, returned normalized ``(N, 3, s, s)``."""
    return np.concatenate([N.subnetwork_forward(params, _norm(patches_u8[s:s + batch]))
                           for s in range(0, patches_u8.shape[0], batch)])


# ---------------------------------------------------------------------------
# whole chain
# ---------------------------------------------------------------------------

@dataclass
class ChainTrainResult:
    model: N.ChainModel
    log: list[dict]
    state: TrainState
    counters: dict[str, int]


def _epoch_is_chained(cfg: TrainConfig, epoch: int) -> bool:
    if not cfg.teacher_forcing:
        return True
    return epoch >= cfg.epochs - cfg.joint_epochs


def _chain_loss(stages, patches: dict[int, np.ndarray], sign: int, idx, cfg: TrainConfig,
                chained: bool, counters: dict[str, int], train: bool):
    """Forward one direction; returns (summed loss, per-stage outputs, caches, targets)."""
    h = _norm(patches[0][idx])
    total = 0.0
    caches, outs, targets = [], [], []
    for k, stage in enumerate(stages, start=1):
        if k > 1:
            if chained:
                counters["inferred_inputs"] += len(idx)
            else:
                h = _norm(patches[sign * (k - 1)][idx])
                counters["gt_inputs"] += len(idx)
        y = _norm(patches[sign * k][idx])
        if train:
            out, cache = _forward(stage, h, cfg)
            caches.append(cache)
        else:
            out = N.subnetwork_forward(stage, h)
        loss, dout = N.total_loss(out, y, cfg.lambda_tv)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at stage {stage_label(sign * k)}")
        total += loss
        outs.append((out, dout))
        targets.append(y)
        h = out
    return total, outs, caches, targets


def _chain_step(stages, adam, patches, sign, idx, cfg, chained, counters) -> tuple[float, float]:
    total, outs, caches, targets = _chain_loss(stages, patches, sign, idx, cfg, chained, counters, True)
    # backward from the last stage; in chained mode the input gradient of a
    # stage flows into the output of the one before it
    carry = None
    all_grads = []
    for k in reversed(range(len(stages))):
        out, dout = outs[k]
        if carry is not None:
            dout = dout + carry
        dx, grads = N.subnetwork_backward(stages[k], caches[k], dout)
        _check_finite(total, grads, stage_label(sign * (k + 1)))
        all_grads.append((k, grads))
        carry = dx if chained else None
    for k, grads in sorted(all_grads, key=lambda t: t[0]):
        _commit_stats(stages[k], caches[k], cfg)
        _adam_all(stages[k], grads, adam[sign * (k + 1)], cfg)
    pixel = sum(N.pixel_loss(o, t) for (o, _), t in zip(outs, targets))
    return total, pixel


def _calibrate_chain(model: N.ChainModel, patches, cfg: TrainConfig, chained: bool, counters) -> N.ChainModel:
    if cfg.bn_mode != "frozen":
        return model
    n = patches[0].shape[0]
    idx = np.sort(np.random.default_rng([cfg.seed, 2 ** 31]).permutation(n)[:cfg.calibration_patches])
    new = {}
    for sign, stages in ((1, model.up_stages), (-1, model.down_stages)):
        h = _norm(patches[0][idx])
        for k, stage in enumerate(stages, start=1):
            if k > 1 and not chained:
                h = _norm(patches[sign * (k - 1)][idx])
                counters["gt_inputs"] += len(idx)
            elif k > 1:
                counters["inferred_inputs"] += len(idx)
            stage = _calibrate(stage, h, cfg)
            new[sign * k] = stage
            h = N.subnetwork_forward(stage, h)
    return N.ChainModel([new[k] for k in (1, 2, 3)], [new[-k] for k in (1, 2, 3)], dict(model.metadata))


def validation_loss(model: N.ChainModel, patches: dict[int, np.ndarray], cfg: TrainConfig,
                    batch: int = 16) -> float | None:
    """Mean over patches of the chained (inference-time) summed loss, both directions."""
    n = patches[0].shape[0] if patches else 0
    if n == 0:
        return None
    dummy = {"gt_inputs": 0, "inferred_inputs": 0}
    total = 0.0
    for s in range(0, n, batch):
        idx = np.arange(s, min(n, s + batch))
        for sign, stages in ((1, model.up_stages), (-1, model.down_stages)):
            loss, *_ = _chain_loss(stages, patches, sign, idx, cfg, True, dummy, False)
            total += loss * len(idx)
    return total / n


def train_chain(train_stacks: list[ExposureStack], val_stacks: list[ExposureStack], cfg: TrainConfig,
                model: N.ChainModel | None = None, state: TrainState | None = None,
                on_epoch: Callable[[N.ChainModel, TrainState], None] | None = None) -> ChainTrainResult:
    """Train both three-stage directions.

    Each step takes one batch of aligned patches and, per direction, adds the
    losses at EV +-1, +-2, +-3. Teacher-forced epochs feed stage ``k`` the
    ground-truth EV +-(k-1) patch; chained epochs feed it the previous
    stage's output and backpropagate through the whole direction.

    Pass ``model`` and ``state`` from a checkpoint to resume; epochs already
    done are skipped and the remaining ones match an uninterrupted run.
    ``on_epoch`` is called after every epoch (for checkpointing).
    """
    evs = list(range(-3, 4))
    for st in list(train_stacks) + list(val_stacks):
        if not st.is_complete():
            raise DataError(f"stack {st.scene_id!r} is missing exposures {sorted(set(evs) - set(st.evs))}")
    if model is None:
        model = N.build_chain(cfg.seed, cfg.width)
    else:
        model = N.ChainModel([s.copy() for s in model.up_stages], [s.copy() for s in model.down_stages],
                             dict(model.metadata))
    state = TrainState() if state is None else TrainState(state.epochs_done, {
        ev: dict(a) for ev, a in state.adam.items()}, list(state.log))
    for ev, stage in model.stages():
        state.adam.setdefault(ev, {k: L.AdamState.zeros_like(v) for k, v in stage.tensors.items()})
    counters = {"gt_inputs": 0, "inferred_inputs": 0}
    if state.epochs_done >= cfg.epochs:
        return ChainTrainResult(model, state.log, state, counters)

    patches = stack_patches(train_stacks, evs, cfg.patch_size, cfg.patch_stride)
    val_patches = stack_patches(val_stacks, evs, cfg.patch_size, cfg.patch_stride) if val_stacks else {}
    n = patches[0].shape[0]
    if n == 0:
        raise DataError("no training patches")
    model = _calibrate_chain(model, patches, cfg, _epoch_is_chained(cfg, 0), counters)
    model.metadata.update({"train_config": cfg.to_dict()})

    for epoch in range(state.epochs_done, cfg.epochs):
        chained = _epoch_is_chained(cfg, epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        losses, pixels = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = pixel = 0.0
            for sign, stages in ((1, model.up_stages), (-1, model.down_stages)):
                l_dir, p_dir = _chain_step(stages, state.adam, patches, sign, idx, cfg, chained, counters)
                loss += l_dir
                pixel += p_dir
            losses.append(loss)
            pixels.append(pixel)
        rec = {"epoch": epoch + 1, "mode": "chained" if chained else "teacher_forced",
               "train_loss": float(np.mean(losses)), "train_pixel": float(np.mean(pixels)),
               "val_loss": validation_loss(model, val_patches, cfg)}
        state.log.append(rec)
        state.epochs_done = epoch + 1
        if on_epoch is not None:
            on_epoch(model, state)
    return ChainTrainResult(model, state.log, state, counters)


def format_log_record(rec: dict) -> str:
    """One JSON line per epoch."""
    return json.dumps(rec, sort_keys=True)
