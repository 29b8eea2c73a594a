"""Small-scale training experiments on synthetic stacks.

These are the desk-sized checks used by the acceptance suite and the demos:
overfitting one stage, comparing a three-stage chain against a single
network doing the whole EV0 -> EV+3 jump, and comparing the two activations
on the darkening stage. Everything is seeded and runs on one CPU core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import network as N
from . import training as T
from .data import ExposureStack, synthetic_stack
from .inference import infer_image

TEST_SEED_OFFSET = 1000


def synthetic_stacks(count: int, first_seed: int = 0, size: int = 96) -> list[ExposureStack]:
    return [synthetic_stack(first_seed + i, size, size) for i in range(count)]


def image_pixel_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """L1 term of the training loss on whole uint8 images, in normalized units:
    channel-summed absolute difference averaged over pixels."""
    diff = np.abs(pred.astype(np.float64) - target.astype(np.float64)) / 127.5
    return float(diff.sum(axis=-1).mean())


def non_increasing_after(log: list[dict], warmup_iterations: int, key: str = "train_pixel") -> bool:
    """True if epoch means never rise once ``warmup_iterations`` steps have passed."""
    tail = [r[key] for r in log if r["iterations"] > warmup_iterations]
    return all(b <= a for a, b in zip(tail, tail[1:]))


# ---------------------------------------------------------------------------
# overfitting a single stage
# ---------------------------------------------------------------------------

@dataclass
class ToyResult:
    params: N.SubnetworkParams
    log: list[dict]
    final_pixel: float
    iterations: int
    seconds: float


def toy_overfit(width: int = 8, iterations: int = 2000, batch_size: int = 8, learning_rate: float = 1e-3,
                n_stacks: int = 20, ev: int = 1, seed: int = 0, on_epoch=None) -> ToyResult:
    """Fit stage EV0 -> ``ev`` on ``n_stacks`` synthetic 96x96 stacks.

    ``final_pixel`` is the eval-mode L1 term over the whole training set
    after the last step.
    """
    t0 = time.perf_counter()
    patches = T.stack_patches(synthetic_stacks(n_stacks), [0, ev], stride=10)
    direction = N.BRIGHTER if ev > 0 else N.DARKER
    cfg = T.TrainConfig(width=width, batch_size=batch_size, learning_rate=learning_rate,
                        epochs=10 ** 6, seed=seed)
    net = N.build_subnetwork(direction, seed, width=width)
    res = T.train_subnetwork(net, patches[0], patches[ev], cfg, max_iterations=iterations,
                             label=f"EV0->EV{ev:+d}", on_epoch=on_epoch)
    final = T.evaluate_subnetwork(res.params, patches[0], patches[ev])
    return ToyResult(res.params, res.log, final, res.iterations, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# chain against one big step
# ---------------------------------------------------------------------------

@dataclass
class ComparisonConfig:
    width: int = 4
    steps: int = 300
    batch_size: int = 8
    learning_rate: float = 1e-3
    n_train: int = 10
    n_test: int = 5
    patch_stride: int = 16
    infer_stride: int = 32

    def train_config(self, seed: int) -> T.TrainConfig:
        return T.TrainConfig(width=self.width, batch_size=self.batch_size, learning_rate=self.learning_rate,
                             epochs=10 ** 6, patch_stride=self.patch_stride, seed=seed)


@dataclass
class ChainComparison:
    seed: int
    chain_error: float
    single_error: float
    chain_stage_errors: list[float] = field(default_factory=list)

    @property
    def chain_wins(self) -> bool:
        return self.chain_error < self.single_error


def _fit(direction, src, dst, cfg: ComparisonConfig, seed: int, steps: int, activation: str = ""):
    net = N.build_subnetwork(direction, seed, width=cfg.width, activation=activation)
    return T.train_subnetwork(net, src, dst, cfg.train_config(seed), max_iterations=steps).params


def chain_vs_single(seed: int, cfg: ComparisonConfig | None = None) -> ChainComparison:
    """Three stages trained one EV step each against one network trained on
    EV0 -> EV+3 directly. Both use the same architecture and width; the
    single network gets three times the per-stage steps so the total number
    of optimizer steps matches. Errors are the EV+3 L1 term on held-out
    stacks, with the chain run stage after stage on its own outputs."""
    cfg = cfg or ComparisonConfig()
    evs = [0, 1, 2, 3]
    patches = T.stack_patches(synthetic_stacks(cfg.n_train), evs, stride=cfg.patch_stride)
    stages = [_fit(N.BRIGHTER, patches[k - 1], patches[k], cfg, seed + 17 * k, cfg.steps) for k in (1, 2, 3)]
    single = _fit(N.BRIGHTER, patches[0], patches[3], cfg, seed, 3 * cfg.steps)

    test = synthetic_stacks(cfg.n_test, TEST_SEED_OFFSET)
    chain_err, single_err, per_stage = [], [], []
    for st in test:
        cur = st.images[0]
        errs = []
        for k, net in zip((1, 2, 3), stages):
            cur = infer_image(net, cur, cfg.infer_stride)
            errs.append(image_pixel_loss(cur, st.images[k]))
        per_stage.append(errs)
        chain_err.append(errs[-1])
        single_err.append(image_pixel_loss(infer_image(single, st.images[0], cfg.infer_stride), st.images[3]))
    return ChainComparison(seed, float(np.mean(chain_err)), float(np.mean(single_err)),
                           [float(e) for e in np.mean(per_stage, axis=0)])


# ---------------------------------------------------------------------------
# activation ablation on the darkening stage
# ---------------------------------------------------------------------------

@dataclass
class ActivationComparison:
    seed: int
    errors: dict[str, float]

    @property
    def mprelu_not_worse(self) -> bool:
        return self.errors["mprelu"] <= self.errors["prelu"]


def activation_ablation(seed: int, cfg: ComparisonConfig | None = None, ev: int = -1) -> ActivationComparison:
    """Train the EV0 -> ``ev`` darker stage twice, once per activation, with
    identical data, initialization and step budget; report held-out error."""
    cfg = cfg or ComparisonConfig(steps=600)
    patches = T.stack_patches(synthetic_stacks(cfg.n_train), [0, ev], stride=cfg.patch_stride)
    test = synthetic_stacks(cfg.n_test, TEST_SEED_OFFSET)
    errors = {}
    for act in ("mprelu", "prelu"):
        net = _fit(N.DARKER, patches[0], patches[ev], cfg, seed, cfg.steps, activation=act)
        errors[act] = float(np.mean([image_pixel_loss(infer_image(net, st.images[0], cfg.infer_stride),
                                                      st.images[ev]) for st in test]))
    return ActivationComparison(seed, errors)
