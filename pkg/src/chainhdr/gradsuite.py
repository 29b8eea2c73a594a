"""Finite-difference checks for every layer and the full subnetwork."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import network as N

CONV_DILATIONS = (1, 2, 3, 5, 8, 13)


@dataclass
class SuiteEntry:
    name: str
    seed: int
    max_rel_error: float
    checked: int
    skipped: int


def _conv_case(dilation: int, rng):
    x = rng.standard_normal((2, 2, 16, 16))
    params = {"w": rng.standard_normal((3, 2, 3, 3)) * 0.5, "b": rng.standard_normal(3)}

    def fwd(x, p):
        return L.conv2d_dilated(x, p["w"], p["b"], dilation)

    def bwd(d, x, p):
        dx, dw, db = L.conv2d_dilated_backward(d, x, p["w"], dilation)
        return dx, {"w": dw, "b": db}

    return fwd, bwd, x, params, None


def _bn_case(rng, train: bool):
    x = rng.standard_normal((3, 4, 5, 5)) * 2 + 0.5
    params = {"gamma": rng.uniform(0.5, 1.5, 4), "beta": rng.standard_normal(4)}
    stats = L.BatchNormStats(rng.standard_normal(4), rng.uniform(0.5, 2.0, 4), 1)

    def fwd(x, p):
        return L.batch_norm(x, p["gamma"], p["beta"], stats, train)[0]

    def bwd(d, x, p):
        if train:
            dx, dg, db = L.batch_norm_backward(d, x, p["gamma"])
        else:
            dx, dg, db = L.batch_norm_eval_backward(d, x, p["gamma"], stats)
        return dx, {"gamma": dg, "beta": db}

    return fwd, bwd, x, params, None


def _act_case(kind: str, rng):
    x = rng.standard_normal((2, 3, 6, 6))
    params = {"alpha": rng.uniform(0.05, 0.5, 3)}
    f = {"prelu": (L.prelu, L.prelu_backward), "mprelu": (L.mprelu, L.mprelu_backward)}[kind]

    def fwd(x, p):
        return f[0](x, p["alpha"])

    def bwd(d, x, p):
        dx, da = f[1](d, x, p["alpha"])
        return dx, {"alpha": da}

    return fwd, bwd, x, params, lambda x, p: x >= 0


def _tanh_case(rng):
    x = rng.standard_normal((2, 3, 5, 5)) * 1.5
    return (lambda x, p: L.tanh_act(x)), (lambda d, x, p: (L.tanh_backward(d, x), {})), x, {}, None


def _concat_case(rng):
    x = rng.standard_normal((2, 2, 4, 4))
    params = {"b": rng.standard_normal((2, 3, 4, 4)), "c": rng.standard_normal((2, 1, 4, 4))}

    def fwd(x, p):
        return L.concat_channels([x, p["b"], p["c"]])

    def bwd(d, x, p):
        dx, db, dc = L.split_channels(d, [2, 3, 1])
        return dx, {"b": db, "c": dc}

    return fwd, bwd, x, params, None


def _subnet_case(direction: str, rng, seed: int, train: bool):
    base = N.build_subnetwork(direction, seed, width=2, dtype=np.float64)
    # move away from the zero-initialized output layer so every path carries gradient
    tensors = dict(base.tensors)
    tensors["r4.weight"] = rng.standard_normal(tensors["r4.weight"].shape) * 0.3
    for k in tensors:
        if k.endswith(".alpha"):
            tensors[k] = rng.uniform(0.1, 0.5, tensors[k].shape)
    x = rng.uniform(-0.6, 0.6, (3, 8, 8))
    stats = base.stats
    if not train:
        stats = N.calibrate_batch_norm(N.SubnetworkParams(direction, tensors, stats, 2), x).stats

    def net(p):
        return N.SubnetworkParams(direction, dict(p), stats, 2)

    def fwd(x, p):
        return N.forward_cached(net(p), x, train)[0]

    def bwd(d, x, p):
        q = net(p)
        _, cache = N.forward_cached(q, x, train)
        return N.subnetwork_backward(q, cache, d)

    def pattern(x, p):
        _, c = N.forward_cached(net(p), x, train)
        return np.concatenate([(b[2] >= 0).ravel() for b in c.blocks.values()]
                              + [(np.abs(c.summed) <= 1).ravel()])

    return fwd, bwd, x, tensors, pattern


def cases(seed: int, include_subnetwork: bool = True):
    """``(name, builder)`` pairs; each builder returns (fwd, bwd, x, params, kink_pattern)."""
    rng = np.random.default_rng(seed)
    out = [(f"conv2d_dilated[d={d}]", lambda d=d: _conv_case(d, rng)) for d in CONV_DILATIONS]
    out += [
        ("batch_norm[train]", lambda: _bn_case(rng, True)),
        ("batch_norm[eval]", lambda: _bn_case(rng, False)),
        ("prelu", lambda: _act_case("prelu", rng)),
        ("mprelu", lambda: _act_case("mprelu", rng)),
        ("tanh", lambda: _tanh_case(rng)),
        ("concat", lambda: _concat_case(rng)),
    ]
    if include_subnetwork:
        out += [
            ("subnetwork[brighter,train]", lambda: _subnet_case(N.BRIGHTER, rng, seed, True)),
            ("subnetwork[darker,eval]", lambda: _subnet_case(N.DARKER, rng, seed, False)),
        ]
    return out


def run_suite(seeds=(0, 1, 2, 3, 4), eps: float = 1e-4, include_subnetwork: bool = True
              ) -> tuple[list[SuiteEntry], float]:
    """Check every case for every seed; returns the entries and elapsed seconds."""
    t0 = time.perf_counter()
    entries = []
    for seed in seeds:
        for name, build in cases(seed, include_subnetwork):
            fwd, bwd, x, params, pattern = build()
            res = L.finite_difference_check(fwd, bwd, x, params, eps=eps, seed=seed, kink_pattern=pattern)
            entries.append(SuiteEntry(name, seed, res.max_rel_error, res.checked, res.skipped))
    return entries, time.perf_counter() - t0
