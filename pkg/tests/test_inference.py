import math

import numpy as np
import pytest

from chainhdr import data as D
from chainhdr import inference as I
from chainhdr import network as N


def random_net(seed, width=2, direction=N.BRIGHTER):
    rng = np.random.default_rng(seed)
    net = N.build_subnetwork(direction, seed, width)
    net.tensors["r4.weight"] = (rng.standard_normal(net.tensors["r4.weight"].shape) * 0.5).astype(np.float32)
    return net


def test_identity_network_round_trip():
    img = D.synthetic_stack(0, 70, 75).images[0]
    net = N.build_subnetwork(N.BRIGHTER, 0, width=2)
    np.testing.assert_array_equal(I.infer_image(net, img, stride=3), img)


def test_constant_shift_network():
    img = np.random.default_rng(0).integers(0, 200, (66, 68, 3)).astype(np.uint8)
    net = N.build_subnetwork(N.BRIGHTER, 0, width=2)
    net.tensors["r4.bias"][:] = np.arctanh(np.float32(0.1))
    out = I.infer_image(net, img, stride=1)
    # 0.1 in normalized units is 12.75 levels, rounded half away from zero to 13
    np.testing.assert_array_equal(out.astype(int) - img, 13)


def test_matches_bruteforce_overlap_average():
    img = np.random.default_rng(1).integers(0, 256, (70, 70, 3)).astype(np.uint8)
    net = random_net(3)
    out = I.infer_image(net, img, stride=1)
    acc = np.zeros((70, 70, 3))
    cnt = np.zeros((70, 70, 1))
    x = D.normalize(img)
    for y in range(7):
        for xx in range(7):
            p = N.subnetwork_forward(net, x[:, y:y + 64, xx:xx + 64][None])[0]
            acc[y:y + 64, xx:xx + 64] += D.denormalize(p)
            cnt[y:y + 64, xx:xx + 64] += 1
    np.testing.assert_array_equal(out, D.to_uint8(acc / cnt))


def test_coverage_count_matches_bruteforce():
    h, w, size = 9, 12, 4
    brute = np.zeros((h, w), int)
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            for i in range(h):
                for j in range(w):
                    brute[i, j] += (y <= i < y + size) and (x <= j < x + size)
    np.testing.assert_array_equal(I.coverage_count((h, w), size, 1), brute)


def test_tiled_mode_covers_borders():
    assert I.tile_positions(150, 64, 64) == [0, 64, 86]
    assert I.tile_positions(128, 64, 64) == [0, 64]
    cov = I.coverage_count((150, 100), 64, 64)
    assert cov.min() >= 1


def test_undersized_image_rejected():
    with pytest.raises(D.DataError):
        I.infer_image(N.build_subnetwork(N.BRIGHTER, 0, 2), np.zeros((63, 80, 3), np.uint8))


def test_generate_stack_identity_model():
    img = D.synthetic_stack(2, 64, 64).images[0]
    stack = I.generate_stack(N.build_chain(0, 2), img, stride=64, provenance="abc")
    assert sorted(stack.images) == [-3, -2, -1, 0, 1, 2, 3]
    for ev in stack.images:
        np.testing.assert_array_equal(stack.images[ev], img)
    assert stack.images[0] is not img
    assert stack.input_hash == I.image_hash(img) and stack.provenance == "abc"


def test_generate_stack_is_sequential():
    img = D.synthetic_stack(4, 64, 64).images[0]
    model = N.build_chain(0, 2)
    model.up_stages = [random_net(s) for s in (1, 2, 3)]
    stack = I.generate_stack(model, img, stride=64)
    e1 = I.infer_image(model.stage(1), img, 64)
    e2 = I.infer_image(model.stage(2), e1, 64)
    np.testing.assert_array_equal(stack.images[2], e2)
    np.testing.assert_array_equal(stack.images[0], img)


def test_profile_identical_stack():
    img = D.synthetic_stack(0).images[0]
    prof = I.exposure_distance_profile({ev: img for ev in range(-3, 4)})
    assert all(math.isinf(v) for _, v in prof)


@pytest.mark.parametrize("seed", range(5))
def test_profile_monotone_on_synthetic_stack(seed):
    prof = dict(I.exposure_distance_profile(D.synthetic_stack(seed)))
    assert prof[0] == math.inf
    for sign in (1, -1):
        assert prof[sign] > prof[2 * sign] > prof[3 * sign]


def test_profile_errors():
    a = np.zeros((4, 4, 3), np.uint8)
    with pytest.raises(D.DataError):
        I.exposure_distance_profile({1: a})
    with pytest.raises(ValueError, match="dimension mismatch"):
        I.exposure_distance_profile({0: a, 1: np.zeros((4, 5, 3), np.uint8)})
