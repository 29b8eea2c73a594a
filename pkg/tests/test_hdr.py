import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainhdr import data as D
from chainhdr import hdr as H


def hdr_scene(seed, h=96, w=128):
    """Linear radiance spanning about 8 stops left to right, with texture."""
    rng = np.random.default_rng(seed)
    ramp = np.exp(np.linspace(np.log(2.0 ** -7), np.log(2.0), w))[None, :, None]
    return ramp * (0.5 + D.synthetic_scene(seed, h, w)) * rng.uniform(0.8, 1.0, 3)


def test_weight_hat():
    w = H.weight_hat(np.arange(256))
    assert w[0] == 0 and w[255] == 0 and w[127] == 127 and w[128] == 127 and w[200] == 55
    assert H.weight_hat(10) == 10.0
    with pytest.raises(ValueError):
        H.weight_hat(256)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_crf_recovery_gamma_22(seed):
    images = D.render_exposures(hdr_scene(seed), gamma=2.2)
    crf = H.estimate_crf(images, seed=seed)
    z = np.arange(30, 226)
    truth = 2.2 * np.log(z / 128.0)
    assert np.all(crf.g[:, 128] == 0.0)
    assert np.abs(crf.g[:, z] - truth).max() < 0.05


def test_crf_is_deterministic_for_a_seed():
    images = D.render_exposures(hdr_scene(3), gamma=2.2)
    a = H.estimate_crf(images, seed=9).g
    b = H.estimate_crf(images, seed=9).g
    np.testing.assert_array_equal(a, b)


def test_crf_identical_exposure_times_are_singular():
    images = D.render_exposures(hdr_scene(0), gamma=2.2)
    with pytest.raises(H.SingularSystemError):
        H.estimate_crf(images, log_exposure_times=np.zeros(7))


def test_crf_needs_enough_samples():
    images = D.render_exposures(hdr_scene(0), gamma=2.2)
    with pytest.raises(ValueError, match="exceed 256"):
        H.estimate_crf({0: images[0], 1: images[1]}, n_samples=100)


def _well_exposed(images):
    return (images[0] >= 20) & (images[0] <= 235)


@pytest.mark.parametrize("seed", [0, 1])
def test_merge_recovers_radiance(seed):
    radiance = hdr_scene(seed)
    images = D.render_exposures(radiance, gamma=1.0)
    merged = H.merge_radiance(images, H.ResponseCurve.linear())
    # linear response g(z) = ln(z/128) puts radiance on a 255/128 scale
    rel = np.abs(merged * 128 / 255 / radiance - 1)[_well_exposed(images)]
    assert rel.max() <= 0.01


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5, allow_nan=False))
def test_merge_exposure_time_scale_covariance(shift):
    images = D.render_exposures(hdr_scene(1, 48, 64), gamma=1.0)
    crf = H.ResponseCurve.linear()
    log_dt = H.relative_exposure_times(sorted(images))
    base = np.log(H.merge_radiance(images, crf, log_dt))
    moved = np.log(H.merge_radiance(images, crf, log_dt + shift))
    assert np.abs(moved - (base - shift)).max() <= 1e-12


def test_merge_falls_back_when_all_weights_vanish():
    sat = np.full((4, 4, 3), 255, np.uint8)
    black = np.zeros((4, 4, 3), np.uint8)
    out = H.merge_radiance({-1: black, 0: black, 1: sat}, H.ResponseCurve.linear())
    # every pixel has zero weight; the exposure nearest mid-grey is EV+1 (255)
    np.testing.assert_allclose(out, 255 / 128 / 2, rtol=1e-12)


def test_merge_stack_single_image_mode():
    img = D.synthetic_stack(0).images[0]
    radiance, crf, mode = H.merge_stack({ev: img for ev in range(-3, 4)})
    assert mode == "single-image"
    np.testing.assert_allclose(radiance, np.maximum(img, 1) / 128.0, rtol=1e-12)


def test_reinhard_reference_values():
    r = np.full((2, 2, 3), 0.5)
    # uniform grey: Lm = key; white defaults to max(Lm) = key
    out = H.reinhard_tonemap(r)
    key = 0.18
    expected = key * (1 + key / key ** 2) / (1 + key)
    np.testing.assert_allclose(out, expected, rtol=1e-5)
    out_inf = H.reinhard_tonemap(r, white=np.inf)
    np.testing.assert_allclose(out_inf, key / (1 + key), rtol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(-20, 20))
def test_reinhard_invariant_to_power_of_two_scaling(k):
    r = hdr_scene(2, 16, 16)
    np.testing.assert_array_equal(H.reinhard_tonemap(r), H.reinhard_tonemap(r * 2.0 ** k))


def test_reinhard_output_range_and_errors():
    out = H.reinhard_tonemap(hdr_scene(4, 32, 32), key=0.36)
    assert out.min() >= 0 and out.max() <= 1
    with pytest.raises(ValueError):
        H.reinhard_tonemap(np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        H.reinhard_tonemap(np.full((4, 4, 3), np.nan))
