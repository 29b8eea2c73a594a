import numpy as np
import pytest

from chainhdr import rgbe


def random_radiance(seed, shape=(37, 53)):
    rng = np.random.default_rng(seed)
    brightness = np.exp(rng.uniform(np.log(1e-6), np.log(1e6), shape))
    color = rng.uniform(0.5, 1.0, shape + (3,))
    return brightness[..., None] * color


def test_header_bytes_exact(tmp_path):
    p = tmp_path / "a.hdr"
    rgbe.write_rgbe(p, random_radiance(0, (5, 7)))
    data = p.read_bytes()
    head = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y 5 +X 7\n"
    assert data.startswith(head)
    assert len(data) == len(head) + 5 * 7 * 4


@pytest.mark.parametrize("seed", range(4))
def test_round_trip_relative_error(tmp_path, seed):
    r = random_radiance(seed)
    rgbe.write_rgbe(tmp_path / "r.hdr", r)
    back = rgbe.read_rgbe(tmp_path / "r.hdr")
    assert back.shape == r.shape
    assert (np.abs(back - r) / r).max() < 0.01


def test_encoding_reference_pixel():
    px = rgbe.float_to_rgbe(np.array([[[1.0, 0.5, 0.25]]]))
    # 1.0 = 0.5 * 2**1 -> exponent byte 129, mantissas 128, 64, 32
    np.testing.assert_array_equal(px[0, 0], [128, 64, 32, 129])
    np.testing.assert_allclose(rgbe.rgbe_to_float(px)[0, 0], [128.5 / 128, 64.5 / 128, 32.5 / 128])
    np.testing.assert_array_equal(rgbe.float_to_rgbe(np.zeros((1, 1, 3)))[0, 0], [0, 0, 0, 0])


def _rle_encode_line(px):
    """Simple new-style RLE: one run per constant stretch, else literals."""
    w = px.shape[0]
    out = bytearray([2, 2, w >> 8, w & 255])
    for ch in range(4):
        v = px[:, ch]
        x = 0
        while x < w:
            run = 1
            while x + run < w and run < 127 and v[x + run] == v[x]:
                run += 1
            if run >= 3:
                out += bytes([128 + run, v[x]])
                x += run
            else:
                n = 1
                while x + n < w and n < 128 and not (x + n + 2 < w and v[x + n] == v[x + n + 1] == v[x + n + 2]):
                    n += 1
                out += bytes([n]) + bytes(v[x:x + n].tolist())
                x += n
    return bytes(out)


def test_reads_run_length_encoded_scanlines(tmp_path):
    r = random_radiance(5, (6, 40))
    r[:, 10:30] = r[0, 0]  # long constant stretch to produce runs
    px = rgbe.float_to_rgbe(r)
    body = b"".join(_rle_encode_line(px[y]) for y in range(6))
    p = tmp_path / "rle.hdr"
    p.write_bytes(rgbe.header_bytes(6, 40) + body)
    np.testing.assert_array_equal(rgbe.read_rgbe(p), rgbe.rgbe_to_float(px))


def test_error_classes(tmp_path):
    good = tmp_path / "g.hdr"
    rgbe.write_rgbe(good, random_radiance(1, (4, 4)))
    data = good.read_bytes()

    bad = tmp_path / "b.hdr"
    bad.write_bytes(b"P6\n" + data)
    with pytest.raises(rgbe.HeaderError):
        rgbe.read_rgbe(bad)
    bad.write_bytes(data.replace(b"-Y 4 +X 4", b"+Z 4 +X 4"))
    with pytest.raises(rgbe.ResolutionError):
        rgbe.read_rgbe(bad)
    bad.write_bytes(data[:-5])
    with pytest.raises(rgbe.TruncatedDataError):
        rgbe.read_rgbe(bad)
    bad.write_bytes(data.replace(b"32-bit_rle_rgbe", b"32-bit_rle_xyze"))
    with pytest.raises(rgbe.HeaderError):
        rgbe.read_rgbe(bad)


def test_rejects_negative_or_nonfinite():
    with pytest.raises(ValueError):
        rgbe.float_to_rgbe(np.array([[[-1.0, 0, 0]]]))
    with pytest.raises(ValueError):
        rgbe.float_to_rgbe(np.array([[[np.inf, 0, 0]]]))
