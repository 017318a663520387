import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from govos import media_io as mio
from govos.graph import round_half_away


def _write(path, data):
    with open(path, "wb") as fh:
        fh.write(data)
    return str(path)


def test_read_frames_all_255(tmp_path):
    paths = [_write(tmp_path / f"{i}.pgm", b"P5\n2 2\n255\n" + bytes([255] * 4)) for i in range(2)]
    video = mio.read_frames(paths)
    assert video.m == 2 and video.channels == 1
    assert np.all(video.data == 1.0)


def test_read_frames_p6_scaling(tmp_path):
    pix = bytes([128, 0, 255]) + bytes(3 * 3)
    paths = [_write(tmp_path / f"{i}.ppm", b"P6\n2 2\n255\n" + pix) for i in range(2)]
    video = mio.read_frames(paths)
    np.testing.assert_array_equal(video.data[0, 0, 0], [128 / 255, 0.0, 1.0])


def test_read_frames_dimension_mismatch(tmp_path):
    a = _write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes(4))
    b = _write(tmp_path / "b.pgm", b"P5\n4 4\n255\n" + bytes(16))
    with pytest.raises(mio.FormatError):
        mio.read_frames([a, b])


@pytest.mark.parametrize("blob", [
    b"P3\n2 2\n255\n" + bytes(4),          # ascii variant
    b"P5\n2 2\n65535\n" + bytes(8),        # 16-bit
    b"P5\n2 two\n255\n" + bytes(4),        # bad token
    b"P5\n2 2\n255\n" + bytes(3),          # truncated payload
])
def test_read_frames_malformed(tmp_path, blob):
    a = _write(tmp_path / "a.pgm", blob)
    with pytest.raises(mio.FormatError):
        mio.read_frames([a, a])


def test_netpbm_comment_in_header(tmp_path):
    img = mio.decode_netpbm(b"P5\n# made by hand\n1 1\n255\n\x07")
    assert img.shape == (1, 1, 1) and img[0, 0, 0] == 7


def test_read_flo_direct_decode(tmp_path):
    p = _write(tmp_path / "a.flo", struct.pack("<fiiff", 202021.25, 1, 1, 0.5, -0.25))
    field = mio.read_flo(p)
    assert field.shape == (1, 1, 2)
    np.testing.assert_array_equal(field[0, 0], [0.5, -0.25])


def test_read_flo_wrong_magic(tmp_path):
    p = _write(tmp_path / "a.flo", struct.pack("<fiiff", 0.0, 1, 1, 0.5, -0.25))
    with pytest.raises(mio.FormatError, match="magic"):
        mio.read_flo(p)


def test_read_flo_size_mismatch(tmp_path):
    p = _write(tmp_path / "a.flo", struct.pack("<fiif", 202021.25, 1, 1, 0.5))
    with pytest.raises(mio.FormatError):
        mio.read_flo(p)


def test_write_flo_zero_field_size(tmp_path):
    p = tmp_path / "z.flo"
    mio.write_flo(np.zeros((2, 2, 2)), p)
    assert os.path.getsize(p) == 4 + 8 + 32


def test_write_flo_rejects_nan(tmp_path):
    field = np.zeros((2, 2, 2))
    field[1, 1, 0] = np.nan
    p = tmp_path / "n.flo"
    with pytest.raises(ValueError):
        mio.write_flo(field, p)
    assert not p.exists()


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6).map(lambda s: s + (2,)),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_flo_round_trip_bit_exact(tmp_path_factory, field):
    p = tmp_path_factory.mktemp("flo") / "f.flo"
    mio.write_flo(field, p)
    back = mio.read_flo(p)
    assert back.dtype == np.float32
    assert back.tobytes() == field.astype("<f4").tobytes()


@pytest.mark.parametrize("value, byte", [(0.5, 128), (0.0, 0), (1.0, 255)])
def test_write_mask_pgm_rounding(tmp_path, value, byte):
    p = tmp_path / "m.pgm"
    mio.write_mask_pgm(np.full((3, 2), value), p)
    img = mio.read_netpbm(p)
    assert img.shape == (3, 2, 1)
    assert np.all(img == byte)


def test_write_mask_pgm_header(tmp_path):
    p = tmp_path / "m.pgm"
    mio.write_mask_pgm(np.zeros((3, 2)), p)
    assert p.read_bytes() == b"P5\n2 3\n255\n" + bytes(6)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 5), elements=st.floats(0.0, 1.0)))
def test_mask_quantization_error_bound(tmp_path_factory, mask):
    p = tmp_path_factory.mktemp("q") / "m.pgm"
    mio.write_mask_pgm(mask, p)
    back = mio.read_netpbm(p)[..., 0] / 255.0
    assert np.abs(back - mask).max() <= 1 / 510 + 1e-15


def test_netpbm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    for c, name in ((1, "a.pgm"), (3, "a.ppm")):
        img = rng.integers(0, 256, size=(5, 7, c), dtype=np.uint8)
        mio.write_netpbm(img, tmp_path / name)
        np.testing.assert_array_equal(mio.read_netpbm(tmp_path / name), img)


def _maps(tmp_path, count, value=255, shape=(2, 3)):
    paths = []
    for t in range(count):
        p = tmp_path / mio.frame_name(t, "pgm")
        mio.write_netpbm(np.full(shape + (1,), value, np.uint8), p)
        paths.append(str(p))
    return paths


def test_probability_maps_all_255(tmp_path):
    maps = mio.read_probability_maps(_maps(tmp_path, 3))
    assert maps.shape == (3, 2, 3) and np.all(maps == 1.0)


def test_probability_maps_byte_51(tmp_path):
    assert mio.read_probability_maps(_maps(tmp_path, 2, 51))[0, 0, 0] == pytest.approx(0.2, abs=0)


def test_probability_maps_frame_count(tmp_path):
    video = mio.VideoTensor(np.zeros((3, 2, 3, 1)))
    with pytest.raises(mio.FormatError, match="expected 3"):
        mio.read_probability_maps(_maps(tmp_path, 2), video)


def test_probability_maps_size_mismatch(tmp_path):
    video = mio.VideoTensor(np.zeros((2, 4, 4, 1)))
    with pytest.raises(mio.FormatError):
        mio.read_probability_maps(_maps(tmp_path, 2), video)


def test_synth_small_square_static_background():
    spec = mio.SynthSpec(m=3, h=4, w=4, size=2, start=(1, 0), velocity=(1.0, 0.0))
    video, flows, gt = mio.synth_sequence(spec)
    expected = np.zeros((4, 4), bool)
    expected[1:3, 0:2] = True
    np.testing.assert_array_equal(gt.masks[0], expected)
    fwd = flows.forward[0]
    np.testing.assert_array_equal(fwd[expected], [[1.0, 0.0]] * 4)
    np.testing.assert_array_equal(fwd[~expected], np.zeros((12, 2)))


def test_synth_static_object_moving_background():
    spec = mio.SynthSpec(m=3, h=8, w=8, size=3, velocity=(0.0, 0.0), background_velocity=(-1.0, 0.0))
    _, flows, gt = mio.synth_sequence(spec)
    inside = gt.masks[0]
    np.testing.assert_array_equal(flows.forward[0][inside], np.zeros((inside.sum(), 2)))
    np.testing.assert_array_equal(flows.forward[0][~inside], np.tile([-1.0, 0.0], ((~inside).sum(), 1)))


def test_synth_deterministic():
    spec = mio.desk_spec(4)
    a, b = mio.synth_sequence(spec), mio.synth_sequence(spec)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].forward.tobytes() == b[1].forward.tobytes()
    assert a[1].backward.tobytes() == b[1].backward.tobytes()
    assert a[2].masks.tobytes() == b[2].masks.tobytes()


def test_synth_errors():
    with pytest.raises(ValueError):
        mio.synth_sequence(mio.SynthSpec(m=3, h=8, w=8, size=9))
    with pytest.raises(ValueError):
        mio.synth_sequence(mio.SynthSpec(m=1, h=8, w=8, size=2))


@pytest.mark.parametrize("seed", range(6))
def test_synth_mask_follows_forward_flow(seed):
    video, flows, gt = mio.synth_sequence(mio.desk_spec(seed))
    h, w = video.h, video.w
    for t in range(video.m - 1):
        ys, xs = np.nonzero(gt.masks[t])
        d = flows.forward[t][ys, xs]
        moved = np.zeros((h, w), bool)
        moved[(ys + d[:, 1]).astype(int), (xs + d[:, 0]).astype(int)] = True
        np.testing.assert_array_equal(moved, gt.masks[t + 1])


@pytest.mark.parametrize("seed", range(6))
def test_synth_forward_backward_compose_to_identity(seed):
    # exact where the pixel is visible in both frames (not occluded or disoccluded)
    video, flows, gt = mio.synth_sequence(mio.desk_spec(seed))
    h, w = video.h, video.w
    ys, xs = np.mgrid[0:h, 0:w]
    for t in range(video.m - 1):
        f = flows.forward[t]
        ty, tx = ys + f[..., 1], xs + f[..., 0]
        inb = (ty >= 0) & (ty <= h - 1) & (tx >= 0) & (tx <= w - 1)
        iy, ix = round_half_away(ty).astype(int).clip(0, h - 1), round_half_away(tx).astype(int).clip(0, w - 1)
        same_layer = gt.masks[t] == gt.masks[t + 1][iy, ix]
        b = flows.backward[t][iy, ix]
        ok = inb & same_layer
        np.testing.assert_array_equal((ty + b[..., 1])[ok], ys[ok])
        np.testing.assert_array_equal((tx + b[..., 0])[ok], xs[ok])
        assert ok.mean() > 0.6


def test_write_sequence_layout(tmp_path):
    video, flows, gt = mio.synth_sequence(mio.SynthSpec(m=5, h=8, w=8, size=3))
    mio.write_sequence(tmp_path, video, flows, gt)
    assert len(mio.list_dir(tmp_path / "frames", "ppm")) == 5
    assert len(mio.list_dir(tmp_path / "flow_fwd", "flo")) == 4
    assert len(mio.list_dir(tmp_path / "flow_bwd", "flo")) == 4
    assert len(mio.list_dir(tmp_path / "gt", "pgm")) == 5
    back = mio.read_frames(mio.list_dir(tmp_path / "frames", "ppm"))
    assert np.abs(back.data - video.data).max() <= 1 / 510 + 1e-15
    fs = mio.read_flow_set(mio.list_dir(tmp_path / "flow_fwd", "flo"), mio.list_dir(tmp_path / "flow_bwd", "flo"))
    np.testing.assert_array_equal(fs.forward, flows.forward)


def test_ground_truth_box_validation():
    with pytest.raises(ValueError):
        mio.GroundTruth(boxes=[(3, 0, 1, 2)])
    with pytest.raises(ValueError):
        mio.GroundTruth(masks=np.zeros((1, 4, 4)), boxes=[(0, 0, 4, 1)])
