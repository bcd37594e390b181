import numpy as np
import pytest

from saccade import io
from saccade.data import blob_centers, gen_dataset, make_sequence, translating_blob_attention


def test_fixture_round_trip_is_bitwise(tmp_path, rng):
    for i in range(100):
        shape = (10, 32, 7, 7) if i == 0 else tuple(int(v) for v in rng.integers(1, 6, size=4))
        maps = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / f"m{i}.attn"
        io.write_fixture(path, maps)
        back = io.read_fixture(path)
        assert back.dtype == np.float32 and back.shape == shape
        assert back.tobytes() == maps.tobytes()


def test_fixture_header_layout(tmp_path):
    path = tmp_path / "a.attn"
    io.write_fixture(path, np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4))
    raw = path.read_bytes()
    assert raw[:4] == b"ATTN" and raw[4] == 1
    assert np.frombuffer(raw[5:21], "<u4").tolist() == [1, 2, 3, 4]
    assert len(raw) == 21 + 24 * 4


def test_fixture_errors_are_distinct(tmp_path):
    path = tmp_path / "a.attn"
    io.write_fixture(path, np.ones((2, 2, 3, 3), np.float32))
    raw = path.read_bytes()
    (tmp_path / "trunc").write_bytes(raw[:-4])
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "extra").write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(io.TruncatedPayloadError, match="truncated payload"):
        io.read_fixture(tmp_path / "trunc")
    with pytest.raises(io.BadMagicError, match="bad magic"):
        io.read_fixture(tmp_path / "magic")
    with pytest.raises(io.DimensionMismatchError):
        io.read_fixture(tmp_path / "extra")
    with pytest.raises(io.DimensionMismatchError):
        io.write_fixture(path, np.ones((2, 3, 3)))


def test_checkpoint_round_trip_and_magic(tmp_path, rng):
    params = rng.standard_normal(17)
    io.write_checkpoint(tmp_path / "c", "TEST", [3, 4], params)
    dims, back = io.read_checkpoint(tmp_path / "c", "TEST")
    assert dims == [3, 4] and np.array_equal(back, params)
    with pytest.raises(io.BadMagicError):
        io.read_checkpoint(tmp_path / "c", "NOPE")
    (tmp_path / "t").write_bytes((tmp_path / "c").read_bytes()[:-3])
    with pytest.raises(io.TruncatedPayloadError):
        io.read_checkpoint(tmp_path / "t", "TEST")


def test_dataset_is_deterministic():
    a = gen_dataset(6, seed=4)
    b = gen_dataset(6, seed=4)
    assert all(np.array_equal(x.frames, y.frames) and x.params == y.params for x, y in zip(a, b))
    c = gen_dataset(6, seed=5)
    assert not np.array_equal(a[0].frames, c[0].frames)


def test_sequence_independent_of_dataset_size():
    assert np.array_equal(gen_dataset(3, seed=1)[2].frames, gen_dataset(9, seed=1)[2].frames)


def test_class_balance():
    labels = [s.label for s in gen_dataset(300, classes=3, image_size=(16, 16), n_frames=2)]
    assert np.bincount(labels).tolist() == [100, 100, 100]


def test_static_blob_barely_moves():
    seq = make_sequence(7, label=2, seed=3)
    assert seq.trajectory == "static"
    centers = blob_centers(seq)
    assert centers.var(axis=0).sum() < 0.5
    # the brightest pixel agrees with the stored centre
    lum = seq.frames.mean(axis=1)
    peaks = np.array([np.unravel_index(np.argmax(f), f.shape) for f in lum])
    assert np.all(np.abs(peaks - centers) <= 2.5)


def test_moving_blobs_stay_in_frame():
    for sid in range(30):
        seq = make_sequence(sid, label=sid % 4, seed=0)
        c = blob_centers(seq)
        assert np.all(c >= 0) and np.all(c <= 47)


def test_gen_dataset_rejects_single_class():
    with pytest.raises(ValueError):
        gen_dataset(4, classes=1)


def test_translating_blob_attention_moves_one_cell():
    maps = translating_blob_attention(5, n_frames=6, channels=2, size=9, noise=0.0)
    for seq in maps:
        peaks = np.array([np.unravel_index(np.argmax(f[0]), f[0].shape) for f in seq])
        steps = np.abs(np.diff(peaks, axis=0)).sum(axis=1)
        assert np.all(steps == 1)
