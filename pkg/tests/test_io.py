import numpy as np
import pytest

from dart.io import (
    FormatError,
    load_checkpoint,
    load_precomputed,
    read_config,
    read_container,
    read_echogram,
    read_manifest,
    save_checkpoint,
    save_precomputed,
    write_container,
    write_echogram_bin,
    write_echogram_csv,
    write_manifest,
)
from dart.materials import init_np, init_p
from dart.transport import ReceiverConfig, SourceConfig


def test_container_round_trip(tmp_path, rng):
    arrays = {"a": rng.random((3, 4)), "b": np.arange(5, dtype=np.int64),
              "c": rng.random(7).astype(np.float32), "flag": np.array([True, False]),
              "empty": np.zeros((0, 3))}
    write_container(tmp_path / "x.bin", arrays)
    back = read_container(tmp_path / "x.bin")
    assert list(back) == list(arrays)
    for k, v in arrays.items():
        assert np.array_equal(back[k], np.asarray(v, dtype="u1" if v.dtype == bool else v.dtype))


def test_container_rejects_foreign_files(tmp_path):
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(FormatError):
        read_container(tmp_path / "junk")
    with pytest.raises(FormatError):
        write_container(tmp_path / "c", {"z": np.zeros(2, complex)})


def test_cache_round_trip_is_byte_identical(tmp_path, small_cube_pre):
    a, b = tmp_path / "a.dartc", tmp_path / "b.dartc"
    save_precomputed(small_cube_pre, a)
    pre = load_precomputed(a)
    save_precomputed(pre, b)
    assert a.read_bytes() == b.read_bytes()
    assert pre.patches.group_names == small_cube_pre.patches.group_names
    assert pre.visibility.nnz == small_cube_pre.visibility.nnz
    # operators are stored in single precision, which the originals already are
    assert np.array_equal(pre.visibility.vals, small_cube_pre.visibility.vals)
    assert np.array_equal(pre.delays.delay, small_cube_pre.delays.delay)


@pytest.mark.parametrize("variant", ["np", "p", "p-shared"])
def test_checkpoint_round_trip(tmp_path, rng, variant):
    from dart.geometry import build_direction_grid
    grid = build_direction_grid(2, 4)
    if variant == "np":
        m = init_np(3, grid)
    elif variant == "p":
        m = init_p(3, grid, "reflection")
    else:
        m = init_p(3, grid, "all", block=[0, 1, 0])
    for k in m.params:
        m.params[k] = m.params[k] + rng.standard_normal(m.params[k].shape)
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.variant == m.variant and back.components == m.components
    assert np.array_equal(back.block, m.block)
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k])
    assert np.array_equal(back.realize(), m.realize())


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_echogram_round_trip(tmp_path, rng, suffix):
    e = rng.random(17) * 1e-5
    path = tmp_path / f"e{suffix}"
    (write_echogram_csv if suffix == ".csv" else write_echogram_bin)(e, path)
    assert np.array_equal(read_echogram(path), e)


def test_echogram_csv_header_checked(tmp_path):
    (tmp_path / "e.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_echogram(tmp_path / "e.csv")


def test_manifest_round_trip(tmp_path):
    rows = [("p0", SourceConfig((1.0, 2.0, 0.5), (0.0, 1.0, 0.0)), ReceiverConfig((0.25, 1.5, 1.0)),
             tmp_path / "echo" / "p0.csv"),
            ("p1", SourceConfig((0.1, 0.2, 0.3)), ReceiverConfig((2.0, 2.0, 2.0)), tmp_path / "p1.csv")]
    write_manifest(rows, tmp_path / "m.txt")
    assert "echo/p0.csv" in (tmp_path / "m.txt").read_text()
    back = read_manifest(tmp_path / "m.txt", n_ray=77)
    for (i, s, r, p), (i2, s2, r2, p2) in zip(rows, back):
        assert i == i2 and p.resolve() == p2
        assert s.position == s2.position and s.orientation == s2.orientation
        assert r.position == r2.position and s2.n_ray == r2.n_ray == 77


def test_manifest_errors_name_the_line(tmp_path):
    (tmp_path / "m.txt").write_text("# comment\n\np0, 1, 2, 3\n")
    with pytest.raises(FormatError, match=":3:"):
        read_manifest(tmp_path / "m.txt")


def test_config_parsing(tmp_path):
    (tmp_path / "c.cfg").write_text("# scene\nmesh = room.obj  # trailing\n\nK=4\n")
    assert read_config(tmp_path / "c.cfg") == {"mesh": "room.obj", "K": "4"}
    (tmp_path / "bad.cfg").write_text("mesh room.obj\n")
    with pytest.raises(FormatError, match=":1:"):
        read_config(tmp_path / "bad.cfg")
    with pytest.raises(FileNotFoundError):
        read_config(tmp_path / "missing.cfg")
