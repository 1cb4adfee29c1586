import numpy as np
import pytest

from mvdiffuse.checkpoint import check_config_match, load_container, \
    save_container
from mvdiffuse.errors import ConfigError, DataError


def test_save_load_save_bit_exact(tmp_path, rng):
    tensors = {
        "w": rng.standard_normal((3, 4)).astype(np.float32),
        "b": rng.standard_normal(7),
        "n": np.array(5, dtype=np.int64),
    }
    meta = {"config": {"lr": 2e-4, "depth": 6}, "iteration": 123}
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    save_container(p1, meta, tensors)
    got_meta, got = load_container(p1)
    assert got_meta["iteration"] == 123
    assert got_meta["config"]["lr"] == 2e-4  # repr-exact float round trip
    assert got_meta["version"] == 1
    for k in tensors:
        np.testing.assert_array_equal(got[k], tensors[k])
        assert got[k].dtype == tensors[k].dtype
    save_container(p2, {k: v for k, v in got_meta.items() if k != "version"},
                   got)
    assert p1.read_bytes() == p2.read_bytes()


def test_version_mismatch_rejected(tmp_path):
    p = tmp_path / "c.npz"
    blob = np.frombuffer(b'{"version": 999}', dtype=np.uint8)
    np.savez(p, __meta__=blob)
    with pytest.raises(DataError, match="version 999"):
        load_container(p)


def test_missing_meta_rejected(tmp_path):
    p = tmp_path / "c.npz"
    np.savez(p, w=np.zeros(3))
    with pytest.raises(DataError, match="metadata"):
        load_container(p)


def test_reserved_tensor_name_rejected(tmp_path):
    with pytest.raises(ConfigError, match="reserved"):
        save_container(tmp_path / "c.npz", {}, {"__meta__": np.zeros(1)})


def test_check_config_match_names_keys():
    meta = {"config": {"lr": 1e-4, "depth": 6, "base": 8}}
    check_config_match(meta, {"lr": 1e-4, "depth": 6}, ["lr", "depth"])
    with pytest.raises(ConfigError, match="lr.*depth") as ei:
        check_config_match(meta, {"lr": 3e-4, "depth": 9}, ["lr", "depth"])
    assert "base" not in str(ei.value)
