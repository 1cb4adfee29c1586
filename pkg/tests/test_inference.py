import numpy as np
import pytest

from mvdiffuse.errors import ConfigError
from mvdiffuse.imgio import dequantize8, load_image, quantize8
from mvdiffuse.inference import save_sequence, translate_sequence, \
    window_indices
from mvdiffuse.network import Generator, concat_views, split_views


class _IdentityGenerator:
    def __call__(self, t):
        return t


class _NegatingGenerator:
    def __call__(self, t):
        import mvdiffuse.grad as grad
        return grad.mul_scalar(t, -1.0)


WINDOW_CASES = {
    1: [(0, 0, 0)],
    2: [(0, 0, 1), (0, 1, 1)],
    3: [(0, 0, 1), (0, 1, 2), (1, 2, 2)],
    5: [(0, 0, 1), (0, 1, 2), (1, 2, 3), (2, 3, 4), (3, 4, 4)],
}


def test_window_indices_frozen():
    for n, want in WINDOW_CASES.items():
        assert window_indices(n) == want
    assert len(window_indices(11)) == 11


def test_window_indices_rejects_empty():
    with pytest.raises(ConfigError, match="at least one"):
        window_indices(0)


def test_identity_generator_passthrough(rng):
    views = [rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
             for _ in range(4)]
    out = translate_sequence(_IdentityGenerator(), views)
    assert len(out) == 4
    for i in range(4):
        np.testing.assert_allclose(out[i], views[i], atol=1e-6)


def test_middle_third_only(rng):
    # a generator that sees the whole window still only contributes the
    # middle view to the output; neighbours affect nothing directly
    views = [np.full((8, 8, 3), i / 5.0, dtype=np.float32) for i in range(5)]
    out = translate_sequence(_NegatingGenerator(), views)
    for i in range(5):
        np.testing.assert_allclose(out[i], -views[i], atol=1e-6)


@pytest.mark.parametrize("n", [1, 2, 4, 11])
def test_length_preserved(rng, n):
    views = [rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
             for _ in range(n)]
    out = translate_sequence(_IdentityGenerator(), views)
    assert len(out) == n
    assert all(v.shape == (16, 16, 3) for v in out)


def test_shape_mismatch_rejected(rng):
    views = [np.zeros((16, 16, 3), dtype=np.float32),
             np.zeros((16, 32, 3), dtype=np.float32)]
    with pytest.raises(ConfigError, match="view 1"):
        translate_sequence(_IdentityGenerator(), views)


def test_real_generator_sequence(rng):
    gen = Generator(3, 3, 4, 4, np.random.default_rng(3))
    views = [rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
             for _ in range(3)]
    out = translate_sequence(gen, views)
    assert len(out) == 3
    for v in out:
        assert v.shape == (16, 16, 3)
        assert v.min() >= -1.0 and v.max() <= 1.0  # tanh range
    # windows differ, so outputs for different views differ
    assert not np.allclose(out[0], out[1])


def test_real_generator_matches_manual_window(rng):
    gen = Generator(3, 3, 4, 4, np.random.default_rng(3))
    views = [rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
             for _ in range(3)]
    out = translate_sequence(gen, views)
    import mvdiffuse.grad as grad
    strip = grad.Tensor(concat_views([views[0], views[1], views[2]]),
                        requires_grad=False)
    manual = split_views(gen(strip).data, 3)[1]
    np.testing.assert_array_equal(out[1], manual)


def test_save_sequence_naming(tmp_path, rng):
    views = [rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
             for _ in range(12)]
    paths = save_sequence(views, tmp_path / "out")
    assert [p.name for p in paths[:2]] == ["translated_000.png",
                                           "translated_001.png"]
    assert paths[11].name == "translated_011.png"
    assert all(p.exists() for p in paths)


def test_save_load_error_within_quantization_step(tmp_path, rng):
    views = [rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)]
    paths = save_sequence(views, tmp_path / "out")
    back = load_image(paths[0])
    assert np.abs(back - views[0]).max() <= 1.0 / 255.0 + 1e-7
    # and the written file is exactly the quantized image
    np.testing.assert_array_equal(back, dequantize8(quantize8(views[0])))
