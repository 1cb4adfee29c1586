"""Detector and matcher behavior on synthetic imagery.

The detector is exercised on procedurally textured images where feature
positions can be verified by construction (shift equivariance), and the
matcher gates are probed with handcrafted feature lists.
"""

import math

import numpy as np
import pytest

from mvdiffuse.correspond import (
    MATCH_DESC_MAX,
    MATCH_DISP_FRAC,
    MIN_TRIPLET_CORRS,
    Correspondence,
    Feature,
    accept_triplet_sample,
    detect_features,
    extract_patch,
    extract_patches,
    match_triplet,
    to_grayscale,
    within_border,
)
from mvdiffuse.errors import PatchBorderError


def _textured_image(rng, size=96):
    """Blurred random noise in [-1, 1], RGB. Rich in blob-like extrema."""
    from scipy import ndimage
    img = ndimage.gaussian_filter(rng.standard_normal((size, size)), 2.0)
    img = img / np.abs(img).max()
    return np.repeat(img[:, :, None], 3, axis=2).astype(np.float32)


def test_detector_deterministic(rng):
    img = _textured_image(rng)
    f1 = detect_features(img)
    f2 = detect_features(img)
    assert len(f1) == len(f2) > 10
    for a, b in zip(f1, f2):
        assert (a.x, a.y, a.scale, a.orientation) == (b.x, b.y, b.scale, b.orientation)
        np.testing.assert_array_equal(a.descriptor, b.descriptor)


def test_detector_constant_image_yields_nothing():
    img = np.zeros((64, 64, 3), dtype=np.float32)
    assert detect_features(img) == []
    assert detect_features(np.full((64, 64, 3), 0.7, dtype=np.float32)) == []


def test_detector_tiny_image_yields_nothing(rng):
    assert detect_features(_textured_image(rng, size=8)) == []


def test_descriptors_unit_norm(rng):
    feats = detect_features(_textured_image(rng))
    assert feats
    for f in feats:
        assert abs(np.linalg.norm(f.descriptor) - 1.0) < 1e-6
        assert f.descriptor.shape == (128,)


def test_detector_shift_equivariance(rng):
    """Features on an integer-shifted crop move by exactly the shift."""
    big = _textured_image(rng, size=128)
    s = 5
    a = big[20:84, 20:84]
    b = big[20 + s:84 + s, 20 + s:84 + s]  # same content, shifted view
    fa = detect_features(a)
    fb = detect_features(b)
    assert fa and fb
    pb = np.array([[f.x, f.y] for f in fb])
    recovered = 0
    interior = [f for f in fa
                if 10 <= f.x <= 54 - s and 10 <= f.y <= 54 - s]
    for f in interior:
        d = np.hypot(pb[:, 0] - (f.x - s), pb[:, 1] - (f.y - s))
        if d.min() <= 1.0:
            recovered += 1
    assert len(interior) >= 5
    assert recovered / len(interior) >= 0.8


def test_grayscale_range():
    img = np.stack([np.full((4, 4), -1.0), np.full((4, 4), 1.0),
                    np.zeros((4, 4))], axis=2)
    g = to_grayscale(img)
    assert abs(g[0, 0] - 0.587 - 0.5 * 0.114) < 1e-12


# -- matcher gates ------------------------------------------------------------

def _feat(x, y, desc):
    return Feature(x=float(x), y=float(y), scale=2.0, orientation=0.0,
                   response=1.0, descriptor=np.asarray(desc, dtype=np.float32))


def _unit(v):
    v = np.asarray(v, dtype=np.float32)
    return v / np.linalg.norm(v)


def _basis_desc(i, dim=128):
    d = np.zeros(dim, dtype=np.float32)
    d[i] = 1.0
    return d


def test_match_triplet_self_matching(rng):
    img = _textured_image(rng, size=64)
    feats = detect_features(img)
    corrs = match_triplet(feats, feats, feats, (64, 64), patch_size=16)
    assert len(corrs) >= 5
    for c in corrs:
        np.testing.assert_array_equal(c.p1, c.p2)
        np.testing.assert_array_equal(c.p2, c.p3)
        assert c.score == 0.0
        assert c.source == "feat"


def test_match_rejects_far_descriptors():
    # orthogonal unit descriptors sit at distance sqrt(2) > MATCH_DESC_MAX
    mid = [_feat(32, 32, _basis_desc(0))]
    side = [_feat(33, 32, _basis_desc(1))]
    assert math.sqrt(2) > MATCH_DESC_MAX
    assert match_triplet(side, mid, side, (64, 64), 8) == []


def test_match_displacement_gate():
    d = _basis_desc(3)
    mid = [_feat(10, 32, d)]
    near = [_feat(12, 32, d)]
    far = [_feat(10 + MATCH_DISP_FRAC * 64 + 2, 32, d)]
    assert len(match_triplet(near, mid, near, (64, 64), 8)) == 1
    assert match_triplet(far, mid, far, (64, 64), 8) == []


def test_match_ratio_test_vetoes_ambiguity():
    # two side candidates at distinct spots with near-identical
    # descriptors: no confident winner
    target = _unit([1.0] + [0.0] * 127)
    rival = _unit([1.0, 0.02] + [0.0] * 126)
    mid = [_feat(32, 32, target)]
    side = [_feat(30, 32, rival), _feat(40, 32, rival)]
    assert match_triplet(side, mid, side, (64, 64), 8) == []


def test_match_own_orientation_twin_does_not_veto():
    # a duplicate keypoint at (nearly) the same location is not a rival
    target = _basis_desc(0)
    mid = [_feat(32, 32, target)]
    side = [_feat(30, 32, target), _feat(30.5, 32, _basis_desc(1))]
    got = match_triplet(side, mid, side, (64, 64), 8)
    assert len(got) == 1
    assert got[0].p1[0] == 30.0


def test_match_requires_both_sides():
    d = _basis_desc(0)
    mid = [_feat(32, 32, d)]
    side_ok = [_feat(31, 32, d)]
    assert match_triplet(side_ok, mid, [], (64, 64), 8) == []
    assert match_triplet([], mid, side_ok, (64, 64), 8) == []


def test_match_border_margin_filters_middles():
    d = _basis_desc(0)
    side = [_feat(32, 32, d)]
    mid_edge = [_feat(2, 2, d)]  # patch of half-width 8 cannot fit
    assert match_triplet(side, mid_edge, side, (64, 64), 16) == []


def test_accept_triplet_sample_threshold():
    mk = lambda n: [Correspondence(p1=np.zeros(2), p2=np.zeros(2),
                                   p3=np.zeros(2), score=0.0)] * n
    assert not accept_triplet_sample(mk(0))
    assert not accept_triplet_sample(mk(MIN_TRIPLET_CORRS - 1))
    assert accept_triplet_sample(mk(MIN_TRIPLET_CORRS))


# -- patch cutting ------------------------------------------------------------

def test_within_border_edges():
    assert within_border((8, 8), 64, 64, 8)
    assert within_border((56, 56), 64, 64, 8)
    assert not within_border((7, 8), 64, 64, 8)
    assert not within_border((8, 57), 64, 64, 8)
    assert within_border((7.6, 8.0), 64, 64, 8)  # rounds to 8


def test_extract_patch_shape_and_centering(rng):
    img = rng.standard_normal((32, 32, 3)).astype(np.float32)
    p = extract_patch(img, (10.2, 20.4), 8)
    np.testing.assert_array_equal(p, img[16:24, 6:14])


def test_extract_patch_border_raises(rng):
    img = rng.standard_normal((32, 32, 3)).astype(np.float32)
    with pytest.raises(PatchBorderError):
        extract_patch(img, (2, 16), 8)
    with pytest.raises(PatchBorderError):
        extract_patch(img, (16, 30), 8)
    extract_patch(img, (4, 16), 8)  # exactly at the margin is fine


def test_extract_patches_maps_centers(rng):
    img = rng.standard_normal((32, 32, 3)).astype(np.float32)
    got = extract_patches(img, [(8, 8), (16, 16)], 8)
    assert len(got) == 2
    np.testing.assert_array_equal(got[1], img[12:20, 12:20])
