"""Dataset generation: manifest contract, determinism, geometric oracles.

The reprojection oracle is the load-bearing check here: every stored
correspondence is lifted to 3D through the middle camera and re-projected
into the side views, which must land within half a pixel of the stored
points.
"""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from mvdiffuse.datagen import dataset as ds
from mvdiffuse.datagen.camera import CameraPose, camera_rays, project_points, \
    sample_camera_arc
from mvdiffuse.datagen.correspond_gt import ground_truth_correspondences
from mvdiffuse.datagen.render import MASK_MIN_HITS, render_pair, trace
from mvdiffuse.datagen.scene import STREAM_CAMERA, _superellipsoid_bound, \
    sample_scene, scene_rng
from mvdiffuse.errors import ConfigError, DataError
from mvdiffuse.imgio import dequantize8, quantize8

from conftest import TINY_SCENES, TINY_SEED


def _scene_and_poses(cfg_seed, scene_id, n_views=5):
    scene = sample_scene(cfg_seed, scene_id, n_views=n_views)
    cam_rng = scene_rng(cfg_seed, scene_id, STREAM_CAMERA)
    poses = sample_camera_arc(cam_rng, n_views,
                              bound_radius=scene.bound_radius,
                              center_azimuth=scene.light_azimuth)
    return scene, poses


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# -- manifest contract --------------------------------------------------------

def test_manifest_structure(tiny_dataset):
    root, manifest = tiny_dataset
    assert manifest["version"] == 1
    assert manifest["config"]["seed"] == TINY_SEED
    assert manifest["config"]["n_scenes"] == TINY_SCENES
    assert len(manifest["config_hash"]) == 16

    n_views = manifest["config"]["n_views"]
    for entry in manifest["scenes"]:
        assert len(entry["triplets"]) == n_views - 2
        for t, trip in enumerate(entry["triplets"]):
            assert trip["triplet"] == t
            assert trip["views"] == [t, t + 1, t + 2]
            assert trip["n_corr"] >= manifest["config"]["min_corr"]
            recs = ds.read_corr_file(root / trip["corr_file"])
            assert len(recs) == trip["n_corr"]
            assert all(r["triplet"] == t for r in recs)
        for v in range(n_views):
            assert (root / entry["dir"] / f"glossy_{v}.png").exists()
            assert (root / entry["dir"] / f"diffuse_{v}.png").exists()


def test_manifest_loader_round_trip(tiny_dataset):
    root, manifest = tiny_dataset
    assert ds.load_manifest(root) == manifest


def test_load_manifest_missing(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        ds.load_manifest(tmp_path)


# -- renderer -----------------------------------------------------------------

def test_render_pair_deterministic():
    scene, poses = _scene_and_poses(TINY_SEED, 0)
    g1, d1, m1 = render_pair(scene, poses[0], 64)
    g2, d2, m2 = render_pair(scene, poses[0], 64)
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(d1, d2)
    np.testing.assert_array_equal(m1, m2)
    assert g1.shape == d1.shape == (64, 64, 3)
    assert m1.shape == (64, 64) and m1.dtype == bool


def test_domains_share_sky_differ_on_object():
    scene, poses = _scene_and_poses(TINY_SEED, 0)
    g, d, m = render_pair(scene, poses[2], 64)
    # the arc frames the object at 60-70% fill, so corners are sky
    for y, x in ((0, 0), (0, 63), (63, 0), (63, 63)):
        assert not m[y, x]
        np.testing.assert_array_equal(g[y, x], d[y, x])
    assert 0.05 < m.mean() < 0.95
    assert np.abs(g[m] - d[m]).max() > 0.05  # specular term visible somewhere


def test_mask_matches_primary_rays():
    scene, poses = _scene_and_poses(TINY_SEED, 1)
    res = 64
    g, d, m = render_pair(scene, poses[0], res)
    yy, xx = np.mgrid[0:res, 0:res]
    ctr = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    hits = np.zeros(res * res, dtype=np.int64)
    # 4-sample AA grid, same offsets the renderer uses
    for ox, oy in ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)):
        o, dirs = camera_rays(poses[0], res, res, ctr + [ox - 0.5, oy - 0.5])
        _, hit = trace(scene, o, dirs)
        hits += hit
    np.testing.assert_array_equal(m.ravel(), hits >= MASK_MIN_HITS)


# -- geometric oracles --------------------------------------------------------

def test_project_points_inverts_camera_rays(rng):
    pose = CameraPose(position=np.array([1.3, 2.0, 2.1]), fov_y=35.0)
    pix = rng.uniform(0, 64, size=(40, 2))
    origins, dirs = camera_rays(pose, 64, 64, pix)
    depths = rng.uniform(0.5, 5.0, size=40)
    pts = origins + dirs * depths[:, None]
    back, z = project_points(pose, pts, 64, 64)
    np.testing.assert_allclose(back, pix, atol=1e-9)
    assert (z > 0).all()


def test_project_points_behind_camera():
    pose = CameraPose(position=np.array([0.0, 0.0, 3.0]), fov_y=35.0)
    _, z = project_points(pose, np.array([[0.0, 0.0, 9.0]]), 64, 64)
    assert z[0] < 0


def test_arc_azimuth_strictly_increasing(rng):
    for _ in range(20):
        poses = sample_camera_arc(rng, 7)
        az = np.unwrap([math.atan2(p.position[0], p.position[2])
                        for p in poses])
        assert (np.diff(az) > 0).all()


def test_reprojection_oracle(tiny_dataset):
    root, manifest = tiny_dataset
    res = manifest["config"]["resolution"]
    for entry in manifest["scenes"]:
        scene, poses = _scene_and_poses(TINY_SEED, entry["scene_id"])
        for trip in entry["triplets"]:
            v0, v1, v2 = trip["views"]
            recs = ds.read_corr_file(root / trip["corr_file"])
            p1 = np.array([r["p1"] for r in recs])
            p2 = np.array([r["p2"] for r in recs])
            p3 = np.array([r["p3"] for r in recs])
            o, dirs = camera_rays(poses[v1], res, res, p2)
            t, hit = trace(scene, o, dirs)
            assert hit.all()
            world = o + dirs * t[:, None]
            for side, stored in ((v0, p1), (v2, p3)):
                pix, z = project_points(poses[side], world, res, res)
                assert (z > 0).all()
                err = np.hypot(*(pix - stored).T)
                assert err.max() < 0.5


def test_gt_correspondences_deterministic():
    scene, poses = _scene_and_poses(TINY_SEED, 0)
    imgs = [dequantize8(quantize8(render_pair(scene, p, 64)[0]))
            for p in poses[:3]]
    a = ground_truth_correspondences(scene, poses[:3], imgs, 64, 32)
    b = ground_truth_correspondences(scene, poses[:3], imgs, 64, 32)
    assert len(a) == len(b) > 0
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.p1, cb.p1)
        np.testing.assert_array_equal(ca.p3, cb.p3)


# -- scene sampling -----------------------------------------------------------

def test_sample_scene_deterministic():
    a = sample_scene(7, 2)
    b = sample_scene(7, 2)
    assert a.shape_code == b.shape_code
    np.testing.assert_array_equal(a.shape_params, b.shape_params)
    np.testing.assert_array_equal(a.texture_params, b.texture_params)
    assert a.bound_radius == b.bound_radius
    assert len(a.lights) == len(b.lights)
    c = sample_scene(8, 2)
    assert (c.shape_code != a.shape_code
            or not np.array_equal(c.shape_params, a.shape_params))


def test_superellipsoid_bound_contains_surface(rng):
    # probed over the ranges the sampler draws from; includes the axis
    # and box-corner directions where the radius peaks
    for _ in range(10):
        a, b, c = rng.uniform(0.5, 0.9, size=3)
        e1, e2 = rng.uniform(0.6, 1.6, size=2)
        bound = _superellipsoid_bound(a, b, c, e1, e2)
        assert bound >= max(a, b, c)
        assert bound <= 1.02 * math.sqrt(a * a + b * b + c * c) + 1e-12

        def implicit(p):
            xa = np.abs(p[:, 0] / a) ** (2.0 / e2)
            yb = np.abs(p[:, 1] / b) ** (2.0 / e2)
            zc = np.abs(p[:, 2] / c) ** (2.0 / e1)
            return (xa + yb) ** (e2 / e1) + zc

        d = rng.standard_normal((512, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d = np.concatenate([d, np.eye(3), -np.eye(3)])
        # bisect the surface radius along each direction
        lo = np.full(len(d), 1e-6)
        hi = np.full(len(d), 2.0 * bound)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            inside = implicit(d * mid[:, None]) < 1.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        assert lo.max() <= bound


# -- generation behavior ------------------------------------------------------

def test_all_or_nothing_survival(tmp_path):
    cfg = ds.DatasetConfig(n_scenes=1, resolution=64, n_views=5,
                           seed=TINY_SEED, min_corr=10_000)
    manifest = ds.generate_dataset(cfg, tmp_path / "out")
    assert manifest["scenes"] == []
    # images for the failed scene are still on disk but unlisted
    assert (tmp_path / "out" / "scenes" / ds.scene_name(0)).exists()


def test_regeneration_byte_identical(tmp_path):
    cfg = lambda: ds.DatasetConfig(n_scenes=1, resolution=64, n_views=3,
                                   seed=TINY_SEED)
    ds.generate_dataset(cfg(), tmp_path / "a")
    ds.generate_dataset(cfg(), tmp_path / "b")
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")


def test_threaded_generation_matches_serial(tmp_path, monkeypatch):
    cfg = lambda: ds.DatasetConfig(n_scenes=2, resolution=64, n_views=3,
                                   seed=TINY_SEED)
    monkeypatch.setenv("MVC_THREADS", "1")
    ds.generate_dataset(cfg(), tmp_path / "serial")
    monkeypatch.setenv("MVC_THREADS", "4")
    ds.generate_dataset(cfg(), tmp_path / "threaded")
    assert _tree_hash(tmp_path / "serial") == _tree_hash(tmp_path / "threaded")


def test_failure_marker_written(tmp_path, monkeypatch):
    def boom(scene, pose, resolution):
        raise RuntimeError("render exploded")

    monkeypatch.setattr(ds, "render_pair", boom)
    cfg = ds.DatasetConfig(n_scenes=1, resolution=64, n_views=3, seed=0)
    with pytest.raises(RuntimeError):
        ds.generate_dataset(cfg, tmp_path / "out")
    marker = tmp_path / "out" / ds.FAILURE_MARKER
    assert marker.exists()
    assert "RuntimeError" in marker.read_text()


def test_refuses_nonempty_dir(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "stale.txt").write_text("x")
    cfg = ds.DatasetConfig(n_scenes=1, resolution=64, n_views=3,
                           seed=TINY_SEED, min_corr=10_000)
    with pytest.raises(DataError, match="not empty"):
        ds.generate_dataset(cfg, out)
    ds.generate_dataset(cfg, out, overwrite=True)  # explicit opt-in


def test_config_validation():
    with pytest.raises(ConfigError, match="n_views"):
        ds.DatasetConfig(n_views=2).validate()
    with pytest.raises(ConfigError, match="resolution"):
        ds.DatasetConfig(resolution=48).validate()
    with pytest.raises(ConfigError, match="n_scenes"):
        ds.DatasetConfig(n_scenes=0).validate()
    cfg = ds.DatasetConfig(resolution=128).validate()
    assert cfg.patch_size == 64  # default is half the resolution


def test_worker_threads_env(monkeypatch):
    monkeypatch.delenv("MVC_THREADS", raising=False)
    assert ds.worker_threads() == 1
    monkeypatch.setenv("MVC_THREADS", "4")
    assert ds.worker_threads() == 4
    monkeypatch.setenv("MVC_THREADS", "0")
    assert ds.worker_threads() == 1
    monkeypatch.setenv("MVC_THREADS", "lots")
    with pytest.raises(ConfigError, match="MVC_THREADS"):
        ds.worker_threads()


# -- 8-bit image round trip ---------------------------------------------------

def test_quantize_round_trip_all_levels():
    levels = np.arange(256, dtype=np.uint8).reshape(16, 16)
    img = np.repeat(levels[:, :, None], 3, axis=2)
    np.testing.assert_array_equal(quantize8(dequantize8(img)), img)


def test_quantize_clips():
    arr = np.array([[[-2.0, 0.0, 2.0]]], dtype=np.float32)
    q = quantize8(arr)
    assert q[0, 0, 0] == 0 and q[0, 0, 2] == 255
