"""Dataset generation and on-disk layout.

Layout under the output directory:

    manifest.json
    scenes/<scene>/glossy_<v>.png
    scenes/<scene>/diffuse_<v>.png
    corr/<scene>_<t>.jsonl

One jsonl line per correspondence: {"triplet", "p1", "p2", "p3",
"source"}. Triplets with fewer than ``min_corr`` records are left out
of the manifest entirely. Regeneration with the same config and seed is
byte-identical; nothing in the tree carries a timestamp.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from ..correspond import MIN_TRIPLET_CORRS
from ..errors import ConfigError, DataError
from ..imgio import dequantize8, load_image, quantize8, save_image
from .camera import sample_camera_arc
from .correspond_gt import ground_truth_correspondences
from .render import render_pair
from .scene import STREAM_CAMERA, sample_scene, scene_rng

MANIFEST_NAME = "manifest.json"
FAILURE_MARKER = "GENERATION_FAILED"
MANIFEST_VERSION = 1


def worker_threads():
    """Worker count for scene-level parallelism, from MVC_THREADS."""
    raw = os.environ.get("MVC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MVC_THREADS must be an integer, got {raw!r}")
    return max(1, n)


@dataclass
class DatasetConfig:
    n_scenes: int = 20
    resolution: int = 64
    n_views: int = 5
    seed: int = 0
    min_corr: int = MIN_TRIPLET_CORRS
    patch_size: int = 0  # 0 means resolution // 2

    def validate(self):
        if self.n_scenes < 1:
            raise ConfigError(f"n_scenes must be >= 1, got {self.n_scenes}")
        if self.n_views < 3:
            raise ConfigError(f"n_views must be >= 3, got {self.n_views}")
        if self.resolution < 32 or self.resolution & (self.resolution - 1):
            raise ConfigError(
                f"resolution must be a power of two >= 32, got {self.resolution}")
        if self.patch_size == 0:
            self.patch_size = self.resolution // 2
        if self.patch_size < 4 or self.patch_size > self.resolution:
            raise ConfigError(f"patch_size out of range: {self.patch_size}")
        if self.min_corr < 1:
            raise ConfigError(f"min_corr must be >= 1, got {self.min_corr}")
        return self


def config_hash(cfg_dict):
    blob = json.dumps(cfg_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def scene_name(scene_id):
    return f"{scene_id:04d}"


def corr_rel_path(scene_id, triplet):
    return f"corr/{scene_name(scene_id)}_{triplet}.jsonl"


def _corr_record(triplet, corr):
    return {
        "triplet": triplet,
        "p1": [float(corr.p1[0]), float(corr.p1[1])],
        "p2": [float(corr.p2[0]), float(corr.p2[1])],
        "p3": [float(corr.p3[0]), float(corr.p3[1])],
        "source": corr.source,
    }


def write_corr_file(path, triplet, corrs):
    lines = [json.dumps(_corr_record(triplet, c), sort_keys=True)
             for c in corrs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_corr_file(path):
    recs = []
    for ln, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{ln + 1}: invalid json: {e}")
        for key in ("triplet", "p1", "p2", "p3", "source"):
            if key not in rec:
                raise DataError(f"{path}:{ln + 1}: missing key {key!r}")
        recs.append(rec)
    return recs


def _generate_scene(cfg, out, scene_id):
    scene = sample_scene(cfg.seed, scene_id, n_views=cfg.n_views)
    cam_rng = scene_rng(cfg.seed, scene_id, STREAM_CAMERA)
    poses = sample_camera_arc(cam_rng, cfg.n_views,
                              bound_radius=scene.bound_radius,
                              center_azimuth=scene.light_azimuth)

    sdir = out / "scenes" / scene_name(scene_id)
    sdir.mkdir(parents=True, exist_ok=True)
    glossy = []
    for v, pose in enumerate(poses):
        g, d, _ = render_pair(scene, pose, cfg.resolution)
        save_image(sdir / f"glossy_{v}.png", g)
        save_image(sdir / f"diffuse_{v}.png", d)
        # keep what the detector will see after the 8-bit round trip
        glossy.append(dequantize8(quantize8(g)))

    # all-or-nothing survival: a scene enters the manifest only when
    # every one of its view windows clears min_corr, so every listed
    # scene carries exactly n_views - 2 triplets
    window_corrs = []
    for t in range(cfg.n_views - 2):
        corrs = ground_truth_correspondences(
            scene, poses[t:t + 3], glossy[t:t + 3], cfg.resolution,
            cfg.patch_size)
        if len(corrs) < cfg.min_corr:
            return None
        window_corrs.append(corrs)

    triplets = []
    for t, corrs in enumerate(window_corrs):
        rel = corr_rel_path(scene_id, t)
        write_corr_file(out / rel, t, corrs)
        triplets.append({
            "triplet": t,
            "views": [t, t + 1, t + 2],
            "n_corr": len(corrs),
            "corr_file": rel,
        })
    return {
        "scene_id": scene_id,
        "dir": f"scenes/{scene_name(scene_id)}",
        "views": cfg.n_views,
        "triplets": triplets,
    }


def generate_dataset(cfg, out_dir, overwrite=False):
    """Render all scenes and write the dataset tree.

    Returns the manifest dict. On any failure a marker file is dropped
    in the output directory (partial outputs are not valid datasets)
    and the original error is re-raised.
    """
    cfg.validate()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise DataError(f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenes").mkdir(exist_ok=True)
    (out / "corr").mkdir(exist_ok=True)

    try:
        threads = worker_threads()
        ids = list(range(cfg.n_scenes))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                entries = list(pool.map(
                    lambda sid: _generate_scene(cfg, out, sid), ids))
        else:
            entries = [_generate_scene(cfg, out, sid) for sid in ids]

        cfg_dict = asdict(cfg)
        manifest = {
            "version": MANIFEST_VERSION,
            "config": cfg_dict,
            "config_hash": config_hash(cfg_dict),
            "scenes": [e for e in entries if e is not None],
        }
        (out / MANIFEST_NAME).write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return manifest
    except BaseException as e:
        (out / FAILURE_MARKER).write_text(f"{type(e).__name__}: {e}\n")
        raise


def load_manifest(root):
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no {MANIFEST_NAME} under {root}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid json: {e}")
    for key in ("version", "config", "scenes"):
        if key not in manifest:
            raise DataError(f"{path}: missing key {key!r}")
    return manifest


def view_image_path(root, scene_entry, domain, view):
    return Path(root) / scene_entry["dir"] / f"{domain}_{view}.png"


def load_view(root, scene_entry, domain, view):
    path = view_image_path(root, scene_entry, domain, view)
    if not path.exists():
        raise DataError(f"missing image {path}")
    return load_image(path)
