"""Quantitative evaluation: paired image MSE and inter-view consistency.

MSE is reported on the 8-bit [0,255] scale after quantization, the only
convention under which the customary magnitudes for this task (tens to
low hundreds) come out. Consistency is the correspondence loss averaged
over a triplet's correspondence list; ground-truth diffuse triplets
provide the reference baseline.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from . import grad
from .correspond import extract_patch
from .datagen.dataset import load_manifest, load_view, read_corr_file, \
    view_image_path
from .errors import ConfigError, MetricError
from .imgio import quantize8
from .losses import FeatureExtractor, correspondence_loss
from .network import to_nchw
from .training import load_generator
from .inference import translate_sequence

REPORT_VERSION = 1


def image_mse(pred, gt):
    """Mean squared error in 8-bit units, over pixels and channels."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    a = quantize8(pred).astype(np.float64)
    b = quantize8(gt).astype(np.float64)
    return float(np.mean((a - b) ** 2))


def interview_consistency(views, corrs, extractor, patch_size):
    """Mean correspondence loss over a triplet's correspondence list.

    views: three (H,W,3) arrays in [-1,1]; corrs: records with p1/p2/p3.
    """
    if len(views) != 3:
        raise ConfigError(f"need exactly 3 views, got {len(views)}")
    if not corrs:
        raise MetricError("no correspondences to evaluate")
    total = 0.0
    for rec in corrs:
        patches = []
        for v, key in enumerate(("p1", "p2", "p3")):
            crop = extract_patch(views[v], rec[key], patch_size)
            patches.append(grad.Tensor(to_nchw(crop), requires_grad=False))
        total += correspondence_loss(extractor, patches).item()
    return total / len(corrs)


def _checkpoint_id(path):
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
    return digest


def evaluate(dataset_dir, checkpoint, out_path=None):
    """Score a checkpoint against a generated dataset; returns the report.

    Per scene: image MSE of the raw glossy views (baseline) and of the
    translated views against the paired diffuse renders, plus the
    consistency of translated and ground-truth diffuse triplets. If the
    diffuse pairing is missing the MSE block is flagged unavailable and
    only consistency is reported.
    """
    root = Path(dataset_dir)
    manifest = load_manifest(root)
    patch = int(manifest["config"]["patch_size"])
    gen, meta = load_generator(checkpoint)
    extractor = FeatureExtractor()

    scenes_out = []
    for scene in manifest["scenes"]:
        n_views = scene["views"]
        glossy = [load_view(root, scene, "glossy", v) for v in range(n_views)]
        paired = all(view_image_path(root, scene, "diffuse", v).exists()
                     for v in range(n_views))
        translated = translate_sequence(gen, glossy)

        entry = {"scene_id": scene["scene_id"], "paired": paired}
        if paired:
            diffuse = [load_view(root, scene, "diffuse", v)
                       for v in range(n_views)]
            entry["mse_glossy"] = float(np.mean(
                [image_mse(g, d) for g, d in zip(glossy, diffuse)]))
            entry["mse_model"] = float(np.mean(
                [image_mse(t, d) for t, d in zip(translated, diffuse)]))

        cons_model, cons_gt = [], []
        for trip in scene["triplets"]:
            corrs = read_corr_file(root / trip["corr_file"])
            vs = trip["views"]
            cons_model.append(interview_consistency(
                [translated[v] for v in vs], corrs, extractor, patch))
            if paired:
                cons_gt.append(interview_consistency(
                    [load_view(root, scene, "diffuse", v) for v in vs],
                    corrs, extractor, patch))
        if cons_model:
            entry["consistency_model"] = float(np.mean(cons_model))
        if cons_gt:
            entry["consistency_diffuse_gt"] = float(np.mean(cons_gt))
        scenes_out.append(entry)

    def agg(key):
        vals = [s[key] for s in scenes_out if key in s]
        return float(np.mean(vals)) if vals else None

    all_paired = all(s["paired"] for s in scenes_out)
    report = {
        "report_version": REPORT_VERSION,
        "dataset_config_hash": manifest.get("config_hash"),
        "checkpoint": {
            "path": str(checkpoint),
            "id": _checkpoint_id(checkpoint),
            "iteration": meta.get("iteration"),
        },
        "paired": all_paired,
        "mse_available": all_paired,
        "aggregate": {
            "mse_glossy": agg("mse_glossy"),
            "mse_model": agg("mse_model"),
            "consistency_model": agg("consistency_model"),
            "consistency_diffuse_gt": agg("consistency_diffuse_gt"),
        },
        "scenes": scenes_out,
    }
    if out_path is not None:
        Path(out_path).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
