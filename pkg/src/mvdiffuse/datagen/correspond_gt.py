"""Geometry-verified correspondences for rendered triplets.

Anchors are feature detections in the middle view, so every record sits
at a point the detector can actually find. Each anchor is lifted to 3D
by ray casting, checked for visibility in both side views by casting
the reprojected ray back at the surface, and kept only when all three
projections stay clear of the image border.
"""

import math

import numpy as np

from ..correspond import Correspondence, detect_features, within_border
from .camera import camera_rays, project_points
from .render import trace

NMS_MIN_SEPARATION = 2.5
VISIBILITY_TOL_PX = 1.0
SIDE_DETECT_TOL_PX = 2.0
MAX_GT_CORRS = 48


def _nms(feats, min_sep):
    """Greedy spatial suppression, strongest response first."""
    order = sorted(feats, key=lambda f: -f.response)
    kept = []
    for f in order:
        ok = True
        for g in kept:
            if (f.x - g.x) ** 2 + (f.y - g.y) ** 2 < min_sep * min_sep:
                ok = False
                break
        if ok:
            kept.append(f)
    return kept


def _lift(scene, pose, pts, width, height):
    """Ray cast image points to surface points; returns (P, hit)."""
    origins, dirs = camera_rays(pose, width, height, pts)
    t, hit = trace(scene, origins, dirs)
    return origins + t[:, None] * dirs, hit


def _pixel_world_size(pose, depth, height):
    return depth * 2.0 * math.tan(math.radians(pose.fov_y) * 0.5) / height


def _visible(scene, pose, points, width, height):
    """True where a surface point is what this camera actually sees."""
    pix, depth = project_points(pose, points, width, height)
    ok = depth > 0
    inside = ((pix[:, 0] > -0.5) & (pix[:, 0] < width - 0.5)
              & (pix[:, 1] > -0.5) & (pix[:, 1] < height - 0.5))
    ok &= inside
    vis = np.zeros(points.shape[0], dtype=bool)
    if ok.any():
        idx = np.nonzero(ok)[0]
        hit_p, hit = _lift(scene, pose, pix[idx], width, height)
        tol = VISIBILITY_TOL_PX * _pixel_world_size(pose, depth[idx], height)
        close = np.linalg.norm(hit_p - points[idx], axis=1) <= tol
        vis[idx] = hit & close
    return vis, pix


def _detections_near(feats, point, tol):
    if not feats:
        return False
    pts = np.array([[f.x, f.y] for f in feats])
    return bool(np.min(np.linalg.norm(pts - point, axis=1)) <= tol)


def ground_truth_correspondences(scene, poses, images, resolution,
                                 patch_size, max_corrs=MAX_GT_CORRS):
    """Verified correspondences for one view triplet.

    poses/images: the three CameraPose and images of the triplet in
    view order (the image domain the matcher will later see). A record
    survives only if its anchor lifts to a surface point that is
    geometrically visible in both side views and the detector also
    fires within SIDE_DETECT_TOL_PX of both side projections, so every
    record is matchable in principle. Returns records (source "gt")
    sorted by middle-view position.
    """
    h = w = resolution
    margin = patch_size // 2
    feats = detect_features(images[1])
    feats = [f for f in feats if within_border((f.x, f.y), h, w, margin)]
    feats = _nms(feats, NMS_MIN_SEPARATION)
    if not feats:
        return []

    side_feats = (detect_features(images[0]), detect_features(images[2]))

    pts = np.array([[f.x, f.y] for f in feats])
    surf, hit = _lift(scene, poses[1], pts, w, h)
    keep = np.nonzero(hit)[0]
    if keep.size == 0:
        return []
    surf = surf[keep]
    feats = [feats[i] for i in keep]

    vis1, pix1 = _visible(scene, poses[0], surf, w, h)
    vis3, pix3 = _visible(scene, poses[2], surf, w, h)
    pix2, _ = project_points(poses[1], surf, w, h)

    out = []
    for i in range(surf.shape[0]):
        if not (vis1[i] and vis3[i]):
            continue
        if not (within_border(pix1[i], h, w, margin)
                and within_border(pix2[i], h, w, margin)
                and within_border(pix3[i], h, w, margin)):
            continue
        if not (_detections_near(side_feats[0], pix1[i], SIDE_DETECT_TOL_PX)
                and _detections_near(side_feats[1], pix3[i], SIDE_DETECT_TOL_PX)):
            continue
        out.append((feats[i].response,
                    Correspondence(p1=pix1[i], p2=pix2[i], p3=pix3[i],
                                   score=0.0, source="gt")))
    out.sort(key=lambda t: -t[0])
    corrs = [c for _, c in out[:max_corrs]]
    corrs.sort(key=lambda c: (c.p2[1], c.p2[0]))
    return corrs
