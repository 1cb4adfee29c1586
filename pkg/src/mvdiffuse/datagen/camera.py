"""Pinhole cameras on an object-orbiting arc.

Conventions: world is y-up and cameras sit on the upper hemisphere
looking at the origin. Image coordinates are x-right, y-down with
integer coordinates at pixel centers, so the image plane spans
[-0.5, W-0.5] x [-0.5, H-0.5]. ``project_points`` is the exact inverse
of ``camera_rays`` for points along the returned rays.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

WORLD_UP = np.array([0.0, 1.0, 0.0])

DEFAULT_FOV_Y = 35.0

# Arc sampling ranges (degrees / world units).
ARC_RADIUS_RANGE = (2.2, 2.8)
ARC_ELEVATION_RANGE = (15.0, 50.0)
ARC_STEP_RANGE = (8.0, 14.0)
ARC_ELEV_JITTER = 1.5
ARC_RADIUS_JITTER_FRAC = 0.015
# Object radius as a fraction of the vertical half-frame; keeps most of
# the object inside the central patch-safe region.
ARC_FILL_RANGE = (0.60, 0.70)


@dataclass
class CameraPose:
    position: np.ndarray
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fov_y: float = DEFAULT_FOV_Y

    def basis(self):
        """Right-handed (right, up, forward) orthonormal basis."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, WORLD_UP)
        nr = np.linalg.norm(right)
        if nr < 1e-9:
            raise ConfigError("camera looks straight along world up")
        right = right / nr
        up = np.cross(right, fwd)
        return right, up, fwd


def _half_extents(pose, width, height):
    half_h = math.tan(math.radians(pose.fov_y) * 0.5)
    half_w = half_h * (width / height)
    return half_w, half_h


def camera_rays(pose, width, height, pixels):
    """Rays through continuous pixel coordinates.

    pixels: (M,2) array of (x, y) image coordinates. Returns
    (origins (M,3), dirs (M,3)) with unit directions.
    """
    px = np.asarray(pixels, dtype=np.float64)
    right, up, fwd = pose.basis()
    half_w, half_h = _half_extents(pose, width, height)
    xn = (px[:, 0] + 0.5) / width * 2.0 - 1.0
    yn = (px[:, 1] + 0.5) / height * 2.0 - 1.0
    dirs = (xn[:, None] * half_w * right
            - yn[:, None] * half_h * up
            + fwd)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    return origins, dirs


def project_points(pose, points, width, height):
    """Project world points to pixel coordinates.

    Returns (pix (M,2), depth (M,)); depth is distance along the camera
    forward axis, non-positive for points behind the camera.
    """
    p = np.asarray(points, dtype=np.float64)
    right, up, fwd = pose.basis()
    half_w, half_h = _half_extents(pose, width, height)
    v = p - pose.position
    zc = v @ fwd
    xc = v @ right
    yc = v @ up
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = (xc / zc) / half_w
        yn = (-yc / zc) / half_h
    px = (xn + 1.0) * 0.5 * width - 0.5
    py = (yn + 1.0) * 0.5 * height - 0.5
    return np.stack([px, py], axis=1), zc


def sample_camera_arc(rng, n_views, fov_y=DEFAULT_FOV_Y, bound_radius=None,
                      center_azimuth=None):
    """Sample an orbit of cameras with strictly increasing azimuth.

    Shared distance/elevation with small per-view jitter; azimuth
    advances by a random step per view. When ``bound_radius`` is given
    the distance is chosen so the object spans a fixed fraction of the
    frame; when ``center_azimuth`` is given the arc brackets it (used to
    keep the lit side of the object facing the cameras).
    """
    if bound_radius is not None:
        fill = rng.uniform(*ARC_FILL_RANGE)
        radius = bound_radius / math.tan(math.radians(fov_y) * 0.5 * fill)
    else:
        radius = rng.uniform(*ARC_RADIUS_RANGE)
    elev = rng.uniform(*ARC_ELEVATION_RANGE)
    mean_step = 0.5 * (ARC_STEP_RANGE[0] + ARC_STEP_RANGE[1])
    if center_azimuth is not None:
        azim = center_azimuth - 0.5 * (n_views - 1) * mean_step \
            + rng.uniform(-15.0, 15.0)
    else:
        azim = rng.uniform(0.0, 360.0)
    poses = []
    jit = ARC_RADIUS_JITTER_FRAC * radius
    for _ in range(n_views):
        r = radius + rng.uniform(-jit, jit)
        el = math.radians(elev + rng.uniform(-ARC_ELEV_JITTER, ARC_ELEV_JITTER))
        az = math.radians(azim)
        pos = np.array([
            r * math.cos(el) * math.sin(az),
            r * math.sin(el),
            r * math.cos(el) * math.cos(az),
        ])
        poses.append(CameraPose(position=pos, fov_y=fov_y))
        azim += rng.uniform(*ARC_STEP_RANGE)
    return poses
