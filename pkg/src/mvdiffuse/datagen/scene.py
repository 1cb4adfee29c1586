"""Procedural scene sampling.

A scene is one implicit shape at the origin, a small set of lights, a
material and a gradient sky. Everything is drawn from a seeded stream
that depends only on (master_seed, scene_id), so regeneration is exact.
"""

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..kernels.numpy_ops import (
    SHAPE_BUMPY_SPHERE,
    SHAPE_SPHERE,
    SHAPE_SUPERELLIPSOID,
    SHAPE_TORUS,
)

SHAPE_CODES = {
    "sphere": SHAPE_SPHERE,
    "torus": SHAPE_TORUS,
    "superellipsoid": SHAPE_SUPERELLIPSOID,
    "bumpy_sphere": SHAPE_BUMPY_SPHERE,
}

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Default mix favours geometry with trackable surface detail.
DEFAULT_SHAPE_MIX = (
    ("bumpy_sphere", 0.45),
    ("superellipsoid", 0.30),
    ("torus", 0.25),
)

BUMP_LOBES = 4
TEXTURE_LOBES = 12

# Seed stream tags: one PCG stream per concern so adding draws to one
# stage never shifts another.
STREAM_SCENE = 0
STREAM_CAMERA = 1
STREAM_CORR = 2


def scene_rng(master_seed, scene_id, stream):
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((master_seed, scene_id, stream)))
    )


@dataclass
class Light:
    kind: str  # "dir" or "point"
    vec: np.ndarray  # unit direction toward the light, or position
    color: np.ndarray


@dataclass
class SceneSpec:
    scene_id: int
    shape_code: int
    shape_params: np.ndarray
    bound_radius: float
    light_azimuth: float
    base_color: np.ndarray
    accent_color: np.ndarray
    texture_amp: float
    texture_params: np.ndarray  # (ux,uy,uz,freq,phase) per lobe
    specular_strength: float
    shininess: float
    ambient: np.ndarray
    lights: list
    sky_colors: np.ndarray  # (3,3): bottom, horizon, top
    n_views: int = 5


def _unit(v):
    return v / np.linalg.norm(v)


def _hemisphere_dir(rng, center_az_deg, spread_deg=50.0,
                    elev_lo=25.0, elev_hi=60.0):
    el = math.radians(rng.uniform(elev_lo, elev_hi))
    az = math.radians(center_az_deg + rng.uniform(-spread_deg, spread_deg))
    return np.array([
        math.cos(el) * math.sin(az),
        math.sin(el),
        math.cos(el) * math.cos(az),
    ])


def _superellipsoid_bound(a, b, c, e1, e2, n_dirs=512):
    """Tight bounding-sphere radius via bisection of the implicit along a
    Fibonacci fan of directions.  The box-corner radius sqrt(a^2+b^2+c^2)
    is a valid cap but exact only in the boxy limit; using it directly
    makes rounded shapes frame far smaller than intended.

    The fan alone misses the poles and the box-corner directions, where
    the surface radius actually peaks, so those 26 canonical directions
    are appended explicitly; with them the 2% pad makes a true bound
    over the sampled exponent range."""
    idx = np.arange(n_dirs, dtype=np.float64)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * idx
    z = 1.0 - 2.0 * (idx + 0.5) / n_dirs
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.stack([s * np.cos(phi), z, s * np.sin(phi)], axis=1)

    canon = [v for v in
             ((i, j, k) for i in (-a, 0, a) for j in (-b, 0, b)
              for k in (-c, 0, c))
             if any(v)]
    canon = np.array(canon, dtype=np.float64)
    canon /= np.linalg.norm(canon, axis=1, keepdims=True)
    dirs = np.concatenate([dirs, canon], axis=0)
    n_all = len(dirs)

    def f_of(r):
        p = dirs * r[:, None]
        xa = np.abs(p[:, 0] / a) ** (2.0 / e2)
        yb = np.abs(p[:, 1] / b) ** (2.0 / e2)
        zc = np.abs(p[:, 2] / c) ** (2.0 / e1)
        return (xa + yb) ** (e2 / e1) + zc

    lo = np.full(n_all, 1e-6)
    hi = np.full(n_all, math.sqrt(a * a + b * b + c * c))
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        inside = f_of(mid) < 1.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return float(hi.max()) * 1.02


def _sample_shape(rng, kind):
    if kind == "sphere":
        radius = rng.uniform(0.7, 1.0)
        return SHAPE_CODES[kind], np.array([radius]), radius
    if kind == "torus":
        rmaj = rng.uniform(0.6, 0.85)
        rmin = rng.uniform(0.18, 0.30)
        return SHAPE_CODES[kind], np.array([rmaj, rmin]), rmaj + rmin
    if kind == "superellipsoid":
        a = rng.uniform(0.5, 0.9)
        b = rng.uniform(0.5, 0.9)
        c = rng.uniform(0.5, 0.9)
        e1 = rng.uniform(0.6, 1.6)
        e2 = rng.uniform(0.6, 1.6)
        bound = _superellipsoid_bound(a, b, c, e1, e2)
        return SHAPE_CODES[kind], np.array([a, b, c, e1, e2]), bound
    if kind == "bumpy_sphere":
        radius = rng.uniform(0.7, 1.0)
        # keep amp*freq below ~0.7 so the march safety factor stays valid
        amp = rng.uniform(0.04, 0.07)
        params = [radius, amp, float(BUMP_LOBES)]
        for _ in range(BUMP_LOBES):
            u = _unit(rng.normal(size=3))
            freq = rng.uniform(5.0, 10.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            params.extend([u[0], u[1], u[2], freq, phase])
        bound = radius * (1.0 + amp) + 0.02
        return SHAPE_CODES[kind], np.array(params), bound
    raise ConfigError(f"unknown shape kind {kind!r}")


def _pick_kind(rng, mix):
    names = [m[0] for m in mix]
    weights = np.array([m[1] for m in mix], dtype=np.float64)
    weights = weights / weights.sum()
    return names[int(rng.choice(len(names), p=weights))]


def sample_scene(master_seed, scene_id, n_views=5, shape_mix=DEFAULT_SHAPE_MIX):
    """Draw a full scene description for (master_seed, scene_id)."""
    rng = scene_rng(master_seed, scene_id, STREAM_SCENE)

    kind = _pick_kind(rng, shape_mix)
    code, params, bound = _sample_shape(rng, kind)

    hue = rng.uniform(0.0, 1.0)
    sat = rng.uniform(0.4, 0.85)
    val = rng.uniform(0.55, 0.9)
    base_color = np.array(colorsys.hsv_to_rgb(hue, sat, val))

    # accent colour with guaranteed luminance contrast for the texture
    luma = np.array(GRAY_WEIGHTS)
    hue2 = (hue + rng.uniform(0.07, 0.2) * (1 if rng.uniform() < 0.5 else -1)) % 1.0
    sat2 = rng.uniform(0.4, 0.85)
    accent_color = base_color
    for _ in range(16):
        if val > 0.65:
            val2 = np.clip(val - rng.uniform(0.35, 0.5), 0.15, 0.95)
        else:
            val2 = np.clip(val + rng.uniform(0.35, 0.5), 0.15, 0.95)
        accent_color = np.array(colorsys.hsv_to_rgb(hue2, sat2, float(val2)))
        if abs(float((accent_color - base_color) @ luma)) >= 0.25:
            break
        sat2 = rng.uniform(0.4, 0.85)

    # lobe frequencies sized so the albedo pattern lands at a few pixels
    # per period in frame, where the detector responds best
    texture_amp = rng.uniform(0.8, 1.0)
    tex = []
    for _ in range(TEXTURE_LOBES):
        u = _unit(rng.normal(size=3))
        tex.extend([u[0], u[1], u[2], rng.uniform(8.0, 36.0),
                    rng.uniform(0.0, 2.0 * math.pi)])
    texture_params = np.array(tex)

    specular_strength = rng.uniform(0.4, 0.8)
    roughness = rng.uniform(0.06, 0.18)
    shininess = 2.0 / (roughness * roughness) - 2.0

    # lights cluster around an anchor azimuth that the camera arc also
    # brackets, so the photographed side of the object is the lit side
    light_azimuth = rng.uniform(0.0, 360.0)
    n_lights = int(rng.integers(1, 4))
    raw = rng.uniform(0.5, 1.0, size=n_lights)
    total = rng.uniform(0.85, 1.1)
    scale = total / raw.sum()
    lights = []
    for i in range(n_lights):
        kind_l = "dir" if rng.uniform() < 0.7 else "point"
        d = _hemisphere_dir(rng, light_azimuth)
        tint = 1.0 + rng.uniform(-0.08, 0.08, size=3)
        color = raw[i] * scale * tint
        if kind_l == "point":
            lights.append(Light("point", d * rng.uniform(3.0, 4.5), color))
        else:
            lights.append(Light("dir", d, color))

    ambient = rng.uniform(0.14, 0.22) * (1.0 + rng.uniform(-0.05, 0.05, size=3))

    sky_hue = rng.uniform(0.0, 1.0)
    sky_sat = rng.uniform(0.10, 0.35)
    vals = (rng.uniform(0.20, 0.40), rng.uniform(0.40, 0.60),
            rng.uniform(0.55, 0.80))
    sky = np.array([
        colorsys.hsv_to_rgb(sky_hue, sky_sat, vals[0]),
        colorsys.hsv_to_rgb((sky_hue + rng.uniform(-0.06, 0.06)) % 1.0,
                            sky_sat * 0.8, vals[1]),
        colorsys.hsv_to_rgb((sky_hue + rng.uniform(-0.06, 0.06)) % 1.0,
                            sky_sat * 0.6, vals[2]),
    ])

    return SceneSpec(
        scene_id=scene_id,
        shape_code=code,
        shape_params=params,
        bound_radius=bound,
        light_azimuth=light_azimuth,
        base_color=base_color,
        accent_color=accent_color,
        texture_amp=texture_amp,
        texture_params=texture_params,
        specular_strength=specular_strength,
        shininess=shininess,
        ambient=ambient,
        lights=lights,
        sky_colors=sky,
    )
