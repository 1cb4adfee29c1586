"""Sphere-traced renderer for the procedural scenes.

Each pixel gets four stratified samples; rays are clipped against the
shape's bounding sphere and marched by the kernel backend. The glossy
and diffuse variants of a view are shaded from one identical set of
hits, shadows and sky samples, so geometry and background agree exactly
between the two domains and the coverage mask is shared.

Shading is Blinn-Phong with hard shadows: the diffuse variant is the
same formula evaluated with white albedo and zero specular strength.
Output images are gamma-encoded and scaled to [-1, 1].
"""

import math

import numpy as np

from .. import kernels
from .camera import camera_rays

GAMMA = 1.0 / 2.2

# Stratified sub-pixel sample offsets relative to the pixel corner.
AA_OFFSETS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))
# A pixel belongs to the object mask when at least half its samples hit.
MASK_MIN_HITS = 2

NORMAL_EPS = 1e-5
SHADOW_EPS = 3e-3
WHITE = np.ones(3)


def bound_clip(origins, dirs, radius):
    """Entry/exit parameters of rays against the bounding sphere.

    Rays that miss the sphere get t0 == t1 == 0 (the marcher treats
    them as immediate misses).
    """
    b = np.einsum("ij,ij->i", origins, dirs)
    c = np.einsum("ij,ij->i", origins, origins) - radius * radius
    disc = b * b - c
    ok = disc > 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = np.where(ok, -b - sq, 0.0)
    t1 = np.where(ok, -b + sq, 0.0)
    t0 = np.maximum(t0, 1e-4)
    bad = t1 <= t0
    t0 = np.where(bad, 0.0, t0)
    t1 = np.where(bad, 0.0, t1)
    return t0, t1


def trace(scene, origins, dirs):
    """March rays against the scene shape. Returns (t, hit)."""
    t0, t1 = bound_clip(origins, dirs, scene.bound_radius)
    return kernels.raymarch(origins, dirs, scene.shape_code,
                            scene.shape_params, t0, t1)


def surface_normals(scene, points):
    """Outward normals by central differences of the implicit field."""
    p = np.asarray(points, dtype=np.float64)
    g = np.empty_like(p)
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = NORMAL_EPS
        fp = kernels.implicit_value(p + dp, scene.shape_code, scene.shape_params)
        fm = kernels.implicit_value(p - dp, scene.shape_code, scene.shape_params)
        g[:, k] = fp - fm
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.maximum(n, 1e-12)


def sky_color(scene, dirs):
    """Three-band vertical gradient; direction-only, so view-consistent."""
    t = np.clip((dirs[:, 1] + 1.0) * 0.5, 0.0, 1.0)
    lo, mid, hi = scene.sky_colors
    low = t < 0.5
    a = (t * 2.0)[:, None]
    b = ((t - 0.5) * 2.0)[:, None]
    return np.where(low[:, None], lo * (1.0 - a) + mid * a,
                    mid * (1.0 - b) + hi * b)


def _light_shadow_mask(scene, p, n, ldir, ldist):
    """True where the path toward the light is unobstructed."""
    origins = p + n * SHADOW_EPS
    t0, t1 = bound_clip(origins, ldir, scene.bound_radius)
    t1 = np.minimum(t1, ldist)
    _, occluded = kernels.raymarch(origins, ldir, scene.shape_code,
                                   scene.shape_params, t0, t1)
    return ~occluded


def surface_albedo(scene, p):
    """Glossy-domain albedo: base/accent blend driven by direction noise.

    The texture is a function of the surface point's direction from the
    origin, so it is attached to the object and consistent across views.
    """
    d = p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), 1e-12)
    prm = scene.texture_params
    nlobe = len(prm) // 5
    s = np.zeros(p.shape[0])
    for k in range(nlobe):
        ux, uy, uz, freq, phase = prm[5 * k:5 * k + 5]
        s += np.sin(freq * (d @ np.array([ux, uy, uz])) + phase)
    # 1/sqrt(n) keeps the pattern contrast independent of lobe count
    s /= math.sqrt(nlobe)
    w = np.clip(0.5 + 0.9 * scene.texture_amp * s, 0.0, 1.0)[:, None]
    return scene.base_color * (1.0 - w) + scene.accent_color * w


def _shade_both(scene, p, n, view):
    """Glossy and diffuse radiance for hit points, sharing shadow rays."""
    m = p.shape[0]
    albedo = surface_albedo(scene, p)
    glossy = scene.ambient * albedo
    diffuse = np.tile(scene.ambient * WHITE, (m, 1))
    for light in scene.lights:
        if light.kind == "dir":
            ldir = np.broadcast_to(light.vec, p.shape)
            ldist = np.full(m, np.inf)
        else:
            delta = light.vec - p
            ldist = np.linalg.norm(delta, axis=1)
            ldir = delta / ldist[:, None]
            ldist = ldist - SHADOW_EPS
        lit = _light_shadow_mask(scene, p, n, ldir, ldist).astype(np.float64)
        ndl = np.maximum(np.einsum("ij,ij->i", n, ldir), 0.0)
        h = ldir + view
        h = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
        ndh = np.maximum(np.einsum("ij,ij->i", n, h), 0.0)
        spec = np.where(ndl > 0.0, ndh ** scene.shininess, 0.0)
        gain = (lit * ndl)[:, None] * light.color
        glossy = glossy + gain * albedo
        glossy = glossy + (lit * spec * scene.specular_strength)[:, None] * light.color
        diffuse += gain * WHITE
    return glossy, diffuse


def _encode(linear, h, w):
    img = linear.reshape(h, w, len(AA_OFFSETS), 3).mean(axis=2)
    img = np.clip(img, 0.0, 1.0) ** GAMMA
    return (img * 2.0 - 1.0).astype(np.float32)


def render_pair(scene, pose, resolution):
    """Render one view in both domains.

    Returns (glossy, diffuse, mask): two (H,W,3) float32 images in
    [-1, 1] and the shared (H,W) bool coverage mask.
    """
    h = w = resolution
    ys, xs = np.mgrid[0:h, 0:w]
    pix = []
    for ox, oy in AA_OFFSETS:
        pix.append(np.stack([xs - 0.5 + ox, ys - 0.5 + oy], axis=-1))
    # sample-major order: (h, w, n_samples, 2)
    pixels = np.stack(pix, axis=2).reshape(-1, 2)

    origins, dirs = camera_rays(pose, w, h, pixels)
    t, hit = trace(scene, origins, dirs)

    colors_g = sky_color(scene, dirs)
    colors_d = colors_g.copy()

    if hit.any():
        hp = origins[hit] + t[hit, None] * dirs[hit]
        n = surface_normals(scene, hp)
        view = -dirs[hit]
        g, d = _shade_both(scene, hp, n, view)
        colors_g[hit] = g
        colors_d[hit] = d

    mask = hit.reshape(h, w, len(AA_OFFSETS)).sum(axis=2) >= MASK_MIN_HITS
    return _encode(colors_g, h, w), _encode(colors_d, h, w), mask


def render_view(scene, pose, resolution, mode):
    """Single-domain convenience wrapper over render_pair."""
    g, d, _ = render_pair(scene, pose, resolution)
    return g if mode == "glossy" else d
