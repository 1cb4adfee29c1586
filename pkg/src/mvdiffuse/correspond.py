"""Scale-space feature detection and triplet matching.

A compact classic difference-of-Gaussians detector with gradient
orientation histograms and 4x4x8 descriptors. Matching anchors on the
middle view of a triplet: each middle feature is matched independently
into both side views by nearest descriptor with a ratio test, an
absolute descriptor gate and a displacement gate; a correspondence
survives only if both sides agree to all gates and sit far enough from
the image border to cut a patch around them.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .errors import PatchBorderError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

SIFT_SIGMA = 1.6
SIFT_INTERVALS = 3
SIFT_ASSUMED_BLUR = 0.5
SIFT_CONTRAST_THRESH = 0.006
SIFT_EDGE_RATIO = 10.0
SIFT_IMAGE_BORDER = 5
SIFT_MAX_REFINE = 5
SIFT_ORI_BINS = 36
SIFT_ORI_PEAK_RATIO = 0.8
SIFT_ORI_SIGMA_FACTOR = 1.5
SIFT_ORI_RADIUS_FACTOR = 3.0
SIFT_DESC_WIDTH = 4
SIFT_DESC_BINS = 8
SIFT_DESC_SCALE_FACTOR = 3.0
SIFT_DESC_CLIP = 0.2
MIN_IMAGE_SIZE = 16

MATCH_RATIO = 0.75
MATCH_DESC_MAX = 0.6
MATCH_DISP_FRAC = 0.25
MATCH_DISTINCT_PX = 2.0  # ratio-test rival must be a different keypoint
MATCH_MAX = 256
MIN_TRIPLET_CORRS = 10


@dataclass
class Feature:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    descriptor: np.ndarray


def to_grayscale(img):
    """[-1,1] (H,W,3) -> [0,1] single channel."""
    w = np.asarray(GRAY_WEIGHTS)
    return ((np.asarray(img, dtype=np.float64) + 1.0) * 0.5) @ w


def _upsample2(a):
    h, w = a.shape
    out = np.empty((2 * h, w), dtype=a.dtype)
    out[0::2] = a
    out[1:-1:2] = 0.5 * (a[:-1] + a[1:])
    out[-1] = a[-1]
    out2 = np.empty((2 * h, 2 * w), dtype=a.dtype)
    out2[:, 0::2] = out
    out2[:, 1:-1:2] = 0.5 * (out[:, :-1] + out[:, 1:])
    out2[:, -1] = out[:, -1]
    return out2


def _build_pyramids(gray):
    """Gaussian and DoG pyramids over a 2x upsampled base image."""
    base = _upsample2(gray)
    sigma_diff = math.sqrt(max(SIFT_SIGMA ** 2 - (2.0 * SIFT_ASSUMED_BLUR) ** 2, 0.01))
    base = ndimage.gaussian_filter(base, sigma_diff)

    n_oct = int(math.floor(math.log2(min(base.shape)))) - 3
    n_oct = max(n_oct, 1)
    k = 2.0 ** (1.0 / SIFT_INTERVALS)
    gauss_pyr = []
    dog_pyr = []
    img = base
    for _ in range(n_oct):
        gs = [img]
        for i in range(1, SIFT_INTERVALS + 3):
            s_prev = SIFT_SIGMA * k ** (i - 1)
            s_tot = s_prev * k
            gs.append(ndimage.gaussian_filter(gs[-1], math.sqrt(s_tot ** 2 - s_prev ** 2)))
        gauss_pyr.append(gs)
        dog_pyr.append(np.stack([gs[i + 1] - gs[i] for i in range(SIFT_INTERVALS + 2)]))
        img = gs[SIFT_INTERVALS][::2, ::2]
    return gauss_pyr, dog_pyr


def _refine_extremum(dog, layer, y, x):
    """Quadratic subpixel refinement; returns None on rejection."""
    n_layers, h, w = dog.shape
    for _ in range(SIFT_MAX_REFINE):
        cube = dog[layer - 1:layer + 2, y - 1:y + 2, x - 1:x + 2]
        g = 0.5 * np.array([
            cube[1, 1, 2] - cube[1, 1, 0],
            cube[1, 2, 1] - cube[1, 0, 1],
            cube[2, 1, 1] - cube[0, 1, 1],
        ])
        c = cube[1, 1, 1]
        dxx = cube[1, 1, 2] - 2 * c + cube[1, 1, 0]
        dyy = cube[1, 2, 1] - 2 * c + cube[1, 0, 1]
        dss = cube[2, 1, 1] - 2 * c + cube[0, 1, 1]
        dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
        dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
        dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            off = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            contrast = c + 0.5 * float(g @ off)
            if abs(contrast) * SIFT_INTERVALS < SIFT_CONTRAST_THRESH:
                return None
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            r = SIFT_EDGE_RATIO
            if det <= 0 or tr * tr * r >= det * (r + 1.0) ** 2:
                return None
            return off, contrast
        x += int(round(off[0]))
        y += int(round(off[1]))
        layer += int(round(off[2]))
        if (layer < 1 or layer > n_layers - 2
                or x < SIFT_IMAGE_BORDER or x >= w - SIFT_IMAGE_BORDER
                or y < SIFT_IMAGE_BORDER or y >= h - SIFT_IMAGE_BORDER):
            return None
    return None


def _gradients(img):
    gy, gx = np.gradient(img)
    return gx, gy


def _orientations(gx, gy, y, x, sigma_oct):
    """Dominant gradient directions around a refined keypoint."""
    h, w = gx.shape
    sig = SIFT_ORI_SIGMA_FACTOR * sigma_oct
    radius = int(round(SIFT_ORI_RADIUS_FACTOR * sig))
    y0, y1 = max(0, y - radius), min(h, y + radius + 1)
    x0, x1 = max(0, x - radius), min(w, x + radius + 1)
    if y1 <= y0 or x1 <= x0:
        return []
    wy = np.arange(y0, y1) - y
    wx = np.arange(x0, x1) - x
    dy2, dx2 = np.meshgrid(wy, wx, indexing="ij")
    gxx = gx[y0:y1, x0:x1]
    gyy = gy[y0:y1, x0:x1]
    mag = np.hypot(gxx, gyy)
    ang = np.arctan2(gyy, gxx) % (2.0 * math.pi)
    weight = np.exp(-(dx2 ** 2 + dy2 ** 2) / (2.0 * sig * sig))
    bins = (ang / (2.0 * math.pi) * SIFT_ORI_BINS).astype(int) % SIFT_ORI_BINS
    hist = np.bincount(bins.ravel(), weights=(mag * weight).ravel(),
                       minlength=SIFT_ORI_BINS)
    for _ in range(6):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    peak = hist.max()
    if peak <= 0:
        return []
    out = []
    for i in range(SIFT_ORI_BINS):
        l, r = hist[(i - 1) % SIFT_ORI_BINS], hist[(i + 1) % SIFT_ORI_BINS]
        if hist[i] >= SIFT_ORI_PEAK_RATIO * peak and hist[i] > l and hist[i] > r:
            denom = l - 2.0 * hist[i] + r
            shift = 0.5 * (l - r) / denom if denom != 0 else 0.0
            out.append(((i + shift) % SIFT_ORI_BINS) / SIFT_ORI_BINS * 2.0 * math.pi)
    return out


def _descriptor(gx, gy, y, x, sigma_oct, theta):
    """4x4 spatial, 8 orientation bin descriptor with trilinear votes."""
    h, w = gx.shape
    d = SIFT_DESC_WIDTH
    nb = SIFT_DESC_BINS
    hist_width = SIFT_DESC_SCALE_FACTOR * sigma_oct
    radius = int(round(hist_width * math.sqrt(2) * (d + 1) * 0.5))
    radius = min(radius, int(math.sqrt(h * h + w * w)))
    y0, y1 = max(0, y - radius), min(h, y + radius + 1)
    x0, x1 = max(0, x - radius), min(w, x + radius + 1)
    if y1 <= y0 or x1 <= x0:
        return None
    wy = np.arange(y0, y1) - y
    wx = np.arange(x0, x1) - x
    di, dj = np.meshgrid(wy, wx, indexing="ij")
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    xr = (cos_t * dj + sin_t * di) / hist_width
    yr = (-sin_t * dj + cos_t * di) / hist_width
    rbin = yr + 0.5 * d - 0.5
    cbin = xr + 0.5 * d - 0.5
    gxx = gx[y0:y1, x0:x1]
    gyy = gy[y0:y1, x0:x1]
    mag = np.hypot(gxx, gyy)
    ang = (np.arctan2(gyy, gxx) - theta) % (2.0 * math.pi)
    obin = ang / (2.0 * math.pi) * nb
    weight = np.exp(-(xr ** 2 + yr ** 2) / (0.5 * d * d)) * mag

    valid = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    if not valid.any():
        return None
    rbin, cbin, obin, weight = (a[valid] for a in (rbin, cbin, obin, weight))
    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, nb))
    for dr in (0, 1):
        wr = weight * (fr if dr else 1 - fr)
        for dc in (0, 1):
            wc = wr * (fc if dc else 1 - fc)
            for do in (0, 1):
                wo = wc * (fo if do else 1 - fo)
                np.add.at(hist, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nb), wo)
    vec = hist[1:-1, 1:-1].ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    vec = np.minimum(vec / norm, SIFT_DESC_CLIP)
    # Hellinger form: sqrt of the L1-normalized histogram. Distances
    # between views of the same point shrink far more than distances
    # between unrelated points, which matters at small patch scales.
    s = vec.sum()
    if s < 1e-12:
        return None
    vec = np.sqrt(vec / s)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


def detect_features(image, max_features=None):
    """Detect scale-space features in a [-1,1] RGB or [0,1] gray image.

    Coordinates use the image pixel convention (integer = pixel center).
    Returns features sorted by (y, x, scale, orientation); images
    smaller than MIN_IMAGE_SIZE yield an empty list.
    """
    img = np.asarray(image)
    gray = to_grayscale(img) if img.ndim == 3 else np.asarray(img, dtype=np.float64)
    if min(gray.shape) < MIN_IMAGE_SIZE:
        return []

    gauss_pyr, dog_pyr = _build_pyramids(gray)
    k = 2.0 ** (1.0 / SIFT_INTERVALS)
    pre_thresh = 0.5 * SIFT_CONTRAST_THRESH / SIFT_INTERVALS
    grads = {}
    feats = []
    seen = set()
    for oct_i, dog in enumerate(dog_pyr):
        n_layers, h, w = dog.shape
        mx = ndimage.maximum_filter(dog, size=3, mode="constant", cval=np.inf)
        mn = ndimage.minimum_filter(dog, size=3, mode="constant", cval=-np.inf)
        cand = ((dog >= mx) | (dog <= mn)) & (np.abs(dog) > pre_thresh)
        cand[0] = cand[-1] = False
        b = SIFT_IMAGE_BORDER
        inner = np.zeros_like(cand)
        inner[:, b:h - b, b:w - b] = True
        for layer, y, x in zip(*np.nonzero(cand & inner)):
            res = _refine_extremum(dog, int(layer), int(y), int(x))
            if res is None:
                continue
            off, contrast = res
            lay = layer + off[2]
            sigma_oct = SIFT_SIGMA * k ** lay
            yy, xx = y + off[1], x + off[0]
            scale_img = sigma_oct * 2.0 ** (oct_i - 1)
            gi = int(round(lay))
            gi = min(max(gi, 0), SIFT_INTERVALS + 2)
            key = (oct_i, gi)
            if key not in grads:
                grads[key] = _gradients(gauss_pyr[oct_i][gi])
            gx, gy = grads[key]
            for theta in _orientations(gx, gy, int(round(yy)), int(round(xx)), sigma_oct):
                desc = _descriptor(gx, gy, int(round(yy)), int(round(xx)),
                                   sigma_oct, theta)
                if desc is None:
                    continue
                fx = xx * 2.0 ** (oct_i - 1)
                fy = yy * 2.0 ** (oct_i - 1)
                dedup = (round(fx, 2), round(fy, 2), round(scale_img, 2),
                         round(theta, 2))
                if dedup in seen:
                    continue
                seen.add(dedup)
                feats.append(Feature(fx, fy, scale_img, theta,
                                     abs(contrast), desc))

    if max_features is not None and len(feats) > max_features:
        feats.sort(key=lambda f: -f.response)
        feats = feats[:max_features]
    feats.sort(key=lambda f: (f.y, f.x, f.scale, f.orientation))
    return feats


# -- matching -----------------------------------------------------------------

@dataclass
class Correspondence:
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    score: float
    source: str = "feat"


def within_border(p, height, width, margin):
    """True if a patch of half-width margin around p stays inside."""
    cx = int(np.rint(p[0]))
    cy = int(np.rint(p[1]))
    return margin <= cx <= width - margin and margin <= cy <= height - margin


def _match_into(desc_mid, feats_side, pts_mid, max_disp):
    """Best side-feature index per middle feature, or -1.

    Candidates beyond the displacement gate are dropped before the
    nearest-neighbour search, so the ratio test compares plausible
    alternatives rather than far-away lookalikes. The second-best used
    in the ratio must sit at a genuinely different location: keypoints
    carry one feature per orientation peak, and comparing the winner
    against its own other-orientation twin would veto every match on a
    near-symmetric pattern.
    """
    if not feats_side:
        return None
    desc_side = np.stack([f.descriptor for f in feats_side])
    pts_side = np.array([[f.x, f.y] for f in feats_side])
    dist = cdist(desc_mid, desc_side)
    disp_ok = cdist(pts_mid, pts_side) <= max_disp
    out = np.full(dist.shape[0], -1, dtype=int)
    scores = np.zeros(dist.shape[0])
    for i in range(dist.shape[0]):
        cand = np.nonzero(disp_ok[i])[0]
        if cand.size == 0:
            continue
        row = dist[i, cand]
        k = int(np.argmin(row))
        best = row[k]
        if best > MATCH_DESC_MAX:
            continue
        away = np.abs(pts_side[cand] - pts_side[cand[k]]).max(axis=1) \
            > MATCH_DISTINCT_PX
        if np.any(away):
            second = row[away].min()
            if best >= MATCH_RATIO * second:
                continue
        out[i] = cand[k]
        scores[i] = best
    return out, scores, pts_side


def match_triplet(feats1, feats2, feats3, image_shape, patch_size):
    """Match middle-view features into both side views.

    image_shape: (H, W) of the views. patch_size sets the border margin
    (half the patch on every side). Returns correspondences sorted by
    descriptor score, best first capped at MATCH_MAX.
    """
    h, w = image_shape
    margin = patch_size // 2
    max_disp = MATCH_DISP_FRAC * w
    mids = [f for f in feats2 if within_border((f.x, f.y), h, w, margin)]
    if not mids or not feats1 or not feats3:
        return []
    desc_mid = np.stack([f.descriptor for f in mids])
    pts_mid = np.array([[f.x, f.y] for f in mids])
    m1 = _match_into(desc_mid, feats1, pts_mid, max_disp)
    m3 = _match_into(desc_mid, feats3, pts_mid, max_disp)
    if m1 is None or m3 is None:
        return []
    idx1, sc1, pts1 = m1
    idx3, sc3, pts3 = m3
    out = []
    for i in range(len(mids)):
        j1, j3 = idx1[i], idx3[i]
        if j1 < 0 or j3 < 0:
            continue
        p1, p3 = pts1[j1], pts3[j3]
        if not (within_border(p1, h, w, margin) and within_border(p3, h, w, margin)):
            continue
        out.append(Correspondence(p1=p1.copy(), p2=pts_mid[i].copy(),
                                  p3=p3.copy(), score=float(max(sc1[i], sc3[i]))))
    out.sort(key=lambda c: (c.score, c.p2[1], c.p2[0]))
    return out[:MATCH_MAX]


def accept_triplet_sample(corrs):
    """A triplet is usable only with a minimum number of matches."""
    return len(corrs) >= MIN_TRIPLET_CORRS


def extract_patch(image, center, patch_size):
    """Cut a patch_size x patch_size crop centered on a point."""
    m = patch_size // 2
    cy = int(np.rint(center[1]))
    cx = int(np.rint(center[0]))
    h, w = image.shape[:2]
    if cy - m < 0 or cx - m < 0 or cy + m > h or cx + m > w:
        raise PatchBorderError(
            f"patch at ({cx},{cy}) size {patch_size} exceeds {w}x{h} image")
    return image[cy - m:cy + m, cx - m:cx + m]


def extract_patches(image, centers, patch_size):
    return [extract_patch(image, c, patch_size) for c in centers]
