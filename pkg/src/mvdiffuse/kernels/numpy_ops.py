"""Pure-numpy kernel implementations.

Convolutions are lowered to batched matmuls over im2col buffers, so the
heavy lifting lands in BLAS.  The ray marcher advances all rays in
lockstep with boolean masks; per ray it performs the same arithmetic as
the scalar numba version.
"""

import numpy as np

# Shape codes shared by both backends.
SHAPE_SPHERE = 0
SHAPE_TORUS = 1
SHAPE_SUPERELLIPSOID = 2
SHAPE_BUMPY_SPHERE = 3

# March controls. The superellipsoid field is a scaled algebraic residual
# rather than a metric distance; SE_SCALE is a conservative bound keeping
# its steps an underestimate of true distance near the surface.
MARCH_TOL = 1e-5
MARCH_MIN_STEP = 5e-4
MARCH_MAX_STEP = 0.1
MARCH_MAX_ITERS = 512
BISECT_ITERS = 64
SE_SCALE = 1.0 / 30.0

# Step safety factor per shape code; bumpy spheres are not true SDFs so
# they march more cautiously (displacement slope bounded by amp*freq).
_SAFETY = (0.9, 0.9, 1.0, 0.5)


# Convolution family ---------------------------------------------------------

def _im2col(x, kh, kw, stride, pad, ho, wo):
    """(N,C,H,W) -> (N, C*kh*kw, ho*wo) patch matrix."""
    n, c, h, w = x.shape
    if pad > 0:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride,
                                  j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d_fwd(x, w, stride, pad):
    n, ci, h, wdt = x.shape
    co, ci2, kh, kw = w.shape
    assert ci == ci2, (ci, ci2)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad, ho, wo)
    w2 = w.reshape(co, ci * kh * kw)
    y = np.matmul(w2[None], cols)
    return y.reshape(n, co, ho, wo)


def conv2d_bwd_weight(x, gy, stride, pad, kh, kw):
    n, ci, h, wdt = x.shape
    n2, co, ho, wo = gy.shape
    cols = _im2col(x, kh, kw, stride, pad, ho, wo)
    gy2 = gy.reshape(n, co, ho * wo)
    gw = np.matmul(gy2, cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(co, ci, kh, kw)


def conv2d_bwd_input(gy, w, stride, pad, h, wdt):
    n, co, ho, wo = gy.shape
    co2, ci, kh, kw = w.shape
    w2 = w.reshape(co, ci * kh * kw)
    gy2 = gy.reshape(n, co, ho * wo)
    gcols = np.matmul(w2.T[None], gy2)
    gcols = gcols.reshape(n, ci, kh, kw, ho, wo)
    gxp = np.zeros((n, ci, h + 2 * pad, wdt + 2 * pad), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride,
                j:j + stride * wo:stride] += gcols[:, :, i, j]
    if pad > 0:
        return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wdt])
    return gxp


# Ray marching family --------------------------------------------------------

def implicit_value(points, code, params):
    """Signed implicit field for a shape; negative inside.

    points: (M,3) float64. Returns (M,) float64. For sphere, torus and
    bumpy sphere the value is a (near-)metric signed distance; for the
    superellipsoid it is a scaled inside-outside residual.
    """
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if code == SHAPE_SPHERE:
        return np.sqrt(x * x + y * y + z * z) - params[0]
    if code == SHAPE_TORUS:
        rmaj, rmin = params[0], params[1]
        q = np.sqrt(x * x + z * z) - rmaj
        return np.sqrt(q * q + y * y) - rmin
    if code == SHAPE_SUPERELLIPSOID:
        a, b, c, e1, e2 = params[:5]
        fx = np.abs(x / a) ** (2.0 / e2)
        fz = np.abs(z / c) ** (2.0 / e2)
        fy = np.abs(y / b) ** (2.0 / e1)
        f = (fx + fz) ** (e2 / e1) + fy
        return (f - 1.0) * SE_SCALE
    if code == SHAPE_BUMPY_SPHERE:
        radius, amp = params[0], params[1]
        nlobe = int(params[2])
        r = np.sqrt(x * x + y * y + z * z)
        r_safe = np.maximum(r, 1e-12)
        disp = np.zeros_like(r)
        for k in range(nlobe):
            ux, uy, uz, freq, phase = params[3 + 5 * k: 8 + 5 * k]
            dot = (x * ux + y * uy + z * uz) / r_safe
            disp += np.sin(freq * dot + phase)
        disp /= nlobe
        return r - radius * (1.0 + amp * disp)
    raise ValueError(f"unknown shape code {code}")


def raymarch(origins, dirs, code, params, t0, t1):
    """March rays against one implicit shape.

    origins, dirs: (M,3) float64, dirs unit length. t0/t1: per-ray march
    interval (from a bounding volume clip); rays with t0 >= t1 miss
    immediately. Returns (t, hit) with t the hit parameter (t1 where
    missed) and hit a bool array.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    t0 = np.asarray(t0, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    m = o.shape[0]
    safety = _SAFETY[code]

    t = t0.copy()
    hit = np.zeros(m, dtype=bool)
    active = t0 < t1
    t_prev = t0.copy()
    # brackets for rays that stepped across the surface
    blo = np.zeros(m)
    bhi = np.zeros(m)
    bracketed = np.zeros(m, dtype=bool)

    for _ in range(MARCH_MAX_ITERS):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        pts = o[idx] + t[idx, None] * d[idx]
        f = implicit_value(pts, code, params)

        crossed = f < 0.0
        if crossed.any():
            ci = idx[crossed]
            blo[ci] = t_prev[ci]
            bhi[ci] = t[ci]
            bracketed[ci] = True
            active[ci] = False

        close = (~crossed) & (f < MARCH_TOL)
        if close.any():
            hi = idx[close]
            hit[hi] = True
            active[hi] = False

        go = (~crossed) & (~close)
        if go.any():
            gi = idx[go]
            step = np.clip(f[go] * safety, MARCH_MIN_STEP, MARCH_MAX_STEP)
            t_prev[gi] = t[gi]
            t[gi] += step
            out = t[gi] > t1[gi]
            if out.any():
                oi = gi[out]
                t[oi] = t1[oi]
                active[oi] = False

    if bracketed.any():
        bi = np.nonzero(bracketed)[0]
        lo = blo[bi]
        hi = bhi[bi]
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            fm = implicit_value(o[bi] + mid[:, None] * d[bi], code, params)
            neg = fm < 0.0
            hi = np.where(neg, mid, hi)
            lo = np.where(neg, lo, mid)
        t[bi] = 0.5 * (lo + hi)
        hit[bi] = True

    t = np.where(hit, t, t1)
    return t, hit
