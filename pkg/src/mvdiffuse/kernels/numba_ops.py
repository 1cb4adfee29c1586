"""Numba kernel implementations.

Same contracts as ``numpy_ops``; scalar loop nests under ``@njit``.
fastmath stays off so both backends agree to rounding order per ray.
"""

import math

import numba as nb
import numpy as np

from .numpy_ops import (
    BISECT_ITERS,
    MARCH_MAX_ITERS,
    MARCH_MAX_STEP,
    MARCH_MIN_STEP,
    MARCH_TOL,
    SE_SCALE,
)

_SAFETY = (0.9, 0.9, 1.0, 0.5)


# Convolution family ---------------------------------------------------------

@nb.njit(cache=True)
def _conv2d_fwd(x, w, stride, pad, y):
    n, ci, h, wdt = x.shape
    co, _, kh, kw = w.shape
    _, _, ho, wo = y.shape
    for b in range(n):
        for oc in range(co):
            for oy in range(ho):
                hb = oy * stride - pad
                for ox in range(wo):
                    wb = ox * stride - pad
                    acc = 0.0
                    for ic in range(ci):
                        for i in range(kh):
                            hy = hb + i
                            if hy < 0 or hy >= h:
                                continue
                            for j in range(kw):
                                wx = wb + j
                                if wx < 0 or wx >= wdt:
                                    continue
                                acc += x[b, ic, hy, wx] * w[oc, ic, i, j]
                    y[b, oc, oy, ox] = acc
    return y


@nb.njit(cache=True)
def _conv2d_bwd_input(gy, w, stride, pad, gx):
    n, co, ho, wo = gy.shape
    _, ci, kh, kw = w.shape
    _, _, h, wdt = gx.shape
    for b in range(n):
        for oc in range(co):
            for oy in range(ho):
                hb = oy * stride - pad
                for ox in range(wo):
                    wb = ox * stride - pad
                    g = gy[b, oc, oy, ox]
                    for ic in range(ci):
                        for i in range(kh):
                            hy = hb + i
                            if hy < 0 or hy >= h:
                                continue
                            for j in range(kw):
                                wx = wb + j
                                if wx < 0 or wx >= wdt:
                                    continue
                                gx[b, ic, hy, wx] += g * w[oc, ic, i, j]
    return gx


@nb.njit(cache=True)
def _conv2d_bwd_weight(x, gy, stride, pad, gw):
    n, ci, h, wdt = x.shape
    _, co, ho, wo = gy.shape
    _, _, kh, kw = gw.shape
    for b in range(n):
        for oc in range(co):
            for oy in range(ho):
                hb = oy * stride - pad
                for ox in range(wo):
                    wb = ox * stride - pad
                    g = gy[b, oc, oy, ox]
                    for ic in range(ci):
                        for i in range(kh):
                            hy = hb + i
                            if hy < 0 or hy >= h:
                                continue
                            for j in range(kw):
                                wx = wb + j
                                if wx < 0 or wx >= wdt:
                                    continue
                                gw[oc, ic, i, j] += g * x[b, ic, hy, wx]
    return gw


def conv2d_fwd(x, w, stride, pad):
    n, ci, h, wdt = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1
    y = np.zeros((n, co, ho, wo), dtype=x.dtype)
    return _conv2d_fwd(x, w, stride, pad, y)


def conv2d_bwd_input(gy, w, stride, pad, h, wdt):
    n = gy.shape[0]
    ci = w.shape[1]
    gx = np.zeros((n, ci, h, wdt), dtype=gy.dtype)
    return _conv2d_bwd_input(gy, w, stride, pad, gx)


def conv2d_bwd_weight(x, gy, stride, pad, kh, kw):
    co = gy.shape[1]
    ci = x.shape[1]
    gw = np.zeros((co, ci, kh, kw), dtype=gy.dtype)
    return _conv2d_bwd_weight(x, gy, stride, pad, gw)


# Ray marching family --------------------------------------------------------

@nb.njit(cache=True)
def _implicit_pt(x, y, z, code, params):
    if code == 0:
        return math.sqrt(x * x + y * y + z * z) - params[0]
    if code == 1:
        q = math.sqrt(x * x + z * z) - params[0]
        return math.sqrt(q * q + y * y) - params[1]
    if code == 2:
        a, b, c, e1, e2 = params[0], params[1], params[2], params[3], params[4]
        fx = abs(x / a) ** (2.0 / e2)
        fz = abs(z / c) ** (2.0 / e2)
        fy = abs(y / b) ** (2.0 / e1)
        f = (fx + fz) ** (e2 / e1) + fy
        return (f - 1.0) * SE_SCALE
    # bumpy sphere
    radius, amp = params[0], params[1]
    nlobe = int(params[2])
    r = math.sqrt(x * x + y * y + z * z)
    r_safe = r if r > 1e-12 else 1e-12
    disp = 0.0
    for k in range(nlobe):
        ux = params[3 + 5 * k]
        uy = params[4 + 5 * k]
        uz = params[5 + 5 * k]
        freq = params[6 + 5 * k]
        phase = params[7 + 5 * k]
        dot = (x * ux + y * uy + z * uz) / r_safe
        disp += math.sin(freq * dot + phase)
    disp /= nlobe
    return r - radius * (1.0 + amp * disp)


@nb.njit(cache=True)
def _implicit_value(pts, code, params, out):
    for i in range(pts.shape[0]):
        out[i] = _implicit_pt(pts[i, 0], pts[i, 1], pts[i, 2], code, params)
    return out


def implicit_value(points, code, params):
    p = np.ascontiguousarray(points, dtype=np.float64)
    out = np.empty(p.shape[0], dtype=np.float64)
    return _implicit_value(p, code, params, out)


@nb.njit(cache=True)
def _raymarch(o, d, code, params, t0, t1, safety, t_out, hit_out):
    m = o.shape[0]
    for i in range(m):
        ta = t0[i]
        tb = t1[i]
        if ta >= tb:
            t_out[i] = tb
            hit_out[i] = False
            continue
        t = ta
        t_prev = ta
        found = False
        bracket = False
        blo = 0.0
        bhi = 0.0
        for _ in range(MARCH_MAX_ITERS):
            px = o[i, 0] + t * d[i, 0]
            py = o[i, 1] + t * d[i, 1]
            pz = o[i, 2] + t * d[i, 2]
            f = _implicit_pt(px, py, pz, code, params)
            if f < 0.0:
                bracket = True
                blo = t_prev
                bhi = t
                break
            if f < MARCH_TOL:
                found = True
                break
            step = f * safety
            if step < MARCH_MIN_STEP:
                step = MARCH_MIN_STEP
            elif step > MARCH_MAX_STEP:
                step = MARCH_MAX_STEP
            t_prev = t
            t = t + step
            if t > tb:
                t = tb
                break
        if bracket:
            lo = blo
            hi = bhi
            for _ in range(BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                px = o[i, 0] + mid * d[i, 0]
                py = o[i, 1] + mid * d[i, 1]
                pz = o[i, 2] + mid * d[i, 2]
                if _implicit_pt(px, py, pz, code, params) < 0.0:
                    hi = mid
                else:
                    lo = mid
            t = 0.5 * (lo + hi)
            found = True
        if found:
            t_out[i] = t
            hit_out[i] = True
        else:
            t_out[i] = tb
            hit_out[i] = False
    return t_out, hit_out


def raymarch(origins, dirs, code, params, t0, t1):
    o = np.ascontiguousarray(origins, dtype=np.float64)
    d = np.ascontiguousarray(dirs, dtype=np.float64)
    t0 = np.ascontiguousarray(t0, dtype=np.float64)
    t1 = np.ascontiguousarray(t1, dtype=np.float64)
    m = o.shape[0]
    t_out = np.empty(m, dtype=np.float64)
    hit_out = np.empty(m, dtype=np.bool_)
    return _raymarch(o, d, code, params, t0, t1, _SAFETY[code], t_out, hit_out)
