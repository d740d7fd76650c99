"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's numeric code. Kernels are evaluated one
grid point at a time with ``math``; convolution is six nested loops.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

DELTA = 1e-4
AKP_COUNTS = {"G": 4, "Lg": 1, "Lt": 1, "Tf": 3, "Ts": 2, "M": 0}


def offsets(n: int) -> list[float]:
    return [i - (n + 1) / 2 for i in range(1, n + 1)]


def _rot(x, y, theta):
    return x * math.cos(theta) + y * math.sin(theta), -x * math.sin(theta) + y * math.cos(theta)


def gabor(x, y, lam, theta, psi, sigma, gamma=1.0):
    xr, yr = _rot(x, y, theta)
    return math.exp(-(xr**2 + gamma**2 * yr**2) / (2 * sigma**2)) * math.cos(2 * math.pi * xr / lam + psi)


def log_(x, y, sigma):
    q = (x * x + y * y) / (2 * sigma**2)
    return -1.0 / (math.pi * sigma**4) * (1 - q) * math.exp(-q)


def tgd1st(x, y, theta, g1, g2):
    xr, yr = _rot(x, y, theta)
    if abs(xr) <= DELTA:
        return 0.0
    return math.exp(-(xr**2) / g1**2 - yr**2 / g2**2) * math.copysign(1.0, math.cos(theta))


def _tgd2nd_w(x, y, theta, gamma):
    if x == 0 and y == 0:
        return 0.0
    xr, yr = _rot(x, y, theta)
    r2 = xr * xr + yr * yr
    return math.exp(-r2 / gamma**2) * abs(xr / r2)


def _lot_w(x, y, sigma):
    return math.exp(-(x * x + y * y) / sigma**2)


def _centered(fn, h, w, *akps):
    m = np.array([[fn(x, y, *akps) for y in offsets(w)] for x in offsets(h)])
    if h % 2 and w % 2:
        m[h // 2, w // 2] -= m.sum()
    return m


def kernel(code: str, akps, h: int, w: int) -> np.ndarray:
    """Weight matrix for a family code, evaluated point by point."""
    akps = list(map(float, akps))
    if code == "M":
        return np.full((h, w), 1 / math.sqrt(h * w))
    if code == "P":
        return np.array(akps).reshape(h, w)
    if code == "Ts":
        return _centered(_tgd2nd_w, h, w, *akps)
    if code == "Lt":
        return _centered(_lot_w, h, w, *akps)
    fn = {"G": gabor, "Lg": log_, "Tf": tgd1st}[code]
    return np.array([[fn(x, y, *akps) for y in offsets(w)] for x in offsets(h)])


def conv_forward(x, weight, bias, stride=1, padding=0, dilation=1):
    b, ci, hh, ww = x.shape
    co, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (hh + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (ww + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((b, co, ho, wo))
    for n in range(b):
        for q in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = bias[q]
                    for p in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                acc += weight[q, p, u, v] * xp[n, p, i * stride + u * dilation, j * stride + v * dilation]
                    out[n, q, i, j] = acc
    return out


def conv_backward(x, weight, grad_out, stride=1, padding=0, dilation=1):
    """(grad_weight, grad_input, grad_bias) by scattering each output's gradient."""
    b, ci, hh, ww = x.shape
    co, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(weight)
    _, _, ho, wo = grad_out.shape
    for n in range(b):
        for q in range(co):
            for i in range(ho):
                for j in range(wo):
                    g = grad_out[n, q, i, j]
                    for p in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                r, c = i * stride + u * dilation, j * stride + v * dilation
                                gw[q, p, u, v] += g * xp[n, p, r, c]
                                gxp[n, p, r, c] += g * weight[q, p, u, v]
    gx = gxp[:, :, padding : padding + hh, padding : padding + ww]
    return gw, gx, grad_out.sum(axis=(0, 2, 3))


def apportion(ratios, total: int) -> list[int]:
    """Largest-remainder apportionment in exact rational arithmetic."""
    rs = [Fraction(str(r)) for r in ratios]
    s = sum(rs)
    quotas = [r / s * total for r in rs]
    counts = [math.floor(q) for q in quotas]
    rem = sorted(range(len(rs)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in rem[: total - sum(counts)]:
        counts[i] += 1
    return counts


def compact(blocks, h=7, w=7) -> float:
    """1 - learnable/plain, counted per block from the AKP counts."""
    n = sum(c for _, c in blocks)
    learn = sum((h * w if code == "P" else AKP_COUNTS[code]) * c for code, c in blocks)
    return 1 - learn / (n * h * w)


def central_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f(x)
        x[idx] = orig - step
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def softmax_ce_grad_mp(z, label: int, dps: int = 40) -> np.ndarray:
    """d(-log softmax(z)[label])/dz by numerical differentiation at ``dps`` digits."""
    import mpmath

    with mpmath.workdps(dps):
        zs = [mpmath.mpf(float(v)) for v in z]

        def loss_at(i):
            def f(t):
                vals = zs[:i] + [t] + zs[i + 1 :]
                return mpmath.log(mpmath.fsum(mpmath.exp(v) for v in vals)) - vals[label]

            return f

        return np.array([float(mpmath.diff(loss_at(i), zs[i])) for i in range(len(zs))])
