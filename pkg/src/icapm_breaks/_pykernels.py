"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built, or when ``ICAPM_BREAKS_PURE=1``.
"""

import math

import numpy as np

LOG2PI = math.log(2.0 * math.pi)
DET_FLOOR = 1e-300
N_OUT = 9


def garch_m_filter(theta, R, Z, Zi, Zs, h1, clamp, out=None):
    th = [float(v) for v in theta]
    c11, c21, c22 = th[13:16]
    am, aw, bm, bw = th[16:20]
    ccm, ccw, ccmw = c11 * c11 + c21 * c21, c22 * c22, c21 * c22
    a2m, a2w, amw = am * am, aw * aw, am * aw
    b2m, b2w, bmw = bm * bm, bw * bw, bm * bw
    kw, ki, ks = th[0:5], th[5:9], th[9:13]
    hm, hw, hmw = (float(v) for v in h1)
    em = ew = 0.0
    total = 0.0
    n_clamped = 0
    Rl, Zl, Zil, Zsl = R.tolist(), Z.tolist(), Zi.tolist(), Zs.tolist()
    for t in range(len(Rl)):
        if t > 0:
            hm = ccm + a2m * em * em + b2m * hm
            hw = ccw + a2w * ew * ew + b2w * hw
            hmw = ccmw + amw * em * ew + bmw * hmw
        zr, zir, zsr = Zl[t], Zil[t], Zsl[t]
        xw = 0.0
        for j in range(5):
            xw += kw[j] * zr[j]
        xi = 0.0
        xs = 0.0
        for j in range(4):
            xi += ki[j] * zir[j]
            xs += ks[j] * zsr[j]
        if xw > clamp or xw < -clamp:
            n_clamped += 1
            xw = clamp if xw > 0 else -clamp
        if xi > clamp or xi < -clamp:
            n_clamped += 1
            xi = clamp if xi > 0 else -clamp
        dw = math.exp(xw)
        di = math.exp(xi)
        phi = 1.0 - math.exp(-xs * xs)
        mum = phi * dw * hmw + (1.0 - phi) * di * hm
        muw = dw * hw
        em = Rl[t][0] - mum
        ew = Rl[t][1] - muw
        det = hm * hw - hmw * hmw
        if not (math.isfinite(det) and math.isfinite(em) and math.isfinite(ew)):
            return 2, t, n_clamped, total
        if det < DET_FLOOR:
            return 1, t, n_clamped, total
        quad = (hw * em * em - 2.0 * hmw * em * ew + hm * ew * ew) / det
        ll = -LOG2PI - 0.5 * math.log(det) - 0.5 * quad
        total += ll
        if out is not None:
            out[t, :] = (dw, di, phi, hm, hw, hmw, em, ew, ll)
    return 0, -1, n_clamped, total


def segment_dp(y, max_breaks, h, tol):
    y = np.asarray(y, dtype=float)
    T = y.size
    M = int(max_breaks)
    S1 = np.concatenate(([0.0], np.cumsum(y)))
    S2 = np.concatenate(([0.0], np.cumsum(y * y)))

    def ssr_to(i, js):
        # SSR of y[i..j] for an array of end indices j
        n = js - i + 1
        s = S1[js + 1] - S1[i]
        return np.maximum((S2[js + 1] - S2[i]) - s * s / n, 0.0)

    cost = np.full((M + 1, T + 1), np.inf)
    for i in range(T - h + 1):
        cost[0, i] = ssr_to(i, np.array([T - 1]))[0]
    for k in range(1, M + 1):
        jmax = T - 1 - k * h
        for i in range(T - (k + 1) * h + 1):
            js = np.arange(i + h - 1, jmax + 1)
            if js.size:
                cost[k, i] = np.min(ssr_to(i, js) + cost[k - 1, js + 1])

    ssr_out = np.full(M + 1, np.inf)
    brk = np.full((M + 1, max(M, 1)), -1, dtype=np.int64)
    for k in range(M + 1):
        if not np.isfinite(cost[k, 0]):
            continue
        ssr_out[k] = cost[k, 0]
        i = 0
        for b in range(k, 0, -1):
            js = np.arange(i + h - 1, T - b * h)
            c = ssr_to(i, js) + cost[b - 1, js + 1]
            j = int(js[np.flatnonzero(c <= cost[b, i] + tol)[0]])
            brk[k, k - b] = j + 1
            i = j + 1
    return ssr_out, brk
