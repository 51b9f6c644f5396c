# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: the GARCH-in-mean filter and the segmentation DP.

Signatures and return conventions match ``_pykernels`` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, isfinite, INFINITY

cnp.import_array()

cdef double LOG2PI = 1.8378770664093453
cdef double DET_FLOOR = 1e-300

# output columns of the filter
DW, DI, PHI, HM, HW, HMW, EM, EW, LL = range(9)
N_OUT = 9


cdef inline double _clamp(double x, double lim, long *count) nogil:
    if x > lim:
        count[0] += 1
        return lim
    if x < -lim:
        count[0] += 1
        return -lim
    return x


def garch_m_filter(const double[::1] theta,
                   const double[:, ::1] R,
                   const double[:, ::1] Z,
                   const double[:, ::1] Zi,
                   const double[:, ::1] Zs,
                   const double[::1] h1,
                   double clamp,
                   double[:, ::1] out=None):
    """Run the bivariate GARCH-in-mean recursion.

    Returns ``(status, t_bad, n_clamped, loglik)``; status 0 is success,
    1 a singular covariance at row ``t_bad``, 2 a non-finite value there.
    """
    cdef Py_ssize_t T = R.shape[0]
    cdef Py_ssize_t t, j
    cdef bint write = out is not None
    cdef double c11 = theta[13], c21 = theta[14], c22 = theta[15]
    cdef double am = theta[16], aw = theta[17], bm = theta[18], bw = theta[19]
    cdef double ccm = c11 * c11 + c21 * c21, ccw = c22 * c22, ccmw = c21 * c22
    cdef double a2m = am * am, a2w = aw * aw, amw = am * aw
    cdef double b2m = bm * bm, b2w = bw * bw, bmw = bm * bw
    cdef double hm = h1[0], hw = h1[1], hmw = h1[2]
    cdef double em = 0.0, ew = 0.0
    cdef double xw, xi, xs, dw, di, phi, mum, muw, det, quad, ll, total = 0.0
    cdef long n_clamped = 0
    cdef int status = 0
    cdef Py_ssize_t t_bad = -1

    with nogil:
        for t in range(T):
            if t > 0:
                hm = ccm + a2m * em * em + b2m * hm
                hw = ccw + a2w * ew * ew + b2w * hw
                hmw = ccmw + amw * em * ew + bmw * hmw
            xw = 0.0
            for j in range(5):
                xw = xw + theta[j] * Z[t, j]
            xi = 0.0
            xs = 0.0
            for j in range(4):
                xi = xi + theta[5 + j] * Zi[t, j]
                xs = xs + theta[9 + j] * Zs[t, j]
            dw = exp(_clamp(xw, clamp, &n_clamped))
            di = exp(_clamp(xi, clamp, &n_clamped))
            phi = 1.0 - exp(-xs * xs)
            mum = phi * dw * hmw + (1.0 - phi) * di * hm
            muw = dw * hw
            em = R[t, 0] - mum
            ew = R[t, 1] - muw
            det = hm * hw - hmw * hmw
            if not (isfinite(det) and isfinite(em) and isfinite(ew)):
                status = 2
                t_bad = t
                break
            if det < DET_FLOOR:
                status = 1
                t_bad = t
                break
            quad = (hw * em * em - 2.0 * hmw * em * ew + hm * ew * ew) / det
            ll = -LOG2PI - 0.5 * log(det) - 0.5 * quad
            total = total + ll
            if write:
                out[t, 0] = dw
                out[t, 1] = di
                out[t, 2] = phi
                out[t, 3] = hm
                out[t, 4] = hw
                out[t, 5] = hmw
                out[t, 6] = em
                out[t, 7] = ew
                out[t, 8] = ll
    return status, t_bad, n_clamped, total


def segment_dp(const double[::1] y, int max_breaks, int h, double tol):
    """Globally SSR-optimal partitions of ``y`` for 0..max_breaks breaks.

    Returns ``(ssr, breaks)`` where ``ssr[m]`` is the minimal SSR with ``m``
    breaks and ``breaks[m, :m]`` the break dates (last index of each regime,
    1-based). Infeasible ``m`` have ``ssr = inf``. Among partitions within
    ``tol`` of the optimum the lexicographically smallest is chosen.
    """
    cdef Py_ssize_t T = y.shape[0]
    cdef Py_ssize_t M = max_breaks
    cdef Py_ssize_t i, j, k, b, jmax
    cdef double s, q, c, best
    cdef cnp.ndarray[cnp.float64_t, ndim=1] S1a = np.zeros(T + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] S2a = np.zeros(T + 1)
    cdef double[::1] S1 = S1a
    cdef double[::1] S2 = S2a
    cdef cnp.ndarray[cnp.float64_t, ndim=2] costa = np.full((M + 1, T + 1), np.inf)
    cdef double[:, ::1] cost = costa
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ssr_out = np.full(M + 1, np.inf)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] brk = np.full((M + 1, max(M, 1)), -1, dtype=np.int64)

    for i in range(T):
        S1[i + 1] = S1[i] + y[i]
        S2[i + 1] = S2[i] + y[i] * y[i]

    with nogil:
        # cost[k, i]: best SSR of y[i:] split into k+1 segments of length >= h
        for i in range(T - h + 1):
            cost[0, i] = _ssr(S1, S2, i, T - 1)
        for k in range(1, M + 1):
            for i in range(T - (k + 1) * h + 1):
                best = INFINITY
                jmax = T - 1 - k * h
                for j in range(i + h - 1, jmax + 1):
                    c = _ssr(S1, S2, i, j) + cost[k - 1, j + 1]
                    if c < best:
                        best = c
                cost[k, i] = best

    for k in range(M + 1):
        if not isfinite(cost[k, 0]):
            continue
        ssr_out[k] = cost[k, 0]
        i = 0
        for b in range(k, 0, -1):
            best = cost[b, i] + tol
            jmax = T - 1 - b * h
            for j in range(i + h - 1, jmax + 1):
                c = _ssr(S1, S2, i, j) + cost[b - 1, j + 1]
                if c <= best:
                    brk[k, k - b] = j + 1
                    i = j + 1
                    break
    return ssr_out, brk


cdef inline double _ssr(double[::1] S1, double[::1] S2, Py_ssize_t i, Py_ssize_t j) nogil:
    cdef double n = j - i + 1
    cdef double s = S1[j + 1] - S1[i]
    cdef double v = (S2[j + 1] - S2[i]) - s * s / n
    if v < 0.0:
        return 0.0
    return v
