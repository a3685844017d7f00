# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t _M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t _M2 = 0x94D049BB133111EBULL
cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t _P_DOMAIN = 0xD1B54A32D192ED03ULL
cdef uint64_t _P_STREAM = 0xC2B2AE3D27D4EB4FULL


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * _M1
    z = (z ^ (z >> 27)) * _M2
    return z ^ (z >> 31)


def counter_uniforms(uint64_t seed, uint64_t domain, uint64_t start, Py_ssize_t count,
                     Py_ssize_t n_streams):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((count, n_streams))
    cdef double[:, ::1] o = out
    cdef uint64_t k0 = _mix(seed + _GOLDEN)
    cdef uint64_t k1 = _mix(k0 ^ (domain * _P_DOMAIN + 1))
    cdef uint64_t h, s
    cdef Py_ssize_t i, j
    cdef double scale = 2.0 ** -53
    with nogil:
        for i in range(count):
            s = (start + <uint64_t>i) * _GOLDEN
            for j in range(n_streams):
                h = _mix(k1 + _mix(s ^ ((<uint64_t>j + 1) * _P_STREAM)))
                o[i, j] = (<double>(h >> 11) + 0.5) * scale
    return out


def project_simplex(v):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] arr = np.ascontiguousarray(np.atleast_2d(v), dtype=np.float64)
    cdef Py_ssize_t n = arr.shape[0], d = arr.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] srt = -np.sort(-arr, axis=1)
    cdef double[:, ::1] a = arr
    cdef double[:, ::1] o = out
    cdef double[:, ::1] u = srt
    cdef Py_ssize_t r, j, rho
    cdef double css, theta, rho_css, x
    with nogil:
        for r in range(n):
            css = -1.0
            rho = 0
            rho_css = u[r, 0] - 1.0
            for j in range(d):
                css = css + u[r, j]
                if u[r, j] - css / (j + 1) > 0:
                    rho = j
                    rho_css = css
            theta = rho_css / (rho + 1)
            for j in range(d):
                x = a[r, j] - theta
                o[r, j] = x if x > 0.0 else 0.0
    return out


cdef int _solve(double[:, ::1] K, double[::1] b, Py_ssize_t m) nogil:
    """In-place Gaussian elimination with partial pivoting; solution in ``b``."""
    cdef Py_ssize_t i, j, k, piv
    cdef double best, t, f
    for k in range(m):
        piv = k
        best = fabs(K[k, k])
        for i in range(k + 1, m):
            if fabs(K[i, k]) > best:
                best = fabs(K[i, k])
                piv = i
        if best == 0.0:
            return -1
        if piv != k:
            for j in range(m):
                t = K[k, j]; K[k, j] = K[piv, j]; K[piv, j] = t
            t = b[k]; b[k] = b[piv]; b[piv] = t
        for i in range(k + 1, m):
            f = K[i, k] / K[k, k]
            if f != 0.0:
                for j in range(k, m):
                    K[i, j] -= f * K[k, j]
                b[i] -= f * b[k]
    for k in range(m - 1, -1, -1):
        t = b[k]
        for j in range(k + 1, m):
            t -= K[k, j] * b[j]
        b[k] = t / K[k, k]
    return 0


def simplex_qp(H, g, x0=None, double tol=1e-13, Py_ssize_t max_iter=1000):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Ha = np.ascontiguousarray(H, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ga = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t d = ga.shape[0]
    if d == 1:
        return np.ones(1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa
    if x0 is None:
        xa = np.full(d, 1.0 / d)
    else:
        xa = np.ascontiguousarray(project_simplex(x0)[0])
    cdef double scale = max(np.abs(Ha).max(), np.abs(ga).max(), 1e-300)
    cdef double reg = 1e-14 * max(np.trace(Ha) / d, 1e-300)
    cdef double[:, ::1] Hm = Ha
    cdef double[::1] gm = ga
    cdef double[::1] x = xa
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] free_a = (xa > 0.0).astype(np.uint8)
    cdef unsigned char[::1] free = free_a
    cdef cnp.ndarray[cnp.intp_t, ndim=1] F_a = np.empty(d, dtype=np.intp)
    cdef Py_ssize_t[::1] F = F_a
    cdef double[:, ::1] K = np.empty((d + 1, d + 1))
    cdef double[::1] rhs = np.empty(d + 1)
    cdef double[::1] grad = np.empty(d)
    cdef Py_ssize_t it, i, j, k, jmin, nfree
    cdef double nu, mu, mumin, t, ratio, step, val, best
    cdef bint feasible
    for it in range(max_iter):
        k = 0
        for i in range(d):
            if free[i]:
                F[k] = i
                k += 1
        for i in range(k):
            for j in range(k):
                K[i, j] = Hm[F[i], F[j]]
            K[i, i] += reg
            K[i, k] = 1.0
            K[k, i] = 1.0
            rhs[i] = gm[F[i]]
        K[k, k] = 0.0
        rhs[k] = 1.0
        if _solve(K, rhs, k + 1) != 0:
            # singular system: fall back to least squares on a fresh copy
            Kf = np.zeros((k + 1, k + 1))
            Fi = F_a[:k]
            Kf[:k, :k] = Ha[np.ix_(Fi, Fi)] + reg * np.eye(k)
            Kf[:k, k] = 1.0
            Kf[k, :k] = 1.0
            sol = np.linalg.lstsq(Kf, np.append(ga[Fi], 1.0), rcond=None)[0]
            for i in range(k + 1):
                rhs[i] = sol[i]
        nu = rhs[k]
        feasible = True
        for i in range(k):
            if rhs[i] < 0.0:
                feasible = False
                break
        if feasible:
            for i in range(d):
                x[i] = 0.0
            for i in range(k):
                x[F[i]] = rhs[i]
            for i in range(d):
                val = 0.0
                for j in range(d):
                    val += Hm[i, j] * x[j]
                grad[i] = val - gm[i]
            jmin = -1
            mumin = INFINITY
            for i in range(d):
                if not free[i]:
                    mu = grad[i] + nu
                    if mu < mumin:
                        mumin = mu
                        jmin = i
            if jmin < 0 or mumin >= -tol * scale:
                return xa
            free[jmin] = 1
        else:
            t = 1.0
            for i in range(k):
                step = rhs[i] - x[F[i]]
                if step < 0.0:
                    ratio = x[F[i]] / -step
                    if ratio < t:
                        t = ratio
            nfree = 0
            for i in range(k):
                step = rhs[i] - x[F[i]]
                val = x[F[i]] + t * step
                if step < 0.0 and x[F[i]] / -step <= t:
                    val = 0.0
                    free[F[i]] = 0
                else:
                    nfree += 1
                x[F[i]] = val if val > 0.0 else 0.0
            if nfree == 0:
                jmin = 0
                best = INFINITY
                for i in range(d):
                    val = 0.5 * Hm[i, i] - gm[i]
                    if val < best:
                        best = val
                        jmin = i
                for i in range(d):
                    x[i] = 0.0
                    free[i] = 0
                x[jmin] = 1.0
                free[jmin] = 1
    return xa
