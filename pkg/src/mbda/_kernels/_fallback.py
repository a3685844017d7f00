"""Pure NumPy implementations of the hot kernels.

These are the reference versions; ``_core.pyx`` mirrors them operation for
operation.  The RNG kernel is integer-only, so both backends agree bitwise.
"""
from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_P_DOMAIN = np.uint64(0xD1B54A32D192ED03)
_P_STREAM = np.uint64(0xC2B2AE3D27D4EB4F)
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)
_SH11 = np.uint64(11)
_ONE = np.uint64(1)


def _mix(z):
    z = (z ^ (z >> _SH30)) * _M1
    z = (z ^ (z >> _SH27)) * _M2
    return z ^ (z >> _SH31)


def counter_uniforms(seed: int, domain: int, start: int, count: int, n_streams: int) -> np.ndarray:
    """Uniforms in (0, 1) keyed by ``(seed, domain, sample, stream)``.

    Row ``k`` holds sample index ``start + k``; column ``j`` is stream ``j``.
    """
    with np.errstate(over="ignore"):
        s = np.array([seed], dtype=np.uint64)
        k0 = _mix(s + _GOLDEN)
        k1 = _mix(k0 ^ (np.array([domain], dtype=np.uint64) * _P_DOMAIN + _ONE))
        samples = np.arange(start, start + count, dtype=np.uint64)[:, None]
        streams = np.arange(n_streams, dtype=np.uint64)[None, :]
        h = _mix(k1 + _mix((samples * _GOLDEN) ^ ((streams + _ONE) * _P_STREAM)))
    return ((h >> _SH11).astype(np.float64) + 0.5) * (2.0 ** -53)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    d = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, d + 1)
    cond = u - css / idx > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def simplex_qp(H: np.ndarray, g: np.ndarray, x0: np.ndarray | None = None,
               tol: float = 1e-13, max_iter: int = 1000) -> np.ndarray:
    """Minimise ``0.5 x'Hx - g'x`` over the probability simplex (active set).

    ``H`` must be symmetric positive semi-definite.  A tiny ridge keeps the
    equality-constrained subproblems solvable when ``H`` is singular.
    """
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d = g.shape[0]
    if d == 1:
        return np.ones(1)
    if x0 is None:
        x = np.full(d, 1.0 / d)
    else:
        x = project_simplex(x0)[0]
    scale = max(np.abs(H).max(), np.abs(g).max(), 1e-300)
    reg = 1e-14 * max(np.trace(H) / d, 1e-300)
    free = x > 0.0
    for _ in range(max_iter):
        F = np.flatnonzero(free)
        k = F.size
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = H[np.ix_(F, F)] + reg * np.eye(k)
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.append(g[F], 1.0)
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p, nu = sol[:k], sol[k]
        if np.all(p >= 0.0):
            x = np.zeros(d)
            x[F] = p
            grad = H @ x - g
            W = np.flatnonzero(~free)
            if W.size == 0:
                return x
            mu = grad[W] + nu
            j = np.argmin(mu)
            if mu[j] >= -tol * scale:
                return x
            free[W[j]] = True
        else:
            step = p - x[F]
            neg = step < 0.0
            ratios = np.full(k, np.inf)
            ratios[neg] = x[F][neg] / -step[neg]
            t = min(1.0, ratios.min())
            xf = x[F] + t * step
            blocking = ratios <= t
            xf[blocking] = 0.0
            xf = np.maximum(xf, 0.0)
            x = np.zeros(d)
            x[F] = xf
            free[F[blocking]] = False
            if not free.any():
                # degenerate step; restart from the best vertex
                free[np.argmin(0.5 * np.diag(H) - g)] = True
                x = free.astype(np.float64)
    return x
