import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mbda import _kernels
from mbda._kernels import _fallback

MASK = (1 << 64) - 1

BACKENDS = [_fallback]
if _kernels.BACKEND == "cython":
    from mbda._kernels import _core

    BACKENDS.append(_core)


def _mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _uniform_int(seed, domain, sample, stream):
    k0 = _mix((seed + 0x9E3779B97F4A7C15) & MASK)
    k1 = _mix(k0 ^ ((domain * 0xD1B54A32D192ED03 + 1) & MASK))
    inner = _mix(((sample * 0x9E3779B97F4A7C15) & MASK) ^ (((stream + 1) * 0xC2B2AE3D27D4EB4F) & MASK))
    h = _mix((k1 + inner) & MASK)
    return ((h >> 11) + 0.5) * 2.0 ** -53


def test_compiled_core_is_built():
    # the package ships a compiled extension; install builds it
    assert _kernels.BACKEND == "cython"


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_counter_uniforms_match_integer_reference(impl):
    for seed, dom in [(0, 0), (12345, 3), (MASK, 7)]:
        got = impl.counter_uniforms(seed, dom, 5, 4, 3)
        want = [[_uniform_int(seed, dom, 5 + k, j) for j in range(3)] for k in range(4)]
        assert got.tolist() == want


@settings(max_examples=50, deadline=None)
@given(st.integers(0, MASK), st.integers(0, 1000), st.integers(0, 1 << 40),
       st.integers(1, 40), st.integers(1, 5), st.integers(0, 39))
def test_counter_uniforms_batching_invariant(seed, dom, start, count, streams, cut):
    cut = min(cut, count)
    for impl in BACKENDS:
        whole = impl.counter_uniforms(seed, dom, start, count, streams)
        parts = np.vstack([impl.counter_uniforms(seed, dom, start, cut, streams),
                           impl.counter_uniforms(seed, dom, start + cut, count - cut, streams)]) \
            if 0 < cut < count else whole
        assert np.array_equal(whole, parts)
        assert np.all((whole > 0) & (whole < 1))
    if len(BACKENDS) == 2:
        assert np.array_equal(BACKENDS[0].counter_uniforms(seed, dom, start, count, streams),
                              BACKENDS[1].counter_uniforms(seed, dom, start, count, streams))


def test_counter_uniforms_look_uniform():
    u = _kernels.counter_uniforms(3, 1, 0, 200_000, 2)
    assert abs(u.mean() - 0.5) < 3e-3
    assert abs(np.corrcoef(u[:, 0], u[:, 1])[0, 1]) < 1e-2
    hist = np.histogram(u[:, 0], bins=20, range=(0, 1))[0]
    assert hist.min() > 0.95 * 10_000


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_project_simplex_known_values(impl):
    np.testing.assert_allclose(impl.project_simplex(np.array([[0.5, 0.5, 0.5]])), [[1 / 3] * 3])
    np.testing.assert_allclose(impl.project_simplex(np.array([[2.0, 0.0]])), [[1.0, 0.0]])
    np.testing.assert_allclose(impl.project_simplex(np.array([[0.6, 0.2]])), [[0.7, 0.3]])
    np.testing.assert_allclose(impl.project_simplex(np.array([[0.1, 0.2, 0.7]])), [[0.1, 0.2, 0.7]])


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 7)), elements=finite))
def test_project_simplex_is_the_projection(v):
    for impl in BACKENDS:
        p = impl.project_simplex(v)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
        # optimality: v - p is constant on the support and no larger off it
        r = v - p
        for row, pr in zip(r, p):
            on = pr > 0
            assert np.ptp(row[on]) < 1e-9
            if np.any(~on):
                assert row[~on].max() <= row[on].min() + 1e-9
    if len(BACKENDS) == 2:
        np.testing.assert_allclose(BACKENDS[0].project_simplex(v), BACKENDS[1].project_simplex(v),
                                   atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1), st.booleans())
def test_simplex_qp_satisfies_kkt(d, seed, singular):
    g = np.random.default_rng(seed)
    A = g.normal(size=(d, max(1, d - 2) if singular else d))
    H = A @ A.T
    q = g.normal(size=d)
    for impl in BACKENDS:
        x = impl.simplex_qp(H, q)
        assert np.all(x >= 0)
        assert abs(x.sum() - 1) < 1e-12
        grad = H @ x - q
        lam = grad[x > 1e-12]
        scale = 1 + np.abs(H).max() + np.abs(q).max()
        assert np.ptp(lam) < 1e-8 * scale
        assert grad.min() >= lam.min() - 1e-8 * scale
    if len(BACKENDS) == 2:
        f = lambda x: 0.5 * x @ H @ x - q @ x
        assert abs(f(BACKENDS[0].simplex_qp(H, q)) - f(BACKENDS[1].simplex_qp(H, q))) < 1e-10 * scale


def test_simplex_qp_interior_solution():
    H = np.diag([1.0, 2.0, 4.0])
    q = np.zeros(3)
    # minimiser of sum h_i x_i^2 / 2 on the simplex is proportional to 1/h
    want = np.array([4.0, 2.0, 1.0]) / 7.0
    np.testing.assert_allclose(_kernels.simplex_qp(H, q), want, atol=1e-13)


def test_fallback_generates_identical_files(tmp_path):
    import os
    import subprocess
    import sys

    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, MBDA_PURE_PYTHON=flag)
        d = tmp_path / f"gen{flag}"
        subprocess.run([sys.executable, "-m", "mbda.cli", "generate", "--seed", "4", "--out", str(d)],
                       env=env, check=True, capture_output=True)
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
        probe = subprocess.run([sys.executable, "-c", "from mbda import _kernels; print(_kernels.BACKEND)"],
                               env=env, check=True, capture_output=True, text=True).stdout.strip()
        assert probe == ("python" if flag == "1" else "cython")
    assert outs[0] == outs[1]
