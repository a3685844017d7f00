import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbda.benchmark import BenchmarkConfig, generate_model
from mbda.graph import BlanketPartition, blanket_partition
from mbda.identverify import (MapError, RepresentationMap, apply_map, identity_map, invert,
                              posterior_invariance_test, random_map, subspace_fit)

PART = BlanketPartition(pa=(1,), ch=(0, 4), sps=(3,), comp=(2, 5))
ARITY = (3, 2, 2, 2, 2, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.sampled_from([0.0, 0.3]))
def test_gaussian_maps_invert(seed, warp, contamination):
    rmap = random_map(PART, seed=seed, warp=warp, contamination=contamination)
    z = np.random.default_rng(seed).normal(size=(50, 6)) * 2
    np.testing.assert_allclose(invert(rmap, apply_map(rmap, z)), z, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_discrete_maps_are_blockwise_bijections(seed):
    rmap = random_map(PART, "discrete", seed=seed, arity=ARITY)
    g = np.random.default_rng(seed)
    z = np.stack([g.integers(0, k, 200) for k in ARITY], axis=1).astype(float)
    out = apply_map(rmap, z)
    np.testing.assert_array_equal(invert(rmap, out), z)
    # each block of the output depends on that block of the input only
    for name in ("pa", "ch", "sps", "comp"):
        nodes = list(getattr(PART, name))
        keys = {}
        for zi, oi in zip(map(tuple, z[:, nodes]), map(tuple, out[:, nodes])):
            assert keys.setdefault(zi, oi) == oi


def test_contaminated_discrete_map_mixes_blocks():
    rmap = random_map(PART, "discrete", seed=0, contamination=0.3, arity=ARITY)
    a = np.zeros((1, 6))
    b = a.copy()
    b[0, 2] = 1  # change only a complement coordinate
    assert not np.array_equal(apply_map(rmap, a)[0, [0, 1, 3, 4]], apply_map(rmap, b)[0, [0, 1, 3, 4]])
    with pytest.raises(MapError):
        invert(rmap, a)


def test_map_validation():
    with pytest.raises(MapError):
        RepresentationMap(PART, "gaussian", {"pa": np.eye(1), "ch": np.zeros((2, 2)),
                                             "sps": np.eye(1), "comp": np.eye(2)})
    with pytest.raises(MapError):
        RepresentationMap(PART, "discrete", {"pa": [0, 0], "ch": np.arange(6), "sps": [0, 1],
                                             "comp": np.arange(6)}, arity=ARITY)
    with pytest.raises(MapError):
        apply_map(identity_map(PART), np.zeros((3, 5)))
    assert identity_map(PART).to_json()["transforms"]["ch"] == [[1.0, 0.0], [0.0, 1.0]]


def test_subspace_fit_scores():
    g = np.random.default_rng(0)
    a = g.normal(size=(1500, 2))
    assert subspace_fit(a, g.normal(size=(1500, 2))) < 0.02
    warped = np.tanh(a @ np.array([[1.0, 0.4], [-0.3, 1.2]])) + 0.5 * a
    assert subspace_fit(a, warped) > 0.99
    # one direction predictable, the other not: the score takes the worse one
    assert subspace_fit(a, a[:, :1]) < 0.6
    with pytest.raises(MapError):
        subspace_fit(a[:100], a[:100])


@pytest.fixture(scope="module")
def discrete_model():
    return generate_model(BenchmarkConfig(scenario="general-shift", backend="discrete", n=5, C=2, M=6,
                                          seed=0, ch_arity=4, change_dim=2, max_sps=2,
                                          require_assumption3=False))


def test_invariance_under_relabeling(discrete_model):
    part = blanket_partition(discrete_model.dag)
    rmap = random_map(part, "discrete", seed=3, arity=discrete_model.arity)
    rep = posterior_invariance_test(discrete_model, rmap=rmap, seed=1)
    assert rep.max_deviation <= 1e-8 and rep.argmax_agreement == 1.0
    assert rep.to_json()["n_test"] == 1000


def test_contaminated_maps_need_opt_in(discrete_model):
    part = blanket_partition(discrete_model.dag)
    rmap = random_map(part, "discrete", seed=3, contamination=0.3, arity=discrete_model.arity)
    with pytest.raises(MapError):
        posterior_invariance_test(discrete_model, rmap=rmap)
    rep = posterior_invariance_test(discrete_model, rmap=rmap, seed=1, allow_contaminated=True)
    assert rep.max_deviation > 1e-2


def test_self_score_close_to_one():
    a = np.random.default_rng(0).normal(size=(2000, 2))
    assert subspace_fit(a, a) > 1 - 2e-3


@pytest.mark.xfail(strict=True, reason="out-of-fold ridge smoothing leaves a gap of a few 1e-4 at 2000 samples")
def test_self_score_within_1e_6():
    a = np.random.default_rng(0).normal(size=(2000, 2))
    assert subspace_fit(a, a) >= 1 - 1e-6
