"""Simulated learned representations and checks of what a correct learner must preserve.

A :class:`RepresentationMap` stands in for a learned encoder composed with
the true demixer: it acts on the latent ``z`` block by block.  With zero
contamination it is one of the maps under which the blanket partition is
identified, so adaptation run on its output must give the same posteriors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.kernel_ridge import KernelRidge
from sklearn.model_selection import KFold

from . import rng as _rng
from .adapt import fit_source_conditionals, fit_target, posterior
from .graph import BlanketPartition, blanket_partition
from .sem import TARGET, ModelError, MultiDomainDataset, SemModel, sample_domain

BLOCKS = ("pa", "ch", "sps", "comp")


class MapError(ValueError):
    pass


@dataclass
class RepresentationMap:
    """Per-block invertible transforms plus optional off-block leakage.

    Gaussian blocks carry a square matrix and optionally an elementwise
    monotone warp ``v + slope * tanh(v)`` applied after it.  Discrete blocks
    carry a permutation of the block's joint configurations.
    """

    partition: BlanketPartition
    backend: str
    transforms: dict
    warp: dict = field(default_factory=dict)
    cross_contamination: float = 0.0
    leakage: np.ndarray | None = None
    arity: tuple = ()

    def __post_init__(self):
        for name in BLOCKS:
            nodes = getattr(self.partition, name)
            t = self.transforms.get(name)
            if not nodes:
                continue
            if self.backend == "gaussian":
                t = np.asarray(t, dtype=np.float64)
                if t.shape != (len(nodes), len(nodes)):
                    raise MapError(f"{name} transform must be {len(nodes)}x{len(nodes)}")
                if abs(np.linalg.det(t)) <= 1e-6:
                    raise MapError(f"{name} transform is not invertible")
                self.transforms[name] = t
                if self.warp.get(name) is not None and np.any(np.asarray(self.warp[name]) <= -1.0):
                    raise MapError("warp slopes must exceed -1 to stay monotone")
            else:
                size = int(np.prod([self.arity[v] for v in nodes]))
                perm = np.asarray(t, dtype=np.int64)
                if sorted(perm.tolist()) != list(range(size)):
                    raise MapError(f"{name} transform is not a bijection of {size} configurations")
                self.transforms[name] = perm

    @property
    def dim(self) -> int:
        return sum(len(getattr(self.partition, b)) for b in BLOCKS)

    @property
    def is_linear(self) -> bool:
        return not any(w is not None and np.any(np.asarray(w) != 0) for w in self.warp.values())

    def to_json(self) -> dict:
        return {"partition": self.partition.to_json(), "backend": self.backend,
                "transforms": {k: np.asarray(v).tolist() for k, v in self.transforms.items()},
                "warp": {k: (None if v is None else np.asarray(v).tolist()) for k, v in self.warp.items()},
                "cross_contamination": self.cross_contamination,
                "leakage": None if self.leakage is None else self.leakage.tolist(),
                "arity": list(self.arity)}


def identity_map(partition: BlanketPartition, backend: str = "gaussian", arity=()) -> RepresentationMap:
    tr = {}
    for name in BLOCKS:
        nodes = getattr(partition, name)
        if backend == "gaussian":
            tr[name] = np.eye(len(nodes))
        else:
            tr[name] = np.arange(int(np.prod([arity[v] for v in nodes])) if nodes else 1)
    return RepresentationMap(partition, backend, tr, arity=tuple(arity))


def random_map(partition: BlanketPartition, backend: str = "gaussian", *, seed: int = 0,
               contamination: float = 0.0, warp: bool = False, arity=()) -> RepresentationMap:
    """A random block map; well-conditioned matrices or uniform permutations."""
    g = _rng.generator(seed, 23)
    tr, wp = {}, {}
    for name in BLOCKS:
        nodes = getattr(partition, name)
        k = len(nodes)
        if backend == "gaussian":
            q, _ = np.linalg.qr(g.normal(size=(k, k))) if k else (np.eye(0), None)
            tr[name] = q @ np.diag(g.uniform(0.5, 2.0, k)) @ np.linalg.qr(g.normal(size=(k, k)))[0] if k else q
            wp[name] = g.uniform(0.2, 1.0, k) if warp and k else None
        else:
            size = int(np.prod([arity[v] for v in nodes])) if nodes else 1
            tr[name] = g.permutation(size)
    mb = partition.mb
    src = partition.comp if partition.comp else mb
    leak = g.normal(size=(len(mb), len(src))) if contamination else None
    if leak is not None and not partition.comp:
        # no complement: leak each blanket coordinate into the others instead
        np.fill_diagonal(leak, 0.0)
    return RepresentationMap(partition, backend, tr, wp, float(contamination), leak, tuple(arity))


def _check_dim(rmap: RepresentationMap, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != rmap.dim:
        raise MapError(f"expected samples with {rmap.dim} coordinates")
    return z


def _decode(index: np.ndarray, nodes: tuple, arity) -> np.ndarray:
    dims = tuple(arity[v] for v in nodes)
    return np.stack(np.unravel_index(index, dims), axis=1).astype(np.float64)


def _encode(z: np.ndarray, nodes: tuple, arity) -> np.ndarray:
    dims = tuple(arity[v] for v in nodes)
    return np.ravel_multi_index(tuple(np.rint(z[:, v]).astype(np.int64) for v in nodes), dims)


def apply_map(rmap: RepresentationMap, z) -> np.ndarray:
    z = _check_dim(rmap, z)
    out = z.copy()
    part = rmap.partition
    if rmap.backend == "gaussian":
        for name in BLOCKS:
            nodes = list(getattr(part, name))
            if not nodes:
                continue
            v = z[:, nodes] @ rmap.transforms[name].T
            w = rmap.warp.get(name)
            if w is not None:
                v = v + np.asarray(w) * np.tanh(v)
            out[:, nodes] = v
        if rmap.cross_contamination and rmap.leakage is not None:
            src = list(part.comp) if part.comp else list(part.mb)
            out[:, list(part.mb)] += rmap.cross_contamination * (z[:, src] @ rmap.leakage.T)
        return out
    for name in BLOCKS:
        nodes = getattr(part, name)
        if not nodes:
            continue
        idx = _encode(z, nodes, rmap.arity)
        if rmap.cross_contamination and name != "comp":
            # shift the configuration by a hash of the complement: deliberately not a block map
            src = part.comp if part.comp else tuple(v for v in part.mb if v not in nodes)
            if src:
                size = len(rmap.transforms[name])
                shift = max(1, int(round(rmap.cross_contamination * size)))
                idx = (idx + shift * (_encode(z, src, rmap.arity) % 2)) % size
        out[:, list(nodes)] = _decode(rmap.transforms[name][idx], nodes, rmap.arity)
    return out


def invert(rmap: RepresentationMap, zhat) -> np.ndarray:
    zhat = _check_dim(rmap, zhat)
    part = rmap.partition
    if rmap.backend != "gaussian":
        if rmap.cross_contamination:
            raise MapError("contaminated discrete maps are not invertible")
        out = zhat.copy()
        for name in BLOCKS:
            nodes = getattr(part, name)
            if nodes:
                inv = np.argsort(rmap.transforms[name])
                out[:, list(nodes)] = _decode(inv[_encode(zhat, nodes, rmap.arity)], nodes, rmap.arity)
        return out
    out = zhat.copy()

    def unwarp(name, v):
        w = rmap.warp.get(name)
        if w is None:
            return v
        w = np.asarray(w)
        x = v.copy()
        for _ in range(100):  # Newton on x + w tanh x = v, derivative >= 1 - |w| > 0
            step = (x + w * np.tanh(x) - v) / (1.0 + w * (1.0 - np.tanh(x) ** 2))
            x -= step
            if np.max(np.abs(step), initial=0.0) < 1e-15 * max(1.0, np.abs(v).max(initial=0.0)):
                break
        return x

    comp = list(part.comp)
    if comp:
        out[:, comp] = np.linalg.solve(rmap.transforms["comp"], unwarp("comp", zhat[:, comp]).T).T
    mb = list(part.mb)
    if rmap.cross_contamination and rmap.leakage is not None and not comp:
        raise MapError("maps leaking within the blanket are not inverted")
    v = zhat[:, mb].copy()
    if rmap.cross_contamination and rmap.leakage is not None:
        v -= rmap.cross_contamination * (out[:, comp] @ rmap.leakage.T)
    tmp = zhat.copy()
    tmp[:, mb] = v
    for name in ("pa", "ch", "sps"):
        nodes = list(getattr(part, name))
        if nodes:
            out[:, nodes] = np.linalg.solve(rmap.transforms[name], unwarp(name, tmp[:, nodes]).T).T
    return out


# --------------------------------------------------------------------------
# bidirectional predictability
# --------------------------------------------------------------------------

def _std(a: np.ndarray) -> np.ndarray:
    sd = a.std(axis=0)
    if np.any(sd <= 1e-12 * max(1.0, np.abs(a).max())):
        raise MapError("degenerate (constant) block")
    return (a - a.mean(axis=0)) / sd


def _median_gamma(x: np.ndarray, cap: int = 1000) -> float:
    sub = x[:cap]
    d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=-1)
    med = np.median(d2[np.triu_indices(len(sub), 1)])
    return 1.0 / max(med, 1e-12)


def _oof_r2(x: np.ndarray, y: np.ndarray, ridge: float, folds: int, seed: int) -> float:
    gamma = _median_gamma(x)
    pred = np.empty_like(y)
    for tr, te in KFold(folds, shuffle=True, random_state=seed).split(x):
        kr = KernelRidge(alpha=ridge, kernel="rbf", gamma=gamma).fit(x[tr], y[tr])
        pred[te] = kr.predict(x[te])
    sse = np.sum((y - pred) ** 2, axis=0)
    sst = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    return float(np.mean(np.clip(1.0 - sse / sst, 0.0, 1.0)))


def subspace_fit(a, b, *, ridge: float = 1e-3, folds: int = 5, seed: int = 0) -> float:
    """Min over both directions of the out-of-fold kernel-ridge R^2, averaged over coordinates."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if len(a) != len(b):
        raise MapError("sample counts differ")
    if len(a) < 500:
        raise MapError("need at least 500 samples")
    a, b = _std(a), _std(b)
    return min(_oof_r2(a, b, ridge, folds, seed), _oof_r2(b, a, ridge, folds, seed))


# --------------------------------------------------------------------------
# posterior invariance
# --------------------------------------------------------------------------

@dataclass
class InvarianceReport:
    max_deviation: float
    argmax_agreement: float
    n_test: int
    converged: tuple
    contamination: float

    def to_json(self) -> dict:
        return {"max_deviation": self.max_deviation, "argmax_agreement": self.argmax_agreement,
                "n_test": self.n_test, "converged": list(self.converged),
                "contamination": self.contamination}


Pipeline = Callable[[MultiDomainDataset, BlanketPartition], Callable[[np.ndarray], np.ndarray]]


def adapt_pipeline(dataset: MultiDomainDataset, partition: BlanketPartition, **fit_kw):
    """Fit source conditionals and the target solution on latent samples.

    Returns ``(predict, solution)`` where ``predict`` maps latent points to
    class posteriors.
    """
    fam = fit_source_conditionals(dataset, partition)
    sol = fit_target(fam, dataset.target, **fit_kw)
    return (lambda z: posterior(sol, fam, z)), sol


def latent_dataset(model: SemModel, m_source: int, m_target: int, seed: int | None = None):
    """Samples of ``z`` (not ``x``) for every domain, as a dataset."""
    sources = []
    for u in range(model.M):
        _, y, z = sample_domain(model, u, m_source, seed)
        sources.append((u, z, y))
    _, yt, zt = sample_domain(model, TARGET, m_target, seed)
    prov = {"seed": int(model.seed if seed is None else seed), "model_hash": model.model_hash(),
            "backend": model.backend, "C": model.C,
            "arity": {str(v): int(a) for v, a in enumerate(model.arity)},
            "change_dim": model.meta.get("change_dim"), "space": "latent"}
    return MultiDomainDataset(sources, zt, prov, yt)


def map_dataset(rmap: RepresentationMap, ds: MultiDomainDataset) -> MultiDomainDataset:
    sources = [(u, apply_map(rmap, z), y) for u, z, y in ds.sources]
    return MultiDomainDataset(sources, apply_map(rmap, ds.target), dict(ds.provenance),
                              ds.target_labels)


def posterior_invariance_test(model: SemModel, pipeline=None, rmap: RepresentationMap | None = None,
                              *, m_source: int = 3000, m_target: int = 5000, n_test: int = 1000,
                              seed: int | None = None, allow_contaminated: bool = False,
                              reference=None) -> InvarianceReport:
    """Run adaptation on true and on mapped latents; compare posteriors on test points.

    ``reference`` may carry a previous ``(predict, solution)`` on the true
    latents so that several maps can share one baseline run.
    """
    part = blanket_partition(model.dag)
    pipeline = pipeline or adapt_pipeline
    rmap = rmap or identity_map(part, model.backend, model.arity)
    if rmap.cross_contamination and not allow_contaminated:
        raise MapError("posterior invariance is only claimed for uncontaminated maps")
    if model.backend == "gaussian" and not rmap.is_linear:
        raise MapError("gaussian maps must be block-linear here")
    ds = latent_dataset(model, m_source, m_target, seed)
    _, _, ztest = sample_domain(model, TARGET, n_test, seed, start=1 << 41)
    pred_true, sol_true = reference if reference is not None else pipeline(ds, part)
    pred_map, sol_map = pipeline(map_dataset(rmap, ds), part)
    for s in (sol_true, sol_map):
        if not s.converged:
            raise ModelError("adaptation did not converge")
    p0 = pred_true(ztest)
    p1 = pred_map(apply_map(rmap, ztest))
    dev = float(np.max(np.abs(p0 - p1)))
    agree = float(np.mean(np.argmax(p0, axis=1) == np.argmax(p1, axis=1)))
    return InvarianceReport(dev, agree, n_test, (bool(sol_true.converged), bool(sol_map.converged)),
                            rmap.cross_contamination)
