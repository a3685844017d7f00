"""Target-domain adaptation through the Markov-blanket partition.

The target posterior factorises as

    P(Y=k | x) ∝ P(z_ch | Y=k, z_sps) P(Y=k | z_pa),      z = demixer(x).

Target class conditionals are restricted to mixtures of the source
conditionals (per class, weights on the probability simplex); the mixture
weights and the target label conditional are fitted so that the implied
``P(z_ch | z_pa, z_sps)`` matches the target data.

Mixtures are taken in a fixed parameter space ``h``:

* discrete backend: the conditional tables themselves;
* gaussian backend: natural parameters ``(Lambda, Lambda A, Lambda b_c)`` of
  ``N(z_ch; A z_sps + b_c, Lambda^{-1})``.  Both are closed under invertible
  block-linear reparametrisation, which keeps the posterior invariant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as _rng
from ._kernels import project_simplex, simplex_qp
from .graph import BlanketPartition, Y, blanket_partition
from .sem import (TARGET, MultiDomainDataset, SemModel, exact_joint, softmax_logits)


class AdaptError(ValueError):
    pass


def logsumexp(a: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    """Max-shifted log-sum-exp; columnwise loop because class counts are small."""
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    m = a[0].copy()
    for row in a[1:]:
        np.maximum(m, row, out=m)
    m = np.where(np.isfinite(m), m, 0.0)
    acc = np.zeros_like(m)
    for row in a:
        acc += np.exp(row - m)
    out = np.log(acc) + m
    return np.expand_dims(out, axis) if keepdims else out


# --------------------------------------------------------------------------
# block helpers
# --------------------------------------------------------------------------

def _block_index(z: np.ndarray, nodes: tuple, arity: dict) -> np.ndarray:
    if not nodes:
        return np.zeros(z.shape[0], dtype=np.int64)
    dims = tuple(arity[v] for v in nodes)
    cols = tuple(np.rint(z[:, v]).astype(np.int64) for v in nodes)
    return np.ravel_multi_index(cols, dims)


def _block_size(nodes: tuple, arity: dict) -> int:
    return int(np.prod([arity[v] for v in nodes])) if nodes else 1


def _as_demixer(demixer) -> Callable[[np.ndarray], np.ndarray]:
    if demixer is None:
        return lambda x: np.asarray(x, dtype=np.float64)
    if hasattr(demixer, "inverse"):
        return demixer.inverse
    return demixer


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------

@dataclass
class DiscreteFamily:
    """Per-domain ``P(z_ch | Y, z_sps)`` and ``P(Y | z_pa)`` tables."""

    partition: BlanketPartition
    arity: dict
    C: int
    tables: np.ndarray  # (M, C, S, K), normalised over K
    label: np.ndarray  # (M, P, C), normalised over C
    pooled_label: np.ndarray  # (P, C)
    declared_q: int | None = None
    backend: str = "discrete"

    def __post_init__(self):
        if np.max(np.abs(self.tables.sum(-1) - 1.0)) > 1e-12:
            raise AdaptError("conditional tables must be normalised")
        if np.max(np.abs(self.label.sum(-1) - 1.0)) > 1e-12:
            raise AdaptError("label tables must be normalised")

    @property
    def M(self) -> int:
        return self.tables.shape[0]

    @property
    def q(self) -> int:
        """Changing-parameter dimension: declared by the model, else the full table space."""
        if self.declared_q is not None:
            return max(1, int(self.declared_q))
        S, K = self.tables.shape[2:]
        return max(1, (K - 1) * S)

    def to_json(self) -> dict:
        return {"backend": self.backend, "partition": self.partition.to_json(),
                "arity": {str(k): int(v) for k, v in self.arity.items()}, "C": self.C,
                "tables_shape": list(self.tables.shape), "tables": self.tables.ravel().tolist(),
                "label_shape": list(self.label.shape), "label": self.label.ravel().tolist(),
                "pooled_label": self.pooled_label.ravel().tolist(), "declared_q": self.declared_q}


@dataclass
class GaussianConditional:
    """``N(z_ch; A z_sps + b, cov)`` for one class."""

    A: np.ndarray
    b: np.ndarray
    cov: np.ndarray

    def logpdf(self, z_ch: np.ndarray, z_sps: np.ndarray) -> np.ndarray:
        k = self.b.shape[0]
        if k == 0:
            return np.zeros(z_ch.shape[0])
        mean = z_sps @ self.A.T + self.b
        L = np.linalg.cholesky(self.cov)
        r = np.linalg.solve(L, (z_ch - mean).T)
        return (-0.5 * np.sum(r * r, axis=0) - np.log(np.diag(L)).sum()
                - 0.5 * k * math.log(2 * math.pi))


@dataclass
class GaussianFamily:
    """Per-domain linear-Gaussian child conditionals and softmax label models."""

    partition: BlanketPartition
    C: int
    A: np.ndarray  # (M, |ch|, |sps|)
    b: np.ndarray  # (M, C, |ch|)
    cov: np.ndarray  # (M, |ch|, |ch|)
    label_W: np.ndarray  # (M, C, |pa|)
    label_b: np.ndarray  # (M, C)
    pooled_W: np.ndarray  # (C, |pa|)
    pooled_b: np.ndarray  # (C,)
    backend: str = "gaussian"

    def __post_init__(self):
        for S in self.cov:
            if S.size and np.min(np.linalg.eigvalsh(S)) <= 0:
                raise AdaptError("conditional covariances must be positive definite")
        self.Lam = np.stack([np.linalg.inv(S) for S in self.cov]) if self.cov.size else self.cov.copy()
        self.G = np.einsum("mij,mjk->mik", self.Lam, self.A)
        self.e = np.einsum("mij,mcj->mci", self.Lam, self.b)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        k, s = self.A.shape[1], self.A.shape[2]
        return max(1, k * (k + 1) // 2 + k * s + k)

    def natural_mixture(self, alpha: np.ndarray, c: int):
        Lam = np.einsum("m,mij->ij", alpha, self.Lam)
        G = np.einsum("m,mij->ij", alpha, self.G)
        e = np.einsum("m,mi->i", alpha, self.e[:, c, :])
        return Lam, G, e

    def to_json(self) -> dict:
        arr = lambda a: {"shape": list(a.shape), "data": a.ravel().tolist()}
        return {"backend": self.backend, "partition": self.partition.to_json(), "C": self.C,
                "A": arr(self.A), "b": arr(self.b), "cov": arr(self.cov),
                "label_W": arr(self.label_W), "label_b": arr(self.label_b),
                "pooled_W": arr(self.pooled_W), "pooled_b": arr(self.pooled_b)}


ConditionalFamily = DiscreteFamily | GaussianFamily


def family_from_json(d: dict) -> ConditionalFamily:
    part = BlanketPartition(*(tuple(d["partition"][k]) for k in ("pa", "ch", "sps", "comp")))
    if d["backend"] == "discrete":
        arity = {int(k): int(v) for k, v in d["arity"].items()}
        tables = np.array(d["tables"], float).reshape(d["tables_shape"])
        label = np.array(d["label"], float).reshape(d["label_shape"])
        pooled = np.array(d["pooled_label"], float).reshape(label.shape[1:])
        return DiscreteFamily(part, arity, int(d["C"]), tables, label, pooled, d.get("declared_q"))
    arr = lambda a: np.array(a["data"], float).reshape(a["shape"])
    return GaussianFamily(part, int(d["C"]), arr(d["A"]), arr(d["b"]), arr(d["cov"]),
                          arr(d["label_W"]), arr(d["label_b"]), arr(d["pooled_W"]),
                          arr(d["pooled_b"]))


# --------------------------------------------------------------------------
# exact conditionals from a model
# --------------------------------------------------------------------------

def _discrete_blocks(model: SemModel, u, part: BlanketPartition) -> np.ndarray:
    """Exact joint marginalised to axes ``(pa, sps, ch, Y)`` (flattened blocks)."""
    J = exact_joint(model, u)
    arity = {v: model.card(v) for v in range(model.n)}
    order = list(part.pa) + list(part.sps) + list(part.ch) + list(part.comp) + [model.n]
    J = np.transpose(J, order)
    P, S, K = (_block_size(b, arity) for b in (part.pa, part.sps, part.ch))
    ncomp = _block_size(part.comp, arity)
    return J.reshape(P, S, K, ncomp, model.C).sum(axis=3)


def _discrete_conditionals(joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``P(ch | Y, sps)`` as (C, S, K) and ``P(Y | pa)`` as (P, C)."""
    psky = joint.sum(axis=0)  # (S, K, C)
    tab = np.transpose(psky / psky.sum(axis=1, keepdims=True), (2, 0, 1))
    py = joint.sum(axis=(1, 2))
    lab = py / py.sum(axis=1, keepdims=True)
    return tab, lab


def _gaussian_exact(model: SemModel, u, part: BlanketPartition):
    dom = model.params[model.domain_index(u)]
    dag = model.dag
    ch, sps = list(part.ch), list(part.sps)
    k, s = len(ch), len(sps)
    Bcc = np.zeros((k, k))
    Bcs = np.zeros((k, s))
    icpt = np.zeros((model.C, k))
    D = np.zeros(k)
    for a, v in enumerate(ch):
        p = dom[v]
        for q, w in zip(dag.latent_parents(v), p.weights):
            if q in ch:
                Bcc[a, ch.index(q)] = w
            elif q in sps:
                Bcs[a, sps.index(q)] = w
            else:
                raise AdaptError(f"child Z{v + 1} has a parent outside children/spouses")
        icpt[:, a] = p.intercept if Y in dag.parents(v) else p.intercept[0]
        D[a] = p.sigma ** 2
    inv = np.linalg.inv(np.eye(k) - Bcc) if k else np.zeros((0, 0))
    A = inv @ Bcs
    b = icpt @ inv.T
    cov = inv @ np.diag(D) @ inv.T
    lab = dom[Y]
    return A, b, cov, lab.W.copy(), lab.b.copy()


def exact_target_conditionals(model: SemModel, part: BlanketPartition | None = None):
    """Exact target-domain conditionals, in family layout, for oracle checks."""
    part = part or blanket_partition(model.dag)
    if model.backend == "discrete":
        return _discrete_conditionals(_discrete_blocks(model, TARGET, part))
    return _gaussian_exact(model, TARGET, part)


# --------------------------------------------------------------------------
# source fitting
# --------------------------------------------------------------------------

def fit_source_conditionals(source, partition: BlanketPartition | None = None, demixer=None,
                            *, eps: float = 1e-6, ridge: float = 0.0) -> ConditionalFamily:
    """Source-domain conditionals, exactly from a model or estimated from data."""
    if isinstance(source, SemModel):
        part = partition or blanket_partition(source.dag)
        return _exact_family(source, part)
    if not isinstance(source, MultiDomainDataset):
        raise AdaptError("source must be a SemModel or MultiDomainDataset")
    if partition is None:
        raise AdaptError("a partition is required when fitting from data")
    dm = _as_demixer(demixer)
    zs = [(dm(x), y) for _, x, y in source.sources]
    d = zs[0][0].shape[1]
    if max(partition.pa + partition.ch + partition.sps + partition.comp + (-1,)) >= d:
        raise AdaptError("partition does not match data dimension")
    C = int(source.provenance.get("C", 1 + max(int(y.max()) for _, y in zs)))
    if source.provenance.get("backend") == "discrete":
        arity = {int(k): int(v) for k, v in source.provenance["arity"].items()}
        return _empirical_discrete(zs, partition, arity, C, eps, source.provenance.get("change_dim"))
    return _empirical_gaussian(zs, partition, C, ridge)


def _exact_family(model: SemModel, part: BlanketPartition) -> ConditionalFamily:
    if model.backend == "discrete":
        tabs, labs, pooled = [], [], None
        total = None
        for u in range(model.M):
            J = _discrete_blocks(model, u, part)
            t, lab = _discrete_conditionals(J)
            tabs.append(t)
            labs.append(lab)
            total = J if total is None else total + J
        _, pooled = _discrete_conditionals(total)
        arity = {v: model.card(v) for v in range(model.n)}
        return DiscreteFamily(part, arity, model.C, np.stack(tabs), np.stack(labs), pooled,
                              model.meta.get("change_dim"))
    parts = [_gaussian_exact(model, u, part) for u in range(model.M)]
    A, b, cov, W, lb = (np.stack(x) for x in zip(*parts))
    return GaussianFamily(part, model.C, A, b, cov, W, lb, W.mean(axis=0), lb.mean(axis=0))


def _empirical_discrete(zs, part, arity, C, eps, declared_q=None) -> DiscreteFamily:
    P, S, K = (_block_size(b, arity) for b in (part.pa, part.sps, part.ch))
    tabs, labs = [], []
    pooled_counts = np.zeros((P, C))
    for u, (z, y) in enumerate(zs):
        ip, isp, ic = (_block_index(z, b, arity) for b in (part.pa, part.sps, part.ch))
        for c in range(C):
            if not np.any(y == c):
                raise AdaptError(f"domain {u} has no samples of class {c + 1}")
        cnt = np.zeros((C, S, K))
        np.add.at(cnt, (y, isp, ic), 1.0)
        cnt += eps
        tabs.append(cnt / cnt.sum(axis=2, keepdims=True))
        lc = np.zeros((P, C))
        np.add.at(lc, (ip, y), 1.0)
        pooled_counts += lc
        lc += eps
        labs.append(lc / lc.sum(axis=1, keepdims=True))
    pooled_counts += eps
    pooled = pooled_counts / pooled_counts.sum(axis=1, keepdims=True)
    return DiscreteFamily(part, arity, C, np.stack(tabs), np.stack(labs), pooled, declared_q)


def _empirical_gaussian(zs, part, C, ridge) -> GaussianFamily:
    pa, ch, sps = list(part.pa), list(part.ch), list(part.sps)
    As, bs, covs, Ws, lbs = [], [], [], [], []
    for u, (z, y) in enumerate(zs):
        for c in range(C):
            if not np.any(y == c):
                raise AdaptError(f"domain {u} has no samples of class {c + 1}")
        A, b, cov = _regress_children(z[:, ch], z[:, sps], y, C, ridge)
        As.append(A)
        bs.append(b)
        covs.append(cov)
        R = np.eye(C)[y]
        W, lb = fit_softmax(z[:, pa], R, ridge=ridge)
        Ws.append(W)
        lbs.append(lb)
    zall = np.concatenate([z for z, _ in zs])
    yall = np.concatenate([y for _, y in zs])
    pW, pb = fit_softmax(zall[:, pa], np.eye(C)[yall], ridge=ridge)
    return GaussianFamily(part, C, np.stack(As), np.stack(bs), np.stack(covs), np.stack(Ws),
                          np.stack(lbs), pW, pb)


def _regress_children(zc, zs, y, C, ridge):
    """Least squares of ``z_ch`` on ``[z_sps, onehot(y)]`` with pooled residual covariance."""
    N, k = zc.shape
    s = zs.shape[1]
    X = np.concatenate([zs, np.eye(C)[y]], axis=1)
    XtX = X.T @ X
    if ridge:
        XtX = XtX + ridge * np.eye(X.shape[1])
    beta = np.linalg.solve(XtX, X.T @ zc)  # (s + C, k)
    resid = zc - X @ beta
    cov = resid.T @ resid / N
    return beta[:s].T.copy(), beta[s:].copy(), cov


# --------------------------------------------------------------------------
# softmax label model
# --------------------------------------------------------------------------

def _softmax_obj(F, R, theta, C):
    p = F.shape[1]
    logits = np.zeros((F.shape[0], C))
    logits[:, 1:] = F @ theta.reshape(C - 1, p).T
    lse = logsumexp(logits, axis=1)
    ll = np.sum(R * logits) - np.sum(R.sum(axis=1) * lse)
    return -ll, logits - lse[:, None]


def fit_softmax(zpa: np.ndarray, R: np.ndarray, W0=None, b0=None, ridge: float = 0.0,
                max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Weighted multinomial logistic regression by damped Newton steps.

    ``R`` holds per-sample class weights (one-hot labels or EM
    responsibilities).  Class 0 is the reference (zero row).  Pure Newton
    steps make the fit equivariant under invertible linear maps of ``zpa``.
    """
    N, C = R.shape
    F = np.concatenate([np.ones((N, 1)), zpa], axis=1)
    p = F.shape[1]
    dim = (C - 1) * p
    if W0 is None:
        theta = np.zeros(dim)
    else:
        full = np.concatenate([np.asarray(b0)[:, None], np.asarray(W0)], axis=1)
        theta = (full[1:] - full[0]).ravel()
    t = R.sum(axis=1)
    FF = (F[:, :, None] * F[:, None, :]).reshape(N, p * p)
    f, logp = _softmax_obj(F, R, theta, C)
    f += 0.5 * ridge * theta @ theta
    for _ in range(max_iter):
        P = np.exp(logp)
        G = ((P[:, 1:] * t[:, None] - R[:, 1:]).T @ F).ravel() + ridge * theta
        Pt = P[:, 1:] * t[:, None]
        wts = np.einsum("na,nb->nab", -Pt, P[:, 1:])
        idx = np.arange(C - 1)
        wts[:, idx, idx] += Pt
        blocks = (wts.reshape(N, -1).T @ FF).reshape(C - 1, C - 1, p, p)
        H = blocks.transpose(0, 2, 1, 3).reshape(dim, dim)
        H += ridge * np.eye(dim)
        try:
            step = np.linalg.solve(H, G)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, G, rcond=None)[0]
        dec = float(G @ step)
        if dec <= 2e-14 * max(1.0, abs(f)):
            break
        lr = 1.0
        while True:
            cand = theta - lr * step
            fc, lc = _softmax_obj(F, R, cand, C)
            fc += 0.5 * ridge * cand @ cand
            if fc <= f - 0.25 * lr * dec or lr < 1e-10:
                break
            lr *= 0.5
        if fc > f:
            break
        theta, f, logp = cand, fc, lc
    full = np.zeros((C, p))
    full[1:] = theta.reshape(C - 1, p)
    return full[:, 1:].copy(), full[:, 0].copy()


def _log_softmax_label(zpa, W, b):
    logits = zpa @ W.T + b
    return logits - logsumexp(logits, axis=1, keepdims=True)


# --------------------------------------------------------------------------
# mixtures
# --------------------------------------------------------------------------

def _check_simplex(alpha: np.ndarray, strict: bool) -> None:
    if strict and (np.min(alpha) < -1e-12 or abs(alpha.sum() - 1.0) > 1e-10):
        raise AdaptError("mixture weights must lie in the probability simplex")


def mixture_conditional(family: ConditionalFamily, alpha_col, c: int, strict: bool = True):
    """Per-class mixture of the source conditionals under weights ``alpha_col``."""
    alpha = np.asarray(alpha_col, dtype=np.float64)
    if alpha.shape != (family.M,):
        raise AdaptError(f"expected {family.M} mixture weights")
    _check_simplex(alpha, strict)
    if family.backend == "discrete":
        out = alpha[0] * family.tables[0, c]
        for i in range(1, family.M):
            out = out + alpha[i] * family.tables[i, c]
        return out
    Lam, G, e = family.natural_mixture(alpha, c)
    if Lam.size == 0:
        return GaussianConditional(np.zeros((0, family.A.shape[2])), np.zeros(0), np.zeros((0, 0)))
    cov = np.linalg.inv(Lam)
    return GaussianConditional(cov @ G, cov @ e, 0.5 * (cov + cov.T))


# --------------------------------------------------------------------------
# solutions
# --------------------------------------------------------------------------

@dataclass
class AdaptationSolution:
    backend: str
    alpha: np.ndarray  # (M, C); column c are the weights of class c
    label: dict  # discrete: {"table"}; gaussian: {"W", "b"}
    residual: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    non_unique: bool = False
    restarts: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        cols = self.alpha.sum(axis=0)
        if np.min(self.alpha) < -1e-12 or np.max(np.abs(cols - 1.0)) > 1e-10:
            raise AdaptError("alpha columns must lie in the probability simplex")

    def label_table(self) -> np.ndarray:
        return self.label["table"]

    def to_json(self) -> dict:
        lab = {k: np.asarray(v).tolist() for k, v in self.label.items()}
        tr = list(self.trace)
        return {"backend": self.backend, "alpha_shape": list(self.alpha.shape),
                "alpha": self.alpha.ravel().tolist(), "label": lab,
                "residual": float(self.residual), "iterations": int(self.iterations),
                "converged": bool(self.converged), "non_unique": bool(self.non_unique),
                "trace_head": tr[:10], "trace_tail": tr[-10:],
                "restarts": self.restarts, "seed": int(self.seed)}

    @classmethod
    def from_json(cls, d: dict) -> "AdaptationSolution":
        alpha = np.array(d["alpha"], float).reshape(d["alpha_shape"])
        label = {k: np.array(v, float) for k, v in d["label"].items()}
        trace = list(d.get("trace_head", []))
        return cls(d["backend"], alpha, label, float(d["residual"]), int(d["iterations"]),
                   bool(d["converged"]), trace, bool(d.get("non_unique", False)),
                   list(d.get("restarts", [])), int(d.get("seed", 0)))


def oracle_solution(model: SemModel, family: ConditionalFamily, alpha: np.ndarray | None = None):
    """Solution carrying the true target label conditional.

    ``alpha`` defaults to the construction weights stored by the benchmark
    generator; the result is exact whenever the target lies in the span.
    """
    part = family.partition
    if alpha is None:
        if "alpha_star" not in model.meta:
            raise AdaptError("model carries no construction weights")
        alpha = np.array(model.meta["alpha_star"], float)
    if model.backend == "discrete":
        _, lab = exact_target_conditionals(model, part)
        label = {"table": lab}
    else:
        W, b = exact_target_conditionals(model, part)[3:]
        label = {"W": W, "b": b}
    return AdaptationSolution(model.backend, np.asarray(alpha, float), label, 0.0, 0, True)


# --------------------------------------------------------------------------
# target fitting
# --------------------------------------------------------------------------

@dataclass
class _Restart:
    alpha: np.ndarray
    label: dict
    residual: float
    iterations: int
    converged: bool
    trace: list


def fit_target(family: ConditionalFamily, target, demixer=None, *, restarts: int = 8,
               seed: int = 0, tol: float | None = None, max_iter: int | None = None,
               check_monotone: bool = True) -> AdaptationSolution:
    """Fit mixture weights and the target label conditional.

    ``target`` is a model (exact target statistics, discrete backend) or an
    array of target observations ``x``.
    """
    if family.M < family.q + 1:
        raise AdaptError(f"need at least q+1={family.q + 1} source domains, have {family.M}")
    if family.backend == "discrete":
        stat = _discrete_target_stat(family, target, demixer)
        runner = lambda a0, l0: _alternating(family, stat, a0, l0, tol or 1e-12,
                                             max_iter or 10_000, check_monotone)
        init_label = {"table": family.pooled_label.copy()}
    else:
        if isinstance(target, SemModel):
            raise AdaptError("gaussian fitting needs target samples")
        z = _as_demixer(demixer)(np.asarray(target, dtype=np.float64))
        part = family.partition
        if max(part.pa + part.ch + part.sps + part.comp + (-1,)) >= z.shape[1]:
            raise AdaptError("family/demixer dimension mismatch")
        blocks = (z[:, list(part.pa)], z[:, list(part.sps)], z[:, list(part.ch)])
        runner = lambda a0, l0: _em(family, blocks, a0, l0, tol or 1e-12, max_iter or 50,
                                    check_monotone)
        init_label = {"W": family.pooled_W.copy(), "b": family.pooled_b.copy()}

    M, C = family.M, family.C
    runs = []
    for r in range(restarts):
        a0 = np.full((M, C), 1.0 / M)
        l0 = {k: v.copy() for k, v in init_label.items()}
        if r > 0:
            g = _rng.generator(seed, 7, r)
            a0 = 0.5 * a0 + 0.5 * g.dirichlet(np.ones(M), size=C).T
            if family.backend == "discrete":
                noise = g.dirichlet(np.ones(C), size=l0["table"].shape[0])
                l0["table"] = 0.5 * l0["table"] + 0.5 * noise
            else:
                l0["b"] = l0["b"] + g.normal(0.0, 1.0, size=C)
        runs.append(runner(a0, l0))

    best = 0
    for r in range(1, len(runs)):
        if runs[r].residual < runs[best].residual:
            best = r
    b = runs[best]
    non_unique = False
    ref = _identified(family, b)
    for r, run in enumerate(runs):
        if r == best or abs(run.residual - b.residual) > 1e-10:
            continue
        if np.max(np.abs(_identified(family, run) - ref)) > 1e-2:
            non_unique = True
    summary = [{"index": r, "residual": float(run.residual), "iterations": int(run.iterations),
                "converged": bool(run.converged)} for r, run in enumerate(runs)]
    return AdaptationSolution(family.backend, b.alpha, b.label, float(b.residual), b.iterations,
                              b.converged, b.trace, non_unique, summary, seed)


def _identified(family: ConditionalFamily, run: _Restart) -> np.ndarray:
    """Quantities the target data pin down: label conditional and class mixtures."""
    parts = []
    if family.backend == "discrete":
        parts.append(run.label["table"].ravel())
        for c in range(family.C):
            parts.append(mixture_conditional(family, run.alpha[:, c], c, strict=False).ravel())
    else:
        parts += [run.label["W"].ravel(), run.label["b"].ravel()]
        for c in range(family.C):
            Lam, G, e = family.natural_mixture(run.alpha[:, c], c)
            parts += [Lam.ravel(), G.ravel(), e.ravel()]
    return np.concatenate(parts)


# -- discrete: alternating simplex-constrained least squares ---------------

def _discrete_target_stat(family: DiscreteFamily, target, demixer):
    part = family.partition
    if isinstance(target, SemModel):
        J = _discrete_blocks(target, TARGET, part).sum(axis=3)  # (P, S, K)
    else:
        z = _as_demixer(demixer)(np.asarray(target, dtype=np.float64))
        arity = family.arity
        P, S, K = (_block_size(b, arity) for b in (part.pa, part.sps, part.ch))
        ip, isp, ic = (_block_index(z, b, arity) for b in (part.pa, part.sps, part.ch))
        J = np.zeros((P, S, K))
        np.add.at(J, (ip, isp, ic), 1.0)
        J += 1e-6
        J /= J.sum()
    if J.shape[1:] != family.tables.shape[2:]:
        raise AdaptError("family/target dimension mismatch")
    w = J.sum(axis=2)
    return w, J / w[:, :, None]


def _ls_objective(w, target, Tmix, lab):
    """sum_{p,s} w[p,s] sum_k (sum_c lab[p,c] Tmix[c,s,k] - target[p,s,k])^2."""
    model = np.einsum("pc,csk->psk", lab, Tmix)
    d = model - target
    return float(np.einsum("ps,psk->", w, d * d))


def _alternating(family: DiscreteFamily, stat, alpha0, label0, tol, max_iter, check_monotone):
    w, target = stat
    T = family.tables  # (M, C, S, K)
    M, C = family.M, family.C
    alpha = alpha0.copy()
    lab = label0["table"].copy()
    Tmix = np.einsum("mc,mcsk->csk", alpha, T)
    obj = _ls_objective(w, target, Tmix, lab)
    trace = [obj]
    converged = False
    it = 0
    # Gram blocks that do not change between iterations
    TT = np.einsum("icsk,jcsk->cijs", T, T)  # (C, M, M, S)
    slack = 64 * np.finfo(float).eps * float(np.einsum("ps,psk->", w, target * target))
    for it in range(1, max_iter + 1):
        for c in range(C):
            rest = np.einsum("pc,csk->psk", np.delete(lab, c, axis=1), np.delete(Tmix, c, axis=0))
            resid = target - rest
            wp = w * (lab[:, c] ** 2)[:, None]  # (P, S)
            H = np.einsum("ps,ijs->ij", wp, TT[c])
            g = np.einsum("ps,p,isk,psk->i", w, lab[:, c], T[:, c], resid)
            alpha[:, c] = simplex_qp(H, g, alpha[:, c])
            Tmix[c] = np.einsum("m,msk->sk", alpha[:, c], T[:, c])
        MM = np.einsum("csk,dsk->cds", Tmix, Tmix)  # (C, C, S)
        for p in range(lab.shape[0]):
            H = np.einsum("s,cds->cd", w[p], MM)
            g = np.einsum("s,csk,sk->c", w[p], Tmix, target[p])
            lab[p] = simplex_qp(H, g, lab[p])
        new = _ls_objective(w, target, Tmix, lab)
        # subproblems go through normal equations, exact only to eps * scale
        if check_monotone and new > obj + 1e-12 * obj + slack:
            raise AssertionError(f"objective increased: {obj!r} -> {new!r}")
        trace.append(new)
        dec = obj - new
        obj = new
        if dec < tol or obj < 1e-26:
            converged = True
            break
    if converged and obj >= 1e-26:
        alpha, lab, obj = _polish(w, target, T, alpha, lab, obj, trace)
    return _Restart(alpha, {"table": lab}, obj, it, converged, trace)


def _polish(w, target, T, alpha, lab, obj, trace, max_iter: int = 100):
    """Gauss-Newton steps on the active face, accepted only if the objective drops.

    Alternating minimisation converges linearly; near a zero-residual optimum
    these joint steps converge quadratically.
    """
    M, C = alpha.shape
    P, S, K = target.shape
    sw = np.sqrt(w)
    nA = M * C
    blocks = [np.arange(c, nA, C) for c in range(C)]
    blocks += [nA + p * C + np.arange(C) for p in range(P)]
    x = np.concatenate([alpha.ravel(), lab.ravel()])

    def unpack(v):
        return v[:nA].reshape(M, C), v[nA:].reshape(P, C)

    def objective(v):
        a, l = unpack(v)
        return _ls_objective(w, target, np.einsum("mc,mcsk->csk", a, T), l)

    for _ in range(max_iter):
        if obj < 1e-26:
            break
        a, l = unpack(x)
        Tmix = np.einsum("mc,mcsk->csk", a, T)
        r = (sw[:, :, None] * (np.einsum("pc,csk->psk", l, Tmix) - target)).ravel()
        JA = np.einsum("ps,pc,mcsk->pskmc", sw, l, T).reshape(r.size, nA)
        JL = np.zeros((P, S, K, P, C))
        for p in range(P):
            JL[p, :, :, p, :] = sw[p][:, None, None] * np.transpose(Tmix, (1, 2, 0))
        J = np.concatenate([JA, JL.reshape(r.size, P * C)], axis=1)
        free = np.flatnonzero(x > 0)
        pos = {int(j): k for k, j in enumerate(free)}
        rows = [[pos[int(j)] for j in b if int(j) in pos] for b in blocks]
        E = np.zeros((len(rows), free.size))
        for k, idx in enumerate(rows):
            E[k, idx] = 1.0
        Jf = J[:, free]
        H = Jf.T @ Jf
        H += (1e-12 * np.trace(H) / max(free.size, 1) + 1e-300) * np.eye(free.size)
        # residual curvature: r is bilinear, so only alpha-label cross terms survive
        cross = np.einsum("ps,psk,mcsk->mcp", sw, r.reshape(P, S, K), T)
        Sfull = np.zeros((x.size, x.size))
        for c in range(C):
            ia = np.arange(M) * C + c
            il = nA + np.arange(P) * C + c
            Sfull[np.ix_(ia, il)] = cross[:, c, :]
        Sfull += Sfull.T
        accepted = False
        # full Newton converges quadratically at nonzero residual; Gauss-Newton is the fallback
        for Hk in (H + Sfull[np.ix_(free, free)], H):
            kkt = np.block([[Hk, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
            rhs = np.concatenate([-(Jf.T @ r), np.zeros(E.shape[0])])
            d = np.zeros_like(x)
            d[free] = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:free.size]
            if not float((J.T @ r) @ d) < 0:
                continue
            neg = d < 0
            tmax = np.min(x[neg] / -d[neg]) if np.any(neg) else np.inf
            t = min(1.0, float(tmax))
            while t > 1e-12:
                cand = x + t * d
                if t == tmax:
                    cand[neg & (x / np.where(neg, -d, 1.0) <= t)] = 0.0
                cand = np.maximum(cand, 0.0)
                new = objective(cand)
                if new < obj:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            break
        gain = obj - new
        x, obj = cand, new
        trace.append(obj)
        if gain <= 1e-15 * obj:
            break
    a, l = unpack(x)
    return a.copy(), l.copy(), obj


# -- gaussian: generalised EM on the target conditional likelihood --------

def _mixture_logpdf(family: GaussianFamily, alpha_c, c, zs, zc):
    Lam, G, e = family.natural_mixture(alpha_c, c)
    k = zc.shape[1]
    if k == 0:
        return np.zeros(zc.shape[0])
    eta = zs @ G.T + e
    L = np.linalg.cholesky(Lam)
    cov = np.linalg.inv(Lam)
    mu = eta @ cov
    quad = np.sum((zc @ Lam) * zc, axis=1) - 2 * np.sum(zc * eta, axis=1) + np.sum(eta * mu, axis=1)
    return -0.5 * quad + np.log(np.diag(L)).sum() - 0.5 * k * math.log(2 * math.pi)


def _moments(zs, zc, r) -> dict:
    """Weighted second moments of ``(z_ch, z_sps, 1)``; all the alpha step needs."""
    rc = zc * r[:, None]
    return {"R": float(r.sum()), "Sxx": rc.T @ zc, "Sxs": rc.T @ zs, "sx": rc.sum(axis=0),
            "Sss": (zs * r[:, None]).T @ zs, "ss": r @ zs}


def _alpha_objective(family: GaussianFamily, alpha_c, c, mom, grad: bool = True):
    """``-sum_k r_k log N(z_ch | z_sps; alpha_c)`` up to a constant, from moments."""
    Lam, G, e = family.natural_mixture(alpha_c, c)
    L = np.linalg.cholesky(Lam)
    cov = np.linalg.inv(Lam)
    R, Sss, ss = mom["R"], mom["Sss"], mom["ss"]
    GS = G @ Sss + np.outer(e, ss)
    Q = GS @ G.T + np.outer(G @ ss, e) + R * np.outer(e, e)
    f = (0.5 * np.sum(Lam * mom["Sxx"]) - np.sum(G * mom["Sxs"]) - e @ mom["sx"]
         + 0.5 * np.sum(cov * Q) - R * np.log(np.diag(L)).sum())
    if not grad:
        return float(f), None
    dLam = 0.5 * (mom["Sxx"] - cov @ Q @ cov - R * cov)
    dG = -mom["Sxs"] + cov @ GS
    de = -mom["sx"] + cov @ (G @ ss + R * e)
    g = (np.einsum("ij,mij->m", dLam, family.Lam) + np.einsum("ij,mij->m", dG, family.G)
         + family.e[:, c, :] @ de)
    return float(f), g


def _alpha_step(family, alpha_c, c, mom, t0: float | None = None, iters: int = 4):
    """A few projected-gradient steps with backtracking; never increases the objective.

    Returns the new weights and the last accepted step size, which the caller
    feeds back as ``t0`` on the next EM iteration.
    """
    f, g = _alpha_objective(family, alpha_c, c, mom)
    t = t0 if t0 is not None else 1.0 / max(np.abs(g).max(), 1e-300)
    a = alpha_c
    for _ in range(iters):
        while True:
            cand = project_simplex(a - t * g)[0]
            d = cand - a
            fc = _alpha_objective(family, cand, c, mom, grad=False)[0]
            if fc <= f + g @ d + (d @ d) / (2 * t) or t < 1e-300:
                break
            t *= 0.5
        if fc > f:
            break
        small = np.max(np.abs(d)) < 1e-13
        a = cand
        if small:
            break
        f, g = _alpha_objective(family, a, c, mom)
        t *= 2.0
    return a, t


def _em(family: GaussianFamily, blocks, alpha0, label0, tol, max_iter, check_monotone,
        switch: float = 1e-6, em_iter: int = 100):
    """Generalised EM with objective-guarded over-relaxation.

    Each iteration takes an EM step ``theta -> M(theta)`` and then tries the
    extrapolation ``theta + eta (M(theta) - theta)``, kept only if it lowers
    the negative log-likelihood.  Both the EM map and the extrapolation
    commute with invertible block-linear reparametrisation.
    """
    zpa, zs, zc = blocks
    N = zc.shape[0]
    C = family.C

    def nll_of(alpha, W, b):
        dens = np.stack([_mixture_logpdf(family, alpha[:, c], c, zs, zc) for c in range(C)], axis=1)
        joint = dens + _log_softmax_label(zpa, W, b)
        ll = logsumexp(joint, axis=1)
        return -float(ll.mean()), joint, ll

    steps = [None] * C

    def em_map(alpha, W, b, joint, ll):
        R = np.exp(joint - ll[:, None])
        W, b = fit_softmax(zpa, R, W, b, max_iter=1)
        alpha = alpha.copy()
        if zc.shape[1]:
            for c in range(C):
                alpha[:, c], steps[c] = _alpha_step(family, alpha[:, c], c,
                                                    _moments(zs, zc, R[:, c] / N), steps[c])
        return alpha, W, b

    alpha = alpha0.copy()
    W, b = label0["W"].copy(), label0["b"].copy()
    nll, joint, ll = nll_of(alpha, W, b)
    trace = [nll]
    converged = False
    eta = 2.0
    it = 0
    for it in range(1, em_iter + 1):
        a1, W1, b1 = em_map(alpha, W, b, joint, ll)
        new, j1, l1 = nll_of(a1, W1, b1)
        da = a1 - alpha
        neg = da < 0
        cap = np.min(alpha[neg] / -da[neg]) if np.any(neg) else np.inf
        e = min(eta, cap)
        if e > 1.0:
            ax = np.maximum(alpha + e * da, 0.0)
            ax /= ax.sum(axis=0, keepdims=True)
            Wx, bx = W + e * (W1 - W), b + e * (b1 - b)
            nx, jx, lx = nll_of(ax, Wx, bx)
            if nx < new:
                a1, W1, b1, new, j1, l1 = ax, Wx, bx, nx, jx, lx
                eta *= 1.5
            else:
                eta = 2.0
        if check_monotone and new > nll + 1e-12 * max(1.0, abs(nll)):
            raise AssertionError(f"EM objective increased: {nll!r} -> {new!r}")
        dec = nll - new
        alpha, W, b, nll, joint, ll = a1, W1, b1, new, j1, l1
        trace.append(nll)
        if abs(dec) < switch:
            break
    alpha, W, b, nll, converged, extra = _active_newton(family, blocks, alpha, W, b, nll, trace,
                                                        tol, max_iter)
    return _Restart(alpha, {"W": W, "b": b}, nll, it + extra, converged, trace)


def _face_newton(H, g, idx, free, cls, has_ch):
    """Newton direction on the face ``{x_j = 0 : j not free}`` with per-class sums fixed.

    Null-space method: the step lives in ``null(E)``; reduced directions the
    likelihood cannot see (unidentified weights) get no step.
    """
    pos = {int(j): k for k, j in enumerate(idx)}
    rows = [[pos[int(j)] for j in blk if free[j]] for blk in cls] if has_ch else []
    E = np.zeros((len(rows), idx.size))
    for c, r in enumerate(rows):
        E[c, r] = 1.0
    if E.shape[0]:
        _, sv, Vt = np.linalg.svd(E)
        Z = Vt[int(np.sum(sv > 1e-12)):].T
    else:
        Z = np.eye(idx.size)
    Hr = Z.T @ H @ Z
    gr = Z.T @ g[idx]
    w, V = np.linalg.eigh(0.5 * (Hr + Hr.T))
    keep = np.abs(w) > 1e-10 * max(np.abs(w).max(initial=0.0), 1e-300)
    step = -(V[:, keep] / np.abs(w[keep])) @ (V[:, keep].T @ gr)
    d = np.zeros_like(g)
    d[idx] = Z @ step
    return d


def _nll_and_grad(family: GaussianFamily, blocks, alpha, theta, grad: bool = True):
    """Mean target NLL and its gradient in ``(alpha, theta)``; ``theta`` excludes class 0."""
    zpa, zs, zc = blocks
    N, C = zc.shape[0], family.C
    p = zpa.shape[1] + 1
    full = np.zeros((C, p))
    full[1:] = theta.reshape(C - 1, p)
    logits = zpa @ full[:, 1:].T + full[:, 0]
    loglab = logits - logsumexp(logits, axis=1, keepdims=True)
    dens = np.stack([_mixture_logpdf(family, alpha[:, c], c, zs, zc) for c in range(C)], axis=1)
    joint = dens + loglab
    ll = logsumexp(joint, axis=1)
    nll = -float(ll.mean())
    if not grad:
        return nll, None
    R = np.exp(joint - ll[:, None])
    F = np.concatenate([np.ones((N, 1)), zpa], axis=1)
    g_theta = ((np.exp(loglab) - R)[:, 1:].T @ F) / N
    g_alpha = np.zeros_like(alpha)
    if zc.shape[1]:
        for c in range(C):
            g_alpha[:, c] = _alpha_objective(family, alpha[:, c], c, _moments(zs, zc, R[:, c] / N))[1]
    return nll, np.concatenate([g_alpha.ravel(), g_theta.ravel()])



def _active_newton(family, blocks, alpha, W, b, nll, trace, tol, max_iter):
    """Active-set Newton on the product of simplices for ``alpha``, free in the label.

    The Hessian is a central difference of the analytic gradient.  Steps are
    cut at the simplex boundary; weights that reach zero leave the free set
    and return when their multiplier says so.  Convergence is judged on the
    projected gradient, which stays informative after the objective has
    flattened to rounding level.
    """
    M, C = alpha.shape
    nA = M * C
    theta = np.concatenate([b[:, None], W], axis=1)
    theta = (theta[1:] - theta[0]).ravel()
    x = np.concatenate([alpha.ravel(), theta])
    has_ch = blocks[2].shape[1] > 0
    cls = [np.arange(c, nA, C) for c in range(C)]

    def fg(v, grad=True):
        return _nll_and_grad(family, blocks, v[:nA].reshape(M, C), v[nA:], grad)

    f, g = fg(x)
    free = np.ones(x.size, dtype=bool)
    free[:nA] = (x[:nA] > 0) if has_ch else False
    gscale = max(1.0, abs(f))

    def kkt_of(grad):
        red = grad.copy()
        if has_ch:
            for blk in cls:
                fr = blk[free[blk]]
                red[blk] -= np.mean(grad[fr]) if fr.size else 0.0
        viol = np.max(np.abs(red[free]), initial=0.0)
        if has_ch:
            viol = max(viol, np.max(-red[:nA][~free[:nA]], initial=0.0))
        return viol, red

    it = 0
    kkt, red = kkt_of(g)
    for it in range(1, max_iter + 1):
        if kkt <= tol * gscale:
            break
        if has_ch:
            # release the most promising zero weight of each class
            for blk in cls:
                out = blk[~free[blk]]
                if out.size:
                    j = out[np.argmin(red[out])]
                    if red[j] < -tol * gscale:
                        free[j] = True
        idx = np.flatnonzero(free)
        H = np.empty((idx.size, idx.size))
        for k, j in enumerate(idx):
            h = 1e-5 * max(1.0, abs(x[j]))
            e = np.zeros_like(x)
            e[j] = h
            H[:, k] = (fg(x + e)[1][idx] - fg(x - e)[1][idx]) / (2 * h)
        H = 0.5 * (H + H.T)
        while True:
            d = _face_newton(H, g, idx, free, cls, has_ch)
            blocked = np.flatnonzero((x == 0) & (d < 0) & free)
            blocked = blocked[blocked < nA]
            if not blocked.size:
                break
            free[blocked] = False
            keep = np.isin(idx, blocked, invert=True)
            H, idx = H[np.ix_(keep, keep)], idx[keep]
        dec = -float(g @ d)
        if dec <= 0:
            break
        tmax, hit = 1.0, -1
        if has_ch:
            neg = np.flatnonzero((d[:nA] < 0) & free[:nA])
            if neg.size:
                ratios = x[neg] / -d[neg]
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    tmax, hit = float(ratios[k]), int(neg[k])
        if dec <= 1e-12 * gscale and hit < 0:
            # objective changes are at rounding level here: judge the step by the gradient
            cand = x + d
            fc, gc = fg(cand)
            kc, rc = kkt_of(gc)
            if not kc < kkt:
                break
            x, f, g, kkt, red = cand, fc, gc, kc, rc
            trace.append(f)
            continue
        t = tmax
        while True:
            cand = x + t * d
            if hit >= 0 and t == tmax:
                cand[hit] = 0.0
            cand[:nA] = np.maximum(cand[:nA], 0.0)
            fc = fg(cand, grad=False)[0]
            if fc <= f - 1e-4 * t * dec or t < 1e-12:
                break
            t *= 0.5
        if not fc < f:
            break
        if hit >= 0 and t == tmax:
            free[hit] = False
        x, f = cand, fc
        if has_ch:
            a = x[:nA].reshape(M, C)
            a /= a.sum(axis=0, keepdims=True)
        trace.append(f)
        g = fg(x)[1]
        kkt, red = kkt_of(g)
    converged = kkt <= 1e-8 * gscale
    a = x[:nA].reshape(M, C).copy()
    full = np.zeros((C, W.shape[1] + 1))
    full[1:] = x[nA:].reshape(C - 1, -1)
    return a, full[:, 1:].copy(), full[:, 0].copy(), f, converged, it

# --------------------------------------------------------------------------
# posterior and evaluation
# --------------------------------------------------------------------------

def log_posterior_terms(solution: AdaptationSolution, family: ConditionalFamily,
                        z: np.ndarray) -> np.ndarray:
    """Unnormalised log numerators ``log P(z_ch|k,z_sps) + log P(k|z_pa)``."""
    part = family.partition
    C = family.C
    if family.backend == "discrete":
        arity = family.arity
        ip, isp, ic = (_block_index(z, blk, arity) for blk in (part.pa, part.sps, part.ch))
        out = np.empty((z.shape[0], C))
        with np.errstate(divide="ignore"):
            for c in range(C):
                tab = mixture_conditional(family, solution.alpha[:, c], c, strict=False)
                out[:, c] = np.log(tab[isp, ic]) + np.log(solution.label["table"][ip, c])
        return out
    zpa, zs, zc = (z[:, list(blk)] for blk in (part.pa, part.sps, part.ch))
    dens = np.stack([_mixture_logpdf(family, solution.alpha[:, c], c, zs, zc) for c in range(C)],
                    axis=1)
    return dens + _log_softmax_label(zpa, solution.label["W"], solution.label["b"])


def normalize_log(terms: np.ndarray) -> np.ndarray:
    """Row-normalise log weights with max subtraction."""
    if not np.all(np.isfinite(terms.max(axis=1))):
        raise AdaptError("non-finite density at evaluation point")
    shifted = terms - terms.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    return p / p.sum(axis=1, keepdims=True)


def posterior(solution: AdaptationSolution, family: ConditionalFamily, x: np.ndarray,
              demixer=None) -> np.ndarray:
    z = _as_demixer(demixer)(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return normalize_log(log_posterior_terms(solution, family, z))


def plugin_solution(dataset: MultiDomainDataset, partition: BlanketPartition, demixer=None):
    """Pooled-source plug-in classifier: one family fitted on all sources together."""
    xs = np.concatenate([x for _, x, _ in dataset.sources])
    ys = np.concatenate([y for _, _, y in dataset.sources])
    pooled = MultiDomainDataset([(0, xs, ys)], dataset.target, dict(dataset.provenance))
    fam = fit_source_conditionals(pooled, partition, demixer)
    if fam.backend == "discrete":
        label = {"table": fam.label[0].copy()}
    else:
        label = {"W": fam.label_W[0].copy(), "b": fam.label_b[0].copy()}
    sol = AdaptationSolution(fam.backend, np.ones((1, fam.C)), label, 0.0, 0, True)
    return sol, fam


def evaluate(probs: np.ndarray, labels: np.ndarray, oracle: np.ndarray | None = None) -> dict:
    """Accuracy, mean total variation to the oracle posterior, and log-loss."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] == 0:
        raise AdaptError("empty evaluation set")
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    ll = -float(np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300))))
    tv = float("nan") if oracle is None else float(np.mean(0.5 * np.abs(probs - oracle).sum(axis=1)))
    return {"accuracy": acc, "posterior_tv": tv, "log_loss": ll}
