"""Multi-domain structural equation models over latent ``Z`` and label ``Y``.

Two backends share one model type:

* ``gaussian``: ``Z_i = w_i . PA_Z(Z_i) + b_i[y] + sigma_i * eps_i`` with
  standard normal noise, and ``Y ~ softmax(W z_pa + b)``.  The intercept is
  indexed by class when ``Y`` is a parent of ``Z_i``.
* ``discrete``: every node (``Y`` included) is a CPT over its parents.

Domains are ``0..M-1`` for the sources and :data:`TARGET` for the target.
Observations are ``X = g(Z)`` for an invertible square mixing ``g``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp, ndtri

from . import rng as _rng
from .graph import LatentDag, Y, moralize
from .io import canonical_json, sha256_bytes

TARGET = "tau"
BACKENDS = ("gaussian", "discrete")
MIXING_KINDS = ("identity", "permutation", "linear", "linear_monotone")
MAX_JOINT_ENTRIES = 10**6


class ModelError(ValueError):
    pass


# --------------------------------------------------------------------------
# mixing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MixingSpec:
    """``x = f(A z)``, ``f`` elementwise ``s t + (1 - s) tanh t`` or identity."""

    kind: str = "identity"
    matrix: np.ndarray | None = None
    slope: float = 1.0

    def __post_init__(self):
        if self.kind not in MIXING_KINDS:
            raise ModelError(f"unknown mixing kind {self.kind!r}")
        if self.kind != "identity":
            A = np.asarray(self.matrix, dtype=np.float64)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ModelError("mixing matrix must be square")
            rows = A / np.linalg.norm(A, axis=1, keepdims=True)
            if abs(np.linalg.det(rows)) <= 1e-9:
                raise ModelError("mixing matrix is not invertible")
            if self.kind == "permutation":
                if not (np.all((A == 0) | (A == 1)) and np.all(A.sum(0) == 1) and np.all(A.sum(1) == 1)):
                    raise ModelError("permutation mixing needs a 0/1 permutation matrix")
            object.__setattr__(self, "matrix", A)
        if self.kind == "linear_monotone" and not 0.0 < self.slope <= 1.0:
            raise ModelError("monotone slope must lie in (0, 1]")

    def forward(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "identity":
            return z.copy()
        t = _matvec_rows(z, self.matrix)
        if self.kind == "linear_monotone":
            s = self.slope
            t = s * t + (1.0 - s) * np.tanh(t)
        return t

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        t = x
        if self.kind == "linear_monotone":
            t = _leaky_tanh_inverse(x, self.slope)
        return _matvec_rows(t, np.linalg.inv(self.matrix))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "slope": float(self.slope)}
        if self.matrix is not None:
            out["matrix"] = np.asarray(self.matrix).ravel().tolist()
            out["dim"] = int(self.matrix.shape[0])
        return out

    @classmethod
    def from_json(cls, d: dict) -> "MixingSpec":
        mat = None
        if d.get("matrix") is not None:
            k = int(d["dim"])
            mat = np.array(d["matrix"], dtype=np.float64).reshape(k, k)
        return cls(d["kind"], mat, float(d.get("slope", 1.0)))


def _matvec_rows(z: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Row-wise ``A @ z_k`` with a fixed summation order (no BLAS)."""
    z2 = np.atleast_2d(z)
    out = np.zeros((z2.shape[0], A.shape[0]))
    for j in range(A.shape[1]):
        out += z2[:, j : j + 1] * A[:, j][None, :]
    return out.reshape(z.shape[:-1] + (A.shape[0],)) if z.ndim == 1 else out


def _leaky_tanh_inverse(x: np.ndarray, s: float) -> np.ndarray:
    lo = (x - (1.0 - s)) / s
    hi = (x + (1.0 - s)) / s
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        val = s * mid + (1.0 - s) * np.tanh(mid)
        above = val > x
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    t = 0.5 * (lo + hi)
    for _ in range(2):
        th = np.tanh(t)
        t = t - (s * t + (1.0 - s) * th - x) / (s + (1.0 - s) * (1.0 - th * th))
    return t


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class GaussianNode:
    weights: np.ndarray  # aligned with dag.latent_parents(i)
    intercept: np.ndarray  # (C,) if Y is a parent, else (1,)
    sigma: float

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "intercept": self.intercept.tolist(),
                "sigma": float(self.sigma)}

    @classmethod
    def from_json(cls, d: dict) -> "GaussianNode":
        return cls(np.array(d["weights"], float), np.array(d["intercept"], float), float(d["sigma"]))


@dataclass
class GaussianLabel:
    W: np.ndarray  # (C, |latent parents of Y|)
    b: np.ndarray  # (C,)

    def to_json(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "GaussianLabel":
        b = np.array(d["b"], float)
        W = np.array(d["W"], float).reshape(b.shape[0], -1)
        return cls(W, b)


@dataclass
class DiscreteNode:
    cpt: np.ndarray  # (*parent arities, own arity); parents in dag.parents order

    def to_json(self) -> dict:
        return {"shape": list(self.cpt.shape), "cpt": self.cpt.ravel().tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "DiscreteNode":
        return cls(np.array(d["cpt"], float).reshape(d["shape"]))


def _node_key(v) -> str:
    return "Y" if v == Y else str(int(v))


def _parse_node_key(k: str):
    return Y if k == "Y" else int(k)


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SemModel:
    dag: LatentDag
    backend: str
    C: int
    M: int
    params: tuple  # length M + 1; last entry is the target domain
    mixing: MixingSpec = field(default_factory=MixingSpec)
    seed: int = 0
    arity: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ModelError(f"unknown backend {self.backend!r}")
        if self.C < 2:
            raise ModelError("need at least two classes")
        if self.M < 1:
            raise ModelError("need at least one source domain")
        if len(self.params) != self.M + 1:
            raise ModelError("params must cover every source domain and the target")
        if self.backend == "discrete":
            if len(self.arity) != self.dag.n:
                raise ModelError("discrete backend needs one arity per latent node")
            if self.mixing.kind not in ("identity", "permutation"):
                raise ModelError("discrete backend supports identity/permutation mixing only")
        elif self.mixing.kind != "identity" and self.mixing.matrix.shape[0] != self.dag.n:
            raise ModelError("mixing dimension must equal n")
        for idx, dom in enumerate(self.params):
            for v in self.dag.nodes:
                if v not in dom:
                    raise ModelError(f"missing params for node {v!r} in domain {idx}")
                self._validate_node(v, dom[v])

    def _validate_node(self, v, p) -> None:
        parents = self.dag.parents(v)
        lp = self.dag.latent_parents(v)
        if self.backend == "gaussian":
            if v == Y:
                if not isinstance(p, GaussianLabel) or p.W.shape != (self.C, len(lp)) or p.b.shape != (self.C,):
                    raise ModelError("bad label params")
            else:
                if not isinstance(p, GaussianNode):
                    raise ModelError(f"bad params for node {v}")
                want = self.C if Y in parents else 1
                if p.weights.shape != (len(lp),) or p.intercept.shape != (want,):
                    raise ModelError(f"parameter shape mismatch for node {v}")
                if not p.sigma > 0:
                    raise ModelError(f"noise scale of node {v} must be positive")
        else:
            shape = tuple(self.card(q) for q in parents) + (self.card(v),)
            if not isinstance(p, DiscreteNode) or p.cpt.shape != shape:
                raise ModelError(f"CPT of node {v!r} must have shape {shape}")
            if np.any(p.cpt <= 0) or np.max(np.abs(p.cpt.sum(-1) - 1.0)) > 1e-12:
                raise ModelError(f"CPT rows of node {v!r} must be positive and sum to 1")

    # -- helpers -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.dag.n

    def card(self, v) -> int:
        return self.C if v == Y else int(self.arity[v])

    def domain_index(self, u) -> int:
        if u == TARGET:
            return self.M
        if isinstance(u, (int, np.integer)) and not isinstance(u, bool) and 0 <= u < self.M:
            return int(u)
        raise ModelError(f"invalid domain id {u!r}")

    def node_params(self, u, v):
        return self.params[self.domain_index(u)][v]

    def domains(self) -> list:
        return list(range(self.M)) + [TARGET]

    # -- serialisation -----------------------------------------------------
    def to_json(self) -> dict:
        return {
            "dag": self.dag.to_json(),
            "backend": self.backend,
            "C": self.C,
            "M": self.M,
            "arity": list(self.arity),
            "seed": int(self.seed),
            "mixing": self.mixing.to_json(),
            "params": [
                {_node_key(v): p.to_json() for v, p in dom.items()} for dom in self.params
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SemModel":
        dag = LatentDag.from_json(d["dag"])
        backend = d["backend"]
        params = []
        for dom in d["params"]:
            out = {}
            for k, p in dom.items():
                v = _parse_node_key(k)
                if backend == "discrete":
                    out[v] = DiscreteNode.from_json(p)
                elif v == Y:
                    out[v] = GaussianLabel.from_json(p)
                else:
                    out[v] = GaussianNode.from_json(p)
            params.append(out)
        return cls(dag, backend, int(d["C"]), int(d["M"]), tuple(params),
                   MixingSpec.from_json(d["mixing"]), int(d.get("seed", 0)),
                   tuple(int(a) for a in d.get("arity", [])), dict(d.get("meta", {})))

    def model_hash(self) -> str:
        return sha256_bytes(canonical_json(self.to_json()).encode("utf-8"))

    def with_params(self, params, **changes) -> "SemModel":
        kw = dict(dag=self.dag, backend=self.backend, C=self.C, M=self.M, params=tuple(params),
                  mixing=self.mixing, seed=self.seed, arity=self.arity, meta=copy.deepcopy(self.meta))
        kw.update(changes)
        return SemModel(**kw)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def _lin(cols: list[np.ndarray], w: np.ndarray, m: int) -> np.ndarray:
    out = np.zeros(m)
    for c, wj in zip(cols, w):
        out += wj * c
    return out


def softmax_logits(model: SemModel, u, z: np.ndarray) -> np.ndarray:
    """Label logits ``W z_pa + b`` for every row of ``z`` (gaussian backend)."""
    p = model.node_params(u, Y)
    lp = model.dag.latent_parents(Y)
    z = np.atleast_2d(z)
    out = np.tile(p.b, (z.shape[0], 1))
    for j, q in enumerate(lp):
        out += z[:, q : q + 1] * p.W[:, j][None, :]
    return out


def sample_domain(model: SemModel, u, m: int, seed: int | None = None, start: int = 0):
    """``m`` ancestral draws from domain ``u``; returns ``(x, y, z)``, labels 0-based."""
    if m < 1:
        raise ModelError("sample count must be positive")
    idx = model.domain_index(u)
    seed = model.seed if seed is None else seed
    n = model.n
    U = _rng.uniforms(seed, idx, start, m, n + 1)
    z = np.zeros((m, n))
    y = np.zeros(m, dtype=np.int64)
    dom = model.params[idx]
    dag = model.dag
    if model.backend == "gaussian":
        eps = ndtri(U[:, :n])
        for v in dag.topological_order():
            p = dom[v]
            lp = dag.latent_parents(v)
            if v == Y:
                logits = softmax_logits(model, u, z)
                y = _categorical(logits - logsumexp(logits, axis=1, keepdims=True), U[:, n])
            else:
                mu = _lin([z[:, q] for q in lp], p.weights, m)
                mu += p.intercept[y] if Y in dag.parents(v) else p.intercept[0]
                z[:, v] = mu + p.sigma * eps[:, v]
    else:
        for v in dag.topological_order():
            cpt = dom[v].cpt
            idxs = tuple((y if q == Y else z[:, q].astype(np.int64)) for q in dag.parents(v))
            rows = cpt[idxs] if idxs else np.broadcast_to(cpt, (m, cpt.shape[-1]))
            col = n if v == Y else v
            draw = np.minimum((np.cumsum(rows, axis=1) < U[:, col : col + 1]).sum(axis=1),
                              rows.shape[1] - 1)
            if v == Y:
                y = draw.astype(np.int64)
            else:
                z[:, v] = draw
    return model.mixing.forward(z), y, z


def _categorical(logp: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(np.exp(logp), axis=1)
    return np.minimum((cdf < u[:, None]).sum(axis=1), logp.shape[1] - 1).astype(np.int64)


@dataclass
class MultiDomainDataset:
    sources: list  # [(domain id, x, y)]
    target: np.ndarray
    provenance: dict
    target_labels: np.ndarray | None = None  # simulator oracle, evaluation only

    def __post_init__(self):
        if not self.sources:
            raise ModelError("need at least one source domain")
        if self.target.shape[0] == 0:
            raise ModelError("target sample set is empty")
        d = self.target.shape[1]
        for _, x, y in self.sources:
            if x.shape[1] != d or len(x) != len(y):
                raise ModelError("inconsistent sample dimensions")

    @property
    def dim(self) -> int:
        return self.target.shape[1]


def build_dataset(model: SemModel, m_source: int, m_target: int, seed: int | None = None,
                  keep_oracle: bool = True) -> MultiDomainDataset:
    sources = []
    for u in range(model.M):
        x, y, _ = sample_domain(model, u, m_source, seed)
        sources.append((u, x, y))
    xt, yt, _ = sample_domain(model, TARGET, m_target, seed)
    prov = {"seed": int(model.seed if seed is None else seed), "model_hash": model.model_hash(),
            "backend": model.backend, "C": model.C,
            "arity": {str(v): int(a) for v, a in enumerate(model.arity)},
            "change_dim": model.meta.get("change_dim")}
    return MultiDomainDataset(sources, xt, prov, yt if keep_oracle else None)


# --------------------------------------------------------------------------
# exact quantities
# --------------------------------------------------------------------------

def exact_joint(model: SemModel, u) -> np.ndarray:
    """``P(Z = z, Y = c)`` as an array with axes ``(Z_0, ..., Z_{n-1}, Y)``."""
    if model.backend != "discrete":
        raise ModelError("exact joint tables need the discrete backend")
    shape = tuple(model.card(v) for v in range(model.n)) + (model.C,)
    if int(np.prod(shape)) > MAX_JOINT_ENTRIES:
        raise ModelError(f"state space {shape} exceeds {MAX_JOINT_ENTRIES} entries")
    axis = {v: v for v in range(model.n)}
    axis[Y] = model.n
    table = np.ones(shape)
    dom = model.params[model.domain_index(u)]
    for v in model.dag.nodes:
        cpt = dom[v].cpt
        axes = [axis[q] for q in model.dag.parents(v)] + [axis[v]]
        bshape = [1] * len(shape)
        # transpose so that axes appear in increasing order before broadcasting
        order = np.argsort(axes)
        arr = np.transpose(cpt, order)
        for a in sorted(axes):
            bshape[a] = shape[a]
        table = table * arr.reshape(bshape)
    return table


def log_density(model: SemModel, u, z: np.ndarray, c) -> np.ndarray:
    """``log p(Z = z, Y = c)`` for gaussian models, vectorised over rows."""
    if model.backend != "gaussian":
        raise ModelError("densities need the gaussian backend")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    m = z.shape[0]
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (m,))
    dom = model.params[model.domain_index(u)]
    dag = model.dag
    total = np.zeros(m)
    for v in dag.nodes:
        p = dom[v]
        if v == Y:
            logits = softmax_logits(model, u, z)
            total += logits[np.arange(m), c] - logsumexp(logits, axis=1)
            continue
        lp = dag.latent_parents(v)
        mu = _lin([z[:, q] for q in lp], p.weights, m)
        mu += p.intercept[c] if Y in dag.parents(v) else p.intercept[0]
        r = (z[:, v] - mu) / p.sigma
        total += -0.5 * r * r - np.log(p.sigma) - 0.5 * np.log(2 * np.pi)
    return total


def exact_posterior(model: SemModel, u, z: np.ndarray) -> np.ndarray:
    """``P(Y | Z = z)`` straight from the full joint; rows of ``z`` or configs."""
    if model.backend == "discrete":
        table = exact_joint(model, u)
        zi = np.atleast_2d(np.asarray(z)).astype(np.int64)
        rows = table[tuple(zi[:, j] for j in range(model.n))]
        return rows / rows.sum(axis=1, keepdims=True)
    z = np.atleast_2d(z)
    logj = np.stack([log_density(model, u, z, c) for c in range(model.C)], axis=1)
    return np.exp(logj - logsumexp(logj, axis=1, keepdims=True))


def grad_hess(model: SemModel, u, z: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient and Hessian of ``log p(Z, Y = c)`` in ``z``."""
    if model.backend != "gaussian":
        raise ModelError("scores are undefined for the discrete backend")
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape != (model.n,) or not np.all(np.isfinite(z)):
        raise ModelError("z must be a finite vector of length n")
    n = model.n
    dom = model.params[model.domain_index(u)]
    dag = model.dag
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    for v in dag.latent_nodes:
        p = dom[v]
        a = np.zeros(n)
        a[v] = 1.0
        for q, w in zip(dag.latent_parents(v), p.weights):
            a[q] -= w
        b = p.intercept[c] if Y in dag.parents(v) else p.intercept[0]
        prec = 1.0 / (p.sigma * p.sigma)
        grad -= a * (a @ z - b) * prec
        hess -= np.outer(a, a) * prec
    lab = dom[Y]
    lp = dag.latent_parents(Y)
    if lp:
        logits = lab.W @ z[lp] + lab.b
        pr = np.exp(logits - logsumexp(logits))
        wbar = pr @ lab.W
        grad[lp] += lab.W[c] - wbar
        cov = (lab.W * pr[:, None]).T @ lab.W - np.outer(wbar, wbar)
        hess[np.ix_(lp, lp)] -= cov
    return grad, hess


def score_z(model: SemModel, u, z, c: int) -> np.ndarray:
    return grad_hess(model, u, z, c)[0]


def latent_edges(model: SemModel) -> list[tuple[int, int]]:
    return moralize(model.dag).latent_edges()


def second_scores(model: SemModel, u, z, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal second derivatives and cross terms over latent Markov-network edges."""
    _, h = grad_hess(model, u, z, c)
    edges = latent_edges(model)
    cross = np.array([h[i, j] for i, j in edges], dtype=np.float64)
    return np.diag(h).copy(), cross


def generate_benchmark(config):
    """Scenario generator; see :mod:`mbda.benchmark`."""
    from .benchmark import generate_benchmark as _generate

    return _generate(config)
