"""Rank checks for sufficient variability of scores and class conditionals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .graph import blanket_partition
from .sem import ModelError, SemModel, grad_hess, latent_edges, sample_domain

DEFAULT_TOL = 1e-8


@dataclass
class VariabilityReport:
    kind: str
    required_rank: int
    achieved_rank: int
    singular_values: list
    tolerance: float
    probes: list
    verdict: bool
    rows: int = 0
    reason: str = ""
    per_probe: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"kind": self.kind, "required_rank": self.required_rank,
                "achieved_rank": self.achieved_rank, "singular_values": list(self.singular_values),
                "tolerance": self.tolerance, "probes": self.probes, "verdict": self.verdict,
                "rows": self.rows, "reason": self.reason, "per_probe_rank": self.per_probe}


def numerical_rank(mat: np.ndarray, tol: float = DEFAULT_TOL) -> tuple[int, np.ndarray]:
    """``#{s_k > tol * s_max}``; zero when the largest singular value is zero."""
    if mat.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def build_w(model: SemModel, u, z, c: int) -> np.ndarray:
    g, h = grad_hess(model, u, z, c)
    cross = [h[i, j] for i, j in latent_edges(model)]
    return np.concatenate([g, np.diag(h), np.array(cross, dtype=np.float64)])


def build_tau(model: SemModel, u, z, c: int) -> np.ndarray:
    mb = list(blanket_partition(model.dag).mb)
    return grad_hess(model, u, z, c)[0][mb]


def default_probes(model: SemModel, k: int = 16, seed: int | None = None) -> list:
    """``k`` latent points drawn from the pooled source marginal, plus the origin."""
    seed = model.seed if seed is None else seed
    g = _rng.generator(seed, 11)
    doms = g.integers(0, model.M, size=k)
    pts = []
    for j, u in enumerate(doms):
        _, _, z = sample_domain(model, int(u), 1, seed=seed, start=(1 << 40) + j)
        pts.append(z[0])
    pts.append(np.zeros(model.n))
    return pts


def _normalise_probes(model, probes):
    if probes is None or len(probes) == 0:
        raise ModelError("no probes supplied")
    out = []
    for p in probes:
        if isinstance(p, tuple) and len(p) == 2 and np.ndim(p[1]) == 0:
            out.append((np.asarray(p[0], float), [int(p[1])]))
        else:
            out.append((np.asarray(p, float), list(range(model.C))))
    return out


def _report(kind, required, ranks, worst_s, tol, probes, rows, reason=""):
    achieved = min(ranks) if ranks else 0
    achieved = min(achieved, required)
    verdict = not reason and achieved == required
    plist = [{"z": z.tolist(), "classes": cs} for z, cs in probes]
    return VariabilityReport(kind, required, achieved, [float(s) for s in worst_s], tol, plist,
                             bool(verdict), rows, reason, ranks)


def check_sufficient_changes_z(model: SemModel, probes=None, tol: float = DEFAULT_TOL):
    if model.backend != "gaussian":
        raise ModelError("score checks need the gaussian backend")
    probes = _normalise_probes(model, probes if probes is not None else default_probes(model))
    required = 2 * model.n + len(latent_edges(model))
    reason = ""
    if model.M < required + 1:
        reason = f"insufficient domains: need {required + 1}, have {model.M}"
    ranks, worst, best_rank = [], np.zeros(0), None
    for z, classes in probes:
        for c in classes:
            w0 = build_w(model, 0, z, c)
            rows = np.array([build_w(model, k, z, c) - w0 for k in range(1, model.M)])
            r, s = numerical_rank(rows.reshape(-1, required), tol)
            ranks.append(r)
            if best_rank is None or r < best_rank:
                best_rank, worst = r, s
    return _report("assumptionZ", required, ranks, worst, tol, probes, model.M - 1, reason)


def check_sufficient_changes_y(model: SemModel, probes=None, tol: float = DEFAULT_TOL):
    if model.backend != "gaussian":
        raise ModelError("score checks need the gaussian backend")
    probes = _normalise_probes(model, probes if probes is not None else default_probes(model))
    required = len(blanket_partition(model.dag).mb)
    nrows = model.M * (model.C - 1)
    reason = "" if nrows >= required else f"insufficient pairs: {nrows} < {required}"
    ranks, worst, best_rank = [], np.zeros(0), None
    for z, _ in probes:
        rows = []
        for u in range(model.M):
            t1 = build_tau(model, u, z, 0)
            rows += [build_tau(model, u, z, c) - t1 for c in range(1, model.C)]
        r, s = numerical_rank(np.array(rows).reshape(-1, required), tol)
        ranks.append(r)
        if best_rank is None or r < best_rank:
            best_rank, worst = r, s
    return _report("assumptionY", required, ranks, worst, tol, probes, nrows, reason)


# --------------------------------------------------------------------------
# linear independence of mixed class conditionals
# --------------------------------------------------------------------------

def _class_functions(family, alpha: np.ndarray, grid) -> np.ndarray:
    """Row c: the class-c mixture density evaluated on the grid."""
    from .adapt import mixture_conditional

    rows = []
    for c in range(family.C):
        cond = mixture_conditional(family, alpha[:, c], c, strict=False)
        if family.backend == "discrete":
            rows.append(cond.ravel())
        else:
            zs, zc = grid
            rows.append(np.exp(cond.logpdf(zc, zs)))
    return np.array(rows)


def default_grid(family, k: int = 64, seed: int = 0):
    if family.backend == "discrete":
        return None
    g = _rng.generator(seed, 13)
    ns, nc = family.A.shape[2], family.A.shape[1]
    zs = g.normal(0.0, 1.0, (k, ns))
    centre = family.b.mean(axis=(0, 1))
    spread = np.sqrt(np.diagonal(family.cov, axis1=1, axis2=2).mean(axis=0))
    zc = centre + np.einsum("kj,mij->ki", zs, family.A) / family.M + g.normal(0, 1.5, (k, nc)) * spread
    return zs, zc


def check_assumption5(family, draws: int = 32, grid=None, tol: float = DEFAULT_TOL,
                      seed: int = 0) -> VariabilityReport:
    """Rank of ``beta_c P^{alpha_c} + beta'_c P^{alpha'_c}`` stacked over classes.

    Half of the draws share ``(alpha, alpha', beta, beta')`` across classes so
    that classes with identical source conditionals are exposed.
    """
    if family.backend == "gaussian" and family.A.shape[1] == 0:
        raise ModelError("no children: conditionals are constant")
    grid = default_grid(family, seed=seed) if grid is None else grid
    npts = family.tables.shape[2] * family.tables.shape[3] if family.backend == "discrete" else len(grid[0])
    if npts < family.C:
        raise ModelError("evaluation grid has fewer points than classes")
    g = _rng.generator(seed, 17)
    M, C = family.M, family.C
    ranks, worst, best_rank = [], np.zeros(0), None
    probes = []
    for d in range(draws):
        shared = d % 2 == 0
        shape = (M, 1) if shared else (M, C)
        a = np.broadcast_to(g.dirichlet(np.ones(M), size=shape[1]).T, (M, C))
        a2 = np.broadcast_to(g.dirichlet(np.ones(M), size=shape[1]).T, (M, C))
        beta = np.broadcast_to(g.uniform(0.2, 1.0, shape[1]), (C,))
        beta2 = np.broadcast_to(g.uniform(-0.15, 1.0, shape[1]), (C,))
        mat = beta[:, None] * _class_functions(family, a, grid) + beta2[:, None] * _class_functions(family, a2, grid)
        r, s = numerical_rank(mat, tol)
        ranks.append(r)
        probes.append((np.array([d], float), [int(shared)]))
        if best_rank is None or r < best_rank:
            best_rank, worst = r, s
    rep = _report("assumption5", C, ranks, worst, tol, probes, C)
    rep.probes = [{"draw": d, "shared": bool(d % 2 == 0)} for d in range(draws)]
    return rep
