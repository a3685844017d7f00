"""Random multi-domain benchmark construction."""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from .graph import (LatentDag, Y, blanket_partition, check_assumption3, moralize,
                    proposition_premises)
from .sem import (DiscreteNode, GaussianLabel, GaussianNode, MixingSpec, ModelError,
                  MultiDomainDataset, SemModel, build_dataset)

SCENARIOS = ("covariate-shift", "target-shift", "conditional-shift", "general-shift", "none")


class BenchmarkError(ModelError):
    pass


@dataclass
class BenchmarkConfig:
    scenario: str = "general-shift"
    backend: str = "gaussian"
    n: int = 4
    C: int = 2
    M: int | str = "auto"
    arity: int = 2
    ch_arity: int | None = None
    change_dim: int | None = None
    samples: int = 2000
    target_samples: int | None = None
    seed: int = 0
    shift: float = 1.0
    target_label_shift: float = 0.0
    label_strength: float = 1.5
    class_separation: float = 1.5
    mixing: str = "identity"
    edge_prob: float = 0.5
    max_ch: int = 1
    max_sps: int = 2
    min_sps: int = 0
    min_pa: int = 1
    min_ch: int = 1
    require_assumption3: bool = True
    in_span: bool = True
    dag: dict | None = None
    validate: list | None = None
    max_attempts: int = 200
    probes: int = 16
    min_class_prob: float = 0.02

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise BenchmarkError(f"unknown scenario {self.scenario!r}")
        if self.backend not in ("gaussian", "discrete"):
            raise BenchmarkError(f"unknown backend {self.backend!r}")
        for name in ("n", "C", "arity", "samples", "max_attempts"):
            if int(getattr(self, name)) < 1:
                raise BenchmarkError(f"{name} must be positive")
        if self.C < 2:
            raise BenchmarkError("need at least two classes")
        if self.M != "auto" and int(self.M) < 1:
            raise BenchmarkError("M must be positive or 'auto'")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise BenchmarkError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def varying_nodes(scenario: str, part) -> list:
    if scenario == "none":
        return []
    if scenario == "target-shift":
        return [Y]
    if scenario == "covariate-shift":
        return list(part.pa)
    if scenario == "conditional-shift":
        return list(part.ch)
    return list(range(len(part.pa) + len(part.ch) + len(part.sps) + len(part.comp))) + [Y]


def auto_domains(dag: LatentDag) -> int:
    return 2 * dag.n + len(moralize(dag).latent_edges()) + 2


# --------------------------------------------------------------------------
# structure
# --------------------------------------------------------------------------

def _random_dag(cfg: BenchmarkConfig, g: np.random.Generator) -> LatentDag:
    nodes = list(range(cfg.n)) + [Y]
    order = [nodes[i] for i in g.permutation(len(nodes))]
    edges = []
    for a in range(len(order)):
        for b in range(a + 1, len(order)):
            if g.random() < cfg.edge_prob:
                edges.append((order[a], order[b]))
    return LatentDag(cfg.n, edges)


def _structure_failure(dag: LatentDag, cfg: BenchmarkConfig) -> str | None:
    part = blanket_partition(dag)
    if len(part.pa) < cfg.min_pa:
        return "too few parents of Y"
    if len(part.ch) < cfg.min_ch or len(part.ch) > cfg.max_ch:
        return "children count out of range"
    if len(part.sps) < cfg.min_sps:
        return "too few spouses"
    if len(part.sps) > cfg.max_sps:
        return "too many spouses"
    if any(q in part.ch for v in part.ch for q in dag.latent_parents(v)):
        return "child-to-child edge"
    if not proposition_premises(dag)["holds"]:
        return "factorisation premises"
    if cfg.require_assumption3 and not check_assumption3(dag)["holds"]:
        return "assumption3"
    return None


def _draw_structure(cfg: BenchmarkConfig, g: np.random.Generator, failures: Counter,
                    cap: int = 20_000) -> LatentDag | None:
    if cfg.dag is not None:
        dag = LatentDag.from_json(cfg.dag)
        why = _structure_failure(dag, cfg)
        if why:
            failures[why] += 1
            return None
        return dag
    for _ in range(cap):
        dag = _random_dag(cfg, g)
        why = _structure_failure(dag, cfg)
        if why is None:
            return dag
        failures[why] += 1
    return None


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

def _gaussian_base(dag: LatentDag, cfg: BenchmarkConfig, g: np.random.Generator) -> dict:
    out = {}
    for v in dag.latent_nodes:
        lp = dag.latent_parents(v)
        w = g.uniform(0.5, 1.2, len(lp)) * g.choice([-1.0, 1.0], len(lp))
        k = cfg.C if Y in dag.parents(v) else 1
        icpt = g.normal(0.0, cfg.class_separation, k)
        out[v] = GaussianNode(w, icpt, float(g.uniform(0.6, 1.2)))
    lp = dag.latent_parents(Y)
    W = g.normal(0.0, cfg.label_strength, (cfg.C, len(lp)))
    # centre the logits at the mean of z_pa so that no class starts out negligible
    mean = _latent_means(dag, out)
    out[Y] = GaussianLabel(W, g.normal(0.0, 0.5, cfg.C) - W @ mean[lp])
    return out


def _latent_means(dag: LatentDag, params: dict) -> np.ndarray:
    """Means of non-descendants of Y (class intercepts are never needed there)."""
    mean = np.zeros(dag.n)
    for v in dag.topological_order():
        if v == Y or Y in dag.parents(v):
            continue
        p = params[v]
        mean[v] = p.intercept[0] + sum(w * mean[q] for q, w in zip(dag.latent_parents(v), p.weights))
    return mean


def _gaussian_perturb(p, cfg: BenchmarkConfig, g: np.random.Generator):
    s = cfg.shift
    if isinstance(p, GaussianLabel):
        dW = s * g.normal(0.0, 0.4, p.W.shape)
        return GaussianLabel(p.W + dW, p.b + s * g.normal(0.0, 0.7, p.b.shape))
    return GaussianNode(p.weights + s * g.normal(0.0, 0.5, p.weights.shape),
                        p.intercept + s * g.normal(0.0, 1.0, p.intercept.shape),
                        float(p.sigma * np.exp(s * g.normal(0.0, 0.35))))


def _dirichlet_cpt(shape: tuple, g: np.random.Generator, floor: float = 0.05) -> np.ndarray:
    k = shape[-1]
    raw = g.dirichlet(np.ones(k), size=int(np.prod(shape[:-1])) or 1).reshape(shape)
    raw = (1.0 - floor * k) * raw + floor
    return raw / raw.sum(axis=-1, keepdims=True)


def _discrete_base(dag, cfg, arity, g) -> dict:
    card = lambda v: cfg.C if v == Y else arity[v]
    out = {}
    for v in dag.nodes:
        shape = tuple(card(q) for q in dag.parents(v)) + (card(v),)
        out[v] = DiscreteNode(_dirichlet_cpt(shape, g))
    return out


def _discrete_perturb(p: DiscreteNode, cfg, g) -> DiscreteNode:
    s = min(max(cfg.shift, 0.0), 1.0)
    cpt = (1.0 - s) * p.cpt + s * _dirichlet_cpt(p.cpt.shape, g)
    return DiscreteNode(cpt / cpt.sum(axis=-1, keepdims=True))


def _directions(shape: tuple, q: int, g: np.random.Generator) -> np.ndarray:
    """``q`` random directions in CPT space, each row summing to zero."""
    D = g.normal(0.0, 1.0, (q,) + shape)
    D -= D.mean(axis=-1, keepdims=True)
    return D / np.abs(D).max(axis=tuple(range(1, D.ndim)), keepdims=True)


def _low_rank_perturb(p: DiscreteNode, D: np.ndarray, cfg, g) -> DiscreteNode:
    """Move a CPT inside the affine family ``base + span(D)``, keeping entries positive."""
    theta = g.uniform(-1.0, 1.0, D.shape[0])
    delta = np.tensordot(theta, D, axes=1)
    room = np.min((p.cpt - 0.02) / np.maximum(-delta, 1e-300))
    scale = min(cfg.shift, 0.9 * room)
    return DiscreteNode(p.cpt + scale * delta)


def _shift_label(p, cfg, g):
    """Extra target-only label shift that moves the class prior."""
    t = cfg.target_label_shift
    if not t:
        return p
    if isinstance(p, GaussianLabel):
        b = p.b.copy()
        b[g.integers(cfg.C)] += t
        return GaussianLabel(p.W.copy(), b)
    cpt = p.cpt.copy()
    cpt[..., g.integers(cfg.C)] *= np.exp(t)
    return DiscreteNode(cpt / cpt.sum(axis=-1, keepdims=True))


def _in_span_gaussian(dag, part, sources: list, alpha: np.ndarray) -> dict:
    """Child mechanisms whose blanket conditional is a natural-parameter mixture."""
    out = {}
    for v in part.ch:
        lp = dag.latent_parents(v)
        prec = np.array([1.0 / s[v].sigma ** 2 for s in sources])
        lam = alpha @ prec
        w = sum(a * p * s[v].weights for a, p, s in zip(alpha, prec, sources)) / lam
        icpt = sum(a * p * s[v].intercept for a, p, s in zip(alpha, prec, sources)) / lam
        out[v] = GaussianNode(np.asarray(w, float).reshape(len(lp)), np.asarray(icpt, float),
                              float(1.0 / np.sqrt(lam)))
    return out


def _in_span_discrete(dag, part, sources: list, alpha: np.ndarray) -> dict:
    """Single child CPT mixed per class: ``P(ch | Y=c, sps) = sum_i alpha_ic P_i``."""
    (v,) = part.ch
    parents = dag.parents(v)
    yax = parents.index(Y)
    stack = np.stack([s[v].cpt for s in sources])  # (M, ..., k)
    moved = np.moveaxis(stack, 1 + yax, 1)  # (M, C, ..., k)
    mix = np.einsum("mc,mc...->c...", alpha, moved)
    return {v: DiscreteNode(np.moveaxis(mix, 0, yax))}


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def _default_checks(cfg: BenchmarkConfig) -> list:
    if cfg.validate is not None:
        return list(cfg.validate)
    if cfg.backend == "discrete":
        return ["assumption5"] if cfg.scenario in ("conditional-shift", "general-shift") else []
    # class-score differences cannot vary across domains when only P(z_pa) moves
    checks = [] if cfg.scenario in ("covariate-shift", "none") else ["assumptionY"]
    if cfg.scenario == "general-shift":
        checks.append("assumptionZ")
    if cfg.scenario in ("conditional-shift", "general-shift"):
        checks.append("assumption5")
    return checks


def _run_checks(model: SemModel, checks: list, cfg: BenchmarkConfig) -> tuple[dict, str | None]:
    from . import variability

    results = {}
    for name in checks:
        if name == "assumptionZ":
            rep = variability.check_sufficient_changes_z(
                model, variability.default_probes(model, cfg.probes))
        elif name == "assumptionY":
            rep = variability.check_sufficient_changes_y(
                model, variability.default_probes(model, cfg.probes))
        elif name == "assumption5":
            from .adapt import fit_source_conditionals

            rep = variability.check_assumption5(fit_source_conditionals(model), seed=model.seed)
        else:
            raise BenchmarkError(f"unknown validation {name!r}")
        if rep.reason and rep.reason.startswith("insufficient"):
            results[name] = {"skipped": rep.reason}
            continue
        results[name] = {"verdict": rep.verdict, "achieved_rank": rep.achieved_rank,
                         "required_rank": rep.required_rank}
        if not rep.verdict:
            return results, name
    return results, None


def _min_class_prob(model: SemModel) -> float:
    """Smallest class prior over all domains; Monte Carlo for the gaussian backend."""
    from .sem import TARGET, exact_joint, sample_domain

    low = 1.0
    for u in list(range(model.M)) + [TARGET]:
        if model.backend == "discrete":
            prior = exact_joint(model, u).reshape(-1, model.C).sum(axis=0)
        else:
            y = sample_domain(model, u, 4000, model.seed, start=1 << 43)[1]
            prior = np.bincount(y, minlength=model.C) / y.size
        low = min(low, float(prior.min()))
    return low


def _mixing(cfg: BenchmarkConfig, n: int, g: np.random.Generator) -> MixingSpec:
    if cfg.mixing == "identity":
        return MixingSpec()
    if cfg.mixing == "permutation":
        return MixingSpec("permutation", np.eye(n)[g.permutation(n)])
    for _ in range(100):
        A = g.normal(0.0, 1.0, (n, n)) + 1.5 * np.eye(n)
        rows = A / np.linalg.norm(A, axis=1, keepdims=True)
        if abs(np.linalg.det(rows)) > 0.05:
            return MixingSpec(cfg.mixing, A, 0.5 if cfg.mixing == "linear_monotone" else 1.0)
    raise BenchmarkError("could not draw a well-conditioned mixing matrix")


def generate_model(cfg: BenchmarkConfig) -> SemModel:
    failures: Counter = Counter()
    checks: Counter = Counter()
    for attempt in range(cfg.max_attempts):
        g = _rng.generator(cfg.seed, 1, attempt)
        dag = _draw_structure(cfg, g, failures)
        if dag is None:
            break
        part = blanket_partition(dag)
        M = auto_domains(dag) if cfg.M == "auto" else int(cfg.M)
        model = _build_params(cfg, dag, part, M, g)
        if model is None:
            failures["in-span construction"] += 1
            continue
        if _min_class_prob(model) < cfg.min_class_prob:
            failures["class balance"] += 1
            continue
        results, failed = _run_checks(model, _default_checks(cfg), cfg)
        if failed:
            checks[failed] += 1
            continue
        meta = dict(model.meta)
        meta.update({"attempts": attempt + 1, "validation": results})
        return model.with_params(model.params, meta=meta)
    worst = (checks or failures).most_common(1)[0][0] if (checks or failures) else "unknown"
    raise BenchmarkError(f"no valid benchmark after {cfg.max_attempts} attempts; "
                         f"most frequent failure: {worst}")


def _build_params(cfg, dag, part, M, g) -> SemModel | None:
    vary = varying_nodes(cfg.scenario, part)
    if cfg.backend == "gaussian":
        base = _gaussian_base(dag, cfg, g)
        perturb = lambda p: _gaussian_perturb(p, cfg, g)
        arity = ()
    else:
        arity = tuple((cfg.ch_arity or cfg.arity) if v in part.ch else cfg.arity
                      for v in range(cfg.n))
        base = _discrete_base(dag, cfg, arity, g)
        perturb = lambda p: _discrete_perturb(p, cfg, g)
    low_rank = {}
    if cfg.backend == "discrete" and cfg.change_dim:
        for v in part.ch:
            if v in vary:
                low_rank[v] = _directions(base[v].cpt.shape, cfg.change_dim, g)
    sources = []
    for _ in range(M):
        dom = dict(base)
        for v in vary:
            if v in low_rank:
                dom[v] = _low_rank_perturb(base[v], low_rank[v], cfg, g)
            else:
                dom[v] = perturb(base[v])
        sources.append(dom)
    target = dict(base)
    for v in vary:
        if v not in part.ch:
            target[v] = perturb(base[v])
    target[Y] = _shift_label(target[Y], cfg, g)
    meta = {"scenario": cfg.scenario, "varying": [("Y" if v == Y else int(v)) for v in vary],
            "config": cfg.to_dict()}
    if low_rank:
        meta["change_dim"] = int(cfg.change_dim)
    ch_vary = [v for v in vary if v in part.ch]
    if ch_vary:
        if cfg.backend == "gaussian":
            a = g.dirichlet(np.ones(M))
            alpha = np.repeat(a[:, None], cfg.C, axis=1)
            target.update(_in_span_gaussian(dag, part, sources, a))
        else:
            if len(part.ch) != 1:
                return None
            alpha = g.dirichlet(np.ones(M), size=cfg.C).T
            target.update(_in_span_discrete(dag, part, sources, alpha))
        meta["alpha_star"] = alpha.tolist()
    elif cfg.in_span:
        meta["alpha_star"] = np.full((M, cfg.C), 1.0 / M).tolist()
    try:
        return SemModel(dag, cfg.backend, cfg.C, M, tuple(sources) + (target,),
                        _mixing(cfg, cfg.n, g), int(cfg.seed), arity, meta)
    except ModelError:
        return None


def generate_benchmark(config: BenchmarkConfig | dict) -> tuple[SemModel, MultiDomainDataset]:
    """Model plus sampled dataset; validation results are stored in ``model.meta``."""
    cfg = config if isinstance(config, BenchmarkConfig) else BenchmarkConfig.from_dict(config)
    model = generate_model(cfg)
    m_t = cfg.target_samples or cfg.samples
    return model, build_dataset(model, cfg.samples, m_t, cfg.seed)


# --------------------------------------------------------------------------
# degenerate variants for negative controls
# --------------------------------------------------------------------------

def clone_domains(model: SemModel, source: int = 0) -> SemModel:
    """Every domain, target included, a copy of source domain ``source``."""
    base = model.params[source]
    params = tuple(dict(base) for _ in range(model.M + 1))
    return model.with_params(params, meta={**model.meta, "degenerate": "cloned-domains"})


def symmetrize_classes(model: SemModel) -> SemModel:
    """Make every child mechanism, and the label's dependence on ``z_pa``, class-free.

    Child conditionals then coincide across classes, which breaks linear
    independence of the class conditionals, and score differences between
    classes vanish.
    """
    dag = model.dag
    params = []
    for dom in model.params:
        new = dict(dom)
        for v in dag.children(Y):
            p = dom[v]
            if model.backend == "gaussian":
                new[v] = GaussianNode(p.weights.copy(), np.full_like(p.intercept, p.intercept[0]), p.sigma)
            else:
                ax = dag.parents(v).index(Y)
                first = np.take(p.cpt, [0], axis=ax)
                new[v] = DiscreteNode(np.repeat(first, model.C, axis=ax))
        if model.backend == "gaussian":
            lab = dom[Y]
            new[Y] = GaussianLabel(np.repeat(lab.W[:1], model.C, axis=0), lab.b.copy())
        params.append(new)
    return model.with_params(tuple(params), meta={**model.meta, "degenerate": "symmetric-classes"})
