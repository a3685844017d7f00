"""``mbda`` command line: generate, check, adapt, eval, verify, graph.

Exit codes: 0 success, 2 input error, 3 non-convergence or assumption failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .adapt import (AdaptError, AdaptationSolution, evaluate, fit_source_conditionals,
                    fit_target, posterior)
from .benchmark import BenchmarkConfig, BenchmarkError, generate_benchmark
from .graph import GraphError, LatentDag, Y, blanket_partition, graph_report
from .identverify import (MapError, RepresentationMap, apply_map, identity_map,
                          posterior_invariance_test, random_map, subspace_fit)
from .sem import TARGET, ModelError, MultiDomainDataset, SemModel, exact_posterior, sample_domain
from .variability import (check_assumption5, check_sufficient_changes_y,
                          check_sufficient_changes_z, default_probes)

EXIT_OK, EXIT_INPUT, EXIT_FAIL = 0, 2, 3
U64 = (1 << 64) - 1


class InputError(Exception):
    pass


class Failure(Exception):
    """Raised after output has been written, to set exit code 3."""


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= U64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _pos_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError("tolerance must be positive")
    return v


def _read_json(path) -> dict:
    if path is None:
        raise InputError("missing required file argument")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{p}: invalid JSON ({exc})")


def _load_model(path) -> SemModel:
    try:
        return SemModel.from_json(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: not a model file ({exc})")


def _emit(obj, out) -> None:
    text = io.canonical_json(obj)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(text.encode("utf-8"))


def _node_name(v) -> str:
    return "theta_Y" if v == Y else f"theta_Z{v}"


# -- generate ---------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.out is None:
        raise InputError("generate needs --out <dir>")
    cfg_dict = dict(_read_json(args.config)) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    try:
        cfg = BenchmarkConfig.from_dict(cfg_dict)
    except TypeError as exc:
        raise InputError(f"bad config: {exc}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, ds = generate_benchmark(cfg)
    files = {}
    io.write_json(out / "model.json", model.to_json())
    files["model.json"] = io.sha256_file(out / "model.json")
    for u, x, y in ds.sources:
        name = f"domain_{u}.csv"
        io.write_domain_csv(out / name, x, y)
        files[name] = io.sha256_file(out / name)
    io.write_domain_csv(out / "target.csv", ds.target, None)
    files["target.csv"] = io.sha256_file(out / "target.csv")
    # labels are simulator ground truth, for evaluation only
    lab = out / "target_labels.csv"
    lab.write_bytes(("y\n" + "".join(f"{int(v) + 1}\n" for v in ds.target_labels)).encode("utf-8"))
    files["target_labels.csv"] = io.sha256_file(lab)
    manifest = {"seed": int(cfg.seed), "config": cfg.to_dict(), "files": files,
                "model_hash": model.model_hash(), "scenario": cfg.scenario,
                "varying": [_node_name(v) for v in model.meta.get("varying", [])],
                "domains": model.M, "target_file": "target.csv",
                "validation": model.meta.get("validation", {})}
    io.write_json(out / "manifest.json", manifest)
    return EXIT_OK


# -- data loading shared by adapt / eval -------------------------------------

def _load_data(data_dir, model: SemModel) -> tuple[MultiDomainDataset, dict]:
    d = Path(data_dir) if data_dir else None
    if d is None or not d.is_dir():
        raise InputError(f"no such data directory: {data_dir}")
    manifest = _read_json(d / "manifest.json")
    try:
        files = manifest["files"]
        for name, digest in files.items():
            if io.sha256_file(d / name) != digest:
                raise InputError(f"{name}: hash does not match manifest")
        sources = []
        for u in range(int(manifest["domains"])):
            x, y = io.read_domain_csv(d / f"domain_{u}.csv")
            if y is None:
                raise InputError(f"domain_{u}.csv has no labels")
            sources.append((u, x, y))
        xt, _ = io.read_domain_csv(d / manifest.get("target_file", "target.csv"))
    except (KeyError, OSError) as exc:
        raise InputError(f"{d}: incomplete data directory ({exc})")
    except ValueError as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(str(exc))
    labels = None
    if (d / "target_labels.csv").is_file():
        rows = (d / "target_labels.csv").read_text(encoding="utf-8").split("\n")[1:]
        labels = np.array([int(r) - 1 for r in rows if r], dtype=np.int64)
    prov = {"seed": int(manifest.get("seed", model.seed)), "model_hash": model.model_hash(),
            "backend": model.backend, "C": model.C,
            "arity": {str(v): int(a) for v, a in enumerate(model.arity)},
            "change_dim": model.meta.get("change_dim")}
    if sources[0][1].shape[1] != model.n or xt.shape[1] != model.n:
        raise InputError("data dimension does not match the model")
    return MultiDomainDataset(sources, xt, prov, labels), manifest


def _demixer(model: SemModel):
    return model.mixing


def _fit(dataset: MultiDomainDataset, model: SemModel, args):
    part = blanket_partition(model.dag)
    fam = fit_source_conditionals(dataset, part, _demixer(model))
    sol = fit_target(fam, dataset.target, _demixer(model), restarts=args.restarts,
                     seed=args.seed if args.seed is not None else dataset.provenance["seed"],
                     tol=args.tol, max_iter=args.max_iter)
    return fam, sol


def cmd_adapt(args) -> int:
    model = _load_model(args.model)
    ds, manifest = _load_data(args.data, model)
    _, sol = _fit(ds, model, args)
    out = sol.to_json()
    out["data_seed"] = int(manifest.get("seed", 0))
    out["model_hash"] = model.model_hash()
    _emit(out, args.out)
    if not sol.converged:
        raise Failure("adaptation did not converge")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.oracle)
    ds, _ = _load_data(args.data, model)
    try:
        sol = AdaptationSolution.from_json(_read_json(args.solution))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{args.solution}: not a solution file ({exc})")
    fam = fit_source_conditionals(ds, blanket_partition(model.dag), _demixer(model))
    if sol.alpha.shape != (fam.M, fam.C) or sol.backend != fam.backend:
        raise InputError("solution does not match the data")
    probs = posterior(sol, fam, ds.target, _demixer(model))
    z = model.mixing.inverse(ds.target)
    oracle = exact_posterior(model, TARGET, z)
    labels = ds.target_labels if ds.target_labels is not None else np.argmax(oracle, axis=1)
    metrics = evaluate(probs, labels, oracle)
    metrics["n"] = int(len(labels))
    _emit(metrics, args.out)
    return EXIT_OK


# -- check --------------------------------------------------------------------

def cmd_check(args) -> int:
    model = _load_model(args.model)
    tol = args.tol or 1e-8
    out, failed = {}, False
    if model.backend == "gaussian":
        probes = default_probes(model, args.probes, args.seed)
        for key, fn in (("assumptionZ", check_sufficient_changes_z),
                        ("assumptionY", check_sufficient_changes_y)):
            rep = fn(model, probes, tol)
            out[key] = rep.to_json()
            failed |= not rep.verdict
    else:
        for key in ("assumptionZ", "assumptionY"):
            out[key] = {"kind": key, "verdict": False, "applicable": False,
                        "reason": "score checks need the gaussian backend"}
    try:
        fam = fit_source_conditionals(model)
        rep = check_assumption5(fam, tol=tol, seed=args.seed or 0)
        out["assumption5"] = rep.to_json()
        failed |= not rep.verdict
    except ModelError as exc:
        out["assumption5"] = {"kind": "assumption5", "verdict": False, "applicable": False,
                              "reason": str(exc)}
    out["partition"] = blanket_partition(model.dag).to_json()
    _emit(out, args.out)
    if failed:
        raise Failure("an assumption check failed")
    return EXIT_OK


# -- verify -------------------------------------------------------------------

def _map_from_json(d: dict, model: SemModel) -> RepresentationMap:
    """``{}`` or ``{"identity": true}``, ``{"seed", "cross_contamination", "warp"}``, or explicit transforms."""
    part = blanket_partition(model.dag)
    if "transforms" in d:
        tr = {k: np.array(v) for k, v in d["transforms"].items()}
        warp = {k: (None if v is None else np.array(v)) for k, v in d.get("warp", {}).items()}
        leak = d.get("leakage")
        return RepresentationMap(part, model.backend, tr, warp, float(d.get("cross_contamination", 0.0)),
                                 None if leak is None else np.array(leak, float), tuple(model.arity))
    if d.get("identity", "seed" not in d):
        return identity_map(part, model.backend, model.arity)
    return random_map(part, model.backend, seed=int(d["seed"]),
                      contamination=float(d.get("cross_contamination", 0.0)),
                      warp=bool(d.get("warp", False)), arity=model.arity)


def cmd_verify(args) -> int:
    model = _load_model(args.model)
    doc = _read_json(args.map) if args.map else {}
    try:
        rmap = _map_from_json(doc, model)
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad map file: {exc}")
    seed = args.seed if args.seed is not None else model.seed
    tol = args.tol or 1e-8
    rep = posterior_invariance_test(model, rmap=rmap, seed=seed, allow_contaminated=True,
                                    m_source=args.samples, m_target=args.target_samples)
    out = rep.to_json()
    part = rmap.partition
    _, _, z = sample_domain(model, TARGET, args.subspace_samples, seed, start=1 << 42)
    zh = apply_map(rmap, z)
    scores = {}
    if model.backend == "gaussian":
        for name in ("pa", "ch", "sps"):
            nodes = list(getattr(part, name))
            if nodes:
                scores[name] = subspace_fit(zh[:, nodes], z[:, nodes], seed=int(seed) & 0xFFFFFFFF)
    out["subspace_scores"] = scores
    out["tolerance"] = tol
    out["flagged"] = bool(rep.max_deviation > tol or rep.argmax_agreement < 1.0)
    out["map"] = rmap.to_json()
    _emit(out, args.out)
    if out["flagged"]:
        raise Failure("posterior changed under the map")
    return EXIT_OK


# -- graph --------------------------------------------------------------------

def cmd_graph(args) -> int:
    path = args.dag or args.config
    try:
        dag = LatentDag.from_json(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise InputError(f"bad DAG file: {exc}")
    _emit(graph_report(dag), args.out)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None)
    common.add_argument("--tol", type=_pos_float, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--config", default=None)
    p = argparse.ArgumentParser(prog="mbda", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="sample a benchmark to a directory")

    c = sub.add_parser("check", parents=[common], help="rank checks on a model")
    c.add_argument("--model", required=True)
    c.add_argument("--probes", type=int, default=16)

    a = sub.add_parser("adapt", parents=[common], help="fit the target solution")
    a.add_argument("--data", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--restarts", type=int, default=8)
    a.add_argument("--max-iter", dest="max_iter", type=int, default=None)

    e = sub.add_parser("eval", parents=[common], help="score a solution against the oracle")
    e.add_argument("--solution", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--oracle", required=True)

    v = sub.add_parser("verify", parents=[common], help="posterior invariance under a map")
    v.add_argument("--model", required=True)
    v.add_argument("--map", default=None)
    v.add_argument("--samples", type=int, default=3000)
    v.add_argument("--target-samples", dest="target_samples", type=int, default=5000)
    v.add_argument("--subspace-samples", dest="subspace_samples", type=int, default=1000)

    g = sub.add_parser("graph", parents=[common], help="partition and Assumption-3 report")
    g.add_argument("--dag", default=None)
    return p


def _parser_defaults(command: str) -> dict:
    ns = _parser().parse_args([command] + _REQUIRED.get(command, []))
    return vars(ns)


_REQUIRED = {"check": ["--model", "-"], "adapt": ["--data", "-", "--model", "-"],
             "eval": ["--solution", "-", "--data", "-", "--oracle", "-"], "verify": ["--model", "-"]}

COMMANDS = {"generate": cmd_generate, "check": cmd_check, "adapt": cmd_adapt,
            "eval": cmd_eval, "verify": cmd_verify, "graph": cmd_graph}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    for name in ("probes", "restarts", "samples", "target_samples", "subspace_samples"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            print(f"mbda: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_INPUT
    try:
        if args.config and args.command not in ("generate", "graph"):
            # a JSON object of flag defaults; explicit flags win
            for key, value in _read_json(args.config).items():
                key = key.replace("-", "_")
                if not hasattr(args, key) or key in ("command", "config"):
                    raise InputError(f"unknown config key {key!r}")
                if getattr(args, key) is None or getattr(args, key) == _parser_defaults(args.command).get(key):
                    setattr(args, key, value)
        return COMMANDS[args.command](args)
    except Failure as exc:
        print(f"mbda: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except BenchmarkError as exc:
        print(f"mbda: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, AdaptError, GraphError, MapError, ModelError, OSError) as exc:
        print(f"mbda: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
