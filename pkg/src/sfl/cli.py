"""Command-line interface: ``sfl gen | solve | embed | bench``."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import instance as inst_mod
from .embed import frt_embed
from .errors import CapExceeded, InvariantViolation, SflError
from .instance import ORACLE_CHOICES, VARIANT_CHOICES, gen_hypercube, gen_random_euclidean
from .lp import solve_conf_lp
from .pipeline import DEFAULT_EPS, bench, pipeline_solve, run_algo

EXIT_OK, EXIT_ERROR, EXIT_CAP, EXIT_INVARIANT = 0, 1, 2, 3
SOLVE_ALGOS = ("pipeline", "greedy", "greedy-structured", "exact", "lp")


def parse_seeds(text: str) -> list[int]:
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfl", description="Submodular facility location solvers.")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate an instance")
    gsub = gen.add_subparsers(dest="family", required=True)
    hc = gsub.add_parser("hypercube", help="greedy lower-bound instance")
    hc.add_argument("--dim", type=int, required=True)
    hc.add_argument("--out", required=True)
    rnd = gsub.add_parser("random", help="random Euclidean instance")
    rnd.add_argument("--n", type=int, required=True)
    rnd.add_argument("--m", type=int, required=True)
    rnd.add_argument("--seed", type=int, required=True)
    rnd.add_argument("--oracle", choices=ORACLE_CHOICES, default="coverage")
    rnd.add_argument("--variant", choices=VARIANT_CHOICES, default="plain")
    rnd.add_argument("--out", required=True)

    solve = sub.add_parser("solve", help="solve an instance")
    solve.add_argument("--algo", choices=SOLVE_ALGOS, required=True)
    solve.add_argument("--in", dest="inp", required=True)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--eps", type=float, default=DEFAULT_EPS)
    solve.add_argument("--fix-L", dest="fix_L", type=float, default=None)
    solve.add_argument("--trace", action="store_true", help="include step log or audit record")

    emb = sub.add_parser("embed", help="embed an instance metric into an HST")
    emb.add_argument("--in", dest="inp", required=True)
    emb.add_argument("--seed", type=int, required=True)
    emb.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="run algorithms over a directory of instances")
    b.add_argument("--dir", required=True)
    b.add_argument("--seeds", type=parse_seeds, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--algos", default="pipeline,greedy,exact,lp", help="comma-separated algorithm list")
    b.add_argument("--eps", type=float, default=DEFAULT_EPS)
    b.add_argument("--timing", action="store_true", help="fill runtime_ms (rows then vary between runs)")
    return p


def _cmd_gen(args) -> dict:
    if args.family == "hypercube":
        inst = gen_hypercube(args.dim)
    else:
        inst = gen_random_euclidean(args.n, args.m, args.seed, args.oracle, args.variant)
    inst_mod.save(inst, args.out)
    return {"out": args.out, "n": inst.n, "m": inst.m}


def _cmd_solve(args) -> dict:
    inst = inst_mod.load(args.inp)
    out: dict = {"algo": args.algo, "seed": args.seed, "n": inst.n, "m": inst.m}
    if args.algo == "pipeline":
        res = pipeline_solve(inst, args.seed, args.eps, args.fix_L)
        c, S, lp_obj = res.cost, res.S, res.lp_obj
        if args.trace:
            out["audit"] = res.audit
    elif args.algo == "lp":
        res = solve_conf_lp(inst)
        out.update({"objective": res.objective, "dual_bound": res.dual_bound, "columns": res.x.to_json()})
        return out
    else:
        c, res = run_algo(inst, args.algo, args.seed, args.eps)
        S = res.S
        lp_obj = None
        if args.trace and getattr(res, "steps", None):
            out["steps"] = [s.to_json() for s in res.steps]
    out.update({"conn": c.conn, "open": c.open, "total": c.total, "lp_obj": lp_obj, "assignment": S.to_json()})
    return out


def _cmd_embed(args) -> dict:
    inst = inst_mod.load(args.inp)
    dist = inst.metric.dist
    d_min = inst.metric.d_min
    # raw instances may have d_min <= 1; rescale so that d_min = 2
    scale = 2.0 / d_min if d_min > 0 else 1.0
    hst = frt_embed(dist * scale, range(inst.N), args.seed)
    payload = hst.to_json()
    payload["scale"] = scale
    Path(args.out).write_text(json.dumps(payload) + "\n")
    return {"out": args.out, "depth": hst.D, "nodes": hst.num_nodes, "scale": scale}


def _cmd_bench(args) -> dict:
    algos = [a for a in args.algos.split(",") if a]
    rows = bench(args.dir, args.out, args.seeds, algos, args.eps, args.timing)
    return {"out": args.out, "rows": len(rows)}


def _write_dump(exc: InvariantViolation) -> str:
    fd, path = tempfile.mkstemp(prefix="sfl-invariant-", suffix=".json")
    with open(fd, "w") as fh:
        json.dump({"message": str(exc), "dump": exc.dump}, fh, default=_json_default)
    return path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    return str(obj)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"gen": _cmd_gen, "solve": _cmd_solve, "embed": _cmd_embed, "bench": _cmd_bench}
    try:
        result = handlers[args.command](args)
    except CapExceeded as exc:
        print(f"sfl: size cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InvariantViolation as exc:
        path = _write_dump(exc)
        print(f"sfl: invariant violated: {exc}\nsfl: diagnostic dump: {path}", file=sys.stderr)
        return EXIT_INVARIANT
    except (SflError, OSError, ValueError, KeyError) as exc:
        print(f"sfl: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(result, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
