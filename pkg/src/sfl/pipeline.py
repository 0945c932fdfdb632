"""End-to-end LP-rounding pipeline and the benchmark harness."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import instance as inst_mod
from .baselines import (
    EXACT_DP_MAX_N,
    GREEDY_EXACT_MAX_N,
    exact_dp,
    greedy_exact,
    greedy_structured,
)
from .dla import hst_instance, lift_to_sfl, reduce_to_dla, round_dla
from .embed import frt_embed
from .errors import CapExceeded, InvariantViolation, SflError, UnsupportedVariant
from .instance import (
    Cost,
    Metric,
    PartialAssignment,
    SflInstance,
    cost,
    hypercube_dim,
    reduce_distance_range,
    reduce_facilities,
)
from .lp import LP_MAX_N, FractionalSolution, LpResult, frac_cost, solve_conf_lp
from .sampling import merge, residual, stage_one

DEFAULT_EPS = 0.1
LP_SLACK = 1e-6


@dataclass
class PipelineResult:
    S: PartialAssignment
    cost: Cost
    lp_obj: float | None
    L: float
    audit: dict = field(default_factory=dict)


def l_guesses(inst: SflInstance) -> list[float]:
    """Distinct connection distances that can bound the largest optimal connection.

    Any feasible solution pays at least ``max_c min_f d(c, f)`` for some
    client, so smaller guesses are skipped.
    """
    dcf = inst.dist_cf
    if dcf.size == 0:
        return [1.0]
    floor = dcf.min(axis=1).max()
    values = np.unique(dcf[(dcf > 0) & (dcf >= floor)])
    return [float(v) for v in values] if values.size else [1.0]


def _component_key(ci: SflInstance, clients, facilities) -> str:
    h = hashlib.sha256()
    h.update(repr((clients, facilities, ci.open_scale)).encode())
    h.update(np.ascontiguousarray(ci.metric.dist).tobytes())
    return h.hexdigest()


def _sub_instance(ci: SflInstance, keep: list[int]) -> SflInstance:
    """Clients ``keep`` (renumbered) with every facility."""
    pts = keep + [ci.n + f for f in range(ci.m)]
    return SflInstance(
        len(keep),
        ci.m,
        Metric(ci.metric.dist[np.ix_(pts, pts)]),
        ci.oracle.restrict(keep),
        ci.mult_weights,
        ci.add_weights,
        None if ci.conn_multipliers is None else ci.conn_multipliers[keep],
        ci.open_scale,
    )


def solve_component(ci: SflInstance, seed: int, lp: LpResult) -> tuple[PartialAssignment, dict]:
    """Stage-one sampling, then tree rounding of the residual."""
    x = lp.x
    st = stage_one(ci, x, seed)
    audit: dict = {
        "n": ci.n,
        "m": ci.m,
        "lp_obj": lp.objective,
        "rounds": st.T,
        "covered_stage_one": len(st.C1),
        "stage_one_cost": cost(ci, st.S1).total,
    }
    C2 = sorted(set(range(ci.n)) - st.C1)
    if not C2:
        return st.S1, audit
    xr = residual(ci, x, st.C1)
    local = {c: k for k, c in enumerate(C2)}
    x2 = FractionalSolution((f, [local[c] for c in R], w) for f, R, w in xr.columns())
    sub = _sub_instance(ci, C2)
    hst = frt_embed(sub.metric.dist, range(sub.N), seed)
    hinst = hst_instance(sub, hst)
    red = reduce_to_dla(hinst, hst, x2)
    rr = round_dla(red.dla, red.z)
    lift = lift_to_sfl(hinst, hst, rr.S, red.anchor, y=x2.y(sub.n, sub.m))
    tree_x = frac_cost(hinst, x2)
    tree_cost = cost(hinst, rr.S)
    D = hst.D
    contract = 3 * tree_x.conn + 2 * (1 + 32 * math.log2(D + 1)) * tree_x.open
    if tree_cost.total > contract * (1 + 1e-9) + 1e-9:
        raise InvariantViolation(
            f"tree rounding cost {tree_cost.total} exceeds {contract}",
            dump={"tree_cost": tree_cost.total, "contract": contract},
        )
    S2 = PartialAssignment({f: [C2[c] for c in R] for f, R in rr.S.items()})
    S = merge(st.S1, S2)
    audit.update(
        {
            "residual_clients": len(C2),
            "tree_depth": D,
            "dla_cost_z": rr.cost_z,
            "dla_open_bound_slack": 2 * red.open_x - red.cost_z,
            "dla_round_cost": rr.cost,
            "dla_round_bound_slack": rr.bound - rr.cost,
            "tree_distance_slack": lift.slack,
            "tree_contract_slack": contract - tree_cost.total,
            "stage_two_cost": cost(ci, S2).total,
        }
    )
    return S, audit


def pipeline_solve(
    inst: SflInstance,
    seed: int,
    eps: float = DEFAULT_EPS,
    fix_L: float | None = None,
    cache: dict | None = None,
) -> PipelineResult:
    """Best-of-L-guesses LP rounding; the returned cost is on ``inst`` itself.

    ``cache`` may be shared across seeds for the same instance: LP solutions
    are stored per reduced component.
    """
    if inst.variant == "affine":
        raise UnsupportedVariant("affine facility costs are not supported")
    cache = {} if cache is None else cache
    if "lp_obj" not in cache:
        cache["lp_obj"] = solve_conf_lp(inst).objective if inst.n <= LP_MAX_N else None
    lp_obj = cache["lp_obj"]
    work, lift_fac = inst, None
    if inst.m > inst.n and inst.variant == "plain":
        red = reduce_facilities(inst)
        work, lift_fac = red.instance, red.lift
    guesses = [float(fix_L)] if fix_L is not None else l_guesses(work)
    best: PipelineResult | None = None
    totals = []
    for L in guesses:
        parts = []
        comp_audit = []
        for comp in reduce_distance_range(work, eps, L):
            key = _component_key(comp.instance, comp.clients, comp.facilities)
            if key not in cache:
                cache[key] = solve_conf_lp(comp.instance)
            S_local, audit = solve_component(comp.instance, seed, cache[key])
            parts.append(comp.lift(S_local))
            audit["scale"] = comp.scale
            comp_audit.append(audit)
        S = merge(*parts)
        if lift_fac is not None:
            S = lift_fac(S)
        if not S.is_feasible(inst.n):
            raise InvariantViolation(f"pipeline produced an infeasible assignment at L={L}", dump={"S": S.to_json()})
        c = cost(inst, S)
        totals.append({"L": L, "total": c.total})
        if best is None or c.total < best.cost.total - 1e-12:
            best = PipelineResult(S, c, lp_obj, L, {"components": comp_audit})
    assert best is not None
    if lp_obj is not None and best.cost.total < lp_obj - LP_SLACK:
        raise InvariantViolation(f"pipeline total {best.cost.total} below LP bound {lp_obj}")
    best.audit.update({"seed": seed, "eps": eps, "L": best.L, "guesses": totals, "lp_obj": lp_obj})
    return best


# ---------------------------------------------------------------------------
# benchmark harness

CSV_COLUMNS = ["instance", "algo", "seed", "n", "m", "conn", "open", "total", "lp_obj", "ratio_vs_lp", "runtime_ms"]
BENCH_ALGOS = ("pipeline", "greedy", "exact", "lp")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def run_algo(inst: SflInstance, algo: str, seed: int, eps: float = DEFAULT_EPS, cache: dict | None = None):
    """``(Cost, extra)`` for one algorithm; raises CapExceeded when out of range."""
    if algo == "pipeline":
        res = pipeline_solve(inst, seed, eps, cache=cache)
        return res.cost, res
    if algo == "greedy":
        if inst.n <= GREEDY_EXACT_MAX_N:
            res = greedy_exact(inst)
        elif hypercube_dim(inst) is not None:
            res = greedy_structured(inst)
        else:
            raise CapExceeded("greedy needs n <= 12 or a hypercube instance")
        return res.cost, res
    if algo == "greedy-structured":
        res = greedy_structured(inst)
        return res.cost, res
    if algo == "exact":
        res = exact_dp(inst)
        return res.cost, res
    if algo == "lp":
        res = solve_conf_lp(inst)
        return frac_cost(inst, res.x), res
    raise ValueError(f"unknown algorithm {algo!r}")


def bench(
    directory,
    out_csv,
    seeds: Sequence[int],
    algos: Sequence[str] = BENCH_ALGOS,
    eps: float = DEFAULT_EPS,
    timing: bool = False,
) -> list[dict]:
    """One CSV row per (instance, algorithm, seed); out-of-cap runs are skipped.

    ``runtime_ms`` is filled only with ``timing=True`` so that reruns are
    byte-identical by default.
    """
    rows = []
    for path in sorted(Path(directory).glob("*.json")):
        inst = inst_mod.load(path)
        cache: dict = {}
        try:
            lp_obj = solve_conf_lp(inst).objective
        except CapExceeded:
            lp_obj = None
        for algo in algos:
            for seed in seeds:
                start = time.perf_counter()
                try:
                    c, _ = run_algo(inst, algo, seed, eps, cache)
                except CapExceeded:
                    continue
                elapsed = (time.perf_counter() - start) * 1000.0
                ratio = c.total / lp_obj if lp_obj else None
                rows.append(
                    {
                        "instance": path.name,
                        "algo": algo,
                        "seed": seed,
                        "n": inst.n,
                        "m": inst.m,
                        "conn": c.conn,
                        "open": c.open,
                        "total": c.total,
                        "lp_obj": lp_obj,
                        "ratio_vs_lp": ratio,
                        "runtime_ms": round(elapsed, 3) if timing else None,
                    }
                )
    rows.sort(key=lambda r: (r["instance"], r["algo"], r["seed"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[k]) for k in CSV_COLUMNS])
    Path(out_csv).write_text(buf.getvalue())
    return rows
