"""Reference solvers: greedy (full and hypercube-pruned), set-cover DP, exhaustive search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapExceeded, DomainError
from .instance import Cost, PartialAssignment, SflInstance, cost, hypercube_dim, hypercube_edges
from .oracle import subset_sums

GREEDY_EXACT_MAX_N = 12
GREEDY_STRUCTURED_MAX_DIM = 8
EXACT_DP_MAX_N = 16
EXHAUSTIVE_MAX = 1 << 22
TIE_RTOL = 1e-9


@dataclass
class GreedyStep:
    f: int
    R: tuple
    ratio: float
    fresh: bool

    def to_json(self) -> dict:
        return {"f": self.f, "R": list(self.R), "ratio": self.ratio, "fresh": self.fresh}


@dataclass
class SolveResult:
    S: PartialAssignment
    cost: Cost
    steps: list = field(default_factory=list)


def _bits(mask: int) -> tuple:
    return tuple(c for c in range(mask.bit_length()) if mask >> c & 1)


def _open_tables(inst: SflInstance, g: np.ndarray) -> np.ndarray:
    """``m x 2**n`` opening costs including facility weights and scale."""
    m = inst.m
    mult = np.ones(m) if inst.mult_weights is None else inst.mult_weights
    add = np.zeros(m) if inst.add_weights is None else inst.add_weights
    out = inst.open_scale * (add[:, None] + mult[:, None] * g[None, :])
    out[:, 0] = 0.0
    return out


def _conn_tables(inst: SflInstance) -> np.ndarray:
    wc = inst.weighted_conn()
    return np.stack([subset_sums(wc[:, f]) for f in range(inst.m)]) if inst.m else np.zeros((0, 1 << inst.n))


class _TieKey:
    """Preference order among equal-ratio greedy candidates.

    Class 1: two clients at distinct locations, facility away from both.
    Class 2: one client colocated with the facility.  Class 3: the rest.
    Then fresh facilities first, smaller sets, smaller facility id, and
    lexicographic client order.
    """

    def __init__(self, inst: SflInstance):
        self.d = inst.metric.dist
        self.n = inst.n

    def __call__(self, f: int, R: tuple, fresh: bool):
        d, n = self.d, self.n
        if len(R) == 2 and d[R[0], R[1]] > 0 and d[R[0], n + f] > 0 and d[R[1], n + f] > 0:
            cls = 1
        elif len(R) == 1 and d[R[0], n + f] == 0:
            cls = 2
        else:
            cls = 3
        return (cls, not fresh, len(R), f, R)


def _pick(cands, key):
    """``cands``: iterable of (ratio, f, R, fresh); min ratio then preference order."""
    cands = list(cands)
    rmin = min(c[0] for c in cands)
    tied = [c for c in cands if c[0] <= rmin + TIE_RTOL * max(1.0, abs(rmin))]
    return min(tied, key=lambda c: key(c[1], c[2], c[3]))


def _finish(inst: SflInstance, served: list[int], steps: list) -> SolveResult:
    S = PartialAssignment({f: _bits(mask) for f, mask in enumerate(served) if mask})
    if not S.is_feasible(inst.n):
        raise DomainError("greedy produced an infeasible assignment")
    return SolveResult(S, cost(inst, S), steps)


def greedy_exact(inst: SflInstance) -> SolveResult:
    """Cost-effectiveness greedy over every (facility, uncovered subset) pair."""
    n, m = inst.n, inst.m
    if n > GREEDY_EXACT_MAX_N:
        raise CapExceeded(f"greedy_exact needs n <= {GREEDY_EXACT_MAX_N}, got {n}")
    g = inst.oracle.table()
    fo = _open_tables(inst, g)
    fc = _conn_tables(inst)
    masks = np.arange(1 << n)
    size = np.array([bin(x).count("1") for x in masks])
    key = _TieKey(inst)
    served = [0] * m
    uncovered = (1 << n) - 1
    steps = []
    while uncovered:
        sub = masks[(masks & ~uncovered) == 0][1:]
        cands = []
        for f in range(m):
            T = served[f]
            ratio = (fo[f, sub | T] - fo[f, T] + fc[f, sub]) / size[sub]
            rmin = ratio.min()
            close = np.flatnonzero(ratio <= rmin + TIE_RTOL * max(1.0, abs(rmin)))
            cands.extend((float(ratio[k]), f, _bits(int(sub[k])), T == 0) for k in close)
        ratio, f, R, fresh = _pick(cands, key)
        steps.append(GreedyStep(f, R, ratio, fresh))
        mask = sum(1 << c for c in R)
        served[f] |= mask
        uncovered &= ~mask
    return _finish(inst, served, steps)


def _hypercube_candidates(dim: int):
    """Candidate (facility, client tuple) families on the canonical hypercube.

    Yields matching pairs on their edge facility and non-empty client
    subsets of each vertex at that vertex's facility.
    """
    nv = 1 << dim
    fam = []
    for e, (i, v, u) in enumerate(hypercube_edges(dim)):
        a, b = v * dim + i - 1, u * dim + i - 1
        fam.append((nv + e, (a, b)))
    for v in range(nv):
        for mask in range(1, 1 << dim):
            fam.append((v, tuple(v * dim + l for l in range(dim) if mask >> l & 1)))
    return fam


def greedy_structured(inst: SflInstance) -> SolveResult:
    """Greedy restricted to the candidate sets that matter on hypercube instances.

    Candidates are singletons at any facility, matching pairs at their edge
    facility, client subsets of one vertex at that vertex, and any of these
    sets at an already-open facility.  Ratios are cached and recomputed only
    for the facility that changed.
    """
    dim = hypercube_dim(inst)
    if dim is None:
        raise DomainError("greedy_structured needs a hypercube instance")
    if dim > GREEDY_STRUCTURED_MAX_DIM:
        raise CapExceeded(f"greedy_structured needs dim <= {GREEDY_STRUCTURED_MAX_DIM}")
    n, m = inst.n, inst.m
    wc = inst.weighted_conn()
    key = _TieKey(inst)
    family = _hypercube_candidates(dim)
    multi = sorted({R for _, R in family})
    served: list[frozenset] = [frozenset()] * m
    g_served = np.zeros(m)
    uncovered = set(range(n))
    is_open = np.zeros(m, dtype=bool)

    def ratio(f, R):
        T = served[f]
        return (inst.open_cost(f, T | set(R)) - g_served[f] + wc[list(R), f].sum()) / len(R)

    def facility_cands(f):
        if is_open[f]:
            sets = [(c,) for c in range(n)] + multi
        else:
            sets = [(c,) for c in range(n)] + [R for ff, R in family if ff == f]
        return {R: ratio(f, R) for R in sets if all(c in uncovered for c in R)}

    cache = {f: facility_cands(f) for f in range(m)}
    steps = []
    while uncovered:
        cands = ((r, f, R, not is_open[f]) for f in range(m) for R, r in cache[f].items())
        r, f, R, fresh = _pick(cands, key)
        steps.append(GreedyStep(f, R, float(r), fresh))
        served[f] = served[f] | set(R)
        g_served[f] = inst.open_cost(f, served[f])
        is_open[f] = True
        uncovered -= set(R)
        for ff in range(m):
            if ff == f:
                cache[ff] = facility_cands(ff)
            else:
                cache[ff] = {S: v for S, v in cache[ff].items() if not set(S) & set(R)}
    masks = [sum(1 << c for c in s) for s in served]
    return _finish(inst, masks, steps)


def best_cover_costs(inst: SflInstance) -> tuple[np.ndarray, np.ndarray]:
    """Cheapest single-facility cost of every client subset, and the facility."""
    g = inst.oracle.table()
    kappa = _open_tables(inst, g) + _conn_tables(inst)
    return kappa.min(axis=0), kappa.argmin(axis=0)


def exact_dp(inst: SflInstance) -> SolveResult:
    """Optimal assignment by set-partition DP over client subsets."""
    n = inst.n
    if n > EXACT_DP_MAX_N:
        raise CapExceeded(f"exact_dp needs n <= {EXACT_DP_MAX_N}, got {n}")
    if n == 0:
        return SolveResult(PartialAssignment(), Cost(0.0, 0.0, 0.0))
    best, arg = best_cover_costs(inst)
    full = (1 << n) - 1
    dp = np.full(1 << n, np.inf)
    dp[0] = 0.0
    choice = np.zeros(1 << n, dtype=np.int64)
    for M in range(1, full + 1):
        low = M & -M
        rest = M ^ low
        bits = [1 << c for c in range(n) if rest >> c & 1]
        subs = subset_sums(np.array(bits, dtype=float)).astype(np.int64) | low
        vals = best[subs] + dp[M ^ subs]
        k = int(np.argmin(vals))
        dp[M] = vals[k]
        choice[M] = subs[k]
    sets: dict[int, set] = {}
    M = full
    while M:
        S = int(choice[M])
        sets.setdefault(int(arg[S]), set()).update(_bits(S))
        M ^= S
    out = PartialAssignment(sets)
    return SolveResult(out, cost(inst, out))


def exhaustive(inst: SflInstance) -> SolveResult:
    """Try every client-to-facility map."""
    n, m = inst.n, inst.m
    if n == 0:
        return SolveResult(PartialAssignment(), Cost(0.0, 0.0, 0.0))
    if m**n > EXHAUSTIVE_MAX:
        raise CapExceeded(f"exhaustive needs m^n <= 2^22, got {m}^{n}")
    g = inst.oracle.table()
    kappa = _open_tables(inst, g) + _conn_tables(inst)
    best_val, best_phi = np.inf, None
    total = m**n
    chunk = 1 << 16
    powers = m ** np.arange(n)[::-1]
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        phi = (idx[:, None] // powers[None, :]) % m  # lexicographic order
        vals = np.zeros(idx.size)
        for f in range(m):
            masks = ((phi == f).astype(np.int64) << np.arange(n)).sum(axis=1)
            vals += kappa[f, masks]
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_phi = vals[k], phi[k]
    out = PartialAssignment.from_phi(best_phi.tolist())
    return SolveResult(out, cost(inst, out))
