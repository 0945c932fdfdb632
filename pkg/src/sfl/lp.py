"""Configuration LP: one column per (facility, client set), solved by primal simplex."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import CapExceeded, DomainError, InvariantViolation
from .instance import Cost, PartialAssignment, SflInstance
from .oracle import subset_sums

LP_MAX_N = 20
ENUM_MAX_COLUMNS = 1 << 24
RATIO_TOL = 1e-10
PRICE_TOL = 1e-9
FEAS_TOL = 1e-7
GAP_TOL = 1e-6


class FractionalSolution:
    """Sparse map ``(facility, client set) -> weight``; duplicates are summed."""

    def __init__(self, columns: Iterable[tuple[int, Iterable[int], float]] = ()):
        self.weights: dict[tuple[int, frozenset], float] = {}
        for f, R, w in columns:
            self.add(f, R, w)

    def add(self, f: int, R: Iterable[int], w: float) -> None:
        if w < 0:
            raise DomainError("column weights must be non-negative")
        key = (int(f), frozenset(int(c) for c in R))
        self.weights[key] = self.weights.get(key, 0.0) + float(w)

    @classmethod
    def from_assignment(cls, S: PartialAssignment, m: int) -> "FractionalSolution":
        return cls((f, S.get(f), 1.0) for f in range(m))

    def columns(self) -> list[tuple[int, frozenset, float]]:
        """Non-zero columns in (facility, sorted set) order."""
        items = [(f, R, w) for (f, R), w in self.weights.items() if w > 0]
        return sorted(items, key=lambda t: (t[0], len(t[1]), sorted(t[1])))

    def nnz(self) -> int:
        return len(self.columns())

    def y(self, n: int, m: int) -> np.ndarray:
        """``y[c, f] = sum of x_R^f over R containing c``."""
        out = np.zeros((n, m))
        for f, R, w in self.columns():
            for c in R:
                out[c, f] += w
        return out

    def facility_mass(self, m: int) -> np.ndarray:
        out = np.zeros(m)
        for f, _, w in self.columns():
            out[f] += w
        return out

    def check_feasible(self, n: int, m: int, tol: float = FEAS_TOL) -> None:
        client = self.y(n, m).sum(axis=1) if n else np.zeros(0)
        fac = self.facility_mass(m)
        if n and np.max(np.abs(client - 1.0)) > tol:
            c = int(np.argmax(np.abs(client - 1.0)))
            raise InvariantViolation(f"client {c} covered with mass {client[c]}")
        if m and np.max(np.abs(fac - 1.0)) > tol:
            f = int(np.argmax(np.abs(fac - 1.0)))
            raise InvariantViolation(f"facility {f} carries mass {fac[f]}")

    def is_feasible(self, n: int, m: int, tol: float = FEAS_TOL) -> bool:
        try:
            self.check_feasible(n, m, tol)
        except InvariantViolation:
            return False
        return True

    def to_json(self) -> list:
        return [{"f": f, "R": sorted(R), "x": w} for f, R, w in self.columns()]

    @classmethod
    def from_json(cls, data: list) -> "FractionalSolution":
        return cls((d["f"], d["R"], d["x"]) for d in data)

    def __repr__(self):
        body = ", ".join(f"{f}:{sorted(R)}@{w:.4g}" for f, R, w in self.columns())
        return f"FractionalSolution({body})"


def restrict(x: FractionalSolution, keep: Iterable[int]) -> FractionalSolution:
    """Drop clients outside ``keep`` from every column, merging equal columns."""
    keep = frozenset(keep)
    return FractionalSolution((f, R & keep, w) for f, R, w in x.columns())


def frac_cost(inst: SflInstance, x: FractionalSolution) -> Cost:
    conn = 0.0
    opening = 0.0
    for f, R, w in x.columns():
        if R:
            conn += w * inst.conn_cost(f, R)
            opening += w * inst.open_cost(f, R)
    return Cost(conn, opening, conn + opening)


@dataclass
class LpResult:
    x: FractionalSolution
    objective: float
    dual_bound: float
    alpha: np.ndarray
    beta: np.ndarray
    iterations: int
    mode: str
    history: list = field(default_factory=list)  # (primal, dual bound) per pricing round

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "dual_bound": self.dual_bound,
            "mode": self.mode,
            "columns": self.x.to_json(),
        }


def dumps_solution(res: LpResult) -> str:
    return json.dumps(res.to_json())


class _Pricer:
    """Reduced costs of every (f, R) via subset tables."""

    def __init__(self, inst: SflInstance):
        n, m = inst.n, inst.m
        self.n, self.m = n, m
        g = inst.oracle.table()
        wc = inst.weighted_conn()
        cache = m << n <= ENUM_MAX_COLUMNS // 4
        self._g = g
        self._inst = inst
        self._wc = wc
        self._cost = [self._cost_table(f) for f in range(m)] if cache else None

    def _cost_table(self, f: int) -> np.ndarray:
        mult, add = self._inst.facility_weights(f)
        s = self._inst.open_scale
        out = s * (add + mult * self._g) + subset_sums(self._wc[:, f])
        out[0] = 0.0
        return out

    def cost_table(self, f: int) -> np.ndarray:
        return self._cost[f] if self._cost is not None else self._cost_table(f)

    def cost(self, f: int, mask: int) -> float:
        return float(self.cost_table(f)[mask])

    def reduced(self, f: int, alpha_sums: np.ndarray, beta: float) -> np.ndarray:
        return self.cost_table(f) - alpha_sums - beta


def _column_vector(n: int, m: int, f: int, mask: int) -> np.ndarray:
    a = np.zeros(n + m)
    a[:n] = (mask >> np.arange(n)) & 1
    a[n + f] = 1.0
    return a


def _initial_columns(inst: SflInstance) -> list[tuple[int, int]]:
    """Feasible non-singular starting basis from the nearest-facility assignment.

    Facility ``f`` serving ``R_f`` contributes ``(f, R_f)`` at weight one plus
    ``(f, R_f - {c})`` at weight zero for each ``c`` in ``R_f``.
    """
    n, m = inst.n, inst.m
    nearest = np.argmin(inst.weighted_conn(), axis=1) if n else np.zeros(0, dtype=int)
    masks = [0] * m
    for c in range(n):
        masks[int(nearest[c])] |= 1 << c
    cols = [(f, masks[f]) for f in range(m)]
    for c in range(n):
        f = int(nearest[c])
        cols.append((f, masks[f] & ~(1 << c)))
    return cols


def solve_conf_lp(inst: SflInstance, mode: str = "colgen", max_iter: int = 200000) -> LpResult:
    """Optimal Conf-LP solution with a certified duality gap.

    ``enumerate`` runs Bland's rule over the implicit pool of all
    ``m * 2**n`` columns; ``colgen`` optimizes a restricted master and adds
    the most negative reduced-cost column of each facility until none is
    left.  Both stop only when the Lagrangian dual bound matches the primal.
    """
    if mode not in ("enumerate", "colgen"):
        raise DomainError(f"unknown LP mode {mode!r}")
    n, m = inst.n, inst.m
    if n > LP_MAX_N:
        raise CapExceeded(f"Conf-LP needs n <= {LP_MAX_N}, got {n}")
    if mode == "enumerate" and m << n > ENUM_MAX_COLUMNS:
        raise CapExceeded(f"enumerate mode needs m * 2^n <= 2^24, got {m << n}")
    pricer = _Pricer(inst)
    k = n + m
    b = np.ones(k)

    pool: list[tuple[int, int]] = []
    index: dict[tuple[int, int], int] = {}
    A = np.zeros((k, 0))  # pool columns
    pool_cost = np.zeros(0)

    def pool_add(col):
        nonlocal A, pool_cost
        if col not in index:
            index[col] = len(pool)
            pool.append(col)
            A = np.column_stack([A, _column_vector(n, m, *col)])
            pool_cost = np.append(pool_cost, pricer.cost(*col))
        return index[col]

    def var_id(j):
        # enumerate mode orders variables globally; colgen by insertion
        f, mask = pool[j]
        return f * (1 << n) + mask if mode == "enumerate" else j

    basis = [pool_add(c) for c in _initial_columns(inst)]
    history = []
    iterations = 0
    while True:
        # inner simplex over the pool (colgen) or the whole implicit pool (enumerate)
        while True:
            iterations += 1
            if iterations > max_iter:
                raise InvariantViolation("simplex iteration limit reached")
            B = A[:, basis]
            xb = np.linalg.solve(B, b)
            cb = pool_cost[basis]
            duals = np.linalg.solve(B.T, cb)
            alpha, beta = duals[:n], duals[n:]
            entering = None
            if mode == "enumerate":
                asum = subset_sums(alpha)
                for f in range(m):
                    rc = pricer.reduced(f, asum, beta[f])
                    neg = np.flatnonzero(rc < -PRICE_TOL)
                    if neg.size:
                        entering = pool_add((f, int(neg[0])))
                        break
            else:
                rc = pool_cost - duals @ A
                rc[basis] = 0.0
                neg = np.flatnonzero(rc < -PRICE_TOL)
                entering = int(neg[0]) if neg.size else None
            if entering is None:
                break
            d = np.linalg.solve(B, A[:, entering])
            rows = np.flatnonzero(d > RATIO_TOL)
            if rows.size == 0:
                raise InvariantViolation("Conf-LP master is unbounded")
            ratios = np.maximum(xb[rows], 0.0) / d[rows]
            tmin = ratios.min()
            ties = rows[ratios <= tmin + 1e-12]
            leave = min(ties, key=lambda r: var_id(basis[r]))
            basis[leave] = entering

        asum = subset_sums(alpha)
        new_cols = []
        bound = float(alpha.sum() + beta.sum())
        for f in range(m):
            rc = pricer.reduced(f, asum, beta[f])
            j = int(np.argmin(rc))
            bound += min(0.0, float(rc[j]))
            if rc[j] < -PRICE_TOL:
                new_cols.append((f, j))
        objective = float(cb @ xb)
        history.append((objective, bound))
        if mode == "enumerate" or not new_cols:
            break
        for col in new_cols:
            pool_add(col)

    if objective - bound > GAP_TOL * (1 + abs(objective)):
        raise InvariantViolation(f"Conf-LP gap {objective - bound} exceeds tolerance")
    x = FractionalSolution()
    for j, w in zip(basis, xb):
        f, mask = pool[j]
        if w > 1e-12:
            x.add(f, [c for c in range(n) if mask >> c & 1], w)
    for f in range(m):
        # facilities absent from the support carry their unit on the empty column
        if not any(col_f == f for col_f, _, _ in x.columns()):
            x.add(f, [], 1.0)
    x.check_feasible(n, m)
    return LpResult(x, objective, bound, alpha, beta, iterations, mode, history)
