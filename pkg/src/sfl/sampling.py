"""Randomized partial rounding of a Conf-LP solution and the merge operator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .instance import PartialAssignment, SflInstance
from .lp import FractionalSolution, restrict

RNG_ALGORITHM = "PCG64 via SeedSequence(seed, spawn_key=(round, column))"


def merge(*parts: PartialAssignment) -> PartialAssignment:
    """Union per facility, then keep each client only at its smallest facility id."""
    union: dict[int, set] = {}
    for S in parts:
        for f, R in S.items():
            union.setdefault(f, set()).update(R)
    taken: set = set()
    out: dict[int, set] = {}
    for f in sorted(union):
        keep = union[f] - taken
        if keep:
            out[f] = keep
            taken |= keep
    return PartialAssignment(out)


def rounds(N: int) -> int:
    """``max(1, ceil(ln ln N))``."""
    if N < 3:
        return 1
    return max(1, math.ceil(math.log(math.log(N))))


def column_rng(seed: int, round_index: int, column_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(round_index, column_index))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class StageOneResult:
    S1: PartialAssignment
    C1: frozenset
    T: int
    seed: int
    sampled: int  # number of (round, column) draws that succeeded

    def to_json(self) -> dict:
        return {
            "S1": self.S1.to_json(),
            "C1": sorted(self.C1),
            "T": self.T,
            "seed": self.seed,
            "sampled": self.sampled,
            "rng": RNG_ALGORITHM,
        }


def stage_one(inst: SflInstance, x: FractionalSolution, seed: int) -> StageOneResult:
    """Take each column ``(f, R)`` with probability ``x_R^f``, ``T`` times independently."""
    T = rounds(inst.N)
    columns = x.columns()
    picks = []
    for i in range(T):
        for j, (f, R, w) in enumerate(columns):
            if R and column_rng(seed, i, j).random() < w:
                picks.append(PartialAssignment({f: R}))
    S1 = merge(*picks)
    return StageOneResult(S1, S1.covered(), T, int(seed), len(picks))


def residual(inst: SflInstance, x: FractionalSolution, C1) -> FractionalSolution:
    """The LP solution restricted to the clients stage one missed."""
    return restrict(x, frozenset(range(inst.n)) - frozenset(C1))
