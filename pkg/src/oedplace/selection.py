"""Combinatorial search over sensor subsets.

Criteria are callables on row-index tuples with an evaluation counter; the
two bundled ones wrap the backend kernels (low-rank linear gain and the
sample-averaged Laplace functional without its design-independent prior
terms).  Searches:

* :func:`standard_greedy` - grow the design one best row at a time;
  exactly ``sum_t (d - t + 1)`` criterion evaluations for ``r`` rows.
* :func:`swapping_greedy` - start from the top leverage-score rows (or a
  given design) and sweep positions, replacing a row whenever some candidate
  strictly improves the criterion.
* :func:`brute_force_search` - rank all ``C(d, r)`` subsets (guarded).
* :func:`random_designs` - uniform distinct-index baselines.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .criteria import Design, _design_rows
from .errors import CapabilityError, ValidationError

__all__ = [
    "SelectionTrace",
    "CriterionBase",
    "LowRankGainCriterion",
    "SampleAverageGainCriterion",
    "CallableCriterion",
    "leverage_scores",
    "standard_greedy",
    "swapping_greedy",
    "brute_force_search",
    "random_designs",
]

#: Strict-improvement threshold for accepting a swap.
SWAP_GAIN_TOL = 1e-12

BRUTE_FORCE_LIMIT = 1_000_000


@dataclass
class SelectionTrace:
    """What a search did: per-step records, sweep count, evaluation count."""

    steps: list = field(default_factory=list)
    sweeps: int = 0
    evaluations: int = 0
    hit_max_sweeps: bool = False
    final_value: float | None = None


class CriterionBase:
    """Design criterion with an evaluation counter.

    Subclasses implement :meth:`value`; the batch methods have generic
    loops here and kernel-backed overrides in the bundled criteria.
    """

    def __init__(self):
        self.evaluations = 0

    def __call__(self, rows) -> float:
        self.evaluations += 1
        return self.value(np.asarray(rows, dtype=np.intp))

    def value(self, rows) -> float:
        raise NotImplementedError

    def with_candidates(self, base, cands) -> np.ndarray:
        """Criterion of ``base + [c]`` for each candidate ``c``."""
        base = list(base)
        self.evaluations += len(cands)
        return np.array([self.value(np.asarray(base + [int(c)], dtype=np.intp))
                         for c in cands])

    def many(self, designs) -> np.ndarray:
        """Criterion of every row of ``designs`` (m, r)."""
        designs = np.atleast_2d(np.asarray(designs, dtype=np.intp))
        self.evaluations += designs.shape[0]
        return np.array([self.value(row) for row in designs])


class LowRankGainCriterion(CriterionBase):
    """Linear-model gain ``0.5 log det(I + restriction)`` of one surrogate."""

    def __init__(self, lowrank, kernels=None):
        super().__init__()
        self.lowrank = lowrank
        self.kernels = kernels or backend.KERNELS

    @property
    def d(self) -> int:
        return self.lowrank.d

    def value(self, rows) -> float:
        return 0.5 * self.kernels.logdet_rows(
            self.lowrank.basis, self.lowrank.eigenvalues, rows
        )

    def with_candidates(self, base, cands) -> np.ndarray:
        cands = np.asarray(cands, dtype=np.intp)
        self.evaluations += cands.size
        vals = self.kernels.logdet_gains(
            self.lowrank.basis, self.lowrank.eigenvalues,
            np.asarray(base, dtype=np.intp), cands,
        )
        return 0.5 * vals

    def many(self, designs) -> np.ndarray:
        designs = np.atleast_2d(np.asarray(designs, dtype=np.intp))
        self.evaluations += designs.shape[0]
        return 0.5 * self.kernels.logdet_many(
            self.lowrank.basis, self.lowrank.eigenvalues, designs
        )


class SampleAverageGainCriterion(CriterionBase):
    """Sample-averaged Laplace gain without its design-independent prior
    terms - the quantity greedy searches should rank by."""

    def __init__(self, lowranks, kernels=None):
        super().__init__()
        if len(lowranks) == 0:
            raise ValidationError("need at least one surrogate")
        d = lowranks[0].d
        if any(lr.d != d for lr in lowranks):
            raise ValidationError("surrogates disagree on the candidate count")
        k_max = max(lr.k for lr in lowranks)
        self._us = np.zeros((len(lowranks), d, k_max))
        self._lams = np.zeros((len(lowranks), k_max))
        for i, lr in enumerate(lowranks):
            self._us[i, :, : lr.k] = lr.basis
            self._lams[i, : lr.k] = lr.eigenvalues
        self.n_samples = len(lowranks)
        self._d = d
        self.kernels = kernels or backend.KERNELS

    @property
    def d(self) -> int:
        return self._d

    def _scale(self, raw):
        return 0.5 * raw / self.n_samples

    def value(self, rows) -> float:
        return self._scale(self.kernels.la_rows(self._us, self._lams, rows))

    def with_candidates(self, base, cands) -> np.ndarray:
        cands = np.asarray(cands, dtype=np.intp)
        self.evaluations += cands.size
        return self._scale(self.kernels.la_gains(
            self._us, self._lams, np.asarray(base, dtype=np.intp), cands
        ))

    def many(self, designs) -> np.ndarray:
        designs = np.atleast_2d(np.asarray(designs, dtype=np.intp))
        self.evaluations += designs.shape[0]
        return self._scale(self.kernels.la_many(self._us, self._lams, designs))


class CallableCriterion(CriterionBase):
    """Wrap an arbitrary ``rows -> float`` callable (tests, custom scores)."""

    def __init__(self, fn, d: int):
        super().__init__()
        self._fn = fn
        self.d = d

    def value(self, rows) -> float:
        return float(self._fn(rows))


def leverage_scores(basis) -> np.ndarray:
    """Squared row norms of an orthonormal basis; they sum to its rank."""
    basis = np.asarray(basis, dtype=float)
    return np.einsum("ij,ij->i", basis, basis)


def _combined_leverage(bases, combine: str) -> np.ndarray:
    """Leverage scores from several sample bases.

    ``matrix-sum`` scores the entrywise sum of the bases (sign-sensitive);
    ``score-sum`` adds the per-sample scores.
    """
    if combine == "matrix-sum":
        stack = np.zeros_like(np.asarray(bases[0], dtype=float))
        for b in bases:
            b = np.asarray(b, dtype=float)
            if b.shape[0] != stack.shape[0]:
                raise ValidationError("bases disagree on the candidate count")
            width = min(stack.shape[1], b.shape[1])
            stack[:, :width] += b[:, :width]
        return leverage_scores(stack)
    if combine == "score-sum":
        return np.sum([leverage_scores(b) for b in bases], axis=0)
    raise ValidationError(f"unknown leverage combination {combine!r}")


def _top_indices(scores: np.ndarray, r: int) -> list:
    """Indices of the r largest scores, ties resolved toward lower indices."""
    order = np.argsort(-scores, kind="stable")
    return sorted(int(i) for i in order[:r])


def _check_dims(d: int, r: int):
    if d < 1:
        raise ValidationError("need at least one candidate")
    if not 1 <= r <= d:
        raise ValidationError(f"design size must satisfy 1 <= r <= {d}")


def standard_greedy(criterion, d: int, r: int):
    """Grow a design by repeatedly adding the best remaining row.

    Ties go to the lowest candidate index.  Returns ``(Design, trace)``; the
    trace has one step per added row and exactly
    ``sum_{t=1..r} (d - t + 1)`` evaluations.
    """
    _check_dims(d, r)
    trace = SelectionTrace()
    chosen: list = []
    remaining = list(range(d))
    for _ in range(r):
        values = criterion.with_candidates(chosen, remaining)
        trace.evaluations += len(remaining)
        best = int(np.flatnonzero(values == values.max())[0])
        chosen.append(remaining.pop(best))
        trace.steps.append({"added": chosen[-1], "value": float(values[best])})
        trace.final_value = float(values[best])
    return Design(tuple(chosen), d), trace


def swapping_greedy(criterion, d: int, r: int, init=None, init_bases=None,
                    combine: str = "matrix-sum", max_sweeps: int = 10):
    """Improve a design by single-row exchanges until a sweep changes nothing.

    The initial design is ``init`` if given, otherwise the ``r`` rows with the
    largest leverage scores of ``init_bases`` (one orthonormal basis, or
    several combined per ``combine``).  Each sweep visits positions
    ``1..r`` of the continuously updated design; at position ``t`` the pool
    is the current occupant plus every unused candidate, and a swap is
    accepted only when the best pool member beats the current criterion value
    by more than ``1e-12`` (ties toward lower candidate index).  Terminates
    after a changeless sweep or ``max_sweeps`` sweeps (flagged in the trace).
    """
    _check_dims(d, r)
    if max_sweeps < 1:
        raise ValidationError("max_sweeps must be positive")

    if init is not None:
        current = list(_design_rows(init, d))
        if len(current) != r:
            raise ValidationError(f"initial design must have {r} rows")
    else:
        if init_bases is None:
            raise ValidationError("provide either an initial design or bases "
                                  "for the leverage-score initialization")
        bases = init_bases if isinstance(init_bases, (list, tuple)) else [init_bases]
        scores = _combined_leverage(bases, combine)
        if scores.shape != (d,):
            raise ValidationError("leverage scores must cover all candidates")
        current = _top_indices(scores, r)

    trace = SelectionTrace()
    in_design = set(current)
    current_value = None

    for sweep in range(max_sweeps):
        trace.sweeps = sweep + 1
        changed = False
        for position in range(r):
            occupant = current[position]
            rest = current[:position] + current[position + 1 :]
            pool = sorted((set(range(d)) - in_design) | {occupant})
            values = criterion.with_candidates(rest, pool)
            trace.evaluations += len(pool)
            # The occupant sits in its own pool, so the design's current value
            # comes out of the same batch as the challengers.
            current_value = float(values[pool.index(occupant)])
            best = int(np.flatnonzero(values == values.max())[0])
            candidate = pool[best]
            if candidate != occupant and values[best] > current_value + SWAP_GAIN_TOL:
                in_design.discard(occupant)
                in_design.add(candidate)
                current[position] = candidate
                current_value = float(values[best])
                changed = True
                trace.steps.append(
                    {
                        "sweep": sweep + 1,
                        "position": position,
                        "removed": occupant,
                        "added": candidate,
                        "value": current_value,
                    }
                )
        if not changed:
            break
    else:
        trace.hit_max_sweeps = True

    trace.final_value = current_value
    return Design(tuple(current), d), trace


def brute_force_search(criterion, d: int, r: int):
    """All ``C(d, r)`` designs ranked by criterion value (descending, ties in
    lexicographic order).  Guarded to a million designs."""
    _check_dims(d, r)
    count = math.comb(d, r)
    if count > BRUTE_FORCE_LIMIT:
        raise CapabilityError(
            f"C({d}, {r}) = {count} designs exceeds the brute-force cap "
            f"{BRUTE_FORCE_LIMIT}"
        )
    designs = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(d), r)),
        dtype=np.intp,
        count=count * r,
    ).reshape(count, r)
    values = criterion.many(designs)
    order = np.argsort(-values, kind="stable")  # stable keeps lexicographic ties
    return [(tuple(int(i) for i in designs[j]), float(values[j])) for j in order]


def random_designs(d: int, r: int, count: int, seed=0, unique: bool = False):
    """``count`` uniform designs of ``r`` distinct rows (indices sorted).

    Repeats across the list are allowed unless ``unique`` is set, in which
    case sampling continues until ``count`` distinct designs are found.
    """
    _check_dims(d, r)
    if count < 1:
        raise ValidationError("count must be positive")
    if unique and math.comb(d, r) < count:
        raise ValidationError(f"only C({d},{r}) distinct designs exist")
    rng = np.random.default_rng(seed)
    out = []
    seen = set()
    while len(out) < count:
        pick = tuple(sorted(int(i) for i in rng.choice(d, size=r, replace=False)))
        if unique:
            if pick in seen:
                continue
            seen.add(pick)
        out.append(pick)
    return out
