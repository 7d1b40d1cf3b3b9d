"""Shared domain types and the per-transaction expected-reward calculus."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, NamedTuple

import numpy as np

DEFAULT_SCORE_MAX = 1000
CURRENCY_TOL = 1e-9


class Decision(IntEnum):
    APPROVE = 0
    REVIEW = 1
    REJECT = 2


# Tie-break order, most preferred first.
TIE_BREAK = (Decision.REJECT, Decision.REVIEW, Decision.APPROVE)


@dataclass(frozen=True)
class Transaction:
    id: int
    score: int
    margin: float
    cost: float
    period: int = 0
    arrival_index: int = 0

    def __post_init__(self):
        if self.score < 0:
            raise ValueError(f"score must be non-negative, got {self.score}")
        if self.cost < 0:
            raise ValueError(f"cost must be non-negative, got {self.cost}")


@dataclass(frozen=True)
class TransactionBatch:
    """Columnar view of a set of transactions, used on the hot paths."""

    id: np.ndarray
    score: np.ndarray
    margin: np.ndarray
    cost: np.ndarray
    period: np.ndarray
    arrival_index: np.ndarray

    def __len__(self):
        return len(self.score)

    def __iter__(self) -> Iterator[Transaction]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k) -> Transaction:
        return Transaction(
            id=int(self.id[k]),
            score=int(self.score[k]),
            margin=float(self.margin[k]),
            cost=float(self.cost[k]),
            period=int(self.period[k]),
            arrival_index=int(self.arrival_index[k]),
        )

    def take(self, idx) -> "TransactionBatch":
        return TransactionBatch(
            self.id[idx], self.score[idx], self.margin[idx], self.cost[idx],
            self.period[idx], self.arrival_index[idx],
        )

    @classmethod
    def from_transactions(cls, transactions) -> "TransactionBatch":
        transactions = list(transactions)
        return cls(
            id=np.array([w.id for w in transactions], dtype=np.int64),
            score=np.array([w.score for w in transactions], dtype=np.int64),
            margin=np.array([w.margin for w in transactions], dtype=float),
            cost=np.array([w.cost for w in transactions], dtype=float),
            period=np.array([w.period for w in transactions], dtype=np.int64),
            arrival_index=np.array([w.arrival_index for w in transactions], dtype=np.int64),
        )

    @classmethod
    def empty(cls) -> "TransactionBatch":
        i = np.zeros(0, dtype=np.int64)
        f = np.zeros(0, dtype=float)
        return cls(i, i.copy(), f, f.copy(), i.copy(), i.copy())


@dataclass(frozen=True, eq=False)
class GTable:
    """The five g-functions over scores ``0..score_max``.

    ``values[i, s]`` holds g_{i+1}(s): authorized non-fraud, authorized fraud,
    authorized + MR-approved non-fraud, authorized + MR-approved fraud, and
    authorized.
    """

    values: np.ndarray
    period_tag: int | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != 5:
            raise ValueError(f"GTable values must have shape (5, score_max + 1), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def score_max(self) -> int:
        return self.values.shape[1] - 1

    g1 = property(lambda self: self.values[0])
    g2 = property(lambda self: self.values[1])
    g3 = property(lambda self: self.values[2])
    g4 = property(lambda self: self.values[3])
    g5 = property(lambda self: self.values[4])

    @classmethod
    def zeros(cls, score_max: int = DEFAULT_SCORE_MAX, period_tag=None) -> "GTable":
        return cls(np.zeros((5, score_max + 1)), period_tag)

    @classmethod
    def from_functions(cls, g1, g2, g3, g4, g5, period_tag=None) -> "GTable":
        return cls(np.vstack([g1, g2, g3, g4, g5]), period_tag)

    def with_period(self, period_tag) -> "GTable":
        return GTable(self.values, period_tag)

    def __eq__(self, other):
        if not isinstance(other, GTable):
            return NotImplemented
        return self.period_tag == other.period_tag and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class CostParams:
    review_unit_cost: float = 5.0
    maturity_horizon: int = 12
    partial_lag: int = 2
    future_discount: float = 0.12
    bellman_discount: float = 0.9

    def __post_init__(self):
        if self.review_unit_cost < 0:
            raise ValueError("review_unit_cost must be >= 0")
        if not 0 < self.partial_lag < self.maturity_horizon:
            raise ValueError("require 0 < partial_lag < maturity_horizon")
        if not 0.0 <= self.future_discount <= 1.0:
            raise ValueError("future_discount must lie in [0, 1]")
        if not 0.0 < self.bellman_discount < 1.0:
            raise ValueError("bellman_discount must lie in (0, 1)")


class RewardTriple(NamedTuple):
    approve: float
    review: float
    reject: float = 0.0

    def best(self) -> Decision:
        return argmax_decision(self)


def _check_score(score, g: GTable):
    if not 0 <= score <= g.score_max:
        raise IndexError(f"score {score} outside table range [0, {g.score_max}]")


def expected_reward(w: Transaction, g: GTable, costs: CostParams, a: Decision) -> float:
    """Expected profit of taking action ``a`` on ``w`` under the g-functions ``g``."""
    _check_score(w.score, g)
    s = w.score
    a = Decision(a)
    if a is Decision.APPROVE:
        return g.g1[s] * w.margin - g.g2[s] * w.cost
    if a is Decision.REVIEW:
        return g.g3[s] * w.margin - g.g4[s] * w.cost - g.g5[s] * costs.review_unit_cost
    return 0.0


def reward_triple(w: Transaction, g: GTable, costs: CostParams) -> RewardTriple:
    return RewardTriple(
        expected_reward(w, g, costs, Decision.APPROVE),
        expected_reward(w, g, costs, Decision.REVIEW),
        0.0,
    )


def reward_matrix(score, margin, cost, values: np.ndarray, review_unit_cost: float) -> np.ndarray:
    """Vectorized reward triples, shape ``(n, 3)`` in ``Decision`` column order.

    ``values`` is a ``(5, n_scores)`` g-array; ``score`` indexes its columns.
    Arithmetic matches :func:`expected_reward` operation for operation.
    """
    score = np.asarray(score)
    if score.size and (score.min() < 0 or score.max() >= values.shape[1]):
        raise IndexError(f"score outside table range [0, {values.shape[1] - 1}]")
    g = values[:, score]
    out = np.zeros((score.shape[0], 3))
    out[:, 0] = g[0] * margin - g[1] * cost
    out[:, 1] = g[2] * margin - g[3] * cost - g[4] * review_unit_cost
    return out


def batch_rewards(batch: TransactionBatch, g: GTable, costs: CostParams) -> np.ndarray:
    return reward_matrix(batch.score, batch.margin, batch.cost, g.values, costs.review_unit_cost)


def argmax_decision(values) -> Decision:
    """Argmax over a reward triple, ties broken Reject > Review > Approve."""
    best = TIE_BREAK[0]
    for a in TIE_BREAK[1:]:
        if values[a] > values[best]:
            best = a
    return best


def argmax_decisions(values: np.ndarray) -> np.ndarray:
    """Row-wise :func:`argmax_decision` for an ``(n, 3)`` array."""
    # Columns reversed so np.argmax's first-max rule implements the tie-break.
    return (2 - np.argmax(values[:, ::-1], axis=1)).astype(np.int8)


@dataclass(frozen=True)
class Violation:
    score: int
    rule: str
    values: tuple = field(default=())

    def __str__(self):
        return f"score {self.score}: {self.rule} {self.values}"


def validate_gtable(g: GTable, tol: float = 1e-12) -> list[Violation]:
    """List every broken GTable invariant. An empty list means the table is coherent."""
    v = g.values
    out = []
    checks = [
        ("g_i in [0,1]", lambda s: bool(np.all(v[:, s] >= -tol) and np.all(v[:, s] <= 1 + tol)),
         lambda s: tuple(v[:, s])),
        ("g3 <= g1", lambda s: v[2, s] <= v[0, s] + tol, lambda s: (v[2, s], v[0, s])),
        ("g4 <= g2", lambda s: v[3, s] <= v[1, s] + tol, lambda s: (v[3, s], v[1, s])),
        ("g3 + g4 <= g5", lambda s: v[2, s] + v[3, s] <= v[4, s] + tol,
         lambda s: (v[2, s], v[3, s], v[4, s])),
        ("g1 + g2 <= 1", lambda s: v[0, s] + v[1, s] <= 1 + tol, lambda s: (v[0, s], v[1, s])),
    ]
    bad = (
        np.any((v < -tol) | (v > 1 + tol), axis=0)
        | (v[2] > v[0] + tol)
        | (v[3] > v[1] + tol)
        | (v[2] + v[3] > v[4] + tol)
        | (v[0] + v[1] > 1 + tol)
    )
    for s in np.flatnonzero(bad):
        for rule, ok, vals in checks:
            if not ok(s):
                out.append(Violation(int(s), rule, tuple(float(x) for x in vals(s))))
    return out


def project_gvalues(values: np.ndarray) -> np.ndarray:
    """Clamp a raw ``(5, n)`` g-array to [0, 1] and restore the subset laws."""
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    total = v[0] + v[1]
    over = total > 1.0
    if np.any(over):
        v[0, over] /= total[over]
        v[1, over] /= total[over]
    v[2] = np.minimum(v[2], v[0])
    v[3] = np.minimum(v[3], v[1])
    review = v[2] + v[3]
    over = review > v[4]
    if np.any(over):
        scale = v[4, over] / review[over]
        v[2, over] *= scale
        v[3, over] *= scale
        # guard the last ulp so the sum never exceeds g5
        excess = v[2] + v[3] - v[4]
        fix = excess > 0
        v[3, fix] = np.maximum(v[3, fix] - excess[fix], 0.0)
    return v


def project_gtable(g: GTable) -> GTable:
    return GTable(project_gvalues(g.values), g.period_tag)
