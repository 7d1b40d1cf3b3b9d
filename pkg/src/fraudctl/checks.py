"""Randomized property suites comparing the greedy controls with exact solvers.

Used by the ``oracle-check`` command and the acceptance tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import CostParams, Decision, GTable, TransactionBatch, batch_rewards
from .estimation import GTrajectory
from .inference import EnvRegressor
from .policies.oracles import (additive_objective, brute_force_policy, build_toy_mdp,
                               greedy_sequence, policy_values, value_iteration)

CHECK_SCORE_MAX = 20
CONTRACTION_SLACK = 1e-6
# below this size successive differences are dominated by rounding
CONTRACTION_FLOOR = 1e-7


@dataclass
class CheckResult:
    name: str
    passed: bool
    n_cases: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name}  ({self.n_cases} cases){extra}"


def random_gtable(rng, score_max=CHECK_SCORE_MAX, dead_fraction=0.15) -> GTable:
    """Random table satisfying the subset laws exactly.

    A share of scores gets ``g5 = 0`` (the bank declines everything), which
    makes all three rewards zero and exercises tie-breaking.
    """
    n = score_max + 1
    g5 = rng.random(n)
    g5[rng.random(n) < dead_fraction] = 0.0
    f = rng.random(n) ** 3
    g2 = g5 * f
    g1 = g5 - g2
    g3 = g1 * rng.random(n)
    g4 = g2 * rng.random(n)
    return GTable.from_functions(g1, g2, g3, g4, g1 + g2)


def random_batch(rng, n, score_max=CHECK_SCORE_MAX, period=0) -> TransactionBatch:
    price = rng.lognormal(3.5, 1.0, n)
    margin = price * rng.uniform(0.02, 0.4, n)
    idx = np.arange(n, dtype=np.int64)
    return TransactionBatch(idx, rng.integers(0, score_max + 1, n), margin,
                            price - margin + rng.uniform(0, 20, n), np.full(n, period), idx)


def _faulty_greedy(rewards):
    """Greedy with the tie order reversed; used for fault injection only."""
    return np.argmax(rewards, axis=1).astype(np.int8)


def _compare(name, cases, inject_fault, max_n):
    greedy = _faulty_greedy if inject_fault else greedy_sequence
    for k, (rewards, batch) in enumerate(cases):
        objective = additive_objective(rewards)
        best_seq, best_val = brute_force_policy(len(batch), objective, max_n=max_n)
        seq = greedy(rewards)
        val = float(objective(seq[None, :])[0])
        if val != best_val or not np.array_equal(seq, best_seq):
            pos = np.flatnonzero(seq != best_seq)
            at = f", first differing transaction index {int(pos[0])}" if len(pos) else ""
            return CheckResult(name, False, len(cases),
                               f"instance {k}: greedy {_fmt(seq)} value {val!r} vs brute force "
                               f"{_fmt(best_seq)} value {best_val!r}{at}")
    return CheckResult(name, True, len(cases), "value and sequence equal brute force everywhere")


def _fmt(seq):
    return "".join(Decision(int(a)).name[0] for a in seq)


def _sizes(rng, n_batches, batch_size):
    sizes = rng.integers(1, batch_size + 1, n_batches)
    sizes[0] = batch_size
    return sizes


def check_naive_greedy(costs: CostParams, n_batches=1000, batch_size=8, max_n=8, seed=0,
                       inject_fault=False) -> CheckResult:
    """Greedy on a mature table versus enumeration of all 3**N sequences."""
    rng = np.random.default_rng([seed, 1])
    cases = []
    for n in _sizes(rng, n_batches, batch_size):
        g = random_gtable(rng)
        batch = random_batch(rng, int(n))
        cases.append((batch_rewards(batch, g, costs), batch))
    return _compare("naive greedy = brute force", cases, inject_fault, max_n)


def _random_regressor(rng, score_max=CHECK_SCORE_MAX, window=3):
    T = window + 8
    traj = GTrajectory(np.arange(T), np.stack([random_gtable(rng, score_max).values
                                               for _ in range(T)]))
    rates = rng.uniform(0.0, 0.02, T)
    model = EnvRegressor(window=window, horizon=1, n_bands=4).fit(traj, rates)
    return model, traj


def check_myopic_greedy(costs: CostParams, n_batches=1000, batch_size=8, max_n=8, seed=0,
                        inject_fault=False, per_model=50) -> CheckResult:
    """Greedy on tables inferred by a fitted current-environment regressor."""
    rng = np.random.default_rng([seed, 2])
    cases = []
    model = traj = None
    for k, n in enumerate(_sizes(rng, n_batches, batch_size)):
        if k % per_model == 0:
            model, traj = _random_regressor(rng)
        g = model.infer(traj, rng.uniform(0.0, 0.02))
        batch = random_batch(rng, int(n))
        cases.append((batch_rewards(batch, g, costs), batch))
    return _compare("myopic greedy = brute force", cases, inject_fault, max_n)


def check_bellman(costs: CostParams, n_mdps=20, batch_size=1, tol=1e-9, seed=0):
    """Value iteration on toy MDPs: fixed point independent of the start, and
    successive differences shrink at least by the discount factor."""
    rng = np.random.default_rng([seed, 3])
    alpha = costs.bellman_discount
    worst_gap = worst_ratio = worst_exact = 0.0
    fixed_fail = contraction_fail = None
    sizes = set()
    for k in range(n_mdps):
        fraud = np.sort(rng.uniform(0.0, 0.5, 2))
        levels = tuple(np.sort(rng.uniform(0.3, 1.0, 3))[::-1])
        batch = random_batch(rng, batch_size, score_max=1)
        mdp = build_toy_mdp(costs, batch, fraud=tuple(fraud), auth_levels=levels,
                            tighten_gain=float(rng.uniform(5, 40)), relax=float(rng.uniform(0.1, 0.5)))
        sizes.add(mdp.rewards.shape)
        scale = float(np.abs(mdp.rewards).max()) / (1 - alpha)
        a = value_iteration(mdp, tol=tol)
        b = value_iteration(mdp, tol=tol, u0=rng.uniform(-2 * scale, 2 * scale, len(mdp.rewards)))
        gap = float(np.max(np.abs(a.values - b.values)))
        exact = float(np.max(np.abs(a.values - policy_values(mdp, a.policy))))
        worst_gap, worst_exact = max(worst_gap, gap), max(worst_exact, exact)
        if gap > 2 * tol and fixed_fail is None:
            fixed_fail = f"instance {k}: value functions differ by {gap:.3e}"
        for d in (a.diffs, b.diffs):
            for prev, nxt in zip(d, d[1:]):
                if prev > CONTRACTION_FLOOR:
                    ratio = nxt / prev
                    worst_ratio = max(worst_ratio, ratio)
                    if ratio > alpha + CONTRACTION_SLACK and contraction_fail is None:
                        contraction_fail = f"instance {k}: difference ratio {ratio:.9f}"
    shapes = ", ".join(f"{s}x{a}" for s, a in sorted(sizes))
    return [
        CheckResult("value iteration fixed point independent of start", fixed_fail is None, n_mdps,
                    fixed_fail or f"max gap {worst_gap:.3e}; states x actions {shapes}"),
        CheckResult("value iteration contraction <= discount", contraction_fail is None, n_mdps,
                    contraction_fail or f"max ratio {worst_ratio:.9f} vs alpha {alpha}"),
        CheckResult("value iteration matches policy evaluation", worst_exact <= 2 * tol, n_mdps,
                    f"max deviation {worst_exact:.3e}"),
    ]


def run_oracle_suite(costs: CostParams, settings) -> list[CheckResult]:
    """All properties; ``settings`` is an :class:`~fraudctl.config.OracleSettings`."""
    common = dict(n_batches=settings.n_batches, batch_size=settings.batch_size,
                  max_n=settings.max_brute_force, seed=settings.seed,
                  inject_fault=settings.inject_tie_break_fault)
    return [
        check_naive_greedy(costs, **common),
        check_myopic_greedy(costs, **common),
        *check_bellman(costs, settings.n_mdps, settings.mdp_batch_size, settings.tol,
                       settings.seed),
    ]
