"""Exact reference solvers used to validate the greedy controls.

``brute_force_policy`` enumerates all 3**N decision sequences of a small batch.
``value_iteration`` solves the full-state Bellman equation on toy MDPs whose
states are coarsened g-tables.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..domain import TIE_BREAK, CostParams, Decision, GTable, TransactionBatch, batch_rewards

MAX_BRUTE_FORCE = 8
APPROVE, REVIEW, REJECT = int(Decision.APPROVE), int(Decision.REVIEW), int(Decision.REJECT)


class ProblemSizeError(ValueError):
    pass


class ModelError(ValueError):
    pass


def enumerate_sequences(n: int) -> np.ndarray:
    """All 3**n sequences, lexicographically ordered by tie-break preference."""
    order = [int(a) for a in TIE_BREAK]
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    return np.array(list(itertools.product(order, repeat=n)), dtype=np.int8)


def additive_objective(rewards: np.ndarray):
    """Sum of per-transaction expected rewards, accumulated left to right.

    Greedy and brute force both evaluate through this function, so their
    values are comparable bit for bit.
    """
    rewards = np.asarray(rewards, dtype=float)

    def objective(seqs: np.ndarray) -> np.ndarray:
        total = np.zeros(len(seqs))
        for j in range(seqs.shape[1]):
            total += rewards[j, seqs[:, j]]
        return total

    return objective


def prospective_objective(rewards, g2, g4, delta_fn, lam: float, fallback_rate: float):
    """Period objective: summed expected reward plus ``lam`` times the reference
    profit under the period's running chargeback-rate estimate."""
    immediate = additive_objective(rewards)
    g2 = np.asarray(g2, dtype=float)
    g4 = np.asarray(g4, dtype=float)

    def objective(seqs):
        num = np.zeros(len(seqs))
        den = np.zeros(len(seqs))
        for j in range(seqs.shape[1]):
            a = seqs[:, j]
            num += np.where(a == APPROVE, g2[j], 0.0) + np.where(a == REVIEW, g4[j], 0.0)
            den += a != REJECT
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.where(den > 0, num / np.maximum(den, 1), fallback_rate)
        return immediate(seqs) + lam * np.asarray(delta_fn(rho))

    return objective


def brute_force_policy(n: int, objective, max_n: int = MAX_BRUTE_FORCE):
    """Exact maximizer of ``objective`` over all sequences of length ``n``.

    Ties go to the lexicographically most preferred sequence, which matches
    the greedy tie-break position by position.
    """
    if n > max_n:
        raise ProblemSizeError(f"brute force limited to {max_n} transactions, got {n}")
    seqs = enumerate_sequences(n)
    values = objective(seqs)
    best = int(np.argmax(values))
    return seqs[best], float(values[best])


def greedy_sequence(rewards: np.ndarray) -> np.ndarray:
    from ..domain import argmax_decisions
    return argmax_decisions(np.asarray(rewards, dtype=float))


@dataclass
class ToyMDP:
    """Finite MDP: ``rewards[s, a]``, ``transitions[a, s, s']``, discount ``alpha``."""

    rewards: np.ndarray
    transitions: np.ndarray
    alpha: float
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        n_s, n_a = self.rewards.shape
        if self.transitions.shape != (n_a, n_s, n_s):
            raise ModelError(f"transitions shape {self.transitions.shape} != {(n_a, n_s, n_s)}")
        if np.any(self.transitions < 0) or not np.allclose(self.transitions.sum(axis=2), 1.0,
                                                           atol=1e-12):
            raise ModelError("every transition row must be a probability distribution")
        if not 0.0 < self.alpha < 1.0:
            raise ModelError("alpha must lie in (0, 1)")
        if not np.all(np.isfinite(self.rewards)):
            raise ModelError("rewards must be finite")


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    n_iter: int
    diffs: list


def bellman_backup(mdp: ToyMDP, u: np.ndarray) -> np.ndarray:
    """Q-values ``q[s, a]`` for the value estimate ``u``."""
    return mdp.rewards + mdp.alpha * np.einsum("ast,t->sa", mdp.transitions, u)


def value_iteration(mdp: ToyMDP, tol: float = 1e-9, u0=None, max_iter: int = 100_000):
    """Iterate Bellman backups until the iterate is within ``tol`` of the fixed point.

    Stops once ``||u_{k+1} - u_k|| < tol * (1 - alpha) / alpha``; the
    contraction bound then puts ``u_{k+1}`` within ``tol`` of the solution.
    """
    u = np.zeros(mdp.rewards.shape[0]) if u0 is None else np.asarray(u0, dtype=float).copy()
    stop = tol * (1 - mdp.alpha) / mdp.alpha
    diffs = []
    for k in range(1, max_iter + 1):
        new = bellman_backup(mdp, u).max(axis=1)
        diff = float(np.max(np.abs(new - u)))
        diffs.append(diff)
        u = new
        if diff < stop:
            break
    else:
        raise RuntimeError("value iteration did not converge")
    q = bellman_backup(mdp, u)
    return ValueIterationResult(u, np.argmax(q, axis=1), k, diffs)


def policy_values(mdp: ToyMDP, policy) -> np.ndarray:
    """Exact discounted value of a stationary policy by a linear solve."""
    policy = np.asarray(policy)
    idx = np.arange(len(policy))
    P = mdp.transitions[policy, idx, :]
    r = mdp.rewards[idx, policy]
    return np.linalg.solve(np.eye(len(policy)) - mdp.alpha * P, r)


def build_toy_mdp(costs: CostParams, batch: TransactionBatch, fraud=(0.01, 0.3),
                  auth_levels=(0.95, 0.8, 0.6), mr=(0.6, 0.4), tighten_gain=20.0,
                  relax=0.3) -> ToyMDP:
    """Toy perfect-information model on a reduced score grid.

    Each state fixes a bank authorization level per grid score; g-tables follow
    from it. An action is a decision sequence for ``batch`` (scores index the
    grid). The running chargeback-rate estimate of the chosen sequence sets the
    chance that each score's level tightens; otherwise it relaxes with
    probability ``relax``.
    """
    fraud = np.asarray(fraud, dtype=float)
    n_scores, n_levels = len(fraud), len(auth_levels)
    states = list(itertools.product(range(n_levels), repeat=n_scores))
    tables = []
    for st in states:
        a = np.array([auth_levels[i] for i in st])
        tables.append(GTable.from_functions(a * (1 - fraud), a * fraud, a * (1 - fraud) * mr[0],
                                            a * fraud * mr[1], a))
    seqs = enumerate_sequences(len(batch))
    n_s, n_a = len(states), len(seqs)
    rewards = np.zeros((n_s, n_a))
    trans = np.zeros((n_a, n_s, n_s))
    for i, g in enumerate(tables):
        r = batch_rewards(batch, g, costs)
        rewards[i] = additive_objective(r)(seqs)
        g2, g4 = g.g2[batch.score], g.g4[batch.score]
        for k, seq in enumerate(seqs):
            sub = seq != REJECT
            num = np.sum(np.where(seq == APPROVE, g2, 0.0) + np.where(seq == REVIEW, g4, 0.0))
            rho = num / sub.sum() if sub.any() else 0.0
            p_up = min(1.0, tighten_gain * rho)
            p_down = relax * (1 - p_up)
            for j, nxt in enumerate(states):
                p = 1.0
                for cur_l, nxt_l in zip(states[i], nxt):
                    p *= _level_move(cur_l, nxt_l, n_levels, p_up, p_down)
                trans[k, i, j] = p
    return ToyMDP(rewards, trans, costs.bellman_discount, states=states,
                  actions=[tuple(int(a) for a in s) for s in seqs])


def _level_move(cur, nxt, n_levels, p_up, p_down):
    up = min(cur + 1, n_levels - 1)
    down = max(cur - 1, 0)
    p = 0.0
    if nxt == up:
        p += p_up
    if nxt == down:
        p += p_down
    if nxt == cur:
        p += 1 - p_up - p_down
    return p
