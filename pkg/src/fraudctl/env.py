"""Closed-loop transaction market: fraudsters, bank, manual review and label maturity.

Every behavioural probability conditions on the risk score only. The bank tightens
authorization when the partially mature chargeback rate it observed ``feedback_lag``
periods ago exceeds a reference level, declining more legitimate purchases. Manual
reviewers decline more legitimate and pass more fraudulent transactions as the fraud
share of the stream they reviewed grows.

All randomness is keyed on ``(seed, period)`` and each transaction carries its own
uniform draws, so two decision streams over the same world see common random
numbers: the same transaction routed the same way under the same world state
gets the same outcome.
"""
from __future__ import annotations

import copy
import heapq
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .domain import DEFAULT_SCORE_MAX, Decision, GTable, Transaction, TransactionBatch

APPROVE, REVIEW, REJECT = int(Decision.APPROVE), int(Decision.REVIEW), int(Decision.REJECT)

# columns of the per-period uniform draw matrix
U_FRAUD, U_BANK, U_MR, U_LAG, U_FLIP = range(5)


class FinalLabel(str, Enum):
    APPROVAL = "FinalApproval"
    REJECTION = "FinalRejection"


@dataclass(frozen=True)
class OutcomeRecord:
    transaction_id: int
    is_fraud: bool
    bank_authorized: bool | None
    mr_approved: bool | None
    chargeback_lag: int | None
    final_label: FinalLabel


@dataclass(frozen=True)
class EnvConfig:
    score_max: int = DEFAULT_SCORE_MAX
    arrival_rate: float = 5000.0
    score_beta: tuple = (2.0, 3.5)
    # piecewise-linear Pr(fraud | s); x in units of score_max
    fraud_knots: tuple = ((0.0, 0.0004), (0.3, 0.0025), (0.5, 0.016), (0.65, 0.08), (0.8, 0.25), (1.0, 0.5))
    bank_beta0: float = 3.0
    bank_beta1: float = 1.5
    bank_beta2: float = 200.0
    bank_fraud_screen: float = 1.0
    bank_rho_ref: float = 0.003
    mr_nonfraud_base: float = 0.9
    mr_nonfraud_slope: float = 1.0
    mr_fraud_base: float = 0.3
    mr_fraud_slope: float = 1.0
    mr_share_init: float = 0.05
    price_log_mean: float = 4.0
    price_log_sigma: float = 0.8
    margin_rate: float = 0.05
    chargeback_fee: float = 15.0
    maturity_horizon: int = 12
    feedback_lag: int = 2
    maturity_geom_p: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        if self.score_max < 1:
            raise ValueError("score_max must be >= 1")
        xs = [k[0] for k in self.fraud_knots]
        ps = [k[1] for k in self.fraud_knots]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("fraud_knots x positions must be strictly increasing")
        if any(b < a for a, b in zip(ps, ps[1:])):
            raise ValueError("Pr(fraud | s) must be non-decreasing in s")
        if any(not 0.0 <= p <= 1.0 for p in ps):
            raise ValueError("fraud probabilities must lie in [0, 1]")
        if not 0 < self.feedback_lag < self.maturity_horizon:
            raise ValueError("require 0 < feedback_lag < maturity_horizon")
        if not 0.0 < self.maturity_geom_p <= 1.0:
            raise ValueError("maturity_geom_p must lie in (0, 1]")
        if min(self.mr_nonfraud_slope, self.mr_fraud_slope, self.bank_beta2,
               self.bank_fraud_screen) < 0:
            raise ValueError("feedback coefficients must be non-negative")

    # -- behavioural laws -------------------------------------------------
    def fraud_prob(self, score) -> np.ndarray:
        xs, ps = zip(*self.fraud_knots)
        return np.interp(np.asarray(score) / self.score_max, xs, ps)

    def auth_prob(self, score, rho_signal: float, fraud=False) -> np.ndarray:
        """Bank authorization probability.

        Chargeback stress only lowers authorization of legitimate transactions;
        frauds face a fixed screening penalty instead.
        """
        stress = max(0.0, rho_signal - self.bank_rho_ref)
        base = self.bank_beta0 - self.bank_beta1 * np.asarray(score) / self.score_max
        return expit(np.where(fraud, base - self.bank_fraud_screen, base - self.bank_beta2 * stress))

    def mr_probs(self, fraud_share: float) -> tuple[float, float]:
        """(approval prob for non-fraud, approval prob for fraud)."""
        nonfraud = self.mr_nonfraud_base - self.mr_nonfraud_slope * fraud_share
        fraud = self.mr_fraud_base + self.mr_fraud_slope * fraud_share
        return float(np.clip(nonfraud, 0, 1)), float(np.clip(fraud, 0, 1))

    def lag_cdf(self) -> np.ndarray:
        k = np.arange(self.maturity_horizon + 1)
        pmf = (1 - self.maturity_geom_p) ** k
        return np.cumsum(pmf) / pmf.sum()

    def gtable(self, rho_signal: float, fraud_share: float, period_tag=None) -> GTable:
        s = np.arange(self.score_max + 1)
        f = self.fraud_prob(s)
        auth_nf = self.auth_prob(s, rho_signal, fraud=False)
        auth_f = self.auth_prob(s, rho_signal, fraud=True)
        mr_nf, mr_f = self.mr_probs(fraud_share)
        g1, g2 = auth_nf * (1 - f), auth_f * f
        return GTable.from_functions(g1, g2, g1 * mr_nf, g2 * mr_f, g1 + g2, period_tag=period_tag)


@dataclass
class PeriodLog:
    """Columnar outcome log for one period.

    Optional booleans use int8 with -1 for "absent"; ``cb_lag`` is -1 when no
    chargeback occurs. ``label_*`` columns hold the outcome on the route used for
    training labels, which is Approve for flipped rejections.
    """

    batch: TransactionBatch
    decision: np.ndarray
    is_fraud: np.ndarray
    bank_auth: np.ndarray
    mr_approved: np.ndarray
    final_approved: np.ndarray
    cb_lag: np.ndarray
    flipped: np.ndarray
    label_decision: np.ndarray
    label_auth: np.ndarray
    label_mr: np.ndarray
    label_final: np.ndarray
    label_cb_lag: np.ndarray

    def __len__(self):
        return len(self.decision)

    def record(self, k: int) -> OutcomeRecord:
        return _to_record(int(self.batch.id[k]), self.is_fraud[k], self.bank_auth[k],
                          self.mr_approved[k], self.final_approved[k], self.cb_lag[k])


def _to_record(tid, fraud, auth, mr, final, lag) -> OutcomeRecord:
    return OutcomeRecord(
        transaction_id=tid,
        is_fraud=bool(fraud),
        bank_authorized=None if auth < 0 else bool(auth),
        mr_approved=None if mr < 0 else bool(mr),
        chargeback_lag=None if lag < 0 else int(lag),
        final_label=FinalLabel.APPROVAL if final else FinalLabel.REJECTION,
    )


def make_id(period: int, index) -> np.ndarray:
    return (np.int64(period) << 32) | np.asarray(index, dtype=np.int64)


@dataclass
class World:
    """Mutable world state owned by one decision stream."""

    cfg: EnvConfig
    period: int = 0
    feedback: dict = field(default_factory=dict)       # period -> (rho_signal, fraud_share)
    n_final_approved: dict = field(default_factory=dict)
    n_chargebacks: dict = field(default_factory=dict)   # eventual, ground truth
    visible_chargebacks: dict = field(default_factory=dict)
    review_auth: dict = field(default_factory=dict)     # period -> (count, frauds)
    pending: list = field(default_factory=list)         # heap of (maturation period, id, origin)
    logs: dict = field(default_factory=dict)            # period -> PeriodLog
    _draws: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.period not in self.feedback:
            self.feedback[self.period] = self._feedback_inputs(self.period)

    def copy(self) -> "World":
        return copy.deepcopy(self)

    # -- generation -------------------------------------------------------
    def gen_period(self, period: int | None = None) -> TransactionBatch:
        """Transactions of ``period`` (default: current); deterministic in (seed, period)."""
        t = self.period if period is None else period
        batch, draws = _generate(self.cfg, t)
        self._draws[t] = draws
        return batch

    def draws(self, period: int) -> np.ndarray:
        if period not in self._draws:
            self.gen_period(period)
        return self._draws[period]

    # -- behaviour --------------------------------------------------------
    def true_gtable(self, t: int | None = None) -> GTable:
        t = self.period if t is None else t
        if t not in self.feedback:
            raise ValueError(f"period {t} has not been reached (current {self.period})")
        rho, share = self.feedback[t]
        return self.cfg.gtable(rho, share, period_tag=t)

    def resolve(self, w: Transaction, d: Decision) -> OutcomeRecord:
        """Outcome of deciding ``d`` on ``w``; does not touch world state."""
        u = self.draws(w.period)[w.arrival_index][None, :]
        cols = self._outcomes(np.array([w.score]), np.array([int(d)]), u, w.period)
        fraud, auth, mr, final, lag = (c[0] for c in cols)
        return _to_record(w.id, fraud, auth, mr, final, lag)

    def _outcomes(self, score, decision, u, period):
        cfg = self.cfg
        rho, share = self.feedback[period]
        fraud = u[:, U_FRAUD] < cfg.fraud_prob(score)
        submitted = decision != REJECT
        authorized = submitted & (u[:, U_BANK] < cfg.auth_prob(score, rho, fraud))
        mr_nf, mr_f = cfg.mr_probs(share)
        reviewed = (decision == REVIEW) & authorized
        mr_ok = u[:, U_MR] < np.where(fraud, mr_f, mr_nf)
        final = (authorized & (decision == APPROVE)) | (reviewed & mr_ok)
        lag = np.searchsorted(cfg.lag_cdf(), u[:, U_LAG], side="left").clip(0, cfg.maturity_horizon)
        auth_col = np.where(submitted, authorized, -1).astype(np.int8)
        mr_col = np.where(reviewed, mr_ok, -1).astype(np.int8)
        lag_col = np.where(fraud & final, lag, -1).astype(np.int16)
        return fraud, auth_col, mr_col, final, lag_col

    def step(self, batch: TransactionBatch, decisions, flip_fraction: float = 0.0) -> PeriodLog:
        """Resolve the current period's decisions and record them."""
        t = self.period
        decisions = np.asarray(decisions, dtype=np.int8)
        if len(batch) and np.any(batch.period != t):
            raise ValueError(f"batch does not belong to current period {t}")
        u = self.draws(t)[batch.arrival_index] if len(batch) else np.zeros((0, 5))
        fraud, auth, mr, final, lag = self._outcomes(batch.score, decisions, u, t)
        flipped = (decisions == REJECT) & (u[:, U_FLIP] < flip_fraction)
        label_decision = np.where(flipped, APPROVE, decisions).astype(np.int8)
        if flipped.any():
            _, l_auth, l_mr, l_final, l_lag = self._outcomes(batch.score, label_decision, u, t)
        else:
            l_auth, l_mr, l_final, l_lag = auth, mr, final, lag
        log = PeriodLog(batch, decisions, fraud, auth, mr, final, lag, flipped,
                        label_decision, l_auth, l_mr, l_final, l_lag)
        self.logs[t] = log
        self.n_final_approved[t] = self.n_final_approved.get(t, 0) + int(final.sum())
        self.n_chargebacks[t] = self.n_chargebacks.get(t, 0) + int((lag >= 0).sum())
        rev = (decisions == REVIEW) & (auth == 1)
        c, f = self.review_auth.get(t, (0, 0))
        self.review_auth[t] = (c + int(rev.sum()), f + int((rev & fraud).sum()))
        for k in np.flatnonzero(lag >= 0):
            heapq.heappush(self.pending, (t + int(lag[k]), int(batch.id[k]), t))
        return log

    def advance_period(self) -> "World":
        """Move to the next period, maturing chargebacks and refreshing feedback inputs."""
        self.period += 1
        while self.pending and self.pending[0][0] <= self.period:
            _, _, origin = heapq.heappop(self.pending)
            self.visible_chargebacks[origin] = self.visible_chargebacks.get(origin, 0) + 1
        self.feedback[self.period] = self._feedback_inputs(self.period)
        return self

    def _feedback_inputs(self, t: int) -> tuple[float, float]:
        prev = self.feedback.get(t - 1, (self.cfg.bank_rho_ref, self.cfg.mr_share_init))
        src = t - self.cfg.feedback_lag
        approved = self.n_final_approved.get(src, 0)
        rho = self.visible_chargebacks.get(src, 0) / approved if approved else prev[0]
        count, frauds = self.review_auth.get(src, (0, 0))
        share = frauds / count if count else prev[1]
        return float(rho), float(share)

    # -- ground truth summaries --------------------------------------------
    def realized_chargeback_rate(self, t: int) -> float:
        n = self.n_final_approved.get(t, 0)
        return self.n_chargebacks.get(t, 0) / n if n else 0.0


def _generate(cfg: EnvConfig, t: int) -> tuple[TransactionBatch, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, t, 0])
    n = int(rng.poisson(cfg.arrival_rate)) if cfg.arrival_rate > 0 else 0
    a, b = cfg.score_beta
    score = np.minimum((rng.beta(a, b, n) * (cfg.score_max + 1)).astype(np.int64), cfg.score_max)
    price = rng.lognormal(cfg.price_log_mean, cfg.price_log_sigma, n)
    margin = cfg.margin_rate * price
    cost = price - margin + cfg.chargeback_fee
    idx = np.arange(n, dtype=np.int64)
    batch = TransactionBatch(make_id(t, idx), score, margin, cost, np.full(n, t, dtype=np.int64), idx)
    draws = np.random.default_rng([cfg.seed, t, 1]).random((n, 5))
    return batch, draws


def gen_period(world: World, cfg: EnvConfig | None = None, period: int | None = None) -> TransactionBatch:
    if cfg is not None and cfg != world.cfg:
        raise ValueError("cfg does not match the world's configuration")
    return world.gen_period(period)


def true_gtable(world: World, t: int | None = None) -> GTable:
    return world.true_gtable(t)


def resolve(w: Transaction, d: Decision, world: World) -> OutcomeRecord:
    return world.resolve(w, d)


def advance_period(world: World) -> World:
    return world.advance_period()
