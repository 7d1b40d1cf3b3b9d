"""Prospective control solved with the real-time greedy heuristic (RGH)."""
from __future__ import annotations

import numpy as np
from sklearn.base import clone
from sklearn.utils.validation import check_is_fitted

from ..domain import (DEFAULT_SCORE_MAX, CostParams, Decision, GTable, Transaction, TransactionBatch,
                      argmax_decision, batch_rewards, project_gvalues, reward_matrix)
from ..estimation import series_with_fallback, submitted_chargeback_rate
from ..inference import EnvRegressor
from .greedy import MyopicPolicy

APPROVE, REVIEW, REJECT = int(Decision.APPROVE), int(Decision.REVIEW), int(Decision.REJECT)


def delta_reference(ref: TransactionBatch, g_future: GTable, costs: CostParams) -> float:
    """Best expected profit on the reference sample; the problem splits per transaction."""
    if len(ref) == 0:
        raise ValueError("reference sample is empty")
    r = batch_rewards(ref, g_future, costs)
    return float(r.max(axis=1).sum())


def _project_stack(values: np.ndarray) -> np.ndarray:
    """project_gvalues over a (k, 5, m) stack."""
    k, _, m = values.shape
    flat = project_gvalues(values.transpose(1, 0, 2).reshape(5, k * m))
    return flat.reshape(5, k, m).transpose(1, 0, 2)


class ProspectiveState:
    """Running within-period state of RGH.

    Holds the running sums (g2 over approvals, g4 over reviews, count of
    non-rejections), the reference sample, and the future-environment model
    reduced to its affine response in the rate signal at the reference scores.
    """

    def __init__(self, g_current: GTable, ref: TransactionBatch, fei_base: np.ndarray,
                 fei_slope: np.ndarray, costs: CostParams, lam: float, fallback_rate: float):
        if len(ref) == 0:
            raise ValueError("reference sample is empty")
        self.g_current = g_current
        self.ref = ref
        self.fei_base = fei_base
        self.fei_slope = fei_slope
        self.costs = costs
        self.lam = lam
        self.fallback_rate = fallback_rate
        self.sum_app_g2 = 0.0
        self.sum_rev_g4 = 0.0
        self.n_submitted = 0
        self.last_rate = fallback_rate
        self.actions: list[tuple[int, int]] = []   # (score, decision)
        # Future tables start equal to the current ones.
        self.g_future = GTable(g_current.values[:, ref.score], g_current.period_tag)

    @classmethod
    def from_regressor(cls, g_current, ref, fei: EnvRegressor, traj, period, costs, lam,
                       fallback_rate):
        base, slope = fei.rate_response(traj, period=period, scores=ref.score)
        return cls(g_current, ref, base, slope, costs, lam, fallback_rate)

    @property
    def reference_size(self) -> int:
        return len(self.ref)

    def _rates(self, g2: float, g4: float) -> np.ndarray:
        n, s = self.n_submitted, self.sum_app_g2 + self.sum_rev_g4
        reject = s / n if n else self.last_rate
        return np.array([(s + g2) / (n + 1), (s + g4) / (n + 1), reject])

    def rho_tau(self, w: Transaction, a: Decision) -> float:
        g = self.g_current.values
        return float(self._rates(g[1, w.score], g[3, w.score])[int(a)])

    def current_rate(self) -> float:
        n = self.n_submitted
        return (self.sum_app_g2 + self.sum_rev_g4) / n if n else self.last_rate

    def future_values(self, rates) -> np.ndarray:
        """Projected future g-values at the reference scores, shape (k, 5, R)."""
        rates = np.asarray(rates, dtype=float)
        raw = self.fei_base[None] + self.fei_slope[None] * rates[:, None, None]
        return _project_stack(raw)

    def deltas(self, rates) -> np.ndarray:
        g = self.future_values(rates)
        m, c = self.ref.margin, self.ref.cost
        app = g[:, 0] * m - g[:, 1] * c
        rev = g[:, 2] * m - g[:, 3] * c - g[:, 4] * self.costs.review_unit_cost
        return np.maximum(np.maximum(app, rev), 0.0).sum(axis=1)

    def prospective_rewards(self, w: Transaction):
        """(R^F triple, Delta triple) for taking each action on ``w``."""
        r = reward_matrix(np.array([w.score]), w.margin, w.cost, self.g_current.values,
                          self.costs.review_unit_cost)[0]
        return self._rewards(r, self.g_current.values[1, w.score], self.g_current.values[3, w.score])

    def _rewards(self, r, g2, g4):
        d = self.deltas(self._rates(g2, g4))
        return r + (self.lam / self.reference_size) * d, d

    def update(self, a: int, g2: float, g4: float, score: int = -1):
        if a == APPROVE:
            self.sum_app_g2 += g2
        elif a == REVIEW:
            self.sum_rev_g4 += g4
        if a != REJECT:
            self.n_submitted += 1
            self.last_rate = self.current_rate()
        self.actions.append((score, int(a)))

    def refresh_future(self):
        self.g_future = GTable(self.future_values([self.current_rate()])[0], self.g_current.period_tag)

    def decide(self, w: Transaction) -> Decision:
        """RGH step: argmax of prospective rewards, then update the running estimate."""
        rf, _ = self.prospective_rewards(w)
        a = argmax_decision(rf)
        g = self.g_current.values
        self.update(int(a), g[1, w.score], g[3, w.score], w.score)
        self.refresh_future()
        return a

    def recomputed_sums(self) -> tuple[float, float, int]:
        """Running sums rebuilt from the action log (bookkeeping check)."""
        g = self.g_current.values
        app = sum(g[1, s] for s, a in self.actions if a == APPROVE)
        rev = sum(g[3, s] for s, a in self.actions if a == REVIEW)
        return app, rev, sum(1 for _, a in self.actions if a != REJECT)


def rho_tau(state: ProspectiveState, w_next: Transaction, a: Decision) -> float:
    return state.rho_tau(w_next, a)


def prospective_rewards(state: ProspectiveState, w: Transaction, costs: CostParams | None = None):
    return state.prospective_rewards(w)[0]


def rgh_decide(state: ProspectiveState, w: Transaction, costs: CostParams | None = None):
    return state.decide(w), state


class ProspectivePolicy(MyopicPolicy):
    """Myopic control plus a discounted reference profit of period ``t + l``.

    Parameters
    ----------
    lam : float
        Weight of the future reference profit.
    reference_size : int
        Size of the reference sample bootstrapped from the latest mature period.
    fei : EnvRegressor or None
        Unfitted future-environment model; horizon and lead are set at fit time.
    """

    name = "prospective"

    def __init__(self, costs=CostParams(), score_max=DEFAULT_SCORE_MAX, cei=None, fei=None,
                 lam=0.12, reference_size=200, random_state=0):
        super().__init__(costs=costs, score_max=score_max, cei=cei)
        self.fei = fei
        self.lam = lam
        self.reference_size = reference_size
        self.random_state = random_state

    def fit(self, history, period=None):
        t = history.as_of if period is None else period
        super().fit(history, t)
        L, l = self.costs.maturity_horizon, self.costs.partial_lag
        traj = self.trajectory_
        rates = series_with_fallback(lambda k: submitted_chargeback_rate(history, k),
                                     traj.periods, initial=0.0)
        base = EnvRegressor() if self.fei is None else clone(self.fei)
        self.fei_ = base.set_params(horizon=L + l, rate_lead=l).fit(traj, rates)
        self.fallback_rate_ = float(rates[-1])

        src = np.flatnonzero(history.period == t - L)
        if len(src) == 0:
            raise ValueError(f"no mature transactions in period {t - L} to bootstrap from")
        rng = np.random.default_rng([self.random_state, t])
        pick = src[rng.integers(0, len(src), self.reference_size)]
        self.reference_ = TransactionBatch(
            id=np.arange(self.reference_size, dtype=np.int64),
            score=history.score[pick], margin=history.margin[pick], cost=history.cost[pick],
            period=np.full(self.reference_size, t + l, dtype=np.int64),
            arrival_index=np.arange(self.reference_size, dtype=np.int64))
        self.future_period_ = t + l
        return self

    def new_state(self, lam=None) -> ProspectiveState:
        check_is_fitted(self, "fei_")
        return ProspectiveState.from_regressor(
            self.gtable_, self.reference_, self.fei_, self.trajectory_, self.future_period_,
            self.costs, self.lam if lam is None else lam, self.fallback_rate_)

    def predict_records(self, batch):
        state = self.new_state()
        n = len(batch)
        r = batch_rewards(batch, self.gtable_, self.costs)
        g2 = self.gtable_.values[1, batch.score]
        g4 = self.gtable_.values[3, batch.score]
        rf = np.zeros((n, 3))
        deltas = np.zeros((n, 3))
        out = np.zeros(n, dtype=np.int8)
        for j in range(n):
            rf[j], deltas[j] = state._rewards(r[j], g2[j], g4[j])
            a = int(argmax_decision(rf[j]))
            state.update(a, g2[j], g4[j], int(batch.score[j]))
            out[j] = a
        state.refresh_future()
        self.state_ = state
        return out, rf, {"expected": r, "delta": deltas}
