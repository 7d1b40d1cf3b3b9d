"""Static-threshold baseline plus the Naive and Myopic greedy controls."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from ..domain import (DEFAULT_SCORE_MAX, CostParams, Decision, GTable, Transaction, TransactionBatch,
                      argmax_decisions, batch_rewards)
from ..estimation import (LabeledSlice, estimate_g_mature, mature_trajectory, rho_pcb,
                          series_with_fallback)
from ..inference import EnvRegressor, MatureTableCEI


class ControlPolicy(BaseEstimator):
    """Common surface: ``fit(history, period)`` then ``predict(batch)``.

    ``history`` is a :class:`LabeledSlice` holding everything logged before
    ``period``; fitting only reads labels visible at ``history.as_of``.
    """

    name = "policy"

    def fit(self, history: LabeledSlice | None = None, period: int | None = None):
        return self

    def predict_records(self, batch: TransactionBatch):
        """Decisions plus the ``(n, 3)`` values they maximize and any extra columns."""
        raise NotImplementedError

    def predict(self, batch: TransactionBatch) -> np.ndarray:
        return self.predict_records(batch)[0]

    def decide(self, w: Transaction) -> Decision:
        return Decision(int(self.predict(TransactionBatch.from_transactions([w]))[0]))


class BaselinePolicy(ControlPolicy):
    """Approve below ``low``, reject above ``high``, review in between."""

    name = "baseline"

    def __init__(self, low=450, high=850):
        self.low = low
        self.high = high

    def fit(self, history=None, period=None):
        if self.low > self.high:
            raise ValueError(f"baseline thresholds need low <= high, got {self.low} > {self.high}")
        self.fitted_ = True
        return self

    def predict_records(self, batch):
        if self.low > self.high:
            raise ValueError(f"baseline thresholds need low <= high, got {self.low} > {self.high}")
        s = batch.score
        d = np.where(s < self.low, Decision.APPROVE,
                     np.where(s > self.high, Decision.REJECT, Decision.REVIEW)).astype(np.int8)
        return d, None, None


def baseline_decide(w: Transaction, low: int, high: int) -> Decision:
    return BaselinePolicy(low, high).fit().decide(w)


class _TablePolicy(ControlPolicy):
    """Greedy argmax of the expected reward triple under ``self.gtable_``."""

    def predict_records(self, batch):
        check_is_fitted(self, "gtable_")
        r = batch_rewards(batch, self.gtable_, self.costs)
        return argmax_decisions(r), r, None


class NaivePolicy(_TablePolicy):
    """Greedy control on the g-functions estimated from all fully mature data."""

    name = "naive"

    def __init__(self, costs=CostParams(), score_max=DEFAULT_SCORE_MAX):
        self.costs = costs
        self.score_max = score_max

    def fit(self, history, period=None):
        t = history.as_of if period is None else period
        L = self.costs.maturity_horizon
        mature = history.periods(hi=t - L)
        self.gtable_ = estimate_g_mature(mature, self.score_max, L, period_tag=t)
        self.trained_through_ = t - L
        self.as_of_ = history.as_of
        return self


def naive_decide(w: Transaction, g_mature: GTable, costs: CostParams) -> Decision:
    return _greedy_on(w, g_mature, costs)


def myopic_decide(w: Transaction, g_hat: GTable, costs: CostParams) -> Decision:
    return _greedy_on(w, g_hat, costs)


def _greedy_on(w, g, costs):
    r = batch_rewards(TransactionBatch.from_transactions([w]), g, costs)
    return Decision(int(argmax_decisions(r)[0]))


class MyopicPolicy(_TablePolicy):
    """Greedy control on the current-period table inferred from mature
    trajectories and the partially mature chargeback rate.

    ``cei`` is an unfitted :class:`EnvRegressor` (its horizon is forced to the
    maturity horizon), ``None`` for the default one, or ``"mature"`` to use the
    cumulative mature table unchanged.
    """

    name = "myopic"

    def __init__(self, costs=CostParams(), score_max=DEFAULT_SCORE_MAX, cei=None):
        self.costs = costs
        self.score_max = score_max
        self.cei = cei

    def _trajectory(self, history, t):
        L = self.costs.maturity_horizon
        first = int(history.period.min()) if len(history) else 0
        return mature_trajectory(history.periods(hi=t - L), first, t - L, self.score_max, L)

    def _pcb_signal(self, history, traj, t):
        """Rate signal available at each trajectory period, and at ``t``."""
        lag = self.costs.partial_lag
        periods = list(traj.periods) + [t]
        series = series_with_fallback(lambda k: rho_pcb(history, k - lag, as_of=k), periods,
                                      initial=0.0)
        return series[:-1], float(series[-1])

    def fit(self, history, period=None):
        t = history.as_of if period is None else period
        L = self.costs.maturity_horizon
        traj = self._trajectory(history, t)
        signal, now = self._pcb_signal(history, traj, t)
        if self.cei == "mature":
            mature = estimate_g_mature(history.periods(hi=t - L), self.score_max, L)
            model = MatureTableCEI().fit(traj, signal, mature_table=mature)
        else:
            base = EnvRegressor() if self.cei is None else clone(self.cei)
            model = base.set_params(horizon=L, rate_lead=0).fit(traj, signal)
        self.cei_ = model
        self.trajectory_ = traj
        self.pcb_signal_ = now
        self.gtable_ = model.infer(traj, now, period=t)
        self.trained_through_ = t - L
        self.as_of_ = history.as_of
        return self
