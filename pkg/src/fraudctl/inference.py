"""Environment regressors mapping mature g-trajectories plus a rate signal to g-tables.

The same estimator backs both current-environment inference (rate signal: the
partially mature chargeback rate ``l`` periods back, target: the current period)
and future-environment inference (rate signal: a full chargeback rate, target:
``l`` periods after it). They differ only in ``horizon`` and ``rate_lead``.
"""
from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .domain import GTable, project_gvalues
from .estimation import GTrajectory


class NotEnoughHistoryError(ValueError):
    pass


def _as_trajectory(traj) -> GTrajectory:
    if isinstance(traj, GTrajectory):
        return traj
    return GTrajectory.from_tables(traj)


class EnvRegressor(BaseEstimator):
    """Per-score-band ridge regression, one model per g-function.

    For target period ``k`` and score ``s`` the features are the rate signal, the
    ``window`` mature values ``g_i(s)`` ending ``horizon`` periods before ``k``,
    and optionally ``k`` itself as a trend term. Features are standardized
    before the ridge solve; the intercept is not penalized.

    Parameters
    ----------
    window : int
        Number of lagged mature tables used as features.
    horizon : int
        Periods between the newest input table and the target.
    rate_lead : int
        Target ``k`` is paired with ``rates[k - rate_lead]`` during fitting.
    alpha : float
        Ridge strength in standardized units.
    n_bands : int
        Number of contiguous score bands that share parameters.
    trend : bool
        Include the target period as a feature.
    """

    def __init__(self, window=8, horizon=1, rate_lead=0, alpha=1e-3, n_bands=20, trend=True):
        self.window = window
        self.horizon = horizon
        self.rate_lead = rate_lead
        self.alpha = alpha
        self.n_bands = n_bands
        self.trend = trend

    @property
    def min_history(self) -> int:
        return max(self.window + self.horizon, self.rate_lead + 1)

    def _band_of(self, n_scores):
        width = -(-n_scores // self.n_bands)
        return np.arange(n_scores) // width

    def _features(self, lags, rate, period):
        """lags: (W, m) values for one g-function; returns (m, n_features)."""
        m = lags.shape[1]
        cols = [np.full(m, float(rate)), *lags]
        if self.trend:
            cols.append(np.full(m, float(period)))
        return np.column_stack(cols)

    def fit(self, traj, rates):
        """Fit on a mature trajectory and a rate series aligned with its periods."""
        traj = _as_trajectory(traj)
        rates = np.asarray(rates, dtype=float)
        if len(rates) != len(traj):
            raise ValueError("rates must align with trajectory periods")
        T, _, n = traj.values.shape
        W, h = self.window, self.horizon
        first = max(W + h - 1, self.rate_lead)
        if T < self.min_history or first >= T:
            raise NotEnoughHistoryError(
                f"need at least {self.min_history} mature periods, got {T}")
        targets = np.arange(first, T)
        band = self._band_of(n)
        n_feat = 1 + W + int(self.trend)
        coef = np.zeros((5, self.n_bands, n_feat))
        intercept = np.zeros((5, self.n_bands))
        for i in range(5):
            X = np.concatenate([
                self._features(traj.values[k - h - W + 1:k - h + 1, i, :],
                               rates[k - self.rate_lead], traj.periods[k])
                for k in targets])
            y = np.concatenate([traj.values[k, i, :] for k in targets])
            bands = np.tile(band, len(targets))
            for b in range(band.max() + 1):
                rows = bands == b
                coef[i, b], intercept[i, b] = _ridge(X[rows], y[rows], self.alpha)
        self.coef_ = coef
        self.intercept_ = intercept
        self.n_scores_ = n
        self.fitted_through_ = int(traj.periods[-1])
        return self

    def rate_response(self, recent, period=None, scores=None):
        """Unclamped prediction as ``intercept + slope * rate``, each of shape (5, m).

        ``recent`` is a trajectory whose last ``window`` tables are the inputs;
        ``period`` is the target period (default: last input period + horizon).
        """
        check_is_fitted(self, "coef_")
        recent = _as_trajectory(recent)
        if len(recent) < self.window:
            raise NotEnoughHistoryError(f"need {self.window} recent tables, got {len(recent)}")
        if period is None:
            period = int(recent.periods[-1]) + self.horizon
        scores = np.arange(self.n_scores_) if scores is None else np.asarray(scores)
        lags = recent.values[-self.window:][:, :, scores]            # (W, 5, m)
        band = self._band_of(self.n_scores_)[scores]
        coef = self.coef_[:, band, :]                                # (5, m, F)
        base = self.intercept_[:, band] + np.einsum("imw,wim->im", coef[:, :, 1:1 + self.window], lags)
        if self.trend:
            base = base + coef[:, :, -1] * float(period)
        return base, coef[:, :, 0]

    def predict(self, recent, rate, period=None, scores=None) -> np.ndarray:
        """Clamped predictions, shape (5, m)."""
        base, slope = self.rate_response(recent, period, scores)
        return np.clip(base + slope * float(rate), 0.0, 1.0)

    def infer(self, recent, rate, period=None) -> GTable:
        """Full g-table for the target period, projected onto the subset laws."""
        recent = _as_trajectory(recent)
        if period is None:
            period = int(recent.periods[-1]) + self.horizon
        return GTable(project_gvalues(self.predict(recent, rate, period)), period)

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        out = {"params": self.get_params()}
        if hasattr(self, "coef_"):
            out["state"] = {
                "coef": self.coef_.tolist(),
                "intercept": self.intercept_.tolist(),
                "n_scores": self.n_scores_,
                "fitted_through": self.fitted_through_,
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EnvRegressor":
        r = cls(**d["params"])
        if "state" in d:
            st = d["state"]
            r.coef_ = np.array(st["coef"], dtype=float)
            r.intercept_ = np.array(st["intercept"], dtype=float)
            r.n_scores_ = int(st["n_scores"])
            r.fitted_through_ = int(st["fitted_through"])
        return r

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _ridge(X, y, alpha):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    live = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    coef = np.zeros(X.shape[1])
    y_mean = y.mean()
    if live.any():
        Z = (X[:, live] - mean[live]) / scale[live]
        A = Z.T @ Z + alpha * np.eye(Z.shape[1])
        beta = np.linalg.solve(A, Z.T @ (y - y_mean))
        coef[live] = beta / scale[live]
    return coef, y_mean - coef @ mean


class MatureTableCEI:
    """Degenerate current-environment model: returns the cumulative mature table."""

    def fit(self, traj, rates, mature_table: GTable | None = None):
        if mature_table is None:
            raise ValueError("MatureTableCEI needs the cumulative mature table")
        self.table_ = mature_table
        self.fitted_through_ = int(_as_trajectory(traj).periods[-1]) if len(traj) else -1
        return self

    def infer(self, recent, rate, period=None) -> GTable:
        if not hasattr(self, "table_"):
            raise NotFittedError("MatureTableCEI is not fitted")
        return self.table_.with_period(period)


def fit_cei(traj, pcb_history, horizon: int = 1, **params) -> EnvRegressor:
    """Current-environment regressor.

    ``pcb_history[k]`` is the partially mature rate signal that was available at
    trajectory period ``k``.
    """
    return EnvRegressor(horizon=horizon, rate_lead=0, **params).fit(traj, pcb_history)


def fit_fei(traj, mature_cb_history, lead: int, horizon: int | None = None, **params) -> EnvRegressor:
    """Future-environment regressor.

    ``mature_cb_history[k]`` is the full chargeback rate of trajectory period
    ``k``; the table ``lead`` periods later is the target.
    """
    horizon = lead if horizon is None else horizon
    return EnvRegressor(horizon=horizon, rate_lead=lead, **params).fit(traj, mature_cb_history)


def infer_current(r, traj, rho_pcb_lag: float, period=None) -> GTable:
    if not hasattr(r, "coef_") and not hasattr(r, "table_"):
        raise NotFittedError("regressor is not fitted")
    return r.infer(traj, rho_pcb_lag, period)


def infer_future(r, traj, rho_cb_estimate: float, period=None) -> GTable:
    if not hasattr(r, "coef_"):
        raise NotFittedError("regressor is not fitted")
    return r.infer(traj, rho_cb_estimate, period)
