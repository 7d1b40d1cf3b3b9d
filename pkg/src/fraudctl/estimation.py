"""Empirical g-functions and chargeback-rate statistics from (partially) mature logs."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .domain import CostParams, Decision, GTable, project_gvalues

APPROVE, REVIEW, REJECT = int(Decision.APPROVE), int(Decision.REVIEW), int(Decision.REJECT)


class StalenessError(ValueError):
    """Raised when a computation needs fully mature labels but gets immature ones."""


class InsufficientDataError(ValueError):
    pass


class UndefinedRateError(ZeroDivisionError):
    pass


_COLUMNS = ("period", "score", "margin", "cost", "decision", "is_fraud", "bank_auth",
            "mr_approved", "final_approved", "cb_lag", "flipped", "label_decision",
            "label_auth", "label_mr", "label_final", "label_cb_lag")


@dataclass(frozen=True, eq=False)
class LabeledSlice:
    """Transactions from a range of periods with outcomes as visible at ``as_of``.

    A chargeback of a period-``p`` transaction with lag ``k`` is visible from
    period ``p + k`` on; use :meth:`visible_chargeback` rather than ``cb_lag``
    when reasoning about what a decision maker could know.
    """

    as_of: int
    period: np.ndarray
    score: np.ndarray
    margin: np.ndarray
    cost: np.ndarray
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
        return len(self.period)

    @classmethod
    def from_logs(cls, logs: dict, as_of: int, periods=None) -> "LabeledSlice":
        """Concatenate ``World.logs`` entries; ``periods`` defaults to every period < ``as_of``."""
        if periods is None:
            periods = [p for p in sorted(logs) if p < as_of]
        else:
            periods = [p for p in sorted(periods) if p in logs]
        parts = [logs[p] for p in periods]
        if not parts:
            return cls.empty(as_of)
        cols = {
            "period": np.concatenate([lg.batch.period for lg in parts]),
            "score": np.concatenate([lg.batch.score for lg in parts]),
            "margin": np.concatenate([lg.batch.margin for lg in parts]),
            "cost": np.concatenate([lg.batch.cost for lg in parts]),
        }
        for name in _COLUMNS[4:]:
            cols[name] = np.concatenate([getattr(lg, name) for lg in parts])
        return cls(as_of=as_of, **cols)

    @classmethod
    def empty(cls, as_of: int) -> "LabeledSlice":
        z = {name: np.zeros(0, dtype=np.int64) for name in _COLUMNS}
        for name in ("margin", "cost"):
            z[name] = np.zeros(0)
        for name in ("is_fraud", "final_approved", "flipped", "label_final"):
            z[name] = np.zeros(0, dtype=bool)
        return cls(as_of=as_of, **z)

    def select(self, mask) -> "LabeledSlice":
        return LabeledSlice(as_of=self.as_of, **{n: getattr(self, n)[mask] for n in _COLUMNS})

    def periods(self, lo=None, hi=None) -> "LabeledSlice":
        """Rows with ``lo <= period <= hi``."""
        m = np.ones(len(self), dtype=bool)
        if lo is not None:
            m &= self.period >= lo
        if hi is not None:
            m &= self.period <= hi
        return self.select(m)

    def visible_chargeback(self, label_route: bool = False) -> np.ndarray:
        lag = self.label_cb_lag if label_route else self.cb_lag
        return (lag >= 0) & (self.period + lag <= self.as_of)

    def is_mature(self, maturity_horizon: int) -> bool:
        return len(self) == 0 or int(self.period.max()) <= self.as_of - maturity_horizon


@dataclass(frozen=True, eq=False)
class GTrajectory:
    """Per-period g-tables of consecutive mature periods."""

    periods: np.ndarray
    values: np.ndarray  # (T, 5, score_max + 1)

    def __post_init__(self):
        periods = np.asarray(self.periods, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1] != 5 or len(periods) != len(values):
            raise ValueError("trajectory values must have shape (T, 5, n_scores) matching periods")
        if np.any(np.diff(periods) <= 0):
            raise ValueError("trajectory periods must be strictly increasing")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.periods)

    def tables(self) -> list[GTable]:
        return [GTable(v, int(p)) for p, v in zip(self.periods, self.values)]

    @classmethod
    def from_tables(cls, tables) -> "GTrajectory":
        tables = list(tables)
        return cls(np.array([g.period_tag for g in tables]), np.stack([g.values for g in tables]))

    def until(self, period: int) -> "GTrajectory":
        m = self.periods <= period
        return GTrajectory(self.periods[m], self.values[m])


def _nearest_fill(values: np.ndarray, populated: np.ndarray) -> np.ndarray:
    """Copy each unpopulated column from the nearest populated one, ties to the lower score."""
    idx = np.flatnonzero(populated)
    n = values.shape[-1]
    if len(idx) == n:
        return values
    pos = np.searchsorted(idx, np.arange(n))
    lo = idx[np.clip(pos - 1, 0, len(idx) - 1)]
    hi = idx[np.clip(pos, 0, len(idx) - 1)]
    s = np.arange(n)
    src = np.where(np.abs(s - lo) <= np.abs(hi - s), lo, hi)
    src[populated] = s[populated]
    return values[..., src]


def g_counts(data: LabeledSlice, score_max: int) -> dict:
    """Per-score event counts behind :func:`estimate_g_mature`."""
    n = score_max + 1
    s = data.score
    if len(s) and (s.min() < 0 or s.max() > score_max):
        raise IndexError("score outside [0, score_max]")
    nonrej = data.label_decision != REJECT
    auth = nonrej & (data.label_auth == 1)
    fraud = data.is_fraud
    rev_ok = (data.label_decision == REVIEW) & auth & (data.label_mr == 1)

    def count(mask):
        return np.bincount(s[mask], minlength=n).astype(float)

    return {
        "n_submitted": count(nonrej),
        "n_reviewed": count(data.label_decision == REVIEW),
        "auth_nonfraud": count(auth & ~fraud),
        "auth_fraud": count(auth & fraud),
        "auth": count(auth),
        "rev_nonfraud": count(rev_ok & ~fraud),
        "rev_fraud": count(rev_ok & fraud),
    }


def estimate_g_mature(data: LabeledSlice, score_max: int, maturity_horizon: int,
                      period_tag=None) -> GTable:
    """Empirical g-functions from fully mature labels.

    g1, g2 and g5 are frequencies among transactions routed past the engine
    (approved, reviewed, or flipped rejections); g3 and g4 among reviewed ones.
    Empty score cells borrow the nearest populated score. Reviewed-only
    functions are zero when the slice holds no reviews at all.
    """
    if not data.is_mature(maturity_horizon):
        raise StalenessError(
            f"slice reaches period {int(data.period.max())}, labels mature only through "
            f"{data.as_of - maturity_horizon}")
    c = g_counts(data, score_max)
    if c["n_submitted"].sum() == 0:
        raise InsufficientDataError("no non-rejected transactions to estimate from")
    g = np.zeros((5, score_max + 1))
    sub = c["n_submitted"] > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        g[0] = c["auth_nonfraud"] / c["n_submitted"]
        g[1] = c["auth_fraud"] / c["n_submitted"]
        g[4] = c["auth"] / c["n_submitted"]
        g[2] = c["rev_nonfraud"] / c["n_reviewed"]
        g[3] = c["rev_fraud"] / c["n_reviewed"]
    g[[0, 1, 4]] = _nearest_fill(g[[0, 1, 4]], sub)
    rev = c["n_reviewed"] > 0
    if rev.any():
        g[[2, 3]] = _nearest_fill(g[[2, 3]], rev)
    else:
        g[[2, 3]] = 0.0
    return GTable(project_gvalues(g), period_tag)


def mature_trajectory(data: LabeledSlice, first: int, last: int, score_max: int,
                      maturity_horizon: int) -> GTrajectory:
    """One g-table per period in ``[first, last]``; a period without usable rows
    repeats the previous table."""
    out, prev = [], None
    by_period = {}
    order = np.argsort(data.period, kind="stable")
    bounds = np.searchsorted(data.period[order], [first, last + 1])
    sub = data.select(order[bounds[0]:bounds[1]])
    splits = np.searchsorted(sub.period, np.arange(first, last + 2))
    for k, p in enumerate(range(first, last + 1)):
        by_period[p] = sub.select(slice(splits[k], splits[k + 1]))
    for p in range(first, last + 1):
        try:
            prev = estimate_g_mature(by_period[p], score_max, maturity_horizon).values
        except InsufficientDataError:
            if prev is None:
                raise
        out.append(prev)
    return GTrajectory(np.arange(first, last + 1), np.stack(out))


def rho_pcb(data: LabeledSlice, period: int, as_of: int | None = None) -> float:
    """Chargebacks of ``period`` visible by ``as_of`` over its finally approved count."""
    as_of = data.as_of if as_of is None else as_of
    m = data.period == period
    approved = int(np.count_nonzero(data.final_approved[m]))
    if approved == 0:
        raise UndefinedRateError(f"no finally approved transactions in period {period}")
    lag = data.cb_lag[m]
    visible = int(np.count_nonzero((lag >= 0) & (period + lag <= as_of)))
    return visible / approved


def submitted_chargeback_rate(data: LabeledSlice, period: int) -> float:
    """Chargebacks per non-rejected transaction of a mature period.

    This is the quantity the in-period running estimate targets.
    """
    m = data.period == period
    submitted = int(np.count_nonzero(data.decision[m] != REJECT))
    if submitted == 0:
        raise UndefinedRateError(f"no submitted transactions in period {period}")
    return int(np.count_nonzero(data.cb_lag[m] >= 0)) / submitted


def series_with_fallback(fn, periods, initial: float) -> np.ndarray:
    """Evaluate ``fn(p)`` per period, carrying the last defined value over gaps."""
    out, last = [], initial
    for p in periods:
        try:
            last = fn(p)
        except UndefinedRateError:
            pass
        out.append(last)
    return np.array(out, dtype=float)


@dataclass(frozen=True)
class PeriodReport:
    period: int
    n_transactions: int = 0
    n_approve: int = 0
    n_review: int = 0
    n_reject: int = 0
    n_final_approved: int = 0
    n_chargebacks: int = 0
    fn_loss: float = 0.0
    fp_loss: float = 0.0
    mr_cost: float = 0.0
    revenue: float = 0.0
    profit: float = 0.0
    chargeback_rate: float = 0.0

    def as_row(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def combine(cls, reports, period=-1) -> "PeriodReport":
        reports = list(reports)
        sums = {n: sum(getattr(r, n) for r in reports) for n in cls.field_names()
                if n not in ("period", "chargeback_rate")}
        rate = sums["n_chargebacks"] / sums["n_final_approved"] if sums["n_final_approved"] else 0.0
        return cls(period=period, chargeback_rate=rate, **sums)


def transaction_profits(data: LabeledSlice, costs: CostParams) -> np.ndarray:
    """Per-transaction realized profit contributions."""
    good = data.final_approved & ~data.is_fraud
    bad = data.final_approved & data.is_fraud
    reviewed_auth = (data.decision == REVIEW) & (data.bank_auth == 1)
    return (np.where(good, data.margin, 0.0) - np.where(bad, data.cost, 0.0)
            - np.where(reviewed_auth, costs.review_unit_cost, 0.0))


def realized_metrics(data: LabeledSlice, costs: CostParams, period: int = -1,
                     ground_truth: bool = False) -> PeriodReport:
    """Loss and profit accounting over every row of ``data``.

    With ``ground_truth=False`` the slice must be mature; the simulator may pass
    ``ground_truth=True`` since it knows every fraud status exactly.
    """
    if not ground_truth and not data.is_mature(costs.maturity_horizon):
        raise StalenessError("realized metrics need mature labels")
    if len(data) == 0:
        return PeriodReport(period=period)
    fraud = data.is_fraud
    final = data.final_approved
    dec = data.decision
    reviewed_auth = (dec == REVIEW) & (data.bank_auth == 1)
    mr_declined = reviewed_auth & (data.mr_approved == 0)
    fn = float(data.cost[final & fraud].sum())
    fp = float(data.margin[((dec == REJECT) | mr_declined) & ~fraud].sum())
    mr = costs.review_unit_cost * int(reviewed_auth.sum())
    revenue = float(data.margin[final & ~fraud].sum())
    n_final = int(final.sum())
    n_cb = int((final & fraud).sum())
    return PeriodReport(
        period=period,
        n_transactions=len(data),
        n_approve=int((dec == APPROVE).sum()),
        n_review=int((dec == REVIEW).sum()),
        n_reject=int((dec == REJECT).sum()),
        n_final_approved=n_final,
        n_chargebacks=n_cb,
        fn_loss=fn,
        fp_loss=fp,
        mr_cost=mr,
        revenue=revenue,
        profit=revenue - fn - mr,
        chargeback_rate=n_cb / n_final if n_final else 0.0,
    )
