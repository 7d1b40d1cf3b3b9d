import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudctl.domain import CostParams, Decision, validate_gtable
from fraudctl.env import EnvConfig, World
from fraudctl.estimation import (InsufficientDataError, LabeledSlice, PeriodReport, StalenessError,
                                 UndefinedRateError, estimate_g_mature, mature_trajectory,
                                 realized_metrics, rho_pcb, series_with_fallback,
                                 transaction_profits)

A, V, J = int(Decision.APPROVE), int(Decision.REVIEW), int(Decision.REJECT)


def make_slice(rows, as_of=100):
    """rows: dicts with score, decision, fraud, auth, mr, lag, period, margin, cost."""
    def col(key, default, dtype):
        return np.array([r.get(key, default) for r in rows], dtype=dtype)

    decision = col("decision", A, np.int8)
    auth = np.where(decision == J, -1, col("auth", 1, np.int8)).astype(np.int8)
    mr = np.where((decision == V) & (auth == 1), col("mr", 1, np.int8), -1).astype(np.int8)
    fraud = col("fraud", False, bool)
    final = ((decision == A) & (auth == 1)) | ((decision == V) & (auth == 1) & (mr == 1))
    lag = np.where(fraud & final, col("lag", 0, np.int16), -1).astype(np.int16)
    return LabeledSlice(
        as_of=as_of, period=col("period", 0, np.int64), score=col("score", 0, np.int64),
        margin=col("margin", 10.0, float), cost=col("cost", 100.0, float), decision=decision,
        is_fraud=fraud, bank_auth=auth, mr_approved=mr, final_approved=final, cb_lag=lag,
        flipped=np.zeros(len(rows), bool), label_decision=decision, label_auth=auth,
        label_mr=mr, label_final=final, label_cb_lag=lag)


def test_empirical_frequency_example():
    rows = [dict(score=300, auth=1) for _ in range(90)] + [dict(score=300, auth=0)] * 10
    g = estimate_g_mature(make_slice(rows), 1000, 12)
    assert g.g1[300] == pytest.approx(0.9)
    assert g.g5[300] == pytest.approx(0.9) and g.g2[300] == 0.0


def test_empty_cell_takes_nearest_lower_score_on_ties():
    rows = ([dict(score=300, auth=1)] * 9 + [dict(score=300, auth=0)]
            + [dict(score=302, auth=0)] * 10)
    g = estimate_g_mature(make_slice(rows), 1000, 12)
    np.testing.assert_array_equal(g.values[:, 301], g.values[:, 300])
    np.testing.assert_array_equal(g.values[:, 303], g.values[:, 302])
    np.testing.assert_array_equal(g.values[:, 0], g.values[:, 300])


def test_rejected_rows_carry_no_bank_signal():
    rows = [dict(score=5, auth=1)] * 4 + [dict(score=5, decision=J)] * 50
    g = estimate_g_mature(make_slice(rows), 10, 12)
    assert g.g5[5] == 1.0


def test_review_functions_use_reviewed_rows():
    rows = ([dict(score=1, decision=V, auth=1, mr=1)] * 3 + [dict(score=1, decision=V, auth=1, mr=0)]
            + [dict(score=1, decision=V, auth=1, mr=1, fraud=True)])
    g = estimate_g_mature(make_slice(rows), 3, 12)
    assert g.g3[1] == pytest.approx(3 / 5) and g.g4[1] == pytest.approx(1 / 5)


def test_staleness_and_insufficient_data():
    with pytest.raises(StalenessError):
        estimate_g_mature(make_slice([dict(period=95)], as_of=100), 10, 12)
    with pytest.raises(InsufficientDataError):
        estimate_g_mature(make_slice([dict(decision=J)] * 3), 10, 12)


def test_rho_pcb_examples():
    rows = ([dict(period=8, fraud=True, lag=1)] * 3 + [dict(period=8)] * 147
            + [dict(period=8, fraud=True, lag=5)] * 2)
    data = make_slice(rows, as_of=10)
    # 152 finally approved, 3 visible by period 10
    assert rho_pcb(data, 8) == pytest.approx(3 / 152)
    exact = make_slice([dict(period=8, fraud=True, lag=1)] * 3 + [dict(period=8)] * 147, as_of=10)
    assert rho_pcb(exact, 8) == pytest.approx(0.02)
    assert rho_pcb(make_slice([dict(period=8)] * 5, as_of=10), 8) == 0.0
    with pytest.raises(UndefinedRateError):
        rho_pcb(make_slice([dict(period=8, decision=J)], as_of=10), 8)


def test_rho_pcb_with_lag_zero_maturity_is_full_rate():
    cfg = EnvConfig(arrival_rate=500.0, maturity_geom_p=1.0, seed=2)
    w = World(cfg)
    for _ in range(4):
        b = w.gen_period()
        w.step(b, np.zeros(len(b), dtype=np.int8))
        w.advance_period()
    data = LabeledSlice.from_logs(w.logs, as_of=4)
    for p in range(3):
        assert rho_pcb(data, p, as_of=p + 1) == w.realized_chargeback_rate(p)


def test_rho_pcb_monotone_then_fixed():
    w = World(EnvConfig(arrival_rate=800.0, seed=5))
    for _ in range(16):
        b = w.gen_period()
        w.step(b, np.zeros(len(b), dtype=np.int8))
        w.advance_period()
    data = LabeledSlice.from_logs(w.logs, as_of=16)
    seq = [rho_pcb(data, 2, as_of=t) for t in range(2, 17)]
    assert seq == sorted(seq)
    assert seq[-1] == seq[12] == w.realized_chargeback_rate(2)


def test_series_with_fallback():
    def fn(p):
        if p in (1, 2):
            raise UndefinedRateError()
        return p * 0.1
    np.testing.assert_allclose(series_with_fallback(fn, [0, 1, 2, 3], initial=9.0), [0.0, 0.0, 0.0, 0.3])
    np.testing.assert_allclose(series_with_fallback(fn, [1, 3], initial=9.0), [9.0, 0.3])


def test_realized_metrics_examples():
    costs = CostParams(review_unit_cost=5)
    empty = realized_metrics(LabeledSlice.empty(100), costs)
    assert empty == PeriodReport(period=-1)
    r = realized_metrics(make_slice([dict(fraud=True, cost=100.0)]), costs)
    assert r.fn_loss == 100.0 and r.profit == -100.0
    r = realized_metrics(make_slice([dict(decision=V, auth=0)]), costs)
    assert r.mr_cost == 0.0
    r = realized_metrics(make_slice([dict(decision=V, auth=1, mr=0, margin=7.0)]), costs)
    assert r.mr_cost == 5.0 and r.fp_loss == 7.0
    with pytest.raises(StalenessError):
        realized_metrics(make_slice([dict(period=99)]), costs)


row_strategy = st.fixed_dictionaries({
    "score": st.integers(0, 10), "decision": st.sampled_from([A, V, J]),
    "auth": st.integers(0, 1), "mr": st.integers(0, 1), "fraud": st.booleans(),
    "lag": st.integers(0, 12), "period": st.integers(0, 20),
    "margin": st.floats(0, 100), "cost": st.floats(0, 500),
})


@settings(max_examples=150, deadline=None)
@given(st.lists(row_strategy, min_size=1, max_size=60))
def test_estimates_always_valid(rows):
    data = make_slice(rows, as_of=40)
    try:
        g = estimate_g_mature(data, 10, 12)
    except InsufficientDataError:
        assert all(r["decision"] == J for r in rows)
        return
    assert validate_gtable(g) == []


@settings(max_examples=150, deadline=None)
@given(st.lists(row_strategy, max_size=60))
def test_profit_decomposes(rows):
    data = make_slice(rows, as_of=40) if rows else LabeledSlice.empty(40)
    costs = CostParams()
    r = realized_metrics(data, costs)
    per_tx = transaction_profits(data, costs)
    assert float(per_tx.sum()) == pytest.approx(r.profit, abs=1e-9)
    assert r.profit == r.revenue - r.fn_loss - r.mr_cost


def test_slice_hides_future_chargebacks():
    w = World(EnvConfig(arrival_rate=800.0, seed=3))
    for _ in range(6):
        b = w.gen_period()
        w.step(b, np.zeros(len(b), dtype=np.int8))
        w.advance_period()
    data = LabeledSlice.from_logs(w.logs, as_of=4)
    assert data.period.max() == 3
    vis = data.visible_chargeback()
    assert np.all(data.period[vis] + data.cb_lag[vis] <= 4)


def test_trajectory_carries_forward_empty_periods():
    rows = [dict(period=0, score=1)] * 5 + [dict(period=2, score=1, auth=0)] * 5
    traj = mature_trajectory(make_slice(rows, as_of=40), 0, 2, 3, 12)
    np.testing.assert_array_equal(traj.values[1], traj.values[0])
    assert traj.values[2][4, 1] == 0.0
