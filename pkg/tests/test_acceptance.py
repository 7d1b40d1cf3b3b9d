"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances."""
import json
import os
import time

import numpy as np
import pytest

from fraudctl.checks import check_bellman, check_myopic_greedy, check_naive_greedy
from fraudctl.cli import main
from fraudctl.domain import CostParams, Decision, TransactionBatch
from fraudctl.env import EnvConfig, World
from fraudctl.estimation import GTrajectory, LabeledSlice, estimate_g_mature, g_counts
from fraudctl.harness import ExperimentPlan, PolicySpec, production_policy, run_experiment
from fraudctl.inference import fit_cei, fit_fei, infer_current, infer_future
from fraudctl.policies import ProspectiveState

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {detail}")
        return passed
    return emit


def test_1_greedy_equals_brute_force(verdict):
    costs = CostParams()
    t0 = time.perf_counter()
    naive = check_naive_greedy(costs, n_batches=1000, batch_size=8)
    myopic = check_myopic_greedy(costs, n_batches=1000, batch_size=8)
    elapsed = time.perf_counter() - t0
    ok = naive.passed and myopic.passed and elapsed < 60
    assert verdict(1, ok, f"naive {naive.n_cases} batches {naive.detail}; myopic "
                          f"{myopic.n_cases} batches {myopic.detail}; {elapsed:.1f}s (< 60s)")


def test_2_bellman_fixed_point(verdict):
    t0 = time.perf_counter()
    results = check_bellman(CostParams(), n_mdps=20, tol=1e-9)
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in results) and elapsed < 10
    assert verdict(2, ok, "; ".join(r.detail for r in results) + f"; {elapsed:.1f}s (< 10s)")


def test_3_estimation_consistency(verdict):
    t0 = time.perf_counter()
    cfg = EnvConfig(arrival_rate=100_000.0, bank_beta2=0.0, mr_nonfraud_slope=0.0,
                    mr_fraud_slope=0.0, seed=0)
    w = World(cfg)
    for t in range(10):
        b = w.gen_period()
        w.step(b, np.random.default_rng([99, t]).integers(0, 3, len(b)).astype(np.int8))
        w.advance_period()
    for _ in range(cfg.maturity_horizon):
        w.advance_period()
    data = LabeledSlice.from_logs(w.logs, as_of=w.period)
    g = estimate_g_mature(data, cfg.score_max, cfg.maturity_horizon).values
    truth = w.true_gtable(0).values
    c = g_counts(data, cfg.score_max)
    n = np.stack([c["n_submitted"], c["n_submitted"], c["n_reviewed"], c["n_reviewed"],
                  c["n_submitted"]])
    populated = n > 0
    se = np.sqrt(truth * (1 - truth) / np.maximum(n, 1))
    within = (np.abs(g - truth) <= 3 * se + 1e-12)[populated]
    elapsed = time.perf_counter() - t0
    ok = len(data) >= 1_000_000 and within.mean() >= 0.99 and elapsed < 120
    assert verdict(3, ok, f"{len(data)} transactions; {within.mean():.4f} of {populated.sum()} "
                          f"populated cells within 3 SE (>= 0.99); {elapsed:.1f}s (< 120s)")


def test_4_degeneracy_equivalences(verdict):
    plan = ExperimentPlan(policies=(
        PolicySpec("naive", "naive"),
        PolicySpec("myopic_mature", "myopic", {"cei": "mature"}),
        PolicySpec("myopic", "myopic"),
        PolicySpec("prospective_zero", "prospective", {"lam": 0.0}),
    ), seeds=(0,), keep_decisions=True)
    rep = run_experiment(plan).replications[0]

    def stream(name):
        return np.concatenate([log.decision for log, _, _ in rep.decisions[name]])

    a, b = stream("naive"), stream("myopic_mature")
    c, d = stream("myopic"), stream("prospective_zero")
    ok = np.array_equal(a, b) and np.array_equal(c, d)
    assert verdict(4, ok, f"naive vs mature-table myopic: {int((a != b).sum())} of {len(a)} "
                          f"decisions differ; myopic vs lambda=0 prospective: "
                          f"{int((c != d).sum())} of {len(c)} differ")


def _law(rho, n_scores=41):
    g1, g2 = 0.8 - 1.0 * rho, 0.01 + 0.5 * rho
    col = np.array([g1, g2, 0.5 * g1, 0.5 * g2, g1 + g2])
    return np.repeat(col[:, None], n_scores, axis=1)


def test_5_exact_recovery(verdict):
    rates = np.random.default_rng(1).uniform(0.0, 0.05, 60)
    cur = GTrajectory(np.arange(60), np.stack([_law(r) for r in rates]))
    lead = 2
    fut = GTrajectory(np.arange(60), np.stack([_law(rates[max(k - lead, 0)]) for k in range(60)]))
    cei = fit_cei(cur, rates)
    fei = fit_fei(fut, rates, lead=lead, horizon=14)
    worst = 0.0
    for x in np.linspace(0.0, 0.05, 11):
        worst = max(worst, np.abs(infer_current(cei, cur, x).values - _law(x)).max(),
                    np.abs(infer_future(fei, fut, x).values - _law(x)).max())
    assert verdict(5, worst <= 1e-6, f"max per-cell error {worst:.2e} (<= 1e-6)")


def test_6_chargeback_estimator_coherence(verdict):
    diffs = []
    for seed in range(200):
        w = World(EnvConfig(seed=seed))
        b = w.gen_period()
        d = production_policy(ExperimentPlan(), seed, 0).predict(b)
        g = w.true_gtable(0)
        dummy = TransactionBatch.from_transactions([b[0]])
        state = ProspectiveState(g, dummy, g.values[:, dummy.score], np.zeros((5, 1)),
                                 CostParams(), 0.0, 0.0)
        for s, a in zip(b.score, d):
            state.update(int(a), g.g2[s], g.g4[s], int(s))
        log = w.step(b, d)
        submitted = int((log.decision != Decision.REJECT).sum())
        realized = int((log.final_approved & log.is_fraud).sum()) / submitted
        diffs.append(realized - state.current_rate())
    diffs = np.array(diffs)
    mean, se = diffs.mean(), diffs.std(ddof=1) / np.sqrt(len(diffs))
    assert verdict(6, abs(mean) <= 3 * se,
                   f"mean(realized - estimate) {mean:.3e}, 3 SE {3 * se:.3e} over 200 replications")


def test_7_directional_end_to_end(verdict, tmp_path):
    t0 = time.perf_counter()
    plan = ExperimentPlan(seeds=tuple(range(30)), n_jobs=os.cpu_count() or 1)
    report = run_experiment(plan)
    elapsed = time.perf_counter() - t0
    comps = {c.policy: c for c in report.comparisons()}
    a = all(comps[p].sign_test_p < 0.05 and comps[p].profit_diff > 0
            for p in ("naive", "myopic", "prospective"))
    b = all(comps[p].review_ratio < 1 for p in ("naive", "myopic", "prospective"))
    fp = {p: report.mean_total(p, "fp_loss") for p in report.policy_names}
    c = fp["myopic"] < fp["naive"] and fp["prospective"] < fp["naive"]
    detail = (f"(a) profit diffs " + ", ".join(f"{p} {comps[p].profit_diff:.0f} "
                                               f"p={comps[p].sign_test_p:.1e}" for p in comps)
              + f"; (b) review ratios " + ", ".join(f"{p} {comps[p].review_ratio:.3f}"
                                                   for p in comps)
              + f"; (c) mean FP naive {fp['naive']:.0f}, myopic {fp['myopic']:.0f}, "
                f"prospective {fp['prospective']:.0f}; {elapsed:.0f}s (< 900s)")
    diagnostics_ok = c
    if not c:
        # the criterion accepts an FP-ordering miss only when diagnostics are emitted
        rows = report.calibration_diagnostics()
        path = tmp_path / "calibration_diagnostics.json"
        path.write_text(json.dumps(rows, indent=1))
        diagnostics_ok = bool(rows)
        detail += f"; (c) not met, diagnostics: {rows}"
    assert verdict(7, a and b and diagnostics_ok and elapsed < 900, detail)


def test_8_determinism(verdict, tmp_path, monkeypatch):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("experiment:\n  seeds: [0, 1]\n  n_periods: 3\n  warmup_periods: 34\n"
                   "  k_folds: 1\n  lambda_grid: [0.0, 0.12]\n"
                   "env:\n  arrival_rate: 300.0\n")
    mismatched = []
    for command in ("simulate", "tune-lambda"):
        dirs = []
        for run in ("a", "b"):
            out = tmp_path / f"{command}-{run}"
            monkeypatch.setenv("FRAUDCTL_OUTPUT_DIR", str(out))
            assert main([command, str(cfg)]) == 0
            if command == "simulate":
                assert main(["report", str(cfg)]) == 0
            dirs.append(out)
        files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*")
                       if p.suffix in (".csv", ".json", ".ndjson"))
        mismatched += [str(f) for f in files
                       if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
        assert files
    assert verdict(8, not mismatched, f"simulate, report and tune-lambda re-runs: "
                                      f"{len(mismatched)} differing CSV/JSON files {mismatched}")
