"""End-to-end evaluation: warmup under a production engine, then paired policy runs.

Each replication builds one warmup history under the static production engine.
Every compared policy then continues from a copy of that world in its own closed
loop: it is refit at the start of each period on the labels visible at that
time, decides the period's transactions, and its decisions feed the bank and
manual-review behaviour it faces later. Transactions and per-transaction random
draws are shared across policies (common random numbers).
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binomtest

from .domain import CostParams, Decision
from .env import EnvConfig, World
from .estimation import LabeledSlice, PeriodReport, realized_metrics
from .inference import EnvRegressor
from .policies import POLICY_KINDS, BaselinePolicy

logger = logging.getLogger(__name__)

MAX_FLIP_FRACTION = 0.03


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def build(self, costs: CostParams, score_max: int):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        params = dict(self.params)
        if self.kind != "baseline":
            params.setdefault("costs", costs)
            params.setdefault("score_max", score_max)
            for key in ("cei", "fei"):
                if isinstance(params.get(key), dict):
                    params[key] = EnvRegressor(**params[key])
        if self.kind == "prospective":
            params.setdefault("lam", costs.future_discount)
        return POLICY_KINDS[self.kind](**params)


@dataclass(frozen=True)
class ExperimentPlan:
    env: EnvConfig = EnvConfig()
    costs: CostParams = CostParams()
    policies: tuple = (
        PolicySpec("baseline", "baseline"),
        PolicySpec("naive", "naive"),
        PolicySpec("myopic", "myopic"),
        PolicySpec("prospective", "prospective"),
    )
    n_periods: int = 14
    warmup_periods: int = 40
    flip_fraction: float = 0.03
    seeds: tuple = (0,)
    k_folds: int = 3
    lambda_grid: tuple = (0.0, 0.06, 0.12, 0.25)
    production_low: int = 450
    production_high: int = 850
    production_jitter: int = 100
    baseline_name: str = "baseline"
    n_jobs: int = 1
    keep_decisions: bool = False

    def required_warmup(self) -> int:
        """First period at which every configured policy can be fit."""
        L, l = self.costs.maturity_horizon, self.costs.partial_lag
        need = L
        for spec in self.policies:
            if spec.kind in ("myopic", "prospective"):
                window = EnvRegressor().window
                for key in ("cei", "fei"):
                    if isinstance(spec.params.get(key), dict):
                        window = max(window, spec.params[key].get("window", window))
                extra = l if spec.kind == "prospective" else 0
                need = max(need, window + 2 * L + extra - 1)
        return need

    def validate(self) -> "ExperimentPlan":
        if not 0 < self.flip_fraction <= MAX_FLIP_FRACTION:
            raise ConfigError(f"flip_fraction must lie in (0, {MAX_FLIP_FRACTION}], "
                              f"got {self.flip_fraction}")
        if self.warmup_periods < self.costs.maturity_horizon:
            raise ConfigError("warmup_periods must be at least the maturity horizon")
        need = self.required_warmup()
        if self.warmup_periods < need:
            raise ConfigError(f"warmup_periods={self.warmup_periods} too short; the configured "
                              f"policies need {need} periods of history")
        if self.env.feedback_lag != self.costs.partial_lag:
            raise ConfigError("env.feedback_lag must equal costs.partial_lag")
        if self.env.maturity_horizon != self.costs.maturity_horizon:
            raise ConfigError("env.maturity_horizon must equal costs.maturity_horizon")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError("policy names must be unique")
        for spec in self.policies:
            if spec.kind not in POLICY_KINDS:
                raise ConfigError(f"unknown policy kind {spec.kind!r}")
        if self.n_periods < 1:
            raise ConfigError("n_periods must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.production_low > self.production_high:
            raise ConfigError("production_low must not exceed production_high")
        return self


def flip_sample(decisions, u_flip, fraction: float):
    """Label-generation decisions: sampled rejections are treated as approvals.

    Returns ``(flipped_mask, label_decisions)``.
    """
    if not 0 <= fraction <= MAX_FLIP_FRACTION:
        raise ConfigError(f"flip fraction {fraction} exceeds {MAX_FLIP_FRACTION}")
    decisions = np.asarray(decisions, dtype=np.int8)
    flipped = (decisions == Decision.REJECT) & (np.asarray(u_flip) < fraction)
    return flipped, np.where(flipped, Decision.APPROVE, decisions).astype(np.int8)


def production_policy(plan: ExperimentPlan, seed: int, t: int) -> BaselinePolicy:
    """Static production engine; thresholds jitter across warmup periods."""
    j = plan.production_jitter
    if j:
        shift = np.random.default_rng([seed, t, 7]).integers(-j, j + 1, size=2)
    else:
        shift = (0, 0)
    low = plan.production_low + int(shift[0])
    high = max(low, plan.production_high + int(shift[1]))
    return BaselinePolicy(low, high).fit()


def warmup_world(plan: ExperimentPlan, seed: int, snapshots=()) -> tuple[World, dict]:
    world = World(replace(plan.env, seed=seed))
    saved = {}
    for t in range(plan.warmup_periods):
        if t in snapshots:
            saved[t] = world.copy()
        batch = world.gen_period()
        world.step(batch, production_policy(plan, seed, t).predict(batch), plan.flip_fraction)
        world.advance_period()
    return world, saved


@dataclass
class AuditRecord:
    policy: str
    period: int
    as_of: int
    trained_through: int | None


def run_closed_loop(world: World, policy, periods, plan: ExperimentPlan, name: str = "",
                    keep_decisions: bool = False):
    """Run ``policy`` on ``world`` (mutated) for ``periods`` consecutive periods."""
    reports, audits, decisions = [], [], []
    for t in periods:
        if world.period != t:
            raise RuntimeError(f"world at period {world.period}, expected {t}")
        history = LabeledSlice.from_logs(world.logs, as_of=t)
        policy.fit(history, t)
        audits.append(AuditRecord(name, t, history.as_of, getattr(policy, "trained_through_", None)))
        batch = world.gen_period()
        d, values, extra = policy.predict_records(batch)
        log = world.step(batch, d, plan.flip_fraction)
        current = LabeledSlice.from_logs(world.logs, as_of=t + 1, periods=[t])
        reports.append(realized_metrics(current, plan.costs, period=t, ground_truth=True))
        if keep_decisions:
            decisions.append((log, values, extra))
        world.advance_period()
    return reports, audits, decisions


@dataclass
class Replication:
    seed: int
    reports: dict          # policy name -> list[PeriodReport]
    audits: list
    decisions: dict = field(default_factory=dict)
    worlds: dict = field(default_factory=dict)


def run_replication(plan: ExperimentPlan, seed: int, keep_worlds: bool = False) -> Replication:
    world, _ = warmup_world(plan, seed)
    periods = range(plan.warmup_periods, plan.warmup_periods + plan.n_periods)
    rep = Replication(seed, {}, [])
    for spec in plan.policies:
        policy = spec.build(plan.costs, plan.env.score_max)
        w = world.copy()
        reports, audits, decisions = run_closed_loop(w, policy, periods, plan, spec.name,
                                                     plan.keep_decisions)
        rep.reports[spec.name] = reports
        rep.audits.extend(audits)
        if plan.keep_decisions:
            rep.decisions[spec.name] = decisions
        if keep_worlds:
            rep.worlds[spec.name] = w
        logger.info("seed %d %s: profit %.2f", seed, spec.name, sum(r.profit for r in reports))
    return rep


@dataclass
class PolicyComparison:
    policy: str
    profit_diff: float
    fn_diff_pct: float
    fp_diff_pct: float
    mr_diff_pct: float
    review_ratio: float
    relative_cb_diff: float
    n_positive: int
    n_seeds: int
    sign_test_p: float

    def as_row(self):
        return dict(self.__dict__)


@dataclass
class ComparisonReport:
    plan: ExperimentPlan
    replications: list

    @property
    def policy_names(self):
        return [p.name for p in self.plan.policies]

    def totals(self, name: str) -> list[PeriodReport]:
        """One aggregate report per seed."""
        return [PeriodReport.combine(r.reports[name]) for r in self.replications]

    def mean_total(self, name: str, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.totals(name)]))

    def comparisons(self) -> list[PolicyComparison]:
        base = self.plan.baseline_name
        if base not in self.policy_names:
            return []
        base_tot = self.totals(base)
        out = []
        for name in self.policy_names:
            if name == base:
                continue
            tot = self.totals(name)
            diffs = np.array([a.profit - b.profit for a, b in zip(tot, base_tot)])
            pos, nonzero = int((diffs > 0).sum()), int((diffs != 0).sum())
            p = binomtest(pos, nonzero, 0.5, alternative="greater").pvalue if nonzero else 1.0
            out.append(PolicyComparison(
                policy=name,
                profit_diff=float(diffs.mean()),
                fn_diff_pct=_pct(tot, base_tot, "fn_loss"),
                fp_diff_pct=_pct(tot, base_tot, "fp_loss"),
                mr_diff_pct=_pct(tot, base_tot, "mr_cost"),
                review_ratio=_ratio(tot, base_tot, "n_review"),
                relative_cb_diff=_ratio(tot, base_tot, "chargeback_rate") - 1.0,
                n_positive=pos,
                n_seeds=len(diffs),
                sign_test_p=float(p),
            ))
        return out

    def calibration_diagnostics(self, reference: str = "naive") -> list[dict]:
        """Per-policy loss and decision-mix summary, paired against ``reference``.

        Emitted when the FP-loss ordering against the reference policy is not
        the expected one, to show which way the world pushed the policies.
        """
        if reference not in self.policy_names:
            return []
        ref = self.totals(reference)
        rows = []
        for name in self.policy_names:
            tot = self.totals(name)
            rows.append({
                "policy": name,
                "mean_fp_loss": _mean(tot, "fp_loss"),
                "mean_fn_loss": _mean(tot, "fn_loss"),
                "mean_mr_cost": _mean(tot, "mr_cost"),
                "mean_profit": _mean(tot, "profit"),
                "mean_rejections": _mean(tot, "n_reject"),
                "mean_reviews": _mean(tot, "n_review"),
                "mean_chargeback_rate": _mean(tot, "chargeback_rate"),
                f"seeds_fp_below_{reference}": int(sum(a.fp_loss < b.fp_loss
                                                       for a, b in zip(tot, ref))),
                "n_seeds": len(tot),
            })
        return rows

    def audit_violations(self) -> list[AuditRecord]:
        L = self.plan.costs.maturity_horizon
        return [a for r in self.replications for a in r.audits
                if a.as_of != a.period
                or (a.trained_through is not None and a.trained_through > a.period - L)]


def _sum(reports, attr):
    return float(sum(getattr(r, attr) for r in reports))


def _mean(reports, attr):
    return float(np.mean([getattr(r, attr) for r in reports]))


def _pct(tot, base, attr):
    b = _sum(base, attr)
    return 100.0 * (_sum(tot, attr) - b) / b if b else float("nan")


def _ratio(tot, base, attr):
    b = float(np.mean([getattr(r, attr) for r in base]))
    return float(np.mean([getattr(r, attr) for r in tot])) / b if b else float("nan")


def _replicate(args):
    plan, seed = args
    return run_replication(plan, seed)


def run_experiment(plan: ExperimentPlan) -> ComparisonReport:
    plan.validate()
    jobs = [(plan, s) for s in plan.seeds]
    if plan.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.n_jobs) as pool:
            reps = list(pool.map(_replicate, jobs))
    else:
        reps = [_replicate(j) for j in jobs]
    return ComparisonReport(plan, reps)


@dataclass
class LambdaTuning:
    chosen: float
    grid: list
    mean_profit: list
    folds: list


def tune_lambda(plan: ExperimentPlan, grid=None, k: int | None = None, seed: int | None = None,
                spec: PolicySpec | None = None) -> LambdaTuning:
    """Pick the future-profit weight by blocked K-fold evaluation over the warmup.

    Eligible warmup periods (those with enough mature history) are split into
    ``k`` contiguous folds. For every fold and grid value the prospective policy
    runs closed-loop through the fold from the world as it stood at the fold's
    start; the value with the best mean held-out profit wins, ties going to the
    smaller value.
    """
    grid = sorted(plan.lambda_grid if grid is None else grid)
    k = plan.k_folds if k is None else k
    seed = plan.seeds[0] if seed is None else seed
    if not grid:
        raise ConfigError("lambda grid is empty")
    spec = spec or next((p for p in plan.policies if p.kind == "prospective"),
                        PolicySpec("prospective", "prospective"))
    start = replace(plan, policies=(spec,)).required_warmup()
    eligible = list(range(start, plan.warmup_periods))
    if k < 1 or k > len(eligible):
        raise ConfigError(f"k={k} folds but only {len(eligible)} warmup periods are eligible "
                          f"(periods {start}..{plan.warmup_periods - 1})")
    folds = [list(f) for f in np.array_split(np.array(eligible), k)]
    _, snaps = warmup_world(plan, seed, snapshots={f[0] for f in folds})
    profits = np.zeros((len(grid), k))
    for i, lam in enumerate(grid):
        for j, fold in enumerate(folds):
            policy = spec.build(plan.costs, plan.env.score_max)
            policy.set_params(lam=lam)
            world = snaps[fold[0]].copy()
            reports, _, _ = run_closed_loop(world, policy, fold, plan)
            profits[i, j] = sum(r.profit for r in reports)
    mean = profits.mean(axis=1)
    best = 0
    for i in range(1, len(grid)):
        if mean[i] > mean[best]:
            best = i
    return LambdaTuning(float(grid[best]), [float(g) for g in grid], mean.tolist(),
                        [[int(p) for p in f] for f in folds])


__all__ = ["AuditRecord", "ComparisonReport", "ConfigError", "ExperimentPlan", "LambdaTuning",
           "PolicyComparison", "PolicySpec", "Replication", "flip_sample", "production_policy",
           "run_closed_loop", "run_experiment", "run_replication", "tune_lambda", "warmup_world"]
