"""Deterministic report, plot-data, transaction-log and manifest writers.

CSV floats use ``repr`` so values round-trip exactly; JSON is written with
sorted keys. Nothing time-dependent is written, so re-running a configuration
reproduces every file byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .domain import Decision
from .estimation import LabeledSlice, PeriodReport, realized_metrics

# Field order of transactions.ndjson; one record per transaction per policy.
TRANSACTION_FIELDS = (
    "seed", "policy", "period", "transaction_id", "score", "margin", "cost", "decision",
    "is_fraud", "bank_authorized", "mr_approved", "final_approved", "chargeback_lag", "flipped",
)
DECISION_NAMES = {int(d): d.name.lower() for d in Decision}
DECISION_CODES = {v: k for k, v in DECISION_NAMES.items()}

PERIOD_REPORT_FILE = "period_reports.csv"
COMPARISON_FILE = "comparison.csv"
SUMMARY_FILE = "summary.json"
DECISION_COUNTS_FILE = "plot_decision_counts.csv"
LOSS_DELTAS_FILE = "plot_loss_deltas.csv"
DIAGNOSTICS_FILE = "calibration_diagnostics.csv"
TRANSACTIONS_FILE = "transactions.ndjson"
MODEL_STATE_FILE = "model_state.json"
MANIFEST_FILE = "manifest.json"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(row[h]) for h in header])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


# -- period reports -------------------------------------------------------------

def period_rows(per_seed: dict) -> list[dict]:
    """``per_seed[seed][policy] -> [PeriodReport]`` flattened in seed/policy/period order."""
    rows = []
    for seed in sorted(per_seed):
        for policy, reports in per_seed[seed].items():
            for r in reports:
                rows.append({"seed": seed, "policy": policy, **r.as_row()})
    return rows


PERIOD_HEADER = ("seed", "policy", *PeriodReport.field_names())


def decision_count_rows(per_seed: dict) -> list[dict]:
    """Mean decision counts per policy and period across seeds."""
    acc = {}
    for seed in sorted(per_seed):
        for policy, reports in per_seed[seed].items():
            for r in reports:
                acc.setdefault((policy, r.period), []).append(r)
    rows = []
    for (policy, period), rs in acc.items():
        rows.append({"policy": policy, "period": period,
                     "approve": float(np.mean([r.n_approve for r in rs])),
                     "review": float(np.mean([r.n_review for r in rs])),
                     "reject": float(np.mean([r.n_reject for r in rs]))})
    return rows


def loss_delta_rows(per_seed: dict, baseline: str) -> list[dict]:
    """Per-period FN/FP/MR percentage differences against ``baseline``, pooled over seeds."""
    pooled = {}
    for seed in sorted(per_seed):
        for policy, reports in per_seed[seed].items():
            for r in reports:
                pooled.setdefault(policy, {}).setdefault(r.period, []).append(r)
    if baseline not in pooled:
        return []
    rows = []
    for policy, by_period in pooled.items():
        if policy == baseline:
            continue
        for period, rs in by_period.items():
            base = PeriodReport.combine(pooled[baseline][period])
            tot = PeriodReport.combine(rs)
            row = {"policy": policy, "period": period}
            for attr, key in (("fn_loss", "fn_diff_pct"), ("fp_loss", "fp_diff_pct"),
                              ("mr_cost", "mr_diff_pct")):
                b = getattr(base, attr)
                row[key] = 100.0 * (getattr(tot, attr) - b) / b if b else float("nan")
            rows.append(row)
    return rows


COMPARISON_HEADER = ("policy", "profit_diff", "fn_diff_pct", "fp_diff_pct", "mr_diff_pct",
                     "review_ratio", "relative_cb_diff", "n_positive", "n_seeds", "sign_test_p")
DIAGNOSTICS_HEADER_PREFIX = ("policy", "mean_profit", "mean_fn_loss", "mean_fp_loss",
                             "mean_mr_cost", "mean_rejections", "mean_reviews",
                             "mean_chargeback_rate")


def diagnostics_header(rows) -> tuple:
    extra = sorted(k for k in rows[0] if k not in DIAGNOSTICS_HEADER_PREFIX) if rows else []
    return (*DIAGNOSTICS_HEADER_PREFIX, *extra)


# -- transaction log ------------------------------------------------------------

def _opt_bool(v):
    return None if v < 0 else bool(v)


def transaction_records(seed, policy, log):
    """NDJSON records for one period log, in arrival order."""
    b = log.batch
    for k in range(len(log)):
        lag = int(log.cb_lag[k])
        yield {
            "seed": int(seed), "policy": policy, "period": int(b.period[k]),
            "transaction_id": int(b.id[k]), "score": int(b.score[k]),
            "margin": float(b.margin[k]), "cost": float(b.cost[k]),
            "decision": DECISION_NAMES[int(log.decision[k])],
            "is_fraud": bool(log.is_fraud[k]),
            "bank_authorized": _opt_bool(int(log.bank_auth[k])),
            "mr_approved": _opt_bool(int(log.mr_approved[k])),
            "final_approved": bool(log.final_approved[k]),
            "chargeback_lag": None if lag < 0 else lag,
            "flipped": bool(log.flipped[k]),
        }


def write_transaction_log(path: Path, entries) -> Path:
    """``entries``: iterable of ``(seed, policy, PeriodLog)``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for seed, policy, log in entries:
            for rec in transaction_records(seed, policy, log):
                fh.write(json.dumps({k: rec[k] for k in TRANSACTION_FIELDS}) + "\n")
    return path


def _slice_from_records(recs, as_of) -> LabeledSlice:
    def col(name, dtype):
        return np.array([r[name] for r in recs], dtype=dtype)

    def opt(name):
        return np.array([-1 if r[name] is None else int(r[name]) for r in recs], dtype=np.int8)

    decision = np.array([DECISION_CODES[r["decision"]] for r in recs], dtype=np.int8)
    lag = np.array([-1 if r["chargeback_lag"] is None else r["chargeback_lag"] for r in recs],
                   dtype=np.int16)
    auth, mr, final = opt("bank_authorized"), opt("mr_approved"), col("final_approved", bool)
    return LabeledSlice(
        as_of=as_of, period=col("period", np.int64), score=col("score", np.int64),
        margin=col("margin", float), cost=col("cost", float), decision=decision,
        is_fraud=col("is_fraud", bool), bank_auth=auth, mr_approved=mr, final_approved=final,
        cb_lag=lag, flipped=col("flipped", bool), label_decision=decision, label_auth=auth,
        label_mr=mr, label_final=final, label_cb_lag=lag)


def reports_from_log(path: Path, costs) -> dict:
    """Rebuild ``per_seed[seed][policy] -> [PeriodReport]`` from a transaction log."""
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: malformed record: {exc.msg}") from None
            missing = [f for f in TRANSACTION_FIELDS if f not in rec]
            if missing:
                raise ValueError(f"{path}:{n}: record missing fields {missing}")
            groups.setdefault(rec["seed"], {}).setdefault(rec["policy"], {}) \
                .setdefault(rec["period"], []).append(rec)
    out = {}
    for seed, by_policy in groups.items():
        out[seed] = {}
        for policy, by_period in by_policy.items():
            out[seed][policy] = [
                realized_metrics(_slice_from_records(recs, period + 1), costs, period=period,
                                 ground_truth=True)
                for period, recs in sorted(by_period.items())]
    return out


# -- manifest -------------------------------------------------------------------

def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config_sha256: str, seeds, version: str,
                   files) -> Path:
    manifest = {
        "artifact": "fraudctl",
        "version": version,
        "command": command,
        "config_sha256": config_sha256,
        "seeds": [int(s) for s in seeds],
        "outputs": {Path(f).name: file_sha256(Path(f)) for f in sorted(files)},
    }
    return write_text(out_dir / MANIFEST_FILE, json_text(manifest))
