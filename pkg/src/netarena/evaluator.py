"""Grades submissions against ground truth, computes efficiency metrics
and SLO violations, and aggregates runs into summary tables.

Localization and RCA answers are compared as boolean masks over a fixed
universe (the entity universe, or the root-cause catalog), from which a
confusion matrix and accuracy figures are derived. Headline accuracy in
aggregates is the exact-match fraction; per-entity accuracy is reported
alongside because partial credit is a defensible alternative reading.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

from .incident import GroundTruth, ROOT_CAUSES
from .simcore import FlowWindow, nearest_rank_p95


@dataclass
class Submission:
    detected: bool = False
    localization: list = field(default_factory=list)  # (node, component) pairs
    root_causes: list = field(default_factory=list)
    report_text: str = ""
    agent_metadata: dict = field(default_factory=dict)

    @classmethod
    def from_payload(cls, payload: dict) -> "Submission":
        return cls(
            detected=bool(payload.get("detected", False)),
            localization=[tuple(e) for e in payload.get("localization", [])],
            root_causes=list(payload.get("root_causes", [])),
            report_text=str(payload.get("report_text", "")),
            agent_metadata=dict(payload.get("agent_metadata", {})),
        )

    def to_dict(self) -> dict:
        return {
            "detected": self.detected,
            "localization": sorted(list(e) for e in self.localization),
            "root_causes": sorted(self.root_causes),
            "report_text": self.report_text,
            "agent_metadata": dict(sorted(self.agent_metadata.items())),
        }


@dataclass
class GoalResult:
    goal: str
    exact_match: bool
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def per_entity_accuracy(self) -> float:
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "exact_match": self.exact_match,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
            "per_entity_accuracy": round(self.per_entity_accuracy, 6),
        }


def _mask_confusion(goal: str, pred: list, truth: list) -> GoalResult:
    tp = fp = fn = tn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return GoalResult(goal=goal, exact_match=(fp == 0 and fn == 0), tp=tp, fp=fp, fn=fn, tn=tn)


def grade_detection(sub: Submission, truth: GroundTruth) -> GoalResult:
    """Binary decision: did the agent's verdict match the expected one?"""
    return _mask_confusion("detect", [sub.detected], [truth.detected_expected])


def grade_localization(sub: Submission, truth: GroundTruth, universe: list) -> GoalResult:
    """Boolean masks over the entity universe, compared positionwise."""
    uni = [tuple(e) for e in universe]
    pred_set = set(map(tuple, sub.localization))
    unknown = pred_set - set(uni)
    if unknown:
        raise ValueError(f"localization entries outside the entity universe: {sorted(unknown)}")
    truth_mask = truth.entity_mask(uni)
    pred_mask = [e in pred_set for e in uni]
    return _mask_confusion("localize", pred_mask, truth_mask)


def grade_rca(sub: Submission, truth: GroundTruth) -> GoalResult:
    """Boolean masks over the closed root-cause catalog."""
    unknown = set(sub.root_causes) - set(ROOT_CAUSES)
    if unknown:
        raise ValueError(f"unknown root causes: {sorted(unknown)}")
    pred = [c in set(sub.root_causes) for c in ROOT_CAUSES]
    gt = [c in set(truth.cause_set) for c in ROOT_CAUSES]
    return _mask_confusion("rca", pred, gt)


# --- SLOs -----------------------------------------------------------------------

@dataclass
class SloConfig:
    max_p95_latency_ms: float = None  # None disables the check
    max_loss_fraction: float = None

    def to_dict(self) -> dict:
        return {"max_p95_latency_ms": self.max_p95_latency_ms, "max_loss_fraction": self.max_loss_fraction}


@dataclass
class SloViolation:
    flow: str
    window_start_ms: int
    metric: str
    observed: float
    limit: float

    def to_dict(self) -> dict:
        return {
            "flow": self.flow,
            "window_start_ms": self.window_start_ms,
            "metric": self.metric,
            "observed": self.observed,
            "limit": self.limit,
        }


def window_series(samples: dict, window_ms: int = 1000) -> list:
    """Aggregate raw per-tick samples into FlowWindow records.

    samples: flow -> list of (t_ms, latency_ms | None, offered, delivered,
    dropped). Exposed mainly for tests; live runs aggregate incrementally.
    """
    out = []
    for flow in sorted(samples):
        buckets = {}
        for t, lat, off, deliv, drop in samples[flow]:
            b = buckets.setdefault((t // window_ms) * window_ms, [[], 0, 0, 0])
            if lat is not None:
                b[0].append(lat)
            b[1] += off
            b[2] += deliv
            b[3] += drop
        for t0 in sorted(buckets):
            lats, off, deliv, drop = buckets[t0]
            out.append(FlowWindow(flow=flow, t0=t0, p95_ms=round(nearest_rank_p95(lats), 3),
                                  offered=off, delivered=deliv, dropped=drop, samples=len(lats)))
    out.sort(key=lambda w: (w.t0, w.flow))
    return out


def check_slos(windows: list, slo: SloConfig, since_ms: int = 0, monitored_prefix: str = "bg:") -> list:
    """One violation per monitored-flow window that exceeds a limit.

    p95 latency is the nearest-rank quantile over each 1 s window; loss is
    dropped/offered per window. Only windows at or after since_ms (the
    injection instant) count.
    """
    violations = []
    for w in windows:
        if w.t0 < since_ms or not w.flow.startswith(monitored_prefix):
            continue
        if slo.max_p95_latency_ms is not None and w.samples and w.p95_ms > slo.max_p95_latency_ms:
            violations.append(SloViolation(w.flow, w.t0, "p95_latency_ms", w.p95_ms, slo.max_p95_latency_ms))
        if slo.max_loss_fraction is not None and w.offered > 0:
            loss = w.dropped / w.offered
            if loss > slo.max_loss_fraction:
                violations.append(SloViolation(w.flow, w.t0, "loss_fraction", round(loss, 6), slo.max_loss_fraction))
    return violations


# --- efficiency and reports -------------------------------------------------------

@dataclass
class EfficiencyMetrics:
    time_to_submit_virtual_ms: int = 0
    wall_time_s: float = 0.0
    tool_calls: int = 0
    tool_errors: int = 0
    denied_calls: int = 0
    agent_metadata: dict = field(default_factory=dict)

    @property
    def tool_error_rate(self) -> float:
        return self.tool_errors / self.tool_calls if self.tool_calls else 0.0

    def to_dict(self) -> dict:
        return {
            "time_to_submit_virtual_ms": self.time_to_submit_virtual_ms,
            "wall_time_s": self.wall_time_s,
            "tool_calls": self.tool_calls,
            "tool_errors": self.tool_errors,
            "tool_error_rate": round(self.tool_error_rate, 6),
            "denied_calls": self.denied_calls,
            "agent_metadata": dict(sorted(self.agent_metadata.items())),
        }


@dataclass
class EvaluationReport:
    incident: str
    spec_hash: str
    goals: dict  # goal -> GoalResult
    efficiency: EfficiencyMetrics
    slo_violations: list
    tool_histogram: dict
    submission: Submission
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "incident": self.incident,
            "spec_hash": self.spec_hash,
            "aborted": self.aborted,
            "goals": {g: r.to_dict() for g, r in sorted(self.goals.items())},
            "efficiency": self.efficiency.to_dict(),
            "slo_violations": [v.to_dict() for v in self.slo_violations],
            "tool_histogram": dict(sorted(self.tool_histogram.items())),
            "submission": self.submission.to_dict(),
        }

    def to_json(self) -> str:
        body = self.to_dict()
        return json.dumps(body, sort_keys=True, indent=2) + "\n"


def spec_hash(spec_doc: dict) -> str:
    return hashlib.sha256(json.dumps(spec_doc, sort_keys=True).encode()).hexdigest()[:16]


def evaluate(spec, truth: GroundTruth, universe: list, sub: Submission,
             efficiency: EfficiencyMetrics, windows: list, slo: SloConfig,
             tool_histogram: dict, injection_ms: int, aborted: bool = False) -> EvaluationReport:
    """Grade every goal the incident asks for and assemble the report."""
    from .incident import spec_to_dict  # local import to avoid a cycle at module load

    goals = {}
    for goal in spec.goals:
        if goal == "detect":
            goals[goal] = grade_detection(sub, truth)
        elif goal == "localize":
            goals[goal] = grade_localization(sub, truth, universe)
        elif goal == "rca":
            goals[goal] = grade_rca(sub, truth)
    return EvaluationReport(
        incident=spec.name,
        spec_hash=spec_hash(spec_to_dict(spec)),
        goals=goals,
        efficiency=efficiency,
        slo_violations=check_slos(windows, slo, since_ms=injection_ms),
        tool_histogram=tool_histogram,
        submission=sub,
        aborted=aborted,
    )


# --- aggregation --------------------------------------------------------------------

SUMMARY_COLUMNS = [
    "Model",
    "Runs",
    "Time (s)",
    "# Steps",
    "# Tools",
    "# In tokens",
    "# Out tokens",
    "# Rea. Tokens",
    "Det. Acc.",
    "Loc. Acc.",
    "RCA Acc.",
    "Loc. Entity Acc.",
    "RCA Entity Acc.",
]


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def aggregate(reports: list) -> list:
    """Per-model means over a run set, one summary row per model."""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    by_model = {}
    for rep in reports:
        model = rep.efficiency.agent_metadata.get("model", "all")
        by_model.setdefault(model, []).append(rep)
    rows = []
    for model in sorted(by_model):
        group = by_model[model]
        def goal_frac(goal):
            graded = [r.goals[goal].exact_match for r in group if goal in r.goals]
            return sum(graded) / len(graded) if graded else None
        def goal_entity(goal):
            graded = [r.goals[goal].per_entity_accuracy for r in group if goal in r.goals]
            return _mean(graded)
        def meta_mean(key):
            return _mean([r.efficiency.agent_metadata.get(key) for r in group])
        rows.append({
            "Model": model,
            "Runs": len(group),
            "Time (s)": _mean([r.efficiency.wall_time_s for r in group]),
            "# Steps": meta_mean("steps"),
            "# Tools": _mean([r.efficiency.tool_calls for r in group]),
            "# In tokens": meta_mean("input_tokens"),
            "# Out tokens": meta_mean("output_tokens"),
            "# Rea. Tokens": meta_mean("reasoning_tokens"),
            "Det. Acc.": goal_frac("detect"),
            "Loc. Acc.": goal_frac("localize"),
            "RCA Acc.": goal_frac("rca"),
            "Loc. Entity Acc.": goal_entity("localize"),
            "RCA Entity Acc.": goal_entity("rca"),
        })
    return rows


def summary_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = {}
        for col in SUMMARY_COLUMNS:
            v = row.get(col)
            if isinstance(v, float):
                v = round(v, 4)
            out[col] = "" if v is None else v
        writer.writerow(out)
    return buf.getvalue()
