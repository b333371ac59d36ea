"""Evaluation metrics: Top-K accuracy, the accuracy-complexity score, and
average power loss against the exhaustive-search oracle."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    frame_id: int
    true_beam: int
    ranked_beams: np.ndarray     # beam ids by descending predicted probability
    true_beam_power: float       # average rate of the oracle beam
    predicted_beam_power: float  # average rate of the top-ranked beam
    noise_floor: float           # this frame's minimum beam power

    def __post_init__(self):
        self.ranked_beams.flags.writeable = False
        if self.true_beam_power < self.noise_floor or self.predicted_beam_power < self.noise_floor:
            raise MetricsError("beam powers below the frame's noise floor")


def topk_accuracy(records, k: int) -> float:
    """Percentage of records whose true beam appears in the first k ranked."""
    if k < 1:
        raise MetricsError(f"k must be >= 1, got {k}")
    records = list(records)
    if not records:
        raise MetricsError("no records")
    hits = sum(r.true_beam in r.ranked_beams[:k] for r in records)
    return 100.0 * hits / len(records)


@dataclass(frozen=True)
class AceInput:
    topk_accuracies: tuple[float, ...]   # percentages
    parameter_count: float               # real counts are ints; the formula is continuous

    def __post_init__(self):
        if any(not 0.0 <= a <= 100.0 for a in self.topk_accuracies):
            raise MetricsError("accuracies must be percentages in [0, 100]")
        if self.parameter_count < 1:
            raise MetricsError("parameter count must be >= 1")


def ace_score(inp: AceInput) -> float:
    """Mean Top-K accuracy divided by ln(1 + parameter count)."""
    delta = sum(inp.topk_accuracies) / len(inp.topk_accuracies)
    return delta / math.log(1.0 + inp.parameter_count)


@dataclass(frozen=True)
class PowerLossResult:
    db: float
    excluded_records: int
    noise_floor: float          # the shared floor: mean of per-frame minima


def power_loss_db(records) -> PowerLossResult:
    """10 log10 of the mean linear ratio (P_true - Px) / (P_predicted - Px).

    Px is the mean over records of each frame's minimum beam power.  Records
    whose predicted-beam power does not exceed Px are excluded and counted.
    """
    records = list(records)
    if not records:
        raise MetricsError("no records")
    px = sum(r.noise_floor for r in records) / len(records)
    ratios = []
    excluded = 0
    for r in records:
        denom = r.predicted_beam_power - px
        if denom <= 0.0:
            excluded += 1
            continue
        ratios.append((r.true_beam_power - px) / denom)
    if not ratios:
        raise MetricsError("all records degenerate in power_loss_db")
    mean_ratio = sum(ratios) / len(ratios)
    return PowerLossResult(db=10.0 * math.log10(mean_ratio),
                           excluded_records=excluded, noise_floor=px)


DEFAULT_KS = (1, 2, 3, 5)


def method_report(records, parameter_count: int, ks=DEFAULT_KS) -> dict:
    """Per-method metric block used in scenario reports."""
    topk = {str(k): topk_accuracy(records, k) for k in ks}
    loss = power_loss_db(records)
    ace = ace_score(AceInput(topk_accuracies=tuple(topk[str(k)] for k in ks),
                             parameter_count=parameter_count))
    return {
        "topk": topk,
        "ace": ace,
        "parameter_count": parameter_count,
        "power_loss_db": loss.db,
        "excluded_records": loss.excluded_records,
    }


def write_report_json(report: dict, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def report_csv_rows(report: dict) -> list[tuple[str, str, str, float]]:
    """(scenario, method, metric, value) rows from one scenario report."""
    rows = []
    scenario = report["scenario"]
    for method in sorted(report["methods"]):
        block = report["methods"][method]
        for k, acc in sorted(block["topk"].items(), key=lambda kv: int(kv[0])):
            rows.append((scenario, method, f"top{k}", acc))
        rows.append((scenario, method, "ace", block["ace"]))
        rows.append((scenario, method, "power_loss_db", block["power_loss_db"]))
        rows.append((scenario, method, "excluded_records", float(block["excluded_records"])))
    return rows
