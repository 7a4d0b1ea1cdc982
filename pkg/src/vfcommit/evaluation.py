"""Splitting, precision/recall/F1, and unique-true-positive ablation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ingest import LabeledDataset


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    matrix: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": asdict(self.matrix),
        }


@dataclass
class AblationReport:
    tp_sets: dict[str, frozenset]
    uniques: dict[str, int] = field(default_factory=dict)
    total_discovered: int = 0

    def to_dict(self) -> dict:
        return {
            "uniques": dict(self.uniques),
            "total_discovered": self.total_discovered,
            "tp_counts": {k: len(v) for k, v in self.tp_sets.items()},
        }


def split_dataset(data: LabeledDataset, train_fraction: float = 0.8, seed: int = 0):
    """Stratified, seeded split into (train, test) datasets.

    Each class contributes ``round(train_fraction * n_class)`` records to the
    training side, clamped so both sides keep at least one of every class.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}")
    labels = np.array(data.labels, dtype=bool)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    for cls in (True, False):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise ValueError(f"class {cls} has {len(members)} record(s); need at least 2 to split")
        members = rng.permutation(members)
        k = min(max(int(round(train_fraction * len(members))), 1), len(members) - 1)
        train_idx.extend(members[:k].tolist())
    in_train = np.zeros(len(labels), dtype=bool)
    in_train[train_idx] = True
    train = [r for r, t in zip(data.records, in_train) if t]
    test = [r for r, t in zip(data.records, in_train) if not t]
    return LabeledDataset(train), LabeledDataset(test)


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_matrix(m: ConfusionMatrix) -> MetricsReport:
    p = _safe_div(m.tp, m.tp + m.fp)
    r = _safe_div(m.tp, m.tp + m.fn)
    f1 = _safe_div(2 * p * r, p + r)
    return MetricsReport(p, r, f1, m)


def compute_metrics(
    predictions: Iterable[tuple[str, bool]], labels: Iterable[tuple[str, bool]]
) -> MetricsReport:
    pred = dict(predictions)
    gold = dict(labels)
    if pred.keys() != gold.keys():
        missing = sorted(gold.keys() - pred.keys())[:5]
        extra = sorted(pred.keys() - gold.keys())[:5]
        raise ValueError(f"prediction/label id sets differ (missing {missing}, unexpected {extra})")
    tp = fp = fn = tn = 0
    for k, g in gold.items():
        p = bool(pred[k])
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return metrics_from_matrix(ConfusionMatrix(tp, fp, fn, tn))


def ablation_unique_tp(tp_sets: Mapping[str, Iterable]) -> AblationReport:
    sets = {name: frozenset(ids) for name, ids in tp_sets.items()}
    uniques = {}
    for name, s in sets.items():
        others = frozenset().union(*(o for n, o in sets.items() if n != name))
        uniques[name] = len(s - others)
    total = len(frozenset().union(*sets.values())) if sets else 0
    return AblationReport(sets, uniques, total)


def evaluate_detector(detector, test: LabeledDataset) -> dict:
    """Per-classifier and ensemble metrics plus the unique-TP ablation on ``test``."""
    records = test.records
    gold = [(r.id, bool(r.label)) for r in records]
    base = detector.base_probabilities(records)
    final = detector.predict_proba(records)[:, 1] if records else np.zeros(0)
    reports = {}
    tp_sets = {}
    for j, name in enumerate(("message", "issue", "patch")):
        flags = base[:, j] > 0.5
        reports[name] = compute_metrics([(r.id, bool(f)) for r, f in zip(records, flags)], gold)
        tp_sets[name] = {r.id for r, f in zip(records, flags) if f and r.label}
    flags = final > detector.threshold
    reports["ensemble"] = compute_metrics([(r.id, bool(f)) for r, f in zip(records, flags)], gold)
    ablation = ablation_unique_tp(tp_sets)
    return {
        "metrics": {k: v.to_dict() for k, v in reports.items()},
        "ablation": ablation.to_dict(),
        "test_size": len(records),
    }


def format_f1_table(rows: Mapping[str, Mapping[str, float]], title: Optional[str] = None) -> str:
    """Render F1 scores as a Model | Message | Issue | Patch | Ensemble table."""
    cols = ("message", "issue", "patch", "ensemble")
    lines = []
    if title:
        lines.append(title)
    lines.append("| Model | Message | Issue | Patch | Ensemble |")
    lines.append("|---|---|---|---|---|")
    for model, scores in rows.items():
        cells = " | ".join(f"{scores[c]:.2f}" if c in scores else "-" for c in cols)
        lines.append(f"| {model} | {cells} |")
    return "\n".join(lines)


def f1_row(report: dict) -> dict[str, float]:
    return {k: v["f1"] for k, v in report["metrics"].items()}
