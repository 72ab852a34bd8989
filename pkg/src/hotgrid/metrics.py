"""Evaluation metrics and the metrics report.

Everything here is a pure function of scores and labels. The AUC uses
the rank-statistic (Mann-Whitney) formulation with half credit for
ties, so it matches brute-force pair counting to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import geocode
from .errors import DataError
from .stgraph import UnitSequence, history_mask


class UndefinedMetricError(DataError):
    """The requested metric is undefined for these inputs (e.g. one-class AUC)."""


@dataclass(frozen=True)
class ConfusionMetrics:
    precision: float
    recall: float
    f1: float
    no_predicted_positives: bool  # precision denominator was empty
    no_actual_positives: bool  # recall denominator was empty


def _check_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0/1")
    return scores, labels.astype(np.int64)


def confusion_metrics(scores, labels, threshold: float = 0.5) -> ConfusionMetrics:
    """Precision, recall and F1 at a score threshold (predict at >=)."""
    scores, labels = _check_pair(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    no_pred = (tp + fp) == 0
    no_actual = (tp + fn) == 0
    precision = 0.0 if no_pred else tp / (tp + fp)
    recall = 0.0 if no_actual else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ConfusionMetrics(precision, recall, f1, no_pred, no_actual)


def auc(scores, labels) -> float:
    """Probability a positive outranks a negative, ties worth one half."""
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average rank for the tie group, ranks are 1-based
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_stdev(values: Sequence[float]) -> float:
    """Sample standard deviation across per-category AUCs."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size < 2:
        raise DataError("need at least two categories for a spread")
    return float(values.std(ddof=1))


def persistence_baseline(seq: UnitSequence) -> np.ndarray:
    """Score each sub-area by its last-window intensity, scaled to [0, 1].

    A sequence whose final input window is empty scores all zeros: the
    baseline predicts nothing where nothing was just seen.
    """
    counts = np.zeros(32, dtype=np.float64)
    for code in seq.snapshots[-1].codes:
        counts[geocode.last_digit_index(code)] += 1.0
    peak = counts.max()
    return counts / peak if peak > 0 else counts


def group_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Confusion metrics plus AUC for one group, JSON-friendly."""
    scores, labels = _check_pair(scores, labels)
    cm = confusion_metrics(scores, labels, threshold)
    try:
        area = auc(scores, labels)
        defined = True
    except UndefinedMetricError:
        area, defined = None, False
    return {
        "n_areas": int(labels.size),
        "n_positive": int(labels.sum()),
        "precision": cm.precision,
        "recall": cm.recall,
        "f1": cm.f1,
        "auc": area,
        "auc_defined": defined,
        "no_predicted_positives": cm.no_predicted_positives,
        "no_actual_positives": cm.no_actual_positives,
    }


def unknown_area_report(scores, labels, mask, threshold: float = 0.5) -> dict:
    """Metrics split by sub-area history.

    mask is True where the sub-area held at least one request in the T
    input windows; False marks the unknown group.
    """
    scores, labels = _check_pair(scores, labels)
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.shape != scores.shape:
        raise DataError(f"history mask {mask.shape} does not match scores {scores.shape}")
    report = {
        "overall": group_metrics(scores, labels, threshold),
        "known": group_metrics(scores[mask], labels[mask], threshold) if mask.any() else None,
        "unknown": group_metrics(scores[~mask], labels[~mask], threshold) if (~mask).any() else None,
        "unknown_fraction": float((~mask).mean()),
        "all_known": bool(mask.all()),
    }
    return report


def flatten_scores(
    sequences: Sequence[UnitSequence], per_seq_scores: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Row-concatenate scores, labels and history masks across sequences."""
    if len(sequences) != len(per_seq_scores):
        raise DataError("one score row per sequence required")
    scores = np.concatenate([np.asarray(s, dtype=np.float64) for s in per_seq_scores])
    labels = np.concatenate([s.label for s in sequences])
    masks = np.concatenate([history_mask(s) for s in sequences])
    cats = [s.category for s in sequences for _ in range(32)]
    return scores, labels, masks, cats


def build_report(
    sequences: Sequence[UnitSequence],
    per_seq_scores: Sequence[np.ndarray],
    taus: Mapping[str, float],
    threshold: float = 0.5,
    config_echo: Mapping | None = None,
) -> dict:
    """The full metrics report: overall, per category, known/unknown."""
    scores, labels, masks, cats = flatten_scores(sequences, per_seq_scores)
    per_category = {}
    for cat in sorted(set(cats)):
        sel = np.asarray([c == cat for c in cats])
        entry = group_metrics(scores[sel], labels[sel], threshold)
        entry["tau"] = float(taus[cat]) if cat in taus else None
        per_category[cat] = entry
    defined_aucs = [e["auc"] for e in per_category.values() if e["auc_defined"]]
    spread = auc_stdev(defined_aucs) if len(defined_aucs) >= 2 else None
    report = {
        "config": dict(config_echo) if config_echo else {},
        "threshold": threshold,
        "hot_rate": float(labels.mean()),
        "overall": group_metrics(scores, labels, threshold),
        "per_category": per_category,
        "auc_stdev": spread,
        "groups": unknown_area_report(scores, labels, masks, threshold),
    }
    return report
