"""Detector calibration: evaluation-pair construction, accuracy-maximizing
threshold selection over the observed scores, and ROC reporting."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class ScoredPair:
    score: float
    label: bool

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class LabeledPair:
    item: str
    caption: str
    label: bool


@dataclass(frozen=True)
class CalibrationReport:
    threshold: float
    accuracy: float
    roc: tuple[tuple[float, float], ...]
    pair_count: int
    auc: float

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "roc": [[fpr, tpr] for fpr, tpr in self.roc],
            "pair_count": self.pair_count,
            "auc": self.auc,
        }


def build_pairs(positives: Sequence[tuple[str, str]], seed: int) -> list[LabeledPair]:
    """Each positive kept as-is, plus one mismatched negative per positive.

    The negative caption is drawn uniformly from a different entry, so the
    output is balanced at twice the input size and reproducible per seed.
    """
    if len(positives) < 2:
        raise CalibrationError("need at least 2 positives to build mismatched negatives")
    rng = random.Random(seed)
    pairs: list[LabeledPair] = []
    n = len(positives)
    for i, (item, caption) in enumerate(positives):
        pairs.append(LabeledPair(item, caption, True))
        j = rng.randrange(n - 1)
        if j >= i:
            j += 1
        pairs.append(LabeledPair(item, positives[j][1], False))
    return pairs


def _split_scores(pairs: Sequence[ScoredPair]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([p.score for p in pairs if p.label], dtype=np.float64)
    neg = np.array([p.score for p in pairs if not p.label], dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise CalibrationError("both a positive and a negative example are required")
    return pos, neg


def _sweep(pairs: Sequence[ScoredPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate thresholds (ascending) with true/false positive counts for
    the prediction rule ``score >= threshold``."""
    pos, neg = _split_scores(pairs)
    candidates = np.unique(np.concatenate([pos, neg]))
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tp = pos.size - np.searchsorted(pos_sorted, candidates, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, candidates, side="left")
    return candidates, tp.astype(np.float64), fp.astype(np.float64)


def select_threshold(pairs: Sequence[ScoredPair]) -> CalibrationReport:
    """Smallest observed score maximizing accuracy of ``score >= threshold``."""
    pos, neg = _split_scores(pairs)
    candidates, tp, fp = _sweep(pairs)
    total = pos.size + neg.size
    accuracy = (tp + (neg.size - fp)) / total
    best = int(np.argmax(accuracy))  # first max = smallest candidate
    roc = roc_points(pairs)
    return CalibrationReport(
        threshold=float(candidates[best]),
        accuracy=float(accuracy[best]),
        roc=roc,
        pair_count=total,
        auc=auc_trapezoid(roc),
    )


def roc_points(pairs: Sequence[ScoredPair]) -> tuple[tuple[float, float], ...]:
    """(fpr, tpr) per candidate threshold plus (0,0)/(1,1) anchors, sorted."""
    pos, neg = _split_scores(pairs)
    candidates, tp, fp = _sweep(pairs)
    points = {(0.0, 0.0), (1.0, 1.0)}
    for i in range(candidates.size):
        points.add((float(fp[i] / neg.size), float(tp[i] / pos.size)))
    return tuple(sorted(points))


def auc_trapezoid(roc: Sequence[tuple[float, float]]) -> float:
    fpr = np.array([p[0] for p in roc])
    tpr = np.array([p[1] for p in roc])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def load_pairs(path: str | Path) -> list[ScoredPair]:
    """Read a ``score,label`` CSV (header required, label in {0,1})."""
    path = Path(path)
    pairs: list[ScoredPair] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != ["score", "label"]:
            raise CalibrationError(
                f"{path}: expected header 'score,label', got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                pairs.append(ScoredPair(float(row["score"]), bool(int(row["label"]))))
            except (TypeError, ValueError) as exc:
                raise CalibrationError(f"{path}: row {lineno}: {exc}") from exc
    if not pairs:
        raise CalibrationError(f"{path}: no pairs")
    return pairs


def save_pairs(pairs: Sequence[ScoredPair], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["score", "label"])
        for pair in pairs:
            writer.writerow([repr(pair.score), int(pair.label)])


def load_positives(path: str | Path) -> list[tuple[str, str]]:
    """Read an ``item,caption`` CSV of known-good pairs."""
    path = Path(path)
    out: list[tuple[str, str]] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != ["item", "caption"]:
            raise CalibrationError(
                f"{path}: expected header 'item,caption', got {reader.fieldnames}"
            )
        for row in reader:
            out.append((row["item"], row["caption"]))
    return out


def save_labeled_pairs(pairs: Sequence[LabeledPair], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["item", "caption", "label"])
        for pair in pairs:
            writer.writerow([pair.item, pair.caption, int(pair.label)])


def save_report(report: CalibrationReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
