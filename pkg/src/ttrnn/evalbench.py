"""Verification metrics, compression reporting, and step timing."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass

import numpy as np

from .errors import EmptyScores, LengthMismatch, ZeroCount, ZeroReps


@dataclass
class ScoreSet:
    """Similarity scores for same-identity and different-identity trials."""

    positive_scores: np.ndarray
    negative_scores: np.ndarray

    def __post_init__(self):
        self.positive_scores = np.asarray(self.positive_scores, dtype=np.float64)
        self.negative_scores = np.asarray(self.negative_scores, dtype=np.float64)


def eer(scores: ScoreSet) -> float:
    """Equal error rate of a threshold sweep over the scores.

    At threshold t, FNR is the fraction of positives below t and FPR
    the fraction of negatives at or above t.  FNR - FPR is
    non-decreasing in t; the EER is taken at its zero crossing, with
    linear interpolation between the bracketing candidate thresholds.
    """
    pos, neg = scores.positive_scores, scores.negative_scores
    if pos.size == 0 or neg.size == 0:
        raise EmptyScores("need at least one positive and one negative score")
    thresholds = np.unique(np.concatenate([pos, neg]))
    fnr = np.searchsorted(np.sort(pos), thresholds, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(np.sort(neg), thresholds, side="left") / neg.size
    diff = fnr - fpr
    if diff[0] >= 0.0:
        return float((fnr[0] + fpr[0]) / 2.0) if diff[0] > 0 else float(fnr[0])
    if diff[-1] < 0.0:
        # even above the largest score FPR stays positive only at t <= max;
        # one virtual threshold above everything gives FNR=1, FPR=0
        lo = len(diff) - 1
        f0, f1 = diff[lo], 1.0
        frac = -f0 / (f1 - f0)
        return float(fnr[lo] + frac * (1.0 - fnr[lo]))
    hi = int(np.searchsorted(diff >= 0.0, True))
    if diff[hi] == 0.0:
        return float(fnr[hi])
    lo = hi - 1
    frac = -diff[lo] / (diff[hi] - diff[lo])
    fnr_star = fnr[lo] + frac * (fnr[hi] - fnr[lo])
    return float(fnr_star)


def eer_bruteforce(scores: ScoreSet) -> float:
    """Independent slow-path oracle for :func:`eer`.

    Same crossing definition (FNR = positives below t, FPR = negatives
    at or above t, linear interpolation at the sign change of FNR-FPR),
    computed with explicit per-threshold counting loops.
    """
    pos = list(scores.positive_scores)
    neg = list(scores.negative_scores)
    if not pos or not neg:
        raise EmptyScores("need at least one positive and one negative score")
    thresholds = sorted(set(pos) | set(neg))
    rates = []
    for t in thresholds:
        fnr = sum(1 for p in pos if p < t) / len(pos)
        fpr = sum(1 for q in neg if q >= t) / len(neg)
        rates.append((fnr, fpr))
    diffs = [fnr - fpr for fnr, fpr in rates]
    if diffs[0] > 0.0:
        return (rates[0][0] + rates[0][1]) / 2.0
    if diffs[0] == 0.0:
        return rates[0][0]
    for k in range(1, len(diffs)):
        if diffs[k] >= 0.0:
            if diffs[k] == 0.0:
                return rates[k][0]
            frac = -diffs[k - 1] / (diffs[k] - diffs[k - 1])
            return rates[k - 1][0] + frac * (rates[k][0] - rates[k - 1][0])
    # virtual threshold above all scores: FNR=1, FPR=0
    frac = -diffs[-1] / (1.0 - diffs[-1])
    return rates[-1][0] + frac * (1.0 - rates[-1][0])


def eer_grid_sweep(scores: ScoreSet, n_grid: int = 100_000) -> float:
    """Brute-force oracle: dense threshold grid, rate average at min gap."""
    pos, neg = scores.positive_scores, scores.negative_scores
    if pos.size == 0 or neg.size == 0:
        raise EmptyScores("need at least one positive and one negative score")
    lo = min(pos.min(), neg.min())
    hi = max(pos.max(), neg.max())
    grid = np.linspace(lo - 1e-9, hi + 1e-9, n_grid)
    fnr = np.searchsorted(np.sort(pos), grid, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(np.sort(neg), grid, side="left") / neg.size
    k = int(np.argmin(np.abs(fnr - fpr)))
    return float((fnr[k] + fpr[k]) / 2.0)


def accuracy(preds, truth) -> float:
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise LengthMismatch(f"{preds.shape} predictions vs {truth.shape} labels")
    return float(np.mean(preds == truth))


@dataclass
class CompressionReport:
    dense_count: int
    tt_count: int

    @property
    def ratio(self) -> float:
        return self.dense_count / self.tt_count

    @property
    def ratio_rounded(self) -> int:
        """Integer ratio as reported in comparison tables."""
        return int(round(self.ratio))


def compression_ratio(dense_count: int, tt_count: int) -> CompressionReport:
    if dense_count <= 0 or tt_count <= 0:
        raise ZeroCount("parameter counts must be positive")
    return CompressionReport(int(dense_count), int(tt_count))


@dataclass
class BenchResult:
    config: str
    mean_s: float
    std_s: float
    reps: int

    def as_dict(self):
        return {"config": self.config, "mean_s": self.mean_s,
                "std_s": self.std_s, "reps": self.reps}


def time_step(step_fn, reps: int = 100, warmup: int = 10, label: str = "") -> BenchResult:
    """Wall-clock a zero-argument callable; warmup reps are discarded."""
    if reps < 1:
        raise ZeroReps("need at least one timed repetition")
    for _ in range(warmup):
        step_fn()
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        step_fn()
        times[i] = time.perf_counter() - t0
    return BenchResult(label, float(times.mean()), float(times.std()), reps)


def emit_report(rows: list[dict], fmt: str = "json") -> str:
    """Deterministic JSON or CSV rendering of a list of result rows."""
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        fields = sorted({k for row in rows for k in row})
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text: str, fmt: str = "json") -> list[dict]:
    if fmt == "json":
        return json.loads(text)
    reader = csv.DictReader(io.StringIO(text))
    return [dict(row) for row in reader]


def read_score_csv(text: str) -> ScoreSet:
    """Parse `label,score` rows with label in {pos, neg}."""
    pos, neg = [], []
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        (pos if row["label"] == "pos" else neg).append(float(row["score"]))
    return ScoreSet(np.asarray(pos), np.asarray(neg))
