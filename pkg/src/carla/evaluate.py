"""Point-level evaluation: confusion pooling, best-F1 sweep, AU-PR, FPR and
point adjustment.

A point is predicted anomalous when ``score >= threshold``. Point-adjusted
(PA) numbers are reported alongside but are known to be inflated: a whole
true-anomaly run counts as detected once any point inside it is flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from carla import _backend
from carla.errors import DataError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def _binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return arr.astype(np.int8)


def confusion(labels, preds) -> ConfusionCounts:
    labels, preds = _binary(labels, "labels"), _binary(preds, "preds")
    if labels.shape != preds.shape:
        raise ValueError(f"length mismatch: {labels.shape[0]} labels vs {preds.shape[0]} preds")
    tp = int(np.sum((labels == 1) & (preds == 1)))
    fp = int(np.sum((labels == 0) & (preds == 1)))
    fn = int(np.sum((labels == 1) & (preds == 0)))
    return ConfusionCounts(tp, fp, len(labels) - tp - fp - fn, fn)


def fpr(counts: ConfusionCounts) -> float:
    if counts.fp + counts.tn == 0:
        raise ZeroDivisionError("FPR undefined: no negative points")
    return counts.fp / (counts.fp + counts.tn)


def aggregate(counts_list: Sequence[ConfusionCounts]) -> tuple[float, float, float]:
    """Pooled precision, recall and F1 from the element-wise sum of matrices."""
    if not counts_list:
        raise ValueError("need at least one confusion matrix")
    pooled = sum(counts_list, ConfusionCounts())
    return pooled.precision, pooled.recall, pooled.f1


def point_adjust(preds, labels) -> np.ndarray:
    preds, labels = _binary(preds, "preds"), _binary(labels, "labels")
    if preds.shape != labels.shape:
        raise ValueError("length mismatch between preds and labels")
    return _backend.point_adjust(preds, labels)


def adjust_scores(scores, labels) -> np.ndarray:
    """Raise every point of a true-anomaly run to the run's maximum score.

    Thresholding the result at ``tau`` equals point-adjusting the
    predictions ``scores >= tau``, so PA metrics reuse the plain sweep.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    if scores.shape != labels.shape:
        raise ValueError("length mismatch between scores and labels")
    return _backend.adjust_scores(scores, labels)


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))


def _check_scored(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape[0]} scores vs {labels.shape[0]} labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if labels.sum() == 0:
        raise ValueError("no positive labels: recall is undefined")
    return scores, labels


def pr_curve(scores, labels) -> PRCurve:
    """Counts and P/R at every distinct score used as threshold (ascending)."""
    scores, labels = _check_scored(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tps = np.cumsum(y, dtype=np.int64)
    fps = np.cumsum(1 - y, dtype=np.int64)
    # last position of each run of equal scores = all points with score >= value
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp, fp = tps[last], fps[last]
    precision = tp / (tp + fp)
    recall = tp / labels.sum()
    rev = slice(None, None, -1)
    return PRCurve(s[last][rev], precision[rev], recall[rev], tp[rev], fp[rev])


@dataclass
class SweepResult:
    threshold: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    curve: PRCurve = field(repr=False)


def best_f1_sweep(scores, labels) -> SweepResult:
    """Threshold maximising F1 over all distinct scores; ties -> lower threshold."""
    curve = pr_curve(scores, labels)
    n_pos = int(np.asarray(labels).sum())
    n = len(labels)
    fn = n_pos - curve.tp
    # integer numerator/denominator keep exact ties comparable
    f1 = 2 * curve.tp / (2 * curve.tp + curve.fp + fn)
    k = int(np.argmax(f1))  # thresholds ascend, so first max is the lowest threshold
    counts = ConfusionCounts(int(curve.tp[k]), int(curve.fp[k]), int(n - n_pos - curve.fp[k]), int(fn[k]))
    return SweepResult(float(curve.thresholds[k]), counts.precision, counts.recall, counts.f1, counts, curve)


def aupr(scores, labels) -> float:
    """Average precision: sum over descending thresholds of (R_k - R_{k-1}) * P_k."""
    curve = pr_curve(scores, labels)
    recall = curve.recall[::-1]
    precision = curve.precision[::-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def random_scores(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.random.default_rng(seed).standard_normal(n)


@dataclass
class EntityMetrics:
    name: str
    n_points: int
    prevalence: float
    threshold: float
    precision: float
    recall: float
    f1: float
    aupr: float
    fpr: float
    counts: dict
    pa_threshold: float
    pa_precision: float
    pa_recall: float
    pa_f1: float
    pa_counts: dict


@dataclass
class EvalReport:
    entities: list[EntityMetrics]
    pooled: dict
    pooled_pa: dict
    aupr_mean: float
    aupr_std: float
    notes: list[str] = field(default_factory=lambda: [
        "pa_* columns use point adjustment and overstate detection quality; "
        "they are not used for threshold or model selection",
    ])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            entities=[EntityMetrics(**e) for e in d["entities"]],
            pooled=d["pooled"], pooled_pa=d["pooled_pa"],
            aupr_mean=d["aupr_mean"], aupr_std=d["aupr_std"], notes=d.get("notes", []),
        )


def _safe_fpr(counts: ConfusionCounts) -> float:
    return fpr(counts) if counts.fp + counts.tn else math.nan


def evaluate_entity(name: str, scores, labels) -> tuple[EntityMetrics, ConfusionCounts, ConfusionCounts]:
    scores, labels = _check_scored(scores, labels)
    best = best_f1_sweep(scores, labels)
    pa = best_f1_sweep(adjust_scores(scores, labels), labels)
    metrics = EntityMetrics(
        name=name,
        n_points=len(labels),
        prevalence=float(labels.mean()),
        threshold=best.threshold,
        precision=best.precision,
        recall=best.recall,
        f1=best.f1,
        aupr=aupr(scores, labels),
        fpr=_safe_fpr(best.counts),
        counts=asdict(best.counts),
        pa_threshold=pa.threshold,
        pa_precision=pa.precision,
        pa_recall=pa.recall,
        pa_f1=pa.f1,
        pa_counts=asdict(pa.counts),
    )
    return metrics, best.counts, pa.counts


def _pooled(counts: Sequence[ConfusionCounts]) -> dict:
    total = sum(counts, ConfusionCounts())
    p, r, f1 = aggregate(counts)
    return {"precision": p, "recall": r, "f1": f1, "fpr": _safe_fpr(total), "counts": asdict(total)}


def benchmark_report(names: Sequence[str], labels: Sequence, scores: Sequence) -> EvalReport:
    """Per-entity metrics at each entity's own best-F1 threshold, pooled counts."""
    if not (len(names) == len(labels) == len(scores)) or not names:
        raise DataError("need matching, non-empty lists of names, labels and scores")
    per, plain, adjusted = [], [], []
    for name, y, s in zip(names, labels, scores):
        m, c, c_pa = evaluate_entity(name, s, y)
        per.append(m)
        plain.append(c)
        adjusted.append(c_pa)
    auprs = np.array([m.aupr for m in per])
    return EvalReport(
        entities=per,
        pooled=_pooled(plain),
        pooled_pa=_pooled(adjusted),
        aupr_mean=float(auprs.mean()),
        aupr_std=float(auprs.std()),
    )


def write_report(report: EvalReport, out_dir: str | Path, title: str = "Evaluation report",
                 baseline: Optional[EvalReport] = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"model": report.to_dict()}
    if baseline is not None:
        payload["random_baseline"] = baseline.to_dict()
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    md_path = out_dir / "report.md"
    md_path.write_text(render_markdown(report, title, baseline))
    return json_path, md_path


def _row(label: str, p, r, f1, ap, fp, pp, pr, pf) -> str:
    def fmt(x):
        return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"
    return f"| {label} | " + " | ".join(fmt(v) for v in (p, r, f1, ap, fp, pp, pr, pf)) + " |"


def render_markdown(report: EvalReport, title: str = "Evaluation report",
                    baseline: Optional[EvalReport] = None) -> str:
    header = ("| Entity | Prec | Rec | F1 | AU-PR | FPR | Prec_PA* | Rec_PA* | F1_PA* |\n"
              "|---|---|---|---|---|---|---|---|---|")
    lines = [f"# {title}", ""]
    sections = [("Model", report)] + ([("Random anomaly score", baseline)] if baseline else [])
    for heading, rep in sections:
        lines += [f"## {heading}", "", header]
        for m in rep.entities:
            lines.append(_row(m.name, m.precision, m.recall, m.f1, m.aupr, m.fpr,
                              m.pa_precision, m.pa_recall, m.pa_f1))
        pooled, pa = rep.pooled, rep.pooled_pa
        lines.append(_row("**pooled**", pooled["precision"], pooled["recall"], pooled["f1"], None,
                          pooled["fpr"], pa["precision"], pa["recall"], pa["f1"]))
        lines += ["", f"AU-PR mean ± std: {rep.aupr_mean:.4f} ± {rep.aupr_std:.4f}", ""]
    lines.append("\\* point-adjusted; inflated, shown for comparison only.")
    return "\n".join(lines) + "\n"
