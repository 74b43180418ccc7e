"""Ground-truth labels, threshold sweeps, and keyword baselines.

Classification is strict: an app is predicted exploitable when its
exploitable score is strictly greater than the threshold. Precision,
recall, and F1 are reported in percent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus
from .errors import IngestError, ValidationError
from .keywords import KeywordSet, matches_text
from .scoring import (
    BucketSpec,
    TOP_ALARMING_K,
    TOP_ALARMING_MIN_SCORE,
    score_apps,
    top_alarming_reviews,
)

GROUND_TRUTH_LABELS = ("exploitable", "not_exploitable")

# Rationale buckets from the labeling instructions. All but "unrelated"
# describe ways an app's reported use harms an unaware or uncomfortable
# subject, so they imply the exploitable label.
RATIONALE_CATEGORIES = (
    "no_knowledge",
    "discomfort",
    "public_uncomfortable",
    "positive_purpose",
    "pets_objects",
    "unrelated",
)

DEFAULT_SWEEP_START = 1.73
DEFAULT_SWEEP_STOP = 3.59
DEFAULT_SWEEP_STEP = 0.01

# Review-percentage cutoffs used by the keyword-share baseline.
BASELINE_PERCENT_THRESHOLDS = (0.3, 0.2, 0.1)


@dataclass(frozen=True)
class GroundTruthLabel:
    app_id: str
    label: str
    rationale_category: str
    evidence_review_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.label not in GROUND_TRUTH_LABELS:
            raise ValidationError(f"unknown label {self.label!r}")
        if self.rationale_category not in RATIONALE_CATEGORIES:
            raise ValidationError(f"unknown rationale {self.rationale_category!r}")
        exploitable = self.label == "exploitable"
        if exploitable == (self.rationale_category == "unrelated"):
            raise ValidationError(
                "label and rationale disagree: exploitable labels take any "
                "rationale except 'unrelated', which marks not_exploitable")


def load_ground_truth(path) -> dict[str, GroundTruthLabel]:
    labels = {}
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read ground truth {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            label = GroundTruthLabel(
                app_id=row["app_id"],
                label=row["label"],
                rationale_category=row["rationale_category"],
                evidence_review_ids=tuple(row.get("evidence_review_ids", ())),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            raise IngestError(f"{path}:{lineno}: bad ground-truth row: {exc}") from exc
        labels[label.app_id] = label
    return labels


def save_ground_truth(labels: Mapping[str, GroundTruthLabel], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for app_id in sorted(labels):
            gt = labels[app_id]
            fh.write(json.dumps({
                "app_id": gt.app_id,
                "label": gt.label,
                "rationale_category": gt.rationale_category,
                "evidence_review_ids": list(gt.evidence_review_ids),
            }, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True

    def to_row(self) -> dict:
        return {
            "threshold": self.threshold, "tp": self.tp, "fp": self.fp,
            "fn": self.fn, "tn": self.tn, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
        }


def classify(app_scores: Mapping[str, float], threshold: float) -> set[str]:
    """Apps whose exploitable score strictly exceeds the threshold."""
    if not math.isfinite(threshold):
        raise ValidationError("threshold must be finite")
    return {app_id for app_id, score in app_scores.items() if score > threshold}


def prf(predicted: Iterable[str], ground_truth: Mapping[str, GroundTruthLabel],
        threshold: float = float("nan")) -> SweepRow:
    """Counts and percent precision/recall/F1 for one predicted set.

    An undefined ratio (empty denominator) is reported as 0 with its
    defined flag cleared rather than raising, so sweeps keep going.
    """
    predicted = set(predicted)
    uncovered = predicted - set(ground_truth)
    if uncovered:
        raise ValidationError(
            "predicted apps missing from ground truth: " + ", ".join(sorted(uncovered)))
    positives = {a for a, gt in ground_truth.items() if gt.label == "exploitable"}
    negatives = set(ground_truth) - positives
    tp = len(predicted & positives)
    fp = len(predicted & negatives)
    fn = len(positives - predicted)
    tn = len(negatives - predicted)

    precision_defined = (tp + fp) > 0
    recall_defined = (tp + fn) > 0
    precision = 100.0 * tp / (tp + fp) if precision_defined else 0.0
    recall = 100.0 * tp / (tp + fn) if recall_defined else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if (precision + recall) > 0 else 0.0)
    return SweepRow(threshold=threshold, tp=tp, fp=fp, fn=fn, tn=tn,
                    precision=precision, recall=recall, f1=f1,
                    precision_defined=precision_defined,
                    recall_defined=recall_defined)


def sweep_thresholds(start: float, stop: float, step: float) -> list[float]:
    if not start < stop:
        raise ValidationError("sweep needs start < stop")
    if not step > 0:
        raise ValidationError("sweep step must be positive")
    # floor with a small slack so 1.73..3.59 by 0.01 yields exactly 187
    count = math.floor((stop - start) / step + 1e-9) + 1
    return [round(start + i * step, 10) for i in range(count)]


def sweep(app_scores: Mapping[str, float],
          ground_truth: Mapping[str, GroundTruthLabel],
          start: float = DEFAULT_SWEEP_START,
          stop: float = DEFAULT_SWEEP_STOP,
          step: float = DEFAULT_SWEEP_STEP) -> tuple[list[SweepRow], float]:
    """One SweepRow per threshold plus the recall-maximal threshold.

    Ties on recall go to the lowest threshold, which favors catching
    every exploitable app over precision.
    """
    rows = [prf(classify(app_scores, t), ground_truth, threshold=t)
            for t in sweep_thresholds(start, stop, step)]
    best = max(rows, key=lambda r: (r.recall, -r.threshold))
    return rows, best.threshold


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tp", "fp", "fn", "tn",
                         "precision", "recall", "f1"])
        for row in rows:
            writer.writerow([
                f"{row.threshold:.2f}", row.tp, row.fp, row.fn, row.tn,
                f"{row.precision:.2f}", f"{row.recall:.2f}", f"{row.f1:.2f}",
            ])


def baseline_description_keywords(corpus: Corpus, keywords: KeywordSet) -> set[str]:
    """Apps whose store description contains any keyword stem."""
    return {
        app_id for app_id, app in corpus.apps.items()
        if app.description and matches_text(app.description, keywords)
    }


def baseline_keyword_review_percent(corpus: Corpus, keywords: KeywordSet,
                                    threshold_percent: float) -> set[str]:
    """Apps where the share of keyword-matching reviews exceeds T percent.

    Apps with zero reviews are excluded: a share of nothing is undefined.
    """
    if threshold_percent < 0:
        raise ValidationError("percent threshold must be nonnegative")
    totals: dict[str, int] = {}
    matches: dict[str, int] = {}
    for review in corpus.reviews.values():
        totals[review.app_id] = totals.get(review.app_id, 0) + 1
        if matches_text(review.text, keywords):
            matches[review.app_id] = matches.get(review.app_id, 0) + 1
    return {
        app_id for app_id, total in totals.items()
        if 100.0 * matches.get(app_id, 0) / total > threshold_percent
    }


VERDICT_STILL_ALARMING = "still_alarming"
VERDICT_NO_NEW_EVIDENCE = "no_new_evidence"


def relevance_recheck(
    app_ids: Iterable[str],
    new_corpus: Corpus,
    review_alarmingness: Mapping[str, float],
    spec: BucketSpec,
    k: int = TOP_ALARMING_K,
    min_score: float = TOP_ALARMING_MIN_SCORE,
) -> dict[str, str]:
    """Re-score previously flagged apps against fresh reviews only.

    An app stays flagged while its new top-alarming list is non-empty;
    otherwise the new reviews carry no supporting evidence.
    """
    score_apps(new_corpus, review_alarmingness, spec)  # validates coverage
    verdicts = {}
    for app_id in app_ids:
        if app_id not in new_corpus.apps:
            verdicts[app_id] = VERDICT_NO_NEW_EVIDENCE
            continue
        top = top_alarming_reviews(new_corpus, review_alarmingness, app_id,
                                   k=k, min_score=min_score)
        verdicts[app_id] = VERDICT_STILL_ALARMING if top else VERDICT_NO_NEW_EVIDENCE
    return verdicts
